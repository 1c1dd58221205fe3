//! Closed-form gain and voltage algebra for the proposed Y-source converter
//! and the prior Y-source variants it is compared against.
//!
//! Symbols follow the usual impedance-network conventions: `k = n2/n1`,
//! `p = n3/n1`, `d` is the shoot-through duty ratio and `m` the modulation
//! index. Every function here is a pure function of `f64` values.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance used when two algebraic routes must agree.
pub const REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticsError {
    #[error("infeasible shoot-through duty d={d}: must satisfy 0 <= d < d_max={d_max}")]
    InfeasibleDuty { d: f64, d_max: f64 },
    #[error("invalid parameter {name}={value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("unreachable boost factor {boost}: must be a finite value >= 1")]
    UnreachableBoost { boost: f64 },
    #[error("{topology} boost denominator {denominator} is not positive (pole at d={d})")]
    PriorPole {
        topology: PriorTopology,
        denominator: f64,
        d: f64,
    },
}

pub type Result<T> = std::result::Result<T, AnalyticsError>;

fn positive(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(AnalyticsError::InvalidParameter {
            name,
            value,
            reason: "must be finite and positive",
        })
    }
}

fn finite(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(AnalyticsError::InvalidParameter {
            name,
            value,
            reason: "must be finite",
        })
    }
}

/// Largest admissible shoot-through duty for turns ratios `k`, `p`.
///
/// Above this value the gain denominator `(1-d)(1+p) - d(1+k)` is no
/// longer positive.
pub fn duty_feasibility(k: f64, p: f64) -> f64 {
    (1.0 + p) / (2.0 + k + p)
}

fn check_duty(k: f64, p: f64, d: f64) -> Result<()> {
    positive("k", k)?;
    positive("p", p)?;
    let d_max = duty_feasibility(k, p);
    if !d.is_finite() || d < 0.0 || d >= d_max {
        return Err(AnalyticsError::InfeasibleDuty { d, d_max });
    }
    Ok(())
}

fn denominator(k: f64, p: f64, d: f64) -> f64 {
    (1.0 - d) * (1.0 + p) - d * (1.0 + k)
}

/// Boost factor `B = V_pn / V_dc` of the proposed network.
pub fn boost_proposed(k: f64, p: f64, d: f64) -> Result<f64> {
    check_duty(k, p, d)?;
    Ok((1.0 + p) / denominator(k, p, d))
}

/// Steady-state capacitor voltages `(V_C1, V_C2)`.
pub fn cap_voltages(k: f64, p: f64, d: f64, v_dc: f64) -> Result<(f64, f64)> {
    check_duty(k, p, d)?;
    finite("v_dc", v_dc)?;
    let den = denominator(k, p, d);
    let v_c1 = d * (1.0 + k) / den * v_dc;
    let v_c2 = (1.0 - d) * (1.0 + p) / den * v_dc;
    Ok((v_c1, v_c2))
}

/// DC-link voltage recombined from the capacitor voltages.
pub fn dc_link_from_caps(k: f64, p: f64, v_dc: f64, v_c1: f64, v_c2: f64) -> f64 {
    v_c1 + (1.0 + p) / (1.0 + k) * v_c2 - (p - k) / (1.0 + k) * v_dc
}

/// NST-interval DC-link voltage.
///
/// Computed as `B * V_dc` and cross-checked against the capacitor
/// recombination; the two routes must agree to [`REL_TOL`].
pub fn dc_link(k: f64, p: f64, d: f64, v_dc: f64) -> Result<f64> {
    let direct = boost_proposed(k, p, d)? * v_dc;
    let (v_c1, v_c2) = cap_voltages(k, p, d, v_dc)?;
    let recombined = dc_link_from_caps(k, p, v_dc, v_c1, v_c2);
    debug_assert!(
        (direct - recombined).abs() <= REL_TOL * direct.abs().max(1e-300),
        "dc-link routes disagree: {direct} vs {recombined}"
    );
    Ok(direct)
}

/// NST-interval voltages across winding 1 (the magnetizing branch) and the
/// series inductor `L_r`.
pub fn nst_inductor_voltages(k: f64, p: f64, v_dc: f64, v_c1: f64, v_c2: f64) -> (f64, f64) {
    let v_l1 = (v_dc - v_c2) / (1.0 + k);
    let v_lr = (p - k) / (1.0 + k) * (v_dc - v_c2) - v_c1;
    (v_l1, v_lr)
}

/// Peak AC phase voltage for modulation index `m`, read as `(m/2)·B·V_dc`.
pub fn ac_peak(m: f64, k: f64, p: f64, d: f64, v_dc: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&m) {
        return Err(AnalyticsError::InvalidParameter {
            name: "m",
            value: m,
            reason: "modulation index must lie in [0, 1]",
        });
    }
    Ok(0.5 * m * boost_proposed(k, p, d)? * v_dc)
}

/// Shoot-through duty that yields `boost` with turns ratios `k`, `p`.
///
/// Inverts `B = (1+p) / ((1+p) - d(2+k+p))` in closed form.
pub fn solve_duty(boost: f64, k: f64, p: f64) -> Result<f64> {
    positive("k", k)?;
    positive("p", p)?;
    if !boost.is_finite() || boost < 1.0 {
        return Err(AnalyticsError::UnreachableBoost { boost });
    }
    Ok((1.0 + p) * (boost - 1.0) / (boost * (2.0 + k + p)))
}

/// Operating point of the proposed converter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConverterParams {
    pub n1: f64,
    pub n2: f64,
    pub n3: f64,
    /// Shoot-through duty ratio.
    pub d: f64,
    /// Modulation index (inverter operation only).
    #[serde(default)]
    pub m: f64,
    pub f_sw: f64,
    pub v_dc: f64,
}

impl ConverterParams {
    pub fn new(turns: [f64; 3], d: f64, m: f64, f_sw: f64, v_dc: f64) -> Result<Self> {
        let params = Self {
            n1: turns[0],
            n2: turns[1],
            n3: turns[2],
            d,
            m,
            f_sw,
            v_dc,
        };
        params.validate()?;
        Ok(params)
    }

    /// Case 1/2 operating point: turns 1:3.4:1, 25% shoot-through, 80 V input.
    pub fn inverter_case() -> Self {
        Self {
            n1: 1.0,
            n2: 3.4,
            n3: 1.0,
            d: 0.25,
            m: 0.75,
            f_sw: 20e3,
            v_dc: 80.0,
        }
    }

    /// Case 3 operating point: turns 1:2:2, 40% shoot-through, 20 V input.
    pub fn dcdc_case() -> Self {
        Self {
            n1: 1.0,
            n2: 2.0,
            n3: 2.0,
            d: 0.4,
            m: 0.0,
            f_sw: 20e3,
            v_dc: 20.0,
        }
    }

    pub fn k(&self) -> f64 {
        self.n2 / self.n1
    }

    pub fn p(&self) -> f64 {
        self.n3 / self.n1
    }

    pub fn d_max(&self) -> f64 {
        duty_feasibility(self.k(), self.p())
    }

    pub fn turns(&self) -> [f64; 3] {
        [self.n1, self.n2, self.n3]
    }

    pub fn validate(&self) -> Result<()> {
        positive("n1", self.n1)?;
        positive("n2", self.n2)?;
        positive("n3", self.n3)?;
        positive("f_sw", self.f_sw)?;
        finite("v_dc", self.v_dc)?;
        if !(0.0..=1.0).contains(&self.m) {
            return Err(AnalyticsError::InvalidParameter {
                name: "m",
                value: self.m,
                reason: "modulation index must lie in [0, 1]",
            });
        }
        check_duty(self.k(), self.p(), self.d)
    }

    /// Simple-boost feasibility for inverter operation: `m + d <= 1`.
    pub fn validate_inverter(&self) -> Result<()> {
        self.validate()?;
        if self.m + self.d > 1.0 + 1e-12 {
            return Err(AnalyticsError::InvalidParameter {
                name: "m",
                value: self.m,
                reason: "simple-boost modulation requires m + d <= 1",
            });
        }
        Ok(())
    }

    pub fn predict(&self) -> Result<AnalyticPrediction> {
        self.validate()?;
        let (k, p, d, v_dc) = (self.k(), self.p(), self.d, self.v_dc);
        let (v_c1, v_c2) = cap_voltages(k, p, d, v_dc)?;
        let (v_l1_nst, v_lr_nst) = nst_inductor_voltages(k, p, v_dc, v_c1, v_c2);
        Ok(AnalyticPrediction {
            v_c1,
            v_c2,
            v_pn: dc_link(k, p, d, v_dc)?,
            b: boost_proposed(k, p, d)?,
            v_l1_nst,
            v_lr_nst,
            v_ac_peak: ac_peak(self.m, k, p, d, v_dc)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticPrediction {
    pub v_c1: f64,
    pub v_c2: f64,
    pub v_pn: f64,
    pub b: f64,
    pub v_l1_nst: f64,
    pub v_lr_nst: f64,
    pub v_ac_peak: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorTopology {
    ClassicalYzsi,
    ImprovedYzsi,
    ModifiedYzsi,
}

impl fmt::Display for PriorTopology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PriorTopology::ClassicalYzsi => "Classical YZSI",
            PriorTopology::ImprovedYzsi => "Improved YZSI",
            PriorTopology::ModifiedYzsi => "Modified YZSI",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorTopologyParams {
    pub topology: PriorTopology,
    pub n1: f64,
    pub n2: f64,
    pub n3: f64,
    pub d: f64,
}

impl PriorTopologyParams {
    /// Winding factor `(N3 + N1) / (N3 - N2)`.
    pub fn winding_factor(&self) -> Result<f64> {
        positive("n1", self.n1)?;
        positive("n2", self.n2)?;
        positive("n3", self.n3)?;
        if self.n3 == self.n2 {
            return Err(AnalyticsError::InvalidParameter {
                name: "n3",
                value: self.n3,
                reason: "N3 must differ from N2",
            });
        }
        Ok((self.n3 + self.n1) / (self.n3 - self.n2))
    }

    /// Effective multiplier of `d` in the gain denominator.
    fn duty_gain(&self) -> Result<f64> {
        let k = self.winding_factor()?;
        Ok(match self.topology {
            PriorTopology::ClassicalYzsi => k,
            PriorTopology::ImprovedYzsi | PriorTopology::ModifiedYzsi => k + 1.0,
        })
    }

    /// Duty needed to reach `boost` with these windings.
    pub fn duty_for_boost(&self, boost: f64) -> Result<f64> {
        if !boost.is_finite() || boost < 1.0 {
            return Err(AnalyticsError::UnreachableBoost { boost });
        }
        let g = self.duty_gain()?;
        if g <= 0.0 {
            return Err(AnalyticsError::UnreachableBoost { boost });
        }
        Ok((1.0 - 1.0 / boost) / g)
    }
}

/// Boost factor of a prior Y-source variant.
pub fn boost_prior(params: &PriorTopologyParams) -> Result<f64> {
    finite("d", params.d)?;
    if params.d < 0.0 {
        return Err(AnalyticsError::InvalidParameter {
            name: "d",
            value: params.d,
            reason: "duty must be non-negative",
        });
    }
    let den = 1.0 - params.duty_gain()? * params.d;
    if den <= 0.0 {
        return Err(AnalyticsError::PriorPole {
            topology: params.topology,
            denominator: den,
            d: params.d,
        });
    }
    Ok(1.0 / den)
}

/// Static (qualitative) characteristics of a topology, carried verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticRows {
    pub capacitors: String,
    pub inductors: String,
    pub network_diodes: String,
    pub continuous_input_current: String,
    pub startup_inrush_current: String,
    pub soft_switching: String,
    pub common_grounding: String,
    pub efficiency: String,
}

impl StaticRows {
    fn of(topology: Option<PriorTopology>) -> Self {
        let row = |cells: [&str; 8]| StaticRows {
            capacitors: cells[0].into(),
            inductors: cells[1].into(),
            network_diodes: cells[2].into(),
            continuous_input_current: cells[3].into(),
            startup_inrush_current: cells[4].into(),
            soft_switching: cells[5].into(),
            common_grounding: cells[6].into(),
            efficiency: cells[7].into(),
        };
        match topology {
            None => row([
                "2",
                "Y-Source winding, one inductor",
                "One diode",
                "Yes",
                "Yes",
                "Yes, it helps to soft switching in induction loads.",
                "Yes",
                "Well",
            ]),
            Some(PriorTopology::ImprovedYzsi) => row([
                "2",
                "Y-Source winding, one inductor",
                "One diode",
                "Yes",
                "No",
                "No",
                "Yes",
                "Low",
            ]),
            Some(PriorTopology::ModifiedYzsi) => row([
                "4",
                "Y-Source winding, two inductors",
                "2 diodes",
                "Yes",
                "-",
                "No",
                "Yes",
                "well",
            ]),
            Some(PriorTopology::ClassicalYzsi) => row(["-"; 8]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonColumn {
    pub topology: String,
    pub turns: [f64; 3],
    pub d: f64,
    /// Boost at the column's own duty.
    pub boost: f64,
    /// Boost at the proposed converter's duty (`None` past the pole).
    pub boost_at_reference_duty: Option<f64>,
    /// Duty needed to match the proposed converter's boost.
    pub duty_for_reference_boost: Option<f64>,
    #[serde(rename = "static")]
    pub static_rows: StaticRows,
}

/// Side-by-side comparison of the proposed converter and prior variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub reference_duty: f64,
    pub reference_boost: f64,
    pub columns: Vec<ComparisonColumn>,
}

pub fn comparison_table(
    proposed: &ConverterParams,
    priors: &[PriorTopologyParams],
) -> Result<ComparisonTable> {
    proposed.validate()?;
    let (k, p, d) = (proposed.k(), proposed.p(), proposed.d);
    let b = boost_proposed(k, p, d)?;
    let mut columns = vec![ComparisonColumn {
        topology: "Proposed topology".into(),
        turns: proposed.turns(),
        d,
        boost: b,
        boost_at_reference_duty: Some(b),
        duty_for_reference_boost: Some(d),
        static_rows: StaticRows::of(None),
    }];
    for prior in priors {
        let at_d = PriorTopologyParams { d, ..*prior };
        columns.push(ComparisonColumn {
            topology: prior.topology.to_string(),
            turns: [prior.n1, prior.n2, prior.n3],
            d: prior.d,
            boost: boost_prior(prior)?,
            boost_at_reference_duty: boost_prior(&at_d).ok(),
            duty_for_reference_boost: prior.duty_for_boost(b).ok(),
            static_rows: StaticRows::of(Some(prior.topology)),
        });
    }
    Ok(ComparisonTable {
        reference_duty: d,
        reference_boost: b,
        columns,
    })
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
}

impl ComparisonTable {
    /// Rows as `(label, cells)`; shared by the text renderer and callers that
    /// append measured rows.
    pub fn rows(&self) -> Vec<(String, Vec<String>)> {
        let col = |f: &dyn Fn(&ComparisonColumn) -> String| -> Vec<String> {
            self.columns.iter().map(f).collect()
        };
        vec![
            ("Topology".into(), col(&|c| c.topology.clone())),
            (
                "Turns n1:n2:n3".into(),
                col(&|c| format!("{}:{}:{}", c.turns[0], c.turns[1], c.turns[2])),
            ),
            ("Shoot-through duty".into(), col(&|c| format!("{:.4}", c.d))),
            ("Boost factor".into(), col(&|c| format!("{:.4}", c.boost))),
            (
                format!("Boost at d={:.4}", self.reference_duty),
                col(&|c| opt(c.boost_at_reference_duty, 4)),
            ),
            (
                format!("Duty for B={:.4}", self.reference_boost),
                col(&|c| opt(c.duty_for_reference_boost, 4)),
            ),
            ("Number of capacitors".into(), col(&|c| c.static_rows.capacitors.clone())),
            ("Number of inductors".into(), col(&|c| c.static_rows.inductors.clone())),
            (
                "Number of diodes in impedance network".into(),
                col(&|c| c.static_rows.network_diodes.clone()),
            ),
            (
                "Continuous input current".into(),
                col(&|c| c.static_rows.continuous_input_current.clone()),
            ),
            (
                "Startup inrush current".into(),
                col(&|c| c.static_rows.startup_inrush_current.clone()),
            ),
            ("Soft switching".into(), col(&|c| c.static_rows.soft_switching.clone())),
            ("Common grounding".into(), col(&|c| c.static_rows.common_grounding.clone())),
            ("Efficiency".into(), col(&|c| c.static_rows.efficiency.clone())),
        ]
    }
}

/// Render label/cell rows as an aligned plain-text table.
pub fn render_rows(rows: &[(String, Vec<String>)]) -> String {
    let label_w = rows.iter().map(|(l, _)| l.chars().count()).max().unwrap_or(0);
    let ncols = rows.iter().map(|(_, c)| c.len()).max().unwrap_or(0);
    let widths: Vec<usize> = (0..ncols)
        .map(|i| {
            rows.iter()
                .filter_map(|(_, c)| c.get(i))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for (label, cells) in rows {
        let mut line = format!("{label:<label_w$}");
        for (i, w) in widths.iter().enumerate() {
            let cell = cells.get(i).map(String::as_str).unwrap_or("");
            line.push_str(" | ");
            line.push_str(&format!("{cell:<w$}"));
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

impl fmt::Display for ComparisonTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_rows(&self.rows()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn boost_operating_points() {
        assert!(rel(boost_proposed(3.4, 1.0, 0.25).unwrap(), 5.0) < 1e-12);
        assert!(rel(boost_proposed(2.0, 2.0, 0.4).unwrap(), 5.0) < 1e-12);
        for (k, p) in [(0.5, 7.0), (3.4, 1.0), (10.0, 0.1)] {
            assert_eq!(boost_proposed(k, p, 0.0).unwrap(), 1.0);
        }
    }

    #[test]
    fn infeasible_duty_names_bound() {
        let err = boost_proposed(2.0, 2.0, 0.6).unwrap_err();
        assert_eq!(err, AnalyticsError::InfeasibleDuty { d: 0.6, d_max: 0.5 });
        assert!(err.to_string().contains("d_max=0.5"));
        assert!(boost_proposed(2.0, 2.0, 0.5).is_err());
        assert!(boost_proposed(2.0, 2.0, -0.1).is_err());
        assert!(boost_proposed(0.0, 2.0, 0.1).is_err());
    }

    #[test]
    fn capacitor_voltages() {
        let (c1, c2) = cap_voltages(2.0, 2.0, 0.4, 20.0).unwrap();
        assert!(rel(c1, 40.0) < 1e-12 && rel(c2, 60.0) < 1e-12);
        let (c1, c2) = cap_voltages(3.4, 1.0, 0.25, 80.0).unwrap();
        assert!(rel(c1, 220.0) < 1e-12 && rel(c2, 300.0) < 1e-12);
        assert!(rel(dc_link_from_caps(3.4, 1.0, 80.0, c1, c2), 400.0) < 1e-12);
        let (c1, c2) = cap_voltages(1.7, 0.3, 0.0, 33.0).unwrap();
        assert_eq!((c1, c2), (0.0, 33.0));
    }

    #[test]
    fn link_voltage() {
        assert!(rel(dc_link(2.0, 2.0, 0.4, 20.0).unwrap(), 100.0) < 1e-12);
        assert!(rel(dc_link(3.4, 1.0, 0.25, 80.0).unwrap(), 400.0) < 1e-12);
        assert_eq!(dc_link(1.0, 1.0, 0.0, 48.0).unwrap(), 48.0);
    }

    #[test]
    fn nst_voltages() {
        let (l1, lr) = nst_inductor_voltages(2.0, 2.0, 20.0, 40.0, 60.0);
        assert!((l1 + 40.0 / 3.0).abs() < 1e-12);
        assert!((lr + 40.0).abs() < 1e-12);
        // (1-3.4)/(1+3.4) * (80-300) - 220 = 120 - 220
        let (l1, lr) = nst_inductor_voltages(3.4, 1.0, 80.0, 220.0, 300.0);
        assert!((l1 + 50.0).abs() < 1e-12);
        assert!((lr + 100.0).abs() < 1e-12);
        assert_eq!(nst_inductor_voltages(1.5, 1.5, 12.0, 0.0, 12.0), (0.0, 0.0));
    }

    #[test]
    fn ac_output() {
        assert!(rel(ac_peak(1.0, 2.0, 2.0, 0.4, 20.0).unwrap(), 50.0) < 1e-12);
        assert_eq!(ac_peak(0.0, 2.0, 2.0, 0.4, 20.0).unwrap(), 0.0);
        assert!(rel(ac_peak(0.8, 3.4, 1.0, 0.25, 80.0).unwrap(), 160.0) < 1e-12);
        assert!(ac_peak(1.2, 2.0, 2.0, 0.4, 20.0).is_err());
    }

    #[test]
    fn prior_topologies() {
        let improved = PriorTopologyParams {
            topology: PriorTopology::ImprovedYzsi,
            n1: 1.0,
            n2: 1.0,
            n3: 2.0,
            d: 0.2,
        };
        assert!(rel(boost_prior(&improved).unwrap(), 5.0) < 1e-12);
        let modified = PriorTopologyParams {
            topology: PriorTopology::ModifiedYzsi,
            ..improved
        };
        assert!(rel(boost_prior(&modified).unwrap(), 5.0) < 1e-12);
        let classical = PriorTopologyParams {
            topology: PriorTopology::ClassicalYzsi,
            d: 0.0,
            ..improved
        };
        assert_eq!(classical.winding_factor().unwrap(), 3.0);
        assert_eq!(boost_prior(&classical).unwrap(), 1.0);
        let pole = PriorTopologyParams { d: 0.25, ..improved };
        assert!(matches!(boost_prior(&pole), Err(AnalyticsError::PriorPole { .. })));
        let degenerate = PriorTopologyParams { n3: 1.0, ..improved };
        assert!(boost_prior(&degenerate).is_err());
    }

    #[test]
    fn duty_inversion() {
        assert!((solve_duty(5.0, 2.0, 2.0).unwrap() - 0.4).abs() < 1e-12);
        assert!((solve_duty(5.0, 3.4, 1.0).unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(solve_duty(1.0, 0.7, 4.0).unwrap(), 0.0);
        assert!(matches!(
            solve_duty(0.5, 2.0, 2.0),
            Err(AnalyticsError::UnreachableBoost { .. })
        ));
        assert!(solve_duty(f64::INFINITY, 2.0, 2.0).is_err());
    }

    #[test]
    fn feasibility_bound() {
        assert!((duty_feasibility(2.0, 2.0) - 0.5).abs() < 1e-15);
        assert!((duty_feasibility(3.4, 1.0) - 0.3125).abs() < 1e-15);
        for k in [0.1, 1.0, 3.0, 17.0] {
            assert!((duty_feasibility(k, k) - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn comparison_rows() {
        let improved = PriorTopologyParams {
            topology: PriorTopology::ImprovedYzsi,
            n1: 1.0,
            n2: 1.0,
            n3: 2.0,
            d: 0.2,
        };
        let table = comparison_table(&ConverterParams::dcdc_case(), &[improved]).unwrap();
        assert_eq!(table.columns.len(), 2);
        assert!(rel(table.columns[0].boost, 5.0) < 1e-12);
        assert!(rel(table.columns[1].boost, 5.0) < 1e-12);
        assert!((table.columns[1].duty_for_reference_boost.unwrap() - 0.2).abs() < 1e-12);
        // improved variant is past its pole at d = 0.4
        assert_eq!(table.columns[1].boost_at_reference_duty, None);
        assert_eq!(table.columns[0].static_rows.capacitors, "2");
        assert_eq!(table.columns[0].static_rows.network_diodes, "One diode");

        let alone = comparison_table(&ConverterParams::dcdc_case(), &[]).unwrap();
        assert_eq!(alone.columns.len(), 1);
        let text = alone.to_string();
        assert!(text.contains("Proposed topology"));
        let json = serde_json::to_string(&alone).unwrap();
        let back: ComparisonTable = serde_json::from_str(&json).unwrap();
        assert_eq!(back, alone);
    }

    #[test]
    fn predict_is_consistent() {
        let pred = ConverterParams::inverter_case().predict().unwrap();
        assert!(rel(pred.v_pn, pred.b * 80.0) < REL_TOL);
        assert!(rel(pred.v_ac_peak, 0.375 * 400.0) < 1e-12);
        let bad = ConverterParams {
            m: 0.9,
            ..ConverterParams::inverter_case()
        };
        assert!(bad.validate().is_ok());
        assert!(bad.validate_inverter().is_err());
    }
}
