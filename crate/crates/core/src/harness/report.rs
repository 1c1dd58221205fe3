//! Steady-window metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Result, Scenario, SETTLE_TOLERANCE};
use crate::analytics::AnalyticPrediction;
use crate::engine::{EnergyAudit, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Peak-to-peak.
    pub ripple: f64,
}

impl SignalStats {
    fn of(v: &[f64]) -> Self {
        let (min, max) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(*x), hi.max(*x)));
        Self {
            mean: v.iter().sum::<f64>() / v.len().max(1) as f64,
            min,
            max,
            ripple: max - min,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyReport {
    pub scenario: String,
    /// Steady window `[start, end]`, s.
    pub window: [f64; 2],
    pub v_dc: f64,
    pub signals: BTreeMap<String, SignalStats>,
    /// Fraction of window samples in shoot-through.
    pub st_duty: f64,
    /// Mean link voltage over non-shoot-through samples.
    pub v_pn_nst: Option<f64>,
    /// `v_pn_nst / v_dc`.
    pub b_meas: Option<f64>,
    /// Smallest input current after the start-up interval.
    pub min_input_current: Option<f64>,
    /// Peak start-up |input current| over the steady mean input current.
    pub inrush_ratio: Option<f64>,
    /// |Window mean of each inductor voltage| / v_dc, from the flux-linkage
    /// change across the window.
    pub volt_second: BTreeMap<String, f64>,
    /// Mean power delivered by the source.
    pub source_power: f64,
    /// Mean power into the load.
    pub output_power: Option<f64>,
    /// Load energy over source energy net of the change in stored energy.
    pub efficiency: Option<f64>,
    /// Mean |switch current| just before turn-on, over the mean input current.
    pub turn_on_current: Option<f64>,
    /// Integrated energy-balance residual over the window.
    pub energy_residual: f64,
    pub prediction: Option<AnalyticPrediction>,
    /// Measured vs predicted, in percent.
    pub analytic_deltas: BTreeMap<String, f64>,
    pub settled: bool,
    /// Largest relative change of a steady quantity between the last two windows.
    pub settle_change: f64,
}

pub(super) struct Inputs<'a> {
    pub v_dc: f64,
    pub previous: &'a Trace,
    pub last: &'a Trace,
    /// (label, voltage probe, flux-linkage probe) per inductor.
    pub probes: &'a [(String, String, String)],
    pub link: Option<&'a str>,
    pub source: &'a str,
    pub source_power: &'a str,
    pub output_power: &'a [String],
    pub audit: EnergyAudit,
    pub inrush_peak: f64,
    pub min_after_startup: Option<f64>,
    pub turn_on: Option<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn nst_mean(t: &Trace, name: &str) -> Option<f64> {
    let col = t.column(name)?;
    let (sum, n) = col
        .iter()
        .zip(&t.st)
        .filter(|(_, st)| !**st)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn pct(measured: f64, predicted: f64) -> f64 {
    100.0 * (measured - predicted) / predicted.abs().max(f64::MIN_POSITIVE)
}

pub(super) fn measure(s: &Scenario, x: &Inputs) -> Result<SteadyReport> {
    let t = x.last;
    let col = |n: &str| t.column(n).unwrap_or(&[]);
    let signals: BTreeMap<String, SignalStats> = t
        .names
        .iter()
        .zip(&t.columns)
        .map(|(n, c)| (n.clone(), SignalStats::of(c)))
        .collect();
    let span = t.len() as f64 * t.dt;
    let v_pn_nst = x.link.and_then(|l| nst_mean(t, l));
    let b_meas = v_pn_nst.map(|v| v / x.v_dc);
    let i_mean = mean(col(x.source));
    // window mean of v = flux change over the window, which is exactly what
    // the integrator accumulated; a sample mean would misweigh event steps
    let volt_second = x
        .probes
        .iter()
        .map(|(label, _, flux)| {
            let start = x.previous.column(flux).and_then(|c| c.last().copied()).unwrap_or(f64::NAN);
            let end = col(flux).last().copied().unwrap_or(f64::NAN);
            (label.clone(), (end - start).abs() / span / x.v_dc.abs())
        })
        .collect();
    let source_power = mean(col(x.source_power));
    let output_power = (!x.output_power.is_empty()).then(|| x.output_power.iter().map(|p| mean(col(p))).sum::<f64>());
    let net_in = x.audit.source - x.audit.stored;
    let efficiency = output_power
        .map(|p| p * span / net_in)
        .filter(|e| e.is_finite() && *e > 0.0 && net_in > 0.0);

    let prediction = s.params().and_then(|p| p.predict().ok());
    let mut deltas = BTreeMap::new();
    if let Some(pred) = prediction {
        if let Some(b) = b_meas {
            deltas.insert("b".to_string(), pct(b, pred.b));
        }
        if let Some(v) = v_pn_nst {
            deltas.insert("v_pn".to_string(), pct(v, pred.v_pn));
        }
        for (key, probe, want) in [("v_c1", "v(c1)", pred.v_c1), ("v_c2", "v(c2)", pred.v_c2), ("v_out", "v(out)", pred.v_pn)] {
            if let Some(c) = t.column(probe) {
                deltas.insert(key.to_string(), pct(mean(c), want));
            }
        }
    }

    // Settling: steady-valued voltages and the measured boost must agree
    // between the last two windows.
    let mut change: f64 = 0.0;
    for (name, c) in t.names.iter().zip(&t.columns) {
        if !name.starts_with("v(") {
            continue;
        }
        let (now, before) = (mean(c), x.previous.column(name).map_or(f64::NAN, mean));
        if now.abs() >= 0.05 * x.v_dc.abs() {
            change = change.max((now - before).abs() / now.abs());
        }
    }
    if let (Some(now), Some(before)) = (v_pn_nst, x.link.and_then(|l| nst_mean(x.previous, l))) {
        change = change.max((now - before).abs() / now.abs().max(f64::MIN_POSITIVE));
    }

    Ok(SteadyReport {
        scenario: s.name.clone(),
        window: [t.t0 - t.dt, t.t0 - t.dt + span],
        v_dc: x.v_dc,
        signals,
        st_duty: t.st.iter().filter(|s| **s).count() as f64 / t.len().max(1) as f64,
        v_pn_nst,
        b_meas,
        min_input_current: x.min_after_startup,
        inrush_ratio: (i_mean.abs() > 0.0).then(|| x.inrush_peak / i_mean.abs()),
        volt_second,
        source_power,
        output_power,
        efficiency,
        turn_on_current: x.turn_on.map(|i| i / i_mean.abs().max(f64::MIN_POSITIVE)),
        energy_residual: x.audit.relative_residual(),
        prediction,
        analytic_deltas: deltas,
        settled: change <= SETTLE_TOLERANCE,
        settle_change: change,
    })
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.prec$}"))
}

impl SteadyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text rendering.
    pub fn render(&self) -> String {
        let mut rows: Vec<(String, String)> = vec![
            ("scenario".into(), self.scenario.clone()),
            ("window [s]".into(), format!("{:.6} .. {:.6}", self.window[0], self.window[1])),
            ("v_dc [V]".into(), format!("{:.3}", self.v_dc)),
            ("shoot-through duty".into(), format!("{:.4}", self.st_duty)),
            ("link voltage, NST mean [V]".into(), opt(self.v_pn_nst, 3)),
            ("measured boost".into(), opt(self.b_meas, 4)),
            ("min input current after start-up [A]".into(), opt(self.min_input_current, 3)),
            ("inrush ratio".into(), opt(self.inrush_ratio, 3)),
            ("source power [W]".into(), format!("{:.3}", self.source_power)),
            ("output power [W]".into(), opt(self.output_power, 3)),
            ("efficiency".into(), opt(self.efficiency, 4)),
            ("turn-on current ratio".into(), opt(self.turn_on_current, 4)),
            ("energy residual".into(), format!("{:.2e}", self.energy_residual)),
            ("settled".into(), format!("{} (change {:.2e})", self.settled, self.settle_change)),
        ];
        for (k, v) in &self.volt_second {
            rows.push((format!("volt-second residual {k}"), format!("{v:.2e}")));
        }
        for (k, v) in &self.analytic_deltas {
            rows.push((format!("delta {k} [%]"), format!("{v:+.3}")));
        }
        let w = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<w$}  {v}");
        }
        let nw = self.signals.keys().map(String::len).max().unwrap_or(0).max(6);
        let _ = writeln!(out, "\n{:<nw$}  {:>14} {:>14} {:>14} {:>14}", "signal", "mean", "min", "max", "ripple");
        for (name, s) in &self.signals {
            let _ = writeln!(
                out,
                "{name:<nw$}  {:>14.6} {:>14.6} {:>14.6} {:>14.6}",
                s.mean, s.min, s.max, s.ripple
            );
        }
        out
    }
}
