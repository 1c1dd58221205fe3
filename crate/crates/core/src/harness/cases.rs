//! Builtin case studies and the cross-case comparison report.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{run, CircuitSource, Result, RunSettings, Scenario, SteadyReport};
use crate::analytics::{
    comparison_table, render_rows, ComparisonTable, ConverterParams, PriorTopology, PriorTopologyParams,
};
use crate::engine::Trace;
use crate::loads::{IMParams, Shaft};
use crate::modulation::ModulationSpec;
use crate::netlist::{ComponentValues, Load3Spec, Mode};

/// Rotor speed of the generator case, above the 1500 rpm synchronous speed.
pub const GENERATOR_RPM: f64 = 1560.0;
/// Output frequency of the inverter cases.
pub const OUTPUT_FREQUENCY: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseId {
    Case1Motor,
    Case2Generator,
    Case3Dcdc,
}

impl CaseId {
    pub const ALL: [CaseId; 3] = [CaseId::Case1Motor, CaseId::Case2Generator, CaseId::Case3Dcdc];

    pub fn name(self) -> &'static str {
        match self {
            CaseId::Case1Motor => "case1_motor",
            CaseId::Case2Generator => "case2_generator",
            CaseId::Case3Dcdc => "case3_dcdc",
        }
    }

    /// The builtin scenario of this case.
    ///
    /// * case 1: inverter into the induction machine, 5 N m load torque,
    ///   0.3 s from rest.
    /// * case 2: as case 1 with D1 replaced by a switch gated outside
    ///   shoot-through and the shaft driven above synchronous speed.
    /// * case 3: dcdc stage into 245 ohm, 0.2 s from rest at 100 ns.
    pub fn scenario(self) -> Scenario {
        let (params, values, mode, modulation, dt, t_end) = match self {
            CaseId::Case1Motor | CaseId::Case2Generator => {
                let p = ConverterParams::inverter_case();
                let mut v = ComponentValues::inverter_case();
                if self == CaseId::Case2Generator {
                    v.synchronous_input = true;
                    v.load3 = Load3Spec::Machine {
                        params: IMParams::default(),
                        shaft: Shaft::Driven { rpm: GENERATOR_RPM },
                        initial_rpm: GENERATOR_RPM,
                    };
                }
                let m = ModulationSpec::spwm(p.d, p.m, p.f_sw, OUTPUT_FREQUENCY);
                (p, v, Mode::Inverter, m, None, 0.3)
            }
            CaseId::Case3Dcdc => {
                let p = ConverterParams::dcdc_case();
                (p, ComponentValues::dcdc_case(), Mode::Dcdc, ModulationSpec::dcdc(p.d, p.f_sw), Some(100e-9), 0.2)
            }
        };
        Scenario {
            name: self.name().into(),
            case: Some(self),
            circuit: CircuitSource::Builtin { params, values, mode },
            modulation,
            sim: RunSettings {
                dt,
                t_end,
                steady_window: None,
                trace_decimate: 1,
            },
            probes: Vec::new(),
        }
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CaseId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        CaseId::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown case `{s}` (expected case1_motor, case2_generator or case3_dcdc)"))
    }
}

/// Worker threads for concurrent scenario runs: `ZSOURCE_LAB_THREADS`, else
/// the available parallelism.
pub fn worker_threads() -> usize {
    std::env::var("ZSOURCE_LAB_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub case: CaseId,
    pub report: SteadyReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub table: ComparisonTable,
    pub cases: Vec<CaseSummary>,
    /// RMS difference between case 1 and case 2 converter-side waveforms
    /// over their steady windows, relative to case 1 RMS.
    pub motor_vs_generator: BTreeMap<String, f64>,
}

/// Prior variants at the same boost as the proposed operating point, with
/// windings giving a factor of 3.
fn priors(reference_boost: f64) -> Vec<PriorTopologyParams> {
    [PriorTopology::ImprovedYzsi, PriorTopology::ModifiedYzsi, PriorTopology::ClassicalYzsi]
        .into_iter()
        .map(|topology| {
            let mut p = PriorTopologyParams {
                topology,
                n1: 1.0,
                n2: 1.0,
                n3: 2.0,
                d: 0.0,
            };
            p.d = p.duty_for_boost(reference_boost).unwrap_or(0.0);
            p
        })
        .collect()
}

/// Signals compared between the motor and generator cases.
pub const CONVERTER_SIDE: [&str; 4] = ["v(p)", "i(v1)", "v(c1)", "v(c2)"];

fn rms_difference(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let num: f64 = a[..n].iter().zip(&b[..n]).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = a[..n].iter().map(|x| x * x).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

/// Run the listed cases (concurrently, bounded by [`worker_threads`]) and
/// assemble the comparison report.
pub fn compare_cases(cases: &[CaseId]) -> Result<CompareReport> {
    let proposed = ConverterParams::dcdc_case();
    let table = comparison_table(&proposed, &priors(crate::analytics::boost_proposed(
        proposed.k(),
        proposed.p(),
        proposed.d,
    )?))?;
    let threads = worker_threads().max(1);
    let mut results: Vec<Option<Result<(Trace, SteadyReport)>>> = (0..cases.len()).map(|_| None).collect();
    for (chunk_ids, chunk_out) in cases.chunks(threads).zip(results.chunks_mut(threads)) {
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunk_ids
                .iter()
                .map(|id| scope.spawn(move || run(&id.scenario())))
                .collect();
            for (slot, h) in chunk_out.iter_mut().zip(handles) {
                *slot = Some(h.join().expect("scenario thread panicked"));
            }
        });
    }
    let mut runs = Vec::new();
    for (id, r) in cases.iter().zip(results) {
        let (trace, report) = r.expect("every case ran")?;
        runs.push((*id, trace, report));
    }
    let mut motor_vs_generator = BTreeMap::new();
    let find = |id| runs.iter().find(|(c, _, _)| *c == id);
    if let (Some((_, t1, _)), Some((_, t2, _))) = (find(CaseId::Case1Motor), find(CaseId::Case2Generator)) {
        // traces hold two windows; compare the last
        let half = t1.len() / 2;
        for name in CONVERTER_SIDE {
            if let (Some(a), Some(b)) = (t1.column(name), t2.column(name)) {
                motor_vs_generator.insert(name.to_string(), rms_difference(&a[half..], &b[half.min(b.len())..]));
            }
        }
    }
    Ok(CompareReport {
        table,
        cases: runs
            .into_iter()
            .map(|(case, _, report)| CaseSummary { case, report })
            .collect(),
        motor_vs_generator,
    })
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.prec$}"))
}

impl CompareReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Comparison table with one block of measured rows per case (measured
    /// values fill the proposed-topology column).
    pub fn render(&self) -> String {
        let mut rows = self.table.rows();
        let blanks = self.table.columns.len().saturating_sub(1);
        let row = |label: String, value: String| {
            let mut cells = vec![value];
            cells.extend(std::iter::repeat("".to_string()).take(blanks));
            (label, cells)
        };
        for c in &self.cases {
            let r = &c.report;
            rows.push(row(format!("{}: measured boost", c.case), opt(r.b_meas, 4)));
            rows.push(row(format!("{}: min input current [A]", c.case), opt(r.min_input_current, 3)));
            rows.push(row(format!("{}: inrush ratio", c.case), opt(r.inrush_ratio, 3)));
            rows.push(row(format!("{}: turn-on current ratio", c.case), opt(r.turn_on_current, 4)));
            rows.push(row(format!("{}: efficiency", c.case), opt(r.efficiency, 4)));
            rows.push(row(format!("{}: source power [W]", c.case), format!("{:.1}", r.source_power)));
        }
        let mut out = render_rows(&rows);
        if !self.motor_vs_generator.is_empty() {
            let _ = writeln!(out, "\ncase1_motor vs case2_generator, relative RMS difference:");
            for (k, v) in &self.motor_vs_generator {
                let _ = writeln!(out, "  {k:<8} {v:.4}");
            }
        }
        out
    }
}
