//! Scenario execution, steady-state metrics and case reproduction.
//!
//! A [`Scenario`] names a circuit (builtin or netlist file), a modulation
//! and run settings. [`run`] simulates it, measures the trailing steady
//! window and attaches the closed-form prediction for side-by-side deltas.

mod cases;
mod report;
mod shoot;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analytics::{AnalyticsError, ConverterParams};
use crate::engine::{run as run_engine, steps_per_period, EngineError, Probe, SimConfig, Simulator, Trace};
use crate::modulation::{Gate, GateSource, Gates, ModulationError, ModulationSpec};
use crate::netlist::{
    builtin, parse, BuiltinError, Circuit, ComponentValues, Diagnostic, ElementKind, Load3Spec, Mode, LINK,
};

pub use cases::{compare_cases, worker_threads, CaseId, CaseSummary, CompareReport};
pub use report::{SignalStats, SteadyReport};
pub use shoot::{shoot_periodic, shoot_steady, Shot, SHOOT_MAX_ITERATIONS, SHOOT_TOLERANCE};

/// Start-up interval excluded from the input-current minimum.
pub const STARTUP: f64 = 50e-3;
/// Interval over which the start-up inrush peak is taken.
pub const INRUSH_WINDOW: f64 = 10e-3;
/// Largest change of a steady signal between the last two windows for a run
/// to count as settled.
pub const SETTLE_TOLERANCE: f64 = 0.01;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Builtin(#[from] BuiltinError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Modulation(#[from] ModulationError),
    #[error("netlist: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Netlist(Vec<Diagnostic>),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("shooting did not converge in {iterations} iterations; residual history {history:?}")]
    NoConvergence { iterations: usize, history: Vec<f64> },
}

impl From<Vec<Diagnostic>> for HarnessError {
    fn from(d: Vec<Diagnostic>) -> Self {
        HarnessError::Netlist(d)
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum CircuitSource {
    Builtin {
        params: ConverterParams,
        values: ComponentValues,
        mode: Mode,
    },
    Netlist {
        path: PathBuf,
        /// Operating point for analytic deltas, if the netlist implements one.
        #[serde(default)]
        params: Option<ConverterParams>,
        /// Probes whose powers add up to the output power.
        #[serde(default)]
        output_power: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    /// Engine step; defaults to the modulation's aligned step.
    #[serde(default)]
    pub dt: Option<f64>,
    pub t_end: f64,
    /// Trailing window for the steady metrics; defaults to 20 switching
    /// periods (dcdc) or 2 output periods (spwm).
    #[serde(default)]
    pub steady_window: Option<f64>,
    /// Keep every n-th sample of the returned trace.
    #[serde(default = "one")]
    pub trace_decimate: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case: Option<CaseId>,
    pub circuit: CircuitSource,
    pub modulation: ModulationSpec,
    pub sim: RunSettings,
    /// Extra signals to record next to the ones the metrics need.
    #[serde(default)]
    pub probes: Vec<String>,
}

impl Scenario {
    /// Read a scenario file; a relative netlist path resolves against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let io = |e: &dyn std::fmt::Display| HarnessError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let text = std::fs::read_to_string(path).map_err(|e| io(&e))?;
        let mut s: Scenario = serde_json::from_str(&text).map_err(|e| io(&e))?;
        if let CircuitSource::Netlist { path: net, .. } = &mut s.circuit {
            if net.is_relative() {
                if let Some(dir) = path.parent() {
                    *net = dir.join(&*net);
                }
            }
        }
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn circuit(&self) -> Result<Circuit> {
        match &self.circuit {
            CircuitSource::Builtin { params, values, mode } => Ok(builtin(params, values, *mode)?),
            CircuitSource::Netlist { path, .. } => {
                let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
                Ok(parse(&text)?)
            }
        }
    }

    pub fn params(&self) -> Option<ConverterParams> {
        match &self.circuit {
            CircuitSource::Builtin { params, .. } => Some(*params),
            CircuitSource::Netlist { params, .. } => *params,
        }
    }

    pub fn dt(&self) -> f64 {
        self.sim.dt.unwrap_or_else(|| self.modulation.default_dt())
    }

    pub fn window(&self) -> f64 {
        self.sim.steady_window.unwrap_or(match self.modulation {
            ModulationSpec::Dcdc { f_sw, .. } => 20.0 / f_sw,
            ModulationSpec::Spwm { f_out, .. } => 2.0 / f_out,
        })
    }

    /// Consistency of modulation, operating point and run settings.
    pub fn validate(&self) -> Result<()> {
        self.modulation.validate()?;
        let bad = |m: String| Err(HarnessError::Scenario(m));
        if let Some(p) = self.params() {
            p.validate()?;
            if (p.d - self.modulation.d()).abs() > 1e-12 || (p.f_sw - self.modulation.f_sw()).abs() > 1e-9 * p.f_sw {
                return bad(format!(
                    "modulation (d={}, f_sw={}) disagrees with the operating point (d={}, f_sw={})",
                    self.modulation.d(),
                    self.modulation.f_sw(),
                    p.d,
                    p.f_sw
                ));
            }
            if let ModulationSpec::Spwm { m, .. } = self.modulation {
                if (m - p.m).abs() > 1e-12 {
                    return bad(format!("modulation index {m} disagrees with the operating point ({})", p.m));
                }
            }
        }
        let dt = self.dt();
        steps_per_period(self.modulation.switching_period(), dt)?;
        let periods = self.window() * self.modulation.f_sw();
        if periods.round() < 1.0 || (periods - periods.round()).abs() > 1e-6 {
            return Err(ModulationError::Window(periods).into());
        }
        if 2.0 * self.window() > self.sim.t_end + 0.5 * dt {
            return bad(format!(
                "t_end {} s is shorter than two steady windows of {} s",
                self.sim.t_end,
                self.window()
            ));
        }
        Ok(())
    }
}

/// Probe names the metrics use, split by role.
struct MetricProbes {
    source: String,
    source_power: String,
    link: Option<String>,
    /// (label, voltage probe, flux-linkage probe)
    inductors: Vec<(String, String, String)>,
    output_power: Vec<String>,
    switches: Vec<(String, Gate)>,
}

fn output_power_probes(s: &Scenario) -> Vec<String> {
    match &s.circuit {
        CircuitSource::Builtin { mode: Mode::Dcdc, .. } => vec!["p(rl)".into()],
        CircuitSource::Builtin { values, .. } => match values.load3 {
            Load3Spec::Resistive { .. } => ["a", "b", "c"].map(|p| format!("p(m1.{p})")).to_vec(),
            Load3Spec::SeriesRl { .. } => ["a", "b", "c"].map(|p| format!("p(m1.r{p})")).to_vec(),
            Load3Spec::Machine { .. } => vec!["p(m1)".into()],
        },
        CircuitSource::Netlist { output_power, .. } => output_power.clone(),
    }
}

fn metric_probes(s: &Scenario, c: &Circuit) -> Result<MetricProbes> {
    let source = c
        .elements()
        .iter()
        .find(|e| e.kind == ElementKind::V)
        .ok_or_else(|| HarnessError::Scenario("circuit has no voltage source".into()))?;
    let mut inductors = Vec::new();
    for e in c.elements() {
        match e.kind {
            ElementKind::W3 => inductors.push((
                format!("{}.1", e.name),
                format!("v({}.1)", e.name),
                format!("lambda({}.1)", e.name),
            )),
            ElementKind::L => inductors.push((e.name.clone(), format!("v({})", e.name), format!("lambda({})", e.name))),
            _ => {}
        }
    }
    let switches = c
        .elements()
        .iter()
        .filter(|e| e.kind == ElementKind::S)
        .filter_map(|e| Some((format!("i({})", e.name), Gate::from_name(e.text("gate")?)?)))
        .collect();
    Ok(MetricProbes {
        source: format!("i({})", source.name),
        source_power: format!("p({})", source.name),
        link: c.nodes().contains(LINK).then(|| format!("v({LINK})")),
        inductors,
        output_power: output_power_probes(s),
        switches,
    })
}

fn source_voltage(c: &Circuit) -> f64 {
    c.elements()
        .iter()
        .find(|e| e.kind == ElementKind::V)
        .and_then(|e| e.num("dc"))
        .unwrap_or(0.0)
}

/// Streaming metrics gathered outside the recorded window.
#[derive(Default)]
struct Watch {
    inrush_peak: f64,
    min_after_startup: Option<f64>,
}

impl Watch {
    fn observe(&mut self, t: f64, i_in: f64) {
        if t <= INRUSH_WINDOW + 1e-12 {
            self.inrush_peak = self.inrush_peak.max(i_in.abs());
        }
        if t >= STARTUP - 1e-12 {
            self.min_after_startup = Some(self.min_after_startup.map_or(i_in, |m: f64| m.min(i_in)));
        }
    }
}

/// Turn-on current tracker: mean |i| over the two samples before each
/// rising gate edge.
struct TurnOn {
    probes: Vec<(Probe, Gate)>,
    history: Vec<[f64; 2]>,
    prev: Option<Gates>,
    sum: f64,
    edges: usize,
}

impl TurnOn {
    fn observe(&mut self, sim: &Simulator, gates: Gates) {
        for (k, (p, g)) in self.probes.iter().enumerate() {
            if let Some(prev) = self.prev {
                if gates.is_on(*g) && !prev.is_on(*g) {
                    self.sum += 0.5 * (self.history[k][0].abs() + self.history[k][1].abs());
                    self.edges += 1;
                }
            }
            self.history[k] = [self.history[k][1], sim.value(*p)];
        }
        self.prev = Some(gates);
    }
}

/// Simulate a scenario and measure its trailing steady window.
///
/// The returned trace covers the last two windows (so the settling check
/// can be repeated by callers), decimated per the scenario.
pub fn run(s: &Scenario) -> Result<(Trace, SteadyReport)> {
    s.validate()?;
    let c = s.circuit()?;
    let dt = s.dt();
    let window_steps = (s.window() / dt).round() as u64;
    let total = (s.sim.t_end / dt).round() as u64;
    let lead = total - 2 * window_steps;
    let mp = metric_probes(s, &c)?;

    let sim = Simulator::new(&c, dt)?;
    let mut names: Vec<String> = vec![mp.source.clone()];
    names.extend(mp.link.iter().cloned());
    for (_, v, flux) in &mp.inductors {
        names.push(v.clone());
        names.push(flux.clone());
    }
    names.extend(mp.output_power.iter().cloned());
    names.push(mp.source_power.clone());
    for extra in ["v(c1)", "v(c2)", "v(out)"] {
        if sim.probe(extra).is_ok() {
            names.push(extra.into());
        }
    }
    names.extend(s.probes.iter().cloned());
    let mut seen = std::collections::BTreeSet::new();
    names.retain(|n| seen.insert(n.clone()));
    for n in &names {
        sim.probe(n)?;
    }
    let i_in = sim.probe(&mp.source)?;

    let mut watch = Watch::default();
    let src: &dyn GateSource = &s.modulation;
    let cfg = |steps: u64, record: bool| {
        let mut c = SimConfig::new(dt, steps as f64 * dt).probes(&names);
        if !record {
            c.probes = vec![names[0].clone()];
            c.record_start = steps as f64 * dt;
        }
        c
    };
    let (_, sim_after) = run_engine(sim, src, &cfg(lead, false), |sim, _| watch.observe(sim.time(), sim.value(i_in)))?;
    let (previous, mut sim) = run_engine(sim_after, src, &cfg(window_steps, true), |sim, _| {
        watch.observe(sim.time(), sim.value(i_in))
    })?;
    sim.reset_audit();
    let mut turn_on = TurnOn {
        probes: mp
            .switches
            .iter()
            .map(|(p, g)| Ok((sim.probe(p)?, *g)))
            .collect::<std::result::Result<_, EngineError>>()?,
        history: vec![[0.0; 2]; mp.switches.len()],
        prev: None,
        sum: 0.0,
        edges: 0,
    };
    let (last, sim) = run_engine(sim, src, &cfg(window_steps, true), |sim, g| {
        watch.observe(sim.time(), sim.value(i_in));
        turn_on.observe(sim, g);
    })?;

    let v_dc = s.params().map_or_else(|| source_voltage(&c), |p| p.v_dc);
    let report = report::measure(
        s,
        &report::Inputs {
            v_dc,
            previous: &previous,
            last: &last,
            probes: &mp.inductors,
            link: mp.link.as_deref(),
            source: &mp.source,
            source_power: &mp.source_power,
            output_power: &mp.output_power,
            audit: sim.audit(),
            inrush_peak: watch.inrush_peak,
            min_after_startup: watch.min_after_startup,
            turn_on: (turn_on.edges > 0).then(|| turn_on.sum / turn_on.edges as f64),
        },
    )?;
    let joined = join(&previous, &last, s.sim.trace_decimate.max(1));
    Ok((joined, report))
}

fn join(a: &Trace, b: &Trace, decimate: usize) -> Trace {
    let mut out = Trace::new(a.dt * decimate as f64, a.t0, a.names.clone());
    let mut row = vec![0.0; a.names.len()];
    let mut k = 0usize;
    for t in [a, b] {
        for i in 0..t.len() {
            if k % decimate == 0 {
                for (slot, col) in row.iter_mut().zip(&t.columns) {
                    *slot = col[i];
                }
                out.push(&row, t.st[i]);
            }
            k += 1;
        }
    }
    out
}

/// Period-mean of every signal over a trace.
pub fn signal_means(t: &Trace) -> BTreeMap<String, f64> {
    t.names
        .iter()
        .zip(&t.columns)
        .map(|(n, c)| (n.clone(), c.iter().sum::<f64>() / c.len().max(1) as f64))
        .collect()
}
