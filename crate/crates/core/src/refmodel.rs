//! Two-state (shoot-through / non-shoot-through) reference model of the converter.
//!
//! The coupled inductor is ideal: one magnetizing current `i_m` referred to
//! winding 1, no leakage. Together with the series inductor and the two
//! network capacitors this gives four states; a dcdc output capacitor adds a
//! fifth. Each phase is a linear ODE, integrated with fixed-step RK4 on the
//! same gate grid as the netlist engine.
//!
//! Non-shoot-through (D1 conducting, link loaded):
//!
//! ```text
//! v_L1 = (V_dc - v_C2) / (1 + K)
//! v_Lr = (P - K) v_L1 - v_C1
//! v_pn = v_C2 - v_Lr
//! ```
//!
//! Shoot-through (link shorted, D1 blocking):
//!
//! ```text
//! v_L1 = (V_dc + v_C1) / (1 + P)
//! v_Lr = v_C2
//! ```

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analytics::{cap_voltages, nst_inductor_voltages, AnalyticsError, ConverterParams};
use crate::engine::{steps_per_period, EngineError, SimConfig, Trace};
use crate::modulation::{Gate, GateSource, Gates};
use crate::netlist::{
    Circuit, ComponentValues, Element, ElementKind, InitialState, Load3Spec, Mode, GROUND, LINK,
};

/// Series resistance between the link and the dcdc output capacitor. The
/// ideal network fixes the link voltage algebraically during
/// non-shoot-through, so a diode straight onto a capacitor would form a
/// capacitor loop.
pub const OUTPUT_SERIES_R: f64 = 0.02;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RefError {
    #[error(transparent)]
    Infeasible(#[from] AnalyticsError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("volt-second system is singular at d={0}")]
    Singular(f64),
    #[error("unsupported load for the reference model: {0}")]
    Unsupported(String),
    #[error("structure: {0}")]
    Structure(String),
    #[error("unknown reference signal `{0}`")]
    UnknownSignal(String),
}

/// What the DC link feeds outside shoot-through.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RefLoad {
    /// Plain resistor across the link.
    Link { r: f64 },
    /// Diode into an output capacitor with a resistive load.
    Output { r_s: f64, co: f64, r_load: f64 },
    /// Three-phase bridge into a star resistor load, legs taken from the gates.
    Bridge { r: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RefState {
    pub i_m: f64,
    pub i_lr: f64,
    pub v_c1: f64,
    pub v_c2: f64,
    /// Output capacitor voltage; stays zero without an output stage.
    pub v_o: f64,
}

impl RefState {
    fn to_array(self) -> [f64; 5] {
        [self.i_m, self.i_lr, self.v_c1, self.v_c2, self.v_o]
    }

    fn from_array(a: [f64; 5]) -> Self {
        Self {
            i_m: a[0],
            i_lr: a[1],
            v_c1: a[2],
            v_c2: a[3],
            v_o: a[4],
        }
    }

    fn axpy(self, h: f64, d: RefState) -> RefState {
        let (x, d) = (self.to_array(), d.to_array());
        Self::from_array(std::array::from_fn(|k| x[k] + h * d[k]))
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefModel {
    pub k: f64,
    pub p: f64,
    pub v_dc: f64,
    /// Magnetizing inductance referred to winding 1.
    pub lm: f64,
    pub lr: f64,
    pub c1: f64,
    pub c2: f64,
    pub load: RefLoad,
    pub initial: RefState,
}

/// Inductor voltages and link voltage of one phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseVoltages {
    pub v_l1: f64,
    pub v_lr: f64,
    pub v_pn: f64,
}

impl RefModel {
    /// Reference counterpart of a builtin netlist. Inverter mode needs a
    /// resistive three-phase load.
    pub fn from_builtin(op: &ConverterParams, values: &ComponentValues, mode: Mode) -> Result<Self, RefError> {
        match mode {
            Mode::Dcdc => op.validate()?,
            Mode::Inverter => op.validate_inverter()?,
        }
        let load = match mode {
            Mode::Dcdc => RefLoad::Output {
                r_s: OUTPUT_SERIES_R,
                co: values.co,
                r_load: values.r_load,
            },
            Mode::Inverter => match values.load3 {
                Load3Spec::Resistive { r } => RefLoad::Bridge { r },
                other => return Err(RefError::Unsupported(format!("{other:?}"))),
            },
        };
        let initial = match values.initial {
            InitialState::Zero => RefState::default(),
            InitialState::Analytic => {
                let pred = op.predict()?;
                RefState {
                    v_c1: pred.v_c1,
                    v_c2: pred.v_c2,
                    v_o: if mode == Mode::Dcdc { pred.v_pn } else { 0.0 },
                    ..RefState::default()
                }
            }
        };
        Ok(Self {
            k: op.k(),
            p: op.p(),
            v_dc: op.v_dc,
            lm: values.lm,
            lr: values.lr,
            c1: values.c1,
            c2: values.c2,
            load,
            initial,
        })
    }

    /// Inductor and link voltages for a given phase.
    pub fn voltages(&self, x: &RefState, st: bool) -> PhaseVoltages {
        let (k, p) = (self.k, self.p);
        if st {
            PhaseVoltages {
                v_l1: (self.v_dc + x.v_c1) / (1.0 + p),
                v_lr: x.v_c2,
                v_pn: 0.0,
            }
        } else {
            let v_l1 = (self.v_dc - x.v_c2) / (1.0 + k);
            let v_lr = (p - k) * v_l1 - x.v_c1;
            PhaseVoltages {
                v_l1,
                v_lr,
                v_pn: x.v_c2 - v_lr,
            }
        }
    }

    /// Current drawn from the link outside shoot-through.
    fn link_current(&self, x: &RefState, v_pn: f64, gates: Gates) -> f64 {
        match self.load {
            RefLoad::Link { r } => v_pn / r,
            RefLoad::Output { r_s, .. } => ((v_pn - x.v_o) / r_s).max(0.0),
            RefLoad::Bridge { r } => {
                let up = [Gate::Ah, Gate::Bh, Gate::Ch].map(|g| f64::from(u8::from(gates.is_on(g))));
                let mean = up.iter().sum::<f64>() / 3.0;
                up.iter().map(|u| u * v_pn * (u - mean) / r).sum()
            }
        }
    }

    /// Time derivative of the state. `gates.st()` selects the phase; bridge
    /// loads also read the leg gates.
    pub fn derivatives(&self, x: &RefState, gates: Gates) -> RefState {
        let st = gates.st();
        let v = self.voltages(x, st);
        let (k, p) = (self.k, self.p);
        let (dv_c1, dv_c2, i_out) = if st {
            (-x.i_m / (1.0 + p) / self.c1, -x.i_lr / self.c2, 0.0)
        } else {
            let i_load = self.link_current(x, v.v_pn, gates);
            let i3 = i_load - x.i_lr;
            let i2 = (x.i_m - (1.0 + p) * i3) / (1.0 + k);
            ((x.i_lr - i_load) / self.c1, (i2 - x.i_lr) / self.c2, i_load)
        };
        let dv_o = match self.load {
            RefLoad::Output { co, r_load, .. } => (i_out - x.v_o / r_load) / co,
            _ => 0.0,
        };
        RefState {
            i_m: v.v_l1 / self.lm,
            i_lr: v.v_lr / self.lr,
            v_c1: dv_c1,
            v_c2: dv_c2,
            v_o: dv_o,
        }
    }

    /// One RK4 step with the gates held.
    pub fn rk4(&self, x: &RefState, gates: Gates, h: f64) -> RefState {
        let k1 = self.derivatives(x, gates);
        let k2 = self.derivatives(&x.axpy(h / 2.0, k1), gates);
        let k3 = self.derivatives(&x.axpy(h / 2.0, k2), gates);
        let k4 = self.derivatives(&x.axpy(h, k3), gates);
        let (a, b, c, d) = (k1.to_array(), k2.to_array(), k3.to_array(), k4.to_array());
        x.axpy(h / 6.0, RefState::from_array(std::array::from_fn(|j| a[j] + 2.0 * b[j] + 2.0 * c[j] + d[j])))
    }

    fn signal(&self, name: &str) -> Option<fn(&RefModel, &RefState, bool) -> f64> {
        Some(match name {
            "i_m" => |_, x, _| x.i_m,
            "i_lr" => |_, x, _| x.i_lr,
            "v_c1" => |_, x, _| x.v_c1,
            "v_c2" => |_, x, _| x.v_c2,
            "v_o" => |_, x, _| x.v_o,
            "v_pn" => |m, x, st| m.voltages(x, st).v_pn,
            "v_l1" => |m, x, st| m.voltages(x, st).v_l1,
            "v_lr" => |m, x, st| m.voltages(x, st).v_lr,
            _ => return None,
        })
    }
}

/// Signals recorded by [`simulate_ref`] when no probes are requested.
pub const REF_SIGNALS: [&str; 6] = ["i_m", "i_lr", "v_c1", "v_c2", "v_o", "v_pn"];

/// Integrate the reference model on the engine's grid: gates are sampled at
/// step midpoints and samples are taken after each step. Probes name
/// reference signals (`i_m`, `i_lr`, `v_c1`, `v_c2`, `v_o`, `v_pn`, `v_l1`,
/// `v_lr`).
pub fn simulate_ref(model: &RefModel, src: &dyn GateSource, cfg: &SimConfig) -> Result<Trace, RefError> {
    steps_per_period(src.switching_period(), cfg.dt)?;
    let names: Vec<String> = if cfg.probes.is_empty() {
        REF_SIGNALS.iter().map(|s| s.to_string()).collect()
    } else {
        cfg.probes.clone()
    };
    let getters = names
        .iter()
        .map(|n| model.signal(n).ok_or_else(|| RefError::UnknownSignal(n.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let dt = cfg.dt;
    let first = (cfg.record_start / dt).round() as u64;
    let decimate = cfg.decimate.max(1) as u64;
    let mut trace = Trace::new(dt * decimate as f64, (first + 1) as f64 * dt, names);
    let mut x = model.initial;
    let mut row = vec![0.0; getters.len()];
    for k in 0..cfg.steps() {
        let gates = src.gates_at((k as f64 + 0.5) * dt);
        x = model.rk4(&x, gates, dt);
        if !x.is_finite() {
            return Err(EngineError::Diverged { time: (k + 1) as f64 * dt }.into());
        }
        if k >= first && (k - first) % decimate == 0 {
            for (slot, g) in row.iter_mut().zip(&getters) {
                *slot = g(model, &x, gates.st());
            }
            trace.push(&row, gates.st());
        }
    }
    Ok(trace)
}

/// Capacitor voltages from volt-second balance of both inductors.
///
/// Both phase voltages are affine in `(v_C1, v_C2)`; the coefficients are read
/// off the phase equations and the 2x2 balance system is solved directly.
pub fn averaged_steady_state(k: f64, p: f64, d: f64, v_dc: f64) -> Result<(f64, f64), RefError> {
    if !(0.0..1.0).contains(&d) {
        return Err(RefError::Singular(d));
    }
    let model = RefModel {
        k,
        p,
        v_dc,
        lm: 1.0,
        lr: 1.0,
        c1: 1.0,
        c2: 1.0,
        load: RefLoad::Link { r: 1.0 },
        initial: RefState::default(),
    };
    let averaged = |v_c1: f64, v_c2: f64| {
        let x = RefState {
            v_c1,
            v_c2,
            ..RefState::default()
        };
        let (s, n) = (model.voltages(&x, true), model.voltages(&x, false));
        [d * s.v_l1 + (1.0 - d) * n.v_l1, d * s.v_lr + (1.0 - d) * n.v_lr]
    };
    volt_second_solve(averaged, d, v_dc)
}

fn volt_second_solve(f: impl Fn(f64, f64) -> [f64; 2], d: f64, scale: f64) -> Result<(f64, f64), RefError> {
    let b = f(0.0, 0.0);
    let (e1, e2) = (f(1.0, 0.0), f(0.0, 1.0));
    let a = [[e1[0] - b[0], e2[0] - b[0]], [e1[1] - b[1], e2[1] - b[1]]];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let norm = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if !det.is_finite() || det.abs() <= 1e-12 * norm * norm.max(f64::MIN_POSITIVE) {
        return Err(RefError::Singular(d));
    }
    let v_c1 = (-b[0] * a[1][1] + b[1] * a[0][1]) / det;
    let v_c2 = (-b[1] * a[0][0] + b[0] * a[1][0]) / det;
    if !(v_c1.is_finite() && v_c2.is_finite()) || v_c1.abs().max(v_c2.abs()) > 1e12 * scale.abs().max(1.0) {
        return Err(RefError::Singular(d));
    }
    Ok((v_c1, v_c2))
}

// ---------------------------------------------------------------------------
// Topology verification

/// Outcome of checking one relation over all parameter draws.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Largest relative error seen; infinite when a phase circuit was singular.
    pub max_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopologyReport {
    pub draws: usize,
    pub relations: Vec<RelationCheck>,
}

impl TopologyReport {
    pub fn passed(&self) -> bool {
        self.relations.iter().all(|r| r.passed)
    }

    pub fn relation(&self, name: &str) -> Option<&RelationCheck> {
        self.relations.iter().find(|r| r.name == name)
    }
}

/// Names of the checked relations, in report order.
pub const RELATIONS: [&str; 4] = ["nst_l1_voltage", "nst_lr_voltage", "c1_voltage", "c2_voltage"];

/// Network elements picked out of a circuit.
struct Roles<'a> {
    source: &'a Element,
    w3: &'a Element,
    diode: &'a Element,
    lr: &'a Element,
    caps: [&'a Element; 2],
}

fn one<'a>(v: Vec<&'a Element>, what: &str) -> Result<&'a Element, RefError> {
    match v.as_slice() {
        [e] => Ok(*e),
        _ => Err(RefError::Structure(format!("expected one {what}, found {}", v.len()))),
    }
}

fn roles(c: &Circuit) -> Result<Roles<'_>, RefError> {
    let of = |kind| c.elements().iter().filter(move |e: &&Element| e.kind == kind);
    let w3 = one(of(ElementKind::W3).collect(), "coupled inductor")?;
    let source = one(of(ElementKind::V).collect(), "voltage source")?;
    let w3_nodes: Vec<&str> = w3.nodes.iter().map(String::as_str).filter(|n| *n != GROUND).collect();
    let on_w3 = |e: &Element| e.nodes.iter().any(|n| w3_nodes.contains(&n.as_str()));
    let diode = one(
        c.elements()
            .iter()
            .filter(|e| {
                let both = e.nodes.iter().all(|n| w3_nodes.contains(&n.as_str()));
                let gated = e.kind == ElementKind::S && e.text("gate") == Some("nst");
                both && (e.kind == ElementKind::D || gated)
            })
            .collect(),
        "network diode",
    )?;
    let lr = one(of(ElementKind::L).filter(|e| on_w3(e)).collect(), "series inductor")?;
    let caps: Vec<&Element> = of(ElementKind::C)
        .filter(|e| on_w3(e) || e.nodes.iter().any(|n| n == LINK))
        .collect();
    let caps: [&Element; 2] = caps
        .try_into()
        .map_err(|v: Vec<_>| RefError::Structure(format!("expected two network capacitors, found {}", v.len())))?;
    // C1 is the capacitor touching the winding-3 end; the other is C2.
    let w3_end = w3.nodes[5].as_str();
    let caps = if caps[1].nodes.iter().any(|n| n == w3_end) && !caps[0].nodes.iter().any(|n| n == w3_end) {
        [caps[1], caps[0]]
    } else {
        caps
    };
    Ok(Roles {
        source,
        w3,
        diode,
        lr,
        caps,
    })
}

/// One DC operating point of the ideal network.
struct PhasePoint {
    v_l1: f64,
    v_lr: f64,
}

struct Draw {
    turns: [f64; 3],
    v_dc: f64,
    i_m: f64,
    i_lr: f64,
    i_load: f64,
}

#[derive(Default)]
struct NodeIndex {
    names: Vec<String>,
}

impl NodeIndex {
    fn get(&mut self, n: &str) -> Option<usize> {
        if n == GROUND {
            return None;
        }
        Some(match self.names.iter().position(|m| m == n) {
            Some(i) => i,
            None => {
                self.names.push(n.to_string());
                self.names.len() - 1
            }
        })
    }

    fn pair(&mut self, e: &Element) -> (Option<usize>, Option<usize>) {
        (self.get(&e.nodes[0]), self.get(&e.nodes[1]))
    }
}

/// Solve the network with capacitors as voltage sources, inductors as
/// current sources and an ideal coupled inductor.
fn solve_phase(r: &Roles, draw: &Draw, v_c: [f64; 2], st: bool) -> Option<PhasePoint> {
    let mut nodes = NodeIndex::default();
    // Voltage sources: (a, b, value). Current sources: (a, b, value) flowing a -> b.
    let mut vsrc = vec![];
    let mut isrc = vec![];
    let (a, b) = nodes.pair(r.source);
    vsrc.push((a, b, draw.v_dc));
    for (cap, v) in r.caps.iter().zip(v_c) {
        let (a, b) = nodes.pair(cap);
        vsrc.push((a, b, v));
    }
    let (lr_a, lr_b) = nodes.pair(r.lr);
    isrc.push((lr_a, lr_b, draw.i_lr));
    let (da, db) = nodes.pair(r.diode);
    let link = nodes.get(LINK);
    if st {
        vsrc.push((link, None, 0.0));
    } else {
        vsrc.push((da, db, 0.0));
        isrc.push((link, None, draw.i_load));
    }
    let w: Vec<(Option<usize>, Option<usize>)> = (0..3)
        .map(|k| (nodes.get(&r.w3.nodes[2 * k]), nodes.get(&r.w3.nodes[2 * k + 1])))
        .collect();

    let n = nodes.names.len();
    let size = n + vsrc.len() + 3;
    let mut m = DMatrix::<f64>::zeros(size, size);
    let mut rhs = DVector::<f64>::zeros(size);
    let inject = |rhs: &mut DVector<f64>, node: Option<usize>, i: f64| {
        if let Some(k) = node {
            rhs[k] += i;
        }
    };
    for &(a, b, i) in &isrc {
        inject(&mut rhs, a, -i);
        inject(&mut rhs, b, i);
    }
    // KCL rows: sum of currents leaving the node through unknown branches
    // equals the injected current.
    let branch = |m: &mut DMatrix<f64>, row: usize, a: Option<usize>, b: Option<usize>, coef: f64| {
        if let Some(a) = a {
            m[(a, row)] += coef;
        }
        if let Some(b) = b {
            m[(b, row)] -= coef;
        }
    };
    for (j, &(a, b, v)) in vsrc.iter().enumerate() {
        let row = n + j;
        branch(&mut m, row, a, b, 1.0);
        if let Some(a) = a {
            m[(row, a)] += 1.0;
        }
        if let Some(b) = b {
            m[(row, b)] -= 1.0;
        }
        rhs[row] = v;
    }
    let base = n + vsrc.len();
    for (k, &(a, b)) in w.iter().enumerate() {
        branch(&mut m, base + k, a, b, 1.0);
    }
    let t = draw.turns;
    let volt = |m: &mut DMatrix<f64>, row: usize, k: usize, coef: f64| {
        let (a, b) = w[k];
        if let Some(a) = a {
            m[(row, a)] += coef;
        }
        if let Some(b) = b {
            m[(row, b)] -= coef;
        }
    };
    // v_k = (n_k / n_1) v_1 for windings 2 and 3.
    volt(&mut m, base, 1, 1.0);
    volt(&mut m, base, 0, -t[1] / t[0]);
    volt(&mut m, base + 1, 2, 1.0);
    volt(&mut m, base + 1, 0, -t[2] / t[0]);
    // Magnetizing current referred to winding 1.
    for k in 0..3 {
        m[(base + 2, base + k)] = t[k] / t[0];
    }
    rhs[base + 2] = draw.i_m;

    let x = m.lu().solve(&rhs)?;
    if x.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let v = |node: Option<usize>| node.map_or(0.0, |k| x[k]);
    Some(PhasePoint {
        v_l1: v(w[0].0) - v(w[0].1),
        v_lr: v(lr_a) - v(lr_b),
    })
}

fn rel_err(got: f64, want: f64, scale: f64) -> f64 {
    if !got.is_finite() {
        return f64::INFINITY;
    }
    (got - want).abs() / want.abs().max(scale)
}

/// Check that the circuit's ideal phase equations reproduce the converter's
/// closed-form relations over `draws` random feasible operating points.
pub fn verify_topology(c: &Circuit, draws: usize, seed: u64) -> Result<TopologyReport, RefError> {
    let r = roles(c)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 4];
    for _ in 0..draws {
        let turns = [1.0, rng.gen_range(0.3..5.0), rng.gen_range(0.3..5.0)];
        let (k, p) = (turns[1], turns[2]);
        let d = rng.gen_range(0.0..0.95) * crate::analytics::duty_feasibility(k, p);
        let draw = Draw {
            turns,
            v_dc: rng.gen_range(5.0..400.0),
            i_m: rng.gen_range(-20.0..20.0),
            i_lr: rng.gen_range(-20.0..20.0),
            i_load: rng.gen_range(-20.0..20.0),
        };
        let v_c = [rng.gen_range(-500.0..500.0), rng.gen_range(-500.0..500.0)];
        let scale = draw.v_dc;
        let (e_l1, e_lr) = nst_inductor_voltages(k, p, draw.v_dc, v_c[0], v_c[1]);
        match solve_phase(&r, &draw, v_c, false) {
            Some(pt) => {
                worst[0] = worst[0].max(rel_err(pt.v_l1, e_l1, scale));
                worst[1] = worst[1].max(rel_err(pt.v_lr, e_lr, scale));
            }
            None => {
                worst[0] = f64::INFINITY;
                worst[1] = f64::INFINITY;
            }
        }
        let averaged = |v1: f64, v2: f64| {
            let s = solve_phase(&r, &draw, [v1, v2], true);
            let n = solve_phase(&r, &draw, [v1, v2], false);
            match (s, n) {
                (Some(s), Some(n)) => [d * s.v_l1 + (1.0 - d) * n.v_l1, d * s.v_lr + (1.0 - d) * n.v_lr],
                _ => [f64::NAN; 2],
            }
        };
        let (w1, w2) = cap_voltages(k, p, d, draw.v_dc)?;
        match volt_second_solve(averaged, d, scale) {
            Ok((g1, g2)) => {
                worst[2] = worst[2].max(rel_err(g1, w1, scale));
                worst[3] = worst[3].max(rel_err(g2, w2, scale));
            }
            Err(_) => {
                worst[2] = f64::INFINITY;
                worst[3] = f64::INFINITY;
            }
        }
    }
    Ok(TopologyReport {
        draws,
        relations: RELATIONS
            .iter()
            .zip(worst)
            .map(|(name, e)| RelationCheck {
                name,
                passed: e <= 1e-6,
                max_error: e,
            })
            .collect(),
    })
}
