use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector, Dyn, LU};
use serde::{Deserialize, Serialize};

use super::compile::{compile, Compiled, Node};
use super::{EngineError, Trace};
use crate::loads::{im_step_shaft, IMState};
use crate::modulation::{GateSource, Gates};
use crate::netlist::Circuit;

/// Physical state: capacitor voltages, inductor and winding currents,
/// machine states. Solver memory is rebuilt from it with a backward-Euler
/// first step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimState {
    pub time: f64,
    pub capacitors: BTreeMap<String, f64>,
    pub inductors: BTreeMap<String, f64>,
    /// Winding currents of each coupled inductor.
    pub windings: BTreeMap<String, [f64; 3]>,
    pub machines: BTreeMap<String, IMState>,
}

impl SimState {
    /// Flat state vector (machine angle excluded).
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.capacitors.values().copied().collect();
        v.extend(self.inductors.values());
        for w in self.windings.values() {
            v.extend(w);
        }
        for m in self.machines.values() {
            v.extend(m.psi_s);
            v.extend(m.psi_r);
            v.push(m.omega_r);
        }
        v
    }

    /// Same layout as `self`, values from `v`.
    pub fn with_vector(&self, v: &[f64]) -> SimState {
        let mut out = self.clone();
        let mut it = v.iter().copied();
        let mut next = || it.next().expect("state vector too short");
        for x in out.capacitors.values_mut() {
            *x = next();
        }
        for x in out.inductors.values_mut() {
            *x = next();
        }
        for w in out.windings.values_mut() {
            for x in w.iter_mut() {
                *x = next();
            }
        }
        for m in out.machines.values_mut() {
            m.psi_s = [next(), next()];
            m.psi_r = [next(), next()];
            m.omega_r = next();
        }
        out
    }
}

/// On/off state of every switch and diode, by element name.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SwitchConfiguration {
    pub switches: Vec<(String, bool)>,
    pub diodes: Vec<(String, bool)>,
}

/// MNA system of the first (backward-Euler) step from the initial state.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    /// `v(node)` for node rows, `i(source)` for source rows.
    pub unknowns: Vec<String>,
}

impl LinearSystem {
    pub fn solve(&self) -> Result<DVector<f64>, EngineError> {
        self.matrix
            .clone()
            .lu()
            .solve(&self.rhs)
            .filter(|x| x.iter().all(|v| v.is_finite()))
            .ok_or_else(|| EngineError::Singular {
                node: weakest_unknown(&self.matrix, &self.unknowns),
                time: 0.0,
            })
    }

    pub fn value(&self, x: &DVector<f64>, unknown: &str) -> Option<f64> {
        self.unknowns.iter().position(|u| u == unknown).map(|i| x[i])
    }
}

/// Build the companion-model system for `sw` at step `dt`.
pub fn assemble(c: &Circuit, sw: &SwitchConfiguration, dt: f64) -> Result<LinearSystem, EngineError> {
    let sim = Simulator::new(c, dt)?;
    let mut bits = 0u64;
    for (k, s) in sim.c.switches.iter().enumerate() {
        if lookup(&sw.switches, &s.name)? {
            bits |= 1 << k;
        }
    }
    let ns = sim.c.switches.len();
    for (k, d) in sim.c.diodes.iter().enumerate() {
        if lookup(&sw.diodes, &d.name)? {
            bits |= 1 << (ns + k);
        }
    }
    let mach = sim.machine_currents();
    Ok(LinearSystem {
        matrix: sim.matrix(bits, true),
        rhs: sim.rhs(bits, true, &mach),
        unknowns: sim.unknown_names(),
    })
}

fn lookup(list: &[(String, bool)], name: &str) -> Result<bool, EngineError> {
    list.iter()
        .find(|(n, _)| n == name)
        .map(|(_, on)| *on)
        .ok_or_else(|| EngineError::Config(format!("switch configuration lacks `{name}`")))
}

fn weakest_unknown(m: &DMatrix<f64>, names: &[String]) -> String {
    (0..m.ncols())
        .min_by(|&a, &b| {
            let na = m.column(a).amax();
            let nb = m.column(b).amax();
            na.total_cmp(&nb)
        })
        .map(|i| names[i].clone())
        .unwrap_or_default()
}

fn volt(x: &DVector<f64>, n: Node) -> f64 {
    n.map_or(0.0, |i| x[i])
}

fn stamp_g(m: &mut DMatrix<f64>, a: Node, b: Node, g: f64) {
    if let Some(a) = a {
        m[(a, a)] += g;
    }
    if let Some(b) = b {
        m[(b, b)] += g;
    }
    if let (Some(a), Some(b)) = (a, b) {
        m[(a, b)] -= g;
        m[(b, a)] -= g;
    }
}

/// Current `j` injected into node `a` and drawn from node `b`.
fn inject(rhs: &mut DVector<f64>, a: Node, b: Node, j: f64) {
    if let Some(a) = a {
        rhs[a] += j;
    }
    if let Some(b) = b {
        rhs[b] -= j;
    }
}

/// Energy bookkeeping with step-midpoint averages.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EnergyAudit {
    /// Energy delivered by voltage sources, J.
    pub source: f64,
    /// Energy dissipated in resistors, switches and diodes, J.
    pub dissipated: f64,
    /// Energy delivered into machine terminals, J.
    pub machine: f64,
    /// Change of stored field energy, J.
    pub stored: f64,
    /// Largest per-step residual on trapezoidal steps relative to the
    /// step's source power (steps with negligible source power skipped).
    pub max_step_residual: f64,
    pub steps: u64,
    /// Steps taken with backward Euler (start and configuration changes).
    pub be_steps: u64,
}

impl EnergyAudit {
    /// Integrated residual relative to the source energy.
    pub fn relative_residual(&self) -> f64 {
        (self.source - self.dissipated - self.machine - self.stored).abs() / self.source.abs().max(1e-30)
    }
}

type Factor = LU<f64, Dyn, Dyn>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Method {
    Trapezoidal,
    BackwardEuler,
}

/// Fixed-step switched-network simulator.
pub struct Simulator {
    c: Compiled,
    dt: f64,
    t0: f64,
    step: u64,
    x: DVector<f64>,
    cap_v: Vec<f64>,
    cap_i: Vec<f64>,
    ind_i: Vec<f64>,
    ind_v: Vec<f64>,
    w_i: Vec<[f64; 3]>,
    w_v: Vec<[f64; 3]>,
    machines: Vec<IMState>,
    mach_i: Vec<[f64; 3]>,
    mach_torque: Vec<f64>,
    config: u64,
    force_be: bool,
    last_gates: Gates,
    cache: HashMap<(u64, Method), Factor>,
    audit: EnergyAudit,
    rhs: DVector<f64>,
}

/// Two-terminal branch of the compiled circuit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Source(usize),
    Resistor(usize),
    Switch(usize),
    Diode(usize),
    Capacitor(usize),
    Inductor(usize),
}

/// Resolved probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Probe {
    Node(Node),
    Diff(Node, Node),
    Current(Branch),
    /// Absorbed power; delivered power for sources.
    Power(Branch),
    Winding(usize, usize),
    WindingVoltage(usize, usize),
    Magnetizing(usize),
    /// Flux linkage `L i` of an inductor.
    InductorFlux(usize),
    /// Flux linkage of one winding, row `k` of `L i`.
    WindingFlux(usize, usize),
    MachineCurrent(usize, usize),
    MachineTorque(usize),
    /// Electrical power into the machine terminals.
    MachinePower(usize),
    MachineRpm(usize),
}

impl Simulator {
    pub fn new(c: &Circuit, dt: f64) -> Result<Self, EngineError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(EngineError::Config(format!("step {dt} must be positive")));
        }
        let c = compile(c)?;
        let mut sim = Self {
            dt,
            t0: 0.0,
            step: 0,
            x: DVector::zeros(c.size),
            cap_v: c.caps.iter().map(|x| x.v0).collect(),
            cap_i: vec![0.0; c.caps.len()],
            ind_i: c.inds.iter().map(|x| x.i0).collect(),
            ind_v: vec![0.0; c.inds.len()],
            w_i: c.windings.iter().map(|w| w.i0).collect(),
            w_v: vec![[0.0; 3]; c.windings.len()],
            machines: c.machines.iter().map(|m| m.initial).collect(),
            mach_i: vec![[0.0; 3]; c.machines.len()],
            mach_torque: vec![0.0; c.machines.len()],
            config: 0,
            force_be: true,
            last_gates: Gates::default(),
            cache: HashMap::new(),
            audit: EnergyAudit::default(),
            rhs: DVector::zeros(c.size),
            c,
        };
        sim.refresh_machine_currents();
        Ok(sim)
    }

    pub fn from_state(c: &Circuit, dt: f64, state: &SimState) -> Result<Self, EngineError> {
        let mut sim = Self::new(c, dt)?;
        sim.set_state(state)?;
        Ok(sim)
    }

    /// Replace the physical state; the next step is backward Euler.
    pub fn set_state(&mut self, s: &SimState) -> Result<(), EngineError> {
        let missing = |what: &str, name: &str| EngineError::Config(format!("state lacks {what} `{name}`"));
        for (k, cap) in self.c.caps.iter().enumerate() {
            self.cap_v[k] = *s.capacitors.get(&cap.name).ok_or_else(|| missing("capacitor", &cap.name))?;
        }
        for (k, ind) in self.c.inds.iter().enumerate() {
            self.ind_i[k] = *s.inductors.get(&ind.name).ok_or_else(|| missing("inductor", &ind.name))?;
        }
        for (k, w) in self.c.windings.iter().enumerate() {
            self.w_i[k] = *s.windings.get(&w.name).ok_or_else(|| missing("winding", &w.name))?;
        }
        for (k, m) in self.c.machines.iter().enumerate() {
            self.machines[k] = *s.machines.get(&m.name).ok_or_else(|| missing("machine", &m.name))?;
        }
        self.t0 = s.time;
        self.step = 0;
        self.force_be = true;
        self.refresh_machine_currents();
        Ok(())
    }

    pub fn state(&self) -> SimState {
        SimState {
            time: self.time(),
            capacitors: self.c.caps.iter().map(|c| c.name.clone()).zip(self.cap_v.iter().copied()).collect(),
            inductors: self.c.inds.iter().map(|c| c.name.clone()).zip(self.ind_i.iter().copied()).collect(),
            windings: self.c.windings.iter().map(|c| c.name.clone()).zip(self.w_i.iter().copied()).collect(),
            machines: self.c.machines.iter().map(|c| c.name.clone()).zip(self.machines.iter().copied()).collect(),
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self) -> f64 {
        self.t0 + self.step as f64 * self.dt
    }

    pub fn audit(&self) -> EnergyAudit {
        self.audit
    }

    pub fn reset_audit(&mut self) {
        self.audit = EnergyAudit::default();
    }

    pub fn gates(&self) -> Gates {
        self.last_gates
    }

    /// Distinct factorizations computed so far.
    pub fn factorizations(&self) -> usize {
        self.cache.len()
    }

    pub fn configuration(&self) -> SwitchConfiguration {
        let ns = self.c.switches.len();
        SwitchConfiguration {
            switches: self
                .c
                .switches
                .iter()
                .enumerate()
                .map(|(k, s)| (s.name.clone(), self.config & (1 << k) != 0))
                .collect(),
            diodes: self
                .c
                .diodes
                .iter()
                .enumerate()
                .map(|(k, d)| (d.name.clone(), self.config & (1 << (ns + k)) != 0))
                .collect(),
        }
    }

    fn unknown_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.c.node_names.iter().map(|n| format!("v({n})")).collect();
        names.extend(self.c.vsrcs.iter().map(|v| format!("i({})", v.name)));
        names
    }

    /// Every probe name this circuit offers.
    pub fn signal_names(&self) -> Vec<String> {
        let c = &self.c;
        let mut out: Vec<String> = c.node_names.iter().map(|n| format!("v({n})")).collect();
        let mut two = |name: &str| {
            out.push(format!("i({name})"));
        };
        for v in &c.vsrcs {
            two(&v.name);
        }
        for r in &c.res {
            two(&r.name);
        }
        for s in &c.switches {
            two(&s.name);
        }
        for d in &c.diodes {
            two(&d.name);
        }
        for x in &c.caps {
            two(&x.name);
        }
        for x in &c.inds {
            two(&x.name);
        }
        for x in &c.inds {
            out.push(format!("lambda({})", x.name));
        }
        for w in &c.windings {
            for k in 1..=3 {
                out.push(format!("i({}.{k})", w.name));
                out.push(format!("lambda({}.{k})", w.name));
            }
            out.push(format!("i({}.m)", w.name));
        }
        for m in &c.machines {
            for p in ["a", "b", "c"] {
                out.push(format!("i({}.{p})", m.name));
            }
            out.push(format!("p({})", m.name));
            out.push(format!("{}.torque", m.name));
            out.push(format!("{}.rpm", m.name));
        }
        out
    }

    /// Resolve a probe name: `v(node)`, `v(element)`, `i(element)`,
    /// `p(element)`, `p(machine)`, `i(w.k)`, `v(w.k)`, `i(w.m)`, `m.torque`, `m.rpm`,
    /// and flux linkages `lambda(inductor)`, `lambda(w.k)`.
    pub fn probe(&self, name: &str) -> Result<Probe, EngineError> {
        let c = &self.c;
        let lower = name.to_ascii_lowercase();
        let unknown = || EngineError::UnknownProbe(name.to_string());
        if let Some(m) = lower.strip_suffix(".torque") {
            return c.machines.iter().position(|x| x.name == m).map(Probe::MachineTorque).ok_or_else(unknown);
        }
        if let Some(m) = lower.strip_suffix(".rpm") {
            return c.machines.iter().position(|x| x.name == m).map(Probe::MachineRpm).ok_or_else(unknown);
        }
        let (func, arg) = lower
            .strip_suffix(')')
            .and_then(|s| s.split_once('('))
            .ok_or_else(unknown)?;
        let find = |list: &mut dyn Iterator<Item = &String>| list.enumerate().find(|(_, n)| *n == arg).map(|(i, _)| i);
        if func == "lambda" {
            if let Some(li) = c.inds.iter().position(|x| x.name == arg) {
                return Ok(Probe::InductorFlux(li));
            }
        }
        if func == "p" {
            if let Some(mi) = c.machines.iter().position(|x| x.name == arg) {
                return Ok(Probe::MachinePower(mi));
            }
        }
        if func == "v" {
            if arg == crate::netlist::GROUND {
                return Ok(Probe::Node(None));
            }
            if let Some(&i) = c.node_index.get(arg) {
                return Ok(Probe::Node(Some(i)));
            }
        }
        if let Some((w, k)) = arg.rsplit_once('.') {
            if let Some(wi) = c.windings.iter().position(|x| x.name == w) {
                return match (func, k) {
                    ("i", "m") => Ok(Probe::Magnetizing(wi)),
                    ("i", "1" | "2" | "3") => Ok(Probe::Winding(wi, k.parse::<usize>().unwrap() - 1)),
                    ("v", "1" | "2" | "3") => Ok(Probe::WindingVoltage(wi, k.parse::<usize>().unwrap() - 1)),
                    ("lambda", "1" | "2" | "3") => Ok(Probe::WindingFlux(wi, k.parse::<usize>().unwrap() - 1)),
                    _ => Err(unknown()),
                };
            }
            if let Some(mi) = c.machines.iter().position(|x| x.name == w) {
                let phase = ["a", "b", "c"].iter().position(|p| *p == k).ok_or_else(unknown)?;
                return match func {
                    "i" => Ok(Probe::MachineCurrent(mi, phase)),
                    "v" => {
                        let n = c.machines[mi].nodes[phase];
                        Ok(Probe::Node(n))
                    }
                    _ => Err(unknown()),
                };
            }
        }
        let branch = if let Some(i) = find(&mut c.vsrcs.iter().map(|x| &x.name)) {
            Branch::Source(i)
        } else if let Some(i) = find(&mut c.res.iter().map(|x| &x.name)) {
            Branch::Resistor(i)
        } else if let Some(i) = find(&mut c.switches.iter().map(|x| &x.name)) {
            Branch::Switch(i)
        } else if let Some(i) = find(&mut c.diodes.iter().map(|x| &x.name)) {
            Branch::Diode(i)
        } else if let Some(i) = find(&mut c.caps.iter().map(|x| &x.name)) {
            Branch::Capacitor(i)
        } else if let Some(i) = find(&mut c.inds.iter().map(|x| &x.name)) {
            Branch::Inductor(i)
        } else {
            return Err(unknown());
        };
        match func {
            "i" => Ok(Probe::Current(branch)),
            "v" => {
                let (a, b) = self.terminals(branch);
                Ok(Probe::Diff(a, b))
            }
            "p" => Ok(Probe::Power(branch)),
            _ => Err(unknown()),
        }
    }

    /// Branch current, positive from the first to the second terminal
    /// (sources: current delivered out of the positive terminal).
    fn current(&self, b: Branch) -> f64 {
        let c = &self.c;
        let x = &self.x;
        let ns = c.switches.len();
        match b {
            Branch::Source(i) => -x[c.vsrcs[i].row],
            Branch::Resistor(i) => {
                let r = &c.res[i];
                r.g * (volt(x, r.a) - volt(x, r.b))
            }
            Branch::Switch(i) => {
                let s = &c.switches[i];
                let r = if self.config & (1 << i) != 0 { s.ron } else { s.roff };
                (volt(x, s.a) - volt(x, s.b)) / r
            }
            Branch::Diode(i) => {
                let d = &c.diodes[i];
                let v = volt(x, d.a) - volt(x, d.b);
                if self.config & (1 << (ns + i)) != 0 {
                    (v - d.vf) / d.ron
                } else {
                    v / d.roff
                }
            }
            Branch::Capacitor(i) => self.cap_i[i],
            Branch::Inductor(i) => self.ind_i[i],
        }
    }

    fn terminals(&self, b: Branch) -> (Node, Node) {
        let c = &self.c;
        match b {
            Branch::Source(i) => (c.vsrcs[i].a, c.vsrcs[i].b),
            Branch::Resistor(i) => (c.res[i].a, c.res[i].b),
            Branch::Switch(i) => (c.switches[i].a, c.switches[i].b),
            Branch::Diode(i) => (c.diodes[i].a, c.diodes[i].b),
            Branch::Capacitor(i) => (c.caps[i].a, c.caps[i].b),
            Branch::Inductor(i) => (c.inds[i].a, c.inds[i].b),
        }
    }

    /// Present value of a resolved probe.
    pub fn value(&self, p: Probe) -> f64 {
        let x = &self.x;
        match p {
            Probe::Node(n) => volt(x, n),
            Probe::Diff(a, b) => volt(x, a) - volt(x, b),
            Probe::Current(b) => self.current(b),
            Probe::Power(Branch::Source(i)) => self.c.vsrcs[i].v * self.current(Branch::Source(i)),
            Probe::Power(b) => {
                let (n1, n2) = self.terminals(b);
                (volt(x, n1) - volt(x, n2)) * self.current(b)
            }
            Probe::Winding(w, k) => self.w_i[w][k],
            Probe::WindingVoltage(w, k) => {
                let (a, b) = self.c.windings[w].ends[k];
                volt(x, a) - volt(x, b)
            }
            Probe::Magnetizing(w) => self.c.windings[w].magnetizing(&self.w_i[w]),
            Probe::InductorFlux(l) => self.c.inds[l].l * self.current(Branch::Inductor(l)),
            Probe::WindingFlux(w, k) => {
                let i = &self.w_i[w];
                (0..3).map(|j| self.c.windings[w].l[(k, j)] * i[j]).sum()
            }
            Probe::MachineCurrent(m, k) => self.mach_i[m][k],
            Probe::MachineTorque(m) => self.mach_torque[m],
            Probe::MachinePower(m) => (0..3).map(|k| volt(x, self.c.machines[m].nodes[k]) * self.mach_i[m][k]).sum(),
            Probe::MachineRpm(m) => self.machines[m].rpm(&self.c.machines[m].params),
        }
    }

    fn refresh_machine_currents(&mut self) {
        for (k, m) in self.c.machines.iter().enumerate() {
            let (is, _) = self.machines[k].currents(&m.params);
            self.mach_i[k] = crate::loads::ab_to_abc(is);
            self.mach_torque[k] = self.machines[k].torque(&m.params);
        }
    }

    fn machine_currents(&self) -> Vec<[f64; 3]> {
        self.mach_i.clone()
    }

    fn matrix(&self, config: u64, be: bool) -> DMatrix<f64> {
        let c = &self.c;
        let h = self.dt;
        let mut m = DMatrix::zeros(c.size, c.size);
        for r in &c.res {
            stamp_g(&mut m, r.a, r.b, r.g);
        }
        for (k, s) in c.switches.iter().enumerate() {
            let r = if config & (1 << k) != 0 { s.ron } else { s.roff };
            stamp_g(&mut m, s.a, s.b, 1.0 / r);
        }
        let ns = c.switches.len();
        for (k, d) in c.diodes.iter().enumerate() {
            let r = if config & (1 << (ns + k)) != 0 { d.ron } else { d.roff };
            stamp_g(&mut m, d.a, d.b, 1.0 / r);
        }
        for cap in &c.caps {
            let g = if be { cap.c / h } else { 2.0 * cap.c / h };
            stamp_g(&mut m, cap.a, cap.b, g);
        }
        for ind in &c.inds {
            let g = if be { h / ind.l } else { h / (2.0 * ind.l) };
            stamp_g(&mut m, ind.a, ind.b, g);
        }
        for w in &c.windings {
            let gamma = w.linv * if be { h } else { h / 2.0 };
            for j in 0..3 {
                for k in 0..3 {
                    let g = gamma[(j, k)];
                    let (pj, qj) = w.ends[j];
                    let (pk, qk) = w.ends[k];
                    for (row, sr) in [(pj, 1.0), (qj, -1.0)] {
                        for (col, sc) in [(pk, 1.0), (qk, -1.0)] {
                            if let (Some(r), Some(cl)) = (row, col) {
                                m[(r, cl)] += sr * sc * g;
                            }
                        }
                    }
                }
            }
        }
        for v in &c.vsrcs {
            if let Some(a) = v.a {
                m[(a, v.row)] += 1.0;
                m[(v.row, a)] += 1.0;
            }
            if let Some(b) = v.b {
                m[(b, v.row)] -= 1.0;
                m[(v.row, b)] -= 1.0;
            }
        }
        m
    }

    fn rhs(&self, config: u64, be: bool, mach_i: &[[f64; 3]]) -> DVector<f64> {
        let mut b = DVector::zeros(self.c.size);
        self.fill_rhs(&mut b, config, be, mach_i);
        b
    }

    fn fill_rhs(&self, b: &mut DVector<f64>, config: u64, be: bool, mach_i: &[[f64; 3]]) {
        let c = &self.c;
        let h = self.dt;
        b.fill(0.0);
        let ns = c.switches.len();
        for (k, d) in c.diodes.iter().enumerate() {
            if d.vf != 0.0 && config & (1 << (ns + k)) != 0 {
                inject(b, d.a, d.b, d.vf / d.ron);
            }
        }
        for (k, cap) in c.caps.iter().enumerate() {
            let j = if be {
                cap.c / h * self.cap_v[k]
            } else {
                2.0 * cap.c / h * self.cap_v[k] + self.cap_i[k]
            };
            inject(b, cap.a, cap.b, j);
        }
        for (k, ind) in c.inds.iter().enumerate() {
            let j = if be {
                self.ind_i[k]
            } else {
                self.ind_i[k] + h / (2.0 * ind.l) * self.ind_v[k]
            };
            inject(b, ind.a, ind.b, -j);
        }
        for (k, w) in c.windings.iter().enumerate() {
            let mut j = self.w_i[k];
            if !be {
                let gamma = w.linv * (h / 2.0);
                for (r, jr) in j.iter_mut().enumerate() {
                    for s in 0..3 {
                        *jr += gamma[(r, s)] * self.w_v[k][s];
                    }
                }
            }
            for (r, (p, q)) in w.ends.iter().enumerate() {
                inject(b, *p, *q, -j[r]);
            }
        }
        for v in &c.vsrcs {
            b[v.row] = v.v;
        }
        for (k, m) in c.machines.iter().enumerate() {
            for p in 0..3 {
                inject(b, m.nodes[p], None, -mach_i[k][p]);
            }
        }
    }

    fn factor(&mut self, config: u64, method: Method) -> Result<(), EngineError> {
        if self.cache.contains_key(&(config, method)) {
            return Ok(());
        }
        let m = self.matrix(config, method == Method::BackwardEuler);
        let lu = m.clone().lu();
        let names = self.unknown_names();
        let singular = !lu.is_invertible() || {
            let u = lu.u();
            let scale = m.amax().max(1e-300);
            (0..u.nrows()).any(|i| u[(i, i)].abs() < 1e-14 * scale)
        };
        if singular {
            return Err(EngineError::Singular {
                node: weakest_unknown(&m, &names),
                time: self.time(),
            });
        }
        self.cache.insert((config, method), lu);
        Ok(())
    }

    fn switch_bits(&self, gates: Gates) -> u64 {
        let mut bits = 0;
        for (k, s) in self.c.switches.iter().enumerate() {
            if gates.is_on(s.gate) {
                bits |= 1 << k;
            }
        }
        bits
    }

    /// Most-violated diode for solution `x` under `config`, if any.
    fn worst_diode(&self, x: &DVector<f64>, config: u64) -> Option<usize> {
        let ns = self.c.switches.len();
        let mut worst: Option<(usize, f64)> = None;
        for (k, d) in self.c.diodes.iter().enumerate() {
            let v = volt(x, d.a) - volt(x, d.b);
            let score = if config & (1 << (ns + k)) != 0 {
                let i = (v - d.vf) / d.ron;
                if i < -super::COMPLEMENTARITY_TOL {
                    -i * d.ron
                } else {
                    continue;
                }
            } else if v - d.vf > super::COMPLEMENTARITY_TOL {
                v - d.vf
            } else {
                continue;
            };
            // ties go to the earlier (alphabetically smaller) diode
            if worst.map_or(true, |(_, s)| score > s) {
                worst = Some((k, score));
            }
        }
        worst.map(|(k, _)| k)
    }

    fn solve_candidate(
        &mut self,
        rhs: &mut DVector<f64>,
        config: u64,
        method: Method,
        mach_i: &[[f64; 3]],
    ) -> Result<DVector<f64>, EngineError> {
        self.factor(config, method)?;
        self.fill_rhs(rhs, config, method == Method::BackwardEuler, mach_i);
        let mut x = rhs.clone();
        self.cache[&(config, method)].solve_mut(&mut x);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(EngineError::Diverged { time: self.time() });
        }
        Ok(x)
    }

    /// Advance one step with the gates evaluated at the step midpoint.
    pub fn advance(&mut self, src: &dyn GateSource) -> Result<Gates, EngineError> {
        let t_mid = self.t0 + (self.step as f64 + 0.5) * self.dt;
        let gates = src.gates_at(t_mid);
        self.step(gates)?;
        Ok(gates)
    }

    /// Advance one step under fixed gate levels.
    pub fn step(&mut self, gates: Gates) -> Result<(), EngineError> {
        let c_sw = self.c.switches.len();
        let nd = self.c.diodes.len();
        let diode_mask = ((1u64 << nd) - 1) << c_sw;
        let mut config = self.switch_bits(gates) | (self.config & diode_mask);

        // machines see the previous terminal voltages (weak coupling)
        let mut next_machines = self.machines.clone();
        let mut next_mach_i = self.mach_i.clone();
        let mut next_torque = self.mach_torque.clone();
        for (k, m) in self.c.machines.iter().enumerate() {
            let v: Vec<f64> = m.nodes.iter().map(|n| volt(&self.x, *n)).collect();
            let mean = (v[0] + v[1] + v[2]) / 3.0;
            let out = im_step_shaft(&m.params, &self.machines[k], [v[0] - mean, v[1] - mean, v[2] - mean], m.shaft, self.dt);
            next_machines[k] = out.state;
            next_mach_i[k] = out.i_abc;
            next_torque[k] = out.torque;
        }

        let max_iter = 2 * nd + 2;
        let mut rhs = std::mem::replace(&mut self.rhs, DVector::zeros(0));
        let mut accepted = None;
        let mut flipped = false;
        for _ in 0..=max_iter {
            // once a diode flips the step is an event step: backward Euler
            // for every candidate keeps the comparison consistent
            let method = if self.force_be || flipped || config != self.config {
                Method::BackwardEuler
            } else {
                Method::Trapezoidal
            };
            let x = self.solve_candidate(&mut rhs, config, method, &next_mach_i)?;
            match self.worst_diode(&x, config) {
                None => {
                    accepted = Some((x, config, method));
                    break;
                }
                Some(k) => {
                    config ^= 1 << (c_sw + k);
                    flipped = true;
                }
            }
        }
        if accepted.is_none() && nd <= 12 {
            // single flips cycled; search all diode states for a consistent one
            let base = config & !diode_mask;
            for states in 0..(1u64 << nd) {
                let cand = base | (states << c_sw);
                let x = self.solve_candidate(&mut rhs, cand, Method::BackwardEuler, &next_mach_i)?;
                if self.worst_diode(&x, cand).is_none() {
                    accepted = Some((x, cand, Method::BackwardEuler));
                    break;
                }
            }
        }
        self.rhs = rhs;
        let Some((x, config, method)) = accepted else {
            return Err(EngineError::DiodeFixpoint {
                time: self.time(),
                iterations: max_iter,
            });
        };
        self.commit(x, config, method, gates, next_machines, next_mach_i, next_torque);
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn commit(
        &mut self,
        x: DVector<f64>,
        config: u64,
        method: Method,
        gates: Gates,
        machines: Vec<IMState>,
        mach_i: Vec<[f64; 3]>,
        torque: Vec<f64>,
    ) {
        let h = self.dt;
        let be = method == Method::BackwardEuler;
        let c = &self.c;
        let mut stored = 0.0;
        let mut dissipated = 0.0;
        let mut machine = 0.0;
        let mut source = 0.0;
        // backward-Euler steps are rectangle-rule: end-of-step values only
        let w_old = if be { 0.0 } else { 0.5 };
        let avg = |n: Node| w_old * volt(&self.x, n) + (1.0 - w_old) * volt(&x, n);
        let new = |n: Node| volt(&x, n);

        for (k, cap) in c.caps.iter().enumerate() {
            let v1 = new(cap.a) - new(cap.b);
            let i1 = if be {
                cap.c / h * (v1 - self.cap_v[k])
            } else {
                2.0 * cap.c / h * (v1 - self.cap_v[k]) - self.cap_i[k]
            };
            stored += 0.5 * cap.c * (v1 * v1 - self.cap_v[k] * self.cap_v[k]);
            self.cap_v[k] = v1;
            self.cap_i[k] = i1;
        }
        for (k, ind) in c.inds.iter().enumerate() {
            let v1 = new(ind.a) - new(ind.b);
            let i1 = if be {
                self.ind_i[k] + h / ind.l * v1
            } else {
                self.ind_i[k] + h / (2.0 * ind.l) * (v1 + self.ind_v[k])
            };
            stored += 0.5 * ind.l * (i1 * i1 - self.ind_i[k] * self.ind_i[k]);
            self.ind_i[k] = i1;
            self.ind_v[k] = v1;
        }
        for (k, w) in c.windings.iter().enumerate() {
            let v1: [f64; 3] = std::array::from_fn(|r| new(w.ends[r].0) - new(w.ends[r].1));
            let i0 = self.w_i[k];
            let mut i1 = i0;
            for r in 0..3 {
                for s in 0..3 {
                    i1[r] += if be {
                        h * w.linv[(r, s)] * v1[s]
                    } else {
                        0.5 * h * w.linv[(r, s)] * (v1[s] + self.w_v[k][s])
                    };
                }
            }
            let energy = |i: &[f64; 3]| {
                let mut e = 0.0;
                for r in 0..3 {
                    for s in 0..3 {
                        e += 0.5 * i[r] * w.l[(r, s)] * i[s];
                    }
                }
                e
            };
            stored += energy(&i1) - energy(&i0);
            self.w_i[k] = i1;
            self.w_v[k] = v1;
        }
        for r in &c.res {
            let v = avg(r.a) - avg(r.b);
            dissipated += r.g * v * v;
        }
        for (k, s) in c.switches.iter().enumerate() {
            let v = avg(s.a) - avg(s.b);
            let r = if config & (1 << k) != 0 { s.ron } else { s.roff };
            dissipated += v * v / r;
        }
        let ns = c.switches.len();
        for (k, d) in c.diodes.iter().enumerate() {
            let v = avg(d.a) - avg(d.b);
            dissipated += if config & (1 << (ns + k)) != 0 {
                v * (v - d.vf) / d.ron
            } else {
                v * v / d.roff
            };
        }
        for v in &c.vsrcs {
            source -= v.v * (w_old * self.x[v.row] + (1.0 - w_old) * x[v.row]);
        }
        for (k, m) in c.machines.iter().enumerate() {
            for p in 0..3 {
                machine += avg(m.nodes[p]) * (w_old * self.mach_i[k][p] + (1.0 - w_old) * mach_i[k][p]);
            }
        }

        let a = &mut self.audit;
        a.source += source * h;
        a.dissipated += dissipated * h;
        a.machine += machine * h;
        a.stored += stored;
        a.steps += 1;
        if be {
            a.be_steps += 1;
        } else if source.abs() > 1e-9 {
            let resid = (source - dissipated - machine - stored / h).abs() / source.abs();
            a.max_step_residual = a.max_step_residual.max(resid);
        }

        self.x = x;
        self.config = config;
        self.force_be = false;
        self.last_gates = gates;
        self.machines = machines;
        self.mach_i = mach_i;
        self.mach_torque = torque;
        self.step += 1;
    }
}

/// Run parameters for [`simulate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Signals to record; empty records every signal.
    #[serde(default)]
    pub probes: Vec<String>,
    /// Samples before this time are not recorded.
    #[serde(default)]
    pub record_start: f64,
    /// Record every n-th step.
    #[serde(default = "one")]
    pub decimate: usize,
}

fn one() -> usize {
    1
}

impl SimConfig {
    pub fn new(dt: f64, t_end: f64) -> Self {
        Self {
            dt,
            t_end,
            probes: Vec::new(),
            record_start: 0.0,
            decimate: 1,
        }
    }

    pub fn probes<S: AsRef<str>>(mut self, probes: &[S]) -> Self {
        self.probes = probes.iter().map(|s| s.as_ref().to_string()).collect();
        self
    }

    pub fn record_from(mut self, t: f64, decimate: usize) -> Self {
        self.record_start = t;
        self.decimate = decimate.max(1);
        self
    }

    pub fn steps(&self) -> u64 {
        (self.t_end / self.dt).round() as u64
    }
}

/// Number of steps per period, if `dt` divides it.
pub fn steps_per_period(period: f64, dt: f64) -> Result<u64, EngineError> {
    let n = period / dt;
    if n.round() < 1.0 || (n - n.round()).abs() > 1e-6 {
        return Err(EngineError::Config(format!(
            "step {dt} s does not divide the switching period {period} s"
        )));
    }
    Ok(n.round() as u64)
}

/// Simulate from the circuit's initial conditions.
pub fn simulate(c: &Circuit, src: &dyn GateSource, cfg: &SimConfig) -> Result<Trace, EngineError> {
    simulate_observed(c, src, cfg, |_, _| {})
}

/// [`simulate`] with a callback after every accepted step.
pub fn simulate_observed<F>(c: &Circuit, src: &dyn GateSource, cfg: &SimConfig, observer: F) -> Result<Trace, EngineError>
where
    F: FnMut(&Simulator, Gates),
{
    let sim = Simulator::new(c, cfg.dt)?;
    run(sim, src, cfg, observer).map(|(trace, _)| trace)
}

/// Drive an existing simulator for `cfg.t_end` seconds, recording a trace.
pub fn run<F>(mut sim: Simulator, src: &dyn GateSource, cfg: &SimConfig, mut observer: F) -> Result<(Trace, Simulator), EngineError>
where
    F: FnMut(&Simulator, Gates),
{
    steps_per_period(src.switching_period(), cfg.dt)?;
    let names = if cfg.probes.is_empty() {
        sim.signal_names()
    } else {
        cfg.probes.clone()
    };
    let probes = names.iter().map(|n| sim.probe(n)).collect::<Result<Vec<_>, _>>()?;
    let steps = cfg.steps();
    let first = (cfg.record_start / cfg.dt).round() as u64;
    let decimate = cfg.decimate.max(1) as u64;
    let mut trace = Trace::new(
        cfg.dt * decimate as f64,
        sim.time() + (first + 1) as f64 * cfg.dt,
        names,
    );
    let mut row = vec![0.0; probes.len()];
    for k in 0..steps {
        let gates = sim.advance(src)?;
        observer(&sim, gates);
        if k >= first && (k - first) % decimate == 0 {
            for (slot, p) in row.iter_mut().zip(&probes) {
                *slot = sim.value(*p);
            }
            trace.push(&row, gates.st());
        }
    }
    Ok((trace, sim))
}
