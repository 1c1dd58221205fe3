//! Circuit to solver-ready element tables.

use std::collections::HashMap;

use nalgebra::Matrix3;

use super::{EngineError, LEAKAGE_FLOOR, RON, ROFF};
use crate::loads::{IMParams, IMState, Shaft};
use crate::modulation::Gate;
use crate::netlist::{Circuit, Element, ElementKind, GROUND};

/// Matrix row of a node; `None` is ground.
pub(crate) type Node = Option<usize>;

#[derive(Debug, Clone)]
pub(crate) struct Res {
    pub name: String,
    pub a: Node,
    pub b: Node,
    pub g: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Cap {
    pub name: String,
    pub a: Node,
    pub b: Node,
    pub c: f64,
    pub v0: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Ind {
    pub name: String,
    pub a: Node,
    pub b: Node,
    pub l: f64,
    pub i0: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Winding3 {
    pub name: String,
    pub ends: [(Node, Node); 3],
    pub l: Matrix3<f64>,
    pub linv: Matrix3<f64>,
    pub turns: [f64; 3],
    pub i0: [f64; 3],
}

impl Winding3 {
    /// Magnetizing current referred to winding 1.
    pub fn magnetizing(&self, i: &[f64; 3]) -> f64 {
        (0..3).map(|k| self.turns[k] / self.turns[0] * i[k]).sum()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct VSrc {
    pub name: String,
    pub a: Node,
    pub b: Node,
    pub v: f64,
    pub row: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Switch {
    pub name: String,
    pub a: Node,
    pub b: Node,
    pub ron: f64,
    pub roff: f64,
    pub gate: Gate,
}

#[derive(Debug, Clone)]
pub(crate) struct Diode {
    pub name: String,
    pub a: Node,
    pub b: Node,
    pub ron: f64,
    pub roff: f64,
    pub vf: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Machine {
    pub name: String,
    pub nodes: [Node; 3],
    pub params: IMParams,
    pub shaft: Shaft,
    pub initial: IMState,
}

#[derive(Debug, Clone)]
pub(crate) struct Compiled {
    pub node_names: Vec<String>,
    pub node_index: HashMap<String, usize>,
    pub res: Vec<Res>,
    pub caps: Vec<Cap>,
    pub inds: Vec<Ind>,
    pub windings: Vec<Winding3>,
    pub vsrcs: Vec<VSrc>,
    pub switches: Vec<Switch>,
    /// Sorted by name so that index order breaks flip ties.
    pub diodes: Vec<Diode>,
    pub machines: Vec<Machine>,
    pub size: usize,
}

/// Machine parameters, shaft mode and initial speed of an `im` LOAD3.
pub fn machine_of(el: &Element) -> (IMParams, Shaft, f64) {
    let d = IMParams::default();
    let params = IMParams {
        rs: el.num_or("rs", d.rs),
        rr: el.num_or("rr", d.rr),
        lls: el.num_or("lls", d.lls),
        llr: el.num_or("llr", d.llr),
        lm: el.num_or("lm", d.lm),
        j: el.num_or("j", d.j),
        pole_pairs: el.num("pp").map_or(d.pole_pairs, |p| p as u32),
        ..d
    };
    let shaft = match el.num("rpm") {
        Some(rpm) => Shaft::Driven { rpm },
        None => Shaft::Loaded {
            load_torque: el.num_or("tl", 0.0),
        },
    };
    let w0 = match shaft {
        Shaft::Driven { rpm } => el.num_or("w0", rpm),
        Shaft::Loaded { .. } => el.num_or("w0", 0.0),
    };
    (params, shaft, w0)
}

struct Builder {
    out: Compiled,
}

impl Builder {
    fn node(&mut self, name: &str) -> Node {
        if name == GROUND {
            return None;
        }
        if let Some(&i) = self.out.node_index.get(name) {
            return Some(i);
        }
        let i = self.out.node_names.len();
        self.out.node_names.push(name.to_string());
        self.out.node_index.insert(name.to_string(), i);
        Some(i)
    }

    fn pair(&mut self, el: &Element) -> (Node, Node) {
        (self.node(&el.nodes[0]), self.node(&el.nodes[1]))
    }

    fn add(&mut self, el: &Element) -> Result<(), EngineError> {
        match el.kind {
            ElementKind::V => {
                let (a, b) = self.pair(el);
                self.out.vsrcs.push(VSrc {
                    name: el.name.clone(),
                    a,
                    b,
                    v: el.num_or("dc", 0.0),
                    row: 0,
                });
            }
            ElementKind::R => {
                let (a, b) = self.pair(el);
                self.out.res.push(Res {
                    name: el.name.clone(),
                    a,
                    b,
                    g: 1.0 / el.num_or("r", 1.0),
                });
            }
            ElementKind::C => {
                let (a, b) = self.pair(el);
                self.out.caps.push(Cap {
                    name: el.name.clone(),
                    a,
                    b,
                    c: el.num_or("c", 1.0),
                    v0: el.num_or("v0", 0.0),
                });
            }
            ElementKind::L => {
                let (a, b) = self.pair(el);
                self.out.inds.push(Ind {
                    name: el.name.clone(),
                    a,
                    b,
                    l: el.num_or("l", 1.0),
                    i0: el.num_or("i0", 0.0),
                });
            }
            ElementKind::D => {
                let (a, b) = self.pair(el);
                self.out.diodes.push(Diode {
                    name: el.name.clone(),
                    a,
                    b,
                    ron: el.num_or("ron", RON),
                    roff: el.num_or("roff", ROFF),
                    vf: el.num_or("vf", 0.0),
                });
            }
            ElementKind::S => {
                let (a, b) = self.pair(el);
                let text = el.text("gate").unwrap_or("");
                let gate = Gate::from_name(text).ok_or_else(|| {
                    EngineError::Config(format!("switch {} uses unknown gate `{text}`", el.name))
                })?;
                self.out.switches.push(Switch {
                    name: el.name.clone(),
                    a,
                    b,
                    ron: el.num_or("ron", RON),
                    roff: el.num_or("roff", ROFF),
                    gate,
                });
            }
            ElementKind::W3 => {
                let turns = el
                    .turns()
                    .ok_or_else(|| EngineError::Config(format!("{}: bad turns", el.name)))?;
                let lm = el.num_or("lm", 1e-3);
                let mut l = Matrix3::zeros();
                for j in 0..3 {
                    for k in 0..3 {
                        l[(j, k)] = lm * turns[j] * turns[k] / (turns[0] * turns[0]);
                    }
                    let key = format!("ll{}", j + 1);
                    l[(j, j)] += el.num_or(&key, 0.0).max(LEAKAGE_FLOOR);
                }
                let linv = l
                    .try_inverse()
                    .ok_or_else(|| EngineError::Config(format!("{}: singular inductance matrix", el.name)))?;
                let mut ends = [(None, None); 3];
                for (k, end) in ends.iter_mut().enumerate() {
                    *end = (self.node(&el.nodes[2 * k]), self.node(&el.nodes[2 * k + 1]));
                }
                let i0 = [1, 2, 3].map(|k| el.num_or(&format!("i0{k}"), 0.0));
                self.out.windings.push(Winding3 {
                    name: el.name.clone(),
                    ends,
                    l,
                    linv,
                    turns,
                    i0,
                });
            }
            ElementKind::Load3 => self.add_load3(el)?,
        }
        Ok(())
    }

    fn add_load3(&mut self, el: &Element) -> Result<(), EngineError> {
        let phases: Vec<Node> = el.nodes.iter().map(|n| self.node(n)).collect();
        let star = format!("{}.n", el.name);
        let labels = ["a", "b", "c"];
        match el.text("type") {
            Some("r") => {
                let n = self.node(&star);
                for (k, label) in labels.iter().enumerate() {
                    self.out.res.push(Res {
                        name: format!("{}.{label}", el.name),
                        a: phases[k],
                        b: n,
                        g: 1.0 / el.num_or("r", 1.0),
                    });
                }
            }
            Some("rl") => {
                let n = self.node(&star);
                for (k, label) in labels.iter().enumerate() {
                    let mid = self.node(&format!("{}.{label}x", el.name));
                    self.out.res.push(Res {
                        name: format!("{}.r{label}", el.name),
                        a: phases[k],
                        b: mid,
                        g: 1.0 / el.num_or("r", 1.0),
                    });
                    self.out.inds.push(Ind {
                        name: format!("{}.{label}", el.name),
                        a: mid,
                        b: n,
                        l: el.num_or("l", 1.0),
                        i0: 0.0,
                    });
                }
            }
            Some("im") => {
                let (params, shaft, w0) = machine_of(el);
                if !params.is_valid() {
                    return Err(EngineError::Config(format!("{}: invalid machine parameters", el.name)));
                }
                self.out.machines.push(Machine {
                    name: el.name.clone(),
                    nodes: [phases[0], phases[1], phases[2]],
                    params,
                    shaft,
                    initial: IMState::at_rpm(&params, w0),
                });
            }
            other => {
                return Err(EngineError::Config(format!(
                    "{}: unsupported LOAD3 type {other:?}",
                    el.name
                )))
            }
        }
        Ok(())
    }
}

pub(crate) fn compile(c: &Circuit) -> Result<Compiled, EngineError> {
    let mut b = Builder {
        out: Compiled {
            node_names: Vec::new(),
            node_index: HashMap::new(),
            res: Vec::new(),
            caps: Vec::new(),
            inds: Vec::new(),
            windings: Vec::new(),
            vsrcs: Vec::new(),
            switches: Vec::new(),
            diodes: Vec::new(),
            machines: Vec::new(),
            size: 0,
        },
    };
    for el in c.elements() {
        b.add(el)?;
    }
    let mut out = b.out;
    out.diodes.sort_by(|x, y| x.name.cmp(&y.name));
    if out.switches.len() + out.diodes.len() > 64 {
        return Err(EngineError::Config("more than 64 switches and diodes".into()));
    }
    let n = out.node_names.len();
    for (k, v) in out.vsrcs.iter_mut().enumerate() {
        v.row = n + k;
    }
    out.size = n + out.vsrcs.len();
    Ok(out)
}
