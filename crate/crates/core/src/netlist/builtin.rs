//! Reference netlist of the proposed converter.
//!
//! Node names are fixed: `in` (source positive), `a`, `b`, `x`, `c`, and the
//! DC link `p` (negative rail is ground). Windings are dotted at their first
//! node:
//!
//! ```text
//! winding 1   in -> a      D1    a -> b       C2   x -> 0
//! winding 2   b  -> x      L_r   x -> p       C1   p -> c
//! winding 3   a  -> c
//! ```
//!
//! The book chapter on the topology derives the shoot-through and
//! non-shoot-through loop equations of this wiring.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::parse::terminal_groups;
use super::{Circuit, Diagnostic, Element, ElementKind, GROUND};
use crate::analytics::{AnalyticsError, ConverterParams};
use crate::loads::{IMParams, Shaft};

/// DC-link positive node of the builtin netlist.
pub const LINK: &str = "p";
/// Source positive node of the builtin netlist.
pub const SOURCE: &str = "in";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Dcdc,
    Inverter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Load3Spec {
    Resistive { r: f64 },
    SeriesRl { r: f64, l: f64 },
    Machine {
        params: IMParams,
        shaft: Shaft,
        #[serde(default)]
        initial_rpm: f64,
    },
}

/// Series losses applied on top of the ideal network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Parasitics {
    pub cap_esr: f64,
    pub ind_esr: f64,
    pub switch_ron: f64,
    pub diode_vf: f64,
}

impl Parasitics {
    pub fn ideal() -> Self {
        Self {
            cap_esr: 0.0,
            ind_esr: 0.0,
            switch_ron: crate::engine::RON,
            diode_vf: 0.0,
        }
    }

    /// Nominal parasitic set used for efficiency estimates.
    pub fn nominal() -> Self {
        Self {
            cap_esr: 20e-3,
            ind_esr: 50e-3,
            switch_ron: 10e-3,
            diode_vf: 0.45,
        }
    }
}

impl Default for Parasitics {
    fn default() -> Self {
        Self::ideal()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// Everything discharged; startup inrush is part of the run.
    #[default]
    Zero,
    /// Capacitors pre-charged to their analytic steady-state voltages.
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentValues {
    pub lm: f64,
    pub leakage: [f64; 3],
    pub lr: f64,
    pub c1: f64,
    pub c2: f64,
    /// Output capacitor (dcdc mode).
    pub co: f64,
    /// Output resistor (dcdc mode).
    pub r_load: f64,
    /// Three-phase load (inverter mode).
    pub load3: Load3Spec,
    #[serde(default)]
    pub parasitics: Parasitics,
    /// Replace D1 by a switch gated on outside shoot-through.
    #[serde(default)]
    pub synchronous_input: bool,
    #[serde(default)]
    pub initial: InitialState,
}

impl ComponentValues {
    /// Inverter case values: 100 µF capacitors, 370 µH magnetizing,
    /// 0.15 µH leakage, 1 mH series inductor, induction machine load.
    pub fn inverter_case() -> Self {
        Self {
            lm: 370e-6,
            leakage: [0.15e-6; 3],
            lr: 1e-3,
            c1: 100e-6,
            c2: 100e-6,
            co: 470e-6,
            r_load: 245.0,
            load3: Load3Spec::Machine {
                params: IMParams::default(),
                shaft: Shaft::Loaded { load_torque: 5.0 },
                initial_rpm: 0.0,
            },
            parasitics: Parasitics::ideal(),
            synchronous_input: false,
            initial: InitialState::Zero,
        }
    }

    /// DC-DC case values: C1 = 220 µF, C2 = 680 µF, 245 Ω load.
    ///
    /// The series inductor defaults to 330 µH; the magnetizing inductance
    /// and output capacitor are not listed for this build and reuse 370 µH
    /// and 470 µF.
    pub fn dcdc_case() -> Self {
        Self {
            lm: 370e-6,
            leakage: [0.15e-6; 3],
            lr: 330e-6,
            c1: 220e-6,
            c2: 680e-6,
            co: 470e-6,
            r_load: 245.0,
            load3: Load3Spec::Resistive { r: 10.0 },
            parasitics: Parasitics::ideal(),
            synchronous_input: false,
            initial: InitialState::Zero,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BuiltinError {
    #[error(transparent)]
    Infeasible(#[from] AnalyticsError),
    #[error("invalid component values: {0}")]
    Invalid(String),
}

impl From<Vec<Diagnostic>> for BuiltinError {
    fn from(diags: Vec<Diagnostic>) -> Self {
        BuiltinError::Invalid(
            diags
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("; "),
        )
    }
}

/// Adds an optional series resistor in front of `node`; returns the node the
/// component should attach to.
fn esr(out: &mut Vec<Element>, name: &str, node: &str, r: f64) -> String {
    if r > 0.0 {
        let inner = format!("{node}_{name}");
        out.push(Element::new(ElementKind::R, &format!("r{name}"), [node, inner.as_str()]).with("r", r));
        inner
    } else {
        node.to_string()
    }
}

fn fmt_turns(t: [f64; 3]) -> String {
    format!("{}:{}:{}", t[0], t[1], t[2])
}

/// Build the proposed-converter netlist for an operating point.
pub fn builtin(op: &ConverterParams, values: &ComponentValues, mode: Mode) -> Result<Circuit, BuiltinError> {
    match mode {
        Mode::Dcdc => op.validate()?,
        Mode::Inverter => op.validate_inverter()?,
    }
    let par = values.parasitics;
    let pred = op.predict()?;
    let precharge = values.initial == InitialState::Analytic;
    let mut els = Vec::new();

    els.push(Element::new(ElementKind::V, "v1", [SOURCE, GROUND]).with("dc", op.v_dc));

    let w1 = esr(&mut els, "y1", SOURCE, par.ind_esr);
    let w2 = esr(&mut els, "y2", "b", par.ind_esr);
    let w3 = esr(&mut els, "y3", "a", par.ind_esr);
    els.push(
        Element::new(ElementKind::W3, "y1", [w1.as_str(), "a", w2.as_str(), "x", w3.as_str(), "c"])
            .with_text("turns", &fmt_turns(op.turns()))
            .with("lm", values.lm)
            .with("ll1", values.leakage[0])
            .with("ll2", values.leakage[1])
            .with("ll3", values.leakage[2]),
    );

    if values.synchronous_input {
        els.push(
            Element::new(ElementKind::S, "d1", ["a", "b"])
                .with_text("gate", "nst")
                .with("ron", par.switch_ron),
        );
    } else {
        let mut d1 = Element::new(ElementKind::D, "d1", ["a", "b"]);
        if par.diode_vf > 0.0 {
            d1 = d1.with("vf", par.diode_vf);
        }
        els.push(d1);
    }

    let cap = |name: &str, a: &str, b: &str, c: f64, v0: f64| {
        let mut e = Element::new(ElementKind::C, name, [a, b]).with("c", c);
        if precharge {
            e = e.with("v0", v0);
        }
        e
    };

    let c2_top = esr(&mut els, "c2", "x", par.cap_esr);
    els.push(cap("c2", &c2_top, GROUND, values.c2, pred.v_c2));
    let lr_in = esr(&mut els, "lr", "x", par.ind_esr);
    els.push(Element::new(ElementKind::L, "lr", [lr_in.as_str(), LINK]).with("l", values.lr));
    let c1_top = esr(&mut els, "c1", LINK, par.cap_esr);
    els.push(cap("c1", &c1_top, "c", values.c1, pred.v_c1));

    match mode {
        Mode::Dcdc => {
            els.push(
                Element::new(ElementKind::S, "s1", [LINK, GROUND])
                    .with_text("gate", "st")
                    .with("ron", par.switch_ron),
            );
            let mut d_out = Element::new(ElementKind::D, "do", [LINK, "out"]);
            if par.diode_vf > 0.0 {
                d_out = d_out.with("vf", par.diode_vf);
            }
            els.push(d_out);
            let co_top = esr(&mut els, "co", "out", par.cap_esr);
            els.push(cap("co", &co_top, GROUND, values.co, pred.v_pn));
            els.push(Element::new(ElementKind::R, "rl", ["out", GROUND]).with("r", values.r_load));
        }
        Mode::Inverter => {
            for leg in ["a", "b", "c"] {
                let phase = format!("p{leg}");
                els.push(
                    Element::new(ElementKind::S, &format!("s{leg}h"), [LINK, phase.as_str()])
                        .with_text("gate", &format!("{leg}h"))
                        .with("ron", par.switch_ron),
                );
                els.push(
                    Element::new(ElementKind::S, &format!("s{leg}l"), [phase.as_str(), GROUND])
                        .with_text("gate", &format!("{leg}l"))
                        .with("ron", par.switch_ron),
                );
            }
            els.push(load3_element(&values.load3));
        }
    }

    Ok(Circuit::from_elements(els)?)
}

fn load3_element(spec: &Load3Spec) -> Element {
    let e = Element::new(ElementKind::Load3, "m1", ["pa", "pb", "pc"]);
    match *spec {
        Load3Spec::Resistive { r } => e.with_text("type", "r").with("r", r),
        Load3Spec::SeriesRl { r, l } => e.with_text("type", "rl").with("r", r).with("l", l),
        Load3Spec::Machine { params, shaft, initial_rpm } => {
            let mut e = e
                .with_text("type", "im")
                .with("rs", params.rs)
                .with("rr", params.rr)
                .with("lls", params.lls)
                .with("llr", params.llr)
                .with("lm", params.lm)
                .with("j", params.j)
                .with("pp", f64::from(params.pole_pairs));
            e = match shaft {
                Shaft::Loaded { load_torque } => e.with("tl", load_torque),
                Shaft::Driven { rpm } => e.with("rpm", rpm),
            };
            if initial_rpm != 0.0 {
                e = e.with("w0", initial_rpm);
            }
            e
        }
    }
}

/// Element counts of the impedance network: everything reachable from the
/// source without crossing the DC link or ground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkInventory {
    pub elements: BTreeSet<String>,
    pub capacitors: usize,
    pub diodes: usize,
    pub coupled_inductors: usize,
    pub inductors: usize,
}

pub fn network_inventory(c: &Circuit) -> NetworkInventory {
    let mut seen_nodes = BTreeSet::new();
    let mut elements = BTreeSet::new();
    let mut queue: VecDeque<String> = c
        .elements()
        .iter()
        .filter(|e| e.kind == ElementKind::V)
        .flat_map(|e| e.nodes.iter().filter(|n| *n != GROUND).cloned())
        .collect();
    while let Some(node) = queue.pop_front() {
        if !seen_nodes.insert(node.clone()) {
            continue;
        }
        for el in c.elements() {
            for group in terminal_groups(el) {
                if group.contains(&node.as_str()) {
                    elements.insert(el.name.clone());
                    for other in group {
                        if other != GROUND && other != LINK && !seen_nodes.contains(other) {
                            queue.push_back(other.to_string());
                        }
                    }
                }
            }
        }
    }
    let count = |kind: ElementKind| {
        elements
            .iter()
            .filter(|n| c.get(n).map(|e| e.kind) == Some(kind))
            .count()
    };
    NetworkInventory {
        capacitors: count(ElementKind::C),
        diodes: count(ElementKind::D),
        coupled_inductors: count(ElementKind::W3),
        inductors: count(ElementKind::L),
        elements,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::parse;

    #[test]
    fn dcdc_inventory_and_round_trip() {
        let c = builtin(&ConverterParams::dcdc_case(), &ComponentValues::dcdc_case(), Mode::Dcdc).unwrap();
        let inv = network_inventory(&c);
        assert_eq!(inv.capacitors, 2);
        assert_eq!(inv.diodes, 1);
        assert_eq!(inv.coupled_inductors, 1);
        assert_eq!(inv.inductors, 1);
        assert!(!inv.elements.contains("co") && !inv.elements.contains("s1"));
        assert_eq!(parse(&c.serialize()).unwrap(), c);
    }

    #[test]
    fn inverter_inventory_and_round_trip() {
        let c = builtin(&ConverterParams::inverter_case(), &ComponentValues::inverter_case(), Mode::Inverter).unwrap();
        let inv = network_inventory(&c);
        assert_eq!((inv.capacitors, inv.diodes), (2, 1));
        assert_eq!(c.count(ElementKind::S), 6);
        assert_eq!(parse(&c.serialize()).unwrap(), c);
    }

    #[test]
    fn zero_leakage_override() {
        let values = ComponentValues {
            leakage: [0.0; 3],
            ..ComponentValues::dcdc_case()
        };
        let c = builtin(&ConverterParams::dcdc_case(), &values, Mode::Dcdc).unwrap();
        assert_eq!(c.get("y1").unwrap().num("ll2"), Some(0.0));
    }

    #[test]
    fn parasitics_and_precharge() {
        let values = ComponentValues {
            parasitics: Parasitics::nominal(),
            initial: InitialState::Analytic,
            ..ComponentValues::dcdc_case()
        };
        let c = builtin(&ConverterParams::dcdc_case(), &values, Mode::Dcdc).unwrap();
        let inv = network_inventory(&c);
        assert_eq!((inv.capacitors, inv.diodes), (2, 1));
        assert_eq!(c.get("d1").unwrap().num("vf"), Some(0.45));
        assert!((c.get("c1").unwrap().num("v0").unwrap() - 40.0).abs() < 1e-9);
        assert_eq!(parse(&c.serialize()).unwrap(), c);
    }

    #[test]
    fn infeasible_operating_point() {
        let op = ConverterParams {
            d: 0.6,
            ..ConverterParams::dcdc_case()
        };
        assert!(matches!(
            builtin(&op, &ComponentValues::dcdc_case(), Mode::Dcdc),
            Err(BuiltinError::Infeasible(_))
        ));
        let op = ConverterParams {
            m: 0.9,
            ..ConverterParams::inverter_case()
        };
        assert!(builtin(&op, &ComponentValues::inverter_case(), Mode::Inverter).is_err());
    }
}
