//! Gate schedules.
//!
//! `dcdc` shorts the link for the first `d` of every switching period.
//! `spwm` compares three sinusoidal references against a triangular carrier
//! and forces all legs on whenever the carrier magnitude exceeds `1 - d`
//! (simple-boost insertion, which only ever replaces zero states when
//! `M + d <= 1`).

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::engine::Trace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Gate {
    St,
    Nst,
    Ah,
    Al,
    Bh,
    Bl,
    Ch,
    Cl,
    On,
    Off,
}

impl Gate {
    pub const ALL: [Gate; 10] = [
        Gate::St,
        Gate::Nst,
        Gate::Ah,
        Gate::Al,
        Gate::Bh,
        Gate::Bl,
        Gate::Ch,
        Gate::Cl,
        Gate::On,
        Gate::Off,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Gate::St => "st",
            Gate::Nst => "nst",
            Gate::Ah => "ah",
            Gate::Al => "al",
            Gate::Bh => "bh",
            Gate::Bl => "bl",
            Gate::Ch => "ch",
            Gate::Cl => "cl",
            Gate::On => "on",
            Gate::Off => "off",
        }
    }

    pub fn from_name(name: &str) -> Option<Gate> {
        let lower = name.to_ascii_lowercase();
        Self::ALL.into_iter().find(|g| g.name() == lower)
    }

    fn bit(self) -> u16 {
        1 << self as u16
    }
}

/// Gate levels at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Gates(u16);

impl Gates {
    pub fn is_on(self, g: Gate) -> bool {
        self.0 & g.bit() != 0
    }

    /// Shoot-through annotation.
    pub fn st(self) -> bool {
        self.is_on(Gate::St)
    }

    pub fn set(&mut self, g: Gate, on: bool) {
        if on {
            self.0 |= g.bit();
        } else {
            self.0 &= !g.bit();
        }
    }

    /// Gates with only the constant `on` line high plus `st`/`nst` per `st`.
    pub fn phase(st: bool) -> Self {
        let mut g = Gates::default();
        g.set(Gate::On, true);
        g.set(Gate::St, st);
        g.set(Gate::Nst, !st);
        g
    }
}

/// Anything that can drive the switches of a circuit.
pub trait GateSource: Sync {
    fn gates_at(&self, t: f64) -> Gates;
    /// Period on which gate edges fall; the engine step must divide it.
    fn switching_period(&self) -> f64;
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModulationError {
    #[error("shoot-through duty {0} outside [0, 1)")]
    Duty(f64),
    #[error("M + d = {0} exceeds 1; simple-boost insertion would overlap active states")]
    Overmodulated(f64),
    #[error("switching frequency {f_sw} Hz is not an integer multiple of output frequency {f_out} Hz")]
    FrequencyRatio { f_sw: f64, f_out: f64 },
    #[error("invalid {0}")]
    Invalid(&'static str),
    #[error("window of {0} switching periods is not an integer count")]
    Window(f64),
    #[error("trace has no samples")]
    Empty,
}

fn default_offsets() -> [f64; 3] {
    [0.0, -2.0 * PI / 3.0, 2.0 * PI / 3.0]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ModulationSpec {
    Dcdc {
        d: f64,
        f_sw: f64,
    },
    Spwm {
        d: f64,
        m: f64,
        f_sw: f64,
        f_out: f64,
        #[serde(default = "default_offsets")]
        phase_offsets: [f64; 3],
    },
}

impl ModulationSpec {
    pub fn dcdc(d: f64, f_sw: f64) -> Self {
        ModulationSpec::Dcdc { d, f_sw }
    }

    pub fn spwm(d: f64, m: f64, f_sw: f64, f_out: f64) -> Self {
        ModulationSpec::Spwm {
            d,
            m,
            f_sw,
            f_out,
            phase_offsets: default_offsets(),
        }
    }

    pub fn d(&self) -> f64 {
        match *self {
            ModulationSpec::Dcdc { d, .. } | ModulationSpec::Spwm { d, .. } => d,
        }
    }

    pub fn f_sw(&self) -> f64 {
        match *self {
            ModulationSpec::Dcdc { f_sw, .. } | ModulationSpec::Spwm { f_sw, .. } => f_sw,
        }
    }

    /// Period after which the whole schedule repeats.
    pub fn schedule_period(&self) -> f64 {
        match *self {
            ModulationSpec::Dcdc { f_sw, .. } => 1.0 / f_sw,
            ModulationSpec::Spwm { f_out, .. } => 1.0 / f_out,
        }
    }

    /// Steps per switching period: the smallest count at or above `target`
    /// that puts every shoot-through edge on the step grid (`target` itself
    /// if none is found below `64 * target`).
    pub fn aligned_steps(&self, target: u32) -> u32 {
        let on_grid = |x: f64| (x - x.round()).abs() < 1e-9;
        let ok = |n: u32| {
            let n = f64::from(n);
            match self {
                ModulationSpec::Dcdc { d, .. } => on_grid(d * n),
                ModulationSpec::Spwm { d, .. } => on_grid(d * n / 4.0) && on_grid(n / 2.0),
            }
        };
        (target..target.saturating_mul(64)).find(|&n| ok(n)).unwrap_or(target)
    }

    /// Default engine step: about 500 steps per switching period, aligned
    /// per [`aligned_steps`](Self::aligned_steps).
    pub fn default_dt(&self) -> f64 {
        1.0 / (f64::from(self.aligned_steps(500)) * self.f_sw())
    }

    pub fn validate(&self) -> Result<(), ModulationError> {
        let d = self.d();
        if !(d.is_finite() && (0.0..1.0).contains(&d)) {
            return Err(ModulationError::Duty(d));
        }
        if !(self.f_sw().is_finite() && self.f_sw() > 0.0) {
            return Err(ModulationError::Invalid("switching frequency"));
        }
        if let ModulationSpec::Spwm { m, f_sw, f_out, phase_offsets, .. } = *self {
            if !(m.is_finite() && m >= 0.0) {
                return Err(ModulationError::Invalid("modulation index"));
            }
            if m + d > 1.0 + 1e-12 {
                return Err(ModulationError::Overmodulated(m + d));
            }
            if !(f_out.is_finite() && f_out > 0.0) || phase_offsets.iter().any(|x| !x.is_finite()) {
                return Err(ModulationError::Invalid("output frequency or phase offset"));
            }
            let ratio = f_sw / f_out;
            if (ratio - ratio.round()).abs() > 1e-9 * ratio {
                return Err(ModulationError::FrequencyRatio { f_sw, f_out });
            }
        }
        Ok(())
    }

    pub fn gates_at(&self, t: f64) -> Gates {
        let phi = (t * self.f_sw()).rem_euclid(1.0);
        match *self {
            ModulationSpec::Dcdc { d, .. } => Gates::phase(phi < d),
            ModulationSpec::Spwm { d, m, f_out, phase_offsets, .. } => {
                let carrier = 4.0 * (phi - 0.5).abs() - 1.0;
                let st = d > 0.0 && carrier.abs() > 1.0 - d;
                let mut g = Gates::phase(st);
                let legs = [(Gate::Ah, Gate::Al), (Gate::Bh, Gate::Bl), (Gate::Ch, Gate::Cl)];
                for ((hi, lo), offset) in legs.into_iter().zip(phase_offsets) {
                    let upper = m * (2.0 * PI * f_out * t + offset).sin() > carrier;
                    g.set(hi, st || upper);
                    g.set(lo, st || !upper);
                }
                g
            }
        }
    }

    /// Gate schedule sampled at step midpoints as CSV: `t`, one 0/1 column
    /// per gate, and the shoot-through flag.
    pub fn schedule_csv(&self, dt: f64, steps: usize) -> String {
        let gates = &Gate::ALL[..8];
        let mut out = String::from("t");
        for g in gates {
            out.push(',');
            out.push_str(g.name());
        }
        out.push_str(",st_flag\n");
        for k in 0..steps {
            let t = (k as f64 + 0.5) * dt;
            let g = self.gates_at(t);
            let _ = write!(out, "{t}");
            for gate in gates {
                out.push_str(if g.is_on(*gate) { ",1" } else { ",0" });
            }
            out.push_str(if g.st() { ",1\n" } else { ",0\n" });
        }
        out
    }
}

impl GateSource for ModulationSpec {
    fn gates_at(&self, t: f64) -> Gates {
        ModulationSpec::gates_at(self, t)
    }

    fn switching_period(&self) -> f64 {
        1.0 / self.f_sw()
    }
}

/// Fraction of shoot-through samples in `trace`, which must span an integer
/// number of switching periods.
pub fn measured_st_duty(trace: &Trace, f_sw: f64) -> Result<f64, ModulationError> {
    let n = trace.len();
    if n == 0 {
        return Err(ModulationError::Empty);
    }
    let periods = n as f64 * trace.dt * f_sw;
    if (periods - periods.round()).abs() > 1e-6 || periods.round() < 1.0 {
        return Err(ModulationError::Window(periods));
    }
    Ok(trace.st.iter().filter(|s| **s).count() as f64 / n as f64)
}
