//! Switched-network transient solver.
//!
//! Modified nodal analysis with Norton companion models. Steps are
//! trapezoidal except the first one and any step whose switch/diode
//! configuration differs from the previous step, which use backward Euler
//! (this damps the spurious trapezoidal ringing of stiff leakage branches
//! opened by a switch). Factorizations are cached per configuration and
//! method. Gates are sampled at step midpoints, so edges fall on the grid
//! whenever the step divides the switching period.

mod compile;
mod sim;
mod trace;

pub use compile::machine_of;
pub use sim::{
    assemble, run, simulate, simulate_observed, steps_per_period, Branch, EnergyAudit, LinearSystem, Probe, SimConfig,
    SimState, Simulator, SwitchConfiguration,
};
pub use trace::Trace;

/// Closed-switch resistance.
pub const RON: f64 = 1e-3;
/// Open-switch resistance.
pub const ROFF: f64 = 1e6;
/// Smallest leakage inductance used for a coupled-inductor winding.
pub const LEAKAGE_FLOOR: f64 = 1e-9;
/// Diode state tolerance: amps when conducting, volts when blocking.
pub const COMPLEMENTARITY_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EngineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("singular system at t={time} s near `{node}`")]
    Singular { node: String, time: f64 },
    #[error("diode states did not settle in {iterations} passes at t={time} s")]
    DiodeFixpoint { time: f64, iterations: usize },
    #[error("solution diverged at t={time} s")]
    Diverged { time: f64 },
    #[error("unknown probe `{0}`")]
    UnknownProbe(String),
}

/// Default step: 500 steps per switching period.
pub fn default_dt(f_sw: f64) -> f64 {
    1.0 / (500.0 * f_sw)
}
