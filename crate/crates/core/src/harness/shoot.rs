//! Periodic steady state by Newton shooting on the one-period map.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{HarnessError, Result, Scenario};
use crate::engine::{steps_per_period, SimState, Simulator};
use crate::modulation::GateSource;
use crate::netlist::Circuit;

/// Newton iteration limit.
pub const SHOOT_MAX_ITERATIONS: usize = 30;
/// Convergence bound on `max |Phi(x) - x| / max(|x|, |Phi(x)|)`.
pub const SHOOT_TOLERANCE: f64 = 1e-6;
/// Forward-difference perturbation, relative per state.
const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Shot {
    #[serde(skip)]
    pub state: SimState,
    pub iterations: usize,
    /// Relative residual before each Newton update, and after the last.
    pub history: Vec<f64>,
}

struct PeriodMap<'a> {
    c: &'a Circuit,
    src: &'a dyn GateSource,
    dt: f64,
    steps: u64,
    template: SimState,
}

impl PeriodMap<'_> {
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut sim = Simulator::from_state(self.c, self.dt, &self.template.with_vector(x))?;
        for _ in 0..self.steps {
            sim.advance(self.src)?;
        }
        Ok(sim.state().to_vector())
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn rel_residual(f: &[f64], x: &[f64], phi: &[f64]) -> f64 {
    max_abs(f) / max_abs(x).max(max_abs(phi)).max(1e-300)
}

/// Find the state `x*` with `Phi_T(x*) = x*`, where `Phi_T` integrates the
/// circuit over `period` starting at `x0.time`. The Jacobian of `Phi_T` is
/// built by forward differences.
pub fn shoot_periodic(c: &Circuit, src: &dyn GateSource, dt: f64, period: f64, x0: &SimState) -> Result<Shot> {
    steps_per_period(src.switching_period(), dt)?;
    let map = PeriodMap {
        c,
        src,
        dt,
        steps: steps_per_period(period, dt)?,
        template: x0.clone(),
    };
    let mut x = x0.to_vector();
    let n = x.len();
    let mut history = Vec::new();
    for iteration in 0..=SHOOT_MAX_ITERATIONS {
        let phi = map.apply(&x)?;
        let f: Vec<f64> = phi.iter().zip(&x).map(|(p, x)| p - x).collect();
        let r = rel_residual(&f, &x, &phi);
        history.push(r);
        if !r.is_finite() {
            break;
        }
        if r < SHOOT_TOLERANCE {
            return Ok(Shot {
                state: map.template.with_vector(&x),
                iterations: iteration,
                history,
            });
        }
        if iteration == SHOOT_MAX_ITERATIONS {
            break;
        }
        let mut jac = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let h = FD_STEP * x[j].abs().max(1.0);
            let mut xp = x.clone();
            xp[j] += h;
            let phi_p = map.apply(&xp)?;
            for i in 0..n {
                jac[(i, j)] = (phi_p[i] - phi[i]) / h;
            }
            jac[(j, j)] -= 1.0;
        }
        let step = jac
            .lu()
            .solve(&DVector::from_vec(f.clone()))
            .filter(|s| s.iter().all(|v| v.is_finite()));
        match step {
            Some(s) => {
                for (xi, si) in x.iter_mut().zip(s.iter()) {
                    *xi -= si;
                }
            }
            None => break,
        }
    }
    Err(HarnessError::NoConvergence {
        iterations: history.len().saturating_sub(1),
        history,
    })
}

/// [`shoot_periodic`] over the scenario's schedule period: one switching
/// period for dcdc, one output period for spwm.
pub fn shoot_steady(s: &Scenario, x0: &SimState) -> Result<Shot> {
    s.validate()?;
    let c = s.circuit()?;
    shoot_periodic(&c, &s.modulation, s.dt(), s.modulation.schedule_period(), x0)
}
