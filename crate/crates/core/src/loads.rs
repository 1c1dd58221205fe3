//! Load models: three-phase squirrel-cage induction machine in the
//! stationary (alpha-beta) frame, plus its per-phase equivalent-circuit
//! torque curve used as a steady-state oracle.
//!
//! Flux linkages are the machine states. With amplitude-invariant Clarke
//! quantities the electrical power is `3/2 (v_a i_a + v_b i_b)` and the
//! torque `3/2 p (psi_sa i_sb - psi_sb i_sa)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IMParams {
    pub rated_voltage: f64,
    pub rated_power: f64,
    pub frequency: f64,
    pub rated_rpm: f64,
    pub rs: f64,
    pub rr: f64,
    pub lls: f64,
    pub llr: f64,
    pub lm: f64,
    pub j: f64,
    pub pole_pairs: u32,
}

impl Default for IMParams {
    /// The 400 V / 3.4 kW / 50 Hz machine of the inverter case studies.
    fn default() -> Self {
        Self {
            rated_voltage: 400.0,
            rated_power: 3.4e3,
            frequency: 50.0,
            rated_rpm: 1440.0,
            rs: 2.125,
            rr: 2.05,
            lls: 2e-3,
            llr: 2e-3,
            lm: 6.4e-3,
            j: 0.015,
            pole_pairs: pole_pairs_for(1440.0, 50.0),
        }
    }
}

/// Largest pole-pair count whose synchronous speed still exceeds `rated_rpm`.
pub fn pole_pairs_for(rated_rpm: f64, frequency: f64) -> u32 {
    let mut p = 1;
    while 60.0 * frequency / f64::from(p + 1) > rated_rpm && p < 64 {
        p += 1;
    }
    p
}

impl IMParams {
    pub fn ls(&self) -> f64 {
        self.lls + self.lm
    }

    pub fn lr(&self) -> f64 {
        self.llr + self.lm
    }

    /// Leakage factor `1 - Lm^2 / (Ls Lr)`.
    pub fn sigma(&self) -> f64 {
        1.0 - self.lm * self.lm / (self.ls() * self.lr())
    }

    pub fn poles(&self) -> f64 {
        f64::from(self.pole_pairs)
    }

    pub fn sync_rpm(&self, frequency: f64) -> f64 {
        60.0 * frequency / self.poles()
    }

    pub fn is_valid(&self) -> bool {
        [self.rs, self.rr, self.lls, self.llr, self.lm, self.j]
            .iter()
            .all(|x| x.is_finite() && *x > 0.0)
            && self.pole_pairs >= 1
    }

    /// Stator and rotor currents for the given flux linkages.
    fn currents(&self, psi_s: [f64; 2], psi_r: [f64; 2]) -> ([f64; 2], [f64; 2]) {
        let (ls, lr, lm) = (self.ls(), self.lr(), self.lm);
        let det = ls * lr - lm * lm;
        let mut is = [0.0; 2];
        let mut ir = [0.0; 2];
        for k in 0..2 {
            is[k] = (lr * psi_s[k] - lm * psi_r[k]) / det;
            ir[k] = (ls * psi_r[k] - lm * psi_s[k]) / det;
        }
        (is, ir)
    }
}

/// Amplitude-invariant Clarke transform.
pub fn abc_to_ab(abc: [f64; 3]) -> [f64; 2] {
    [
        (2.0 * abc[0] - abc[1] - abc[2]) / 3.0,
        (abc[1] - abc[2]) / SQRT3,
    ]
}

/// Inverse Clarke transform (zero-sequence free).
pub fn ab_to_abc(ab: [f64; 2]) -> [f64; 3] {
    let half = -0.5 * ab[0];
    let s = 0.5 * SQRT3 * ab[1];
    [ab[0], half + s, half - s]
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IMState {
    pub psi_s: [f64; 2],
    pub psi_r: [f64; 2],
    /// Rotor electrical speed, rad/s.
    pub omega_r: f64,
    /// Rotor mechanical angle, rad.
    pub theta_m: f64,
}

impl IMState {
    pub fn at_rpm(params: &IMParams, rpm: f64) -> Self {
        Self {
            omega_r: rpm * 2.0 * PI / 60.0 * params.poles(),
            ..Self::default()
        }
    }

    pub fn rpm(&self, params: &IMParams) -> f64 {
        self.omega_r / params.poles() * 60.0 / (2.0 * PI)
    }

    pub fn currents(&self, params: &IMParams) -> ([f64; 2], [f64; 2]) {
        params.currents(self.psi_s, self.psi_r)
    }

    pub fn torque(&self, params: &IMParams) -> f64 {
        let (is, _) = self.currents(params);
        1.5 * params.poles() * (self.psi_s[0] * is[1] - self.psi_s[1] * is[0])
    }

    /// Magnetic field energy `3/4 (psi_s . i_s + psi_r . i_r)`.
    pub fn field_energy(&self, params: &IMParams) -> f64 {
        let (is, ir) = self.currents(params);
        0.75 * (self.psi_s[0] * is[0] + self.psi_s[1] * is[1] + self.psi_r[0] * ir[0] + self.psi_r[1] * ir[1])
    }

    fn is_finite(&self) -> bool {
        self.psi_s.iter().chain(&self.psi_r).all(|x| x.is_finite())
            && self.omega_r.is_finite()
            && self.theta_m.is_finite()
    }
}

/// How the shaft moves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shaft {
    /// Free shaft against a load torque (N·m).
    Loaded { load_torque: f64 },
    /// Shaft held at a fixed speed by a prime mover (rpm).
    Driven { rpm: f64 },
}

type Vec6 = [f64; 6];

fn derivative(params: &IMParams, x: &Vec6, v_ab: [f64; 2], shaft: Shaft) -> Vec6 {
    let psi_s = [x[0], x[1]];
    let psi_r = [x[2], x[3]];
    let omega_r = x[4];
    let (is, ir) = params.currents(psi_s, psi_r);
    let torque = 1.5 * params.poles() * (psi_s[0] * is[1] - psi_s[1] * is[0]);
    let (domega, omega_for_angle) = match shaft {
        Shaft::Loaded { load_torque } => (params.poles() * (torque - load_torque) / params.j, omega_r),
        Shaft::Driven { .. } => (0.0, omega_r),
    };
    [
        v_ab[0] - params.rs * is[0],
        v_ab[1] - params.rs * is[1],
        -params.rr * ir[0] - omega_r * psi_r[1],
        -params.rr * ir[1] + omega_r * psi_r[0],
        domega,
        omega_for_angle / params.poles(),
    ]
}

fn pack(s: &IMState) -> Vec6 {
    [s.psi_s[0], s.psi_s[1], s.psi_r[0], s.psi_r[1], s.omega_r, s.theta_m]
}

fn unpack(x: &Vec6) -> IMState {
    IMState {
        psi_s: [x[0], x[1]],
        psi_r: [x[2], x[3]],
        omega_r: x[4],
        theta_m: x[5],
    }
}

fn rk4(params: &IMParams, state: &IMState, v_ab: [f64; 2], shaft: Shaft, dt: f64) -> IMState {
    let mut x = pack(state);
    if let Shaft::Driven { rpm } = shaft {
        x[4] = IMState::at_rpm(params, rpm).omega_r;
    }
    let add = |a: &Vec6, b: &Vec6, h: f64| -> Vec6 {
        let mut out = *a;
        for i in 0..6 {
            out[i] += h * b[i];
        }
        out
    };
    let k1 = derivative(params, &x, v_ab, shaft);
    let k2 = derivative(params, &add(&x, &k1, dt / 2.0), v_ab, shaft);
    let k3 = derivative(params, &add(&x, &k2, dt / 2.0), v_ab, shaft);
    let k4 = derivative(params, &add(&x, &k3, dt), v_ab, shaft);
    for i in 0..6 {
        x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    unpack(&x)
}

/// Output of one machine step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IMStep {
    pub state: IMState,
    pub i_abc: [f64; 3],
    pub torque: f64,
}

/// Advance the machine one RK4 step with phase voltages `v_abc` held
/// constant over the step and a free shaft against `load_torque`.
pub fn im_step(params: &IMParams, state: &IMState, v_abc: [f64; 3], load_torque: f64, dt: f64) -> IMStep {
    im_step_shaft(params, state, v_abc, Shaft::Loaded { load_torque }, dt)
}

pub fn im_step_shaft(params: &IMParams, state: &IMState, v_abc: [f64; 3], shaft: Shaft, dt: f64) -> IMStep {
    assert!(dt > 0.0, "im_step needs dt > 0");
    let next = rk4(params, state, abc_to_ab(v_abc), shaft, dt);
    debug_assert!(next.is_finite(), "machine state diverged");
    let (is, _) = next.currents(params);
    IMStep {
        state: next,
        i_abc: ab_to_abc(is),
        torque: next.torque(params),
    }
}

/// Classical per-phase equivalent-circuit electromagnetic torque at
/// `slip`, line-to-line RMS voltage `v_line` and supply frequency `f`.
pub fn im_steady_torque(slip: f64, v_line: f64, f: f64, p: &IMParams) -> f64 {
    if slip == 0.0 {
        return 0.0;
    }
    let w = 2.0 * PI * f;
    let v_phase = v_line / SQRT3;
    // complex arithmetic on (re, im) pairs
    let mul = |a: (f64, f64), b: (f64, f64)| (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0);
    let div = |a: (f64, f64), b: (f64, f64)| {
        let den = b.0 * b.0 + b.1 * b.1;
        ((a.0 * b.0 + a.1 * b.1) / den, (a.1 * b.0 - a.0 * b.1) / den)
    };
    let add = |a: (f64, f64), b: (f64, f64)| (a.0 + b.0, a.1 + b.1);
    let zs = (p.rs, w * p.lls);
    let zm = (0.0, w * p.lm);
    let zr = (p.rr / slip, w * p.llr);
    let zpar = div(mul(zm, zr), add(zm, zr));
    let is = div((v_phase, 0.0), add(zs, zpar));
    let ir = div(mul(is, zm), add(zm, zr));
    let ir2 = ir.0 * ir.0 + ir.1 * ir.1;
    let air_gap = 3.0 * ir2 * p.rr / slip;
    air_gap / (w / p.poles())
}

/// Balanced sinusoidal phase voltages, peak `v_peak`, at time `t`.
pub fn balanced_supply(v_peak: f64, f: f64, t: f64) -> [f64; 3] {
    let th = 2.0 * PI * f * t;
    [
        v_peak * th.cos(),
        v_peak * (th - 2.0 * PI / 3.0).cos(),
        v_peak * (th + 2.0 * PI / 3.0).cos(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settle(slip: f64, seconds: f64) -> (f64, f64) {
        let p = IMParams::default();
        let rpm = p.sync_rpm(50.0) * (1.0 - slip);
        let dt = 2e-5;
        let v_peak = 400.0 / SQRT3 * 2f64.sqrt();
        let mut s = IMState::at_rpm(&p, rpm);
        let n = (seconds / dt).round() as usize;
        let period = (0.02 / dt).round() as usize;
        let (mut t_acc, mut p_acc) = (0.0, 0.0);
        for k in 0..n {
            let t = (k as f64 + 0.5) * dt;
            let v = balanced_supply(v_peak, 50.0, t);
            let out = im_step_shaft(&p, &s, v, Shaft::Driven { rpm }, dt);
            if k >= n - period {
                t_acc += out.torque;
                p_acc += v.iter().zip(out.i_abc).map(|(v, i)| v * i).sum::<f64>();
            }
            s = out.state;
        }
        (t_acc / period as f64, p_acc / period as f64)
    }

    #[test]
    fn pole_pairs_from_rated_speed() {
        assert_eq!(IMParams::default().pole_pairs, 2);
        assert_eq!(pole_pairs_for(2900.0, 50.0), 1);
        assert_eq!(pole_pairs_for(960.0, 50.0), 3);
    }

    #[test]
    fn clarke_round_trip() {
        for abc in [[1.0, -0.5, -0.5], [3.0, 2.0, -5.0], [0.1, 0.7, -0.8]] {
            let back = ab_to_abc(abc_to_ab(abc));
            for k in 0..3 {
                assert!((back[k] - abc[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_input_stays_zero() {
        let p = IMParams::default();
        let out = im_step(&p, &IMState::default(), [0.0; 3], 0.0, 1e-4);
        assert_eq!(out.state, IMState::default());
        assert_eq!(out.torque, 0.0);
    }

    #[test]
    fn synchronous_speed_gives_zero_torque() {
        let (t, _) = settle(0.0, 0.5);
        // the held supply voltage leaves an O(dt^2) residual, 8.6e-4 N m at 20 us
        assert!(t.abs() < 1e-3, "torque {t}");
    }

    #[test]
    fn settled_torque_matches_equivalent_circuit() {
        let p = IMParams::default();
        for slip in [0.02, 0.04, 0.08] {
            let (t, _) = settle(slip, 0.3);
            let oracle = im_steady_torque(slip, 400.0, 50.0, &p);
            assert!((t - oracle).abs() <= 0.02 * oracle.abs(), "slip {slip}: {t} vs {oracle}");
        }
    }

    #[test]
    fn negative_slip_reverses_air_gap_power() {
        let p = IMParams::default();
        let motor = im_steady_torque(0.02, 400.0, 50.0, &p);
        let generator = im_steady_torque(-0.02, 400.0, 50.0, &p);
        assert!(motor > 0.0 && generator < 0.0);
        assert!((motor + generator).abs() < 0.1 * motor);
        // the shaft now pushes power in: mechanical power T*w is negative
        let (t, _) = settle(-0.04, 0.3);
        assert!(t < 0.0);
        assert_eq!(im_steady_torque(0.0, 400.0, 50.0, &p), 0.0);
    }

    #[test]
    fn power_balance_per_step() {
        let p = IMParams::default();
        let dt = 1e-5;
        let mut s = IMState::at_rpm(&p, 1200.0);
        let v_peak = 300.0;
        for k in 0..4000 {
            let t = (k as f64 + 0.5) * dt;
            let v = balanced_supply(v_peak, 50.0, t);
            let out = im_step(&p, &s, v, 5.0, dt);
            // average of the two endpoints approximates the step mean
            let (is0, ir0) = s.currents(&p);
            let (is1, ir1) = out.state.currents(&p);
            let vab = abc_to_ab(v);
            let mid = |a: [f64; 2], b: [f64; 2]| [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
            let ism = mid(is0, is1);
            let irm = mid(ir0, ir1);
            let p_in = 1.5 * (vab[0] * ism[0] + vab[1] * ism[1]);
            let cu = 1.5 * (p.rs * (ism[0].powi(2) + ism[1].powi(2)) + p.rr * (irm[0].powi(2) + irm[1].powi(2)));
            let de = (out.state.field_energy(&p) - s.field_energy(&p)) / dt;
            let wm = (s.omega_r + out.state.omega_r) / 2.0 / p.poles();
            let p_mech = (s.torque(&p) + out.torque) / 2.0 * wm;
            let residual = p_in - cu - de - p_mech;
            if k > 100 {
                assert!(residual.abs() <= 0.005 * p_in.abs().max(cu), "step {k}: {residual} of {p_in}");
            }
            s = out.state;
        }
    }
}
