use zsource_lab::engine::{
    assemble, simulate, simulate_observed, EngineError, SimConfig, Simulator, SwitchConfiguration, ROFF,
};
use zsource_lab::modulation::{Gates, ModulationSpec};
use zsource_lab::netlist::parse;

fn idle(period: f64) -> ModulationSpec {
    ModulationSpec::dcdc(0.0, 1.0 / period)
}

#[test]
fn resistive_divider() {
    let c = parse("V1 in 0 dc=10\nR1 in mid r=10\nR2 mid 0 r=10").unwrap();
    let t = simulate(&c, &idle(1e-3), &SimConfig::new(1e-3, 1e-3).probes(&["v(mid)"])).unwrap();
    assert!((t.column("v(mid)").unwrap()[0] - 5.0).abs() < 1e-12);
}

#[test]
fn open_windings_follow_turns() {
    let c = parse("V1 a 0 dc=1\nW3 y1 a 0 b 0 c 0 turns=1:2:2 lm=1m").unwrap();
    let sys = assemble(&c, &SwitchConfiguration::default(), 1e-6).unwrap();
    let x = sys.solve().unwrap();
    // open windings carry no current; the 1 nH leakage floor of winding 1
    // divides against 1 mH magnetizing
    let expected = 2.0 * 1e-3 / (1e-3 + 1e-9);
    let vb = sys.value(&x, "v(b)").unwrap();
    assert!((vb - expected).abs() < 1e-6, "{vb} vs {expected}");
    assert!((sys.value(&x, "v(c)").unwrap() - expected).abs() < 1e-6);
}

#[test]
fn blocking_diode_leaks_at_most_roff() {
    let c = parse("V1 in 0 dc=-5\nD1 in out\nR1 out 0 r=1").unwrap();
    let cfg = SwitchConfiguration {
        switches: vec![],
        diodes: vec![("d1".into(), false)],
    };
    let sys = assemble(&c, &cfg, 1e-6).unwrap();
    let x = sys.solve().unwrap();
    let i = -sys.value(&x, "i(v1)").unwrap();
    assert!(i.abs() <= 5.0 / ROFF);
}

#[test]
fn rc_discharge_matches_exponential() {
    let c = parse("C1 a 0 c=1 v0=1\nR1 a 0 r=1").unwrap();
    let t = simulate(&c, &idle(1.0), &SimConfig::new(1e-3, 1.0).probes(&["v(a)"])).unwrap();
    let v = *t.column("v(a)").unwrap().last().unwrap();
    assert!((v - (-1.0f64).exp()).abs() < 1e-3, "{v}");
}

#[test]
fn lc_tank_conserves_energy() {
    let c = parse("C1 a 0 c=1 v0=1\nL1 a 0 l=1").unwrap();
    let period = 2.0 * std::f64::consts::PI;
    let dt = period / 2000.0;
    let cfg = SimConfig::new(dt, 10.0 * period).probes(&["v(a)", "i(l1)"]);
    let t = simulate(&c, &ModulationSpec::dcdc(0.0, 1.0 / period), &cfg).unwrap();
    let (v, i) = (t.column("v(a)").unwrap(), t.column("i(l1)").unwrap());
    // the backward-Euler start step costs O(dt^2); trapezoidal steps after it are lossless
    let e1 = 0.5 * v[0] * v[0] + 0.5 * i[0] * i[0];
    for k in 0..t.len() {
        let e = 0.5 * v[k] * v[k] + 0.5 * i[k] * i[k];
        assert!((e - e1).abs() <= 1e-6 * e1, "step {k}: {e} vs {e1}");
    }
}

#[test]
fn series_diode_conducts_one_way() {
    let fwd = parse("V1 in 0 dc=1\nD1 in out\nR1 out 0 r=1").unwrap();
    let t = simulate(&fwd, &idle(1e-3), &SimConfig::new(1e-3, 2e-3).probes(&["i(r1)"])).unwrap();
    assert!((t.column("i(r1)").unwrap()[1] - 1.0).abs() < 1e-2);
    let rev = parse("V1 in 0 dc=-1\nD1 in out\nR1 out 0 r=1").unwrap();
    let t = simulate(&rev, &idle(1e-3), &SimConfig::new(1e-3, 2e-3).probes(&["i(r1)"])).unwrap();
    assert!(t.column("i(r1)").unwrap()[1].abs() < 1e-5);
}

/// Brute force: try both diode states and keep the self-consistent one.
fn brute_force_conducts(v: f64, vf: f64) -> bool {
    let c = parse(&format!("V1 in 0 dc={v}\nD1 in out vf={vf}\nR1 out 0 r=10")).unwrap();
    let consistent = |on: bool| {
        let cfg = SwitchConfiguration {
            switches: vec![],
            diodes: vec![("d1".into(), on)],
        };
        let sys = assemble(&c, &cfg, 1e-6).unwrap();
        let x = sys.solve().unwrap();
        let vd = v - sys.value(&x, "v(out)").unwrap();
        if on {
            vd - vf >= 0.0
        } else {
            vd - vf <= 0.0
        }
    };
    let (on, off) = (consistent(true), consistent(false));
    assert!(on != off || v == vf);
    on
}

#[test]
fn half_wave_rectifier_states() {
    let vf = 0.7;
    for k in 0..200 {
        let v = 5.0 * (2.0 * std::f64::consts::PI * (k as f64 + 0.5) / 200.0).sin();
        let c = parse(&format!("V1 in 0 dc={v}\nD1 in out vf={vf}\nR1 out 0 r=10")).unwrap();
        let mut sim = Simulator::new(&c, 1e-6).unwrap();
        sim.step(Gates::default()).unwrap();
        let solver_on = sim.configuration().diodes[0].1;
        assert_eq!(solver_on, v > vf, "v={v}");
        assert_eq!(solver_on, brute_force_conducts(v, vf), "v={v}");
    }
}

fn boost(d: f64) -> String {
    format!(
        "V1 in 0 dc=10\nL1 in x l=1m\nS1 x 0 gate=st\nD1 x out\nC1 out 0 c=100u\nR1 out 0 r=10\n# d={d}\n"
    )
}

#[test]
fn plain_boost_doubles_input() {
    let c = parse(&boost(0.5)).unwrap();
    let spec = ModulationSpec::dcdc(0.5, 20e3);
    let cfg = SimConfig::new(1e-7, 0.05).probes(&["v(out)"]).record_from(0.045, 1);
    let t = simulate(&c, &spec, &cfg).unwrap();
    let v = t.column("v(out)").unwrap();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    assert!((mean - 20.0).abs() < 0.02 * 20.0, "{mean}");
}

#[test]
fn zero_source_circuit_stays_zero() {
    let c = parse("R1 a 0 r=1\nC1 a b c=1u\nL1 b 0 l=1m").unwrap();
    let t = simulate(&c, &idle(1e-4), &SimConfig::new(1e-6, 1e-3)).unwrap();
    assert!(t.columns.iter().flatten().all(|v| *v == 0.0));
}

#[test]
fn step_must_divide_switching_period() {
    let c = parse(&boost(0.5)).unwrap();
    let err = simulate(&c, &ModulationSpec::dcdc(0.5, 20e3), &SimConfig::new(3e-7, 1e-4)).unwrap_err();
    assert!(matches!(err, EngineError::Config(_)));
}

#[test]
fn unknown_probe_is_rejected() {
    let c = parse("V1 a 0 dc=1\nR1 a 0 r=1").unwrap();
    let err = simulate(&c, &idle(1e-3), &SimConfig::new(1e-3, 1e-3).probes(&["v(zz)"])).unwrap_err();
    assert_eq!(err, EngineError::UnknownProbe("v(zz)".into()));
}

#[test]
fn parallel_sources_are_singular() {
    let c = parse("V1 a 0 dc=1\nV2 a 0 dc=2\nR1 a 0 r=1").unwrap();
    let err = simulate(&c, &idle(1e-3), &SimConfig::new(1e-3, 1e-3)).unwrap_err();
    assert!(matches!(err, EngineError::Singular { .. }), "{err:?}");
}

#[test]
fn boost_energy_audit_and_complementarity() {
    let c = parse(&boost(0.5)).unwrap();
    let spec = ModulationSpec::dcdc(0.5, 20e3);
    let mut worst: f64 = 0.0;
    let mut audit = None;
    simulate_observed(&c, &spec, &SimConfig::new(1e-7, 0.01).probes(&["v(out)"]), |sim, _| {
        let on = sim.configuration().diodes[0].1;
        let i = sim.value(sim.probe("i(d1)").unwrap());
        let v = sim.value(sim.probe("v(d1)").unwrap());
        worst = worst.max(if on { -i } else { v });
        audit = Some(sim.audit());
    })
    .unwrap();
    assert!(worst <= 1e-9, "{worst}");
    let audit = audit.unwrap();
    assert!(audit.max_step_residual < 5e-3, "{audit:?}");
    assert!(audit.relative_residual() < 5e-3, "{audit:?}");
}
