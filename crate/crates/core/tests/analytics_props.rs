use proptest::prelude::*;
use zsource_lab::analytics::{
    boost_proposed, cap_voltages, dc_link, dc_link_from_caps, duty_feasibility, nst_inductor_voltages, solve_duty,
};
use zsource_lab::refmodel::averaged_steady_state;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// (k, p, d, v_dc) with d strictly inside the feasible range.
fn feasible() -> impl Strategy<Value = (f64, f64, f64, f64)> {
    (0.2f64..5.0, 0.2f64..5.0, 0.0f64..0.95, 1.0f64..500.0)
        .prop_map(|(k, p, frac, v)| (k, p, frac * duty_feasibility(k, p), v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn duty_round_trip((k, p, d, _) in feasible()) {
        let b = boost_proposed(k, p, d).unwrap();
        prop_assert!((solve_duty(b, k, p).unwrap() - d).abs() < 1e-9);
    }

    #[test]
    fn link_matches_cap_recombination((k, p, d, v) in feasible()) {
        let (c1, c2) = cap_voltages(k, p, d, v).unwrap();
        let link = dc_link(k, p, d, v).unwrap();
        prop_assert!(rel(dc_link_from_caps(k, p, v, c1, c2), link) < 1e-9);
    }

    #[test]
    fn volt_second_closes((k, p, d, v) in feasible()) {
        let (c1, c2) = cap_voltages(k, p, d, v).unwrap();
        let (l1_nst, lr_nst) = nst_inductor_voltages(k, p, v, c1, c2);
        // shoot-through: winding 1 sees the source plus C1 through 1 + P turns, Lr sees C2
        let l1_st = (v + c1) / (1.0 + p);
        let lr_st = c2;
        let scale = v.abs();
        prop_assert!((d * l1_st + (1.0 - d) * l1_nst).abs() < 1e-9 * scale);
        prop_assert!((d * lr_st + (1.0 - d) * lr_nst).abs() < 1e-9 * scale);
    }

    #[test]
    fn boost_increases_with_duty((k, p, d, _) in feasible(), step in 1e-6f64..1e-2) {
        let d2 = d + step * (duty_feasibility(k, p) - d);
        prop_assert!(boost_proposed(k, p, d2).unwrap() > boost_proposed(k, p, d).unwrap());
    }

    #[test]
    fn equal_turns_reduce_to_classic(k in 0.2f64..5.0, d in 0.0f64..0.499) {
        prop_assert!(rel(boost_proposed(k, k, d).unwrap(), 1.0 / (1.0 - 2.0 * d)) < 1e-12);
    }

    #[test]
    fn averaged_model_matches_closed_form((k, p, d, v) in feasible()) {
        let (a1, a2) = averaged_steady_state(k, p, d, v).unwrap();
        let (c1, c2) = cap_voltages(k, p, d, v).unwrap();
        // v_C1 vanishes at d = 0; compare against the source scale there
        prop_assert!((a1 - c1).abs() <= 1e-9 * c1.abs().max(v.abs()));
        prop_assert!(rel(a2, c2) < 1e-9);
    }
}

#[test]
fn infeasible_duty_names_the_bound() {
    let e = boost_proposed(2.0, 2.0, 0.6).unwrap_err().to_string();
    assert!(e.contains("d_max=0.5"), "{e}");
}
