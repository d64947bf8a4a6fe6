use num_complex::Complex64;
use proptest::prelude::*;

use aris_core::channel::{los_probability, FadingRealization, LinkModel, SlotChannel};
use aris_core::phase_opt::{coordinate_ascent_phases, PhaseProblem};
use aris_core::rate::{expected_rate, rate_in_slack_vector, NodeSlacks, TaylorBound, XiCoefficients};
use aris_core::scheduling::{lp_dual_bound, node_averages, reconstruct_binary, solve_schedule_lp};
use aris_core::trajectory_opt::{linearize_elevation, slacks_at};
use aris_core::{Point2, Scenario};

fn rates(max_len: usize) -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec([0.0..8.0f64, 0.0..8.0f64], 1..max_len)
}

fn slacks() -> impl Strategy<Value = NodeSlacks> {
    (1.0..60.0f64, 1e4..2e6f64, 1.0..80.0f64).prop_map(|(x, y, z)| NodeSlacks { x, y, z, psi: 0.0, phi: 0.0 })
}

fn xi() -> impl Strategy<Value = XiCoefficients> {
    (1e5..1e12f64, 1e4..1e11f64, 1e4..1e11f64, 1e3..1e10f64).prop_map(|(ll, ln, nl, nn)| XiCoefficients { ll, ln, nl, nn })
}

fn slot_at(s: &Scenario, x: f64, y: f64, h: f64) -> SlotChannel {
    let fading = FadingRealization::for_scenario(s);
    SlotChannel::new(s, &fading, &Point2::new(x, y), h, LinkModel::Probabilistic).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn los_probability_is_a_monotone_probability(a in 0.0..90.0f64, b in 0.0..90.0f64) {
        let env = Scenario::desk().env;
        let (pa, pb) = (los_probability(a, env.a, env.b), los_probability(b, env.a, env.b));
        prop_assert!((0.0..=1.0).contains(&pa));
        if a < b {
            prop_assert!(pa <= pb);
        }
    }

    #[test]
    fn lp_meets_its_dual_bound(r in rates(30)) {
        let lp = solve_schedule_lp(&r).unwrap();
        prop_assert!(lp.is_feasible(1e-12));
        let [a, b] = node_averages(&lp.alpha, &r);
        prop_assert!((a.min(b) - lp.eta).abs() <= 1e-12);
        prop_assert!((lp.eta - lp_dual_bound(&r)).abs() <= 1e-9 * (1.0 + lp.eta));
    }

    #[test]
    fn reconstruction_is_binary_and_bounded_by_relaxation(r in rates(24)) {
        let lp = solve_schedule_lp(&r).unwrap();
        let rec = reconstruct_binary(&lp, &r).unwrap();
        prop_assert!(rec.schedule.is_binary());
        prop_assert!(rec.schedule.eta <= lp.eta + 1e-12);
        prop_assert!(rec.loss >= -1e-12);
    }

    #[test]
    fn taylor_bound_never_exceeds_rate(
        e in (slacks(), slacks()),
        p in (slacks(), slacks()),
        xi in xi(),
    ) {
        let env = Scenario::desk().env;
        let bound = TaylorBound::new(&e.0, &e.1, &xi, &env);
        let pt = [p.0.x, p.1.x, p.0.y, p.1.y, p.0.z, p.1.z];
        prop_assert!(bound.eval(&pt) <= rate_in_slack_vector(&pt, &xi, &env) + 1e-9);
        prop_assert!((bound.eval(&bound.at) - bound.value).abs() <= 1e-12 * (1.0 + bound.value));
    }

    #[test]
    fn slack_form_matches_expected_rate(x in -200.0..1000.0f64, y in -300.0..300.0f64, h in 100.0..500.0f64, rx in 0usize..2) {
        let s = Scenario::desk();
        let slot = slot_at(&s, x, y, h);
        let v = vec![Complex64::new(1.0, 0.0); s.ris.elements()];
        let gamma = s.node_gamma(1 - rx);
        let fading = FadingRealization::for_scenario(&s);
        let q = Point2::new(x, y);
        let dirs = [0, 1].map(|j| aris_core::channel::steering_vector(&q, h, &s.nodes[j].position, &s.ris));
        let xi = XiCoefficients::compute(&dirs[rx], &dirs[1 - rx], &fading.per_node[rx], &fading.per_node[1 - rx], &v, gamma, s.env.beta0).unwrap();
        let e_rx = slacks_at(&q, h, &s.nodes[rx].position, &s.env).unwrap();
        let e_tx = slacks_at(&q, h, &s.nodes[1 - rx].position, &s.env).unwrap();
        let pt = [e_rx.x, e_tx.x, e_rx.y, e_tx.y, e_rx.z, e_tx.z];
        let direct = expected_rate(&slot, &v, rx, gamma).expected;
        prop_assert!((rate_in_slack_vector(&pt, &xi, &s.env) - direct).abs() <= 1e-9 * (1.0 + direct));
    }

    #[test]
    fn elevation_tangent_is_a_lower_bound(r_prev in 0.5..3000.0f64, r in 0.0..4000.0f64, h in 100.0..500.0f64) {
        let t = linearize_elevation(&Point2::new(r_prev, 0.0), h, &Point2::zeros());
        prop_assert!(t.value_deg(r) <= (h / r).atan().to_degrees() + 1e-9);
    }

    #[test]
    fn phase_objective_ignores_common_phase(x in 0.0..800.0f64, y in -200.0..200.0f64, h in 100.0..500.0f64, theta in 0.0..6.28f64) {
        let s = Scenario::desk();
        let p = PhaseProblem::for_receiver(&slot_at(&s, x, y, h), 0, s.node_gamma(1));
        let v = p.alignment_baseline();
        let rotated: Vec<Complex64> = v.iter().map(|c| c * Complex64::from_polar(1.0, theta)).collect();
        let base = p.objective(&v);
        prop_assert!((p.objective(&rotated) - base).abs() <= 1e-12 * (1.0 + base));
    }

    #[test]
    fn coordinate_ascent_never_loses(x in 0.0..800.0f64, y in -200.0..200.0f64, h in 100.0..500.0f64, seed in 0u64..1000) {
        let s = Scenario::desk().with_ris(2, 2).unwrap();
        let p = PhaseProblem::for_receiver(&slot_at(&s, x, y, h), 1, s.node_gamma(0));
        let start: Vec<Complex64> = (0..4).map(|m| Complex64::from_polar(1.0, (seed as f64 * 0.37 + m as f64 * 1.3) % 6.28)).collect();
        let res = coordinate_ascent_phases(&start, &p, 50, 1e-12).unwrap();
        prop_assert!(res.objective >= p.objective(&start) - 1e-12);
        prop_assert!(res.v.iter().all(|c| (c.norm() - 1.0).abs() <= 1e-12));
    }

    #[test]
    fn scenario_config_round_trips(n in 2usize..200, dt in 2.0..10.0f64, seed in any::<u64>(), rows in 1usize..8, cols in 1usize..8) {
        let mut s = Scenario::desk().with_ris(rows, cols).unwrap();
        s.n_slots = n;
        s.slot_seconds = dt;
        s.fading_seed = seed;
        prop_assume!(s.validate().is_ok());
        let back = Scenario::from_config_str(&s.to_config_string()).unwrap();
        prop_assert_eq!(back, s);
    }
}
