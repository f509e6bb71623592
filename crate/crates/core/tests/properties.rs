use proptest::prelude::*;

use qtmlab::aggregation::{wagering_payoffs, WagerState};
use qtmlab::analysis::{bound_gap, bound_p1, bound_spread};
use qtmlab::equilibrium::{solve_equilibrium, SolveOptions};
use qtmlab::instance::compute_stats;
use qtmlab::qtm::{dominated_box, hessian, settle, softmax, utility};
use qtmlab::synthetic::{commit, default_synthetic_players, synthetic_game_oracle, FocScaling};
use qtmlab::{MechanismParams, ValueProfile, VoteProfile};

fn profile(max_n: usize, m: usize) -> impl Strategy<Value = ValueProfile> {
    (1..=max_n)
        .prop_flat_map(move |n| prop::collection::vec(prop::collection::vec(0.0..1.0f64, m), n))
        .prop_filter_map("all-zero profile", |rows| {
            ValueProfile::new(rows).ok().filter(|v| v.max_value() > 0.0)
        })
}

fn votes(n: usize, m: usize) -> impl Strategy<Value = VoteProfile> {
    prop::collection::vec(prop::collection::vec(-3.0..3.0f64, m), n)
        .prop_map(|r| VoteProfile::new(r).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stats_are_permutation_invariant(v in profile(8, 3), perm in Just(vec![2usize, 0, 1])) {
        let a = compute_stats(&v, None).unwrap();
        let b = compute_stats(&v.permuted(&perm).unwrap(), None).unwrap();
        prop_assert!((a.spread - b.spread).abs() < 1e-12);
        prop_assert!((a.gap - b.gap).abs() < 1e-12);
    }

    #[test]
    fn disagreement_matches_moment_identity(v in profile(20, 2)) {
        let stats = compute_stats(&v, None).unwrap();
        if let Some(d) = stats.disagreement {
            let (top, second) = (stats.order[0], stats.order[1]);
            let xs: Vec<f64> = v.values().iter().map(|r| r[top] - r[second]).collect();
            let n = xs.len() as f64;
            let mu = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
            let identity = (var + mu * mu) / (mu * mu) / n;
            prop_assert!((d - identity).abs() <= 1e-10 * identity.max(1.0));
        }
    }

    #[test]
    fn softmax_is_shift_invariant(a in prop::collection::vec(-20.0..20.0f64, 2..6), t in -50.0..50.0f64) {
        let p = softmax(&a).unwrap();
        let shifted: Vec<f64> = a.iter().map(|x| x + t).collect();
        let q = softmax(&shifted).unwrap();
        for (x, y) in p.probabilities().iter().zip(q.probabilities()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn concave_regime_hessians_are_negative_definite(v in profile(4, 3), a in votes(4, 3)) {
        let a = VoteProfile::new(a.rows()[..v.n()].to_vec()).unwrap();
        let prm = MechanismParams::half_max(&v).unwrap();
        for i in 0..v.n() {
            prop_assert!(hessian(i, &a, &v, &prm).unwrap().negative_definite);
        }
    }

    #[test]
    fn redistribution_balances_budget(a in votes(6, 3), c in 0.1..5.0f64) {
        let prm = MechanismParams::new(c).unwrap();
        let r = settle(&a, &prm, true).unwrap();
        prop_assert!(r.net_transfers.iter().sum::<f64>().abs() < 1e-12);
        prop_assert!((r.revenue - r.per_agent_charge.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn redistribution_does_not_change_own_incentives(a in votes(3, 2), alt in prop::collection::vec(-3.0..3.0f64, 2)) {
        let v = ValueProfile::new(vec![vec![1.0, 0.2], vec![0.0, 0.7], vec![0.4, 0.4]]).unwrap();
        let prm = MechanismParams::new(0.5).unwrap();
        let mut b = a.clone();
        b.set_row(0, &alt);
        let on = utility(0, &a, &v, &prm, true).unwrap() - utility(0, &b, &v, &prm, true).unwrap();
        let off = utility(0, &a, &v, &prm, false).unwrap() - utility(0, &b, &v, &prm, false).unwrap();
        prop_assert!((on - off).abs() < 1e-12);
    }

    #[test]
    fn two_alternative_equilibria_satisfy_invariants(v in profile(12, 2)) {
        let prm = MechanismParams::half_max(&v).unwrap();
        let eq = solve_equilibrium(&v, &prm, &SolveOptions::default()).unwrap();
        prop_assert!(eq.foc_residual <= 1e-10);
        prop_assert!(eq.aggregates.iter().sum::<f64>().abs() <= 1e-10);
        for row in eq.votes.rows() {
            prop_assert!(row.iter().sum::<f64>().abs() <= 1e-12);
        }
        let w = v.aggregates();
        let (top, low) = if w[0] >= w[1] { (0, 1) } else { (1, 0) };
        let delta = w[top] - w[low];
        if delta > 0.0 {
            prop_assert!(eq.p[top] > 0.5);
            prop_assert!(eq.p[top] >= bound_p1(prm.c, delta));
        }
        let radius = dominated_box(&v, &prm);
        for (row, r) in eq.votes.rows().iter().zip(&radius) {
            prop_assert!(row.iter().all(|a| a.abs() <= *r));
        }
        let stats = compute_stats(&v, None).unwrap();
        let ppoa = eq.p.expectation(&w) / w[top];
        prop_assert!(ppoa >= bound_spread(stats.spread) - 1e-9);
        prop_assert!(ppoa >= bound_gap(stats.gap) - 1e-9);
    }

    #[test]
    fn solving_commutes_with_relabeling(v in profile(6, 3)) {
        let prm = MechanismParams::half_max(&v).unwrap();
        let perm = [1usize, 2, 0];
        let a = solve_equilibrium(&v, &prm, &SolveOptions::default()).unwrap();
        let b = solve_equilibrium(&v.permuted(&perm).unwrap(), &prm, &SolveOptions::default()).unwrap();
        for (k, &old) in perm.iter().enumerate() {
            prop_assert!((b.aggregates[k] - a.aggregates[old]).abs() < 1e-10);
        }
    }

    #[test]
    fn synthetic_votes_sum_to_zero(v in profile(5, 3), bhat in prop::collection::vec(0.0..4.0f64, 3)) {
        let prm = MechanismParams::half_max(&v).unwrap();
        let com = commit(&v.aggregates(), &bhat, &prm, FocScaling::HalfC, &Default::default()).unwrap();
        prop_assert!(com.a_mech.iter().sum::<f64>().abs() < 1e-10);
    }

    #[test]
    fn commitment_matches_synthetic_game(v in profile(6, 2), bhat in prop::collection::vec(0.0..4.0f64, 2)) {
        let prm = MechanismParams::half_max(&v).unwrap();
        let com = commit(&v.aggregates(), &bhat, &prm, FocScaling::HalfC, &Default::default()).unwrap();
        let eq = synthetic_game_oracle(&v, &bhat, &prm, default_synthetic_players(&bhat, &prm)).unwrap();
        prop_assert!((com.p[0] - eq.p[0]).abs() < 1e-9);
    }

    #[test]
    fn wagering_payoffs_sum_to_zero(
        preds in prop::collection::vec(prop::collection::vec(0.0..2.0f64, 2), 2..6),
        bstar in 0.0..2.0f64,
        a in -2.0..2.0f64,
    ) {
        let s = WagerState::new(1.0, preds).unwrap();
        let p = softmax(&[a, 0.0]).unwrap();
        for k in 0..2 {
            prop_assert!(wagering_payoffs(&s, k, &p, bstar).unwrap().iter().sum::<f64>().abs() < 1e-12);
        }
    }
}
