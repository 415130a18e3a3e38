use dopt_lab::dataset::TupleDataset;
use dopt_lab::dp::{compute_u, compute_u_bstar_recursive, policy_performance, Baseline, ExactSolver, ValueTables};
use dopt_lab::enumerate::{enumerate_trajectories, exact_moments, DEFAULT_ENUMERATION_CAP};
use dopt_lab::envs::{build_gridworld, generate_offline_log, random_behavior, random_mdp, GridworldSpec};
use dopt_lab::estimators::{baseline_return, on_policy_return, pdis_return};
use dopt_lab::mdp::validate_policy;
use dopt_lab::theorems::random_challenger;
use dopt_lab::{ActionTable, Dims, RngSpec};
use proptest::prelude::*;

fn small_dims() -> impl Strategy<Value = Dims> {
    (1usize..=4, 1usize..=3, 1usize..=3).prop_map(|(s, a, t)| Dims::new(s, a, t))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn optimal_behavior_rows_are_simplices(dims in small_dims(), seed in any::<u64>()) {
        let (mdp, pi) = random_mdp(dims, seed).unwrap();
        let solver = ExactSolver::new(&mdp, &pi).unwrap();
        let sol = solver.optimal_behavior(&solver.b_star()).unwrap();
        prop_assert!(validate_policy(&sol.mu_star, &mdp).is_empty());
        prop_assert!(sol.u.data.iter().all(|&u| u >= 0.0));
        prop_assert!(sol.variance.data.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn u_recursions_agree_and_vanish_at_the_end(dims in small_dims(), seed in any::<u64>()) {
        let (mdp, pi) = random_mdp(dims, seed).unwrap();
        let tables = ValueTables::solve(&mdp, &pi).unwrap();
        let b_star = Baseline::new(tables.q.clone(), &pi).unwrap();
        let full = compute_u(&mdp, &pi, &b_star).unwrap();
        let short = compute_u_bstar_recursive(&mdp, &pi, &tables.nu).unwrap();
        prop_assert!(full.max_abs_diff(&short) < 1e-9);
        for s in 0..dims.num_states {
            prop_assert!(full.row(dims.horizon - 1, s).iter().all(|&u| u == 0.0));
            prop_assert!(short.row(dims.horizon - 1, s).iter().all(|&u| u == 0.0));
        }
    }

    #[test]
    fn every_estimator_is_unbiased(dims in small_dims(), seed in any::<u64>()) {
        let (mdp, pi) = random_mdp(dims, seed).unwrap();
        let truth = policy_performance(&mdp, &pi).unwrap();
        let key = RngSpec::from_seed(seed);
        let solver = ExactSolver::new(&mdp, &pi).unwrap();
        let (mu, b) = random_challenger(&solver, &key.split(1)).unwrap();
        let classic = random_behavior(dims, &key.split(2));

        let on = enumerate_trajectories(&mdp, &pi, DEFAULT_ENUMERATION_CAP).unwrap();
        let (m, _) = exact_moments(&on, |tr| Ok(on_policy_return(tr))).unwrap();
        prop_assert!((m - truth).abs() < 1e-9);

        let paths = enumerate_trajectories(&mdp, &classic, DEFAULT_ENUMERATION_CAP).unwrap();
        let (m, _) = exact_moments(&paths, |tr| pdis_return(tr, &pi, &classic)).unwrap();
        prop_assert!((m - truth).abs() < 1e-9);

        let paths = enumerate_trajectories(&mdp, &mu, DEFAULT_ENUMERATION_CAP).unwrap();
        let (m, var) = exact_moments(&paths, |tr| baseline_return(tr, &pi, &mu, &b)).unwrap();
        prop_assert!((m - truth).abs() < 1e-9);
        let per_step = solver.estimator_variance(&mu, &b).unwrap();
        prop_assert!((solver.total_variance(&per_step) - var).abs() < 1e-9);
    }

    #[test]
    fn optimal_pair_beats_any_challenger(dims in small_dims(), seed in any::<u64>()) {
        let (mdp, pi) = random_mdp(dims, seed).unwrap();
        let solver = ExactSolver::new(&mdp, &pi).unwrap();
        let best = solver.optimal_behavior(&solver.b_star()).unwrap().variance;
        let (mu, b) = random_challenger(&solver, &RngSpec::from_seed(seed).split(7)).unwrap();
        let other = solver.estimator_variance(&mu, &b).unwrap();
        for (x, y) in best.data.iter().zip(&other.data) {
            prop_assert!(*x <= y + 1e-9);
        }
    }

    #[test]
    fn enumeration_mass_is_one(dims in small_dims(), seed in any::<u64>()) {
        let (mdp, pi) = random_mdp(dims, seed).unwrap();
        let paths = enumerate_trajectories(&mdp, &pi, DEFAULT_ENUMERATION_CAP).unwrap();
        let mass: f64 = paths.iter().map(|(_, p)| p).sum();
        prop_assert!((mass - 1.0).abs() < 1e-10);
    }

    #[test]
    fn generators_are_pure(dims in small_dims(), seed in any::<u64>()) {
        prop_assert_eq!(random_mdp(dims, seed).unwrap(), random_mdp(dims, seed).unwrap());
    }

    #[test]
    fn baseline_average_tracks_target(dims in small_dims(), seed in any::<u64>()) {
        let (_, pi) = random_mdp(dims, seed).unwrap();
        let raw = random_behavior(dims, &RngSpec::from_seed(seed));
        let b = Baseline::new(ActionTable::from(raw), &pi).unwrap();
        for t in 0..dims.horizon {
            for s in 0..dims.num_states {
                let avg: f64 = pi.row(t, s).iter().zip(b.b.row(t, s)).map(|(p, x)| p * x).sum();
                prop_assert!((avg - b.b_bar.get(t, s)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gridworld_rows_sum_to_one(n in 2usize..7, slip in 0.0f64..=1.0, seed in any::<u64>()) {
        let spec = GridworldSpec { n, slip, reward_seed: seed, policy_seed: seed };
        let mdp = build_gridworld(&spec).unwrap();
        for s in 0..n * n {
            for a in 0..4 {
                let row = mdp.transition_row(s, a);
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(mdp.reward_sa(s, a) >= 0.0 && mdp.reward_sa(s, a) < 1.0);
            }
        }
    }

    #[test]
    fn datasets_round_trip(seed in any::<u64>(), episodes in 1usize..20) {
        let dims = Dims::new(3, 2, 3);
        let (mdp, pi) = random_mdp(dims, seed).unwrap();
        let log = generate_offline_log(&mdp, &[pi], episodes, seed).unwrap();
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf).unwrap();
        prop_assert_eq!(TupleDataset::read_jsonl(buf.as_slice(), dims).unwrap(), log);
    }

    #[test]
    fn models_and_policies_round_trip_exactly(dims in small_dims(), seed in any::<u64>()) {
        let (mdp, pi) = random_mdp(dims, seed).unwrap();
        let text = serde_json::to_string(&mdp).unwrap();
        prop_assert_eq!(serde_json::from_str::<dopt_lab::FiniteMdp>(&text).unwrap(), mdp);
        let text = serde_json::to_string(&pi).unwrap();
        prop_assert_eq!(serde_json::from_str::<dopt_lab::TimedPolicy>(&text).unwrap(), pi);
    }
}
