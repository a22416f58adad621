use proptest::prelude::*;
use rand::Rng;

use air_rl::algos::{fqi_air_sweep, Policy, RulePolicy, TabularPolicy};
use air_rl::approx::{argmax, FClass, FitConfig};
use air_rl::collect::{behavior_policy, collect_dataset, make_env, tabular_env, BehaviorKind};
use air_rl::dataset::{dataset_to_csv, parse_dataset_csv, split_dataset};
use air_rl::envs::{make_random_tabular_air_mdp, measure_air_epsilon};
use air_rl::eval::{dp_solve, j_hat, ReplayMdp};
use air_rl::harness::spec_for;
use air_rl::models::{empirical_exo_mdp, EndoModel};
use air_rl::{AirSpec, Dataset, Endo, RngStream};

fn tabular_data(seed: u64, n: usize) -> Dataset {
    let mut rng = RngStream::new(seed, "prop/mdp");
    let m = make_random_tabular_air_mdp(3, 2, 2, 4, 0.1, &mut rng).unwrap();
    let mut env = tabular_env(m);
    collect_dataset(&mut env, &Policy::Rule(RulePolicy::Uniform { n_actions: 2 }), "uniform", n, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn rng_streams_repeat(seed in any::<u64>(), label in "[a-z/0-9]{1,16}") {
        let mut a = RngStream::new(seed, label.clone());
        let mut b = RngStream::new(seed, label.clone());
        for _ in 0..1000 {
            prop_assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
        let mut c = RngStream::new(seed, format!("{label}x"));
        let mut a = RngStream::new(seed, label);
        prop_assert_ne!(a.random::<u64>(), c.random::<u64>());
    }

    #[test]
    fn csv_round_trip_is_bit_exact(seed in any::<u64>(), env_id in prop::sample::select(vec!["order", "inventory"])) {
        let mut env = make_env(env_id, 0.2, seed).unwrap();
        let pi = behavior_policy(env_id, BehaviorKind::Random).unwrap();
        let d = collect_dataset(env.as_mut(), &pi, "random", 2, seed).unwrap();
        let back = parse_dataset_csv(&dataset_to_csv(&d), d.meta.clone()).unwrap();
        for (x, y) in d.episodes.iter().zip(&back.episodes) {
            for (s, t) in x.steps.iter().zip(&y.steps) {
                prop_assert_eq!(s.reward.to_bits(), t.reward.to_bits());
                prop_assert!(s.state.exo.iter().zip(&t.state.exo).all(|(p, q)| p.to_bits() == q.to_bits()));
            }
        }
        prop_assert_eq!(dataset_to_csv(&back), dataset_to_csv(&d));
    }

    #[test]
    fn split_partitions(seed in any::<u64>(), n in 1usize..12, fraction in 0.05f64..0.95) {
        let d = tabular_data(seed, n);
        let (a, b) = split_dataset(&d, fraction, &mut RngStream::new(seed, "split")).unwrap();
        prop_assert_eq!(a.len(), (fraction * n as f64 + 0.5).floor() as usize);
        prop_assert_eq!(a.len() + b.len(), n);
        for ep in &d.episodes {
            let hits = a.episodes.iter().chain(&b.episodes).filter(|e| *e == ep).count();
            prop_assert!(hits >= 1);
        }
    }

    #[test]
    fn random_mdps_are_normalized_and_within_eps(
        seed in any::<u64>(), nx in 1usize..6, ne in 1usize..4, na in 1usize..4, h in 1usize..6, eps in 0.0f64..1.0,
    ) {
        let mut rng = RngStream::new(seed, "prop/gen");
        let m = make_random_tabular_air_mdp(nx, ne, na, h, eps, &mut rng).unwrap();
        prop_assert!(m.validate().is_ok());
        for row in m.p_exo.chunks(nx) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        for row in m.p_end.chunks(ne) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        let measured = measure_air_epsilon(&m);
        prop_assert!(measured <= eps + 1e-12);
        if nx >= 2 && na >= 2 {
            prop_assert!(measured >= 0.5 * eps - 1e-12);
        }
        let zero = make_random_tabular_air_mdp(nx, ne, na, h, 0.0, &mut rng).unwrap();
        prop_assert_eq!(measure_air_epsilon(&zero), 0.0);
    }

    #[test]
    fn optimal_values_dominate(seed in any::<u64>(), eps in 0.0f64..0.5) {
        let mut rng = RngStream::new(seed, "prop/dp");
        let m = make_random_tabular_air_mdp(4, 3, 3, 5, eps, &mut rng).unwrap();
        let opt = dp_solve(&m, None).unwrap();
        for k in 0..4 {
            let pi = Policy::Table(TabularPolicy::random(5, 4, 3, 3, k % 2 == 0, &mut rng));
            let sol = dp_solve(&m, Some(&pi)).unwrap();
            for h in 0..=5 {
                for x in 0..4 {
                    for e in 0..3 {
                        prop_assert!(opt.value(&m, h, x, e) >= sol.value(&m, h, x, e) - 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn j_hat_is_the_average_of_its_returns(seed in any::<u64>(), n in 1usize..8, action in 0usize..2) {
        let d = tabular_data(seed, n);
        let mut rng = RngStream::new(seed, "prop/mdp");
        let m = make_random_tabular_air_mdp(3, 2, 2, 4, 0.1, &mut rng).unwrap();
        let spec = AirSpec::new(4, 0.1, 0.0, m.r_max, 2, (0..2).map(Endo::Int).collect()).unwrap();
        let model = EndoModel::Tabular { mdp: std::sync::Arc::new(m) };
        let pi = Policy::Rule(RulePolicy::Constant { action, n_actions: 2 });
        let rep = j_hat(&pi, &d, &model, &spec, &mut RngStream::new(seed, "prop/j")).unwrap();
        let mut sum = 0.0;
        for r in &rep.returns {
            sum += r;
        }
        prop_assert_eq!(rep.j_hat.to_bits(), (sum / n as f64).to_bits());
        prop_assert_eq!(rep.returns.len(), n);
    }

    #[test]
    fn argmax_prefers_the_lowest_index_and_ignores_shifts(
        vals in prop::collection::vec(-3i32..3, 1..8), shift in -100.0f64..100.0,
    ) {
        let v: Vec<f64> = vals.iter().map(|&x| f64::from(x)).collect();
        let best = argmax(&v);
        let top = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(best, v.iter().position(|&x| x == top).unwrap());
        let shifted: Vec<f64> = v.iter().map(|x| x + shift.round()).collect();
        prop_assert_eq!(argmax(&shifted), best);
    }

    #[test]
    fn order_execution_episodes_respect_inventory(seed in any::<u64>(), eps in 0.0f64..1.0) {
        let mut env = make_env("order", eps, seed).unwrap();
        let pi = Policy::Rule(RulePolicy::Uniform { n_actions: 6 });
        let d = collect_dataset(env.as_mut(), &pi, "uniform", 2, seed).unwrap();
        for ep in &d.episodes {
            let mut last = 10;
            let mut top: f64 = 0.0;
            for (h, step) in ep.steps.iter().enumerate() {
                let p = ep.state(h).endo.as_int().unwrap();
                prop_assert!(p <= last);
                last = p;
                prop_assert!(step.state.exo.iter().all(|x| (0.0..=1.0).contains(x)));
                top = top.max(step.state.exo[2]);
            }
            prop_assert!(ep.total_reward() <= 10.0 * top + 1e-12);
        }
    }

    #[test]
    fn inventory_episodes_stay_in_range(seed in any::<u64>(), eps in 0.0f64..1.0) {
        let mut env = make_env("inventory", eps, seed).unwrap();
        let pi = Policy::Rule(RulePolicy::Uniform { n_actions: 11 });
        let d = collect_dataset(env.as_mut(), &pi, "uniform", 2, seed).unwrap();
        for ep in &d.episodes {
            for (h, step) in ep.steps.iter().enumerate() {
                prop_assert!(ep.state(h).endo.scalar() >= 0.0);
                prop_assert!((-100.0..=0.0).contains(&step.reward));
            }
        }
    }

    #[test]
    fn frozen_order_sweep_is_replay_optimal(seed in 0u64..1000, n in 1usize..3) {
        let mut env = make_env("order_frozen", 0.0, seed).unwrap();
        let pi = behavior_policy("order", BehaviorKind::Random).unwrap();
        let d = collect_dataset(env.as_mut(), &pi, "random", n, seed).unwrap();
        let spec = spec_for(&d, 0).unwrap();
        let policy = fqi_air_sweep(&d, &EndoModel::Order, &spec, FClass::Tabular, &FitConfig::default()).unwrap().policy;
        let replay = ReplayMdp::new(empirical_exo_mdp(&d), EndoModel::Order, spec);
        let (optimum, _) = replay.solve().unwrap();
        prop_assert!((replay.evaluate(&policy).unwrap() - optimum).abs() <= 1e-9);
    }
}
