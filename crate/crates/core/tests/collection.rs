use air_rl::algos::Policy;
use air_rl::collect::{
    behavior_policy, collect_dataset, make_env, train_online_collector, BehaviorKind, CollectorConfig,
};
use air_rl::dataset::{dataset_to_csv, validate_dataset};
use air_rl::eval::j_true_mc;
use air_rl::harness::{percentile, runs_for, spec_for, Algo, Figure, ReproOptions};
use air_rl::config::Config;
use air_rl::{Endo, FactoredState, RngStream};

#[test]
fn order_random_frequency_of_holding() {
    let pi = behavior_policy("order", BehaviorKind::Random).unwrap();
    let s = FactoredState::new(vec![0.5; 3], Endo::Int(10));
    let mut rng = RngStream::new(1, "freq");
    let zeros = (0..100_000).filter(|_| pi.act(&s, 0, &mut rng).unwrap() == 0).count();
    let f = zeros as f64 / 1e5;
    assert!((f - 0.75).abs() <= 0.005, "{f}");
}

#[test]
fn fixed_rules() {
    let mut rng = RngStream::new(2, "rules");
    let inv = behavior_policy("inventory", BehaviorKind::Constant).unwrap();
    let s = FactoredState::new(vec![12.3], Endo::Real(vec![0.0]));
    assert_eq!(inv.act(&s, 0, &mut rng).unwrap(), 10);
    let s = FactoredState::new(vec![4.7], Endo::Real(vec![0.0]));
    assert_eq!(inv.act(&s, 0, &mut rng).unwrap(), 4);
    let order = behavior_policy("order", BehaviorKind::Constant).unwrap();
    let s = FactoredState::new(vec![0.5; 3], Endo::Int(10));
    assert!((0..100).all(|h| order.act(&s, h, &mut rng).unwrap() == 0));
    let rnd = behavior_policy("inventory", BehaviorKind::Random).unwrap();
    let s = FactoredState::new(vec![1.5], Endo::Real(vec![0.0]));
    for _ in 0..200 {
        assert!(rnd.act(&s, 0, &mut rng).unwrap() <= 4);
    }
    assert!(behavior_policy("order", BehaviorKind::Learned).is_err());
    assert!(behavior_policy("weather", BehaviorKind::Random).is_err());
    assert!("greedy".parse::<BehaviorKind>().is_err());
}

#[test]
fn environment_construction_errors() {
    assert!(make_env("order", 1.5, 0).is_err());
    assert!(make_env("order", -0.1, 0).is_err());
    assert!(make_env("traffic", 0.0, 0).is_err());
}

#[test]
fn collected_datasets() {
    let mut env = make_env("order", 0.0, 3).unwrap();
    let pi = behavior_policy("order", BehaviorKind::Constant).unwrap();
    let d = collect_dataset(env.as_mut(), &pi, "constant", 5, 3).unwrap();
    let csv = dataset_to_csv(&d);
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.iter().filter(|r| !r.ends_with(",,")).count(), 500);
    assert_eq!(rows.len(), 505);
    for ep in &d.episodes {
        for (h, step) in ep.steps.iter().enumerate() {
            assert_eq!(step.reward, 0.0);
            assert_eq!(ep.state(h).endo, Endo::Int(10));
        }
    }
    let again = collect_dataset(env.as_mut(), &pi, "constant", 5, 3).unwrap();
    assert_eq!(dataset_to_csv(&again), csv);
    assert!(collect_dataset(env.as_mut(), &pi, "constant", 0, 3).is_err());
}

#[test]
fn collected_datasets_validate() {
    for env_id in ["order", "inventory"] {
        for kind in [BehaviorKind::Random, BehaviorKind::Constant] {
            let mut env = make_env(env_id, 0.3, 4).unwrap();
            let pi = behavior_policy(env_id, kind).unwrap();
            let d = collect_dataset(env.as_mut(), &pi, &kind.to_string(), 3, 4).unwrap();
            let spec = spec_for(&d, 0).unwrap();
            assert_eq!(validate_dataset(&d, &spec), Vec::<String>::new(), "{env_id}/{kind}");
        }
    }
}

#[test]
fn exogenous_columns_ignore_the_policy_at_zero_eps() {
    for env_id in ["order", "inventory"] {
        let mut env = make_env(env_id, 0.0, 5).unwrap();
        let a = collect_dataset(env.as_mut(), &behavior_policy(env_id, BehaviorKind::Random).unwrap(), "r", 3, 5).unwrap();
        let b = collect_dataset(env.as_mut(), &behavior_policy(env_id, BehaviorKind::Constant).unwrap(), "c", 3, 5).unwrap();
        assert_eq!(a.exo_trajectories(), b.exo_trajectories(), "{env_id}");
    }
}

#[test]
fn collector_without_episodes_is_the_initial_network() {
    let mut env = make_env("order", 0.0, 6).unwrap();
    let cfg = CollectorConfig { episodes: 0, hidden: 16, ..CollectorConfig::default() };
    let (a, curve) = train_online_collector(env.as_mut(), &cfg).unwrap();
    assert!(curve.is_empty());
    let (b, _) = train_online_collector(env.as_mut(), &cfg).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    assert!(matches!(a, Policy::Greedy { .. }));
}

#[test]
fn collector_is_deterministic() {
    let mut env = make_env("inventory", 0.0, 7).unwrap();
    let cfg = CollectorConfig { episodes: 4, hidden: 16, ..CollectorConfig::default() };
    let (a, ca) = train_online_collector(env.as_mut(), &cfg).unwrap();
    let (b, cb) = train_online_collector(env.as_mut(), &cfg).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    assert_eq!(ca, cb);
}

#[test]
fn trained_collector_beats_holding_everything() {
    let mut env = make_env("order", 0.0, 8).unwrap();
    let (pi, curve) = train_online_collector(env.as_mut(), &CollectorConfig::default()).unwrap();
    assert_eq!(curve.len(), 1000);
    let hold = behavior_policy("order", BehaviorKind::Constant).unwrap();
    let (learned, _) = j_true_mc(&pi, env.as_mut(), 30, &RngStream::new(8, "eval")).unwrap();
    let (baseline, _) = j_true_mc(&hold, env.as_mut(), 30, &RngStream::new(8, "eval")).unwrap();
    assert!(learned > baseline, "{learned} vs {baseline}");
}

#[test]
fn run_scaling_and_percentiles() {
    assert_eq!(runs_for(30, 0.1).unwrap(), 3);
    assert_eq!(runs_for(30, 0.33).unwrap(), 10);
    assert_eq!(runs_for(90, 1.0).unwrap(), 90);
    assert!(runs_for(30, 0.0).is_err());
    assert!(runs_for(30, 1.5).is_err());
    let xs: Vec<f64> = (1..=10).map(f64::from).collect();
    assert!((percentile(&xs, 0.9) - 9.1).abs() < 1e-12);
    assert_eq!(percentile(&xs, 0.0), 1.0);
    assert_eq!(percentile(&xs, 1.0), 10.0);
    assert!(percentile(&[], 0.5).is_nan());
}

#[test]
fn figure_and_algorithm_names() {
    for f in ["sim_eps0", "sim_eps_large", "eval_error", "traj_sim"] {
        assert_eq!(f.parse::<Figure>().unwrap().to_string(), f);
    }
    assert!("plot".parse::<Figure>().is_err());
    for a in ["fqi-air", "fqi-air-sampled", "fqi", "mbs", "mb-empirical", "mb-exo", "mb-full", "traj-sim"] {
        let algo: Algo = a.parse().unwrap();
        assert_eq!(algo.to_string(), a.replace('-', "_").replace("mbs", "mbs_qi"));
    }
}

#[test]
fn default_grids() {
    let opts = ReproOptions::from_config(&Config::default()).unwrap();
    assert_eq!(opts.n_grid, vec![1, 5, 10, 25, 50, 100, 200]);
    assert_eq!(opts.eps_grid, vec![0.0, 0.05, 0.1, 0.2, 0.4]);
    assert_eq!(opts.eval_n_grid, vec![1, 5, 25, 100, 200]);
    assert_eq!(opts.eps_grid.len() * opts.eval_n_grid.len(), 25);
    let mut bad = Config::default();
    bad.set("colour", "blue");
    assert!(ReproOptions::from_config(&bad).is_err());
}
