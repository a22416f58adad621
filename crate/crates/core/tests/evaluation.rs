use air_rl::algos::{Policy, RulePolicy, TabularPolicy};
use air_rl::collect::{behavior_policy, collect_dataset, make_env, tabular_env, BehaviorKind};
use air_rl::envs::{make_random_tabular_air_mdp, measure_air_epsilon, TabularMdp};
use air_rl::eval::{
    build_baseline_mdp, dp_solve, eval_bound_thm2, j_hat, j_true_mc, select_hyperparams, subopt_bound_thm1, EvalReport,
    ReplayMdp, SelectContext,
};
use air_rl::harness::spec_for;
use air_rl::models::{empirical_exo_mdp, EndoModel};
use air_rl::{AirSpec, Dataset, Endo, RngStream};

fn order_data(kind: BehaviorKind, n: usize, seed: u64) -> Dataset {
    let mut e = make_env("order", 0.0, seed).unwrap();
    let pi = behavior_policy("order", kind).unwrap();
    collect_dataset(e.as_mut(), &pi, &kind.to_string(), n, seed).unwrap()
}

fn constant(action: usize) -> Policy {
    Policy::Rule(RulePolicy::Constant { action, n_actions: 6 })
}

/// Two exo states, one endo state; action 0 stays, action 1 switches.
/// Rewards: state 0 pays 0 / 0.5, state 1 pays 1 / 0.
fn two_state() -> TabularMdp {
    let mut m = TabularMdp::zeros(2, 1, 2, 2, 1.0);
    let pay = [[0.0, 0.5], [1.0, 0.0]];
    for h in 0..2 {
        for x in 0..2 {
            for a in 0..2 {
                let next = if a == 0 { x } else { 1 - x };
                let i = m.exo_ix(h, x, a);
                m.p_exo[i + next] = 1.0;
                for x2 in 0..2 {
                    let j = m.end_ix(h, x, 0, a, x2);
                    m.p_end[j] = 1.0;
                    let k = m.r_ix(h, x, 0, a);
                    m.r[k + x2] = pay[x][a];
                }
            }
        }
    }
    m.nu[0] = 1.0;
    m
}

#[test]
fn one_step_dp_takes_the_best_reward() {
    let mut m = TabularMdp::zeros(1, 1, 3, 1, 1.0);
    for a in 0..3 {
        let i = m.exo_ix(0, 0, a);
        m.p_exo[i] = 1.0;
        let j = m.end_ix(0, 0, 0, a, 0);
        m.p_end[j] = 1.0;
        let k = m.r_ix(0, 0, 0, a);
        m.r[k] = [0.2, 0.9, 0.4][a];
    }
    m.nu[0] = 1.0;
    assert_eq!(dp_solve(&m, None).unwrap().j, 0.9);
}

#[test]
fn two_state_dp_by_hand() {
    let m = two_state();
    let sol = dp_solve(&m, None).unwrap();
    assert!((sol.j - 1.5).abs() < 1e-15);
    assert!((sol.value(&m, 1, 0, 0) - 0.5).abs() < 1e-15);
    assert!((sol.value(&m, 1, 1, 0) - 1.0).abs() < 1e-15);
    let opt = Policy::Table(sol.policy.clone().unwrap());
    assert!((dp_solve(&m, Some(&opt)).unwrap().j - sol.j).abs() < 1e-15);
    let stay = Policy::Table(TabularPolicy::deterministic(2, 2, 1, 2, &[0, 0, 0, 0]));
    assert_eq!(dp_solve(&m, Some(&stay)).unwrap().j, 0.0);
}

#[test]
fn dp_rejects_broken_rows() {
    let mut m = two_state();
    m.p_exo[0] = 0.5;
    assert!(dp_solve(&m, None).is_err());
}

#[test]
fn evaluation_bound_examples() {
    let sweep = vec![Endo::Int(0)];
    let spec = AirSpec::new(100, 0.01, 0.0, 5.0, 6, sweep.clone()).unwrap();
    let b = eval_bound_thm2(100, 0.05, &spec).unwrap();
    assert!((b - 500.0 * (1.0 + (40f64.ln() / 200.0).sqrt())).abs() < 1e-9);
    assert!((b - 567.9).abs() < 0.01);
    assert!(eval_bound_thm2(400, 0.05, &spec).unwrap() < b);
    assert!(eval_bound_thm2(100, 1.0, &spec).is_err());
    assert!(eval_bound_thm2(100, 0.0, &spec).is_err());
    let exact = AirSpec::new(100, 0.0, 0.0, 5.0, 6, sweep).unwrap();
    assert!(eval_bound_thm2(usize::MAX, 0.05, &exact).unwrap() < 1e-6);
}

#[test]
fn suboptimality_bound_examples() {
    let spec = AirSpec::new(4, 0.0, 0.0, 1.0, 2, vec![Endo::Int(0), Endo::Int(1)]).unwrap();
    let b = subopt_bound_thm1(1_000_000, 0.1, &spec, 16.0, 0.0).unwrap();
    assert!((b - 3.80).abs() < 0.01, "{b}");
    let half = subopt_bound_thm1(2_000_000, 0.1, &spec, 16.0, 0.0).unwrap();
    assert!((b / half - 2f64.sqrt()).abs() < 1e-12);
    assert!(subopt_bound_thm1(usize::MAX, 0.1, &spec, 16.0, 0.0).unwrap() < 1e-4);
    assert!(subopt_bound_thm1(10, 0.1, &spec, 0.0, 0.0).is_err());
    assert!(subopt_bound_thm1(0, 0.1, &spec, 16.0, 0.0).is_err());
}

#[test]
fn j_hat_of_never_selling_is_zero() {
    let d = order_data(BehaviorKind::Random, 5, 1);
    let spec = spec_for(&d, 0).unwrap();
    let rep = j_hat(&constant(0), &d, &EndoModel::Order, &spec, &mut RngStream::new(0, "j")).unwrap();
    assert_eq!(rep.j_hat, 0.0);
    assert_eq!(rep.n_traj, 5);
    assert!(rep.bound > 0.0);
}

#[test]
fn j_hat_of_selling_five_per_step() {
    let d = order_data(BehaviorKind::Constant, 1, 2);
    let spec = spec_for(&d, 0).unwrap();
    let rep = j_hat(&constant(5), &d, &EndoModel::Order, &spec, &mut RngStream::new(0, "j")).unwrap();
    let ep = &d.episodes[0];
    let expected = 5.0 * ep.exo(0)[2] + 5.0 * ep.exo(1)[2];
    assert!((rep.j_hat - expected).abs() < 1e-12);
}

#[test]
fn j_hat_matches_replay_dp_for_deterministic_policies() {
    let d = order_data(BehaviorKind::Random, 6, 3);
    let spec = spec_for(&d, 0).unwrap();
    let replay = ReplayMdp::new(empirical_exo_mdp(&d), EndoModel::Order, spec.clone());
    for a in [1, 2, 4] {
        let rep = j_hat(&constant(a), &d, &EndoModel::Order, &spec, &mut RngStream::new(0, "j")).unwrap();
        assert!((rep.j_hat - replay.evaluate(&constant(a)).unwrap()).abs() < 1e-9);
    }
}

#[test]
fn j_hat_errors_and_csv() {
    let d = order_data(BehaviorKind::Random, 2, 3);
    let spec = spec_for(&d, 0).unwrap();
    assert!(j_hat(&constant(0), &d.prefix(0), &EndoModel::Order, &spec, &mut RngStream::new(0, "j")).is_err());
    let rep = j_hat(&constant(1), &d, &EndoModel::Order, &spec, &mut RngStream::new(0, "j")).unwrap();
    assert_eq!(EvalReport::csv_header(), "n,j_hat,bound,zeta,seed");
    assert_eq!(rep.csv_row(7).split(',').count(), 5);
}

#[test]
fn monte_carlo_returns() {
    let mut env = make_env("order", 0.0, 4).unwrap();
    let (mean, se) = j_true_mc(&constant(0), env.as_mut(), 20, &RngStream::new(4, "mc")).unwrap();
    assert_eq!((mean, se), (0.0, 0.0));

    let m = two_state();
    let mut env = tabular_env(m.clone());
    let opt = Policy::Table(dp_solve(&m, None).unwrap().policy.unwrap());
    let (mean, se) = j_true_mc(&opt, &mut env, 10, &RngStream::new(4, "mc")).unwrap();
    assert_eq!((mean, se), (1.5, 0.0));

    let mut rng = RngStream::new(5, "mdp");
    let m = make_random_tabular_air_mdp(4, 3, 3, 6, 0.1, &mut rng).unwrap();
    let pi = Policy::Rule(RulePolicy::Uniform { n_actions: 3 });
    let truth = dp_solve(&m, Some(&pi)).unwrap().j;
    let mut env = tabular_env(m);
    let (mean, se) = j_true_mc(&pi, &mut env, 3000, &RngStream::new(5, "mc")).unwrap();
    assert!((mean - truth).abs() <= 3.0 * se, "{mean} ± {se} vs {truth}");
}

#[test]
fn baseline_mdp_keeps_an_action_independent_kernel() {
    let mut rng = RngStream::new(6, "mb");
    let m = make_random_tabular_air_mdp(4, 2, 3, 4, 0.0, &mut rng).unwrap();
    let behavior = Policy::Rule(RulePolicy::Uniform { n_actions: 3 });
    let mb = build_baseline_mdp(&m, &behavior, &m).unwrap();
    assert_eq!(measure_air_epsilon(&mb), 0.0);
    for (p, q) in m.p_exo.iter().zip(&mb.p_exo) {
        assert!((p - q).abs() < 1e-12);
    }

    let m = make_random_tabular_air_mdp(4, 2, 3, 4, 0.1, &mut rng).unwrap();
    let mb = build_baseline_mdp(&m, &behavior, &m).unwrap();
    assert_eq!(measure_air_epsilon(&mb), 0.0);
    let eps = measure_air_epsilon(&m);
    let bound = m.horizon as f64 * m.r_max * m.horizon as f64 * eps;
    let pi = Policy::Rule(RulePolicy::Constant { action: 2, n_actions: 3 });
    let gap = (dp_solve(&m, Some(&pi)).unwrap().j - dp_solve(&mb, Some(&pi)).unwrap().j).abs();
    assert!(gap <= bound);
}

#[test]
fn hyperparameter_selection() {
    let d = order_data(BehaviorKind::Random, 3, 7);
    let spec = spec_for(&d, 0).unwrap();
    let ctx = || SelectContext::Offline { data: &d, model: &EndoModel::Order, spec: &spec, seed: 0 };
    assert_eq!(select_hyperparams(&[3usize], ctx(), |&a| Ok(constant(a))).unwrap().0, 0);
    assert_eq!(select_hyperparams(&[0usize, 1], ctx(), |&a| Ok(constant(a))).unwrap().0, 1);
    assert_eq!(select_hyperparams(&[2usize, 2], ctx(), |&a| Ok(constant(a))).unwrap().0, 0);
    assert!(select_hyperparams::<usize, _>(&[], ctx(), |&a| Ok(constant(a))).is_err());

    let mut env = make_env("order", 0.0, 7).unwrap();
    let online = SelectContext::Online { env: env.as_mut(), rollouts: 5, seed: 0 };
    let (best, score) = select_hyperparams(&[0usize, 3], online, |&a| Ok(constant(a))).unwrap();
    assert_eq!(best, 1);
    assert!(score > 0.0);
}

#[test]
fn replay_tabular_form_solves_to_the_same_optimum() {
    let mut env = make_env("order_frozen", 0.0, 8).unwrap();
    let pi = behavior_policy("order", BehaviorKind::Random).unwrap();
    let d = collect_dataset(env.as_mut(), &pi, "random", 2, 8).unwrap();
    let spec = spec_for(&d, 0).unwrap();
    let replay = ReplayMdp::new(empirical_exo_mdp(&d), EndoModel::Order, spec);
    let (j, lookup) = replay.solve().unwrap();
    assert!((dp_solve(&replay.to_tabular().unwrap(), None).unwrap().j - j).abs() < 1e-9);
    assert!((replay.evaluate(&Policy::Lookup(lookup)).unwrap() - j).abs() < 1e-9);
}
