//! Behaviour policies and dataset generation.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::algos::{Policy, RulePolicy};
use crate::approx::{argmax, Approximator, FClass, Featurizer, FitConfig, Optimizer, QFunction, QMode};
use crate::envs::{Environment, InventoryEnv, OrderExecEnv, TabularEnv, TabularMdp};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::types::{Dataset, DatasetMeta, Episode, FactoredState, Step};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorKind {
    Random,
    Constant,
    /// Greedy policy of an online-trained collector.
    Learned,
}

impl std::str::FromStr for BehaviorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(BehaviorKind::Random),
            "constant" => Ok(BehaviorKind::Constant),
            "learned" => Ok(BehaviorKind::Learned),
            _ => Err(Error::invalid(format!("unknown behaviour policy {s:?}"))),
        }
    }
}

impl std::fmt::Display for BehaviorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BehaviorKind::Random => "random",
            BehaviorKind::Constant => "constant",
            BehaviorKind::Learned => "learned",
        })
    }
}

/// Fixed behaviour rule of a benchmark environment. `Learned` needs
/// [`train_online_collector`] and is rejected here.
pub fn behavior_policy(env: &str, kind: BehaviorKind) -> Result<Policy> {
    let rule = match (env, kind) {
        ("order", BehaviorKind::Random) => RulePolicy::OrderRandom,
        ("order", BehaviorKind::Constant) => RulePolicy::OrderConstant,
        ("inventory", BehaviorKind::Random) => RulePolicy::InventoryRandom,
        ("inventory", BehaviorKind::Constant) => RulePolicy::InventoryConstant,
        (_, BehaviorKind::Learned) => {
            return Err(Error::invalid("the learned behaviour policy must be trained online first"))
        }
        _ => return Err(Error::invalid(format!("no behaviour rules for environment {env:?}"))),
    };
    Ok(Policy::Rule(rule))
}

/// A concrete simulator. Parameters of the instance are drawn from `seed` only,
/// so instances with different `eps_air` share them.
pub fn make_env(env: &str, eps_air: f64, seed: u64) -> Result<Box<dyn Environment>> {
    if !(0.0..=1.0).contains(&eps_air) {
        return Err(Error::invalid(format!("eps_air {eps_air} must lie in [0, 1]")));
    }
    let mut rng = RngStream::new(seed, format!("env-instance/{env}"));
    match env {
        "order" => Ok(Box::new(OrderExecEnv::sample(eps_air, &mut rng))),
        "order_frozen" => Ok(Box::new(OrderExecEnv::sample(eps_air, &mut rng).freeze_noise(&mut rng))),
        "inventory" => Ok(Box::new(InventoryEnv::new(eps_air))),
        _ => Err(Error::invalid(format!("unknown environment {env:?}"))),
    }
}

pub fn tabular_env(mdp: TabularMdp) -> TabularEnv {
    TabularEnv::new(std::sync::Arc::new(mdp))
}

/// One full episode.
pub fn rollout(env: &mut dyn Environment, policy: &Policy, env_rng: &mut RngStream, pol_rng: &mut RngStream) -> Result<Episode> {
    let horizon = env.horizon();
    let mut s = env.reset(env_rng);
    let mut steps = Vec::with_capacity(horizon);
    for h in 0..horizon {
        let a = policy.act(&s, h, pol_rng)?;
        let (s2, r) = env.step(a, env_rng);
        steps.push(Step { state: s, action: a, reward: r });
        s = s2;
    }
    Ok(Episode { steps, terminal: s })
}

/// `n_episodes` rollouts; episode `i` uses streams keyed by the seed and `i` only.
pub fn collect_dataset(
    env: &mut dyn Environment,
    policy: &Policy,
    policy_name: &str,
    n_episodes: usize,
    seed: u64,
) -> Result<Dataset> {
    if n_episodes == 0 {
        return Err(Error::invalid("n_episodes must be at least 1"));
    }
    let mut episodes = Vec::with_capacity(n_episodes);
    for i in 0..n_episodes {
        let mut env_rng = RngStream::new(seed, format!("collect/env/{i}"));
        let mut pol_rng = RngStream::new(seed, format!("collect/policy/{i}"));
        episodes.push(rollout(env, policy, &mut env_rng, &mut pol_rng)?);
    }
    let meta = DatasetMeta {
        env: env.id().to_string(),
        policy: policy_name.to_string(),
        eps_air: env.eps_air(),
        seed,
        horizon: env.horizon(),
        n_actions: env.n_actions(),
        exo_dim: env.exo_dim(),
        endo_kind: env.endo_kind(),
    };
    Ok(Dataset { episodes, meta })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectorConfig {
    pub episodes: usize,
    pub hidden: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    pub anneal_episodes: usize,
    pub buffer: usize,
    pub target_refresh: usize,
    pub updates_per_episode: usize,
    pub fit: FitConfig,
}

impl Default for CollectorConfig {
    fn default() -> Self {
        CollectorConfig {
            episodes: 1000,
            hidden: 128,
            eps_start: 1.0,
            eps_end: 0.05,
            anneal_episodes: 500,
            buffer: 10_000,
            target_refresh: 10,
            updates_per_episode: 10,
            fit: FitConfig { batch_size: 64, ..FitConfig::default() },
        }
    }
}

struct Transition {
    x: Vec<f64>,
    a: usize,
    r: f64,
    h: usize,
    next: Option<Vec<f64>>,
}

/// Online ε-greedy Q-learning with a replay buffer and a periodically refreshed
/// target network. Returns the final greedy policy and the per-episode training returns.
pub fn train_online_collector(env: &mut dyn Environment, cfg: &CollectorConfig) -> Result<(Policy, Vec<f64>)> {
    cfg.fit.validate()?;
    let horizon = env.horizon();
    let n_actions = env.n_actions();
    let base = RngStream::new(cfg.fit.seed, format!("collector/{}", env.id()));
    let fe = Featurizer::for_env(env.id(), env.exo_dim(), env.endo_kind().dim());
    let mut q = QFunction::new(QMode::Shared, FClass::Mlp { hidden: cfg.hidden }, fe, horizon, n_actions, &base);
    let n_params = match &q.slots[0] {
        Approximator::Mlp(net) => net.params.len(),
        _ => unreachable!(),
    };
    let mut opt = Optimizer::new(cfg.fit.optimizer, cfg.fit.lr, n_params);
    let mut grad = vec![0.0; n_params];
    let mut target = q.clone();
    let mut buffer: VecDeque<Transition> = VecDeque::with_capacity(cfg.buffer.min(1 << 16));
    let mut rng = base.derive("explore");
    let mut vals = vec![0.0; n_actions];
    let mut curve = Vec::with_capacity(cfg.episodes);
    let mut xs = Vec::new();
    let mut acts = Vec::new();
    let mut ys = Vec::new();
    for ep in 0..cfg.episodes {
        let frac = if cfg.anneal_episodes == 0 { 1.0 } else { (ep as f64 / cfg.anneal_episodes as f64).min(1.0) };
        let eps = cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac;
        let mut env_rng = base.derive(&format!("env/{ep}"));
        let mut s: FactoredState = env.reset(&mut env_rng);
        let mut total = 0.0;
        for h in 0..horizon {
            let x = q.features(&s, h);
            let a = if rng.random::<f64>() < eps {
                rng.random_range(0..n_actions)
            } else {
                q.values_from_features(&x, h, &mut vals);
                argmax(&vals)
            };
            let (s2, r) = env.step(a, &mut env_rng);
            total += r;
            let next = (h + 1 < horizon).then(|| q.features(&s2, h + 1));
            buffer.push_back(Transition { x, a, r, h, next });
            if buffer.len() > cfg.buffer {
                buffer.pop_front();
            }
            s = s2;
        }
        curve.push(total);
        let bs = cfg.fit.batch_size.min(buffer.len());
        let rows: Vec<usize> = (0..bs).collect();
        for _ in 0..cfg.updates_per_episode {
            xs.clear();
            acts.clear();
            ys.clear();
            for _ in 0..bs {
                let t = &buffer[rng.random_range(0..buffer.len())];
                let y = match &t.next {
                    None => t.r,
                    Some(nx) => {
                        target.values_from_features(nx, t.h + 1, &mut vals);
                        t.r + vals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                    }
                };
                xs.extend_from_slice(&t.x);
                acts.push(t.a);
                ys.push(y);
            }
            let Approximator::Mlp(net) = &mut q.slots[0] else { unreachable!() };
            net.loss_and_grad(&xs, &acts, &ys, &rows, &mut grad);
            opt.step(&mut net.params, &grad)?;
        }
        if cfg.target_refresh > 0 && (ep + 1) % cfg.target_refresh == 0 {
            target = q.clone();
        }
    }
    Ok((Policy::Greedy { q }, curve))
}
