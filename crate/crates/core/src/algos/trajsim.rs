//! Online agents trained against a trajectory-replay simulator: recorded
//! exogenous paths combined with an endogenous model.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::fqi::{check_dataset, featurizer_for};
use super::policy::Policy;
use crate::approx::{argmax, Approximator, FClass, FitConfig, Optimizer, QFunction, QMode};
use crate::error::{Error, Result};
use crate::eval::j_hat;
use crate::models::EndoModel;
use crate::rng::RngStream;
use crate::types::{AirSpec, Dataset, FactoredState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agent {
    /// Off-policy TD learning from a replay buffer with a periodically refreshed target.
    QLearning,
    /// Approximate policy iteration: Monte Carlo evaluation of the ε-greedy policy, then greedy improvement.
    Api,
}

impl std::str::FromStr for Agent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "q_learning" | "q-learning" => Ok(Agent::QLearning),
            "api" => Ok(Agent::Api),
            _ => Err(Error::invalid(format!("unknown agent {s:?}"))),
        }
    }
}

impl std::fmt::Display for Agent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Agent::QLearning => "q_learning",
            Agent::Api => "api",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub iterations: usize,
    /// Exploration rate of the ε-greedy behaviour.
    pub epsilon: f64,
    pub hidden: usize,
    /// Gradient updates per iteration.
    pub updates: usize,
    /// Replay buffer capacity (Q-learning).
    pub buffer: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { iterations: 20, epsilon: 0.1, hidden: 128, updates: 200, buffer: 10_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub return_mean: f64,
    pub return_stderr: f64,
}

struct Transition {
    x: Vec<f64>,
    a: usize,
    r: f64,
    /// Features of the next state, absent at the final step.
    next: Option<Vec<f64>>,
    ret: f64,
}

fn evaluate(q: &QFunction, d: &Dataset, m: &EndoModel, spec: &AirSpec, iteration: usize) -> Result<CurvePoint> {
    let policy = Policy::Greedy { q: q.clone() };
    let rep = j_hat(&policy, d, m, spec, &mut RngStream::new(0, "traj-sim/eval"))?;
    Ok(CurvePoint { iteration, return_mean: rep.j_hat, return_stderr: rep.stderr() })
}

/// Trains `agent` on simulated episodes, each replaying a uniformly drawn stored
/// exogenous trajectory. An iteration simulates as many episodes as the dataset
/// holds. After each iteration the greedy policy is scored with [`j_hat`]; with
/// zero iterations the curve holds the initial policy's score alone.
pub fn traj_sim_online(
    d: &Dataset,
    m: &EndoModel,
    spec: &AirSpec,
    agent: Agent,
    sim: &SimConfig,
    fit: &FitConfig,
) -> Result<(Policy, Vec<CurvePoint>)> {
    check_dataset(d, spec)?;
    fit.validate()?;
    let base = RngStream::new(fit.seed, format!("traj-sim/{agent}"));
    let horizon = spec.horizon;
    let mut q = QFunction::new(QMode::Shared, FClass::Mlp { hidden: sim.hidden }, featurizer_for(d), horizon, spec.n_actions, &base);
    let n_params = match &q.slots[0] {
        Approximator::Mlp(net) => net.params.len(),
        _ => unreachable!(),
    };
    let mut opt = Optimizer::new(fit.optimizer, fit.lr, n_params);
    let mut grad = vec![0.0; n_params];
    let mut rng = base.derive("sim");
    let mut buffer: VecDeque<Transition> = VecDeque::new();
    let mut curve = Vec::new();
    if sim.iterations == 0 {
        curve.push(evaluate(&q, d, m, spec, 0)?);
    }
    let mut vals = vec![0.0; spec.n_actions];
    for it in 0..sim.iterations {
        let target = q.clone();
        if agent == Agent::Api {
            buffer.clear();
        }
        for _ in 0..d.len() {
            let ep = &d.episodes[rng.random_range(0..d.len())];
            let mut endo = ep.state(0).endo.clone();
            let mut episode: Vec<Transition> = Vec::with_capacity(horizon);
            for h in 0..horizon {
                let s = FactoredState::new(ep.exo(h).to_vec(), endo.clone());
                let x = q.features(&s, h);
                let a = if rng.random::<f64>() < sim.epsilon {
                    rng.random_range(0..spec.n_actions)
                } else {
                    q.values_from_features(&x, h, &mut vals);
                    argmax(&vals)
                };
                let (e2, r) = m.endo_step(h, ep.exo(h), &endo, a, ep.exo(h + 1), &mut rng)?;
                let next = (h + 1 < horizon).then(|| q.features(&FactoredState::new(ep.exo(h + 1).to_vec(), e2.clone()), h + 1));
                episode.push(Transition { x, a, r, next, ret: 0.0 });
                endo = e2;
            }
            let mut g = 0.0;
            for t in episode.iter_mut().rev() {
                g += t.r;
                t.ret = g;
            }
            buffer.extend(episode);
            while buffer.len() > sim.buffer.max(horizon) {
                buffer.pop_front();
            }
        }
        let bs = fit.batch_size.min(buffer.len());
        let mut xs = Vec::with_capacity(bs * q.input_dim());
        let mut acts = Vec::with_capacity(bs);
        let mut ys = Vec::with_capacity(bs);
        let rows: Vec<usize> = (0..bs).collect();
        for _ in 0..sim.updates {
            xs.clear();
            acts.clear();
            ys.clear();
            for _ in 0..bs {
                let t = &buffer[rng.random_range(0..buffer.len())];
                let y = match agent {
                    Agent::Api => t.ret,
                    Agent::QLearning => match &t.next {
                        None => t.r,
                        Some(nx) => {
                            target.values_from_features(nx, 0, &mut vals);
                            t.r + vals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                        }
                    },
                };
                xs.extend_from_slice(&t.x);
                acts.push(t.a);
                ys.push(y);
            }
            let Approximator::Mlp(net) = &mut q.slots[0] else { unreachable!() };
            net.loss_and_grad(&xs, &acts, &ys, &rows, &mut grad);
            opt.step(&mut net.params, &grad)?;
        }
        curve.push(evaluate(&q, d, m, spec, it + 1)?);
    }
    Ok((Policy::Greedy { q }, curve))
}
