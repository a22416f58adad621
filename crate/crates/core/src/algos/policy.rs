//! Policies consumed by rollouts, estimators, and the DP oracles.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::density::DensityEstimate;
use crate::approx::{argmax, QFunction};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::types::{Endo, FactoredState};

/// Fixed behaviour rules of the benchmark environments plus generic ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RulePolicy {
    /// Action 0 with probability 0.75, each of 1..=5 with probability 0.05.
    OrderRandom,
    /// Always action 0.
    OrderConstant,
    /// Uniform integer in `[D-3, D+3]` clamped to `[0, 10]`.
    InventoryRandom,
    /// `floor(min(D, 10))`.
    InventoryConstant,
    Constant { action: usize, n_actions: usize },
    Uniform { n_actions: usize },
}

impl RulePolicy {
    pub fn n_actions(&self) -> usize {
        match self {
            RulePolicy::OrderRandom | RulePolicy::OrderConstant => 6,
            RulePolicy::InventoryRandom | RulePolicy::InventoryConstant => 11,
            RulePolicy::Constant { n_actions, .. } | RulePolicy::Uniform { n_actions } => *n_actions,
        }
    }

    fn probabilities(&self, s: &FactoredState) -> Vec<f64> {
        let n = self.n_actions();
        let mut p = vec![0.0; n];
        match self {
            RulePolicy::OrderRandom => {
                p[0] = 0.75;
                p[1..].iter_mut().for_each(|v| *v = 0.05);
            }
            RulePolicy::OrderConstant => p[0] = 1.0,
            RulePolicy::InventoryRandom => {
                let d = s.exo[0];
                let lo = (d - 3.0).ceil() as i64;
                let hi = (d + 3.0).floor() as i64;
                let w = 1.0 / (hi - lo + 1) as f64;
                for k in lo..=hi {
                    p[k.clamp(0, 10) as usize] += w;
                }
            }
            RulePolicy::InventoryConstant => p[inventory_constant_action(s.exo[0])] = 1.0,
            RulePolicy::Constant { action, .. } => p[*action] = 1.0,
            RulePolicy::Uniform { .. } => p.iter_mut().for_each(|v| *v = 1.0 / n as f64),
        }
        p
    }
}

fn inventory_constant_action(d: f64) -> usize {
    d.min(10.0).max(0.0).floor() as usize
}

/// Explicit per-step action distributions over tabular states, `probs[h][x][e][a]` flattened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub horizon: usize,
    pub n_exo: usize,
    pub n_endo: usize,
    pub n_actions: usize,
    pub probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn row(&self, h: usize, x: usize, e: usize) -> &[f64] {
        let i = ((h * self.n_exo + x) * self.n_endo + e) * self.n_actions;
        &self.probs[i..i + self.n_actions]
    }

    pub fn deterministic(horizon: usize, n_exo: usize, n_endo: usize, n_actions: usize, actions: &[usize]) -> Self {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (i, a) in actions.iter().enumerate() {
            probs[i * n_actions + a] = 1.0;
        }
        TabularPolicy { horizon, n_exo, n_endo, n_actions, probs }
    }

    /// Independent random rows; `deterministic` puts all mass on one random action.
    pub fn random(
        horizon: usize,
        n_exo: usize,
        n_endo: usize,
        n_actions: usize,
        deterministic: bool,
        rng: &mut RngStream,
    ) -> Self {
        let rows = horizon * n_exo * n_endo;
        if deterministic {
            let actions: Vec<usize> = (0..rows).map(|_| rng.random_range(0..n_actions)).collect();
            return Self::deterministic(horizon, n_exo, n_endo, n_actions, &actions);
        }
        let mut probs = Vec::with_capacity(rows * n_actions);
        for _ in 0..rows {
            probs.extend(crate::envs::random_distribution(n_actions, rng));
        }
        TabularPolicy { horizon, n_exo, n_endo, n_actions, probs }
    }
}

/// Plan over an empirical exogenous chain: the action for the closest stored exo
/// state at step `h` and the endo value's sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookupPolicy {
    pub n_actions: usize,
    pub sweep: Vec<Endo>,
    /// Per step: stored exo states and `actions[node][sweep index]`.
    pub levels: Vec<(Vec<Vec<f64>>, Vec<Vec<usize>>)>,
}

impl LookupPolicy {
    fn action(&self, s: &FactoredState, h: usize) -> Result<usize> {
        let (states, actions) =
            self.levels.get(h).ok_or_else(|| Error::contract(format!("step {h} beyond plan horizon")))?;
        let node = nearest(states, &s.exo);
        Ok(actions[node][sweep_index(&self.sweep, &s.endo)])
    }
}

fn nearest(states: &[Vec<f64>], exo: &[f64]) -> usize {
    let dist = |s: &[f64]| s.iter().zip(exo).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    (0..states.len()).min_by(|&a, &b| dist(&states[a]).total_cmp(&dist(&states[b]))).unwrap_or(0)
}

/// Sweep cell of an endo value: the entry with the same floored value, else the closest one.
pub fn sweep_index(sweep: &[Endo], e: &Endo) -> usize {
    if let Some(i) = sweep.iter().position(|s| s == e) {
        return i;
    }
    let k = e.floor_index();
    (0..sweep.len()).min_by_key(|&i| (sweep[i].floor_index() - k).abs()).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    /// Greedy in a Q-function; ties go to the lowest action.
    Greedy { q: QFunction },
    /// Greedy in the density-masked Q-function; uniform over actions when every action is masked.
    Masked { q: QFunction, density: DensityEstimate, b: f64, floor: f64 },
    Table(TabularPolicy),
    Lookup(LookupPolicy),
    Rule(RulePolicy),
}

impl Policy {
    pub fn n_actions(&self) -> usize {
        match self {
            Policy::Greedy { q } | Policy::Masked { q, .. } => q.n_actions,
            Policy::Table(t) => t.n_actions,
            Policy::Lookup(l) => l.n_actions,
            Policy::Rule(r) => r.n_actions(),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        match self {
            Policy::Greedy { .. } | Policy::Lookup(_) => true,
            Policy::Rule(r) => matches!(r, RulePolicy::OrderConstant | RulePolicy::InventoryConstant | RulePolicy::Constant { .. }),
            Policy::Table(t) => t.probs.iter().all(|p| *p == 0.0 || *p == 1.0),
            Policy::Masked { .. } => false,
        }
    }

    /// Action distribution at `(s, h)`.
    pub fn probabilities(&self, s: &FactoredState, h: usize) -> Result<Vec<f64>> {
        let n = self.n_actions();
        let onehot = |a: usize| {
            let mut p = vec![0.0; n];
            p[a] = 1.0;
            p
        };
        match self {
            Policy::Greedy { q } => Ok(onehot(argmax(&q.values(s, h)?))),
            Policy::Masked { q, density, b, floor } => {
                let (vals, all_masked) = masked_values(q, density, *b, *floor, s, h)?;
                if all_masked {
                    Ok(vec![1.0 / n as f64; n])
                } else {
                    Ok(onehot(argmax(&vals)))
                }
            }
            Policy::Table(t) => {
                let x = s.exo.first().copied().unwrap_or(-1.0);
                let e = s.endo.floor_index();
                if h >= t.horizon || x < 0.0 || x as usize >= t.n_exo || e < 0 || e as usize >= t.n_endo {
                    return Err(Error::contract(format!("state ({x}, {e}) at step {h} outside the policy table")));
                }
                Ok(t.row(h, x as usize, e as usize).to_vec())
            }
            Policy::Lookup(l) => Ok(onehot(l.action(s, h)?)),
            Policy::Rule(r) => Ok(r.probabilities(s)),
        }
    }

    /// Samples an action. Deterministic policies never touch `rng`.
    pub fn act(&self, s: &FactoredState, h: usize, rng: &mut RngStream) -> Result<usize> {
        match self {
            Policy::Greedy { q } => Ok(argmax(&q.values(s, h)?)),
            Policy::Lookup(l) => l.action(s, h),
            Policy::Masked { q, density, b, floor } => {
                let (vals, all_masked) = masked_values(q, density, *b, *floor, s, h)?;
                if all_masked {
                    Ok(rng.random_range(0..vals.len()))
                } else {
                    Ok(argmax(&vals))
                }
            }
            _ => {
                let p = self.probabilities(s, h)?;
                if let Some(a) = p.iter().position(|v| *v == 1.0) {
                    return Ok(a);
                }
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (a, v) in p.iter().enumerate() {
                    acc += v;
                    if u < acc {
                        return Ok(a);
                    }
                }
                Ok(p.iter().rposition(|v| *v > 0.0).unwrap_or(0))
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Policy> {
        Ok(serde_json::from_str(text)?)
    }
}

/// `q̃(s, a) = q(s, a)` when `μ̂(s, a) ≥ b`, else `floor`; also reports whether every action was masked.
pub fn masked_values(
    q: &QFunction,
    density: &DensityEstimate,
    b: f64,
    floor: f64,
    s: &FactoredState,
    h: usize,
) -> Result<(Vec<f64>, bool)> {
    let mut vals = q.values(s, h)?;
    if h >= q.horizon {
        return Ok((vals, false));
    }
    let mut all = true;
    for (a, v) in vals.iter_mut().enumerate() {
        if density.mu(h, s, a) < b {
            *v = floor;
        } else {
            all = false;
        }
    }
    Ok((vals, all))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_random_frequencies() {
        let p = Policy::Rule(RulePolicy::OrderRandom);
        let s = FactoredState::new(vec![0.5; 3], Endo::Int(10));
        let mut rng = RngStream::new(0, "freq");
        let n = 100_000;
        let zeros = (0..n).filter(|_| p.act(&s, 0, &mut rng).unwrap() == 0).count();
        assert!((zeros as f64 / n as f64 - 0.75).abs() < 0.005);
    }

    #[test]
    fn inventory_rules() {
        let s = FactoredState::new(vec![12.3], Endo::Real(vec![0.0]));
        let mut rng = RngStream::new(0, "inv");
        assert_eq!(Policy::Rule(RulePolicy::InventoryConstant).act(&s, 0, &mut rng).unwrap(), 10);
        let s = FactoredState::new(vec![1.5], Endo::Real(vec![0.0]));
        let p = Policy::Rule(RulePolicy::InventoryRandom).probabilities(&s, 0).unwrap();
        // Integers -1..=4 clamp to 0,0,1,2,3,4.
        assert!((p[0] - 2.0 / 6.0).abs() < 1e-12);
        assert!((p[4] - 1.0 / 6.0).abs() < 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sweep_index_floors_real_values() {
        let sweep: Vec<Endo> = (0..16).map(|k| Endo::Real(vec![k as f64])).collect();
        assert_eq!(sweep_index(&sweep, &Endo::Real(vec![3.7])), 3);
        assert_eq!(sweep_index(&sweep, &Endo::Real(vec![40.0])), 15);
    }
}
