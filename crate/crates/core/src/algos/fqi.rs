//! Backward fitted-Q passes: FQI-AIR sweeps, plain FQI, MBS-QI, and model-based sweeps.

use std::collections::HashMap;

use super::density::DensityEstimate;
use super::policy::{masked_values, Policy};
use crate::approx::{Approximator, Batch, FClass, Featurizer, FitConfig, QFunction, QMode};
use crate::dataset::validate_dataset;
use crate::envs::TabularMdp;
use crate::error::{Error, Result};
use crate::models::{empirical_exo_mdp, DynamicsModel, EndoModel};
use crate::rng::RngStream;
use crate::types::{AirSpec, Dataset, Endo, FactoredState};

/// Input features used for a dataset's environment.
pub fn featurizer_for(d: &Dataset) -> Featurizer {
    Featurizer::for_env(&d.meta.env, d.meta.exo_dim, d.meta.endo_kind.dim())
}

pub(crate) fn check_dataset(d: &Dataset, spec: &AirSpec) -> Result<()> {
    if d.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let v = validate_dataset(d, spec);
    if let Some(first) = v.first() {
        return Err(Error::invalid(format!("invalid dataset ({} problems): {first}", v.len())));
    }
    Ok(())
}

fn state_key(exo: &[f64], endo: &Endo) -> (Vec<u64>, Vec<u64>) {
    (exo.iter().map(|x| x.to_bits()).collect(), endo.to_vec().iter().map(|x| x.to_bits()).collect())
}

/// Result of a backward sweep over replayed exogenous trajectories.
#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub policy: Policy,
    /// Synthetic regression pairs built at each step `h`.
    pub pairs_per_step: Vec<usize>,
}

/// Backward pass that, for every episode, endo value in the sweep, and action,
/// asks `succ` for `(next exo, next endo, reward)` and regresses
/// `reward + max_a' q_{h+1}(next exo, next endo, a')` onto `q_h`.
fn sweep_backward<F>(
    d: &Dataset,
    spec: &AirSpec,
    fclass: FClass,
    cfg: &FitConfig,
    label: &str,
    mut succ: F,
) -> Result<(QFunction, Vec<usize>)>
where
    F: FnMut(usize, usize, &[f64], &Endo, usize, &mut RngStream) -> Result<(Vec<f64>, Endo, f64)>,
{
    let horizon = spec.horizon;
    let base = RngStream::new(cfg.seed, label);
    let mut q = QFunction::new(QMode::PerHorizon, fclass, featurizer_for(d), horizon, spec.n_actions, &base);
    let mut model_rng = base.derive("model");
    let mut pairs = vec![0; horizon];
    let mut feat = Vec::new();
    let mut vals = vec![0.0; spec.n_actions];
    for h in (0..horizon).rev() {
        let mut batch = Batch::new(q.input_dim());
        let mut next_max: HashMap<(Vec<u64>, Vec<u64>), f64> = HashMap::new();
        for (i, ep) in d.episodes.iter().enumerate() {
            let exo = ep.exo(h);
            for e in &spec.endo_sweep {
                q.features_into(&FactoredState::new(exo.to_vec(), e.clone()), h, &mut feat);
                let x = feat.clone();
                for a in 0..spec.n_actions {
                    let (exo2, e2, r) = succ(h, i, exo, e, a, &mut model_rng)?;
                    let key = state_key(&exo2, &e2);
                    let v = match next_max.get(&key) {
                        Some(v) => *v,
                        None => {
                            q.features_into(&FactoredState::new(exo2, e2), h + 1, &mut feat);
                            q.values_from_features(&feat, h + 1, &mut vals);
                            let v = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                            next_max.insert(key, v);
                            v
                        }
                    };
                    batch.push(&x, a, r + v);
                }
            }
        }
        pairs[h] = batch.len();
        if cfg.warm_start && matches!(fclass, FClass::Mlp { .. }) && h + 1 < horizon {
            q.slots[h] = q.slots[h + 1].clone();
        }
        q.fit_slot(h, &batch, cfg, &mut base.derive(&format!("fit/{h}")))?;
    }
    Ok((q, pairs))
}

/// FQI-AIR with an endogenous sweep over every recorded exogenous trajectory.
pub fn fqi_air_sweep(d: &Dataset, m: &EndoModel, spec: &AirSpec, fclass: FClass, cfg: &FitConfig) -> Result<SweepOutput> {
    check_dataset(d, spec)?;
    let (q, pairs) = sweep_backward(d, spec, fclass, cfg, "fqi-air", |h, i, exo, e, a, rng| {
        let next = d.episodes[i].exo(h + 1);
        let (e2, r) = m.endo_step(h, exo, e, a, next, rng)?;
        Ok((next.to_vec(), e2, r))
    })?;
    Ok(SweepOutput { policy: Policy::Greedy { q }, pairs_per_step: pairs })
}

/// How masked bootstrap values are replaced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskFloor {
    Zero,
    /// `-10000`, for environments with negative rewards.
    Pessimistic,
}

impl MaskFloor {
    pub fn value(&self) -> f64 {
        match self {
            MaskFloor::Zero => 0.0,
            MaskFloor::Pessimistic => -10000.0,
        }
    }
}

fn fqi_core(
    d: &Dataset,
    spec: &AirSpec,
    fclass: FClass,
    cfg: &FitConfig,
    mask: Option<(&DensityEstimate, f64, f64)>,
) -> Result<QFunction> {
    check_dataset(d, spec)?;
    let horizon = spec.horizon;
    let base = RngStream::new(cfg.seed, "fqi");
    let mut q = QFunction::new(QMode::PerHorizon, fclass, featurizer_for(d), horizon, spec.n_actions, &base);
    let mut feat = Vec::new();
    for h in (0..horizon).rev() {
        let mut batch = Batch::new(q.input_dim());
        for ep in &d.episodes {
            let step = &ep.steps[h];
            let next = ep.state(h + 1);
            let boot = if h + 1 == horizon {
                0.0
            } else {
                let vals = match mask {
                    Some((density, b, floor)) => masked_values(&q, density, b, floor, next, h + 1)?.0,
                    None => q.values(next, h + 1)?,
                };
                vals.into_iter().fold(f64::NEG_INFINITY, f64::max)
            };
            q.features_into(&step.state, h, &mut feat);
            batch.push(&feat, step.action, step.reward + boot);
        }
        if cfg.warm_start && matches!(fclass, FClass::Mlp { .. }) && h + 1 < horizon {
            q.slots[h] = q.slots[h + 1].clone();
        }
        q.fit_slot(h, &batch, cfg, &mut base.derive(&format!("fit/{h}")))?;
    }
    Ok(q)
}

/// Fitted Q iteration on the recorded transitions only.
pub fn fqi_baseline(d: &Dataset, spec: &AirSpec, fclass: FClass, cfg: &FitConfig) -> Result<Policy> {
    Ok(Policy::Greedy { q: fqi_core(d, spec, fclass, cfg, None)? })
}

/// FQI whose bootstrap values are masked where the estimated data density is below `b`.
/// With `b = 0` the mask never fires and the result is the plain greedy policy.
pub fn mbs_qi(
    d: &Dataset,
    density: &DensityEstimate,
    b: f64,
    floor: MaskFloor,
    spec: &AirSpec,
    fclass: FClass,
    cfg: &FitConfig,
) -> Result<Policy> {
    if !(b >= 0.0) {
        return Err(Error::invalid(format!("density threshold b = {b} must be non-negative")));
    }
    let q = fqi_core(d, spec, fclass, cfg, Some((density, b, floor.value())))?;
    if b == 0.0 {
        return Ok(Policy::Greedy { q });
    }
    Ok(Policy::Masked { q, density: density.clone(), b, floor: floor.value() })
}

/// Model used by [`mb_plan`].
pub enum PlanModel<'a> {
    /// Known tabular MDP, solved exactly.
    Tabular(&'a TabularMdp),
    /// Count-based exogenous chain of the dataset with a given endo model, solved exactly.
    Empirical { data: &'a Dataset, endo: &'a EndoModel },
    /// Learned exogenous model with a given endo model; FQI over the dataset's exo states.
    LearnedExo { data: &'a Dataset, dynamics: &'a DynamicsModel, endo: &'a EndoModel },
    /// Learned full model of the next state and reward.
    LearnedFull { data: &'a Dataset, dynamics: &'a DynamicsModel },
}

pub fn mb_plan(model: PlanModel<'_>, spec: &AirSpec, fclass: FClass, cfg: &FitConfig) -> Result<Policy> {
    match model {
        PlanModel::Tabular(m) => {
            let sol = crate::eval::dp_solve(m, None)?;
            Ok(Policy::Table(sol.policy.expect("optimal policy is returned when none is given")))
        }
        PlanModel::Empirical { data, endo } => {
            check_dataset(data, spec)?;
            let replay = crate::eval::ReplayMdp::new(empirical_exo_mdp(data), endo.clone(), spec.clone());
            Ok(Policy::Lookup(replay.solve()?.1))
        }
        PlanModel::LearnedExo { data, dynamics, endo } => {
            check_dataset(data, spec)?;
            let (q, _) = sweep_backward(data, spec, fclass, cfg, "mb-exo", |h, _, exo, e, a, rng| {
                let next = dynamics.predict_exo(exo, e, a);
                let (e2, r) = endo.endo_step(h, exo, e, a, &next, rng)?;
                Ok((next, e2, r))
            })?;
            Ok(Policy::Greedy { q })
        }
        PlanModel::LearnedFull { data, dynamics } => {
            check_dataset(data, spec)?;
            let (q, _) = sweep_backward(data, spec, fclass, cfg, "mb-full", |_, _, exo, e, a, _| dynamics.predict_full(exo, e, a))?;
            Ok(Policy::Greedy { q })
        }
    }
}

/// The fitted slot for step `h` of a greedy per-horizon policy, for inspection in tests.
pub fn slot(policy: &Policy, h: usize) -> Option<&Approximator> {
    match policy {
        Policy::Greedy { q } | Policy::Masked { q, .. } => q.slots.get(h),
        _ => None,
    }
}
