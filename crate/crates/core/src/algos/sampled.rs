//! FQI-AIR with sampled synthetic transitions and a single network over all steps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::fqi::{check_dataset, featurizer_for};
use super::policy::Policy;
use crate::approx::{Approximator, Batch, FClass, FitConfig, Optimizer, QFunction, QMode};
use crate::error::{Error, Result};
use crate::models::EndoModel;
use crate::rng::RngStream;
use crate::types::{AirSpec, Dataset, FactoredState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampledConfig {
    /// Transitions per mini-batch.
    pub batch: usize,
    /// Outer iterations; the target network is refreshed after each.
    pub outer: usize,
    /// Gradient updates per outer iteration.
    pub updates: usize,
}

impl Default for SampledConfig {
    fn default() -> Self {
        SampledConfig { batch: 128, outer: 100, updates: 50 }
    }
}

pub fn fqi_air_sampled(
    d: &Dataset,
    m: &EndoModel,
    spec: &AirSpec,
    hidden: usize,
    fit: &FitConfig,
    sc: &SampledConfig,
) -> Result<Policy> {
    check_dataset(d, spec)?;
    fit.validate()?;
    let n_tr = d.n_transitions();
    if sc.batch == 0 || sc.batch > n_tr {
        return Err(Error::invalid(format!("batch size {} exceeds the {n_tr} recorded transitions", sc.batch)));
    }
    let base = RngStream::new(fit.seed, "fqi-air-sampled");
    let horizon = spec.horizon;
    let mut q = QFunction::new(QMode::Shared, FClass::Mlp { hidden }, featurizer_for(d), horizon, spec.n_actions, &base);
    let mut rng = base.derive("samples");
    let n_params = match &q.slots[0] {
        Approximator::Mlp(net) => net.params.len(),
        _ => unreachable!("shared slot is an MLP"),
    };
    let mut opt = Optimizer::new(fit.optimizer, fit.lr, n_params);
    let mut grad = vec![0.0; n_params];
    let rows: Vec<usize> = (0..sc.batch).collect();
    let mut feat = Vec::new();
    let mut vals = vec![0.0; spec.n_actions];
    for _ in 0..sc.outer {
        let target = q.clone();
        for _ in 0..sc.updates {
            let mut batch = Batch::new(q.input_dim());
            for _ in 0..sc.batch {
                let i = rng.random_range(0..d.len());
                let h = rng.random_range(0..horizon);
                let ep = &d.episodes[i];
                let e = &spec.endo_sweep[rng.random_range(0..spec.endo_sweep.len())];
                let a = rng.random_range(0..spec.n_actions);
                let (e2, r) = m.endo_step(h, ep.exo(h), e, a, ep.exo(h + 1), &mut rng)?;
                let boot = if h + 1 == horizon {
                    0.0
                } else {
                    target.features_into(&FactoredState::new(ep.exo(h + 1).to_vec(), e2), h + 1, &mut feat);
                    target.values_from_features(&feat, h + 1, &mut vals);
                    vals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                };
                q.features_into(&FactoredState::new(ep.exo(h).to_vec(), e.clone()), h, &mut feat);
                batch.push(&feat, a, r + boot);
            }
            let Approximator::Mlp(net) = &mut q.slots[0] else { unreachable!() };
            net.loss_and_grad(&batch.x, &batch.a, &batch.y, &rows, &mut grad);
            opt.step(&mut net.params, &grad)?;
        }
    }
    Ok(Policy::Greedy { q })
}
