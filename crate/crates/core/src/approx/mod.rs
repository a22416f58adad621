//! Action-value approximators with a shared predict/fit contract.

mod mlp;
mod optim;

pub use mlp::Mlp;
pub use optim::{Optimizer, OptimizerKind};

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::types::{Endo, FactoredState};

/// Function class an algorithm regresses onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FClass {
    Tabular,
    Linear,
    Mlp { hidden: usize },
}

pub const DEFAULT_HIDDEN: usize = 128;

impl std::str::FromStr for FClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tabular" => Ok(FClass::Tabular),
            "linear" => Ok(FClass::Linear),
            "mlp" => Ok(FClass::Mlp { hidden: DEFAULT_HIDDEN }),
            _ => Err(Error::invalid(format!("unknown function class {s:?}"))),
        }
    }
}

impl std::fmt::Display for FClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FClass::Tabular => f.write_str("tabular"),
            FClass::Linear => f.write_str("linear"),
            FClass::Mlp { .. } => f.write_str("mlp"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    /// Mini-batch updates per call to `fit` (MLP only).
    pub updates: usize,
    pub seed: u64,
    /// Start each per-horizon MLP fit from the weights of the later horizon.
    pub warm_start: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { optimizer: OptimizerKind::Adam, lr: 0.001, batch_size: 128, updates: 2000, seed: 0, warm_start: true }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        Ok(())
    }
}

/// Maps a factored state to the numeric input of an approximator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Featurizer {
    /// `(X_{h-2}, X_{h-1}, X_h, P/10)`.
    Order,
    /// `(X/15, D/10)`.
    Inventory,
    /// One-hot exogenous index followed by one-hot endogenous index.
    OneHot { n_exo: usize, n_endo: usize },
    /// Exo vector followed by the endo components.
    Raw { dim: usize },
}

impl Featurizer {
    pub fn for_env(env: &str, exo_dim: usize, endo_dim: usize) -> Featurizer {
        match env {
            "order" => Featurizer::Order,
            "inventory" => Featurizer::Inventory,
            _ => Featurizer::Raw { dim: exo_dim + endo_dim },
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Featurizer::Order => 4,
            Featurizer::Inventory => 2,
            Featurizer::OneHot { n_exo, n_endo } => n_exo + n_endo,
            Featurizer::Raw { dim } => *dim,
        }
    }

    pub fn write(&self, s: &FactoredState, out: &mut Vec<f64>) {
        match self {
            Featurizer::Order => {
                out.extend_from_slice(&s.exo[..3]);
                out.push(s.endo.scalar() / 10.0);
            }
            Featurizer::Inventory => {
                out.push(s.endo.scalar() / 15.0);
                out.push(s.exo[0] / 10.0);
            }
            Featurizer::OneHot { n_exo, n_endo } => {
                let start = out.len();
                out.resize(start + n_exo + n_endo, 0.0);
                let x = s.exo[0] as usize;
                let e = match &s.endo {
                    Endo::Int(e) => *e as usize,
                    Endo::Real(v) => v[0] as usize,
                };
                out[start + x.min(n_exo - 1)] = 1.0;
                out[start + n_exo + e.min(n_endo - 1)] = 1.0;
            }
            Featurizer::Raw { .. } => {
                out.extend_from_slice(&s.exo);
                out.extend(s.endo.to_vec());
            }
        }
    }
}

/// Regression pairs `(features, action) → target` stored row-major.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub dim: usize,
    pub x: Vec<f64>,
    pub a: Vec<usize>,
    pub y: Vec<f64>,
}

impl Batch {
    pub fn new(dim: usize) -> Self {
        Batch { dim, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn push(&mut self, features: &[f64], action: usize, target: f64) {
        debug_assert_eq!(features.len(), self.dim);
        self.x.extend_from_slice(features);
        self.a.push(action);
        self.y.push(target);
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }
}

fn key_of(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

mod cells_serde {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<Vec<u64>, Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
        m.iter().collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<Vec<u64>, Vec<f64>>, D::Error> {
        Ok(Vec::<(Vec<u64>, Vec<f64>)>::deserialize(d)?.into_iter().collect())
    }
}

/// One value per action for each exactly-matched feature vector; unseen entries are 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularQ {
    pub n_actions: usize,
    #[serde(with = "cells_serde")]
    pub cells: BTreeMap<Vec<u64>, Vec<f64>>,
}

/// Per-action affine maps `w_a · x + b_a`, stored as `weights[a] = [w_a..., b_a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearQ {
    pub dim: usize,
    pub weights: Vec<Vec<f64>>,
}

const RIDGE: f64 = 1e-8;

impl LinearQ {
    fn fit(&mut self, batch: &Batch) -> Result<()> {
        let d = self.dim + 1;
        for (act, w) in self.weights.iter_mut().enumerate() {
            let rows: Vec<usize> = (0..batch.len()).filter(|&i| batch.a[i] == act).collect();
            if rows.is_empty() {
                continue;
            }
            let mut xtx = nalgebra::DMatrix::<f64>::zeros(d, d);
            let mut xty = nalgebra::DVector::<f64>::zeros(d);
            let mut phi = vec![1.0; d];
            for &i in &rows {
                phi[..self.dim].copy_from_slice(batch.row(i));
                for r in 0..d {
                    xty[r] += phi[r] * batch.y[i];
                    for c in 0..d {
                        xtx[(r, c)] += phi[r] * phi[c];
                    }
                }
            }
            for r in 0..d {
                xtx[(r, r)] += RIDGE;
            }
            let sol = match xtx.clone().cholesky() {
                Some(ch) => ch.solve(&xty),
                None => xtx.lu().solve(&xty).ok_or_else(|| Error::NonFinite("singular normal equations".into()))?,
            };
            w.copy_from_slice(sol.as_slice());
        }
        Ok(())
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        for (o, w) in out.iter_mut().zip(&self.weights) {
            *o = w[self.dim] + w[..self.dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Approximator {
    /// Identically zero; the terminal slot `q_H`.
    Zero { n_actions: usize },
    Tabular(TabularQ),
    Linear(LinearQ),
    Mlp(Mlp),
}

impl Approximator {
    pub fn new(fclass: FClass, dim: usize, n_actions: usize, rng: &mut RngStream) -> Self {
        match fclass {
            FClass::Tabular => Approximator::Tabular(TabularQ { n_actions, cells: BTreeMap::new() }),
            FClass::Linear => Approximator::Linear(LinearQ { dim, weights: vec![vec![0.0; dim + 1]; n_actions] }),
            FClass::Mlp { hidden } => Approximator::Mlp(Mlp::glorot(dim, hidden, n_actions, rng)),
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            Approximator::Zero { n_actions } => *n_actions,
            Approximator::Tabular(t) => t.n_actions,
            Approximator::Linear(l) => l.weights.len(),
            Approximator::Mlp(m) => m.n_out,
        }
    }

    /// Values of every action at `x`.
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Approximator::Zero { .. } => out.iter_mut().for_each(|o| *o = 0.0),
            Approximator::Tabular(t) => match t.cells.get(&key_of(x)) {
                Some(v) => out.copy_from_slice(v),
                None => out.iter_mut().for_each(|o| *o = 0.0),
            },
            Approximator::Linear(l) => l.eval(x, out),
            Approximator::Mlp(m) => m.forward(x, out),
        }
    }

    fn mse(&self, batch: &Batch) -> f64 {
        if let Approximator::Mlp(m) = self {
            return m.mse(&batch.x, &batch.a, &batch.y);
        }
        let mut out = vec![0.0; self.n_actions()];
        let mut s = 0.0;
        for i in 0..batch.len() {
            self.eval(batch.row(i), &mut out);
            let e = out[batch.a[i]] - batch.y[i];
            s += e * e;
        }
        s / batch.len() as f64
    }

    /// Least-squares fit of the selected outputs to the targets.
    ///
    /// Tabular cells become exact per-(cell, action) means (cells not in the batch are
    /// dropped); linear weights solve the ridge-regularised normal equations; the MLP
    /// runs `cfg.updates` mini-batch steps. Returns a loss trace: the mean squared
    /// error before fitting, the mean mini-batch loss of each pass over the data
    /// (MLP only), and the mean squared error after fitting.
    pub fn fit(&mut self, batch: &Batch, cfg: &FitConfig, rng: &mut RngStream) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Err(Error::invalid("no regression pairs"));
        }
        if let Some(i) = batch.y.iter().position(|y| !y.is_finite()) {
            return Err(Error::NonFinite(format!("regression target {i} is {}", batch.y[i])));
        }
        let n_actions = self.n_actions();
        if let Some(&a) = batch.a.iter().find(|&&a| a >= n_actions) {
            return Err(Error::contract(format!("action {a} out of range")));
        }
        cfg.validate()?;
        let mut trace = vec![self.mse(batch)];
        match self {
            Approximator::Zero { .. } => return Err(Error::contract("the terminal slot cannot be fitted")),
            Approximator::Tabular(t) => {
                let mut acc: BTreeMap<Vec<u64>, (Vec<f64>, Vec<u32>)> = BTreeMap::new();
                for i in 0..batch.len() {
                    let e = acc.entry(key_of(batch.row(i))).or_insert_with(|| (vec![0.0; n_actions], vec![0; n_actions]));
                    e.0[batch.a[i]] += batch.y[i];
                    e.1[batch.a[i]] += 1;
                }
                t.cells = acc
                    .into_iter()
                    .map(|(k, (sum, cnt))| {
                        let v = sum.iter().zip(&cnt).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
                        (k, v)
                    })
                    .collect();
            }
            Approximator::Linear(l) => l.fit(batch)?,
            Approximator::Mlp(m) => {
                let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, m.params.len());
                let mut grad = vec![0.0; m.params.len()];
                let bs = cfg.batch_size.min(batch.len());
                let per_epoch = batch.len().div_ceil(bs);
                let mut rows = vec![0usize; bs];
                let mut epoch_loss = 0.0;
                for u in 0..cfg.updates {
                    for r in rows.iter_mut() {
                        *r = rng.random_range(0..batch.len());
                    }
                    epoch_loss += m.loss_and_grad(&batch.x, &batch.a, &batch.y, &rows, &mut grad);
                    opt.step(&mut m.params, &grad)?;
                    if (u + 1) % per_epoch == 0 {
                        trace.push(epoch_loss / per_epoch as f64);
                        epoch_loss = 0.0;
                    }
                }
                if m.params.iter().any(|p| !p.is_finite()) {
                    return Err(Error::NonFinite("network weights diverged".into()));
                }
            }
        }
        trace.push(self.mse(batch));
        Ok(trace)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QMode {
    /// One approximator per step plus the zero terminal slot.
    PerHorizon,
    /// A single approximator that receives `h / H` as an extra input.
    Shared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QFunction {
    pub mode: QMode,
    pub horizon: usize,
    pub n_actions: usize,
    pub featurizer: Featurizer,
    pub slots: Vec<Approximator>,
}

impl QFunction {
    /// Per-horizon slots for `h < H` are initialised from `rng` (fresh weights per slot).
    pub fn new(
        mode: QMode,
        fclass: FClass,
        featurizer: Featurizer,
        horizon: usize,
        n_actions: usize,
        rng: &RngStream,
    ) -> Self {
        let dim = featurizer.dim() + usize::from(mode == QMode::Shared);
        let slots = match mode {
            QMode::PerHorizon => (0..horizon)
                .map(|h| Approximator::new(fclass, dim, n_actions, &mut rng.derive(&format!("init/{h}"))))
                .chain(std::iter::once(Approximator::Zero { n_actions }))
                .collect(),
            QMode::Shared => vec![Approximator::new(fclass, dim, n_actions, &mut rng.derive("init"))],
        };
        QFunction { mode, horizon, n_actions, featurizer, slots }
    }

    pub fn input_dim(&self) -> usize {
        self.featurizer.dim() + usize::from(self.mode == QMode::Shared)
    }

    pub fn features_into(&self, s: &FactoredState, h: usize, out: &mut Vec<f64>) {
        out.clear();
        self.featurizer.write(s, out);
        if self.mode == QMode::Shared {
            out.push(h as f64 / self.horizon as f64);
        }
    }

    pub fn features(&self, s: &FactoredState, h: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.input_dim());
        self.features_into(s, h, &mut out);
        out
    }

    fn check_h(&self, h: usize) -> Result<()> {
        if h > self.horizon {
            return Err(Error::contract(format!("step {h} beyond horizon {}", self.horizon)));
        }
        Ok(())
    }

    pub fn slot_index(&self, h: usize) -> usize {
        match self.mode {
            QMode::PerHorizon => h,
            QMode::Shared => 0,
        }
    }

    /// Action values at `(s, h)`. In per-horizon mode `h = H` is identically zero.
    pub fn values(&self, s: &FactoredState, h: usize) -> Result<Vec<f64>> {
        self.check_h(h)?;
        let mut out = vec![0.0; self.n_actions];
        if self.mode == QMode::PerHorizon && h == self.horizon {
            return Ok(out);
        }
        let x = self.features(s, h);
        self.slots[self.slot_index(h)].eval(&x, &mut out);
        Ok(out)
    }

    /// Action values for precomputed features.
    pub fn values_from_features(&self, x: &[f64], h: usize, out: &mut [f64]) {
        if self.mode == QMode::PerHorizon && h == self.horizon {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        self.slots[self.slot_index(h)].eval(x, out);
    }

    pub fn predict(&self, s: &FactoredState, h: usize, action: usize) -> Result<f64> {
        if action >= self.n_actions {
            return Err(Error::contract(format!("action {action} out of range")));
        }
        Ok(self.values(s, h)?[action])
    }

    pub fn max_value(&self, s: &FactoredState, h: usize) -> Result<f64> {
        Ok(self.values(s, h)?.into_iter().fold(f64::NEG_INFINITY, f64::max))
    }

    pub fn fit_slot(&mut self, h: usize, batch: &Batch, cfg: &FitConfig, rng: &mut RngStream) -> Result<Vec<f64>> {
        self.check_h(h)?;
        let ix = self.slot_index(h);
        self.slots[ix].fit(batch, cfg, rng)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(x: f64, e: u32) -> FactoredState {
        FactoredState::new(vec![x, x, x], Endo::Int(e))
    }

    #[test]
    fn fresh_tabular_and_terminal_slot_are_zero() {
        let q = QFunction::new(QMode::PerHorizon, FClass::Tabular, Featurizer::Order, 5, 6, &RngStream::new(0, "q"));
        assert_eq!(q.slots.len(), 6);
        assert_eq!(q.predict(&state(0.3, 4), 2, 1).unwrap(), 0.0);
        let m = QFunction::new(QMode::PerHorizon, FClass::Mlp { hidden: 8 }, Featurizer::Order, 5, 6, &RngStream::new(0, "q"));
        assert_eq!(m.predict(&state(0.3, 4), 5, 3).unwrap(), 0.0);
    }

    #[test]
    fn out_of_range_arguments_are_contract_errors() {
        let q = QFunction::new(QMode::PerHorizon, FClass::Tabular, Featurizer::Order, 5, 6, &RngStream::new(0, "q"));
        assert!(matches!(q.predict(&state(0.3, 4), 6, 0), Err(Error::Contract(_))));
        assert!(matches!(q.predict(&state(0.3, 4), 0, 6), Err(Error::Contract(_))));
    }

    #[test]
    fn tabular_fit_is_cell_mean() {
        let mut a = Approximator::new(FClass::Tabular, 1, 2, &mut RngStream::new(0, "t"));
        let mut b = Batch::new(1);
        b.push(&[0.5], 0, 1.0);
        b.push(&[0.5], 0, 3.0);
        a.fit(&b, &FitConfig::default(), &mut RngStream::new(0, "f")).unwrap();
        let mut out = [0.0; 2];
        a.eval(&[0.5], &mut out);
        assert_eq!(out, [2.0, 0.0]);
    }

    #[test]
    fn linear_fit_recovers_slope() {
        let mut a = Approximator::new(FClass::Linear, 1, 1, &mut RngStream::new(0, "t"));
        let mut b = Batch::new(1);
        for i in 0..10 {
            let x = i as f64 * 0.3 - 1.0;
            b.push(&[x], 0, 2.0 * x);
        }
        let trace = a.fit(&b, &FitConfig::default(), &mut RngStream::new(0, "f")).unwrap();
        let Approximator::Linear(l) = &a else { unreachable!() };
        assert!((l.weights[0][0] - 2.0).abs() < 1e-8);
        assert!(l.weights[0][1].abs() < 1e-8);
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn mlp_fit_lowers_error() {
        let mut rng = RngStream::new(11, "data");
        let mut b = Batch::new(3);
        for _ in 0..10 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = rng.random_range(0..2);
            b.push(&x, a, rng.random_range(-1.0..1.0));
        }
        let mut m = Approximator::new(FClass::Mlp { hidden: 128 }, 3, 2, &mut RngStream::new(1, "init"));
        let cfg = FitConfig { updates: 500, lr: 0.001, ..FitConfig::default() };
        let trace = m.fit(&b, &cfg, &mut RngStream::new(2, "fit")).unwrap();
        assert!(trace.last().unwrap() < &trace[0]);
    }

    #[test]
    fn non_finite_target_is_rejected_before_update() {
        let mut m = Approximator::new(FClass::Mlp { hidden: 4 }, 1, 1, &mut RngStream::new(1, "init"));
        let before = m.clone();
        let mut b = Batch::new(1);
        b.push(&[0.1], 0, f64::NAN);
        assert!(matches!(m.fit(&b, &FitConfig::default(), &mut RngStream::new(0, "f")), Err(Error::NonFinite(_))));
        assert_eq!(m, before);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn serialization_round_trips_bit_exactly() {
        let mut q = QFunction::new(QMode::Shared, FClass::Mlp { hidden: 8 }, Featurizer::Inventory, 4, 3, &RngStream::new(9, "q"));
        if let Approximator::Mlp(m) = &mut q.slots[0] {
            m.params[0] = 0.1 + 0.2;
        }
        let text = serde_json::to_string(&q).unwrap();
        let back: QFunction = serde_json::from_str(&text).unwrap();
        assert_eq!(back, q);
        let mut t = QFunction::new(QMode::PerHorizon, FClass::Tabular, Featurizer::Inventory, 2, 2, &RngStream::new(0, "t"));
        let mut b = Batch::new(2);
        b.push(&[0.1, 1.0 / 3.0], 1, 0.7);
        t.fit_slot(0, &b, &FitConfig::default(), &mut RngStream::new(0, "f")).unwrap();
        let back: QFunction = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(back, t);
    }
}
