//! Endogenous and dynamics models, and the count-based empirical exogenous chain.

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{Batch, FitConfig, Mlp, Optimizer, DEFAULT_HIDDEN};
use crate::envs::{inventory_outcome, order_exec_endo, order_exec_reward, TabularMdp};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::types::{Dataset, Endo, EndoKind};

/// Exact reward formulas available without learning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    Order,
    Inventory,
    /// Predicted by the network's second output.
    Learned,
}

impl RewardKind {
    pub fn for_env(env: &str) -> Option<RewardKind> {
        match env {
            "order" => Some(RewardKind::Order),
            "inventory" => Some(RewardKind::Inventory),
            _ => None,
        }
    }

    fn exact(&self, exo: &[f64], endo: &Endo, action: usize, next_exo: &[f64]) -> f64 {
        match self {
            RewardKind::Order => order_exec_reward(exo, endo.floor_index().max(0) as u32, action),
            RewardKind::Inventory => inventory_outcome(endo.scalar(), action, next_exo[0]).1,
            RewardKind::Learned => unreachable!("learned rewards come from the network"),
        }
    }
}

/// Affine standardisation `(v - shift) / scale` per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map(Vec::len).unwrap_or(0);
        let n = rows.len().max(1) as f64;
        let mut shift = vec![0.0; d];
        for r in rows {
            for (s, v) in shift.iter_mut().zip(r) {
                *s += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&shift) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var.into_iter().map(|v| if v > 1e-12 { v.sqrt() } else { 1.0 }).collect();
        Standardizer { shift, scale }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.shift).zip(&self.scale).map(|((x, m), s)| (x - m) / s).collect()
    }

    pub fn invert(&self, k: usize, z: f64) -> f64 {
        z * self.scale[k] + self.shift[k]
    }
}

/// A multi-output regression network with standardised inputs and outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regressor {
    pub net: Mlp,
    pub input: Standardizer,
    pub output: Standardizer,
}

impl Regressor {
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.net.n_out];
        self.net.forward(&self.input.apply(x), &mut out);
        out.iter().enumerate().map(|(k, z)| self.output.invert(k, *z)).collect()
    }
}

/// Result of fitting a learned model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitReport {
    /// Mean absolute error per output on the held-out 10% of samples.
    pub holdout_mae: Option<Vec<f64>>,
    pub warnings: Vec<String>,
}

/// Trains `inputs → targets` by squared loss, holding out 10% of the samples.
pub fn fit_regressor(
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    hidden: usize,
    cfg: &FitConfig,
    rng: &mut RngStream,
) -> Result<(Regressor, FitReport)> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(Error::invalid("regression needs matching, non-empty inputs and targets"));
    }
    if targets.iter().flatten().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("regression target".into()));
    }
    let n = inputs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let n_hold = ((n as f64) * 0.1 + 0.5).floor() as usize;
    let (hold, train) = order.split_at(if n_hold < n { n_hold } else { 0 });
    let input = Standardizer::fit(&train.iter().map(|&i| inputs[i].clone()).collect::<Vec<_>>());
    let output = Standardizer::fit(&train.iter().map(|&i| targets[i].clone()).collect::<Vec<_>>());
    let d_out = targets[0].len();
    let mut batch = Batch::new(inputs[0].len());
    for &i in train {
        let x = input.apply(&inputs[i]);
        let y = output.apply(&targets[i]);
        for (k, yk) in y.into_iter().enumerate() {
            batch.push(&x, k, yk);
        }
    }
    let mut net = Mlp::glorot(inputs[0].len(), hidden, d_out, &mut rng.derive("init"));
    cfg.validate()?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, net.params.len());
    let mut grad = vec![0.0; net.params.len()];
    let bs = cfg.batch_size.min(batch.len());
    let mut rows = vec![0usize; bs];
    let mut fit_rng = rng.derive("batches");
    for _ in 0..cfg.updates {
        for r in rows.iter_mut() {
            *r = fit_rng.random_range(0..batch.len());
        }
        net.loss_and_grad(&batch.x, &batch.a, &batch.y, &rows, &mut grad);
        opt.step(&mut net.params, &grad)?;
    }
    let reg = Regressor { net, input, output };
    let holdout_mae = (!hold.is_empty()).then(|| {
        let mut mae = vec![0.0; d_out];
        for &i in hold {
            for (k, p) in reg.predict(&inputs[i]).into_iter().enumerate() {
                mae[k] += (p - targets[i][k]).abs() / hold.len() as f64;
            }
        }
        mae
    });
    Ok((reg, FitReport { holdout_mae, warnings: Vec::new() }))
}

/// Learned next-endo network with the reward either exact or from a second head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedEndo {
    pub reward: RewardKind,
    pub endo_kind: EndoKind,
    pub n_actions: usize,
    pub endo_lo: f64,
    pub endo_hi: f64,
    pub net: Option<Regressor>,
}

impl LearnedEndo {
    fn input(exo: &[f64], endo: &Endo, action: usize, next_exo: &[f64], n_actions: usize) -> Vec<f64> {
        let mut x = exo.to_vec();
        x.extend(endo.to_vec());
        x.push(action as f64 / (n_actions.max(2) - 1) as f64);
        x.extend_from_slice(next_exo);
        x
    }
}

/// Endogenous transition plus reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EndoModel {
    /// `P' = P - min(a, P)`, reward `X_h · min(a, P)`.
    Order,
    /// `X' = (X + A - D)^+` with the demand read from the next exo state.
    Inventory,
    /// Samples from the tabular endogenous kernel.
    Tabular { mdp: Arc<TabularMdp> },
    Learned(LearnedEndo),
}

impl EndoModel {
    pub fn exact_for_env(env: &str) -> Result<EndoModel> {
        match env {
            "order" => Ok(EndoModel::Order),
            "inventory" => Ok(EndoModel::Inventory),
            _ => Err(Error::invalid(format!("no exact endogenous model for environment {env:?}"))),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        !matches!(self, EndoModel::Tabular { .. })
    }

    /// Next endo and reward for `(exo_h, endo_h, a, exo_{h+1})`.
    pub fn endo_step(
        &self,
        h: usize,
        exo: &[f64],
        endo: &Endo,
        action: usize,
        next_exo: &[f64],
        rng: &mut RngStream,
    ) -> Result<(Endo, f64)> {
        match self {
            EndoModel::Tabular { mdp } => {
                let (x, e, x2) = tabular_ix(mdp, exo, endo, next_exo)?;
                let u: f64 = rng.random();
                let row = mdp.endo_row(h, x, e, action, x2);
                let mut acc = 0.0;
                let mut e2 = row.len() - 1;
                for (i, p) in row.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        e2 = i;
                        break;
                    }
                }
                Ok((Endo::Int(e2 as u32), mdp.reward(h, x, e, action, x2)))
            }
            _ => {
                let mut d = self.endo_distribution(h, exo, endo, action, next_exo)?;
                Ok(d.pop().map(|(e, _, r)| (e, r)).expect("deterministic model yields one outcome"))
            }
        }
    }

    /// All outcomes `(next endo, probability, reward)`.
    pub fn endo_distribution(
        &self,
        h: usize,
        exo: &[f64],
        endo: &Endo,
        action: usize,
        next_exo: &[f64],
    ) -> Result<Vec<(Endo, f64, f64)>> {
        match self {
            EndoModel::Order => {
                let p = endo.as_int().ok_or_else(|| Error::contract("order execution endo must be an integer"))?;
                Ok(vec![(Endo::Int(order_exec_endo(p, action)), 1.0, order_exec_reward(exo, p, action))])
            }
            EndoModel::Inventory => {
                let (x, r) = inventory_outcome(endo.scalar(), action, next_exo[0]);
                Ok(vec![(Endo::Real(vec![x]), 1.0, r)])
            }
            EndoModel::Tabular { mdp } => {
                let (x, e, x2) = tabular_ix(mdp, exo, endo, next_exo)?;
                let r = mdp.reward(h, x, e, action, x2);
                Ok(mdp
                    .endo_row(h, x, e, action, x2)
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(e2, p)| (Endo::Int(e2 as u32), *p, r))
                    .collect())
            }
            EndoModel::Learned(m) => {
                let net = m.net.as_ref().ok_or_else(|| Error::NotFitted("learned endogenous model".into()))?;
                let out = net.predict(&LearnedEndo::input(exo, endo, action, next_exo, m.n_actions));
                let v = out[0].clamp(m.endo_lo, m.endo_hi);
                let next = match m.endo_kind {
                    EndoKind::Int => Endo::Int(v.round() as u32),
                    EndoKind::Real(_) => Endo::Real(vec![v]),
                };
                let r = match m.reward {
                    RewardKind::Learned => out[1],
                    exact => exact.exact(exo, endo, action, next_exo),
                };
                Ok(vec![(next, 1.0, r)])
            }
        }
    }
}

fn tabular_ix(mdp: &TabularMdp, exo: &[f64], endo: &Endo, next_exo: &[f64]) -> Result<(usize, usize, usize)> {
    let idx = |v: f64, n: usize| -> Result<usize> {
        if v >= 0.0 && v.fract() == 0.0 && (v as usize) < n {
            Ok(v as usize)
        } else {
            Err(Error::contract(format!("tabular index {v} out of range")))
        }
    };
    let e = endo.as_int().ok_or_else(|| Error::contract("tabular endo must be an integer"))? as usize;
    if e >= mdp.n_endo {
        return Err(Error::contract(format!("endo index {e} out of range")));
    }
    Ok((idx(exo[0], mdp.n_exo)?, e, idx(next_exo[0], mdp.n_exo)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndoFitOptions {
    pub hidden: usize,
    /// Learn the reward with a second output instead of using the exact formula.
    pub reward_head: bool,
}

impl Default for EndoFitOptions {
    fn default() -> Self {
        EndoFitOptions { hidden: DEFAULT_HIDDEN, reward_head: false }
    }
}

/// Fits `(exo_h, endo_h, a_h, exo_{h+1}) → endo_{h+1}` on every recorded transition.
pub fn fit_endo_model(d: &Dataset, cfg: &FitConfig, opts: &EndoFitOptions) -> Result<(EndoModel, FitReport)> {
    if d.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    if d.meta.endo_kind.dim() != 1 {
        return Err(Error::invalid("learned endogenous models support scalar endo only"));
    }
    let reward = if opts.reward_head {
        RewardKind::Learned
    } else {
        RewardKind::for_env(&d.meta.env)
            .ok_or_else(|| Error::invalid(format!("no exact reward for {:?}; enable the reward head", d.meta.env)))?
    };
    let mut inputs = Vec::with_capacity(d.n_transitions());
    let mut targets = Vec::with_capacity(d.n_transitions());
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut varies = false;
    for ep in &d.episodes {
        for (h, step) in ep.steps.iter().enumerate() {
            let next = ep.state(h + 1);
            let (e, e2) = (step.state.endo.scalar(), next.endo.scalar());
            lo = lo.min(e).min(e2);
            hi = hi.max(e).max(e2);
            varies |= e != e2;
            inputs.push(LearnedEndo::input(&step.state.exo, &step.state.endo, step.action, &next.exo, d.meta.n_actions));
            let mut t = vec![e2];
            if opts.reward_head {
                t.push(step.reward);
            }
            targets.push(t);
        }
    }
    let mut rng = RngStream::new(cfg.seed, "endo-model");
    let (net, mut report) = fit_regressor(&inputs, &targets, opts.hidden, cfg, &mut rng)?;
    if !varies {
        report.warnings.push("no endo variation".into());
    }
    let model = LearnedEndo {
        reward,
        endo_kind: d.meta.endo_kind,
        n_actions: d.meta.n_actions,
        endo_lo: lo.max(0.0),
        endo_hi: hi,
        net: Some(net),
    };
    Ok((EndoModel::Learned(model), report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsKind {
    /// `exo → next exo`; the action is never an input.
    ExoOnly,
    /// `(exo, endo, action) → (next exo, next endo, reward)`.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsModel {
    pub kind: DynamicsKind,
    pub exo_dim: usize,
    pub endo_kind: EndoKind,
    pub n_actions: usize,
    pub endo_lo: f64,
    pub endo_hi: f64,
    pub net: Regressor,
}

impl DynamicsModel {
    fn full_input(exo: &[f64], endo: &Endo, action: usize, n_actions: usize) -> Vec<f64> {
        let mut x = exo.to_vec();
        x.extend(endo.to_vec());
        let mut onehot = vec![0.0; n_actions];
        onehot[action.min(n_actions - 1)] = 1.0;
        x.extend(onehot);
        x
    }

    /// Predicted next exo state (the action is ignored for the exo-only kind).
    pub fn predict_exo(&self, exo: &[f64], endo: &Endo, action: usize) -> Vec<f64> {
        match self.kind {
            DynamicsKind::ExoOnly => self.net.predict(exo),
            DynamicsKind::Full => self.net.predict(&Self::full_input(exo, endo, action, self.n_actions))[..self.exo_dim].to_vec(),
        }
    }

    /// Full-model prediction of `(next exo, next endo, reward)`.
    pub fn predict_full(&self, exo: &[f64], endo: &Endo, action: usize) -> Result<(Vec<f64>, Endo, f64)> {
        if self.kind != DynamicsKind::Full {
            return Err(Error::contract("exo-only model cannot predict endo or reward"));
        }
        let out = self.net.predict(&Self::full_input(exo, endo, action, self.n_actions));
        let v = out[self.exo_dim].clamp(self.endo_lo, self.endo_hi);
        let next = match self.endo_kind {
            EndoKind::Int => Endo::Int(v.round() as u32),
            EndoKind::Real(_) => Endo::Real(vec![v]),
        };
        Ok((out[..self.exo_dim].to_vec(), next, out[self.exo_dim + 1]))
    }
}

pub fn fit_dynamics_model(d: &Dataset, kind: DynamicsKind, cfg: &FitConfig, hidden: usize) -> Result<(DynamicsModel, FitReport)> {
    if d.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    if kind == DynamicsKind::Full && d.meta.endo_kind.dim() != 1 {
        return Err(Error::invalid("full dynamics models support scalar endo only"));
    }
    let n_actions = d.meta.n_actions;
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for ep in &d.episodes {
        for (h, step) in ep.steps.iter().enumerate() {
            let next = ep.state(h + 1);
            lo = lo.min(next.endo.scalar());
            hi = hi.max(next.endo.scalar());
            match kind {
                DynamicsKind::ExoOnly => {
                    inputs.push(step.state.exo.clone());
                    targets.push(next.exo.clone());
                }
                DynamicsKind::Full => {
                    inputs.push(DynamicsModel::full_input(&step.state.exo, &step.state.endo, step.action, n_actions));
                    let mut t = next.exo.clone();
                    t.push(next.endo.scalar());
                    t.push(step.reward);
                    targets.push(t);
                }
            }
        }
    }
    let label = match kind {
        DynamicsKind::ExoOnly => "dynamics/exo",
        DynamicsKind::Full => "dynamics/full",
    };
    let (net, report) = fit_regressor(&inputs, &targets, hidden, cfg, &mut RngStream::new(cfg.seed, label))?;
    Ok((
        DynamicsModel {
            kind,
            exo_dim: d.meta.exo_dim,
            endo_kind: d.meta.endo_kind,
            n_actions,
            endo_lo: lo.max(0.0),
            endo_hi: hi,
            net,
        },
        report,
    ))
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Exo states seen at one step, with their empirical successors at the next step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExoLevel {
    pub states: Vec<Vec<f64>>,
    /// `next[n]` lists `(successor index at h+1, probability)`; empty at `h = H`.
    pub next: Vec<Vec<(usize, f64)>>,
    index: HashMap<Vec<u64>, usize>,
}

impl ExoLevel {
    pub fn lookup(&self, exo: &[f64]) -> Option<usize> {
        self.index.get(&bits(exo)).copied()
    }

    fn intern(&mut self, exo: &[f64]) -> usize {
        if let Some(i) = self.lookup(exo) {
            return i;
        }
        self.states.push(exo.to_vec());
        self.next.push(Vec::new());
        self.index.insert(bits(exo), self.states.len() - 1);
        self.states.len() - 1
    }

    /// Index of the stored state closest to `exo` in Euclidean distance.
    pub fn nearest(&self, exo: &[f64]) -> usize {
        if let Some(i) = self.lookup(exo) {
            return i;
        }
        let dist = |s: &[f64]| s.iter().zip(exo).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        (0..self.states.len())
            .min_by(|&a, &b| dist(&self.states[a]).total_cmp(&dist(&self.states[b])))
            .unwrap_or(0)
    }
}

/// Count-ratio exogenous model `P̂(x_h → x_{h+1}) = count(x_h → x_{h+1}) / count(x_h)`,
/// identical for every action, with exo states matched bit-exactly per step.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalExo {
    pub horizon: usize,
    pub levels: Vec<ExoLevel>,
    /// Empirical initial distribution over `(level-0 index, initial endo)`.
    pub init: Vec<(usize, Endo, f64)>,
}

pub fn empirical_exo_mdp(d: &Dataset) -> EmpiricalExo {
    let horizon = d.horizon();
    let mut levels: Vec<ExoLevel> = (0..=horizon).map(|_| ExoLevel::default()).collect();
    let mut counts: Vec<HashMap<(usize, usize), usize>> = vec![HashMap::new(); horizon];
    let mut init: Vec<(usize, Endo, f64)> = Vec::new();
    let w = 1.0 / d.len().max(1) as f64;
    for ep in &d.episodes {
        let mut prev = levels[0].intern(ep.exo(0));
        let s0 = &ep.state(0).endo;
        match init.iter_mut().find(|(n, e, _)| *n == prev && e == s0) {
            Some(entry) => entry.2 += w,
            None => init.push((prev, s0.clone(), w)),
        }
        for h in 0..horizon.min(ep.len()) {
            let cur = levels[h + 1].intern(ep.exo(h + 1));
            *counts[h].entry((prev, cur)).or_insert(0) += 1;
            prev = cur;
        }
    }
    for (h, c) in counts.into_iter().enumerate() {
        let mut totals = vec![0usize; levels[h].states.len()];
        for (&(a, _), &n) in &c {
            totals[a] += n;
        }
        let mut entries: Vec<((usize, usize), usize)> = c.into_iter().collect();
        entries.sort_unstable();
        for ((a, b), n) in entries {
            levels[h].next[a].push((b, n as f64 / totals[a] as f64));
        }
    }
    EmpiricalExo { horizon, levels, init }
}

impl EmpiricalExo {
    /// Successor distribution of `exo` at step `h`; unseen states self-loop.
    pub fn kernel(&self, h: usize, exo: &[f64]) -> Vec<(Vec<f64>, f64)> {
        match self.levels.get(h).and_then(|l| l.lookup(exo)) {
            Some(i) if h < self.horizon => {
                self.levels[h].next[i].iter().map(|&(j, p)| (self.levels[h + 1].states[j].clone(), p)).collect()
            }
            _ => vec![(exo.to_vec(), 1.0)],
        }
    }

    /// Dense `p[h][x][x']` and `nu[x]` for datasets whose exo is a tabular index in `0..n_exo`.
    pub fn tabular_kernel(&self, n_exo: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let ix = |v: &[f64]| -> Result<usize> {
            let x = v[0];
            if x >= 0.0 && x.fract() == 0.0 && (x as usize) < n_exo {
                Ok(x as usize)
            } else {
                Err(Error::invalid(format!("exo value {x} is not a tabular index below {n_exo}")))
            }
        };
        let mut p = vec![0.0; self.horizon * n_exo * n_exo];
        for h in 0..self.horizon {
            for x in 0..n_exo {
                let row = &mut p[(h * n_exo + x) * n_exo..(h * n_exo + x + 1) * n_exo];
                match self.levels[h].lookup(&[x as f64]) {
                    Some(i) => {
                        for &(j, q) in &self.levels[h].next[i] {
                            row[ix(&self.levels[h + 1].states[j])?] += q;
                        }
                    }
                    None => row[x] = 1.0,
                }
            }
        }
        let mut nu = vec![0.0; n_exo];
        for (n, _, w) in &self.init {
            nu[ix(&self.levels[0].states[*n])?] += w;
        }
        Ok((p, nu))
    }
}
