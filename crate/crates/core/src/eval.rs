//! Policy evaluation: the replay estimator Ĵ, suboptimality and evaluation bounds,
//! exact DP oracles, and hyperparameter selection.

use crate::algos::{sweep_index, LookupPolicy, Policy, TabularPolicy};
use crate::collect::rollout;
use crate::envs::{Environment, TabularMdp};
use crate::error::{Error, Result};
use crate::models::{EmpiricalExo, EndoModel};
use crate::rng::RngStream;
use crate::types::{AirSpec, Dataset, Endo, FactoredState};

pub const DEFAULT_ZETA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub j_hat: f64,
    pub n_traj: usize,
    pub zeta: f64,
    /// Evaluation-error bound for `n_traj` trajectories at confidence `1 - zeta`.
    pub bound: f64,
    pub returns: Vec<f64>,
}

impl EvalReport {
    pub fn stderr(&self) -> f64 {
        mean_stderr(&self.returns).1
    }

    pub fn csv_header() -> &'static str {
        "n,j_hat,bound,zeta,seed"
    }

    pub fn csv_row(&self, seed: u64) -> String {
        format!("{},{},{},{},{}", self.n_traj, self.j_hat, self.bound, self.zeta, seed)
    }
}

/// Sample mean and standard error (`s / sqrt(n)`, zero for fewer than two values).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Return of `policy` along episode `ep`'s exogenous path with endo transitions from `m`.
fn replay_return(
    policy: &Policy,
    ep: &crate::types::Episode,
    m: &EndoModel,
    horizon: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    let mut endo = ep.state(0).endo.clone();
    let mut total = 0.0;
    for h in 0..horizon {
        let exo = ep.exo(h);
        let s = FactoredState::new(exo.to_vec(), endo);
        let a = policy.act(&s, h, rng)?;
        let (e2, r) = m.endo_step(h, exo, &s.endo, a, ep.exo(h + 1), rng)?;
        total += r;
        endo = e2;
    }
    Ok(total)
}

/// Replays every stored exogenous trajectory under `policy` and model `m`; Ĵ is the mean return.
pub fn j_hat(policy: &Policy, d: &Dataset, m: &EndoModel, spec: &AirSpec, rng: &mut RngStream) -> Result<EvalReport> {
    j_hat_with_zeta(policy, d, m, spec, DEFAULT_ZETA, rng)
}

pub fn j_hat_with_zeta(
    policy: &Policy,
    d: &Dataset,
    m: &EndoModel,
    spec: &AirSpec,
    zeta: f64,
    rng: &mut RngStream,
) -> Result<EvalReport> {
    if d.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    if d.horizon() != spec.horizon {
        return Err(Error::invalid(format!("dataset horizon {} does not match {}", d.horizon(), spec.horizon)));
    }
    let returns = d
        .episodes
        .iter()
        .map(|ep| replay_return(policy, ep, m, spec.horizon, rng))
        .collect::<Result<Vec<f64>>>()?;
    let j = returns.iter().sum::<f64>() / returns.len() as f64;
    let bound = eval_bound_thm2(returns.len(), zeta, spec)?;
    Ok(EvalReport { j_hat: j, n_traj: returns.len(), zeta, bound, returns })
}

/// `v_max (H ε_air + H ε_p + sqrt(ln(2/ζ) / 2n))`.
pub fn eval_bound_thm2(n: usize, zeta: f64, spec: &AirSpec) -> Result<f64> {
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(Error::invalid(format!("zeta {zeta} must lie in (0, 1)")));
    }
    if n == 0 {
        return Err(Error::invalid("bound needs at least one trajectory"));
    }
    let h = spec.horizon as f64;
    Ok(spec.v_max * (h * spec.eps_air + h * spec.eps_p + ((2.0 / zeta).ln() / (2.0 * n as f64)).sqrt()))
}

/// `2 v_max H (ε_air + ε_p) + (H+1) H sqrt(|S^end||A|) sqrt(72 v_max² ln(H |F| |S^end||A| / ζ) / n + 2 ε_apx)`,
/// with `|S^end|` the size of the endo sweep.
pub fn subopt_bound_thm1(n: usize, zeta: f64, spec: &AirSpec, f_class_size: f64, eps_apx: f64) -> Result<f64> {
    if n == 0 || !(f_class_size > 0.0) || spec.endo_sweep.is_empty() {
        return Err(Error::invalid("bound sizes must be positive"));
    }
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(Error::invalid(format!("zeta {zeta} must lie in (0, 1)")));
    }
    if !(eps_apx >= 0.0) {
        return Err(Error::invalid(format!("eps_apx {eps_apx} must be non-negative")));
    }
    let h = spec.horizon as f64;
    let sa = (spec.endo_sweep.len() * spec.n_actions) as f64;
    let log = (h * f_class_size * sa / zeta).ln();
    let sampling = (72.0 * spec.v_max * spec.v_max * log / n as f64 + 2.0 * eps_apx).sqrt();
    Ok(2.0 * spec.v_max * h * (spec.eps_air + spec.eps_p) + (h + 1.0) * h * sa.sqrt() * sampling)
}

/// Values `v[h][x][e]` for `h = 0..=H` (flattened), `J = Σ ν v_0`, and the greedy policy when optimizing.
#[derive(Debug, Clone, PartialEq)]
pub struct DpSolution {
    pub v: Vec<f64>,
    pub j: f64,
    pub policy: Option<TabularPolicy>,
}

impl DpSolution {
    pub fn value(&self, m: &TabularMdp, h: usize, x: usize, e: usize) -> f64 {
        self.v[(h * m.n_exo + x) * m.n_endo + e]
    }
}

fn q_value(m: &TabularMdp, next: &[f64], h: usize, x: usize, e: usize, a: usize) -> f64 {
    let base = m.r_ix(h, x, e, a);
    let mut q = 0.0;
    for (x2, &px) in m.exo_row(h, x, a).iter().enumerate() {
        if px == 0.0 {
            continue;
        }
        let cont: f64 = m.endo_row(h, x, e, a, x2).iter().zip(&next[x2 * m.n_endo..]).map(|(p, v)| p * v).sum();
        q += px * (m.r[base + x2] + cont);
    }
    q
}

/// Exact backward induction. Without `policy`, returns optimal values and a greedy
/// optimal policy (ties toward the lowest action); with it, evaluates that policy.
pub fn dp_solve(m: &TabularMdp, policy: Option<&Policy>) -> Result<DpSolution> {
    m.validate()?;
    let ns = m.n_states();
    let mut v = vec![0.0; (m.horizon + 1) * ns];
    let mut actions = Vec::with_capacity(m.horizon * ns);
    for h in (0..m.horizon).rev() {
        let (head, tail) = v.split_at_mut((h + 1) * ns);
        let next = &tail[..ns];
        let cur = &mut head[h * ns..];
        for x in 0..m.n_exo {
            for e in 0..m.n_endo {
                cur[x * m.n_endo + e] = match policy {
                    None => {
                        let mut best = (f64::NEG_INFINITY, 0);
                        for a in 0..m.n_actions {
                            let q = q_value(m, next, h, x, e, a);
                            if q > best.0 {
                                best = (q, a);
                            }
                        }
                        actions.push(best.1);
                        best.0
                    }
                    Some(p) => {
                        let probs = p.probabilities(&m.state_of(x, e), h)?;
                        probs
                            .iter()
                            .enumerate()
                            .filter(|(_, w)| **w > 0.0)
                            .map(|(a, w)| w * q_value(m, next, h, x, e, a))
                            .sum()
                    }
                };
            }
        }
    }
    let j = m.nu.iter().zip(&v[..ns]).map(|(p, v)| p * v).sum();
    let policy = policy.is_none().then(|| {
        // actions were pushed from h = H-1 down to 0
        let mut ordered = Vec::with_capacity(actions.len());
        for h in 0..m.horizon {
            let start = (m.horizon - 1 - h) * ns;
            ordered.extend_from_slice(&actions[start..start + ns]);
        }
        TabularPolicy::deterministic(m.horizon, m.n_exo, m.n_endo, m.n_actions, &ordered)
    });
    Ok(DpSolution { v, j, policy })
}

/// The baseline MDP `M_b`: exogenous kernel replaced by the behaviour policy's
/// marginal exo transition (action independent, self-loops where unreached),
/// endo kernel and reward taken from `endo`, initial distribution from `m`.
pub fn build_baseline_mdp(m: &TabularMdp, behavior: &Policy, endo: &TabularMdp) -> Result<TabularMdp> {
    if (endo.n_exo, endo.n_endo, endo.n_actions, endo.horizon) != (m.n_exo, m.n_endo, m.n_actions, m.horizon) {
        return Err(Error::invalid("endogenous model shape differs from the MDP"));
    }
    let (nx, ne) = (m.n_exo, m.n_endo);
    let mut out = TabularMdp { p_exo: vec![0.0; m.p_exo.len()], ..endo.clone() };
    out.nu = m.nu.clone();
    out.r_max = m.r_max.max(endo.r_max);
    let mut dist = m.nu.clone();
    for h in 0..m.horizon {
        let mut flow = vec![0.0; nx * nx];
        let mut next = vec![0.0; nx * ne];
        for x in 0..nx {
            for e in 0..ne {
                let w = dist[x * ne + e];
                if w == 0.0 {
                    continue;
                }
                let probs = behavior.probabilities(&m.state_of(x, e), h)?;
                for (a, pa) in probs.iter().enumerate() {
                    if *pa == 0.0 {
                        continue;
                    }
                    for (x2, px) in m.exo_row(h, x, a).iter().enumerate() {
                        let f = w * pa * px;
                        if f == 0.0 {
                            continue;
                        }
                        flow[x * nx + x2] += f;
                        for (e2, pe) in m.endo_row(h, x, e, a, x2).iter().enumerate() {
                            next[x2 * ne + e2] += f * pe;
                        }
                    }
                }
            }
        }
        for x in 0..nx {
            let total: f64 = flow[x * nx..(x + 1) * nx].iter().sum();
            let mut row = vec![0.0; nx];
            if total > 0.0 {
                for x2 in 0..nx {
                    row[x2] = flow[x * nx + x2] / total;
                }
            } else {
                row[x] = 1.0;
            }
            for a in 0..m.n_actions {
                let i = out.exo_ix(h, x, a);
                out.p_exo[i..i + nx].copy_from_slice(&row);
            }
        }
        dist = next;
    }
    Ok(out)
}

/// Replay MDP: an empirical exogenous chain paired with an endogenous model,
/// with endo values restricted to the sweep grid.
#[derive(Debug, Clone)]
pub struct ReplayMdp {
    pub chain: EmpiricalExo,
    pub endo: EndoModel,
    pub spec: AirSpec,
}

impl ReplayMdp {
    pub fn new(chain: EmpiricalExo, endo: EndoModel, spec: AirSpec) -> Self {
        ReplayMdp { chain, endo, spec }
    }

    /// `Σ_outcomes p (r + v_next(node', cell'))` for one action.
    fn backup(&self, h: usize, node: usize, e: &Endo, a: usize, next: &[Vec<f64>]) -> Result<f64> {
        let level = &self.chain.levels[h];
        let exo = &level.states[node];
        let mut q = 0.0;
        for &(j, p) in &level.next[node] {
            let exo2 = &self.chain.levels[h + 1].states[j];
            for (e2, pe, r) in self.endo.endo_distribution(h, exo, e, a, exo2)? {
                q += p * pe * (r + next[j][sweep_index(&self.spec.endo_sweep, &e2)]);
            }
        }
        Ok(q)
    }

    fn check(&self) -> Result<()> {
        if self.chain.horizon != self.spec.horizon {
            return Err(Error::invalid("exogenous chain horizon differs from the AirSpec horizon"));
        }
        if self.spec.endo_sweep.is_empty() {
            return Err(Error::invalid("empty endogenous sweep"));
        }
        Ok(())
    }

    fn initial_value(&self, v0: &[Vec<f64>]) -> f64 {
        self.chain.init.iter().map(|(n, e, w)| w * v0[*n][sweep_index(&self.spec.endo_sweep, e)]).sum()
    }

    /// Optimal value and a greedy lookup policy (ties toward the lowest action).
    pub fn solve(&self) -> Result<(f64, LookupPolicy)> {
        self.check()?;
        let sweep = &self.spec.endo_sweep;
        let horizon = self.spec.horizon;
        let mut next: Vec<Vec<f64>> = vec![vec![0.0; sweep.len()]; self.chain.levels[horizon].states.len()];
        let mut levels = vec![(Vec::new(), Vec::new()); horizon];
        for h in (0..horizon).rev() {
            let n = self.chain.levels[h].states.len();
            let mut cur = vec![vec![0.0; sweep.len()]; n];
            let mut acts = vec![vec![0; sweep.len()]; n];
            for node in 0..n {
                for (k, e) in sweep.iter().enumerate() {
                    let mut best = (f64::NEG_INFINITY, 0);
                    for a in 0..self.spec.n_actions {
                        let q = self.backup(h, node, e, a, &next)?;
                        if q > best.0 {
                            best = (q, a);
                        }
                    }
                    cur[node][k] = best.0;
                    acts[node][k] = best.1;
                }
            }
            levels[h] = (self.chain.levels[h].states.clone(), acts);
            next = cur;
        }
        let policy = LookupPolicy { n_actions: self.spec.n_actions, sweep: sweep.clone(), levels };
        Ok((self.initial_value(&next), policy))
    }

    /// Exact value of `policy` on the replay MDP.
    pub fn evaluate(&self, policy: &Policy) -> Result<f64> {
        self.check()?;
        let sweep = &self.spec.endo_sweep;
        let horizon = self.spec.horizon;
        let mut next: Vec<Vec<f64>> = vec![vec![0.0; sweep.len()]; self.chain.levels[horizon].states.len()];
        for h in (0..horizon).rev() {
            let level = &self.chain.levels[h];
            let mut cur = vec![vec![0.0; sweep.len()]; level.states.len()];
            for (node, exo) in level.states.iter().enumerate() {
                for (k, e) in sweep.iter().enumerate() {
                    let probs = policy.probabilities(&FactoredState::new(exo.clone(), e.clone()), h)?;
                    let mut v = 0.0;
                    for (a, w) in probs.iter().enumerate() {
                        if *w > 0.0 {
                            v += w * self.backup(h, node, e, a, &next)?;
                        }
                    }
                    cur[node][k] = v;
                }
            }
            next = cur;
        }
        Ok(self.initial_value(&next))
    }

    /// The replay MDP as a [`TabularMdp`]: exo index `x` at step `h` is the `x`-th stored
    /// state of that step (padded self-looping states fill smaller steps), endo index is
    /// the sweep cell. Rewards are those of the first endo outcome.
    pub fn to_tabular(&self) -> Result<TabularMdp> {
        self.check()?;
        let sweep = &self.spec.endo_sweep;
        let horizon = self.spec.horizon;
        let nx = self.chain.levels.iter().map(|l| l.states.len()).max().unwrap_or(1).max(1);
        let ne = sweep.len();
        let na = self.spec.n_actions;
        let mut m = TabularMdp::zeros(nx, ne, na, horizon, self.spec.r_max);
        for h in 0..horizon {
            let level = &self.chain.levels[h];
            for x in 0..nx {
                for a in 0..na {
                    let i = m.exo_ix(h, x, a);
                    if x < level.states.len() {
                        for &(j, p) in &level.next[x] {
                            m.p_exo[i + j] += p;
                        }
                    } else {
                        m.p_exo[i + x] = 1.0;
                    }
                }
                for (k, e) in sweep.iter().enumerate() {
                    for a in 0..na {
                        for x2 in 0..nx {
                            let i = m.end_ix(h, x, k, a, x2);
                            let real = x < level.states.len() && x2 < self.chain.levels[h + 1].states.len();
                            if !real {
                                m.p_end[i + k] = 1.0;
                                continue;
                            }
                            let outcomes = self.endo.endo_distribution(
                                h,
                                &level.states[x],
                                e,
                                a,
                                &self.chain.levels[h + 1].states[x2],
                            )?;
                            for (e2, pe, _) in &outcomes {
                                m.p_end[i + sweep_index(sweep, e2)] += pe;
                            }
                            let ri = m.r_ix(h, x, k, a) + x2;
                            m.r[ri] = outcomes.first().map(|o| o.2).unwrap_or(0.0);
                        }
                    }
                }
            }
        }
        for (n, e, w) in &self.chain.init {
            m.nu[n * ne + sweep_index(sweep, e)] += w;
        }
        Ok(m)
    }
}

/// Monte Carlo return of `policy` over `n_rollouts` fresh episodes: `(mean, stderr)`.
pub fn j_true_mc(policy: &Policy, env: &mut dyn Environment, n_rollouts: usize, rng: &RngStream) -> Result<(f64, f64)> {
    let mut returns = Vec::with_capacity(n_rollouts);
    for i in 0..n_rollouts {
        let mut env_rng = rng.derive(&format!("env/{i}"));
        let mut pol_rng = rng.derive(&format!("policy/{i}"));
        let ep = rollout(env, policy, &mut env_rng, &mut pol_rng)?;
        returns.push(ep.total_reward());
    }
    if returns.is_empty() {
        return Ok((0.0, 0.0));
    }
    Ok(mean_stderr(&returns))
}

/// Scoring context for [`select_hyperparams`]. The offline variant carries no
/// environment, so offline selection cannot consult the true MDP.
pub enum SelectContext<'a> {
    Offline { data: &'a Dataset, model: &'a EndoModel, spec: &'a AirSpec, seed: u64 },
    Online { env: &'a mut dyn Environment, rollouts: usize, seed: u64 },
}

/// Trains every candidate, scores it, and returns `(index, score)` of the best one;
/// ties go to the earliest candidate.
pub fn select_hyperparams<C, F>(candidates: &[C], mut ctx: SelectContext<'_>, mut train: F) -> Result<(usize, f64)>
where
    F: FnMut(&C) -> Result<Policy>,
{
    if candidates.is_empty() {
        return Err(Error::invalid("no hyperparameter candidates"));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, c) in candidates.iter().enumerate() {
        let policy = train(c)?;
        let score = match &mut ctx {
            SelectContext::Offline { data, model, spec, seed } => {
                j_hat(&policy, data, model, spec, &mut RngStream::new(*seed, "select"))?.j_hat
            }
            SelectContext::Online { env, rollouts, seed } => {
                j_true_mc(&policy, &mut **env, *rollouts, &RngStream::new(*seed, "select"))?.0
            }
        };
        if score > best.1 {
            best = (i, score);
        }
    }
    Ok(best)
}
