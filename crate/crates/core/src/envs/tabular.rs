//! Explicit finite factored MDPs with dense kernels.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Environment;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::types::{Endo, EndoKind, FactoredState};

/// Finite-horizon factored MDP.
///
/// Layouts (row-major):
/// `p_exo[h][x][a][x']`, `p_end[h][x][e][a][x'][e']`, `r[h][x][e][a][x']`, `nu[x][e]`.
/// The endogenous kernel and reward may depend on the next exogenous state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub n_exo: usize,
    pub n_endo: usize,
    pub n_actions: usize,
    pub horizon: usize,
    pub r_max: f64,
    pub p_exo: Vec<f64>,
    pub p_end: Vec<f64>,
    pub r: Vec<f64>,
    pub nu: Vec<f64>,
}

const ROW_TOL: f64 = 1e-12;

impl TabularMdp {
    /// All-zero kernels of the right sizes; callers fill the rows.
    pub fn zeros(n_exo: usize, n_endo: usize, n_actions: usize, horizon: usize, r_max: f64) -> Self {
        TabularMdp {
            n_exo,
            n_endo,
            n_actions,
            horizon,
            r_max,
            p_exo: vec![0.0; horizon * n_exo * n_actions * n_exo],
            p_end: vec![0.0; horizon * n_exo * n_endo * n_actions * n_exo * n_endo],
            r: vec![0.0; horizon * n_exo * n_endo * n_actions * n_exo],
            nu: vec![0.0; n_exo * n_endo],
        }
    }

    pub fn exo_ix(&self, h: usize, x: usize, a: usize) -> usize {
        ((h * self.n_exo + x) * self.n_actions + a) * self.n_exo
    }

    pub fn end_ix(&self, h: usize, x: usize, e: usize, a: usize, x2: usize) -> usize {
        ((((h * self.n_exo + x) * self.n_endo + e) * self.n_actions + a) * self.n_exo + x2) * self.n_endo
    }

    pub fn r_ix(&self, h: usize, x: usize, e: usize, a: usize) -> usize {
        (((h * self.n_exo + x) * self.n_endo + e) * self.n_actions + a) * self.n_exo
    }

    pub fn exo_row(&self, h: usize, x: usize, a: usize) -> &[f64] {
        let i = self.exo_ix(h, x, a);
        &self.p_exo[i..i + self.n_exo]
    }

    pub fn endo_row(&self, h: usize, x: usize, e: usize, a: usize, x2: usize) -> &[f64] {
        let i = self.end_ix(h, x, e, a, x2);
        &self.p_end[i..i + self.n_endo]
    }

    pub fn reward(&self, h: usize, x: usize, e: usize, a: usize, x2: usize) -> f64 {
        self.r[self.r_ix(h, x, e, a) + x2]
    }

    pub fn n_states(&self) -> usize {
        self.n_exo * self.n_endo
    }

    /// Joint next-state distribution over `(x', e')`, flattened as `x' * n_endo + e'`.
    pub fn joint_row(&self, h: usize, x: usize, e: usize, a: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_states()];
        for (x2, &px) in self.exo_row(h, x, a).iter().enumerate() {
            if px == 0.0 {
                continue;
            }
            for (e2, &pe) in self.endo_row(h, x, e, a, x2).iter().enumerate() {
                out[x2 * self.n_endo + e2] += px * pe;
            }
        }
        out
    }

    /// Expected one-step reward `Σ_x' P(x'|x,a) r(x,e,a,x')`.
    pub fn expected_reward(&self, h: usize, x: usize, e: usize, a: usize) -> f64 {
        let base = self.r_ix(h, x, e, a);
        self.exo_row(h, x, a).iter().enumerate().map(|(x2, p)| p * self.r[base + x2]).sum()
    }

    /// Checks every distribution row sums to one and rewards lie in `[-r_max, r_max]`.
    pub fn validate(&self) -> Result<()> {
        let check = |row: &[f64], what: &str| -> Result<()> {
            let s: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (s - 1.0).abs() > ROW_TOL {
                return Err(Error::invalid(format!("{what} row sums to {s}")));
            }
            Ok(())
        };
        check(&self.nu, "initial distribution")?;
        for h in 0..self.horizon {
            for x in 0..self.n_exo {
                for a in 0..self.n_actions {
                    check(self.exo_row(h, x, a), "exogenous")?;
                    for e in 0..self.n_endo {
                        for x2 in 0..self.n_exo {
                            check(self.endo_row(h, x, e, a, x2), "endogenous")?;
                        }
                    }
                }
            }
        }
        if self.r.iter().any(|r| !r.is_finite() || r.abs() > self.r_max) {
            return Err(Error::invalid("reward outside declared range"));
        }
        Ok(())
    }

    pub fn state_of(&self, x: usize, e: usize) -> FactoredState {
        FactoredState::new(vec![x as f64], Endo::Int(e as u32))
    }

    /// Tabular indices `(x, e)` of a factored state produced by [`TabularMdp::state_of`].
    pub fn indices(&self, s: &FactoredState) -> Result<(usize, usize)> {
        let x = s.exo.first().copied().unwrap_or(-1.0);
        let e = s.endo.as_int().ok_or_else(|| Error::contract("tabular endo must be an integer"))? as usize;
        if x < 0.0 || x.fract() != 0.0 || x as usize >= self.n_exo || e >= self.n_endo {
            return Err(Error::contract(format!("state ({x}, {e}) outside the tabular MDP")));
        }
        Ok((x as usize, e))
    }

    /// Replaces every endogenous row by `(1 - eps_p)·row + eps_p·q` for random rows `q`,
    /// so each row moves by at most `eps_p` in total variation.
    pub fn with_endo_mixture(&self, eps_p: f64, rng: &mut RngStream) -> TabularMdp {
        let mut m = self.clone();
        for chunk in m.p_end.chunks_mut(self.n_endo) {
            let q = random_distribution(self.n_endo, rng);
            for (p, qv) in chunk.iter_mut().zip(q) {
                *p = (1.0 - eps_p) * *p + eps_p * qv;
            }
        }
        m
    }

    /// Largest `ℓ1` distance between joint next-state rows of two same-shaped MDPs.
    pub fn max_row_l1_gap(&self, other: &TabularMdp) -> f64 {
        let mut gap: f64 = 0.0;
        for h in 0..self.horizon {
            for x in 0..self.n_exo {
                for e in 0..self.n_endo {
                    for a in 0..self.n_actions {
                        let p = self.joint_row(h, x, e, a);
                        let q = other.joint_row(h, x, e, a);
                        gap = gap.max(p.iter().zip(&q).map(|(u, v)| (u - v).abs()).sum());
                    }
                }
            }
        }
        gap
    }
}

/// A random probability vector with strictly positive entries.
pub fn random_distribution(n: usize, rng: &mut RngStream) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Random factored MDP whose per-action exogenous rows are mixtures
/// `(1 - eps)·base + eps·δ_{x_a}` with distinct targets for different actions,
/// giving pairwise total variation of exactly `eps` wherever `n_exo ≥ 2`.
/// Rewards lie in `[0, 1]`.
pub fn make_random_tabular_air_mdp(
    n_exo: usize,
    n_endo: usize,
    n_actions: usize,
    horizon: usize,
    eps_air: f64,
    rng: &mut RngStream,
) -> Result<TabularMdp> {
    if n_exo == 0 || n_endo == 0 || n_actions == 0 || horizon == 0 {
        return Err(Error::invalid("tabular MDP sizes must be at least 1"));
    }
    if !(0.0..=1.0).contains(&eps_air) {
        return Err(Error::invalid("eps_air must lie in [0, 1]"));
    }
    // A single exogenous state cannot be perturbed; the result is 0-AIR.
    let eps = if n_exo == 1 { 0.0 } else { eps_air };
    let mut m = TabularMdp::zeros(n_exo, n_endo, n_actions, horizon, 1.0);
    for h in 0..horizon {
        for x in 0..n_exo {
            let base = random_distribution(n_exo, rng);
            let offset = rng.random_range(0..n_exo);
            for a in 0..n_actions {
                let target = (offset + a) % n_exo;
                let i = m.exo_ix(h, x, a);
                for x2 in 0..n_exo {
                    let delta = if x2 == target { 1.0 } else { 0.0 };
                    m.p_exo[i + x2] = if eps == 0.0 { base[x2] } else { (1.0 - eps) * base[x2] + eps * delta };
                }
            }
        }
    }
    for chunk in m.p_end.chunks_mut(n_endo) {
        chunk.copy_from_slice(&random_distribution(n_endo, rng));
    }
    for r in m.r.iter_mut() {
        *r = rng.random::<f64>();
    }
    m.nu = random_distribution(n_exo * n_endo, rng);
    Ok(m)
}

/// Largest total-variation distance between exogenous rows of two actions.
pub fn measure_air_epsilon(m: &TabularMdp) -> f64 {
    let mut eps: f64 = 0.0;
    for h in 0..m.horizon {
        for x in 0..m.n_exo {
            for a in 0..m.n_actions {
                for b in a + 1..m.n_actions {
                    let p = m.exo_row(h, x, a);
                    let q = m.exo_row(h, x, b);
                    let tv = 0.5 * p.iter().zip(q).map(|(u, v)| (u - v).abs()).sum::<f64>();
                    eps = eps.max(tv);
                }
            }
        }
    }
    eps
}

fn sample_index(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    row.iter().rposition(|p| *p > 0.0).unwrap_or(row.len() - 1)
}

/// Simulator over a [`TabularMdp`]. Exo is the index as a one-element vector.
#[derive(Debug, Clone)]
pub struct TabularEnv {
    pub mdp: std::sync::Arc<TabularMdp>,
    pub eps_air: f64,
    x: usize,
    e: usize,
    h: usize,
}

impl TabularEnv {
    pub fn new(mdp: std::sync::Arc<TabularMdp>) -> Self {
        let eps_air = measure_air_epsilon(&mdp);
        TabularEnv { mdp, eps_air, x: 0, e: 0, h: 0 }
    }
}

impl Environment for TabularEnv {
    fn id(&self) -> &'static str {
        "tabular"
    }

    fn horizon(&self) -> usize {
        self.mdp.horizon
    }

    fn n_actions(&self) -> usize {
        self.mdp.n_actions
    }

    fn exo_dim(&self) -> usize {
        1
    }

    fn endo_kind(&self) -> EndoKind {
        EndoKind::Int
    }

    fn eps_air(&self) -> f64 {
        self.eps_air
    }

    fn r_max(&self) -> f64 {
        self.mdp.r_max
    }

    fn reset(&mut self, rng: &mut RngStream) -> FactoredState {
        let s = sample_index(&self.mdp.nu, rng.random());
        self.x = s / self.mdp.n_endo;
        self.e = s % self.mdp.n_endo;
        self.h = 0;
        self.mdp.state_of(self.x, self.e)
    }

    fn step(&mut self, action: usize, rng: &mut RngStream) -> (FactoredState, f64) {
        let m = &self.mdp;
        let h = self.h.min(m.horizon - 1);
        let ux: f64 = rng.random();
        let ue: f64 = rng.random();
        let x2 = sample_index(m.exo_row(h, self.x, action), ux);
        let e2 = sample_index(m.endo_row(h, self.x, self.e, action, x2), ue);
        let r = m.reward(h, self.x, self.e, action, x2);
        self.x = x2;
        self.e = e2;
        self.h += 1;
        (m.state_of(x2, e2), r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_eps_is_exactly_action_independent() {
        let m = make_random_tabular_air_mdp(4, 3, 3, 5, 0.0, &mut RngStream::new(1, "m")).unwrap();
        assert_eq!(measure_air_epsilon(&m), 0.0);
        m.validate().unwrap();
    }

    #[test]
    fn requested_eps_is_achieved() {
        let m = make_random_tabular_air_mdp(4, 2, 3, 3, 0.2, &mut RngStream::new(2, "m")).unwrap();
        let eps = measure_air_epsilon(&m);
        assert!((0.1..=0.2 + 1e-12).contains(&eps), "{eps}");
        m.validate().unwrap();
    }

    #[test]
    fn single_exo_state_falls_back_to_zero_eps() {
        let m = make_random_tabular_air_mdp(1, 2, 3, 3, 0.5, &mut RngStream::new(2, "m")).unwrap();
        assert_eq!(measure_air_epsilon(&m), 0.0);
    }

    #[test]
    fn tv_of_hand_rows() {
        let mut m = TabularMdp::zeros(2, 1, 2, 1, 1.0);
        m.p_exo.copy_from_slice(&[1.0, 0.0, 0.8, 0.2, 1.0, 0.0, 1.0, 0.0]);
        assert!((measure_air_epsilon(&m) - 0.2).abs() < 1e-15);
        let single = TabularMdp { n_actions: 1, p_exo: vec![1.0, 0.0, 0.0, 1.0], ..TabularMdp::zeros(2, 1, 1, 1, 1.0) };
        assert_eq!(measure_air_epsilon(&single), 0.0);
    }

    #[test]
    fn env_samples_follow_kernel_support() {
        let m = std::sync::Arc::new(make_random_tabular_air_mdp(3, 2, 2, 4, 0.1, &mut RngStream::new(5, "m")).unwrap());
        let mut env = TabularEnv::new(m.clone());
        let mut rng = RngStream::new(0, "roll");
        let s = env.reset(&mut rng);
        let (x, e) = m.indices(&s).unwrap();
        assert!(x < 3 && e < 2);
        for _ in 0..4 {
            let (s2, r) = env.step(1, &mut rng);
            assert!(m.indices(&s2).is_ok());
            assert!((0.0..=1.0).contains(&r));
        }
    }
}
