use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Endogenous part of a state: an integer count or a small real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Endo {
    Int(u32),
    Real(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EndoKind {
    Int,
    Real(usize),
}

impl Endo {
    pub fn kind(&self) -> EndoKind {
        match self {
            Endo::Int(_) => EndoKind::Int,
            Endo::Real(v) => EndoKind::Real(v.len()),
        }
    }

    pub fn as_int(&self) -> Option<u32> {
        match self {
            Endo::Int(p) => Some(*p),
            Endo::Real(_) => None,
        }
    }

    /// First component as a real number.
    pub fn scalar(&self) -> f64 {
        match self {
            Endo::Int(p) => *p as f64,
            Endo::Real(v) => v.first().copied().unwrap_or(0.0),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            Endo::Int(p) => vec![*p as f64],
            Endo::Real(v) => v.clone(),
        }
    }

    /// Integer cell used for sweep-membership tests; real values are floored.
    pub fn floor_index(&self) -> i64 {
        match self {
            Endo::Int(p) => *p as i64,
            Endo::Real(v) => v.first().map(|x| x.floor() as i64).unwrap_or(0),
        }
    }
}

impl EndoKind {
    pub fn dim(&self) -> usize {
        match self {
            EndoKind::Int => 1,
            EndoKind::Real(d) => *d,
        }
    }
}

impl fmt::Display for EndoKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EndoKind::Int => write!(f, "int"),
            EndoKind::Real(d) => write!(f, "real{}", d),
        }
    }
}

impl std::str::FromStr for EndoKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "int" {
            return Ok(EndoKind::Int);
        }
        s.strip_prefix("real")
            .and_then(|d| d.parse::<usize>().ok())
            .filter(|d| *d > 0)
            .map(EndoKind::Real)
            .ok_or_else(|| Error::invalid(format!("unknown endo kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactoredState {
    pub exo: Vec<f64>,
    pub endo: Endo,
}

impl FactoredState {
    pub fn new(exo: Vec<f64>, endo: Endo) -> Self {
        FactoredState { exo, endo }
    }
}

/// Regime parameters shared by the algorithms and the bound calculators.
#[derive(Debug, Clone, PartialEq)]
pub struct AirSpec {
    pub horizon: usize,
    pub eps_air: f64,
    pub eps_p: f64,
    pub r_max: f64,
    pub v_max: f64,
    pub n_actions: usize,
    pub endo_sweep: Vec<Endo>,
}

impl AirSpec {
    pub fn new(
        horizon: usize,
        eps_air: f64,
        eps_p: f64,
        r_max: f64,
        n_actions: usize,
        endo_sweep: Vec<Endo>,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::invalid("horizon must be positive"));
        }
        if n_actions == 0 {
            return Err(Error::invalid("n_actions must be positive"));
        }
        if !(0.0..=1.0).contains(&eps_air) || !(0.0..=1.0).contains(&eps_p) {
            return Err(Error::invalid("eps_air and eps_p must lie in [0, 1]"));
        }
        if !(r_max > 0.0 && r_max.is_finite()) {
            return Err(Error::invalid("r_max must be positive"));
        }
        if endo_sweep.is_empty() {
            return Err(Error::invalid("endo_sweep must be non-empty"));
        }
        Ok(AirSpec { horizon, eps_air, eps_p, r_max, v_max: horizon as f64 * r_max, n_actions, endo_sweep })
    }

    pub fn with_eps(mut self, eps_air: f64, eps_p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eps_air) || !(0.0..=1.0).contains(&eps_p) {
            return Err(Error::invalid("eps_air and eps_p must lie in [0, 1]"));
        }
        self.eps_air = eps_air;
        self.eps_p = eps_p;
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: FactoredState,
    pub action: usize,
    pub reward: f64,
}

/// H recorded steps plus the state reached after the last action.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub steps: Vec<Step>,
    pub terminal: FactoredState,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// State at step `h`, where `h == len()` is the terminal state.
    pub fn state(&self, h: usize) -> &FactoredState {
        if h < self.steps.len() {
            &self.steps[h].state
        } else {
            &self.terminal
        }
    }

    pub fn exo(&self, h: usize) -> &[f64] {
        &self.state(h).exo
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub env: String,
    pub policy: String,
    pub eps_air: f64,
    pub seed: u64,
    pub horizon: usize,
    pub n_actions: usize,
    pub exo_dim: usize,
    pub endo_kind: EndoKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub episodes: Vec<Episode>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.meta.horizon
    }

    pub fn n_transitions(&self) -> usize {
        self.episodes.iter().map(|e| e.len()).sum()
    }

    /// The first `n` episodes with the same metadata.
    pub fn prefix(&self, n: usize) -> Dataset {
        Dataset { episodes: self.episodes.iter().take(n).cloned().collect(), meta: self.meta.clone() }
    }

    /// Exogenous projection: one exo trajectory of length H+1 per episode.
    pub fn exo_trajectories(&self) -> Vec<Vec<Vec<f64>>> {
        self.episodes
            .iter()
            .map(|ep| (0..=ep.len()).map(|h| ep.exo(h).to_vec()).collect())
            .collect()
    }
}
