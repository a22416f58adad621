//! Histogram estimate of the data distribution over discretised `(state, action)` cells.

use serde::{Deserialize, Serialize};

use crate::types::{Dataset, Endo, FactoredState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub bins: usize,
    /// Per real-valued state dimension (exo then endo): observed range.
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Integer endo values are their own cells.
    pub integer_endo: bool,
    /// Per step: sorted `(cell ++ [action], count)`.
    pub counts: Vec<Vec<(Vec<i64>, u64)>>,
    pub totals: Vec<u64>,
}

fn dims(s: &FactoredState) -> Vec<f64> {
    let mut v = s.exo.clone();
    v.extend(s.endo.to_vec());
    v
}

impl DensityEstimate {
    pub fn cell(&self, s: &FactoredState, action: usize) -> Vec<i64> {
        let n_exo = s.exo.len();
        let mut out: Vec<i64> = dims(s)
            .iter()
            .enumerate()
            .map(|(j, &v)| {
                if j >= n_exo && self.integer_endo {
                    return v as i64;
                }
                let (lo, hi) = (self.lo[j], self.hi[j]);
                if hi <= lo {
                    return 0;
                }
                (((v - lo) / (hi - lo) * self.bins as f64).floor() as i64).clamp(0, self.bins as i64 - 1)
            })
            .collect();
        out.push(action as i64);
        out
    }

    /// Estimated probability `μ̂_h(s, a)`; 0 for unvisited cells or steps.
    pub fn mu(&self, h: usize, s: &FactoredState, action: usize) -> f64 {
        let (Some(cells), Some(&total)) = (self.counts.get(h), self.totals.get(h)) else { return 0.0 };
        if total == 0 {
            return 0.0;
        }
        let key = self.cell(s, action);
        match cells.binary_search_by(|(k, _)| k.cmp(&key)) {
            Ok(i) => cells[i].1 as f64 / total as f64,
            Err(_) => 0.0,
        }
    }
}

/// Per-step histogram over `bins_per_dim` equal-width bins of each real state
/// dimension (range taken from the whole dataset), with integer endo kept exact.
pub fn density_estimate(d: &Dataset, bins_per_dim: usize) -> DensityEstimate {
    let horizon = d.horizon();
    let first = d.episodes.first().map(|e| dims(e.state(0)).len()).unwrap_or(0);
    let mut lo = vec![f64::INFINITY; first];
    let mut hi = vec![f64::NEG_INFINITY; first];
    for ep in &d.episodes {
        for step in &ep.steps {
            for (j, v) in dims(&step.state).into_iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
    }
    let integer_endo = d.episodes.first().map(|e| matches!(e.state(0).endo, Endo::Int(_))).unwrap_or(true);
    let mut est = DensityEstimate { bins: bins_per_dim.max(1), lo, hi, integer_endo, counts: Vec::new(), totals: vec![0; horizon] };
    let mut maps: Vec<std::collections::BTreeMap<Vec<i64>, u64>> = vec![Default::default(); horizon];
    for ep in &d.episodes {
        for (h, step) in ep.steps.iter().enumerate().take(horizon) {
            *maps[h].entry(est.cell(&step.state, step.action)).or_insert(0) += 1;
            est.totals[h] += 1;
        }
    }
    est.counts = maps.into_iter().map(|m| m.into_iter().collect()).collect();
    est
}
