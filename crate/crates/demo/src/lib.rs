//! Browser bindings for three interactive views: simulated order-execution
//! price paths, the evaluation-error bound as a function of the dataset size,
//! and the value gap between a random AIR MDP and its baseline MDP.

use air_rl::algos::{Policy, RulePolicy, TabularPolicy};
use air_rl::envs::{make_random_tabular_air_mdp, measure_air_epsilon, Environment, OrderExecEnv};
use air_rl::eval::{build_baseline_mdp, dp_solve, eval_bound_thm2};
use air_rl::{AirSpec, Endo, RngStream};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PricePath {
    /// Published price after each step, starting with the price seen at step 0.
    pub prices: Vec<f64>,
    pub shares: Vec<u32>,
    pub rewards: Vec<f64>,
    pub total: f64,
}

/// One order-execution episode that sells `action` shares at every step.
pub fn price_path(seed: u32, eps_air: f64, action: u32) -> Result<PricePath, String> {
    if !(0.0..=1.0).contains(&eps_air) {
        return Err("eps_air must lie in [0, 1]".into());
    }
    let mut rng = RngStream::new(seed as u64, "demo/order");
    let mut env = OrderExecEnv::sample(eps_air, &mut rng);
    let a = (action as usize).min(env.n_actions() - 1);
    let mut s = env.reset(&mut rng);
    let mut path = PricePath { prices: Vec::new(), shares: Vec::new(), rewards: Vec::new(), total: 0.0 };
    for _ in 0..env.horizon() {
        path.prices.push(s.exo[2]);
        path.shares.push(s.endo.as_int().unwrap_or(0));
        let (s2, r) = env.step(a, &mut rng);
        path.rewards.push(r);
        path.total += r;
        s = s2;
    }
    Ok(path)
}

/// Evaluation-error bound for `n = 1..=n_max` trajectories.
pub fn bound_curve(horizon: u32, r_max: f64, eps_air: f64, eps_p: f64, zeta: f64, n_max: u32) -> Result<Vec<f64>, String> {
    let spec = AirSpec::new(horizon as usize, eps_air, eps_p, r_max, 1, vec![Endo::Int(0)]).map_err(|e| e.to_string())?;
    (1..=n_max as usize).map(|n| eval_bound_thm2(n, zeta, &spec).map_err(|e| e.to_string())).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub eps_air: f64,
    pub j_true: f64,
    pub j_baseline: f64,
    pub gap: f64,
    /// `v_max · H · ε_air`.
    pub bound: f64,
}

/// Value of a random policy in a random AIR MDP and in the baseline MDP built
/// from a uniform behaviour policy.
pub fn baseline_gap(seed: u32, n_exo: u32, n_endo: u32, n_actions: u32, horizon: u32, eps_air: f64) -> Result<GapReport, String> {
    let (nx, ne, na, h) = (n_exo as usize, n_endo as usize, n_actions as usize, horizon as usize);
    if nx == 0 || ne == 0 || na == 0 || h == 0 || nx * ne * na * h > 20_000 {
        return Err("sizes must be positive and small".into());
    }
    let mut rng = RngStream::new(seed as u64, "demo/gap");
    let m = make_random_tabular_air_mdp(nx, ne, na, h, eps_air, &mut rng).map_err(|e| e.to_string())?;
    let eps = measure_air_epsilon(&m);
    let behavior = Policy::Rule(RulePolicy::Uniform { n_actions: na });
    let mb = build_baseline_mdp(&m, &behavior, &m).map_err(|e| e.to_string())?;
    let pi = Policy::Table(TabularPolicy::random(h, nx, ne, na, false, &mut rng));
    let j_true = dp_solve(&m, Some(&pi)).map_err(|e| e.to_string())?.j;
    let j_baseline = dp_solve(&mb, Some(&pi)).map_err(|e| e.to_string())?.j;
    let v_max = h as f64 * m.r_max;
    Ok(GapReport { eps_air: eps, j_true, j_baseline, gap: (j_true - j_baseline).abs(), bound: v_max * h as f64 * eps })
}

fn to_json<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    let v = r.map_err(|e| JsValue::from_str(&e))?;
    serde_json::to_string(&v).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = pricePath)]
pub fn price_path_js(seed: u32, eps_air: f64, action: u32) -> Result<String, JsValue> {
    to_json(price_path(seed, eps_air, action))
}

#[wasm_bindgen(js_name = boundCurve)]
pub fn bound_curve_js(horizon: u32, r_max: f64, eps_air: f64, eps_p: f64, zeta: f64, n_max: u32) -> Result<Vec<f64>, JsValue> {
    bound_curve(horizon, r_max, eps_air, eps_p, zeta, n_max).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = baselineGap)]
pub fn baseline_gap_js(seed: u32, n_exo: u32, n_endo: u32, n_actions: u32, horizon: u32, eps_air: f64) -> Result<String, JsValue> {
    to_json(baseline_gap(seed, n_exo, n_endo, n_actions, horizon, eps_air))
}
