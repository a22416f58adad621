//! Optimal order execution: sell a fixed block of shares against an ARMA(2,2) price.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Environment;
use crate::rng::RngStream;
use crate::types::{Endo, EndoKind, FactoredState};

pub const ORDER_HORIZON: usize = 100;
pub const ORDER_SHARES: u32 = 10;
pub const ORDER_ACTIONS: usize = 6;
pub const PRICE_WINDOW: usize = 3;
const BURN_IN: usize = 20;
const IMPACT: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmaParams {
    pub phi: [f64; 2],
    pub theta: [f64; 2],
    pub c: f64,
}

impl ArmaParams {
    pub fn zero() -> Self {
        ArmaParams { phi: [0.0; 2], theta: [0.0; 2], c: 0.0 }
    }

    /// Draws φ1 ~ U(-0.9, 0), φ2 ~ U(0, 0.9), θi ~ U(-0.5, 0.5), redrawing the
    /// AR part until it is stationary.
    pub fn sample(rng: &mut RngStream) -> Self {
        loop {
            let phi = [rng.random_range(-0.9..0.0), rng.random_range(0.0..0.9)];
            let theta = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
            let p = ArmaParams { phi, theta, c: 0.0 };
            if p.is_stationary() {
                return p;
            }
        }
    }

    /// AR(2) stationarity triangle.
    pub fn is_stationary(&self) -> bool {
        let [p1, p2] = self.phi;
        p1 + p2 < 1.0 && p2 - p1 < 1.0 && p2.abs() < 1.0
    }
}

/// Latent ARMA(2,2) recursion on the unscaled price.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmaProcess {
    pub params: ArmaParams,
    latent: [f64; 2],
    noise: [f64; 2],
}

impl ArmaProcess {
    pub fn new(params: ArmaParams) -> Self {
        ArmaProcess { params, latent: [0.0; 2], noise: [0.0; 2] }
    }

    /// Advances with innovation `eps` and returns the new latent value.
    pub fn advance(&mut self, eps: f64) -> f64 {
        let p = &self.params;
        let x = p.c + eps + p.phi[0] * self.latent[0] + p.phi[1] * self.latent[1] + p.theta[0] * self.noise[0]
            + p.theta[1] * self.noise[1];
        self.latent = [x, self.latent[0]];
        self.noise = [eps, self.noise[0]];
        x
    }

    /// Overwrites the most recent latent value, used when a price impact persists.
    pub fn set_last(&mut self, x: f64) {
        self.latent[0] = x;
    }
}

pub fn publish(latent: f64) -> f64 {
    (latent / 20.0 + 0.5).clamp(0.0, 1.0)
}

/// Reward of selling `min(action, P)` shares at the current price `exo[2]`.
pub fn order_exec_reward(exo: &[f64], shares: u32, action: usize) -> f64 {
    exo[PRICE_WINDOW - 1] * (action as u32).min(shares) as f64
}

/// Shares left after the sale.
pub fn order_exec_endo(shares: u32, action: usize) -> u32 {
    shares - (action as u32).min(shares)
}

#[derive(Debug, Clone)]
pub struct OrderExecEnv {
    pub params: ArmaParams,
    pub eps_air: f64,
    /// When set, innovations are read from this sequence instead of the RNG,
    /// which makes every episode see the same price path.
    frozen: Option<Vec<f64>>,
    arma: ArmaProcess,
    window: [f64; PRICE_WINDOW],
    shares: u32,
    t: usize,
    noise_ix: usize,
}

impl OrderExecEnv {
    pub fn new(params: ArmaParams, eps_air: f64) -> Self {
        OrderExecEnv {
            params,
            eps_air,
            frozen: None,
            arma: ArmaProcess::new(params),
            window: [0.5; PRICE_WINDOW],
            shares: ORDER_SHARES,
            t: 0,
            noise_ix: 0,
        }
    }

    /// An instance with freshly drawn ARMA coefficients.
    pub fn sample(eps_air: f64, rng: &mut RngStream) -> Self {
        OrderExecEnv::new(ArmaParams::sample(rng), eps_air)
    }

    /// Fixes the innovation sequence (burn-in, initial window, and all H steps).
    pub fn with_frozen_noise(mut self, noise: Vec<f64>) -> Self {
        self.frozen = Some(noise);
        self
    }

    /// Freeze innovations to a single standard-normal draw sequence.
    pub fn freeze_noise(self, rng: &mut RngStream) -> Self {
        let noise = (0..Self::noise_len()).map(|_| rng.sample(StandardNormal)).collect();
        self.with_frozen_noise(noise)
    }

    pub fn noise_len() -> usize {
        BURN_IN + PRICE_WINDOW + ORDER_HORIZON
    }

    fn innovation(&mut self, rng: &mut RngStream) -> f64 {
        let ix = self.noise_ix;
        self.noise_ix += 1;
        match &self.frozen {
            Some(v) => v.get(ix).copied().unwrap_or(0.0),
            None => rng.sample(StandardNormal),
        }
    }

    /// Generates the next published price. A positive sale triggers the 10%
    /// drop with probability `eps_air`; the drop is written back into the
    /// latent state so it persists.
    pub fn arma_exo_step(&mut self, sold_positive: bool, rng: &mut RngStream) -> f64 {
        let eps = self.innovation(rng);
        // Drawn unconditionally so the random stream does not depend on the action.
        let u: f64 = rng.random();
        let latent = self.arma.advance(eps);
        let mut x = publish(latent);
        if sold_positive && u < self.eps_air {
            x *= IMPACT;
            self.arma.set_last(20.0 * (x - 0.5));
        }
        x
    }

    pub fn state(&self) -> FactoredState {
        FactoredState::new(self.window.to_vec(), Endo::Int(self.shares))
    }
}

impl Environment for OrderExecEnv {
    fn id(&self) -> &'static str {
        "order"
    }

    fn horizon(&self) -> usize {
        ORDER_HORIZON
    }

    fn n_actions(&self) -> usize {
        ORDER_ACTIONS
    }

    fn exo_dim(&self) -> usize {
        PRICE_WINDOW
    }

    fn endo_kind(&self) -> EndoKind {
        EndoKind::Int
    }

    fn eps_air(&self) -> f64 {
        self.eps_air
    }

    fn r_max(&self) -> f64 {
        (ORDER_ACTIONS - 1) as f64
    }

    fn reset(&mut self, rng: &mut RngStream) -> FactoredState {
        self.arma = ArmaProcess::new(self.params);
        self.noise_ix = 0;
        self.t = 0;
        self.shares = ORDER_SHARES;
        for _ in 0..BURN_IN {
            let eps = self.innovation(rng);
            self.arma.advance(eps);
        }
        for k in 0..PRICE_WINDOW {
            let eps = self.innovation(rng);
            self.window[k] = publish(self.arma.advance(eps));
        }
        self.state()
    }

    fn step(&mut self, action: usize, rng: &mut RngStream) -> (FactoredState, f64) {
        let action = action.min(ORDER_ACTIONS - 1);
        let sold = (action as u32).min(self.shares);
        let reward = order_exec_reward(&self.window, self.shares, action);
        self.shares = order_exec_endo(self.shares, action);
        let x = self.arma_exo_step(sold > 0, rng);
        self.window.rotate_left(1);
        self.window[PRICE_WINDOW - 1] = x;
        self.t += 1;
        (self.state(), reward)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_process_sits_at_half() {
        let mut env = OrderExecEnv::new(ArmaParams::zero(), 0.0).with_frozen_noise(vec![0.0; OrderExecEnv::noise_len()]);
        let mut rng = RngStream::new(0, "t");
        let s = env.reset(&mut rng);
        assert_eq!(s.exo, vec![0.5; 3]);
        assert_eq!(env.arma_exo_step(true, &mut rng), 0.5);
    }

    #[test]
    fn impact_drops_price_by_ten_percent_and_persists() {
        // Innovation 2.0 from a zero state gives latent 2.0 and price 0.6.
        let mut noise = vec![0.0; OrderExecEnv::noise_len()];
        noise[0] = 2.0;
        let mut env = OrderExecEnv::new(ArmaParams { phi: [0.0, 0.0], theta: [0.0, 0.0], c: 0.0 }, 1.0)
            .with_frozen_noise(noise);
        let mut rng = RngStream::new(0, "t");
        let x = env.arma_exo_step(true, &mut rng);
        assert!((x - 0.54).abs() < 1e-12);
        assert!((env.arma.latent[0] - 20.0 * (0.54 - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn transition_examples() {
        let exo = [0.5, 0.5, 0.5];
        assert_eq!(order_exec_reward(&exo, 10, 3), 1.5);
        assert_eq!(order_exec_endo(10, 3), 7);
        assert_eq!(order_exec_reward(&exo, 10, 0), 0.0);
        assert_eq!(order_exec_endo(10, 0), 10);
        assert_eq!(order_exec_reward(&[0.2, 0.3, 0.7], 2, 5), 2.0 * 0.7);
        assert_eq!(order_exec_endo(2, 5), 0);
    }

    #[test]
    fn exo_path_ignores_actions_when_eps_is_zero() {
        let params = ArmaParams::sample(&mut RngStream::new(4, "params"));
        let run = |actions: &dyn Fn(usize) -> usize| {
            let mut env = OrderExecEnv::new(params, 0.0);
            let mut rng = RngStream::new(9, "ep");
            let mut xs = vec![env.reset(&mut rng).exo];
            for h in 0..ORDER_HORIZON {
                xs.push(env.step(actions(h), &mut rng).0.exo);
            }
            xs
        };
        assert_eq!(run(&|_| 0), run(&|h| h % 6));
    }

    #[test]
    fn sampled_params_are_in_range_and_stationary() {
        let mut rng = RngStream::new(1, "p");
        for _ in 0..200 {
            let p = ArmaParams::sample(&mut rng);
            assert!(p.phi[0] > -0.9 && p.phi[0] < 0.0);
            assert!(p.phi[1] > 0.0 && p.phi[1] < 0.9);
            assert!(p.theta.iter().all(|t| t.abs() < 0.5));
            assert!(p.is_stationary());
        }
    }
}
