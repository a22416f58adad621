//! Single-product inventory control with normally distributed demand.

use rand::Rng;
use rand_distr::StandardNormal;

use super::Environment;
use crate::rng::RngStream;
use crate::types::{Endo, EndoKind, FactoredState};

pub const INVENTORY_HORIZON: usize = 100;
pub const INVENTORY_ACTIONS: usize = 11;
/// Largest inventory level in the endogenous sweep `{0, ..., 15}`.
pub const INVENTORY_SWEEP_MAX: u32 = 15;
const ORDER_COST: f64 = 0.1;
const HOLDING_COST: f64 = 0.25;
const LOST_SALE_COST: f64 = 1.0;
const REWARD_FLOOR: f64 = -100.0;

/// Next inventory level and reward for stock `x`, order `a`, and realised demand `d`.
pub fn inventory_outcome(x: f64, a: usize, d: f64) -> (f64, f64) {
    let a = a as f64;
    let overstock = (x + a - d).max(0.0);
    let shortfall = (d - x - a).max(0.0);
    let cost = ORDER_COST * a + HOLDING_COST * overstock + LOST_SALE_COST * shortfall;
    (overstock, (-cost).max(REWARD_FLOOR))
}

#[derive(Debug, Clone)]
pub struct InventoryEnv {
    pub eps_air: f64,
    mu: f64,
    stock: f64,
    last_demand: f64,
}

impl InventoryEnv {
    pub fn new(eps_air: f64) -> Self {
        InventoryEnv { eps_air, mu: 6.0, stock: 0.0, last_demand: 0.0 }
    }

    /// Current demand mean.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    fn demand(&self, rng: &mut RngStream) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        (self.mu + self.mu / 3.0 * z).max(0.0)
    }

    pub fn state(&self) -> FactoredState {
        FactoredState::new(vec![self.last_demand], Endo::Real(vec![self.stock]))
    }
}

impl Environment for InventoryEnv {
    fn id(&self) -> &'static str {
        "inventory"
    }

    fn horizon(&self) -> usize {
        INVENTORY_HORIZON
    }

    fn n_actions(&self) -> usize {
        INVENTORY_ACTIONS
    }

    fn exo_dim(&self) -> usize {
        1
    }

    fn endo_kind(&self) -> EndoKind {
        EndoKind::Real(1)
    }

    fn eps_air(&self) -> f64 {
        self.eps_air
    }

    fn r_max(&self) -> f64 {
        -REWARD_FLOOR
    }

    fn reset(&mut self, rng: &mut RngStream) -> FactoredState {
        self.mu = rng.random_range(3.0..9.0);
        self.stock = 0.0;
        self.last_demand = self.demand(rng);
        self.state()
    }

    fn step(&mut self, action: usize, rng: &mut RngStream) -> (FactoredState, f64) {
        let action = action.min(INVENTORY_ACTIONS - 1);
        // Drawn unconditionally so the random stream does not depend on the action.
        let u: f64 = rng.random();
        if action > 0 {
            if u < self.eps_air / 2.0 {
                self.mu *= 0.9;
            } else if u < self.eps_air {
                self.mu *= 1.1;
            }
        }
        let d = self.demand(rng);
        let (next, reward) = inventory_outcome(self.stock, action, d);
        self.stock = next;
        self.last_demand = d;
        (self.state(), reward)
    }
}
