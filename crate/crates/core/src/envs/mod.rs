//! Benchmark environments and tabular AIR MDPs.

mod inventory;
mod order;
mod series;
mod tabular;

pub use inventory::{inventory_outcome, InventoryEnv, INVENTORY_ACTIONS, INVENTORY_HORIZON, INVENTORY_SWEEP_MAX};
pub use order::{
    order_exec_endo, order_exec_reward, ArmaParams, ArmaProcess, OrderExecEnv, ORDER_ACTIONS, ORDER_HORIZON,
    ORDER_SHARES, PRICE_WINDOW,
};
pub use series::{exo_windows, load_exo_series_csv};
pub use tabular::{make_random_tabular_air_mdp, measure_air_epsilon, random_distribution, TabularEnv, TabularMdp};

use crate::rng::RngStream;
use crate::types::{EndoKind, FactoredState};

/// A finite-horizon episodic simulator. Instances are single-owner state machines.
pub trait Environment {
    fn id(&self) -> &'static str;
    fn horizon(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn exo_dim(&self) -> usize;
    fn endo_kind(&self) -> EndoKind;
    fn eps_air(&self) -> f64;
    /// Largest absolute per-step reward.
    fn r_max(&self) -> f64;
    fn reset(&mut self, rng: &mut RngStream) -> FactoredState;
    /// Applies `action` to the current state and returns `(next_state, reward)`.
    fn step(&mut self, action: usize, rng: &mut RngStream) -> (FactoredState, f64);
}
