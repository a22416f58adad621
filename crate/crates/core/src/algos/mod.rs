//! Offline policy optimisation.

mod density;
mod fqi;
mod policy;
mod sampled;
mod trajsim;

pub use density::{density_estimate, DensityEstimate};
pub use fqi::{featurizer_for, fqi_air_sweep, fqi_baseline, mb_plan, mbs_qi, slot, MaskFloor, PlanModel, SweepOutput};
pub use policy::{masked_values, sweep_index, LookupPolicy, Policy, RulePolicy, TabularPolicy};
pub use sampled::{fqi_air_sampled, SampledConfig};
pub use trajsim::{traj_sim_online, Agent, CurvePoint, SimConfig};
