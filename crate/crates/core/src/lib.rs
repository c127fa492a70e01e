pub mod baselines;
pub mod cleanup;
pub mod error;
pub mod exec;
pub mod harness;
pub mod lamdp;
pub mod mdp;
pub mod oracles;
pub mod planner;
pub mod rmax;
pub mod scalar;
pub mod taxi;

pub use error::{Error, Result};
pub use mdp::{Action, AttrValue, Domain, Environment, GroundState, SeededRng, StepOutcome, Terminal};
pub use scalar::Scalar;

/// Scalar used by execution and the harness.
pub type Real = f64;
pub type Model = rmax::TabularModel<Real>;
pub type Planner = planner::IncrementalPlanner<Real>;
pub type Values = planner::ValueTable<Real>;
pub type Params = planner::PlanParams<Real>;
