pub mod collocation;
pub mod ddpg;
pub mod environment;
pub mod error;
pub mod feasibility;
pub mod geom;
pub mod harness;
pub mod io;
pub mod neuralnet;
pub mod reward;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// `f64` instantiations used by the trainer, harness and CLI.
pub type Point = geom::Point2<f64>;
pub type Env = environment::EnvConfig<f64>;
pub type State = environment::AgentState<f64>;
pub type Rewards = reward::RewardParams<f64>;
pub type Network = neuralnet::DenseNetwork<f64>;
pub type Trajectory = environment::Trajectory<f64>;
