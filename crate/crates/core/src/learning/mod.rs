//! Recursive soft actor-critic learners: a reverse-mode autodiff tape, small
//! MLPs, the per-agent bundle with its four losses, and the training loop.

mod agent;
pub mod autodiff;
mod categorical;
mod config;
mod gradcheck;
pub mod nn;
mod replay;
mod train;

pub use agent::{
    soft_target, ActOutcome, AgentBundle, CriticParams, Experience, LossEval, LossNoise, OuNoise, PolicyParams,
    LOG_STD_MAX, LOG_STD_MIN,
};
pub use categorical::CategoricalOpponentModel;
pub use config::{AgentSpec, Method, TrainerConfig};
pub use gradcheck::{check_gradients, GradientCheck};
pub use replay::ReplayBuffer;
pub use train::{init_agents, seeded_stream, train, update_agent, MetricRow, TrainEnv, TrainOutcome};
