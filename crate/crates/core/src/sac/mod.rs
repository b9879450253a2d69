//! Discrete soft actor-critic over the accept-reject MDP.

mod buffer;
mod train;
mod update;

pub use buffer::{episode_transitions, ReplayBuffer, Transition};
pub use train::{train, TrainOptions, TrainOutcome};
pub use update::{
    actor_loss_and_grads, actor_update, batch_entropy, critic_loss_and_grads, critic_targets, critic_update,
    soft_update, temperature_grad, temperature_update, CriticOptimizers, CriticPair, SacAgent, TemperatureState,
    UpdateStats,
};
