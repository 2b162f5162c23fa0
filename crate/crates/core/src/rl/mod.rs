//! Reinforcement learning through the communication chain.

pub mod buffer;
pub mod dqn;

pub use buffer::{ReplayBuffer, SampledBatch, StoredTransition, Transition};
pub use dqn::{
    collect_observations, dqn_step, eval_policy, eval_random, epsilon_greedy, params_bit_equal, select_action, sync_target, td_targets,
    train_rl, DqnConfig, Link, QSystem, RlRun,
};
