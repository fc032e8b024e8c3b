//! Posterior updates, sparse coding, and the training loop.

pub mod coding;
pub mod objective;
pub mod posterior;
pub mod trainer;

pub use coding::{
    exhaustive_sparse_code, greedy_sparse_code, greedy_sparse_code_traced, CodingContext,
};
pub use objective::{expected_log_prior, expected_loglik, marginal_loglik};
pub use posterior::{
    prune_factors, update_q_lambda, update_q_pi, ActiveMask, BetaPosteriorBank, ScalePosterior,
};
pub use trainer::{
    batch_expected_loglik, fit, m_step_theta, theta_gradient, MetricsRow, RunLog, TrainConfig,
    TrainTrace, Trainer,
};
