//! Bayesian grid filter, localization loss and configuration search.

mod loss;
mod optimize;
mod posterior;

pub use loss::{
    brute_force_loss, error_matrix, half_distance, loss_gradient, loss_upper_bound, q_function, ErrorMatrix,
    LossContext, BRUTE_FORCE_MAX_BLOCKS,
};
pub use optimize::{
    optimize_configuration, should_terminate, LossParams, OptimizeOutcome, OptimizerParams, TerminationParams,
};
pub use posterior::{
    active_blocks, estimate_locations, init_posterior, likelihood, posterior_update, ActiveSet, Posterior,
    UpdateReport,
};
