//! Class-specific universal perturbation: matching, losses and training.

mod loss;
mod train;

pub use loss::{evasion_loss, match_targets, protect_loss, total_loss, MatchSet, SCORE_CLAMP};
pub use train::{
    apply_attack, fold_to_tile, initial_tile, scene_objective, train_cuap, AttackConfig, AttackOutcome,
    AttackProblem, IterLog, ObjectiveParts,
};
