//! Scalar and quantile critic ensembles and every TD-target construction:
//! naive averaging, clipping, truncation, and cross-assessment.

mod ensemble;
pub mod targets;

pub use ensemble::{CriticEnsemble, CriticKind, Which};
pub use targets::{
    cdq_distributional_target, cdq_scalar_target, clipped_target, critic_loss_scalar,
    naive_target, pool_and_truncate, quantile_fractions, quantile_huber_loss, quantile_huber_term,
    soft_pooled_target, tqc_target_atoms, AssessedAtoms, AtomSet, EntropyTerm, KAPPA,
};
