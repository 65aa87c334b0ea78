//! Domain-mixture scheduling engine.
//!
//! Training samples are grouped into domains by clustering sketched gradients,
//! each domain is scored against downstream tasks with a Fisher-weighted
//! quadratic form, and a sampling distribution over domains is re-weighted
//! periodically from those scores and the tasks' loss trajectories.

pub mod cluster;
pub mod error;
pub mod gradtrace;
pub mod impact;
pub mod numeric;
pub mod scheduler;
pub mod sketch;
pub mod toysim;

pub use cluster::{domain_sizes, kmeans, repartition, DomainPartition};
pub use error::{Error, ErrorClass, LossHistoryError, Result, TraceError};
pub use gradtrace::{
    read_loss_history, read_trace, write_loss_history, write_trace, DecayFit, GradientTrace,
    LossHistory, LossPoint, TraceRecord,
};
pub use impact::{
    build_impact_matrix, dga_impact, estimate_fim_diagonal, estimate_fim_diagonal_weighted, fim_impact, normalize_impact,
    update_domain_gradient, DomainGradient, FimDiagonal, ImpactDirection, ImpactMatrix,
    ImpactMetric, TaskGradient,
};
pub use scheduler::{
    fit_decay, loss_improvement, potential, should_update, update_probs, utilities,
    SamplingState, UtilityVector,
};
pub use sketch::{choose_target_dim, make_projection, project, topk_sparsify, ProjectionMatrix};
