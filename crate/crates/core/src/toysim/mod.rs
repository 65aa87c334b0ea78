//! Desk-scale experiment harness: a toy classifier, planted-alignment corpora
//! and runners for each sampling strategy.

pub mod corpus;
pub mod model;
pub mod run;

pub use corpus::{make_corpus, PLANTED_CORPUS_SEED, CorpusConfig, DomainKind, DomainSpec, SyntheticCorpus, TaskSet};
pub use model::{accuracy, backward, forward_loss, loss_and_grad, sgd_step, Sample, ToyModel};
pub use run::{
    compare_strategies, gradient_trace, run_seeds, run_strategy, Comparison, ComparisonRow,
    DomainSource, RunConfig, RunReport, Strategy,
};
