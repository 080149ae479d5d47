//! Desk-scale two-tower contrastive trainer on a synthetic object corpus,
//! used to validate the audit end to end.

pub mod corpus;
pub mod experiment;
pub mod loss;
pub mod towers;
pub mod train;

pub use corpus::{generate_corpus, SyntheticCorpus, SyntheticCorpusConfig, SyntheticRecord};
pub use experiment::{
    prepare, run_experiment, run_point, ExperimentConfig, ExperimentRun, GridPoint, ReferenceMode, SampleLevelConfig,
    SplitSizes,
};
pub use loss::{info_nce_loss, info_nce_with_grad, LossDirection};
pub use towers::{TowerPair, TowerShape};
pub use train::{
    embed_corpus, held_out_loss, mask_tokens, regularized_loss_grad, tower_loss_grad, train, OptimizerKind,
    TrainConfig, TrainedModel, TrainingData,
};
