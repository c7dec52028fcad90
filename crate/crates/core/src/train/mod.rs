//! Training loop, evaluation metrics and baselines.

mod evaluate;
mod metrics;
mod trainer;

pub use evaluate::{evaluate, ModelRecommender, PrevalenceBaseline, Recommender};
pub use metrics::{average_precision, f1_score, jaccard_score, Metrics, PerVisit};
pub use trainer::{train, EpochRecord, TrainConfig, TrainOutcome};
