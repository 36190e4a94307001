//! Diversity-promoting training for neural response generation.
//!
//! The running average of the model's output distributions (AvgOut) is used
//! to score how dull a batch or a single response is, and that score drives
//! four training objectives on top of maximum likelihood.

pub mod avgout;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod exec;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod tape;
pub mod trainer;

pub use avgout::{AvgOutTracker, BatchDistributionSummary, DiscreteDiversityResult};
pub use checkpoint::Checkpoint;
pub use corpus::{DialogueExample, PaddedBatch, TokenId, Vocabulary};
pub use error::{Error, Result};
pub use losses::{LossBreakdown, LossWeights, Objective, RewardBaseline};
pub use metrics::DiversityReport;
pub use model::{ModelConfig, Seq2Seq};
pub use trainer::{TrainConfig, Trainer};
