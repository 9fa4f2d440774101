//! The recommendation model: patient encoder, drug memories, predictor,
//! training loop and checkpointing.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod drugs;
pub mod encoder;
pub mod forward;
pub mod layout;
pub mod predictor;
pub mod train;

pub use checkpoint::{Checkpoint, VocabHashes, CHECKPOINT_VERSION};
pub use config::{AblationFlags, KvScoreMode, ModelConfig};
pub use drugs::{KeyValueMemory, MoleculePlan};
pub use forward::{patient_forward, ForwardTrace, ModelAssets};
pub use layout::{build_model, ModelLayout, VocabSizes};
pub use predictor::{LossBreakdown, LossWeights};
pub use train::{EncodedCohort, EpochLog, Trainer};
