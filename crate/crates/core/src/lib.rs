//! Multi-modal knowledge graph completion with relation-guided modality
//! experts, joint Tucker decisions and CLUB-based expert disentanglement.

// Range checks are written `!(x >= 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod exid;
pub mod modality;
pub mod model;
pub mod mujod;
pub mod numeric;
pub mod remoke;
pub mod report;
pub mod selfcheck;
pub mod train;

pub use config::{Config, Scenario};
pub use data::{Dataset, FeatureTable, Split, Triple, TripleBatch, TripleStore};
pub use error::{Error, Result};
pub use eval::{evaluate_split, EvalOptions, Metrics};
pub use exid::Disentangler;
pub use modality::Modality;
pub use model::{ModelSpec, Momok};
pub use numeric::{Checkpoint, ParamStore, Rng};
pub use train::{train_run, EpochRecord, TrainOutcome, Trainer};
