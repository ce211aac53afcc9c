//! Numeric substrate: parameter storage, small networks, optimizer and checks.

pub mod checkpoint;
pub mod gradcheck;
pub mod mlp;
pub mod ops;
pub mod params;
pub mod rng;

pub use checkpoint::{Checkpoint, TensorRecord};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use mlp::{Mlp, MlpCache, ScalarHead};
pub use ops::{sigmoid, softmax_temp, softplus};
pub use params::{AdamConfig, Grads, Init, ParamId, ParamStore, Values};
pub use rng::{gaussian_sample, Rng, Stream};
