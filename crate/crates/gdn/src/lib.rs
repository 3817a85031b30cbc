//! Geodesic deformable network: a convolutional registration encoder and
//! decoder around a recurrent spectral operator that rolls a latent initial
//! velocity along the geodesic, trained against EPDiff shooting.

pub mod checkpoint;
pub mod error;
pub mod gno;
pub mod model;
pub mod nn;
pub mod optim;
pub mod regnet;
pub mod tensor;
pub mod tracking;
pub mod training;

pub use error::{GdnError, Result};
pub use gno::{GnoConfig, GnoContext, GnoInit, GnoParams};
pub use model::{Gdn, GdnContext, GdnParams, ModelConfig, Prediction};
pub use optim::{AdamW, AdamWConfig};
pub use regnet::{LatentFeature, RegNetConfig, RegNetParams};
pub use tensor::{Parameters, Tensor};
pub use training::{LossTerms, Schedule, TrainConfig, TrainingPair};
