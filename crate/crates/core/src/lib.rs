//! Personalized face re-aging over a global latent-space age encoder.
//!
//! A small adapter network is trained on a few dozen age-annotated photos of
//! one person. It produces an additive offset to the global encoder's W+
//! latent so the decoded face follows that person's own aging pattern, while
//! regularizers keep the model anchored to the global prior outside the
//! photographed age range.
//!
//! Pretrained components (encoder, decoder, identity network, age estimators,
//! face swapper, aligner) sit behind the traits in [`backends`]. A
//! deterministic toy backend makes every piece runnable and differentiable on
//! a laptop.

pub mod ablation;
pub mod adapter;
pub mod backends;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod image;
pub mod latent;
pub mod losses;
pub mod objective;
pub mod optim;
pub mod plots;
pub mod synth;
pub mod tensor_io;
pub mod trainer;
pub mod video;

pub use adapter::{AdapterNetwork, AdapterParams, AdapterShape};
pub use backends::{BackendBundle, BackendError, EstimatorMode};
pub use config::{AblationFlags, BackendKind, TrainingConfig};
pub use data::{AgedPhotoCollection, PhotoRecord, Split};
pub use error::{Error, Result};
pub use eval::{EvalProtocol, EvalReport, Task};
pub use image::ImageTensor;
pub use latent::{AgeYears, IdentityEmbedding, LatentCode, MeanLatent, NUM_STYLES, STYLE_DIM};
pub use losses::{LossReport, LossTerm, LossWeights};
pub use trainer::{TrainingState, Trainer};
