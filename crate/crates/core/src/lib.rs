//! Identity-swapping GAN toolkit: an encoder / identity-injection / decoder
//! generator conditioned on face-recognition embeddings, multi-scale patch
//! discriminators with selectable feature matching, a procedural face dataset,
//! training with checkpoints, and evaluation metrics.
//!
//! Everything runs on the CPU through a small reverse-mode autograd engine
//! (see [`autograd`]) that is generic over `f32` and `f64`.

pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod discriminator;
pub mod embedder;
pub mod error;
pub mod evaluation;
pub mod generator;
pub mod kernels;
pub mod losses;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod training;
pub mod types;

pub use config::{FmKind, FmVariant, TrainConfig, DISC_LAYERS};
pub use discriminator::{Discriminator, DiscriminatorArch};
pub use embedder::{Embedder, EmbedderArch};
pub use error::{Error, Result};
pub use generator::{Generator, GeneratorArch};
pub use losses::LossReport;
pub use rng::{seeded_rng, SeededRng};
pub use tensor::{Real, Tensor};
pub use training::{Preset, TrainState};
pub use types::{FaceSpec, FeatureMap, IdentityParams, IdentityVector, ImageTensor, LabeledImage};
