//! Learned RAW-to-RGB image signal processing on the CPU.
//!
//! The crate covers the whole path from a Bayer mosaic to an sRGB image:
//! a dense tensor type with reverse-mode differentiation ([`tensor`],
//! [`nn`], [`autograd`]), three reconstruction networks ([`models`]), losses
//! and quality metrics ([`metrics`]), a synthetic RAW data generator
//! ([`raw_pipeline`]), an Adam training loop ([`trainer`]) and a latency
//! profiler ([`bench`]).

pub mod autograd;
pub mod bench;
pub mod error;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod raw_pipeline;
pub mod tensor;
pub mod trainer;

pub use autograd::{Tape, Var};
pub use bench::{profile, score_report, BenchReport};
pub use error::{Error, Result};
pub use metrics::{mai_score, LossKind, LossSpec, ScoreInputs};
pub use models::{build_model, load_checkpoint, save_checkpoint, ModelGraph, ModelName};
pub use raw_pipeline::{BayerImage, Manifest, PairSet, RgbImage, UnprocessConfig};
pub use tensor::{Scalar, Shape, Tensor};
pub use trainer::{evaluate, train, EvalResult, Predictor, Recipe, TrainConfig};
