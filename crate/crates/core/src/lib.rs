//! Closed-set, text-independent speaker identification for emotional speech,
//! built around a cascade of per-(speaker, emotion) Gaussian mixture models
//! feeding a fully-connected ReLU classifier.
//!
//! The pipeline runs front to back as
//! [`audio`] (WAV ingestion, resampling, pre-emphasis, framing) →
//! [`mfcc`] (cepstral features) → [`gmm`] (mixture "tags" trained by EM) →
//! [`cascade`] (per-segment likelihood vectors) → [`dnn`] (softmax classifier),
//! with [`evaluation`] scoring trial records and [`corpus`] handling manifests
//! and the synthetic ground-truth corpus. [`pipeline`] ties the stages into
//! training and evaluation runs.

pub mod audio;
pub mod cascade;
pub mod container;
pub mod corpus;
pub mod dnn;
pub mod error;
pub mod evaluation;
pub mod frontend;
pub mod gmm;
pub mod mfcc;
pub mod pipeline;
pub mod wav;

pub use audio::{AudioClip, FrameSet, MixMode};
pub use cascade::{LikelihoodVector, SegmentPlan};
pub use corpus::{Emotion, Manifest, ManifestEntry, Split, SynthSpec};
pub use dnn::{DnnModel, TrainConfig};
pub use error::{Error, Result};
pub use evaluation::{PerformanceTable, TTestResult, TrialRecord};
pub use frontend::{FrontEnd, FrontEndConfig};
pub use gmm::{GaussianMixture, GmmTag, TagStore};
pub use mfcc::{FeatureMatrix, FeatureView, MelFilterbank};
pub use pipeline::RunConfig;
