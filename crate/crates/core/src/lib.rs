//! Affective-state risk features and physics-regularized acoustic modeling.
//!
//! Discrete emotion labels from acoustic and text classifiers are mapped onto
//! a Tension / Stability / Arousal space, summarised per executive role and
//! call section, and fed to a boosted regression-tree ensemble that forecasts
//! post-call realized volatility and abnormal returns. A toy acoustic model
//! demonstrates a Westervelt-equation regularizer on clipped waveforms.

pub mod asl;
pub mod eval;
pub mod features;
pub mod gbt;
pub mod ingest;
pub mod physics;
pub mod piam;
pub mod scalar;
pub mod seed;
pub mod synthgen;

pub use scalar::Scalar;

pub type AcousticConstantsF64 = physics::AcousticConstants<f64>;
pub type AcousticConstantsF32 = physics::AcousticConstants<f32>;
pub type PressureOperatorF64 = physics::PressureOperator<f64>;
pub type PressureOperatorF32 = physics::PressureOperator<f32>;
pub type LatentTrajectoryF64 = physics::LatentTrajectory<f64>;
pub type LatentTrajectoryF32 = physics::LatentTrajectory<f32>;
pub type MomentsF64 = features::Moments<f64>;
pub type MomentsF32 = features::Moments<f32>;
pub type ToyModelF64 = piam::ToyModel<f64>;
pub type ToyModelF32 = piam::ToyModel<f32>;
pub type ToyWaveformF64 = piam::ToyWaveform<f64>;
pub type ToyWaveformF32 = piam::ToyWaveform<f32>;
