//! Weakly supervised classification of vital-sign alerts as real or artifact.
//!
//! The crate covers the whole pipeline: multi-rate recordings, waveform
//! estimators, alert detection, labeling functions, the generative label
//! model, a random forest end model, leave-one-patient-out evaluation and a
//! synthetic cohort generator.

pub mod data;
pub mod dsp;
pub mod alerts;
pub mod label_model;
pub mod labeling;
pub mod features;
pub mod forest;
pub mod evaluation;
pub mod seed;
pub mod synth;
pub mod pipeline;
pub mod config;
