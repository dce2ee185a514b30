//! Separation of single-channel chest recordings into heart, lung and noise
//! stems by non-negative matrix co-factorisation with exemplar databases,
//! with blind-NMF baselines, a synthetic scene generator and evaluation
//! metrics.

pub mod audio_io;
pub mod baselines;
pub mod cli;
pub mod dsp;
pub mod error;
pub mod export;
pub mod metrics;
pub mod nmcf;
pub mod nmf_core;
pub mod spectral;
pub mod synth;

pub use audio_io::AudioBuffer;
pub use error::{Error, Result};
