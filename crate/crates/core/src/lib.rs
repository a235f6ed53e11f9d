pub mod audio;
pub mod batch;
pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod curriculum;
pub mod data;
pub mod dataset;
pub mod diffusion;
pub mod duration;
pub mod eval;
pub mod error;
pub mod features;
pub mod model;
pub mod nat;
pub mod nn;
pub mod phoneme;
pub mod pipeline;
pub mod seed;
pub mod settings;
pub mod translation;

pub use error::{Error, Result};
pub use phoneme::PhonemeSequence;
