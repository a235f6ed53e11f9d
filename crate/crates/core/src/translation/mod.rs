//! Acoustic encoder, autoregressive phoneme decoder, beam search and the
//! acoustic bridge.

mod beam;
mod bridge;
mod decoder;
mod encoder;
mod loss;

pub use beam::{argmax, beam_search, beam_search_with, greedy_decode, greedy_search, DecoderScorer, Hypothesis, StepScorer};
pub use bridge::AcousticBridge;
pub use decoder::{log_softmax, DecoderOutput, PhonemeDecoder};
pub use encoder::{AcousticEncoder, EncoderStates};
pub use loss::{phoneme_loss, phoneme_loss_value};
