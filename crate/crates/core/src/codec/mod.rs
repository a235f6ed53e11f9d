//! Mel-domain autoencoder with residual vector quantization. Its continuous
//! latents are the diffusion targets; quantizer, decoder and Griffin-Lim form
//! the vocoder.

mod model;
mod rvq;

pub use model::{from_array2, to_array2, train_codec, CodecEpoch, CodecModel, CodecTrainConfig, GroupedBatch};
pub use rvq::{latent_len, nearest, rvq_lookup, rvq_quantize, LatentSequence, RvqCodebooks, RvqOutput};
