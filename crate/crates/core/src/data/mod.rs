//! Synthetic parallel corpus and its on-disk manifest format.

mod audio_file;
mod manifest;
mod pitch;
mod toyset;

pub use audio_file::{read_audio, write_audio, AUDIO_MAGIC};
pub use manifest::{read_manifest, write_manifest, ManifestDataset, ManifestRecord, SpeakerRecord};
pub use pitch::estimate_pitch;
pub use toyset::{
    generate_corpus, render_utterance, scale_duration, speaker_classes, CorpusConfig, Language,
    LanguageModel, ParallelPair, SpeakerParams, Utterance,
};
