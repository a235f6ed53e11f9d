use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Phoneme indices of one language (`0..n_phonemes`), with optional
/// per-phoneme durations in frames and variances in frames².
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PhonemeSequence {
    pub ids: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub durations: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variances: Option<Vec<f32>>,
}

impl PhonemeSequence {
    pub fn new(ids: Vec<u32>) -> Self {
        Self {
            ids,
            durations: None,
            variances: None,
        }
    }

    pub fn with_durations(ids: Vec<u32>, durations: Vec<u32>) -> Self {
        Self {
            ids,
            durations: Some(durations),
            variances: None,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn total_frames(&self) -> Option<u32> {
        self.durations.as_ref().map(|d| d.iter().sum())
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if let Some(&bad) = self.ids.iter().find(|&&id| id as usize >= vocab_size) {
            return Err(Error::input(format!(
                "phoneme id {bad} outside vocabulary of size {vocab_size}"
            )));
        }
        if let Some(d) = &self.durations {
            if d.len() != self.ids.len() {
                return Err(Error::input("durations length differs from phoneme count"));
            }
        }
        if let Some(v) = &self.variances {
            if v.len() != self.ids.len() {
                return Err(Error::input("variances length differs from phoneme count"));
            }
            if v.iter().any(|&x| !(x > 0.0)) {
                return Err(Error::input("variances must be positive"));
            }
        }
        Ok(())
    }
}
