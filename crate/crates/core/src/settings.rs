//! The single editable settings document shared by every CLI command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::MelConfig;
use crate::config::ModelConfig;
use crate::curriculum::{Stage, StagePlan};
use crate::data::CorpusConfig;
use crate::error::{Error, Result};
use crate::pipeline::InferenceConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            checkpoint_dir: "checkpoints".into(),
            report_dir: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root of every random stream.
    pub seed: u64,
    pub n_pairs: usize,
    pub audio: MelConfig,
    pub model: ModelConfig,
    pub corpus: CorpusConfig,
    pub inference: InferenceConfig,
    pub paths: Paths,
    /// Per-stage overrides; stages not listed use their defaults.
    #[serde(rename = "stage", deserialize_with = "partial_plans")]
    pub stages: Vec<StagePlan>,
}

fn partial_plans<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<StagePlan>, D::Error> {
    Vec::<toml::Table>::deserialize(d)?
        .into_iter()
        .map(|t| StagePlan::from_table(t).map_err(serde::de::Error::custom))
        .collect()
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_pairs: 2000,
            audio: MelConfig::default(),
            model: ModelConfig::default(),
            corpus: CorpusConfig::default(),
            inference: InferenceConfig::default(),
            paths: Paths::default(),
            stages: Vec::new(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.audio.validate()?;
        self.model.validate()?;
        self.corpus.validate()?;
        self.inference.validate()?;
        if self.model.n_mels != self.audio.n_mels {
            return Err(Error::config("model.n_mels must equal audio.n_mels"));
        }
        if self.n_pairs == 0 {
            return Err(Error::config("n_pairs must be ≥ 1"));
        }
        for (i, p) in self.stages.iter().enumerate() {
            p.validate()?;
            if self.stages[..i].iter().any(|q| q.stage == p.stage) {
                return Err(Error::config(format!("{} is configured twice", p.stage)));
            }
            if let Some(d) = &p.dataset {
                if !d.exists() {
                    return Err(Error::config(format!("{} dataset {} does not exist", p.stage, d.display())));
                }
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(format!("settings: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn plan(&self, stage: Stage) -> StagePlan {
        self.stages
            .iter()
            .find(|p| p.stage == stage)
            .cloned()
            .unwrap_or_else(|| StagePlan::default_for(stage))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.paths.data_dir.join("manifest.jsonl")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let mut cfg = PipelineConfig::default();
        cfg.stages.push(StagePlan::default_for(Stage::S2S2ttPretrain));
        let text = cfg.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(cfg.plan(Stage::S2S2ttPretrain), StagePlan::default_for(Stage::S2S2ttPretrain));
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = PipelineConfig::from_toml("seed = 3\n[model]\nd_model = 64\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.model.d_model, 64);
        assert_eq!(cfg.audio, MelConfig::default());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        assert!(matches!(PipelineConfig::from_toml("n_pairs = 0"), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::from_toml("[audio]\nn_mels = 20"), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::from_toml("unknown = 1"), Err(Error::Config(_))));
        let missing = "[[stage]]\nstage = \"s2_s2tt_pretrain\"\nlosses = [\"L_p\"]\ntrainable = \"translation\"\n\
                       epochs = 1\nbatch_size = 4\nlr = 0.001\ndataset = \"/nonexistent/manifest.jsonl\"\n";
        assert!(matches!(PipelineConfig::from_toml(missing), Err(Error::Config(_))));
    }
}
