use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::augment::SpecAugmentConfig;
use super::optim::PlateauConfig;
use crate::diffusion::{FlowConfig, MaskPolicy};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    S1DiffusionPretrain,
    S2S2ttPretrain,
    S3JointNat,
    S4DiffusionFinetune,
}

impl Stage {
    pub const ALL: [Stage; 4] = [
        Stage::S1DiffusionPretrain,
        Stage::S2S2ttPretrain,
        Stage::S3JointNat,
        Stage::S4DiffusionFinetune,
    ];

    pub fn number(self) -> u8 {
        match self {
            Stage::S1DiffusionPretrain => 1,
            Stage::S2S2ttPretrain => 2,
            Stage::S3JointNat => 3,
            Stage::S4DiffusionFinetune => 4,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|s| s.number() == n)
            .ok_or_else(|| Error::config(format!("no stage {n}; stages are 1 to 4")))
    }

    /// Stages whose output this one builds on.
    pub fn prerequisites(self) -> &'static [Stage] {
        match self {
            Stage::S1DiffusionPretrain | Stage::S2S2ttPretrain => &[],
            Stage::S3JointNat => &[Stage::S2S2ttPretrain],
            Stage::S4DiffusionFinetune => &[Stage::S1DiffusionPretrain, Stage::S3JointNat],
        }
    }

    pub fn required_losses(self) -> &'static [LossKind] {
        match self {
            Stage::S1DiffusionPretrain => &[LossKind::Ls],
            Stage::S2S2ttPretrain => &[LossKind::Lp],
            Stage::S3JointNat => &[LossKind::Lp, LossKind::Ld, LossKind::Ls],
            Stage::S4DiffusionFinetune => &[LossKind::Ld, LossKind::Ls],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::S1DiffusionPretrain => "diffusion pretraining",
            Stage::S2S2ttPretrain => "speech-to-phoneme pretraining",
            Stage::S3JointNat => "joint training with the NAT synthesizer",
            Stage::S4DiffusionFinetune => "diffusion fine-tuning",
        };
        write!(f, "stage {} ({name})", self.number())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "L_p")]
    Lp,
    #[serde(rename = "L_d")]
    Ld,
    #[serde(rename = "L_s")]
    Ls,
}

/// Declarative description of one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StagePlan {
    pub stage: Stage,
    pub losses: Vec<LossKind>,
    pub trainable: String,
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
    #[serde(default)]
    pub augment: bool,
    #[serde(default)]
    pub dropout: f64,
    /// Probability that a batch is a speech-to-phoneme batch (L_p only).
    #[serde(default)]
    pub mix_ratio: f64,
    #[serde(default = "default_val")]
    pub val_fraction: f64,
    #[serde(default)]
    pub plateau: PlateauConfig,
    #[serde(default)]
    pub spec_augment: SpecAugmentConfig,
    /// Codec epochs run ahead of diffusion pretraining in stage 1.
    #[serde(default)]
    pub codec_epochs: usize,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub mask: MaskPolicy,
    /// Stage 4: fraction of items trained in the all-masked translation setting.
    #[serde(default = "default_full_mask")]
    pub full_mask_prob: f64,
}

fn default_wd() -> f64 {
    0.01
}
fn default_clip() -> f64 {
    1.0
}
fn default_val() -> f64 {
    0.1
}
fn default_full_mask() -> f64 {
    0.8
}

impl StagePlan {
    pub fn default_for(stage: Stage) -> Self {
        let base = StagePlan {
            stage,
            losses: stage.required_losses().to_vec(),
            trainable: String::new(),
            dataset: None,
            epochs: 20,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: default_wd(),
            grad_clip: default_clip(),
            augment: false,
            dropout: 0.0,
            mix_ratio: 0.0,
            val_fraction: default_val(),
            plateau: PlateauConfig::default(),
            spec_augment: SpecAugmentConfig::default(),
            codec_epochs: 0,
            flow: FlowConfig::default(),
            mask: MaskPolicy::default(),
            full_mask_prob: default_full_mask(),
        };
        match stage {
            Stage::S1DiffusionPretrain => StagePlan {
                trainable: "codec,diffusion".into(),
                codec_epochs: 30,
                lr: 2e-3,
                weight_decay: 0.0,
                plateau: PlateauConfig {
                    patience: 6,
                    ..PlateauConfig::default()
                },
                ..base
            },
            Stage::S2S2ttPretrain => StagePlan {
                trainable: "translation".into(),
                epochs: 30,
                dropout: 0.1,
                ..base
            },
            Stage::S3JointNat => StagePlan {
                trainable: "all".into(),
                epochs: 30,
                lr: 2e-4,
                dropout: 0.1,
                mix_ratio: 0.5,
                plateau: PlateauConfig {
                    patience: 2,
                    ..PlateauConfig::default()
                },
                ..base
            },
            Stage::S4DiffusionFinetune => StagePlan {
                trainable: "synthesizer".into(),
                dropout: 0.1,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut got = self.losses.clone();
        got.sort();
        got.dedup();
        let want = self.stage.required_losses();
        if got != want {
            return Err(Error::config(format!(
                "{} trains losses {want:?}, plan requests {:?}",
                self.stage, self.losses
            )));
        }
        if self.stage == Stage::S4DiffusionFinetune && self.trainable != "synthesizer" && self.trainable != "diffusion" {
            return Err(Error::config("stage 4 may only train the synthesizer"));
        }
        super::freeze::parse_selector(&self.trainable)?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be ≥ 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.mix_ratio) || !(0.0..=1.0).contains(&self.full_mask_prob) {
            return Err(Error::config("mix_ratio and full_mask_prob must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config("val_fraction must lie in [0, 1)"));
        }
        if self.grad_clip <= 0.0 {
            return Err(Error::config("grad_clip must be positive"));
        }
        self.flow.validate()?;
        self.mask.validate()?;
        self.spec_augment.validate()?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::config(format!("stage config: {e}")))?;
        Self::from_table(table)
    }

    /// Reads a plan table; fields it leaves out take the defaults of its stage.
    pub fn from_table(table: toml::Table) -> Result<Self> {
        let stage: Stage = table
            .get("stage")
            .ok_or_else(|| Error::config("stage config needs a `stage` field"))?
            .clone()
            .try_into()
            .map_err(|e| Error::config(format!("stage config: {e}")))?;
        let mut merged = toml::Table::try_from(Self::default_for(stage)).map_err(|e| Error::Serialization(e.to_string()))?;
        overlay(&mut merged, table);
        let plan: StagePlan = merged.try_into().map_err(|e| Error::config(format!("stage config: {e}")))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

fn overlay(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => overlay(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        for s in Stage::ALL {
            let p = StagePlan::default_for(s);
            p.validate().unwrap();
            assert_eq!(StagePlan::from_toml(&p.to_toml().unwrap()).unwrap(), p);
            assert_eq!(Stage::from_number(s.number()).unwrap(), s);
        }
        assert!(matches!(Stage::from_number(5), Err(Error::Config(_))));
    }

    #[test]
    fn s2_rejects_synthesis_loss() {
        let mut p = StagePlan::default_for(Stage::S2S2ttPretrain);
        p.losses.push(LossKind::Ls);
        assert!(matches!(p.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn stage_loss_sets() {
        use LossKind::*;
        assert_eq!(Stage::S2S2ttPretrain.required_losses(), &[Lp]);
        assert_eq!(Stage::S3JointNat.required_losses(), &[Lp, Ld, Ls]);
        assert_eq!(Stage::S4DiffusionFinetune.required_losses(), &[Ld, Ls]);
        let mut p = StagePlan::default_for(Stage::S4DiffusionFinetune);
        p.losses = vec![Ls];
        assert!(p.validate().is_err());
    }

    #[test]
    fn s4_only_trains_the_synthesizer() {
        let mut p = StagePlan::default_for(Stage::S4DiffusionFinetune);
        p.trainable = "all".into();
        assert!(matches!(p.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_fields_and_selectors_are_rejected() {
        let text = StagePlan::default_for(Stage::S2S2ttPretrain).to_toml().unwrap();
        assert!(StagePlan::from_toml(&format!("bogus = 1\n{text}")).is_err());
        let bad = text.replace("trainable = \"translation\"", "trainable = \"everything\"");
        assert!(matches!(StagePlan::from_toml(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn partial_plans_keep_stage_defaults() {
        let p = StagePlan::from_toml("stage = \"s3_joint_nat\"\nepochs = 5\n[plateau]\npatience = 7\n").unwrap();
        let d = StagePlan::default_for(Stage::S3JointNat);
        assert_eq!(p.epochs, 5);
        assert_eq!(p.plateau.patience, 7);
        assert_eq!(p.plateau.factor, d.plateau.factor);
        assert_eq!((p.mix_ratio, p.augment, &p.trainable), (d.mix_ratio, d.augment, &d.trainable));
        assert!(matches!(StagePlan::from_toml("epochs = 5"), Err(Error::Config(_))));
    }
}
