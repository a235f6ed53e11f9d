use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::nn::{ParamKind, ParamStore};

/// Parameter-name prefixes covered by each selector.
fn groups(selector: &str) -> Option<&'static [&'static str]> {
    Some(match selector {
        "all" => &["frontend", "codec", "encoder", "decoder", "bridge", "duration", "variance", "nat", "diffusion"],
        "translation" => &["encoder", "decoder", "bridge"],
        "synthesizer" => &["nat", "diffusion"],
        "nat" => &["nat"],
        "diffusion" => &["diffusion"],
        "codec" => &["codec"],
        "predictors" => &["duration", "variance"],
        _ => return None,
    })
}

/// Parses a comma-separated union of selectors into parameter prefixes.
pub fn parse_selector(selector: &str) -> Result<BTreeSet<&'static str>> {
    let mut out = BTreeSet::new();
    for part in selector.split(',').map(str::trim) {
        let g = groups(part).ok_or_else(|| {
            Error::config(format!(
                "unknown parameter selector {part:?}; expected all, translation, synthesizer, nat, diffusion, codec or predictors"
            ))
        })?;
        out.extend(g.iter().copied());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub trainable: Vec<String>,
    pub frozen: Vec<String>,
}

/// Splits the trainable parameters of `store` by selector. Buffers are never
/// trainable and appear in neither set.
pub fn freeze_select(store: &ParamStore, selector: &str) -> Result<Partition> {
    let prefixes = parse_selector(selector)?;
    let (mut trainable, mut frozen) = (Vec::new(), Vec::new());
    for p in store.iter().filter(|p| p.kind == ParamKind::Trainable) {
        let head = p.name.split('.').next().unwrap_or("");
        if prefixes.contains(head) {
            trainable.push(p.name.clone());
        } else {
            frozen.push(p.name.clone());
        }
    }
    Ok(Partition { trainable, frozen })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::MelConfig;
    use crate::config::ModelConfig;
    use crate::model::S2stModel;
    use candle_core::DType;

    fn model() -> S2stModel {
        S2stModel::new(&ModelConfig::tiny(), &MelConfig::default(), 1, DType::F32).unwrap()
    }

    #[test]
    fn partition_is_total_and_disjoint() {
        let m = model();
        let n_trainable = m.store.iter().filter(|p| p.kind == ParamKind::Trainable).count();
        for sel in ["all", "translation", "synthesizer", "codec", "predictors", "nat,codec"] {
            let p = freeze_select(&m.store, sel).unwrap();
            assert_eq!(p.trainable.len() + p.frozen.len(), n_trainable);
            let t: BTreeSet<_> = p.trainable.iter().collect();
            assert!(p.frozen.iter().all(|n| !t.contains(n)));
        }
    }

    #[test]
    fn selector_examples() {
        let m = model();
        assert!(freeze_select(&m.store, "all").unwrap().frozen.is_empty());
        let syn = freeze_select(&m.store, "synthesizer").unwrap();
        assert!(!syn.trainable.is_empty());
        assert!(syn.trainable.iter().all(|n| n.starts_with("nat.") || n.starts_with("diffusion.")));
        assert!(matches!(freeze_select(&m.store, "vocoder"), Err(Error::Config(_))));
    }
}
