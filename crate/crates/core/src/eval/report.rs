use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// What a run's outputs can be traced back to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproHeader {
    pub config_hash: String,
    pub seed: u64,
    /// Checkpoint label → sha256 of the file.
    pub checkpoints: BTreeMap<String, String>,
}

impl ReproHeader {
    /// `config_hash` is the sha256 of the config's JSON serialization.
    pub fn new(config: &impl Serialize, seed: u64, checkpoints: BTreeMap<String, String>) -> Result<Self> {
        let json = serde_json::to_vec(config).map_err(|e| Error::Serialization(e.to_string()))?;
        Ok(Self {
            config_hash: hex::encode(Sha256::digest(&json)),
            seed,
            checkpoints,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub label: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

impl Table {
    pub fn new(title: &str, columns: &[&str]) -> Self {
        Self {
            title: title.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn row(mut self, label: &str, values: &[f64]) -> Self {
        self.rows.push(Row {
            label: label.to_string(),
            values: values.to_vec(),
        });
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub header: Option<ReproHeader>,
    pub tables: Vec<Table>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl Report {
    fn check(&self) -> Result<()> {
        for t in &self.tables {
            for r in &t.rows {
                if r.values.len() != t.columns.len() {
                    return Err(Error::Serialization(format!(
                        "row {:?} of {:?} has {} values for {} columns",
                        r.label,
                        t.title,
                        r.values.len(),
                        t.columns.len()
                    )));
                }
                if let Some((i, v)) = r.values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                    return Err(Error::Serialization(format!(
                        "{} / {} / {} is {v}; reports may only hold finite numbers",
                        t.title, r.label, t.columns[i]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        self.check()?;
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn to_text(&self) -> Result<String> {
        self.check()?;
        let mut out = String::new();
        if let Some(h) = &self.header {
            let _ = writeln!(out, "config {}  seed {}", h.config_hash, h.seed);
            for (k, v) in &h.checkpoints {
                let _ = writeln!(out, "checkpoint {k} {v}");
            }
            out.push('\n');
        }
        for t in &self.tables {
            let label_w = t.rows.iter().map(|r| r.label.chars().count()).max().unwrap_or(0).max(8);
            let col_w: Vec<usize> = t.columns.iter().map(|c| c.chars().count().max(10)).collect();
            let _ = writeln!(out, "{}", t.title);
            let mut line = format!("{:<label_w$}", "");
            for (c, w) in t.columns.iter().zip(&col_w) {
                let _ = write!(line, "  {c:>w$}");
            }
            let _ = writeln!(out, "{}", line.trim_end());
            for r in &t.rows {
                let mut line = format!("{:<label_w$}", r.label);
                for (v, w) in r.values.iter().zip(&col_w) {
                    let _ = write!(line, "  {v:>w$.4}");
                }
                let _ = writeln!(out, "{line}");
            }
            out.push('\n');
        }
        for n in &self.notes {
            let _ = writeln!(out, "{n}");
        }
        Ok(out)
    }

    /// Writes `report.json` and `report.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        let json = self.to_json()?;
        let text = self.to_text()?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let jp = dir.join("report.json");
        let tp = dir.join("report.txt");
        std::fs::write(&jp, json).map_err(|e| Error::io(&jp, e))?;
        std::fs::write(&tp, text).map_err(|e| Error::io(&tp, e))?;
        Ok((jp, tp))
    }
}
