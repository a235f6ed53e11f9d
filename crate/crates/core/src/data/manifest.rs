use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_audio, write_audio, Language, ParallelPair, SpeakerParams, Utterance};
use crate::error::{Error, Result};
use crate::phoneme::PhonemeSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerRecord {
    pub pitch_hz: f64,
    pub timbre: [f64; 4],
    pub rate: f64,
}

/// One JSONL line of the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub src_audio: String,
    pub tgt_audio: String,
    pub src_phonemes: Vec<u32>,
    pub tgt_phonemes: Vec<u32>,
    pub tgt_durations: Vec<u32>,
    pub speaker: SpeakerRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_durations: Option<Vec<u32>>,
}

impl From<&SpeakerParams> for SpeakerRecord {
    fn from(s: &SpeakerParams) -> Self {
        Self {
            pitch_hz: s.pitch_hz,
            timbre: s.timbre,
            rate: s.rate,
        }
    }
}

impl From<&SpeakerRecord> for SpeakerParams {
    fn from(s: &SpeakerRecord) -> Self {
        Self {
            pitch_hz: s.pitch_hz,
            timbre: s.timbre,
            rate: s.rate,
        }
    }
}

/// Writes `pairs` as JSONL at `path`; waveforms go to `audio/` next to it.
pub fn write_manifest(pairs: &[ParallelPair], path: &Path, sample_rate: u32) -> Result<()> {
    let root = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut out = Vec::new();
    for p in pairs {
        let src_rel = format!("audio/{}.src.f32", p.id);
        let tgt_rel = format!("audio/{}.tgt.f32", p.id);
        write_audio(&root.join(&src_rel), &p.source.waveform, sample_rate)?;
        write_audio(&root.join(&tgt_rel), &p.target.waveform, sample_rate)?;
        let rec = ManifestRecord {
            id: p.id.clone(),
            src_audio: src_rel,
            tgt_audio: tgt_rel,
            src_phonemes: p.source.phonemes.ids.clone(),
            tgt_phonemes: p.target.phonemes.ids.clone(),
            tgt_durations: p.target.phonemes.durations.clone().unwrap_or_default(),
            speaker: SpeakerRecord::from(&p.source.speaker),
            src_durations: p.source.phonemes.durations.clone(),
        };
        serde_json::to_writer(&mut out, &rec).map_err(|e| Error::Serialization(e.to_string()))?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Parsed manifest; audio is loaded on demand and the dataset is immutable,
/// so any number of threads may read from it concurrently.
#[derive(Debug, Clone)]
pub struct ManifestDataset {
    root: PathBuf,
    records: Vec<ManifestRecord>,
}

pub fn read_manifest(path: &Path) -> Result<ManifestDataset> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        if rec.tgt_durations.len() != rec.tgt_phonemes.len() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!(
                    "tgt_durations has {} entries for {} phonemes",
                    rec.tgt_durations.len(),
                    rec.tgt_phonemes.len()
                ),
            });
        }
        if let Some(d) = &rec.src_durations {
            if d.len() != rec.src_phonemes.len() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "src_durations length differs from src_phonemes".into(),
                });
            }
        }
        records.push(rec);
    }
    Ok(ManifestDataset {
        root: path.parent().unwrap_or(Path::new(".")).to_path_buf(),
        records,
    })
}

impl ManifestDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn get(&self, index: usize) -> Result<ParallelPair> {
        let rec = self
            .records
            .get(index)
            .ok_or_else(|| Error::input(format!("record {index} out of range")))?;
        let (src_wave, _) = read_audio(&self.root.join(&rec.src_audio))?;
        let (tgt_wave, _) = read_audio(&self.root.join(&rec.tgt_audio))?;
        let speaker = SpeakerParams::from(&rec.speaker);
        Ok(ParallelPair {
            id: rec.id.clone(),
            source: Utterance {
                waveform: src_wave,
                phonemes: PhonemeSequence {
                    ids: rec.src_phonemes.clone(),
                    durations: rec.src_durations.clone(),
                    variances: None,
                },
                speaker: speaker.clone(),
                language: Language::Src,
            },
            target: Utterance {
                waveform: tgt_wave,
                phonemes: PhonemeSequence::with_durations(rec.tgt_phonemes.clone(), rec.tgt_durations.clone()),
                speaker,
                language: Language::Tgt,
            },
        })
    }

    pub fn load_all(&self) -> Result<Vec<ParallelPair>> {
        (0..self.len()).map(|i| self.get(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::MelConfig;
    use crate::data::{generate_corpus, CorpusConfig};

    #[test]
    fn round_trip_preserves_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let pairs = generate_corpus(4, 10, &CorpusConfig::default(), &MelConfig::default()).unwrap();
        write_manifest(&pairs, &path, 8000).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 10);
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            for key in ["id", "src_audio", "tgt_audio", "src_phonemes", "tgt_phonemes", "tgt_durations", "speaker"] {
                assert!(v.get(key).is_some(), "missing {key}");
            }
            assert_eq!(v["speaker"]["timbre"].as_array().unwrap().len(), 4);
        }
        let ds = read_manifest(&path).unwrap();
        assert_eq!(ds.load_all().unwrap(), pairs);
    }

    #[test]
    fn empty_manifest_is_readable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        write_manifest(&[], &path, 8000).unwrap();
        assert!(read_manifest(&path).unwrap().is_empty());
    }

    #[test]
    fn corrupt_duration_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let pairs = generate_corpus(4, 3, &CorpusConfig::default(), &MelConfig::default()).unwrap();
        write_manifest(&pairs, &path, 8000).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut v: serde_json::Value = serde_json::from_str(&lines[1]).unwrap();
        v["tgt_durations"][0] = serde_json::json!("seven");
        lines[1] = v.to_string();
        fs::write(&path, lines.join("\n")).unwrap();
        match read_manifest(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        v["tgt_durations"] = serde_json::json!([1]);
        lines[1] = v.to_string();
        fs::write(&path, lines.join("\n")).unwrap();
        assert!(matches!(read_manifest(&path), Err(Error::Parse { line: 2, .. })));
    }
}
