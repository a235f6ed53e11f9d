//! Translation metrics, speaker similarity, latency benchmarking and reports.

mod latency;
mod metrics;
mod report;
mod speaker;

pub use latency::{
    decoder_dominates, measure_latency, reference_line, reference_rtf, LatencyReport, SleepStub, SynthPipeline,
    TimedPipeline, REFERENCE_INFERENCE_S, REFERENCE_INPUT_S,
};
pub use metrics::{bleu, edit_distance, token_error_rate};
pub use report::{Report, ReproHeader, Row, Table};
pub use speaker::{
    cosine, speaker_probe, speaker_similarity, utterance_stats, EmbedderConfig, ProbeResult, SpeakerEmbedder,
};

use serde::{Deserialize, Serialize};

use crate::dataset::Example;
use crate::error::{Error, Result};
use crate::model::S2stModel;
use crate::nat::nat_loss_arrays;
use crate::pipeline::{Pipeline, Synth};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub synth: Synth,
    pub n: usize,
    pub ter: f64,
    pub bleu: f64,
    pub tf_accuracy: f64,
    /// Mean absolute duration error in frames (teacher-forced phonemes).
    pub duration_mae: f64,
    /// Log-mel MSE of synthesis from reference phonemes and durations; an
    /// audio-quality proxy, not a perceptual score.
    pub mel_distance: f64,
    pub speaker_similarity: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub summary: EvalSummary,
    pub hypotheses: Vec<Vec<u32>>,
}

/// Decodes every item with beam search and scores the result; synthesizes
/// each item once more from reference phonemes for the mel proxy, and once
/// end to end for speaker similarity when an embedder is given.
pub fn evaluate(
    pipeline: &Pipeline,
    items: &[&Example],
    synth: Synth,
    embedder: Option<&SpeakerEmbedder>,
    batch_size: usize,
) -> Result<EvalOutput> {
    if items.is_empty() {
        return Err(Error::input("nothing to evaluate"));
    }
    pipeline.check_ready(synth)?;
    let model: &S2stModel = pipeline.model();
    let hyps = items
        .iter()
        .map(|e| pipeline.decode_phonemes(&e.src_mel))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<Vec<u32>> = items.iter().map(|e| e.tgt_ids.clone()).collect();
    let pred = model.predicted_durations(items, batch_size)?;
    let (mut abs, mut count) = (0.0, 0usize);
    for (p, e) in pred.iter().zip(items) {
        for (a, &b) in p.iter().zip(&e.tgt_durations) {
            abs += (a - b as f64).abs();
            count += 1;
        }
    }
    let mut mel_distance = 0.0;
    let mut sims = Vec::new();
    for e in items {
        let durations: Vec<f64> = e.tgt_durations.iter().map(|&d| d as f64).collect();
        let mel = pipeline.synthesize_with(&e.src_mel, &e.tgt_ids, &durations, synth)?;
        mel_distance += nat_loss_arrays(&mel, &e.tgt_mel)?;
        if let Some(emb) = embedder {
            let out = pipeline.translate_mel(&e.src_mel, synth)?;
            sims.push(cosine(&emb.embed_mel(&out.mel)?, &emb.embed_mel(&e.src_mel)?));
        }
    }
    let summary = EvalSummary {
        synth,
        n: items.len(),
        ter: token_error_rate(&hyps, &refs)?,
        bleu: bleu(&hyps, &refs)?,
        tf_accuracy: model.teacher_forced_accuracy(items, batch_size)?,
        duration_mae: abs / count.max(1) as f64,
        mel_distance: mel_distance / items.len() as f64,
        speaker_similarity: (!sims.is_empty()).then(|| sims.iter().sum::<f64>() / sims.len() as f64),
    };
    Ok(EvalOutput {
        summary,
        hypotheses: hyps,
    })
}

/// Translation, audio-proxy and speaker tables. The toy corpus has a single
/// language pair, so its row coincides with the overall row.
pub fn summary_report(summaries: &[EvalSummary], header: Option<ReproHeader>) -> Report {
    let mut tables = Vec::new();
    for s in summaries {
        let name = format!("{} synthesizer, {} utterances", s.synth, s.n);
        let tr = [s.ter, s.bleu, s.tf_accuracy];
        tables.push(
            Table::new(&format!("Translation ({name})"), &["TER", "BLEU", "TF acc"])
                .row("src→tgt", &tr)
                .row("overall", &tr),
        );
        let audio = [s.mel_distance, s.duration_mae];
        tables.push(
            Table::new(&format!("Audio proxy ({name})"), &["mel MSE", "dur MAE"])
                .row("src→tgt", &audio)
                .row("overall", &audio),
        );
        if let Some(sim) = s.speaker_similarity {
            tables.push(
                Table::new(&format!("Speaker similarity ({name})"), &["cosine"])
                    .row("src→tgt", &[sim])
                    .row("overall", &[sim]),
            );
        }
    }
    Report {
        header,
        tables,
        notes: vec!["mel MSE is a log-mel reconstruction distance used in place of perceptual quality scores".into()],
    }
}

/// Latency summary and per-stage breakdown for each measured variant.
pub fn latency_report(reports: &[LatencyReport], header: Option<ReproHeader>) -> Report {
    let mut summary = Table::new("Latency", &["input s", "mean s", "median s", "std s", "RTF"]);
    let names: Vec<&str> = crate::pipeline::StageTimings::NAMES.to_vec();
    let mut stages = Table::new("Stage breakdown (mean s)", &names);
    let mut notes = vec![reference_line()];
    for r in reports {
        summary = summary.row(
            &r.label,
            &[r.mean_input_duration_s, r.mean_inference_s, r.median_inference_s, r.std_inference_s, r.rtf],
        );
        let v: Vec<f64> = names.iter().map(|n| r.breakdown.get(*n).copied().unwrap_or(0.0)).collect();
        stages = stages.row(&r.label, &v);
        if !decoder_dominates(r) {
            notes.push(format!(
                "{}: beam search ({:.1}%) does not dominate the synthesizer ({:.1}%) at this model scale",
                r.label,
                100.0 * r.share("beam_search"),
                100.0 * r.share("synthesizer")
            ));
        }
    }
    Report {
        header,
        tables: vec![summary, stages],
        notes,
    }
}
