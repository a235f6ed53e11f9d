use std::collections::BTreeMap;
use std::thread::sleep;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{Pipeline, StageTimings, Synth};

/// Something whose end-to-end latency can be measured.
pub trait TimedPipeline {
    fn run(&self, waveform: &[f32]) -> Result<StageTimings>;
}

/// A full translation pipeline with a fixed synthesizer.
pub struct SynthPipeline<'p, 'm> {
    pub pipeline: &'p Pipeline<'m>,
    pub synth: Synth,
}

impl TimedPipeline for SynthPipeline<'_, '_> {
    fn run(&self, waveform: &[f32]) -> Result<StageTimings> {
        Ok(self.pipeline.translate(waveform, self.synth)?.timings)
    }
}

/// Sleeps `fraction` × input duration, reported as synthesizer time.
pub struct SleepStub {
    pub sample_rate: u32,
    pub fraction: f64,
}

impl TimedPipeline for SleepStub {
    fn run(&self, waveform: &[f32]) -> Result<StageTimings> {
        let t0 = Instant::now();
        sleep(Duration::from_secs_f64(self.fraction * waveform.len() as f64 / self.sample_rate as f64));
        Ok(StageTimings {
            synthesizer: t0.elapsed().as_secs_f64(),
            ..StageTimings::default()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub label: String,
    /// Mean wall time per input over the measured repetitions.
    pub per_utterance_s: Vec<f64>,
    pub mean_inference_s: f64,
    pub median_inference_s: f64,
    pub std_inference_s: f64,
    pub mean_input_duration_s: f64,
    pub rtf: f64,
    /// Mean seconds per stage.
    pub breakdown: BTreeMap<String, f64>,
    pub reps: usize,
    pub warmup: usize,
}

impl LatencyReport {
    pub fn breakdown_total(&self) -> f64 {
        self.breakdown.values().sum()
    }

    pub fn share(&self, stage: &str) -> f64 {
        self.breakdown.get(stage).copied().unwrap_or(0.0) / self.breakdown_total().max(f64::MIN_POSITIVE)
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times `reps` runs of every input after `warmup` discarded runs of the first.
pub fn measure_latency(
    label: &str,
    target: &dyn TimedPipeline,
    inputs: &[Vec<f32>],
    sample_rate: u32,
    warmup: usize,
    reps: usize,
) -> Result<LatencyReport> {
    if reps == 0 {
        return Err(Error::config("reps must be ≥ 1"));
    }
    if warmup == 0 {
        return Err(Error::config("warmup must be ≥ 1"));
    }
    if inputs.is_empty() || inputs.iter().any(Vec::is_empty) {
        return Err(Error::input("latency inputs must be non-empty waveforms"));
    }
    for _ in 0..warmup {
        target.run(&inputs[0])?;
    }
    let mut all = Vec::with_capacity(inputs.len() * reps);
    let mut per_utt = Vec::with_capacity(inputs.len());
    let mut stage_sum = [0f64; 6];
    for x in inputs {
        let mut sum = 0.0;
        for _ in 0..reps {
            let t0 = Instant::now();
            let timings = target.run(x)?;
            let wall = t0.elapsed().as_secs_f64();
            for (acc, v) in stage_sum.iter_mut().zip(timings.values()) {
                *acc += v;
            }
            all.push(wall);
            sum += wall;
        }
        per_utt.push(sum / reps as f64);
    }
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let std = (all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mean_input = inputs.iter().map(|x| x.len() as f64 / sample_rate as f64).sum::<f64>() / inputs.len() as f64;
    let breakdown = StageTimings::NAMES
        .iter()
        .zip(stage_sum)
        .map(|(k, v)| (k.to_string(), v / n))
        .collect();
    Ok(LatencyReport {
        label: label.to_string(),
        per_utterance_s: per_utt,
        mean_inference_s: mean,
        median_inference_s: median(&mut all),
        std_inference_s: std,
        mean_input_duration_s: mean_input,
        rtf: mean_input / mean,
        breakdown,
        reps,
        warmup,
    })
}

/// Published reference point: mean input duration and mean inference time.
pub const REFERENCE_INPUT_S: f64 = 5.61;
pub const REFERENCE_INFERENCE_S: f64 = 0.99;

pub fn reference_rtf() -> f64 {
    REFERENCE_INPUT_S / REFERENCE_INFERENCE_S
}

pub fn reference_line() -> String {
    format!(
        "reference: {REFERENCE_INPUT_S:.2} s input / {REFERENCE_INFERENCE_S:.2} s inference = RTF {:.2}",
        reference_rtf()
    )
}

/// Whether beam search takes a larger share of wall time than the synthesizer.
pub fn decoder_dominates(report: &LatencyReport) -> bool {
    report.share("beam_search") > report.share("synthesizer")
}
