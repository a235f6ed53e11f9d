use std::f64::consts::PI;

const F0_MIN: f64 = 70.0;
const F0_MAX: f64 = 330.0;
const F0_STEP: f64 = 0.25;
const HARMONIC_CEIL_HZ: f64 = 3800.0;
/// Candidates capturing at least this share of the best fit count as ties; the
/// highest such f0 wins, which rejects sub-octave fits that add parameters
/// without explaining more energy.
const TIE_SHARE: f64 = 0.85;

/// Least-squares harmonic fit of the fundamental frequency.
///
/// For each candidate f0 the energy explained by a sum of sinusoids at its
/// harmonics (the least-squares projection onto near-orthogonal harmonic
/// atoms) is computed over a Hann-weighted signal.
pub fn estimate_pitch(waveform: &[f32], sample_rate: u32) -> f64 {
    let sr = sample_rate as f64;
    let n = waveform.len();
    if n < 16 {
        return 0.0;
    }
    let x: Vec<f64> = waveform
        .iter()
        .enumerate()
        .map(|(i, &v)| v as f64 * (0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos()))
        .collect();
    let mut scores = Vec::new();
    let mut f0 = F0_MIN;
    while f0 <= F0_MAX {
        let mut energy = 0.0;
        let mut h = 1;
        while h as f64 * f0 < HARMONIC_CEIL_HZ.min(sr / 2.0) {
            let w = 2.0 * PI * h as f64 * f0 / sr;
            let (step_re, step_im) = (w.cos(), -w.sin());
            let (mut re, mut im) = (1.0f64, 0.0f64);
            let (mut acc_re, mut acc_im) = (0.0, 0.0);
            for &v in &x {
                acc_re += v * re;
                acc_im += v * im;
                let nre = re * step_re - im * step_im;
                im = re * step_im + im * step_re;
                re = nre;
            }
            energy += acc_re * acc_re + acc_im * acc_im;
            h += 1;
        }
        scores.push((f0, energy));
        f0 += F0_STEP;
    }
    let best = scores.iter().map(|s| s.1).fold(0.0, f64::max);
    scores
        .iter()
        .rev()
        .find(|s| s.1 >= TIE_SHARE * best)
        .map(|s| s.0)
        .unwrap_or(0.0)
}
