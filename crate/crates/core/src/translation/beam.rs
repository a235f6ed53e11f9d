use candle_core::{DType, Tensor};

use super::decoder::log_softmax;
use super::{EncoderStates, PhonemeDecoder};
use crate::batch::pad_tokens;
use crate::config::Vocab;
use crate::error::{Error, Result};

/// Next-token log-probabilities for a set of equal-length prefixes.
pub trait StepScorer {
    fn vocab_size(&self) -> usize;
    fn step_log_probs(&self, prefixes: &[Vec<u32>]) -> Result<Vec<Vec<f32>>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens, excluding the start prefix, including EOS if emitted.
    pub tokens: Vec<u32>,
    pub log_prob: f64,
}

impl Hypothesis {
    /// Length-normalized score.
    pub fn score(&self) -> f64 {
        self.log_prob / self.tokens.len().max(1) as f64
    }
}

fn check(beam: usize, max_len: usize, start: &[u32]) -> Result<()> {
    if beam == 0 {
        return Err(Error::input("beam must be ≥ 1"));
    }
    if max_len == 0 {
        return Err(Error::input("max_len must be ≥ 1"));
    }
    if start.is_empty() {
        return Err(Error::input("start prefix must not be empty"));
    }
    Ok(())
}

/// Argmax decoding; ties go to the lower token id.
pub fn greedy_search(scorer: &dyn StepScorer, start: &[u32], eos: Option<u32>, max_len: usize) -> Result<Hypothesis> {
    check(1, max_len, start)?;
    let mut prefix = start.to_vec();
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
    };
    for _ in 0..max_len {
        let lp = scorer.step_log_probs(std::slice::from_ref(&prefix))?.remove(0);
        let (tok, &best) = lp
            .iter()
            .enumerate()
            .fold(None::<(usize, &f32)>, |acc, (i, v)| match acc {
                Some((_, b)) if *v <= *b => acc,
                _ if v.is_finite() => Some((i, v)),
                _ => acc,
            })
            .ok_or_else(|| Error::input("scorer produced no finite log-probability"))?;
        hyp.log_prob += best as f64;
        hyp.tokens.push(tok as u32);
        prefix.push(tok as u32);
        if Some(tok as u32) == eos {
            break;
        }
    }
    Ok(hyp)
}

/// Beam search with length-normalized final scoring (`log_prob / length`).
///
/// At each step the `beam` best continuations survive; those ending in `eos`
/// are moved to the finished pool and the live beam shrinks accordingly. After
/// `max_len` steps every live hypothesis is finished. The greedy path is also
/// considered, so the result never scores below greedy decoding. Ties are
/// broken towards lower token ids.
pub fn beam_search_with(
    scorer: &dyn StepScorer,
    start: &[u32],
    eos: Option<u32>,
    beam: usize,
    max_len: usize,
) -> Result<Hypothesis> {
    check(beam, max_len, start)?;
    let mut alive = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for step in 0..max_len {
        if alive.is_empty() {
            break;
        }
        let prefixes: Vec<Vec<u32>> = alive
            .iter()
            .map(|h| start.iter().chain(&h.tokens).copied().collect())
            .collect();
        let lps = scorer.step_log_probs(&prefixes)?;
        let mut cands: Vec<(f64, usize, u32)> = Vec::new();
        for (i, (h, lp)) in alive.iter().zip(&lps).enumerate() {
            for (tok, &v) in lp.iter().enumerate() {
                if v.is_finite() {
                    cands.push((h.log_prob + v as f64, i, tok as u32));
                }
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));
        let mut next = Vec::new();
        for &(lp, i, tok) in cands.iter().take(beam) {
            let mut tokens = alive[i].tokens.clone();
            tokens.push(tok);
            let h = Hypothesis { tokens, log_prob: lp };
            if Some(tok) == eos || step + 1 == max_len {
                finished.push(h);
            } else {
                next.push(h);
            }
        }
        alive = next;
    }
    finished.push(greedy_search(scorer, start, eos, max_len)?);
    let mut best = 0;
    for (i, h) in finished.iter().enumerate() {
        if h.score() > finished[best].score() {
            best = i;
        }
    }
    Ok(finished.swap_remove(best))
}

/// Scores prefixes with the phoneme decoder for one encoded utterance.
/// PAD, BOS and UNK are never proposed.
pub struct DecoderScorer<'a> {
    decoder: &'a PhonemeDecoder,
    enc: &'a EncoderStates,
}

impl<'a> DecoderScorer<'a> {
    pub fn new(decoder: &'a PhonemeDecoder, enc: &'a EncoderStates) -> Result<Self> {
        if enc.batch_size() != 1 {
            return Err(Error::input("decoder scorer expects a single utterance"));
        }
        Ok(Self { decoder, enc })
    }
}

impl StepScorer for DecoderScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.decoder.vocab_size()
    }

    fn step_log_probs(&self, prefixes: &[Vec<u32>]) -> Result<Vec<Vec<f32>>> {
        let (tokens, lengths) = pad_tokens(prefixes, Vocab::PAD, self.enc.states.device())?;
        if lengths.iter().any(|&l| l != lengths[0]) {
            return Err(Error::input("prefixes must have equal length"));
        }
        let l = lengths[0];
        let enc = self.enc.repeat(prefixes.len())?;
        let out = self.decoder.forward(&tokens, &enc, None)?;
        let last = out.logits.narrow(1, l - 1, 1)?.squeeze(1)?;
        let lp = log_softmax(&last)?.to_dtype(DType::F32)?.to_vec2::<f32>()?;
        Ok(lp
            .into_iter()
            .map(|mut row| {
                for special in [Vocab::PAD, Vocab::BOS, Vocab::UNK] {
                    row[special as usize] = f32::NEG_INFINITY;
                }
                row
            })
            .collect())
    }
}

/// Decoded phoneme tokens (EOS stripped) and the length-normalized score.
pub fn beam_search(
    decoder: &PhonemeDecoder,
    enc: &EncoderStates,
    beam: usize,
    max_len: usize,
) -> Result<(Vec<u32>, f64)> {
    let scorer = DecoderScorer::new(decoder, enc)?;
    let h = beam_search_with(&scorer, &[Vocab::BOS], Some(Vocab::EOS), beam, max_len)?;
    let score = h.score();
    let mut tokens = h.tokens;
    if tokens.last() == Some(&Vocab::EOS) {
        tokens.pop();
    }
    Ok((tokens, score))
}

pub fn greedy_decode(decoder: &PhonemeDecoder, enc: &EncoderStates, max_len: usize) -> Result<(Vec<u32>, f64)> {
    let scorer = DecoderScorer::new(decoder, enc)?;
    let h = greedy_search(&scorer, &[Vocab::BOS], Some(Vocab::EOS), max_len)?;
    let score = h.score();
    let mut tokens = h.tokens;
    if tokens.last() == Some(&Vocab::EOS) {
        tokens.pop();
    }
    Ok((tokens, score))
}

/// Helper for callers that already hold a logits tensor `[V]`.
pub fn argmax(row: &Tensor) -> Result<u32> {
    Ok(row.argmax(0)?.to_scalar::<u32>()?)
}
