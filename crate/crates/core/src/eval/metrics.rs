use std::collections::HashMap;

use crate::error::{Error, Result};

/// Levenshtein distance with unit costs.
pub fn edit_distance(a: &[u32], b: &[u32]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + (x != y) as usize;
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn check_pairs(hyps: &[Vec<u32>], refs: &[Vec<u32>]) -> Result<()> {
    if hyps.len() != refs.len() {
        return Err(Error::input(format!("{} hypotheses for {} references", hyps.len(), refs.len())));
    }
    if refs.iter().all(|r| r.is_empty()) {
        return Err(Error::input("references are empty"));
    }
    Ok(())
}

/// Corpus token error rate: total edits over total reference length.
pub fn token_error_rate(hyps: &[Vec<u32>], refs: &[Vec<u32>]) -> Result<f64> {
    check_pairs(hyps, refs)?;
    let edits: usize = hyps.iter().zip(refs).map(|(h, r)| edit_distance(h, r)).sum();
    let total: usize = refs.iter().map(Vec::len).sum();
    Ok(edits as f64 / total as f64)
}

fn ngrams(x: &[u32], n: usize) -> HashMap<&[u32], usize> {
    let mut m = HashMap::new();
    if x.len() >= n {
        for w in x.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus BLEU (0–100) over id sequences: clipped 1–4-gram precisions with
/// add-one smoothing for orders above one, uniform weights, brevity penalty.
pub fn bleu(hyps: &[Vec<u32>], refs: &[Vec<u32>]) -> Result<f64> {
    check_pairs(hyps, refs)?;
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    for (h, r) in hyps.iter().zip(refs) {
        for n in 1..=4 {
            let rc = ngrams(r, n);
            for (g, c) in ngrams(h, n) {
                matched[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
                total[n - 1] += c;
            }
        }
    }
    if matched[0] == 0 {
        return Ok(0.0);
    }
    let mut log_p = (matched[0] as f64 / total[0] as f64).ln();
    for n in 1..4 {
        log_p += ((matched[n] + 1) as f64 / (total[n] + 1) as f64).ln();
    }
    let hyp_len: usize = hyps.iter().map(Vec::len).sum();
    let ref_len: usize = refs.iter().map(Vec::len).sum();
    let bp = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * bp * (log_p / 4.0).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_and_empty() {
        let r = vec![vec![1, 2, 3, 4, 5]];
        assert_eq!(token_error_rate(&r, &r).unwrap(), 0.0);
        assert!((bleu(&r, &r).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(token_error_rate(&[vec![]], &r).unwrap(), 1.0);
        assert_eq!(bleu(&[vec![]], &r).unwrap(), 0.0);
    }

    #[test]
    fn one_substitution_in_five() {
        let r = vec![vec![1, 2, 3, 4, 5]];
        let h = vec![vec![1, 2, 9, 4, 5]];
        assert!((token_error_rate(&h, &r).unwrap() - 0.2).abs() < 1e-12);
        // p1 = 4/5, p2 = (2+1)/(4+1), p3 = (0+1)/(3+1), p4 = (0+1)/(2+1), BP = 1
        let hand = 100.0 * (0.8f64 * 0.6 * 0.25 * (1.0 / 3.0)).powf(0.25);
        let got = bleu(&h, &r).unwrap();
        assert!((got - hand).abs() < 1e-9, "{got} vs {hand}");
        assert!((got - 44.72).abs() < 0.01);
    }

    #[test]
    fn brevity_penalty_applies() {
        let r = vec![vec![1, 2, 3, 4, 5, 6]];
        let h = vec![vec![1, 2, 3]];
        let b = bleu(&h, &r).unwrap();
        let p = 1.0f64 * (3.0 / 3.0) * (2.0 / 2.0) * (1.0 / 1.0);
        let hand = 100.0 * (-1.0f64).exp() * p.powf(0.25);
        assert!((b - hand).abs() < 1e-9, "{b} vs {hand}");
    }

    #[test]
    fn mismatched_lengths_are_input_errors() {
        assert!(matches!(token_error_rate(&[], &[vec![1]]), Err(Error::Input(_))));
    }

    proptest! {
        #[test]
        fn edit_distance_is_a_metric(a in proptest::collection::vec(0u32..4, 0..8),
                                     b in proptest::collection::vec(0u32..4, 0..8),
                                     c in proptest::collection::vec(0u32..4, 0..8)) {
            prop_assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
            prop_assert_eq!(edit_distance(&a, &a), 0);
            prop_assert!(edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c));
            prop_assert!(edit_distance(&a, &b) <= a.len().max(b.len()));
        }
    }
}
