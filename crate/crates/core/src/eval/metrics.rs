use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use crate::error::EvalError;

/// Counts of every contiguous n-gram of `tokens`.
pub fn ngram_counts<W: Eq + Hash>(tokens: &[W], n: usize) -> HashMap<&[W], usize> {
    let mut m = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for g in tokens.windows(n) {
            *m.entry(g).or_insert(0) += 1;
        }
    }
    m
}

fn check_pairs<W>(candidates: &[Vec<W>], references: &[Vec<W>], n: usize) -> Result<(), EvalError> {
    if n == 0 {
        return Err(EvalError::InvalidOrder);
    }
    if candidates.len() != references.len() {
        return Err(EvalError::LengthMismatch { candidates: candidates.len(), references: references.len() });
    }
    if candidates.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// Corpus BLEU-n on a 0–100 scale: uniform geometric mean of clipped
/// precisions `p_1..p_n` times the brevity penalty `min(1, e^{1 - r/c})`. No
/// smoothing, so any zero precision gives 0. Orders for which the candidates
/// contain no n-gram at all are left out of the mean.
pub fn bleu_n<W: Eq + Hash>(candidates: &[Vec<W>], references: &[Vec<W>], n: usize) -> Result<f64, EvalError> {
    check_pairs(candidates, references, n)?;
    let mut matched = vec![0usize; n];
    let mut total = vec![0usize; n];
    let (mut c, mut r) = (0usize, 0usize);
    for (cand, refr) in candidates.iter().zip(references) {
        c += cand.len();
        r += refr.len();
        for k in 1..=n {
            let rc = ngram_counts(refr, k);
            for (g, cnt) in ngram_counts(cand, k) {
                matched[k - 1] += cnt.min(rc.get(g).copied().unwrap_or(0));
                total[k - 1] += cnt;
            }
        }
    }
    let orders: Vec<(usize, usize)> = matched.into_iter().zip(total).filter(|&(_, t)| t > 0).collect();
    if c == 0 || orders.iter().any(|&(m, _)| m == 0) {
        return Ok(0.0);
    }
    let log_mean =
        orders.iter().map(|&(m, t)| (m as f64 / t as f64).ln()).sum::<f64>() / orders.len() as f64;
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Ok(100.0 * bp * log_mean.exp())
}

/// Distinct n-grams over all candidates divided by the total number of candidate tokens.
pub fn dist_n<W: Eq + Hash>(candidates: &[Vec<W>], n: usize) -> Result<f64, EvalError> {
    if n == 0 {
        return Err(EvalError::InvalidOrder);
    }
    if candidates.is_empty() {
        return Err(EvalError::Empty);
    }
    let tokens: usize = candidates.iter().map(Vec::len).sum();
    if tokens == 0 {
        return Ok(0.0);
    }
    let distinct: HashSet<&[W]> = candidates.iter().flat_map(|c| c.windows(n)).collect();
    Ok(distinct.len() as f64 / tokens as f64)
}

/// ROUGE-n F1 of one pair. Two sequences too short to hold any n-gram score 1
/// when identical and 0 otherwise.
pub fn rouge_pair<W: Eq + Hash>(candidate: &[W], reference: &[W], n: usize) -> f64 {
    let cc = ngram_counts(candidate, n);
    let rc = ngram_counts(reference, n);
    if cc.is_empty() && rc.is_empty() {
        return if candidate == reference { 1.0 } else { 0.0 };
    }
    let overlap: usize = cc.iter().map(|(g, &k)| k.min(rc.get(g).copied().unwrap_or(0))).sum();
    let (nc, nr) = (cc.values().sum::<usize>(), rc.values().sum::<usize>());
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / nc as f64;
    let r = overlap as f64 / nr as f64;
    2.0 * p * r / (p + r)
}

/// Mean ROUGE-n F1 over pairs.
pub fn rouge_n_f<W: Eq + Hash>(candidates: &[Vec<W>], references: &[Vec<W>], n: usize) -> Result<f64, EvalError> {
    check_pairs(candidates, references, n)?;
    let sum: f64 = candidates.iter().zip(references).map(|(c, r)| rouge_pair(c, r, n)).sum();
    Ok(sum / candidates.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn bleu_examples() {
        let c = vec![toks("the the the")];
        let r = vec![toks("the cat")];
        assert!((bleu_n(&c, &r, 1).unwrap() - 100.0 / 3.0).abs() < 1e-9);
        let same = vec![toks("a b c d"), toks("e f g h i")];
        assert!((bleu_n(&same, &same, 4).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(bleu_n(&[toks("x y")], &[toks("a b")], 1).unwrap(), 0.0);
        let short = vec![toks("a b")];
        assert!((bleu_n(&short, &short, 4).unwrap() - 100.0).abs() < 1e-9);
        assert!(matches!(bleu_n(&c, &[], 1), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(bleu_n(&c, &r, 0), Err(EvalError::InvalidOrder)));
    }

    #[test]
    fn brevity_penalty_applies_to_short_output() {
        let b = bleu_n(&[toks("a b")], &[toks("a b c d")], 1).unwrap();
        assert!((b - 100.0 * (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn dist_examples() {
        let abab = vec![toks("a b a b")];
        assert_eq!(dist_n(&abab, 1).unwrap(), 0.5);
        assert_eq!(dist_n(&abab, 2).unwrap(), 0.5);
        assert_eq!(dist_n(&[toks("a b"), toks("a b")], 1).unwrap(), 0.5);
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge_n_f(&[toks("a b c")], &[toks("a b c")], 1).unwrap(), 1.0);
        assert_eq!(rouge_n_f(&[toks("a b")], &[toks("c d")], 2).unwrap(), 0.0);
        assert_eq!(rouge_n_f(&[toks("a b")], &[toks("a b")], 4).unwrap(), 1.0);
        assert_eq!(rouge_n_f(&[toks("a b")], &[toks("a c")], 4).unwrap(), 0.0);
        let f = rouge_n_f(&[toks("a b")], &[toks("a b c d")], 1).unwrap();
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
    }
}
