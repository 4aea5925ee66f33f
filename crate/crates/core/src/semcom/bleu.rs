use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

/// Corpus BLEU with its components. `precisions[n - 1]` is the clipped
/// `n`-gram precision.
#[derive(Clone, Debug, PartialEq)]
pub struct BleuReport {
    pub bleu: f64,
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub candidate_len: usize,
    pub reference_len: usize,
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    for g in tokens.windows(n) {
        *m.entry(g).or_insert(0) += 1;
    }
    m
}

/// Unsmoothed corpus-level BLEU over `n = 1..=max_n` with one reference per
/// candidate. Any zero precision makes the score zero.
pub fn bleu<T: Eq + Hash>(candidates: &[Vec<T>], references: &[Vec<T>], max_n: usize) -> Result<BleuReport> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidate corpus"));
    }
    if candidates.len() != references.len() {
        return Err(Error::InvalidArgument(format!(
            "{} candidates against {} references",
            candidates.len(),
            references.len()
        )));
    }
    if max_n == 0 {
        return Err(Error::InvalidArgument("max_n must be at least 1".into()));
    }
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    for (c, r) in candidates.iter().zip(references) {
        for n in 1..=max_n {
            let rc = ngram_counts(r, n);
            for (g, count) in ngram_counts(c, n) {
                matched[n - 1] += count.min(rc.get(g).copied().unwrap_or(0));
                total[n - 1] += count;
            }
        }
    }
    let precisions: Vec<f64> =
        matched.iter().zip(&total).map(|(&m, &t)| if t == 0 { 0.0 } else { m as f64 / t as f64 }).collect();
    let c: usize = candidates.iter().map(Vec::len).sum();
    let r: usize = references.iter().map(Vec::len).sum();
    let brevity_penalty = match c {
        0 => 0.0,
        c if c < r => (1.0 - r as f64 / c as f64).exp(),
        _ => 1.0,
    };
    let bleu = if precisions.contains(&0.0) {
        0.0
    } else {
        brevity_penalty * (precisions.iter().map(|p| p.ln()).sum::<f64>() / max_n as f64).exp()
    };
    Ok(BleuReport { bleu, precisions, brevity_penalty, candidate_len: c, reference_len: r })
}
