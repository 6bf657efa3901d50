use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub token_accuracy: f64,
    pub corpus_bleu: f64,
}

/// Position-wise matches over the summed longer length of each pair.
pub fn token_accuracy<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>]) -> f64 {
    let mut matches = 0usize;
    let mut total = 0usize;
    for (h, r) in hyps.iter().zip(refs) {
        matches += h
            .iter()
            .zip(r)
            .filter(|(a, b)| a.as_ref() == b.as_ref())
            .count();
        total += h.len().max(r.len());
    }
    if total == 0 {
        1.0
    } else {
        matches as f64 / total as f64
    }
}

fn ngrams<S: AsRef<str>>(toks: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *out.entry(w.iter().map(|s| s.as_ref()).collect())
                .or_default() += 1;
        }
    }
    out
}

/// Corpus BLEU-4 with uniform weights and the brevity penalty, on a 0-100
/// scale. Any zero n-gram precision gives 0.
pub fn corpus_bleu<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>]) -> f64 {
    let mut matched = [0usize; 4];
    let mut possible = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4 {
            let hc = ngrams(h, n);
            let rc = ngrams(r, n);
            possible[n - 1] += hc.values().sum::<usize>();
            matched[n - 1] += hc
                .iter()
                .map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }
    if hyp_len == 0 || matched.contains(&0) {
        return 0.0;
    }
    let log_p: f64 = (0..4)
        .map(|i| (matched[i] as f64 / possible[i] as f64).ln())
        .sum::<f64>()
        / 4.0;
    let bp = if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    100.0 * bp * log_p.exp()
}
