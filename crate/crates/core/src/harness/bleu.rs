//! Corpus BLEU-4.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Clipped n-gram counts and lengths accumulated over a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct BleuStats {
    /// Clipped matches and hypothesis n-gram totals for n = 1..=4.
    pub matches: [usize; 4],
    pub totals: [usize; 4],
    /// Reference n-gram totals for n = 1..=4.
    pub ref_totals: [usize; 4],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn precision(&self, n: usize) -> f64 {
        let i = n - 1;
        if self.totals[i] == 0 {
            0.0
        } else {
            self.matches[i] as f64 / self.totals[i] as f64
        }
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        }
    }

    /// BLEU in [0, 100]. Without smoothing any zero precision gives 0; with
    /// it, zero-match orders count as half a match. Orders with no n-grams
    /// in either hypotheses or references (all sentences too short) are left
    /// out of the geometric mean.
    pub fn score(&self, smooth: bool) -> f64 {
        let mut log_sum = 0.0;
        let mut orders = 0;
        for i in 0..4 {
            if self.totals[i] == 0 && self.ref_totals[i] == 0 {
                continue;
            }
            orders += 1;
            let (m, t) = (self.matches[i] as f64, self.totals[i] as f64);
            let p = if t == 0.0 {
                0.0
            } else if m == 0.0 && smooth {
                0.5 / t
            } else {
                m / t
            };
            if p == 0.0 {
                return 0.0;
            }
            log_sum += p.ln();
        }
        if orders == 0 {
            return 0.0;
        }
        100.0 * self.brevity_penalty() * (log_sum / orders as f64).exp()
    }
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

pub fn bleu_stats(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<BleuStats> {
    if hyps.len() != refs.len() {
        return Err(Error::Contract(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if hyps.is_empty() {
        return Err(Error::Contract("BLEU needs at least one sentence pair".into()));
    }
    let mut s = BleuStats {
        matches: [0; 4],
        totals: [0; 4],
        ref_totals: [0; 4],
        hyp_len: 0,
        ref_len: 0,
    };
    for (h, r) in hyps.iter().zip(refs) {
        s.hyp_len += h.len();
        s.ref_len += r.len();
        for n in 1..=4 {
            let hc = ngrams(h, n);
            let rc = ngrams(r, n);
            for (g, c) in &hc {
                s.matches[n - 1] += (*c).min(rc.get(g).copied().unwrap_or(0));
                s.totals[n - 1] += c;
            }
            s.ref_totals[n - 1] += rc.values().sum::<usize>();
        }
    }
    Ok(s)
}

/// Corpus BLEU-4 with brevity penalty, in [0, 100].
pub fn corpus_bleu(hyps: &[Vec<String>], refs: &[Vec<String>], smooth: bool) -> Result<f64> {
    Ok(bleu_stats(hyps, refs)?.score(smooth))
}
