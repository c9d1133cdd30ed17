use std::collections::HashMap;
use std::hash::Hash;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::MetricScore;
use crate::error::{Error, Result};

const EPS: f64 = 1e-16;
const PUNCTS: &str = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChrfAveraging {
    /// Average precision and recall over the orders present, then one F-score.
    #[default]
    PrecisionRecall,
    /// Average the per-order F-scores, with epsilon for undefined orders.
    FScores,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChrfConfig {
    pub char_order: usize,
    pub word_order: usize,
    pub beta: f64,
    pub averaging: ChrfAveraging,
    pub lowercase: bool,
}

impl Default for ChrfConfig {
    fn default() -> Self {
        ChrfConfig {
            char_order: 6,
            word_order: 2,
            beta: 2.0,
            averaging: ChrfAveraging::PrecisionRecall,
            lowercase: false,
        }
    }
}

impl ChrfConfig {
    fn orders(&self) -> usize {
        self.char_order + self.word_order
    }
}

/// Per-order `[hyp, ref, match]` counts, character orders first.
pub type ChrfStats = Vec<[u64; 3]>;

/// Split a leading or trailing ASCII punctuation mark off each word.
pub fn split_punctuation(sent: &str) -> Vec<String> {
    let mut out = Vec::new();
    for w in sent.split_whitespace() {
        let chars: Vec<char> = w.chars().collect();
        if chars.len() == 1 {
            out.push(w.to_string());
        } else if PUNCTS.contains(chars[chars.len() - 1]) {
            out.push(chars[..chars.len() - 1].iter().collect());
            out.push(chars[chars.len() - 1].to_string());
        } else if PUNCTS.contains(chars[0]) {
            out.push(chars[0].to_string());
            out.push(chars[1..].iter().collect());
        } else {
            out.push(w.to_string());
        }
    }
    out
}

fn counts<T: Hash + Eq + Clone>(items: &[T], n: usize) -> HashMap<&[T], u64> {
    let mut out = HashMap::new();
    for w in items.windows(n) {
        *out.entry(w).or_default() += 1;
    }
    out
}

fn match_stats<T: Hash + Eq + Clone>(hyp: &[T], reference: &[T], n: usize) -> [u64; 3] {
    let h = counts(hyp, n);
    let r = counts(reference, n);
    let hyp_count: u64 = h.values().sum();
    let ref_count: u64 = r.values().sum();
    let matched = h.iter().map(|(g, c)| (*c).min(*r.get(g).unwrap_or(&0))).sum();
    [if r.is_empty() { 0 } else { hyp_count }, ref_count, matched]
}

pub fn segment_stats(hyp: &str, reference: &str, cfg: &ChrfConfig) -> ChrfStats {
    let prep = |s: &str| if cfg.lowercase { s.to_lowercase() } else { s.to_string() };
    let (hyp, reference) = (prep(hyp), prep(reference));
    let hc: Vec<char> = hyp.chars().filter(|c| !c.is_whitespace()).collect();
    let rc: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    let mut stats: ChrfStats = (1..=cfg.char_order).map(|n| match_stats(&hc, &rc, n)).collect();
    if cfg.word_order > 0 {
        let hw = split_punctuation(&hyp);
        let rw = split_punctuation(&reference);
        stats.extend((1..=cfg.word_order).map(|n| match_stats(&hw, &rw, n)));
    }
    stats
}

pub fn f_score(stats: &[[u64; 3]], cfg: &ChrfConfig) -> f64 {
    let factor = cfg.beta * cfg.beta;
    let (mut sum_f, mut avg_p, mut avg_r, mut effective) = (0.0, 0.0, 0.0, 0usize);
    for &[h, r, m] in stats {
        let p = if h > 0 { m as f64 / h as f64 } else { EPS };
        let rec = if r > 0 { m as f64 / r as f64 } else { EPS };
        let denom = factor * p + rec;
        sum_f += if denom > 0.0 { (1.0 + factor) * p * rec / denom } else { EPS };
        if h > 0 && r > 0 {
            avg_p += p;
            avg_r += rec;
            effective += 1;
        }
    }
    if cfg.averaging == ChrfAveraging::FScores {
        return 100.0 * sum_f / stats.len() as f64;
    }
    if effective > 0 {
        avg_p /= effective as f64;
        avg_r /= effective as f64;
    }
    if avg_p + avg_r > 0.0 {
        100.0 * (1.0 + factor) * avg_p * avg_r / (factor * avg_p + avg_r)
    } else {
        0.0
    }
}

pub fn chrf_pp(hyps: &[String], refs: &[String], cfg: &ChrfConfig) -> Result<MetricScore> {
    if hyps.len() != refs.len() {
        return Err(Error::SizeMismatch {
            expected: refs.len(),
            actual: hyps.len(),
        });
    }
    if hyps.is_empty() {
        return Err(Error::invalid("chrF++ needs at least one segment"));
    }
    let per_segment: Vec<ChrfStats> = hyps.par_iter().zip(refs).map(|(h, r)| segment_stats(h, r, cfg)).collect();
    let mut total = vec![[0u64; 3]; cfg.orders()];
    for seg in per_segment {
        for (t, s) in total.iter_mut().zip(seg) {
            for k in 0..3 {
                t[k] += s[k];
            }
        }
    }
    let name = if cfg.word_order > 0 { "chrf++" } else { "chrf" };
    Ok(MetricScore {
        name: name.into(),
        value: f_score(&total, cfg),
        params: [
            ("char_order".to_string(), cfg.char_order.to_string()),
            ("word_order".to_string(), cfg.word_order.to_string()),
            ("beta".to_string(), cfg.beta.to_string()),
            (
                "averaging".to_string(),
                match cfg.averaging {
                    ChrfAveraging::PrecisionRecall => "precision-recall",
                    ChrfAveraging::FScores => "f-scores",
                }
                .to_string(),
            ),
        ]
        .into_iter()
        .collect(),
    })
}
