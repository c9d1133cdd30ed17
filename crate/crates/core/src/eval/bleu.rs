use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tokenize::Tokenizer;
use super::MetricScore;
use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum Smoothing {
    #[default]
    None,
    Floor {
        value: f64,
    },
    AddK {
        k: f64,
    },
    Exp,
}

impl Smoothing {
    pub fn id(&self) -> String {
        match self {
            Smoothing::None => "none".into(),
            Smoothing::Floor { value } => format!("floor-{value}"),
            Smoothing::AddK { k } => format!("add-k-{k}"),
            Smoothing::Exp => "exp".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BleuConfig {
    pub tokenizer: Tokenizer,
    pub smoothing: Smoothing,
    pub lowercase: bool,
}

/// Sufficient statistics for corpus BLEU.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BleuStats {
    pub correct: [u64; MAX_ORDER],
    pub total: [u64; MAX_ORDER],
    pub sys_len: u64,
    pub ref_len: u64,
}

impl std::ops::Add for BleuStats {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        for n in 0..MAX_ORDER {
            self.correct[n] += rhs.correct[n];
            self.total[n] += rhs.total[n];
        }
        self.sys_len += rhs.sys_len;
        self.ref_len += rhs.ref_len;
        self
    }
}

fn ngram_counts<'t, 'a>(tokens: &'t [&'a str], n: usize) -> HashMap<&'t [&'a str], u64> {
    let mut out = HashMap::new();
    for w in tokens.windows(n) {
        *out.entry(w).or_default() += 1;
    }
    out
}

pub fn segment_stats(hyp: &str, reference: &str, cfg: &BleuConfig) -> BleuStats {
    let prep = |s: &str| {
        let s = if cfg.lowercase { s.to_lowercase() } else { s.to_string() };
        cfg.tokenizer.tokenize(&s)
    };
    let (h, r) = (prep(hyp), prep(reference));
    let ht: Vec<&str> = h.split_whitespace().collect();
    let rt: Vec<&str> = r.split_whitespace().collect();
    let mut stats = BleuStats {
        sys_len: ht.len() as u64,
        ref_len: rt.len() as u64,
        ..Default::default()
    };
    for n in 1..=MAX_ORDER {
        let hc = ngram_counts(&ht, n);
        let rc = ngram_counts(&rt, n);
        stats.total[n - 1] = ht.len().saturating_sub(n - 1) as u64;
        stats.correct[n - 1] = hc.iter().map(|(g, c)| (*c).min(*rc.get(g).unwrap_or(&0))).sum();
    }
    stats
}

/// Score from aggregated statistics, following the reference implementation's smoothing rules.
pub fn score_from_stats(stats: &BleuStats, smoothing: Smoothing) -> (f64, f64, [f64; MAX_ORDER]) {
    let (sys, reference) = (stats.sys_len as f64, stats.ref_len as f64);
    let bp = if sys < reference {
        if sys > 0.0 {
            (1.0 - reference / sys).exp()
        } else {
            0.0
        }
    } else {
        1.0
    };
    let mut precisions = [0.0; MAX_ORDER];
    if stats.correct.iter().all(|c| *c == 0) {
        return (0.0, bp, precisions);
    }
    let mut mteval = 1.0;
    for n in 0..MAX_ORDER {
        let (mut correct, mut total) = (stats.correct[n] as f64, stats.total[n] as f64);
        if let Smoothing::AddK { k } = smoothing {
            if n > 0 {
                correct += k;
                total += k;
            }
        }
        if total == 0.0 {
            break;
        }
        precisions[n] = if correct == 0.0 {
            match smoothing {
                Smoothing::Exp => {
                    mteval *= 2.0;
                    100.0 / (mteval * total)
                }
                Smoothing::Floor { value } => 100.0 * value / total,
                _ => 0.0,
            }
        } else {
            100.0 * correct / total
        };
    }
    let log = |p: f64| if p == 0.0 { -9_999_999_999.0 } else { (p / 100.0).ln() };
    let mean = precisions.iter().map(|p| log(*p)).sum::<f64>() / MAX_ORDER as f64;
    (100.0 * bp * mean.exp(), bp, precisions)
}

pub fn corpus_bleu(hyps: &[String], refs: &[String], cfg: &BleuConfig) -> Result<MetricScore> {
    if hyps.len() != refs.len() {
        return Err(Error::SizeMismatch {
            expected: refs.len(),
            actual: hyps.len(),
        });
    }
    if hyps.is_empty() {
        return Err(Error::invalid("BLEU needs at least one segment"));
    }
    let stats = hyps
        .par_iter()
        .zip(refs)
        .map(|(h, r)| segment_stats(h, r, cfg))
        .collect::<Vec<_>>()
        .into_iter()
        .fold(BleuStats::default(), |a, b| a + b);
    let (value, bp, _) = score_from_stats(&stats, cfg.smoothing);
    Ok(MetricScore {
        name: "bleu".into(),
        value,
        params: [
            ("max_order".to_string(), MAX_ORDER.to_string()),
            ("tokenizer".to_string(), cfg.tokenizer.id().to_string()),
            ("smoothing".to_string(), cfg.smoothing.id()),
            ("lowercase".to_string(), cfg.lowercase.to_string()),
            ("bp".to_string(), format!("{bp:.6}")),
        ]
        .into_iter()
        .collect(),
    })
}
