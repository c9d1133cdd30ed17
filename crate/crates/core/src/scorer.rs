//! Corpus quality scoring against a reference MT model.
//!
//! Each pair is scored by the backend as an average log-probability per
//! target token; the corpus score is the exponential of the mean of those.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::backends::{map_bounded, Direction, MtBackend, ScoreBackend, ScoreRequest, TranslateRequest};
use crate::error::{Error, Result};
use crate::record::BilingualPair;
use crate::round::round2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub beam_size: u32,
    pub max_batch_tokens: u32,
    pub parallelism: usize,
    /// Texts per translation request when building the baseline.
    pub translate_batch: usize,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            beam_size: 4,
            max_batch_tokens: 2024,
            parallelism: 4,
            translate_batch: 64,
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 || self.max_batch_tokens == 0 || self.translate_batch == 0 {
            return Err(Error::invalid("beam_size, max_batch_tokens and translate_batch must be positive"));
        }
        Ok(())
    }
}

/// Orient a corpus generated in `corpus` order for scoring in direction `dir`.
pub fn oriented_pairs(pairs: &[BilingualPair], corpus: &Direction, dir: &Direction) -> Result<Vec<(String, String)>> {
    if dir == corpus {
        Ok(pairs.iter().map(|p| (p.src.clone(), p.tgt.clone())).collect())
    } else if *dir == corpus.reversed() {
        Ok(pairs.iter().map(|p| (p.tgt.clone(), p.src.clone())).collect())
    } else {
        Err(Error::invalid(format!("direction {dir} does not match corpus direction {corpus}")))
    }
}

fn token_estimate(s: &str) -> usize {
    s.split_whitespace().count().max(1)
}

/// Greedy batches whose estimated token count stays within `max_tokens`;
/// a single oversized pair gets a batch of its own.
pub fn token_batches(pairs: &[(String, String)], max_tokens: usize) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut used = 0;
    for (i, (s, t)) in pairs.iter().enumerate() {
        let n = token_estimate(s) + token_estimate(t);
        if i > start && used + n > max_tokens {
            out.push(start..i);
            start = i;
            used = 0;
        }
        used += n;
    }
    if start < pairs.len() {
        out.push(start..pairs.len());
    }
    out
}

/// Per-pair log-probabilities in input order.
pub fn score_all(pairs: &[(String, String)], direction: &Direction, scorer: &dyn ScoreBackend, cfg: &ScoreConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let batches = token_batches(pairs, cfg.max_batch_tokens as usize);
    let results = map_bounded(&batches, cfg.parallelism, |range| {
        let req = ScoreRequest {
            direction: direction.clone(),
            pairs: pairs[range.clone()].to_vec(),
            max_batch_tokens: cfg.max_batch_tokens,
        };
        scorer.score_pairs(&req)
    });
    let mut scores = Vec::with_capacity(pairs.len());
    for (range, r) in batches.iter().zip(results) {
        let batch = r?;
        if batch.len() != range.len() {
            return Err(Error::SizeMismatch {
                expected: range.len(),
                actual: batch.len(),
            });
        }
        if let Some(bad) = batch.iter().find(|s| !(s.is_finite() && **s <= 0.0)) {
            return Err(Error::invalid(format!("scorer returned {bad}, which is not a log-probability")));
        }
        scores.extend(batch);
    }
    Ok(scores)
}

/// exp of the mean log-probability, accumulated in input order.
pub fn exp_mean(log_probs: &[f64]) -> Result<f64> {
    if log_probs.is_empty() {
        return Err(Error::invalid("cannot score an empty corpus"));
    }
    Ok((log_probs.iter().sum::<f64>() / log_probs.len() as f64).exp())
}

pub fn mean_exp_score(pairs: &[(String, String)], direction: &Direction, scorer: &dyn ScoreBackend, cfg: &ScoreConfig) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("cannot score an empty corpus"));
    }
    exp_mean(&score_all(pairs, direction, scorer, cfg)?)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineStats {
    pub sources: usize,
    pub empty_translations: usize,
}

/// Translate `sources` with the reference model and score its own output.
pub fn baseline_self_score(
    sources: &[String],
    direction: &Direction,
    mt: &dyn MtBackend,
    scorer: &dyn ScoreBackend,
    cfg: &ScoreConfig,
) -> Result<(f64, BaselineStats)> {
    cfg.validate()?;
    if sources.is_empty() {
        return Err(Error::invalid("cannot build a baseline from no sources"));
    }
    let chunks: Vec<&[String]> = sources.chunks(cfg.translate_batch).collect();
    let translated = map_bounded(&chunks, cfg.parallelism, |chunk| {
        let req = TranslateRequest {
            source_lang: direction.source.clone(),
            target_lang: direction.target.clone(),
            texts: chunk.to_vec(),
            beam_size: cfg.beam_size,
        };
        mt.translate(&req)
    });
    let mut pairs = Vec::with_capacity(sources.len());
    let mut stats = BaselineStats {
        sources: sources.len(),
        ..Default::default()
    };
    for (chunk, r) in chunks.iter().zip(translated) {
        let out = r?;
        if out.len() != chunk.len() {
            return Err(Error::SizeMismatch {
                expected: chunk.len(),
                actual: out.len(),
            });
        }
        for (s, t) in chunk.iter().zip(out) {
            if t.trim().is_empty() {
                stats.empty_translations += 1;
            } else {
                pairs.push((s.clone(), t));
            }
        }
    }
    Ok((mean_exp_score(&pairs, direction, scorer, cfg)?, stats))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionScore {
    pub direction: Direction,
    pub candidate: f64,
    pub baseline: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityRow {
    pub direction: Direction,
    pub candidate: f64,
    pub baseline: f64,
    pub diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityAverage {
    /// Language pair label, e.g. `DE-EN`.
    pub pair: String,
    pub candidate: f64,
    pub baseline: f64,
    pub diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityGroup {
    pub rows: [QualityRow; 2],
    pub average: QualityAverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub groups: Vec<QualityGroup>,
}

/// Group directions into language pairs (first-seen order) with an average row each.
pub fn build_quality_report(scores: &[DirectionScore]) -> Result<QualityReport> {
    let mut groups = Vec::new();
    let mut used = vec![false; scores.len()];
    for i in 0..scores.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        let first = &scores[i];
        let back = first.direction.reversed();
        let j = (i + 1..scores.len())
            .find(|&j| !used[j] && scores[j].direction == back)
            .ok_or_else(|| Error::MissingDirection(back.to_string()))?;
        used[j] = true;
        let row = |s: &DirectionScore| QualityRow {
            direction: s.direction.clone(),
            candidate: s.candidate,
            baseline: s.baseline,
            diff: s.baseline - s.candidate,
        };
        let (a, b) = (row(first), row(&scores[j]));
        let candidate = round2((a.candidate + b.candidate) / 2.0);
        let baseline = round2((a.baseline + b.baseline) / 2.0);
        groups.push(QualityGroup {
            average: QualityAverage {
                pair: first.direction.to_string(),
                candidate,
                baseline,
                diff: round2(baseline - candidate),
            },
            rows: [a, b],
        });
    }
    Ok(QualityReport { groups })
}

impl QualityReport {
    pub fn to_text(&self) -> String {
        let mut out = format!("{:<8}{:>10}{:>10}{:>10}\n", "Lang", "Candidate", "Baseline", "Diff.");
        for g in &self.groups {
            for r in &g.rows {
                let _ = writeln!(
                    out,
                    "{:<8}{:>10.2}{:>10.2}{:>10.2}",
                    r.direction.to_string(),
                    round2(r.candidate),
                    round2(r.baseline),
                    round2(r.diff)
                );
            }
            let a = &g.average;
            let _ = writeln!(out, "{:<8}{:>10.2}{:>10.2}{:>10.2}", "Avg.", a.candidate, a.baseline, a.diff);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::{ConstantScorer, CopyMt, CopyScorer};
    use crate::lang::LangCode;

    fn dir(a: &str, b: &str) -> Direction {
        Direction::new(LangCode::new(a).unwrap(), LangCode::new(b).unwrap())
    }

    fn pairs(n: usize) -> Vec<(String, String)> {
        (0..n).map(|i| (format!("quelle {i}"), format!("target {i}"))).collect()
    }

    #[test]
    fn constant_scores() {
        let cfg = ScoreConfig::default();
        let p = pairs(5);
        assert_eq!(mean_exp_score(&p, &dir("de", "en"), &ConstantScorer::new(0.0), &cfg).unwrap(), 1.0);
        let v = mean_exp_score(&p, &dir("de", "en"), &ConstantScorer::new(0.59f64.ln()), &cfg).unwrap();
        assert!((v - 0.59).abs() < 1e-9);
    }

    #[test]
    fn geometric_mean() {
        assert!((exp_mean(&[0.4f64.ln(), 0.9f64.ln()]).unwrap() - 0.6).abs() < 1e-12);
        assert!(exp_mean(&[]).is_err());
    }

    #[test]
    fn batching_respects_budget() {
        let p = pairs(10);
        let b = token_batches(&p, 8);
        assert_eq!(b.len(), 5);
        assert_eq!(b.iter().map(|r| r.len()).sum::<usize>(), 10);
        let big = vec![("a ".repeat(50), "b".to_string())];
        assert_eq!(token_batches(&big, 8), vec![0..1]);
        assert!(token_batches(&[], 8).is_empty());
    }

    #[test]
    fn copy_baseline_is_one() {
        let sources: Vec<String> = (0..10).map(|i| format!("satz {i}")).collect();
        let (v, stats) = baseline_self_score(&sources, &dir("de", "en"), &CopyMt, &CopyScorer, &ScoreConfig::default()).unwrap();
        assert_eq!(v, 1.0);
        assert_eq!(stats.empty_translations, 0);
    }

    #[test]
    fn orientation() {
        let corpus = vec![BilingualPair::generic("de text", "en text")];
        let back = oriented_pairs(&corpus, &dir("de", "en"), &dir("en", "de")).unwrap();
        assert_eq!(back[0].0, "en text");
        assert!(oriented_pairs(&corpus, &dir("de", "en"), &dir("cs", "en")).is_err());
    }

    fn ds(a: &str, b: &str, c: f64, base: f64) -> DirectionScore {
        DirectionScore {
            direction: dir(a, b),
            candidate: c,
            baseline: base,
        }
    }

    #[test]
    fn report_arithmetic() {
        let r = build_quality_report(&[
            ds("de", "en", 0.59, 0.68),
            ds("cs", "en", 0.58, 0.70),
            ds("en", "de", 0.56, 0.64),
            ds("en", "cs", 0.49, 0.58),
        ])
        .unwrap();
        assert_eq!(r.groups[0].average.candidate, 0.58);
        assert_eq!(r.groups[0].average.baseline, 0.66);
        assert_eq!(r.groups[0].average.diff, 0.08);
        assert_eq!(r.groups[1].average.candidate, 0.54);
        assert_eq!(r.groups[1].average.diff, 0.10);
        assert!((r.groups[0].rows[0].diff - 0.09).abs() < 1e-9);
        let text = r.to_text();
        assert!(text.contains("DE-EN"));
        assert!(text.contains("Avg.          0.58      0.66      0.08"));
    }

    #[test]
    fn missing_direction_is_named() {
        let err = build_quality_report(&[ds("zh", "en", 0.39, 0.56)]).unwrap_err();
        assert!(err.to_string().contains("EN-ZH"), "{err}");
    }
}
