//! Sentence-level metrics and the coverage / metric reports.

pub mod bleu;
pub mod chrf;
pub mod tokenize;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use bleu::{corpus_bleu, BleuConfig, Smoothing};
pub use chrf::{chrf_pp, ChrfAveraging, ChrfConfig};
pub use tokenize::Tokenizer;

use crate::backends::Direction;
use crate::error::{Error, Result};
use crate::record::{SegmentRecord, TermSetLabel};
use crate::round::round2;
use crate::termcheck::{avg_pct, cross_pair_mean, missing_entries, CoverageCounts, TermMatcher};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub name: String,
    pub value: f64,
    pub params: BTreeMap<String, String>,
}

/// Records whose two term sets are both non-empty.
pub fn select_two_set_subset(records: &[SegmentRecord]) -> Vec<SegmentRecord> {
    records
        .iter()
        .filter(|r| TermSetLabel::ALL.iter().all(|l| r.term_set(*l).is_some_and(|s| !s.is_empty())))
        .cloned()
        .collect()
}

pub const BASELINE: &str = "baseline";
pub const FINE_TUNED: &str = "fine-tuned";
pub const TERM_APE: &str = "term-ape";
pub const APE_1: &str = "ape[1]";
pub const APE_2: &str = "ape[2]";
pub const APE_AVG: &str = "ape-avg";

/// Which segments the metric report covers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricSubset {
    /// Two-set subset when some segment lacks a term set, otherwise all segments.
    #[default]
    Auto,
    All,
    TwoSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub system: String,
    pub set1: CoverageCounts,
    pub set2: CoverageCounts,
    pub avg_pct: Option<f64>,
    /// One of the two sets was empty and left out of the average.
    pub flagged: bool,
    /// Segments that had no output for this system.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub lang: String,
    pub segments: usize,
    pub rows: Vec<CoverageRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub system: String,
    /// Metric name to value.
    pub scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub lang: String,
    pub segment_count: usize,
    pub subset: MetricSubset,
    pub rows: Vec<MetricRow>,
    pub params: BTreeMap<String, BTreeMap<String, String>>,
}

pub struct EvalInputs<'a> {
    pub direction: Direction,
    pub records: &'a [SegmentRecord],
    /// Baseline outputs aligned with `records`.
    pub baseline: Option<&'a [String]>,
    /// References aligned with `records`; `None` gives a coverage-only run.
    pub refs: Option<&'a [String]>,
    pub matcher: TermMatcher,
    pub subset: MetricSubset,
    pub bleu: BleuConfig,
    pub chrf: ChrfConfig,
    /// Scores from external scorers, keyed by system then metric name.
    pub external: BTreeMap<String, BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reports {
    pub coverage: CoverageReport,
    pub metrics: Option<EvalReport>,
    pub warnings: Vec<String>,
}

/// Mean of the two APE rows for one metric.
pub fn ape_avg(ape1: f64, ape2: f64) -> f64 {
    (ape1 + ape2) / 2.0
}

type Outputs<'a> = Vec<Option<&'a str>>;

fn system_outputs<'a>(inp: &EvalInputs<'a>, warnings: &mut Vec<String>) -> Result<Vec<(&'static str, TermSetLabel, Outputs<'a>)>> {
    let n = inp.records.len();
    let mut systems: Vec<(&'static str, TermSetLabel, Outputs<'a>)> = Vec::new();
    match inp.baseline {
        Some(b) if b.len() != n => {
            return Err(Error::SizeMismatch {
                expected: n,
                actual: b.len(),
            })
        }
        Some(b) => systems.push((BASELINE, TermSetLabel::Set1, b.iter().map(|s| Some(s.as_str())).collect())),
        None => warnings.push("no baseline outputs; baseline rows omitted".into()),
    }
    systems.push((FINE_TUNED, TermSetLabel::Set1, inp.records.iter().map(|r| r.mt.as_deref()).collect()));
    for (name, label) in [(APE_1, TermSetLabel::Set1), (APE_2, TermSetLabel::Set2)] {
        systems.push((name, label, inp.records.iter().map(|r| r.ape.get(&label).map(String::as_str)).collect()));
    }
    Ok(systems)
}

fn coverage_of(records: &[SegmentRecord], outputs: &Outputs<'_>, label: TermSetLabel, matcher: &TermMatcher) -> (CoverageCounts, usize) {
    let mut counts = CoverageCounts::default();
    let mut skipped = 0;
    for (r, out) in records.iter().zip(outputs) {
        let entries = r.term_set(label).map(|s| s.entries.as_slice()).unwrap_or(&[]);
        match out {
            Some(text) => {
                let missing = missing_entries(matcher, text, entries).len() as u64;
                counts += CoverageCounts::new(entries.len() as u64, entries.len() as u64 - missing);
            }
            None => skipped += 1,
        }
    }
    (counts, skipped)
}

pub fn build_reports(inp: &EvalInputs<'_>) -> Result<Reports> {
    let mut warnings = Vec::new();
    let systems = system_outputs(inp, &mut warnings)?;
    let lang = inp.direction.to_string();

    let mut rows = Vec::new();
    let present = |o: &Outputs<'_>| o.iter().any(Option::is_some);
    for (name, _, outputs) in systems.iter().filter(|s| s.0 == BASELINE || s.0 == FINE_TUNED) {
        if !present(outputs) {
            warnings.push(format!("no {name} outputs; coverage row omitted"));
            continue;
        }
        let (set1, skipped) = coverage_of(inp.records, outputs, TermSetLabel::Set1, &inp.matcher);
        let (set2, _) = coverage_of(inp.records, outputs, TermSetLabel::Set2, &inp.matcher);
        rows.push(coverage_row(name, set1, set2, skipped));
    }
    let ape1 = &systems.iter().find(|s| s.0 == APE_1).expect("ape[1] system").2;
    let ape2 = &systems.iter().find(|s| s.0 == APE_2).expect("ape[2] system").2;
    if present(ape1) || present(ape2) {
        let (set1, s1) = coverage_of(inp.records, ape1, TermSetLabel::Set1, &inp.matcher);
        let (set2, s2) = coverage_of(inp.records, ape2, TermSetLabel::Set2, &inp.matcher);
        rows.push(coverage_row(TERM_APE, set1, set2, s1.max(s2)));
    } else {
        warnings.push("no post-edited outputs; term-ape coverage row omitted".into());
    }
    for r in &rows {
        if r.skipped > 0 {
            warnings.push(format!("{}: {} segments without output were not counted", r.system, r.skipped));
        }
    }
    let coverage = CoverageReport {
        lang: lang.clone(),
        segments: inp.records.len(),
        rows,
    };

    let metrics = match inp.refs {
        None => None,
        Some(refs) => Some(metric_report(inp, refs, &systems, &mut warnings)?),
    };
    Ok(Reports {
        coverage,
        metrics,
        warnings,
    })
}

fn coverage_row(system: &str, set1: CoverageCounts, set2: CoverageCounts, skipped: usize) -> CoverageRow {
    let avg = avg_pct(set1, set2);
    CoverageRow {
        system: system.to_string(),
        set1,
        set2,
        avg_pct: avg.value,
        flagged: avg.flagged,
        skipped,
    }
}

fn metric_report(
    inp: &EvalInputs<'_>,
    refs: &[String],
    systems: &[(&'static str, TermSetLabel, Outputs<'_>)],
    warnings: &mut Vec<String>,
) -> Result<EvalReport> {
    if refs.len() != inp.records.len() {
        return Err(Error::SizeMismatch {
            expected: inp.records.len(),
            actual: refs.len(),
        });
    }
    let two_set: Vec<usize> = {
        let keep = select_two_set_subset(inp.records);
        let ids: std::collections::HashSet<&str> = keep.iter().map(|r| r.id.as_str()).collect();
        (0..inp.records.len()).filter(|i| ids.contains(inp.records[*i].id.as_str())).collect()
    };
    let subset = match inp.subset {
        MetricSubset::Auto if two_set.len() < inp.records.len() => MetricSubset::TwoSet,
        MetricSubset::Auto => MetricSubset::All,
        other => other,
    };
    let idx: Vec<usize> = match subset {
        MetricSubset::TwoSet => two_set,
        _ => (0..inp.records.len()).collect(),
    };
    if idx.is_empty() {
        return Err(Error::invalid("no segments left to evaluate"));
    }
    let refs_sub: Vec<String> = idx.iter().map(|i| refs[*i].clone()).collect();

    let mut rows = Vec::new();
    let mut params = BTreeMap::new();
    for (name, _, outputs) in systems {
        let hyps: Option<Vec<String>> = idx.iter().map(|i| outputs[*i].map(str::to_string)).collect();
        let Some(hyps) = hyps else {
            warnings.push(format!("{name}: outputs missing for some evaluated segments; metric row omitted"));
            continue;
        };
        let b = corpus_bleu(&hyps, &refs_sub, &inp.bleu)?;
        let c = chrf_pp(&hyps, &refs_sub, &inp.chrf)?;
        let mut scores = BTreeMap::from([(b.name.clone(), b.value), (c.name.clone(), c.value)]);
        if let Some(extra) = inp.external.get(*name) {
            scores.extend(extra.clone());
        }
        params.insert(b.name.clone(), b.params);
        params.insert(c.name.clone(), c.params);
        rows.push(MetricRow {
            system: name.to_string(),
            scores,
        });
    }
    let a1 = rows.iter().find(|r| r.system == APE_1).cloned();
    let a2 = rows.iter().find(|r| r.system == APE_2).cloned();
    if let (Some(a1), Some(a2)) = (a1, a2) {
        let scores = a1
            .scores
            .iter()
            .filter_map(|(k, v)| a2.scores.get(k).map(|w| (k.clone(), ape_avg(*v, *w))))
            .collect();
        rows.push(MetricRow {
            system: APE_AVG.into(),
            scores,
        });
    }
    Ok(EvalReport {
        lang: inp.direction.to_string(),
        segment_count: idx.len(),
        subset,
        rows,
        params,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}", round2(x))).unwrap_or_else(|| "-".into())
}

impl CoverageReport {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<8}{:<12}{:>10}{:>10}{:>10}{:>10}{:>9}\n",
            "Lang", "System", "Total [1]", "Used [1]", "Total [2]", "Used [2]", "Avg %"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<8}{:<12}{:>10}{:>10}{:>10}{:>10}{:>9}{}",
                self.lang,
                r.system,
                r.set1.total,
                r.set1.used,
                r.set2.total,
                r.set2.used,
                fmt_opt(r.avg_pct),
                if r.flagged { " *" } else { "" }
            );
        }
        if self.rows.iter().any(|r| r.flagged) {
            out.push_str("* one term set was empty; the average covers the other set only\n");
        }
        out
    }
}

/// Per-system mean of the per-pair averages across several coverage reports.
pub fn cross_pair_averages(reports: &[CoverageReport]) -> Vec<(String, Option<f64>)> {
    let mut systems: Vec<String> = Vec::new();
    for r in reports {
        for row in &r.rows {
            if !systems.contains(&row.system) {
                systems.push(row.system.clone());
            }
        }
    }
    systems
        .into_iter()
        .map(|s| {
            let rows: Vec<(CoverageCounts, CoverageCounts)> = reports
                .iter()
                .filter_map(|r| r.rows.iter().find(|row| row.system == s))
                .map(|row| (row.set1, row.set2))
                .collect();
            let mean = cross_pair_mean(&rows);
            (s, mean)
        })
        .collect()
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut metrics: Vec<&String> = Vec::new();
        for r in &self.rows {
            for k in r.scores.keys() {
                if !metrics.contains(&k) {
                    metrics.push(k);
                }
            }
        }
        let mut out = format!("{:<8}{:>7}  {:<12}", "Lang", "Count", "System");
        for m in &metrics {
            let _ = write!(out, "{:>10}", m);
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{:<8}{:>7}  {:<12}", self.lang, self.segment_count, r.system);
            for m in &metrics {
                let _ = write!(out, "{:>10}", fmt_opt(r.scores.get(*m).copied()));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::LangCode;
    use crate::record::TermEntry;
    use crate::termcheck::MatchMode;

    fn t(x: &str) -> TermEntry {
        TermEntry::new(format!("src {x}"), x).unwrap()
    }

    fn corpus() -> Vec<SegmentRecord> {
        let mut a = SegmentRecord::new("a", "s1", vec![t("cat")], vec![t("kitten")]);
        a.mt = Some("the cat sleeps".into());
        a.ape.insert(TermSetLabel::Set1, "the cat sleeps".into());
        a.ape.insert(TermSetLabel::Set2, "the kitten sleeps".into());
        let mut b = SegmentRecord::new("b", "s2", vec![t("dog")], vec![]);
        b.mt = Some("a hound barks".into());
        b.ape.insert(TermSetLabel::Set1, "a dog barks".into());
        b.ape.insert(TermSetLabel::Set2, "a hound barks".into());
        vec![a, b]
    }

    fn inputs<'a>(records: &'a [SegmentRecord], refs: Option<&'a [String]>) -> EvalInputs<'a> {
        EvalInputs {
            direction: Direction::new(LangCode::new("de").unwrap(), LangCode::new("en").unwrap()),
            records,
            baseline: None,
            refs,
            matcher: TermMatcher::new(LangCode::new("en").unwrap(), MatchMode::Boundary),
            subset: MetricSubset::Auto,
            bleu: BleuConfig::default(),
            chrf: ChrfConfig::default(),
            external: BTreeMap::new(),
        }
    }

    #[test]
    fn two_set_subset() {
        let recs = corpus();
        let sub = select_two_set_subset(&recs);
        assert_eq!(sub.len(), 1);
        assert_eq!(sub[0].id, "a");
        assert_eq!(select_two_set_subset(&sub), sub);
    }

    #[test]
    fn coverage_only() {
        let recs = corpus();
        let rep = build_reports(&inputs(&recs, None)).unwrap();
        assert!(rep.metrics.is_none());
        let ft = &rep.coverage.rows[0];
        assert_eq!(ft.system, FINE_TUNED);
        assert_eq!((ft.set1, ft.set2), (CoverageCounts::new(2, 1), CoverageCounts::new(1, 0)));
        let ape = &rep.coverage.rows[1];
        assert_eq!((ape.set1, ape.set2), (CoverageCounts::new(2, 2), CoverageCounts::new(1, 1)));
        assert_eq!(ape.avg_pct, Some(100.0));
        assert!(rep.warnings.iter().any(|w| w.contains("baseline")));
        assert!(rep.coverage.to_text().contains("term-ape"));
    }

    #[test]
    fn metrics_with_refs() {
        let recs = corpus();
        let refs = vec!["the cat sleeps".to_string(), "a dog barks".to_string()];
        let rep = build_reports(&inputs(&recs, Some(&refs))).unwrap();
        let m = rep.metrics.unwrap();
        assert_eq!(m.subset, MetricSubset::TwoSet);
        assert_eq!(m.segment_count, 1);
        let avg = m.rows.iter().find(|r| r.system == APE_AVG).unwrap();
        let a1 = m.rows.iter().find(|r| r.system == APE_1).unwrap();
        let a2 = m.rows.iter().find(|r| r.system == APE_2).unwrap();
        assert_eq!(avg.scores["bleu"], (a1.scores["bleu"] + a2.scores["bleu"]) / 2.0);
        assert!(m.to_text().contains("chrf++"));

        let mut all = inputs(&recs, Some(&refs));
        all.subset = MetricSubset::All;
        assert_eq!(build_reports(&all).unwrap().metrics.unwrap().segment_count, 2);
    }

    #[test]
    fn table_five_average() {
        assert_eq!(round2(ape_avg(32.36, 27.84)), 30.10);
        assert_eq!(round2(ape_avg(40.25, 33.20)), 36.73);
        assert_eq!(round2(ape_avg(7.0, 7.0)), 7.0);
    }
}
