//! Term usage checks and the Total/Used counts per term set.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::lang::LangCode;
use crate::record::{SegmentRecord, TermEntry, TermSetLabel};
use crate::round::round2;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Case-sensitive token-sequence match.
    Exact,
    /// Case-insensitive token-sequence match.
    #[default]
    Boundary,
    /// Case-insensitive substring match.
    Substring,
}

/// Term matcher for one target language.
#[derive(Debug, Clone, PartialEq)]
pub struct TermMatcher {
    pub lang: LangCode,
    pub mode: MatchMode,
}

/// A translation normalised once so that many terms can be checked against it.
pub struct PreparedText {
    folded: String,
    tokens: Vec<String>,
}

fn normalise(text: &str, fold: bool) -> String {
    let nfc: String = text.nfc().collect();
    if fold {
        nfc.to_lowercase()
    } else {
        nfc
    }
}

/// Alphanumeric runs are tokens; every other non-space character stands alone.
fn tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() || (is_mark(c) && !cur.is_empty()) {
            cur.push(c);
            continue;
        }
        if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        if !c.is_whitespace() {
            out.push(c.to_string());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn is_mark(c: char) -> bool {
    matches!(c as u32, 0x0300..=0x036F | 0x1AB0..=0x1AFF | 0x1DC0..=0x1DFF | 0x20D0..=0x20FF | 0xFE20..=0xFE2F)
}

impl TermMatcher {
    pub fn new(lang: LangCode, mode: MatchMode) -> Self {
        TermMatcher { lang, mode }
    }

    fn folds(&self) -> bool {
        self.mode != MatchMode::Exact
    }

    fn uses_substring(&self) -> bool {
        self.mode == MatchMode::Substring || !self.lang.is_space_delimited()
    }

    pub fn prepare(&self, translation: &str) -> PreparedText {
        let folded = normalise(translation, self.folds());
        let tokens = if self.uses_substring() { Vec::new() } else { tokens(&folded) };
        PreparedText { folded, tokens }
    }

    pub fn contains_prepared(&self, text: &PreparedText, term: &str) -> bool {
        let term = normalise(term, self.folds());
        if term.trim().is_empty() {
            return false;
        }
        if self.uses_substring() {
            return text.folded.contains(term.trim());
        }
        let needle = tokens(&term);
        text.tokens.windows(needle.len()).any(|w| w == needle.as_slice())
    }

    pub fn contains(&self, translation: &str, term: &str) -> bool {
        self.contains_prepared(&self.prepare(translation), term)
    }
}

/// Default-mode check of one term against one translation.
pub fn contains_term(translation: &str, term: &str, lang: &LangCode) -> bool {
    TermMatcher::new(lang.clone(), MatchMode::Boundary).contains(translation, term)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageCounts {
    pub total: u64,
    pub used: u64,
}

impl CoverageCounts {
    pub fn new(total: u64, used: u64) -> Self {
        assert!(used <= total, "used {used} exceeds total {total}");
        CoverageCounts { total, used }
    }

    /// Percentage of terms used, or `None` when the set is empty.
    pub fn pct(&self) -> Option<f64> {
        (self.total > 0).then(|| 100.0 * self.used as f64 / self.total as f64)
    }
}

impl Add for CoverageCounts {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        CoverageCounts {
            total: self.total + rhs.total,
            used: self.used + rhs.used,
        }
    }
}

impl AddAssign for CoverageCounts {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Which {
    Mt,
    Ape,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageResult {
    pub counts: CoverageCounts,
    /// Records without the selected translation.
    pub skipped: usize,
}

/// Entries of `entries` whose target term is absent from `translation`, in order.
pub fn missing_entries<'a>(matcher: &TermMatcher, translation: &str, entries: &'a [TermEntry]) -> Vec<&'a TermEntry> {
    let prepared = matcher.prepare(translation);
    entries
        .iter()
        .filter(|e| !matcher.contains_prepared(&prepared, &e.tgt_term))
        .collect()
}

/// Count term usage for `label` against whatever translation `pick` selects.
pub fn coverage_with<'a, F>(records: &'a [SegmentRecord], label: TermSetLabel, matcher: &TermMatcher, pick: F) -> CoverageResult
where
    F: Fn(&'a SegmentRecord) -> Option<&'a str>,
{
    let mut out = CoverageResult::default();
    for r in records {
        let entries = r.term_set(label).map(|s| s.entries.as_slice()).unwrap_or(&[]);
        let Some(translation) = pick(r) else {
            out.skipped += 1;
            continue;
        };
        let missing = missing_entries(matcher, translation, entries).len() as u64;
        out.counts += CoverageCounts::new(entries.len() as u64, entries.len() as u64 - missing);
    }
    out
}

/// Count term usage for `label` in either the MT output or the APE output for that label.
pub fn coverage(records: &[SegmentRecord], which: Which, label: TermSetLabel, matcher: &TermMatcher) -> CoverageResult {
    coverage_with(records, label, matcher, |r| match which {
        Which::Mt => r.mt.as_deref(),
        Which::Ape => r.ape.get(&label).map(String::as_str),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AvgPct {
    /// Rounded to two decimals; `None` when both sets are empty.
    pub value: Option<f64>,
    /// Set when one of the two sets had no terms and was left out.
    pub flagged: bool,
}

/// Unrounded mean of the per-set percentages.
pub fn avg_pct_raw(c1: CoverageCounts, c2: CoverageCounts) -> (Option<f64>, bool) {
    match (c1.pct(), c2.pct()) {
        (Some(a), Some(b)) => (Some((a + b) / 2.0), false),
        (Some(a), None) | (None, Some(a)) => (Some(a), true),
        (None, None) => (None, true),
    }
}

pub fn avg_pct(c1: CoverageCounts, c2: CoverageCounts) -> AvgPct {
    let (value, flagged) = avg_pct_raw(c1, c2);
    AvgPct {
        value: value.map(round2),
        flagged,
    }
}

/// Unweighted mean over language pairs of the unrounded per-pair averages.
pub fn cross_pair_mean(rows: &[(CoverageCounts, CoverageCounts)]) -> Option<f64> {
    let raws: Vec<f64> = rows.iter().filter_map(|(a, b)| avg_pct_raw(*a, *b).0).collect();
    (!raws.is_empty()).then(|| round2(raws.iter().sum::<f64>() / raws.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn en() -> LangCode {
        LangCode::new("en").unwrap()
    }

    #[test]
    fn presence_and_boundaries() {
        let en = en();
        assert!(contains_term(
            "The Federal Ministry of Science announced new funding.",
            "Federal Ministry of Science",
            &en
        ));
        assert!(!contains_term("The ministerial meeting ended.", "minister", &en));
        assert!(contains_term("federal ministry of science", "Federal Ministry of Science", &en));
        assert!(contains_term("A state-of-the-art device.", "state-of-the-art", &en));
        assert!(!contains_term("A state of the art device.", "state-of-the-art", &en));
    }

    #[test]
    fn nfc_normalisation() {
        let composed = "Caf\u{e9} opened";
        let decomposed = "cafe\u{301}";
        assert!(contains_term(composed, decomposed, &en()));
    }

    #[test]
    fn modes() {
        let exact = TermMatcher::new(en(), MatchMode::Exact);
        assert!(!exact.contains("federal ministry", "Federal Ministry"));
        assert!(exact.contains("The Federal Ministry.", "Federal Ministry"));
        let sub = TermMatcher::new(en(), MatchMode::Substring);
        assert!(sub.contains("The ministerial meeting", "minister"));
    }

    #[test]
    fn chinese_uses_substring() {
        let zh = LangCode::new("zh").unwrap();
        assert!(contains_term("联邦科学部宣布了新资金。", "科学部", &zh));
        assert!(!contains_term("联邦科学部宣布了新资金。", "教育部", &zh));
    }

    #[test]
    fn empty_term_is_absent() {
        assert!(!contains_term("anything", "  ", &en()));
    }

    #[test]
    fn coverage_counts_instances() {
        let e = |s: &str| TermEntry::new(format!("x{s}"), s).unwrap();
        let mut recs = vec![
            SegmentRecord::new("a", "s", vec![e("cat"), e("dog")], vec![]),
            SegmentRecord::new("b", "s", vec![e("bird")], vec![e("cow")]),
            SegmentRecord::new("c", "s", vec![e("fish"), e("fish")], vec![]),
        ];
        recs[0].mt = Some("the cat sleeps".into());
        recs[1].mt = Some("a bird and a cow".into());
        recs[2].mt = Some("fish".into());
        let m = TermMatcher::new(en(), MatchMode::Boundary);
        let c1 = coverage(&recs, Which::Mt, TermSetLabel::Set1, &m);
        assert_eq!(c1.counts, CoverageCounts::new(5, 4));
        let c2 = coverage(&recs, Which::Mt, TermSetLabel::Set2, &m);
        assert_eq!(c2.counts, CoverageCounts::new(1, 1));
        let ape = coverage(&recs, Which::Ape, TermSetLabel::Set1, &m);
        assert_eq!(ape.skipped, 3);
        assert_eq!(ape.counts, CoverageCounts::default());
    }

    #[test]
    fn avg_pct_examples() {
        let v = |a, b, c, d| avg_pct(CoverageCounts::new(a, b), CoverageCounts::new(c, d)).value.unwrap();
        assert_eq!(v(432, 291, 317, 168), 60.18);
        assert_eq!(v(1779, 498, 1938, 491), 26.66);
        assert_eq!(v(10, 10, 10, 10), 100.0);
    }

    #[test]
    fn avg_pct_with_an_empty_set() {
        let r = avg_pct(CoverageCounts::new(4, 1), CoverageCounts::default());
        assert_eq!(r.value, Some(25.0));
        assert!(r.flagged);
        let r = avg_pct(CoverageCounts::default(), CoverageCounts::default());
        assert_eq!(r.value, None);
    }
}
