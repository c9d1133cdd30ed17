//! Records flowing between pipeline stages.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A required source-term to target-term mapping.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawTermEntry")]
pub struct TermEntry {
    #[serde(rename = "src")]
    pub src_term: String,
    #[serde(rename = "tgt")]
    pub tgt_term: String,
}

#[derive(Deserialize)]
struct RawTermEntry {
    src: String,
    tgt: String,
}

impl TryFrom<RawTermEntry> for TermEntry {
    type Error = Error;
    fn try_from(raw: RawTermEntry) -> Result<Self> {
        TermEntry::new(raw.src, raw.tgt)
    }
}

impl TermEntry {
    /// Both sides are trimmed; empty sides and embedded tabs or newlines are rejected.
    pub fn new(src: impl AsRef<str>, tgt: impl AsRef<str>) -> Result<Self> {
        let src = src.as_ref().trim();
        let tgt = tgt.as_ref().trim();
        for (side, text) in [("source", src), ("target", tgt)] {
            if text.is_empty() {
                return Err(Error::invalid(format!("empty {side} term")));
            }
            if text.contains(['\t', '\n', '\r']) {
                return Err(Error::invalid(format!(
                    "{side} term {text:?} contains a tab or newline"
                )));
            }
        }
        Ok(TermEntry {
            src_term: src.to_string(),
            tgt_term: tgt.to_string(),
        })
    }
}

/// Parse a two-column `src_term<TAB>tgt_term` dictionary. Blank lines and
/// lines starting with `#` are ignored.
pub fn parse_term_tsv(text: &str) -> Result<Vec<TermEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t');
        let (Some(src), Some(tgt)) = (cols.next(), cols.next()) else {
            return Err(Error::invalid(format!(
                "line {}: expected two tab-separated columns",
                i + 1
            )));
        };
        out.push(
            TermEntry::new(src, tgt)
                .map_err(|e| Error::invalid(format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TermSetLabel {
    #[serde(rename = "set1")]
    Set1,
    #[serde(rename = "set2")]
    Set2,
}

impl TermSetLabel {
    pub const ALL: [TermSetLabel; 2] = [TermSetLabel::Set1, TermSetLabel::Set2];

    pub fn as_str(self) -> &'static str {
        match self {
            TermSetLabel::Set1 => "set1",
            TermSetLabel::Set2 => "set2",
        }
    }

    /// Column tag used in reports: `[1]` / `[2]`.
    pub fn index(self) -> usize {
        match self {
            TermSetLabel::Set1 => 1,
            TermSetLabel::Set2 => 2,
        }
    }
}

impl fmt::Display for TermSetLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermSet {
    pub label: TermSetLabel,
    #[serde(default)]
    pub entries: Vec<TermEntry>,
}

impl TermSet {
    pub fn new(label: TermSetLabel, entries: Vec<TermEntry>) -> Self {
        TermSet { label, entries }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A source segment with its two term sets and the translations produced for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub id: String,
    pub src: String,
    pub term_sets: (TermSet, TermSet),
    #[serde(default)]
    pub mt: Option<String>,
    #[serde(default)]
    pub ape: BTreeMap<TermSetLabel, String>,
}

impl SegmentRecord {
    pub fn new(id: impl Into<String>, src: impl Into<String>, set1: Vec<TermEntry>, set2: Vec<TermEntry>) -> Self {
        SegmentRecord {
            id: id.into(),
            src: src.into(),
            term_sets: (
                TermSet::new(TermSetLabel::Set1, set1),
                TermSet::new(TermSetLabel::Set2, set2),
            ),
            mt: None,
            ape: BTreeMap::new(),
        }
    }

    pub fn term_set(&self, label: TermSetLabel) -> Option<&TermSet> {
        [&self.term_sets.0, &self.term_sets.1]
            .into_iter()
            .find(|s| s.label == label)
    }

    pub fn validate(&self) -> Result<()> {
        if self.term_sets.0.label == self.term_sets.1.label {
            return Err(Error::invalid(format!(
                "segment {}: duplicate term set label {}",
                self.id, self.term_sets.0.label
            )));
        }
        Ok(())
    }
}

/// Check ids are unique and each record is well formed.
pub fn validate_records(records: &[SegmentRecord]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for r in records {
        r.validate()?;
        if !seen.insert(r.id.as_str()) {
            return Err(Error::invalid(format!("duplicate segment id {}", r.id)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Synthetic,
    Generic,
}

/// One source/target sentence pair with provenance.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BilingualPair {
    pub src: String,
    pub tgt: String,
    #[serde(default)]
    pub seed_term: Option<TermEntry>,
    pub origin: Origin,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl BilingualPair {
    pub fn synthetic(src: impl Into<String>, tgt: impl Into<String>, seed: TermEntry) -> Self {
        BilingualPair {
            src: src.into(),
            tgt: tgt.into(),
            seed_term: Some(seed),
            origin: Origin::Synthetic,
            meta: BTreeMap::new(),
        }
    }

    pub fn generic(src: impl Into<String>, tgt: impl Into<String>) -> Self {
        BilingualPair {
            src: src.into(),
            tgt: tgt.into(),
            seed_term: None,
            origin: Origin::Generic,
            meta: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.src.trim().is_empty() || self.tgt.trim().is_empty() {
            return Err(Error::invalid("bilingual pair with an empty side"));
        }
        if self.origin == Origin::Synthetic && self.seed_term.is_none() {
            return Err(Error::invalid("synthetic pair without a seed term"));
        }
        Ok(())
    }
}
