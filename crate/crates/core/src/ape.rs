//! Terminology-constrained automatic post-editing.
//!
//! Translations that miss required terms are sent back to the LLM with an
//! instruction to use those terms; the candidate that fixes the most terms
//! wins, and the original translation is kept when nothing improves.

use serde::{Deserialize, Serialize};

use crate::backends::{map_bounded, ChatBackend, ChatRequest};
use crate::error::{Error, Result};
use crate::lang::{LangCode, LanguageNames};
use crate::record::{SegmentRecord, TermEntry, TermSetLabel};
use crate::termcheck::{missing_entries, MatchMode, TermMatcher};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApeConfig {
    pub src_lang: LangCode,
    pub tgt_lang: LangCode,
    pub src_lang_name: String,
    pub tgt_lang_name: String,
    pub model_id: String,
    pub temperatures: Vec<f64>,
    pub top_p: f64,
    pub max_terms_per_prompt: Option<usize>,
    /// Reject any candidate that loses a term the translation already had.
    pub strict: bool,
    pub match_mode: MatchMode,
}

impl ApeConfig {
    pub fn new(src_lang: LangCode, tgt_lang: LangCode, names: &LanguageNames) -> Result<Self> {
        Ok(ApeConfig {
            src_lang_name: names.name(&src_lang)?.to_string(),
            tgt_lang_name: names.name(&tgt_lang)?.to_string(),
            src_lang,
            tgt_lang,
            model_id: "gpt-3.5-turbo".into(),
            temperatures: vec![0.0, 0.2],
            top_p: 1.0,
            max_terms_per_prompt: None,
            strict: false,
            match_mode: MatchMode::Boundary,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperatures.is_empty() {
            return Err(Error::invalid("at least one post-editing temperature is required"));
        }
        if self.max_terms_per_prompt == Some(0) {
            return Err(Error::invalid("max_terms_per_prompt must be at least 1"));
        }
        Ok(())
    }

    pub fn matcher(&self) -> TermMatcher {
        TermMatcher::new(self.tgt_lang.clone(), self.match_mode)
    }
}

/// Entries of the labelled set whose target term is absent from `translation`.
pub fn missing_terms(record: &SegmentRecord, label: TermSetLabel, translation: &str, matcher: &TermMatcher) -> Vec<TermEntry> {
    let entries = record.term_set(label).map(|s| s.entries.as_slice()).unwrap_or(&[]);
    missing_entries(matcher, translation, entries).into_iter().cloned().collect()
}

pub fn build_ape_prompt(src: &str, missing: &[TermEntry], translation: &str, src_lang_name: &str, tgt_lang_name: &str) -> String {
    assert!(!missing.is_empty(), "post-editing prompt needs at least one term");
    let clauses: Vec<String> = missing
        .iter()
        .map(|t| format!("\"{}\" to translate the {src_lang_name} term \"{}\"", t.tgt_term, t.src_term))
        .collect();
    format!(
        "In the following {tgt_lang_name} translation, use the {}. Leave everything else the same.\n\n{src_lang_name}: {src}\n{tgt_lang_name}: {translation}",
        clauses.join(", and the ")
    )
}

/// Fields recovered from a post-editing prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct ApePrompt {
    pub terms: Vec<TermEntry>,
    pub src: String,
    pub translation: String,
}

pub fn parse_ape_prompt(prompt: &str) -> Option<ApePrompt> {
    let (header, body) = prompt.split_once("\n\n")?;
    let rest = header.strip_prefix("In the following ")?;
    let (tgt_name, rest) = rest.split_once(" translation, use the \"")?;
    let rest = rest.strip_suffix("\". Leave everything else the same.")?;
    let (src_name, body) = body.split_once(": ")?;
    let (src, translation) = body.rsplit_once(&format!("\n{tgt_name}: "))?;
    let sep = format!("\" to translate the {src_name} term \"");
    let terms = rest
        .split("\", and the \"")
        .map(|clause| {
            let (tgt, src) = clause.split_once(&sep)?;
            TermEntry::new(src, tgt).ok()
        })
        .collect::<Option<Vec<_>>>()?;
    Some(ApePrompt {
        terms,
        src: src.to_string(),
        translation: translation.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApeCandidate {
    pub temperature: f64,
    pub text: String,
    /// Originally missing terms present in the candidate.
    pub fixed_count: usize,
    /// Originally present terms absent from the candidate.
    pub regressions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApeOutcome {
    pub chosen: String,
    pub candidates: Vec<ApeCandidate>,
    pub skipped: bool,
    pub improved: bool,
    pub missing_before: usize,
    pub missing_after: usize,
    pub llm_calls: usize,
    pub errors: Vec<String>,
}

struct Scorer<'a> {
    matcher: &'a TermMatcher,
    missing: Vec<TermEntry>,
    present: Vec<TermEntry>,
}

impl Scorer<'_> {
    fn score(&self, text: &str) -> (usize, usize) {
        let prepared = self.matcher.prepare(text);
        let has = |t: &TermEntry| self.matcher.contains_prepared(&prepared, &t.tgt_term);
        let fixed = self.missing.iter().filter(|t| has(t)).count();
        let lost = self.present.iter().filter(|t| !has(t)).count();
        (fixed, lost)
    }
}

pub fn post_edit_segment(record: &SegmentRecord, label: TermSetLabel, cfg: &ApeConfig, llm: &dyn ChatBackend) -> Result<ApeOutcome> {
    cfg.validate()?;
    let mt = record
        .mt
        .as_deref()
        .ok_or_else(|| Error::invalid(format!("segment {} has no MT output to post-edit", record.id)))?;
    let matcher = cfg.matcher();
    let entries = record.term_set(label).map(|s| s.entries.as_slice()).unwrap_or(&[]);
    let missing = missing_terms(record, label, mt, &matcher);
    let mut outcome = ApeOutcome {
        chosen: mt.to_string(),
        candidates: Vec::new(),
        skipped: missing.is_empty(),
        improved: false,
        missing_before: missing.len(),
        missing_after: missing.len(),
        llm_calls: 0,
        errors: Vec::new(),
    };
    if missing.is_empty() {
        return Ok(outcome);
    }

    let present: Vec<TermEntry> = entries.iter().filter(|e| !missing.contains(e)).cloned().collect();
    let scorer = Scorer {
        matcher: &matcher,
        missing: missing.clone(),
        present,
    };
    let mut prompt_terms: Vec<TermEntry> = Vec::new();
    for t in &missing {
        if !prompt_terms.contains(t) {
            prompt_terms.push(t.clone());
        }
    }
    let chunk = cfg.max_terms_per_prompt.unwrap_or(prompt_terms.len());

    let (mut cur_fixed, mut cur_lost) = (0usize, 0usize);
    for terms in prompt_terms.chunks(chunk) {
        let prompt = build_ape_prompt(&record.src, terms, &outcome.chosen, &cfg.src_lang_name, &cfg.tgt_lang_name);
        let mut best: Option<ApeCandidate> = None;
        for &temperature in &cfg.temperatures {
            outcome.llm_calls += 1;
            let reply = ChatRequest::user(cfg.model_id.clone(), prompt.clone(), temperature, cfg.top_p)
                .and_then(|req| llm.chat(&req).map_err(Error::from));
            let text = match reply {
                Ok(text) => text.trim().to_string(),
                Err(e) => {
                    outcome.errors.push(format!("temperature {temperature}: {e}"));
                    continue;
                }
            };
            let (fixed_count, regressions) = scorer.score(&text);
            let cand = ApeCandidate {
                temperature,
                text,
                fixed_count,
                regressions,
            };
            let eligible = !text_is_empty(&cand.text)
                && cand.fixed_count > cur_fixed
                && if cfg.strict {
                    cand.regressions == 0
                } else {
                    cand.fixed_count as i64 - cand.regressions as i64 > cur_fixed as i64 - cur_lost as i64
                };
            if eligible && best.as_ref().is_none_or(|b| cand.fixed_count > b.fixed_count) {
                best = Some(cand.clone());
            }
            outcome.candidates.push(cand);
        }
        if let Some(b) = best {
            cur_fixed = b.fixed_count;
            cur_lost = b.regressions;
            outcome.chosen = b.text;
            outcome.improved = true;
        }
    }
    outcome.missing_after = outcome.missing_before - cur_fixed;
    Ok(outcome)
}

fn text_is_empty(s: &str) -> bool {
    s.trim().is_empty()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApeStats {
    pub segments: usize,
    pub skipped: usize,
    pub improved: usize,
    pub unimproved: usize,
    pub with_errors: usize,
    pub llm_calls: usize,
    pub missing_before: usize,
    pub missing_after: usize,
}

/// Fill `ape[label]` for every record. Per-segment failures fall back to the MT output.
pub fn post_edit_corpus(
    records: &[SegmentRecord],
    label: TermSetLabel,
    cfg: &ApeConfig,
    llm: &dyn ChatBackend,
    parallelism: usize,
) -> Result<(Vec<SegmentRecord>, ApeStats)> {
    cfg.validate()?;
    if let Some(r) = records.iter().find(|r| r.mt.is_none()) {
        return Err(Error::invalid(format!("segment {} has no MT output to post-edit", r.id)));
    }
    let outcomes = map_bounded(records, parallelism, |r| post_edit_segment(r, label, cfg, llm));
    let mut stats = ApeStats::default();
    let mut out = Vec::with_capacity(records.len());
    for (record, outcome) in records.iter().zip(outcomes) {
        let outcome = outcome?;
        stats.segments += 1;
        stats.llm_calls += outcome.llm_calls;
        stats.missing_before += outcome.missing_before;
        stats.missing_after += outcome.missing_after;
        if !outcome.errors.is_empty() {
            stats.with_errors += 1;
            log::warn!("segment {}: {}", record.id, outcome.errors.join("; "));
        }
        if outcome.skipped {
            stats.skipped += 1;
        } else if outcome.improved {
            stats.improved += 1;
        } else {
            stats.unimproved += 1;
        }
        let mut r = record.clone();
        r.ape.insert(label, outcome.chosen);
        out.push(r);
    }
    Ok((out, stats))
}
