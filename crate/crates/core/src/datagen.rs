//! Terminology-seeded bilingual data generation.
//!
//! For every term and every configured temperature the LLM is asked for a
//! batch of numbered sentence pairs that use the term; replies are parsed
//! leniently since models rarely return exactly the requested format.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backends::{map_bounded, BackendError, ChatBackend, ChatRequest};
use crate::error::{Error, Result};
use crate::lang::{LangCode, LanguageNames};
use crate::record::{BilingualPair, TermEntry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub src_lang: LangCode,
    pub tgt_lang: LangCode,
    pub src_lang_name: String,
    pub tgt_lang_name: String,
    pub model_id: String,
    pub sentences_per_call: usize,
    pub temperatures: Vec<f64>,
    pub top_p: f64,
    /// Name both the source and target term in the prompt instead of only the target term.
    pub seed_with_both_terms: bool,
}

impl GenConfig {
    pub fn new(src_lang: LangCode, tgt_lang: LangCode, names: &LanguageNames) -> Result<Self> {
        let cfg = GenConfig {
            src_lang_name: names.name(&src_lang)?.to_string(),
            tgt_lang_name: names.name(&tgt_lang)?.to_string(),
            src_lang,
            tgt_lang,
            model_id: "gpt-3.5-turbo".into(),
            sentences_per_call: 20,
            temperatures: vec![0.0, 0.3],
            top_p: 1.0,
            seed_with_both_terms: false,
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sentences_per_call == 0 {
            return Err(Error::invalid("sentences_per_call must be at least 1"));
        }
        if self.temperatures.is_empty() {
            return Err(Error::invalid("at least one generation temperature is required"));
        }
        if self.temperatures.iter().any(|t| t.is_nan() || *t < 0.0) {
            return Err(Error::invalid("generation temperatures must be >= 0"));
        }
        Ok(())
    }
}

pub fn build_gen_prompt(term: &TermEntry, cfg: &GenConfig) -> String {
    let terms = if cfg.seed_with_both_terms {
        format!("\"{}\" and \"{}\"", term.src_term, term.tgt_term)
    } else {
        format!("\"{}\"", term.tgt_term)
    };
    format!(
        "Please use the {terms} to generate just {} numbered sentences in {}-{} in one Python dictionary format.",
        cfg.sentences_per_call, cfg.src_lang_name, cfg.tgt_lang_name
    )
}

/// Fields recovered from a generation prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct GenPrompt {
    pub src_term: Option<String>,
    pub tgt_term: String,
    pub count: usize,
    pub src_lang_name: String,
    pub tgt_lang_name: String,
}

pub fn parse_gen_prompt(prompt: &str) -> Option<GenPrompt> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(
            r#"^Please use the "(?P<a>.+?)"(?: and "(?P<b>.+?)")? to generate just (?P<n>\d+) numbered sentences in (?P<src>[^-]+)-(?P<tgt>.+) in one Python dictionary format\.$"#,
        )
        .unwrap()
    });
    let caps = re.captures(prompt)?;
    let (src_term, tgt_term) = match caps.name("b") {
        Some(b) => (Some(caps["a"].to_string()), b.as_str().to_string()),
        None => (None, caps["a"].to_string()),
    };
    Some(GenPrompt {
        src_term,
        tgt_term,
        count: caps["n"].parse().ok()?,
        src_lang_name: caps["src"].to_string(),
        tgt_lang_name: caps["tgt"].to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplyShape {
    Dictionary,
    SeparatedLines,
    AlternatingLines,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseOutcome {
    pub pairs: Vec<BilingualPair>,
    pub shape: Option<ReplyShape>,
    /// Entries recognised but rejected (one side missing or empty).
    pub dropped: usize,
    /// Well-formed entries beyond `sentences_per_call`.
    pub truncated: usize,
}

pub fn parse_gen_response(raw: &str, term: &TermEntry, cfg: &GenConfig) -> ParseOutcome {
    let keys = SideKeys::new(cfg);
    let attempts: [(ReplyShape, fn(&str, &SideKeys) -> Option<(Vec<(String, String)>, usize)>); 3] = [
        (ReplyShape::Dictionary, parse_dictionary),
        (ReplyShape::SeparatedLines, parse_separated_lines),
        (ReplyShape::AlternatingLines, parse_alternating_lines),
    ];
    for (shape, parse) in attempts {
        if let Some((found, dropped)) = parse(raw, &keys) {
            let truncated = found.len().saturating_sub(cfg.sentences_per_call);
            let pairs = found
                .into_iter()
                .take(cfg.sentences_per_call)
                .map(|(s, t)| BilingualPair::synthetic(s, t, term.clone()))
                .collect();
            return ParseOutcome {
                pairs,
                shape: Some(shape),
                dropped,
                truncated,
            };
        }
    }
    ParseOutcome::default()
}

/// Recognised labels for the source and target side of an entry.
struct SideKeys {
    src: Vec<String>,
    tgt: Vec<String>,
}

impl SideKeys {
    fn new(cfg: &GenConfig) -> Self {
        let norm = |v: &[&str]| v.iter().map(|s| s.to_lowercase()).collect();
        SideKeys {
            src: norm(&[cfg.src_lang.as_str(), cfg.src_lang.primary(), &cfg.src_lang_name, "source", "src"]),
            tgt: norm(&[cfg.tgt_lang.as_str(), cfg.tgt_lang.primary(), &cfg.tgt_lang_name, "target", "tgt"]),
        }
    }

    fn side(&self, label: &str) -> Option<bool> {
        let l = label.trim().to_lowercase();
        if self.src.contains(&l) {
            Some(true)
        } else if self.tgt.contains(&l) {
            Some(false)
        } else {
            None
        }
    }
}

fn clean(s: &str) -> String {
    let s = s.trim();
    let s = s
        .strip_prefix('"')
        .and_then(|x| x.strip_suffix('"'))
        .or_else(|| s.strip_prefix('\'').and_then(|x| x.strip_suffix('\'')))
        .unwrap_or(s);
    s.trim().to_string()
}

fn accept(src: &str, tgt: &str, out: &mut Vec<(String, String)>, dropped: &mut usize) {
    let (s, t) = (clean(src), clean(tgt));
    if s.is_empty() || t.is_empty() {
        *dropped += 1;
    } else {
        out.push((s, t));
    }
}

// ---------------------------------------------------------------------------
// Shape 1: JSON / Python dictionary literal

#[derive(Debug, Clone, PartialEq)]
enum Lit {
    Str(String),
    Bare(String),
    List(Vec<Lit>),
    Dict(Vec<(Lit, Lit)>),
}

impl Lit {
    fn text(&self) -> Option<&str> {
        match self {
            Lit::Str(s) | Lit::Bare(s) => Some(s),
            _ => None,
        }
    }
}

struct LitParser<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
}

impl LitParser<'_> {
    fn ws(&mut self) {
        while self.chars.peek().is_some_and(|c| c.is_whitespace()) {
            self.chars.next();
        }
    }

    fn value(&mut self, depth: usize) -> Option<Lit> {
        if depth > 16 {
            return None;
        }
        self.ws();
        match *self.chars.peek()? {
            '{' => {
                self.chars.next();
                let mut items = Vec::new();
                loop {
                    self.ws();
                    if self.chars.peek() == Some(&'}') {
                        self.chars.next();
                        return Some(Lit::Dict(items));
                    }
                    let k = self.value(depth + 1)?;
                    self.ws();
                    if self.chars.next()? != ':' {
                        return None;
                    }
                    let v = self.value(depth + 1)?;
                    items.push((k, v));
                    self.ws();
                    match self.chars.next()? {
                        ',' => {}
                        '}' => return Some(Lit::Dict(items)),
                        _ => return None,
                    }
                }
            }
            open @ ('[' | '(') => {
                self.chars.next();
                let close = if open == '[' { ']' } else { ')' };
                let mut items = Vec::new();
                loop {
                    self.ws();
                    if self.chars.peek() == Some(&close) {
                        self.chars.next();
                        return Some(Lit::List(items));
                    }
                    items.push(self.value(depth + 1)?);
                    self.ws();
                    match self.chars.next()? {
                        ',' => {}
                        c if c == close => return Some(Lit::List(items)),
                        _ => return None,
                    }
                }
            }
            q @ ('"' | '\'') => {
                self.chars.next();
                let mut s = String::new();
                loop {
                    match self.chars.next()? {
                        '\\' => match self.chars.next()? {
                            'n' => s.push('\n'),
                            't' => s.push('\t'),
                            'u' => {
                                let hex: String = (0..4).filter_map(|_| self.chars.next()).collect();
                                s.push(u32::from_str_radix(&hex, 16).ok().and_then(char::from_u32)?);
                            }
                            c => s.push(c),
                        },
                        c if c == q => return Some(Lit::Str(s)),
                        c => s.push(c),
                    }
                }
            }
            _ => {
                let mut s = String::new();
                while let Some(&c) = self.chars.peek() {
                    if c.is_whitespace() || ",:{}[]()".contains(c) {
                        break;
                    }
                    s.push(c);
                    self.chars.next();
                }
                if s.is_empty() {
                    None
                } else {
                    Some(Lit::Bare(s))
                }
            }
        }
    }
}

fn parse_dictionary(raw: &str, keys: &SideKeys) -> Option<(Vec<(String, String)>, usize)> {
    let start = raw.find('{')?;
    let mut parser = LitParser {
        chars: raw[start..].chars().peekable(),
    };
    let Lit::Dict(items) = parser.value(0)? else {
        return None;
    };
    let mut out = Vec::new();
    let mut dropped = 0;

    // {"German": [...], "English": [...]}
    let side_lists: Vec<(bool, &Vec<Lit>)> = items
        .iter()
        .filter_map(|(k, v)| match (k.text().and_then(|k| keys.side(k)), v) {
            (Some(side), Lit::List(l)) => Some((side, l)),
            _ => None,
        })
        .collect();
    if side_lists.len() == 2 && side_lists[0].0 != side_lists[1].0 {
        let (srcs, tgts) = if side_lists[0].0 {
            (side_lists[0].1, side_lists[1].1)
        } else {
            (side_lists[1].1, side_lists[0].1)
        };
        for i in 0..srcs.len().max(tgts.len()) {
            match (srcs.get(i).and_then(Lit::text), tgts.get(i).and_then(Lit::text)) {
                (Some(s), Some(t)) => accept(s, t, &mut out, &mut dropped),
                _ => dropped += 1,
            }
        }
        return Some((out, dropped));
    }

    for (key, value) in &items {
        match value {
            Lit::Dict(fields) => {
                let mut src = None;
                let mut tgt = None;
                let mut unlabelled = Vec::new();
                for (k, v) in fields {
                    let Some(text) = v.text() else { continue };
                    match k.text().and_then(|k| keys.side(k)) {
                        Some(true) => src = Some(text),
                        Some(false) => tgt = Some(text),
                        None => unlabelled.push(text),
                    }
                }
                if src.is_none() && tgt.is_none() && unlabelled.len() == 2 {
                    src = Some(unlabelled[0]);
                    tgt = Some(unlabelled[1]);
                }
                match (src, tgt) {
                    (Some(s), Some(t)) => accept(s, t, &mut out, &mut dropped),
                    _ => dropped += 1,
                }
            }
            Lit::List(parts) => match parts.as_slice() {
                [a, b] => match (a.text(), b.text()) {
                    (Some(s), Some(t)) => accept(s, t, &mut out, &mut dropped),
                    _ => dropped += 1,
                },
                _ => dropped += 1,
            },
            Lit::Str(t) => match key {
                // {"source sentence": "target sentence"}
                Lit::Str(s) if s.parse::<u64>().is_err() => accept(s, t, &mut out, &mut dropped),
                _ => dropped += 1,
            },
            Lit::Bare(_) => dropped += 1,
        }
    }
    if out.is_empty() && dropped == 0 {
        return None;
    }
    Some((out, dropped))
}

// ---------------------------------------------------------------------------
// Shapes 2 and 3: numbered lines

fn numbered(line: &str) -> Option<&str> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"^\s*\d+\s*[.):\]]?\s+(.*)$").unwrap());
    re.captures(line).map(|c| c.get(1).unwrap().as_str())
}

/// Split `German: text` into (Some(is_src), text).
fn labelled<'a>(text: &'a str, keys: &SideKeys) -> (Option<bool>, &'a str) {
    if let Some((label, rest)) = text.split_once(':') {
        if let Some(side) = keys.side(label) {
            return (Some(side), rest.trim());
        }
    }
    (None, text)
}

fn parse_separated_lines(raw: &str, keys: &SideKeys) -> Option<(Vec<(String, String)>, usize)> {
    let mut out = Vec::new();
    let mut dropped = 0;
    let mut seen = false;
    for line in raw.lines() {
        let Some(body) = numbered(line) else { continue };
        let split = ["||", "|", "\t", " - "]
            .iter()
            .find_map(|sep| body.split_once(sep));
        let Some((a, b)) = split else { continue };
        seen = true;
        let (_, a) = labelled(a, keys);
        let (_, b) = labelled(b, keys);
        accept(a, b, &mut out, &mut dropped);
    }
    seen.then_some((out, dropped))
}

fn parse_alternating_lines(raw: &str, keys: &SideKeys) -> Option<(Vec<(String, String)>, usize)> {
    let lines: Vec<(Option<bool>, &str)> = raw
        .lines()
        .filter_map(|line| {
            let (body, is_numbered) = match numbered(line) {
                Some(b) => (b, true),
                None => (line.trim(), false),
            };
            let (side, text) = labelled(body, keys);
            (is_numbered || side.is_some()).then_some((side, text))
        })
        .collect();
    if lines.len() < 2 {
        return None;
    }
    let mut out = Vec::new();
    let mut dropped = 0;
    if lines.iter().any(|(side, _)| side.is_some()) {
        let mut pending: Option<&str> = None;
        for (side, text) in lines {
            match side {
                Some(true) => {
                    if pending.replace(text).is_some() {
                        dropped += 1;
                    }
                }
                Some(false) => match pending.take() {
                    Some(src) => accept(src, text, &mut out, &mut dropped),
                    None => dropped += 1,
                },
                None => {}
            }
        }
        if pending.is_some() {
            dropped += 1;
        }
    } else {
        let mut chunks = lines.chunks_exact(2);
        for pair in &mut chunks {
            accept(pair[0].1, pair[1].1, &mut out, &mut dropped);
        }
        dropped += chunks.remainder().len();
    }
    Some((out, dropped))
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenStats {
    pub calls: usize,
    pub failed_calls: usize,
    pub pairs: usize,
    pub dropped: usize,
    pub truncated: usize,
    pub unparseable_replies: usize,
    pub errors: Vec<String>,
}

/// One chat call per (term, temperature); output ordered by term, then temperature.
pub fn generate_for_terms(
    terms: &[TermEntry],
    cfg: &GenConfig,
    llm: &dyn ChatBackend,
    parallelism: usize,
) -> Result<(Vec<BilingualPair>, GenStats)> {
    if terms.is_empty() {
        return Err(Error::invalid("no terms to generate data for"));
    }
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = (0..terms.len())
        .flat_map(|t| (0..cfg.temperatures.len()).map(move |k| (t, k)))
        .collect();
    let results: Vec<Result<ParseOutcome, BackendError>> = map_bounded(&jobs, parallelism, |&(t, k)| {
        let term = &terms[t];
        let req = ChatRequest::user(
            cfg.model_id.clone(),
            build_gen_prompt(term, cfg),
            cfg.temperatures[k],
            cfg.top_p,
        )
        .map_err(|e| BackendError::reported(e.to_string(), false))?;
        let raw = llm.chat(&req)?;
        let mut outcome = parse_gen_response(&raw, term, cfg);
        for pair in &mut outcome.pairs {
            pair.meta = BTreeMap::from([
                ("model".to_string(), cfg.model_id.clone()),
                ("temperature".to_string(), cfg.temperatures[k].to_string()),
                ("call_id".to_string(), format!("{t}:{k}")),
            ]);
        }
        Ok(outcome)
    });

    let mut stats = GenStats::default();
    let mut pairs = Vec::new();
    let per_term = cfg.temperatures.len();
    for (t, chunk) in results.chunks(per_term).enumerate() {
        let mut last_err = None;
        for r in chunk {
            stats.calls += 1;
            match r {
                Ok(outcome) => {
                    if outcome.shape.is_none() {
                        stats.unparseable_replies += 1;
                    }
                    stats.dropped += outcome.dropped;
                    stats.truncated += outcome.truncated;
                    pairs.extend(outcome.pairs.iter().cloned());
                }
                Err(e) => {
                    stats.failed_calls += 1;
                    stats.errors.push(format!("{}: {e}", terms[t].tgt_term));
                    last_err = Some(e.clone());
                }
            }
        }
        if let Some(last) = last_err {
            if chunk.iter().all(|r| r.is_err()) {
                return Err(Error::AllCallsFailed {
                    term: terms[t].tgt_term.clone(),
                    last,
                });
            }
        }
    }
    stats.pairs = pairs.len();
    Ok((pairs, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::{GenBehaviour, MockLlm};

    fn cfg() -> GenConfig {
        GenConfig::new(
            LangCode::new("de").unwrap(),
            LangCode::new("en").unwrap(),
            &LanguageNames::default(),
        )
        .unwrap()
    }

    fn term() -> TermEntry {
        TermEntry::new("Bundesministerium für Wissenschaft", "Federal Ministry of Science").unwrap()
    }

    #[test]
    fn prompt_matches_published_example() {
        assert_eq!(
            build_gen_prompt(&term(), &cfg()),
            "Please use the \"Federal Ministry of Science\" to generate just 20 numbered sentences in German-English in one Python dictionary format."
        );
    }

    #[test]
    fn prompt_is_literal() {
        let mut c = cfg();
        c.sentences_per_call = 1;
        let p = build_gen_prompt(&term(), &c);
        assert!(p.contains("just 1 numbered sentences"));
        let quoted = TermEntry::new("x", "the \"big\" one").unwrap();
        assert!(build_gen_prompt(&quoted, &cfg()).contains("\"the \"big\" one\""));
    }

    #[test]
    fn prompt_round_trips_through_parser() {
        let p = parse_gen_prompt(&build_gen_prompt(&term(), &cfg())).unwrap();
        assert_eq!(p.tgt_term, "Federal Ministry of Science");
        assert_eq!(p.src_term, None);
        assert_eq!(p.count, 20);
        assert_eq!(p.src_lang_name, "German");
        let mut c = cfg();
        c.seed_with_both_terms = true;
        let p = parse_gen_prompt(&build_gen_prompt(&term(), &c)).unwrap();
        assert_eq!(p.src_term.as_deref(), Some("Bundesministerium für Wissenschaft"));
    }

    #[test]
    fn dictionary_shape() {
        let raw = r#"Here you go:
{"1": {"de": "Das Ministerium tagt.", "en": "The ministry meets."}, "2": {"de": "Eins.", "en": "One."}}"#;
        let out = parse_gen_response(raw, &term(), &cfg());
        assert_eq!(out.shape, Some(ReplyShape::Dictionary));
        assert_eq!(out.pairs.len(), 2);
        assert_eq!(out.pairs[1].tgt, "One.");
        assert_eq!(out.pairs[0].seed_term, Some(term()));
    }

    #[test]
    fn python_dictionary_variants() {
        let raw = "```python\nsentences = {\n 1: {'German': 'Er sagt \\'Hallo\\'.', 'English': 'He says \\'hello\\'.'},\n 2: ('Zwei.', 'Two.'),\n}\n```";
        let out = parse_gen_response(raw, &term(), &cfg());
        assert_eq!(out.pairs.len(), 2);
        assert_eq!(out.pairs[0].src, "Er sagt 'Hallo'.");
        let raw = r#"{"Das ist gut.": "That is good.", "Ja.": "Yes."}"#;
        assert_eq!(parse_gen_response(raw, &term(), &cfg()).pairs.len(), 2);
        let raw = r#"{"German": ["A.", "B."], "English": ["a.", "b.", "c."]}"#;
        let out = parse_gen_response(raw, &term(), &cfg());
        assert_eq!(out.pairs.len(), 2);
        assert_eq!(out.dropped, 1);
    }

    #[test]
    fn separated_lines_shape() {
        let raw: String = (1..=20)
            .map(|i| format!("{i}. Satz {i}. | Sentence {i}.\n"))
            .collect();
        let out = parse_gen_response(&raw, &term(), &cfg());
        assert_eq!(out.shape, Some(ReplyShape::SeparatedLines));
        assert_eq!(out.pairs.len(), 20);
        assert_eq!(out.pairs[19].tgt, "Sentence 20.");
        for sep in ["||", "\t", " - "] {
            let raw = format!("1) Eins{sep}One\n2) Zwei{sep}Two\n");
            assert_eq!(parse_gen_response(&raw, &term(), &cfg()).pairs.len(), 2, "{sep:?}");
        }
    }

    #[test]
    fn alternating_lines_shape() {
        let raw = "1. German: Das ist eins.\n   English: This is one.\n2. German: Zwei.\n   English: Two.\n";
        let out = parse_gen_response(raw, &term(), &cfg());
        assert_eq!(out.shape, Some(ReplyShape::AlternatingLines));
        assert_eq!(out.pairs.len(), 2);
        let raw = "1. Eins.\n2. One.\n3. Zwei.\n4. Two.\n";
        let out = parse_gen_response(raw, &term(), &cfg());
        assert_eq!(out.pairs.len(), 2);
        assert_eq!(out.pairs[1].src, "Zwei.");
    }

    #[test]
    fn missing_target_is_dropped() {
        let mut map = serde_json::Map::new();
        for i in 1..=20 {
            let mut e = serde_json::Map::new();
            e.insert("de".into(), format!("Satz {i}").into());
            if i != 7 {
                e.insert("en".into(), format!("Sentence {i}").into());
            }
            map.insert(i.to_string(), e.into());
        }
        let raw = serde_json::Value::Object(map).to_string();
        let out = parse_gen_response(&raw, &term(), &cfg());
        assert_eq!(out.pairs.len(), 19);
        assert_eq!(out.dropped, 1);
    }

    #[test]
    fn unparseable_reply() {
        let out = parse_gen_response("Sorry, I cannot help with that.", &term(), &cfg());
        assert!(out.pairs.is_empty());
        assert_eq!(out.shape, None);
    }

    #[test]
    fn truncates_to_requested_count() {
        let mut c = cfg();
        c.sentences_per_call = 3;
        let raw: String = (1..=5).map(|i| format!("{i}. a{i} | b{i}\n")).collect();
        let out = parse_gen_response(&raw, &term(), &c);
        assert_eq!(out.pairs.len(), 3);
        assert_eq!(out.truncated, 2);
    }

    #[test]
    fn two_terms_two_temperatures() {
        let terms = vec![term(), TermEntry::new("Klimawandel", "climate change").unwrap()];
        let llm = MockLlm::new(1);
        let (pairs, stats) = generate_for_terms(&terms, &cfg(), &llm, 4).unwrap();
        assert_eq!(pairs.len(), 80);
        assert_eq!(stats.calls, 4);
        assert_eq!(pairs[0].meta["temperature"], "0");
        assert_eq!(pairs[20].meta["temperature"], "0.3");
        assert_eq!(pairs[40].seed_term.as_ref().unwrap().tgt_term, "climate change");
        assert_eq!(pairs[0].meta["model"], "gpt-3.5-turbo");
        let again = generate_for_terms(&terms, &cfg(), &llm, 1).unwrap().0;
        assert_eq!(pairs, again);
    }

    #[test]
    fn mock_drops_are_counted() {
        let llm = MockLlm::new(5).with_gen(GenBehaviour {
            wrong_language_rate: 0.0,
            missing_target_rate: 0.5,
        });
        let (pairs, stats) = generate_for_terms(&[term()], &cfg(), &llm, 1).unwrap();
        assert_eq!(pairs.len() + stats.dropped, 40);
        assert!(stats.dropped > 0);
    }

    struct FailFor(&'static str);
    impl ChatBackend for FailFor {
        fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
            if req.prompt().contains(self.0) {
                Err(BackendError::network("down"))
            } else {
                MockLlm::new(0).chat(req)
            }
        }
    }

    #[test]
    fn all_calls_failing_names_the_term() {
        let terms = vec![term(), TermEntry::new("Klimawandel", "climate change").unwrap()];
        let err = generate_for_terms(&terms, &cfg(), &FailFor("climate change"), 2).unwrap_err();
        match err {
            Error::AllCallsFailed { term, .. } => assert_eq!(term, "climate change"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
