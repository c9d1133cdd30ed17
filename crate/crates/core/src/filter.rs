//! Deduplication and dual language-identification filtering.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::lang::LangCode;
use crate::record::BilingualPair;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LangDetection {
    pub lang: String,
    pub confidence: f64,
}

pub trait LanguageDetector: Send + Sync {
    fn name(&self) -> &str;
    fn detect(&self, text: &str) -> std::result::Result<LangDetection, String>;
}

/// Accept thresholds given either as fractions or as percentages.
pub fn normalise_threshold(value: f64) -> Result<f64> {
    let v = if value > 1.0 { value / 100.0 } else { value };
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::invalid(format!("threshold {value} is outside [0, 1] and [0, 100]")));
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub primary_threshold: f64,
    pub secondary_threshold: f64,
    pub expected_src_lang: LangCode,
    pub expected_tgt_lang: LangCode,
}

impl FilterConfig {
    pub fn new(expected_src_lang: LangCode, expected_tgt_lang: LangCode) -> Self {
        FilterConfig {
            primary_threshold: 0.9,
            secondary_threshold: 0.9,
            expected_src_lang,
            expected_tgt_lang,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for t in [self.primary_threshold, self.secondary_threshold] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::invalid(format!("threshold {t} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub input_count: usize,
    pub after_dedup: usize,
    pub after_langid: usize,
    pub drop_reasons: BTreeMap<String, usize>,
}

fn dedup_key(pair: &BilingualPair) -> (String, String) {
    let norm = |s: &str| s.trim().nfc().collect::<String>();
    (norm(&pair.src), norm(&pair.tgt))
}

/// Keep the first occurrence of each (src, tgt) after NFC normalisation and trimming.
pub fn dedup(pairs: &[BilingualPair]) -> Vec<BilingualPair> {
    let mut seen = HashSet::new();
    pairs
        .iter()
        .filter(|p| seen.insert(dedup_key(p)))
        .cloned()
        .collect()
}

/// `None` if the pair passes, otherwise the first failing check.
pub fn langid_failure(
    pair: &BilingualPair,
    cfg: &FilterConfig,
    primary: &dyn LanguageDetector,
    secondary: &dyn LanguageDetector,
) -> Option<String> {
    let sides = [("src", &pair.src, &cfg.expected_src_lang), ("tgt", &pair.tgt, &cfg.expected_tgt_lang)];
    let detectors: [(&dyn LanguageDetector, f64); 2] =
        [(primary, cfg.primary_threshold), (secondary, cfg.secondary_threshold)];
    for (side, text, expected) in sides {
        for (det, threshold) in detectors {
            match det.detect(text) {
                Err(_) => return Some(format!("{side}:{}:error", det.name())),
                Ok(d) => {
                    let lang_ok = d.lang.split('-').next() == Some(expected.primary());
                    if !lang_ok {
                        return Some(format!("{side}:{}:wrong_language", det.name()));
                    }
                    if d.confidence < threshold {
                        return Some(format!("{side}:{}:low_confidence", det.name()));
                    }
                }
            }
        }
    }
    None
}

pub fn passes_langid(
    pair: &BilingualPair,
    cfg: &FilterConfig,
    primary: &dyn LanguageDetector,
    secondary: &dyn LanguageDetector,
) -> bool {
    langid_failure(pair, cfg, primary, secondary).is_none()
}

/// Dedup over the whole corpus, then language ID on each surviving pair.
pub fn filter_corpus(
    pairs: &[BilingualPair],
    cfg: &FilterConfig,
    primary: &dyn LanguageDetector,
    secondary: &dyn LanguageDetector,
) -> Result<(Vec<BilingualPair>, FilterStats)> {
    cfg.validate()?;
    let deduped = dedup(pairs);
    let mut stats = FilterStats {
        input_count: pairs.len(),
        after_dedup: deduped.len(),
        ..Default::default()
    };
    if pairs.len() > deduped.len() {
        stats.drop_reasons.insert("duplicate".into(), pairs.len() - deduped.len());
    }
    let verdicts: Vec<Option<String>> = deduped
        .par_iter()
        .map(|p| langid_failure(p, cfg, primary, secondary))
        .collect();
    let mut kept = Vec::with_capacity(deduped.len());
    for (pair, verdict) in deduped.into_iter().zip(verdicts) {
        match verdict {
            None => kept.push(pair),
            Some(reason) => *stats.drop_reasons.entry(reason).or_default() += 1,
        }
    }
    stats.after_langid = kept.len();
    Ok((kept, stats))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SubsetMode {
    #[default]
    All,
    Head {
        k: usize,
    },
    Random {
        k: usize,
    },
}

/// Select the portion of the filtered corpus that is used downstream.
pub fn subset(pairs: &[BilingualPair], mode: SubsetMode, seed: u64) -> Vec<BilingualPair> {
    match mode {
        SubsetMode::All => pairs.to_vec(),
        SubsetMode::Head { k } => pairs.iter().take(k).cloned().collect(),
        SubsetMode::Random { k } if k >= pairs.len() => pairs.to_vec(),
        SubsetMode::Random { k } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = sample(&mut rng, pairs.len(), k).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| pairs[i].clone()).collect()
        }
    }
}

// ---------------------------------------------------------------------------
// Built-in detectors

struct Profile {
    lang: &'static str,
    words: &'static [&'static str],
    chars: &'static str,
}

const COMPACT: &[Profile] = &[
    Profile {
        lang: "en",
        words: &[
            "the", "of", "and", "to", "was", "were", "is", "are", "an", "for", "about", "with", "this", "that", "at",
            "has", "have", "more", "new", "many", "last", "year", "week", "yesterday", "first", "time", "after",
        ],
        chars: "",
    },
    Profile {
        lang: "de",
        words: &[
            "der", "die", "das", "und", "über", "zu", "von", "ist", "sind", "wurde", "haben", "hat", "ein", "eine",
            "für", "mit", "auf", "im", "den", "dem", "des", "nicht", "um", "am", "zum", "nach", "diese", "mehr",
            "gestern", "letztes", "jahr", "woche", "mal",
        ],
        chars: "äöüß",
    },
    Profile {
        lang: "cs",
        words: &[
            "na", "ve", "se", "je", "jsou", "byla", "byl", "bylo", "do", "za", "že", "který", "která", "které",
            "pro", "více", "včera", "loni", "tento", "týden", "poprvé", "chce", "má",
        ],
        chars: "ěščřžůňťď",
    },
];

const EXTENDED: &[Profile] = &[
    Profile {
        lang: "en",
        words: &[
            "the", "of", "and", "to", "was", "were", "is", "are", "an", "for", "about", "with", "this", "that", "at",
            "has", "have", "more", "new", "many", "last", "year", "week", "yesterday", "first", "time", "after",
            "by", "be", "it", "from", "as", "which", "their", "they", "he", "she", "we", "you", "would",
            "been", "not", "or", "but", "can", "said", "his", "her", "its", "our", "these", "those", "there",
        ],
        chars: "",
    },
    Profile {
        lang: "de",
        words: &[
            "der", "die", "das", "und", "über", "zu", "von", "ist", "sind", "wurde", "haben", "hat", "ein", "eine",
            "für", "mit", "auf", "im", "den", "dem", "des", "nicht", "um", "am", "zum", "nach", "diese", "mehr",
            "gestern", "letztes", "jahr", "woche", "mal", "auch", "sich", "es", "wir", "sie", "ich", "wird",
            "werden", "einer", "eines", "bei", "aus", "noch", "nur", "oder", "aber", "wie", "wenn", "dass",
        ],
        chars: "äöüß",
    },
    Profile {
        lang: "cs",
        words: &[
            "na", "ve", "se", "je", "jsou", "byla", "byl", "bylo", "do", "za", "že", "který", "která", "které",
            "pro", "více", "včera", "loni", "tento", "týden", "poprvé", "chce", "má", "jak", "ale", "nebo", "jako",
            "už", "také", "bude", "jeho", "její", "při", "podle", "mezi", "jsme", "není",
        ],
        chars: "ěščřžůňťď",
    },
];

fn is_cjk(c: char) -> bool {
    matches!(c as u32, 0x4E00..=0x9FFF | 0x3400..=0x4DBF | 0xF900..=0xFAFF | 0x20000..=0x2A6DF)
}

/// Deterministic function-word detector for en, de, cs and zh.
pub struct StopwordDetector {
    name: String,
    profiles: &'static [Profile],
    slack: f64,
}

impl StopwordDetector {
    /// Small word lists; confidence is the winning share of indicative hits.
    pub fn compact() -> Self {
        StopwordDetector {
            name: "stopword-compact".into(),
            profiles: COMPACT,
            slack: 0.0,
        }
    }

    /// Longer word lists with a slightly more conservative confidence.
    pub fn extended() -> Self {
        StopwordDetector {
            name: "stopword-extended".into(),
            profiles: EXTENDED,
            slack: 0.05,
        }
    }
}

impl LanguageDetector for StopwordDetector {
    fn name(&self) -> &str {
        &self.name
    }

    fn detect(&self, text: &str) -> std::result::Result<LangDetection, String> {
        let text: String = text.nfc().collect::<String>().to_lowercase();
        let letters: Vec<char> = text.chars().filter(|c| c.is_alphanumeric()).collect();
        if letters.is_empty() {
            return Ok(LangDetection {
                lang: "und".into(),
                confidence: 0.0,
            });
        }
        let cjk = letters.iter().filter(|c| is_cjk(**c)).count() as f64 / letters.len() as f64;
        if cjk >= 0.5 {
            return Ok(LangDetection {
                lang: "zh".into(),
                confidence: cjk * (1.0 - self.slack / 2.0),
            });
        }

        let words: Vec<&str> = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .collect();
        let owners = |w: &str| self.profiles.iter().filter(|p| p.words.contains(&w)).count();
        let mut hits = vec![0.0f64; self.profiles.len()];
        for w in &words {
            if owners(w) != 1 {
                continue;
            }
            if let Some(i) = self.profiles.iter().position(|p| p.words.contains(w)) {
                hits[i] += 1.0;
            }
        }
        for (i, p) in self.profiles.iter().enumerate() {
            if text.chars().any(|c| p.chars.contains(c)) {
                hits[i] += 1.0;
            }
        }
        let total: f64 = hits.iter().sum();
        if total == 0.0 {
            return Ok(LangDetection {
                lang: "und".into(),
                confidence: 0.0,
            });
        }
        let (best, score) = hits
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, h)| if *h > acc.1 { (i, *h) } else { acc });
        Ok(LangDetection {
            lang: self.profiles[best].lang.into(),
            confidence: score / (total + self.slack),
        })
    }
}

/// Exact-text lookup table, falling back to another detector (or `und`) for unknown texts.
pub struct TableDetector {
    name: String,
    table: HashMap<String, LangDetection>,
    fallback: Option<Box<dyn LanguageDetector>>,
}

impl TableDetector {
    pub fn new(name: impl Into<String>, table: HashMap<String, LangDetection>) -> Self {
        TableDetector {
            name: name.into(),
            table,
            fallback: None,
        }
    }

    pub fn with_fallback(mut self, fallback: Box<dyn LanguageDetector>) -> Self {
        self.fallback = Some(fallback);
        self
    }
}

impl LanguageDetector for TableDetector {
    fn name(&self) -> &str {
        &self.name
    }

    fn detect(&self, text: &str) -> std::result::Result<LangDetection, String> {
        if let Some(d) = self.table.get(text) {
            return Ok(d.clone());
        }
        match &self.fallback {
            Some(f) => f.detect(text),
            None => Ok(LangDetection {
                lang: "und".into(),
                confidence: 0.0,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::{GenBehaviour, MockLlm};
    use crate::datagen::{generate_for_terms, GenConfig};
    use crate::lang::LanguageNames;
    use crate::record::TermEntry;

    fn code(s: &str) -> LangCode {
        LangCode::new(s).unwrap()
    }

    fn pair(s: &str, t: &str) -> BilingualPair {
        BilingualPair::generic(s, t)
    }

    fn table(entries: &[(&str, &str, f64)]) -> TableDetector {
        TableDetector::new(
            "table",
            entries
                .iter()
                .map(|(t, l, c)| {
                    (
                        t.to_string(),
                        LangDetection {
                            lang: l.to_string(),
                            confidence: *c,
                        },
                    )
                })
                .collect(),
        )
    }

    #[test]
    fn dedup_keeps_first() {
        let input = vec![pair("a", "b"), pair("a", "b"), pair("a", "c")];
        assert_eq!(dedup(&input), vec![pair("a", "b"), pair("a", "c")]);
        assert!(dedup(&[]).is_empty());
        let ws = vec![pair("a", "b"), pair("a ", "b\n")];
        assert_eq!(dedup(&ws).len(), 1);
        let nfc = vec![pair("caf\u{e9}", "x"), pair("cafe\u{301}", "x")];
        assert_eq!(dedup(&nfc).len(), 1);
        let case = vec![pair("A", "b"), pair("a", "b")];
        assert_eq!(dedup(&case).len(), 2);
    }

    #[test]
    fn threshold_boundary() {
        let cfg = FilterConfig::new(code("de"), code("en"));
        let d1 = table(&[("s", "de", 0.95), ("t", "en", 0.99), ("t2", "en", 0.89), ("t3", "en", 0.9)]);
        let d2 = table(&[("s", "de", 0.93), ("t", "en", 0.97), ("t2", "en", 0.97), ("t3", "en", 0.9)]);
        assert!(passes_langid(&pair("s", "t"), &cfg, &d1, &d2));
        assert!(!passes_langid(&pair("s", "t2"), &cfg, &d1, &d2));
        assert!(passes_langid(&pair("s", "t3"), &cfg, &d1, &d2));
        let wrong = table(&[("s", "en", 0.99), ("t", "en", 0.99)]);
        assert_eq!(
            langid_failure(&pair("s", "t"), &cfg, &wrong, &d2).as_deref(),
            Some("src:table:wrong_language")
        );
    }

    struct Broken;
    impl LanguageDetector for Broken {
        fn name(&self) -> &str {
            "broken"
        }
        fn detect(&self, _: &str) -> std::result::Result<LangDetection, String> {
            Err("boom".into())
        }
    }

    #[test]
    fn detector_failure_drops_pair() {
        let cfg = FilterConfig::new(code("de"), code("en"));
        let (out, stats) = filter_corpus(&[pair("s", "t")], &cfg, &Broken, &Broken).unwrap();
        assert!(out.is_empty());
        assert_eq!(stats.drop_reasons["src:broken:error"], 1);
    }

    #[test]
    fn all_duplicates() {
        let cfg = FilterConfig::new(code("de"), code("en"));
        let d = table(&[("Der Tag", "de", 1.0), ("The day", "en", 1.0)]);
        let input = vec![pair("Der Tag", "The day"); 7];
        let (out, stats) = filter_corpus(&input, &cfg, &d, &d).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(stats.after_dedup, 1);
        assert_eq!(stats.after_langid, 1);
        assert_eq!(stats.drop_reasons["duplicate"], 6);
    }

    #[test]
    fn stopword_detector() {
        for d in [StopwordDetector::compact(), StopwordDetector::extended()] {
            let r = d.detect("Der Bericht über das Gesetz wurde gestern veröffentlicht.").unwrap();
            assert_eq!(r.lang, "de");
            assert!(r.confidence >= 0.9);
            let r = d.detect("The report on the law was published yesterday.").unwrap();
            assert_eq!(r.lang, "en");
            let r = d.detect("Zpráva o zákonu byla zveřejněna včera.").unwrap();
            assert_eq!(r.lang, "cs");
            let r = d.detect("关于气候变化的报告昨天发布了。").unwrap();
            assert_eq!(r.lang, "zh");
            assert_eq!(d.detect("12345").unwrap().lang, "und");
        }
    }

    #[test]
    fn mock_generated_corpus_passes() {
        let names = LanguageNames::default();
        let terms = vec![
            TermEntry::new("Klimawandel", "climate change").unwrap(),
            TermEntry::new("Bundesministerium für Wissenschaft", "Federal Ministry of Science").unwrap(),
        ];
        let cfg = FilterConfig::new(code("de"), code("en"));
        let gen = GenConfig::new(code("de"), code("en"), &names).unwrap();
        let llm = MockLlm::new(2).with_glossary(&terms);
        let (pairs, _) = generate_for_terms(&terms, &gen, &llm, 1).unwrap();
        let (a, b) = (StopwordDetector::compact(), StopwordDetector::extended());
        let (out, stats) = filter_corpus(&pairs, &cfg, &a, &b).unwrap();
        assert_eq!(out.len(), stats.after_dedup, "{:?}", stats.drop_reasons);

        let llm = llm.with_gen(GenBehaviour {
            wrong_language_rate: 1.0,
            missing_target_rate: 0.0,
        });
        let (pairs, _) = generate_for_terms(&terms, &gen, &llm, 1).unwrap();
        let (out, _) = filter_corpus(&pairs, &cfg, &a, &b).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn subsets() {
        let pairs: Vec<_> = (0..10).map(|i| pair(&i.to_string(), "x")).collect();
        assert_eq!(subset(&pairs, SubsetMode::All, 0).len(), 10);
        assert_eq!(subset(&pairs, SubsetMode::Head { k: 3 }, 0), pairs[..3].to_vec());
        let r = subset(&pairs, SubsetMode::Random { k: 4 }, 9);
        assert_eq!(r.len(), 4);
        assert_eq!(r, subset(&pairs, SubsetMode::Random { k: 4 }, 9));
        assert!(r.windows(2).all(|w| w[0].src.parse::<u32>().unwrap() < w[1].src.parse::<u32>().unwrap()));
    }

    #[test]
    fn thresholds_in_percent() {
        assert_eq!(normalise_threshold(90.0).unwrap(), 0.9);
        assert_eq!(normalise_threshold(0.9).unwrap(), 0.9);
        assert!(normalise_threshold(-1.0).is_err());
    }
}
