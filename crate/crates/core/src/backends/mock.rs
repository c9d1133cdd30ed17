//! Deterministic offline backends.
//!
//! Every mock output is a pure function of its seed and the request, so
//! repeated runs over the same inputs produce identical artifacts.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    BackendError, ChatBackend, ChatRequest, MtBackend, ScoreBackend, ScoreRequest, TranslateRequest,
};
use crate::lang::LanguageNames;
use crate::record::TermEntry;
use crate::{ape, datagen};

/// 64-bit seed derived from a mock seed and arbitrary request bytes.
pub fn request_seed(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

fn unit(seed: u64, parts: &[&[u8]]) -> f64 {
    (request_seed(seed, parts) >> 11) as f64 / (1u64 << 53) as f64
}

/// How the mock LLM answers post-editing prompts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ApeBehaviour {
    /// Insert every requested term.
    InsertAll,
    /// Insert each requested term with the given probability.
    InsertSome { p: f64 },
    /// Return the translation untouched.
    Unchanged,
    /// Return unrelated text.
    Garbage,
    /// Fail every call.
    Fail,
    /// Drop the second half of the translation, then insert every term.
    TruncateAndInsert,
}

/// How the mock LLM answers generation prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenBehaviour {
    /// Probability that an entry's source side comes back in the target language.
    pub wrong_language_rate: f64,
    /// Probability that an entry comes back without its target side.
    pub missing_target_rate: f64,
}

impl Default for GenBehaviour {
    fn default() -> Self {
        GenBehaviour {
            wrong_language_rate: 0.0,
            missing_target_rate: 0.0,
        }
    }
}

/// Seeded stand-in for a chat LLM.
///
/// Generation prompts get a JSON dictionary of numbered sentence pairs built
/// from a small parallel phrase bank; post-editing prompts are answered
/// according to [`ApeBehaviour`]; anything else gets a hash-derived string.
pub struct MockLlm {
    seed: u64,
    gen: GenBehaviour,
    ape: ApeBehaviour,
    glossary: HashMap<String, String>,
    names: LanguageNames,
}

impl MockLlm {
    pub fn new(seed: u64) -> Self {
        MockLlm {
            seed,
            gen: GenBehaviour::default(),
            ape: ApeBehaviour::InsertAll,
            glossary: HashMap::new(),
            names: LanguageNames::default(),
        }
    }

    pub fn with_ape(mut self, ape: ApeBehaviour) -> Self {
        self.ape = ape;
        self
    }

    pub fn with_gen(mut self, gen: GenBehaviour) -> Self {
        self.gen = gen;
        self
    }

    pub fn with_names(mut self, names: LanguageNames) -> Self {
        self.names = names;
        self
    }

    /// Target-to-source term table used to render the source side of
    /// generated sentences when the prompt only names the target term.
    pub fn with_glossary(mut self, terms: &[TermEntry]) -> Self {
        self.glossary = terms
            .iter()
            .map(|t| (t.tgt_term.clone(), t.src_term.clone()))
            .collect();
        self
    }

    fn rng_for(&self, req: &ChatRequest) -> ChaCha8Rng {
        let body = serde_json::to_vec(req).expect("serializable request");
        ChaCha8Rng::seed_from_u64(request_seed(self.seed, &[&body]))
    }

    fn generation_reply(&self, prompt: &datagen::GenPrompt, rng: &mut ChaCha8Rng) -> String {
        let src_code = self.names.code_for(&prompt.src_lang_name);
        let tgt_code = self.names.code_for(&prompt.tgt_lang_name);
        let src_key = src_code.as_ref().map(|c| c.as_str().to_string()).unwrap_or_else(|| "source".into());
        let tgt_key = tgt_code.as_ref().map(|c| c.as_str().to_string()).unwrap_or_else(|| "target".into());
        let src_bank = bank(src_code.as_ref().map(|c| c.primary()).unwrap_or("en"));
        let tgt_bank = bank(tgt_code.as_ref().map(|c| c.primary()).unwrap_or("en"));
        let src_term = prompt
            .src_term
            .clone()
            .or_else(|| self.glossary.get(&prompt.tgt_term).cloned())
            .unwrap_or_else(|| prompt.tgt_term.clone());

        let combos = TEMPLATES * CONTEXTS;
        let n = prompt.count.min(combos);
        let mut map = serde_json::Map::new();
        for (i, combo) in sample(rng, combos, n).into_iter().enumerate() {
            let (t, c) = (combo / CONTEXTS, combo % CONTEXTS);
            let tgt = render(tgt_bank, t, c, &prompt.tgt_term);
            let src = if rng.random::<f64>() < self.gen.wrong_language_rate {
                tgt.clone()
            } else {
                render(src_bank, t, c, &src_term)
            };
            let mut entry = serde_json::Map::new();
            entry.insert(src_key.clone(), src.into());
            if rng.random::<f64>() >= self.gen.missing_target_rate {
                entry.insert(tgt_key.clone(), tgt.into());
            }
            map.insert((i + 1).to_string(), entry.into());
        }
        serde_json::to_string_pretty(&serde_json::Value::Object(map)).expect("json")
    }

    fn ape_reply(&self, prompt: &ape::ApePrompt, rng: &mut ChaCha8Rng) -> Result<String, BackendError> {
        let mut text = prompt.translation.clone();
        match self.ape {
            ApeBehaviour::Unchanged => return Ok(text),
            ApeBehaviour::Fail => return Err(BackendError::reported("mock LLM failure", false)),
            ApeBehaviour::Garbage => {
                return Ok(format!("zzq qqx {:016x}", rng.random::<u64>()));
            }
            ApeBehaviour::TruncateAndInsert => {
                let words: Vec<&str> = text.split_whitespace().collect();
                text = words[..words.len() / 2].join(" ");
            }
            ApeBehaviour::InsertAll | ApeBehaviour::InsertSome { .. } => {}
        }
        for term in &prompt.terms {
            let keep = match self.ape {
                ApeBehaviour::InsertSome { p } => rng.random::<f64>() < p,
                _ => true,
            };
            if keep {
                text = insert_term(&text, term);
            }
        }
        Ok(text)
    }
}

/// Replace the first literal occurrence of the source term, or else insert
/// the target term before any sentence-final punctuation.
pub fn insert_term(text: &str, term: &TermEntry) -> String {
    let bounded = |pos: usize| {
        let before = text[..pos].chars().next_back();
        let after = text[pos + term.src_term.len()..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    };
    if let Some((pos, _)) = text.match_indices(&term.src_term).find(|(pos, _)| bounded(*pos)) {
        let mut out = String::with_capacity(text.len() + term.tgt_term.len());
        out.push_str(&text[..pos]);
        out.push_str(&term.tgt_term);
        out.push_str(&text[pos + term.src_term.len()..]);
        return out;
    }
    let trimmed = text.trim_end();
    let body = trimmed.trim_end_matches(['.', '!', '?', '。', '！', '？']);
    let tail = &trimmed[body.len()..];
    if body.is_empty() {
        format!("{}{}", term.tgt_term, tail)
    } else {
        format!("{} {}{}", body, term.tgt_term, tail)
    }
}

impl ChatBackend for MockLlm {
    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let mut rng = self.rng_for(req);
        let prompt = req.prompt();
        if let Some(p) = datagen::parse_gen_prompt(prompt) {
            return Ok(self.generation_reply(&p, &mut rng));
        }
        if let Some(p) = ape::parse_ape_prompt(prompt) {
            return self.ape_reply(&p, &mut rng);
        }
        Ok(format!("mock reply {:016x}", rng.random::<u64>()))
    }
}

/// Appends `-XX` (upper-cased target code) to every non-empty text.
pub struct EchoMt;

impl MtBackend for EchoMt {
    fn translate(&self, req: &TranslateRequest) -> Result<Vec<String>, BackendError> {
        let suffix = req.target_lang.as_str().to_uppercase();
        Ok(req
            .texts
            .iter()
            .map(|t| if t.is_empty() { String::new() } else { format!("{t}-{suffix}") })
            .collect())
    }
}

/// Returns every text unchanged.
pub struct CopyMt;

impl MtBackend for CopyMt {
    fn translate(&self, req: &TranslateRequest) -> Result<Vec<String>, BackendError> {
        Ok(req.texts.clone())
    }
}

/// Greedy longest-match phrase translator.
///
/// Terms are left untranslated with probability `miss_rate`, decided per
/// (text, term) from the seed, which gives realistic partial term coverage.
pub struct LexiconMt {
    seed: u64,
    miss_rate: f64,
    // (source, target, is_term), longest source first
    entries: Vec<(String, String, bool)>,
}

impl LexiconMt {
    pub fn new(seed: u64, miss_rate: f64, phrases: Vec<(String, String)>, terms: &[TermEntry]) -> Self {
        let mut entries: Vec<(String, String, bool)> = phrases
            .into_iter()
            .map(|(s, t)| (s, t, false))
            .chain(terms.iter().map(|t| (t.src_term.clone(), t.tgt_term.clone(), true)))
            .filter(|(s, _, _)| !s.is_empty())
            .collect();
        entries.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        entries.dedup_by(|a, b| a.0 == b.0);
        LexiconMt {
            seed,
            miss_rate,
            entries,
        }
    }

    pub fn translate_one(&self, text: &str) -> String {
        let mut out = String::with_capacity(text.len());
        let mut rest = text;
        'outer: while !rest.is_empty() {
            for (src, tgt, is_term) in &self.entries {
                if rest.starts_with(src.as_str()) {
                    let miss = *is_term
                        && unit(self.seed, &[text.as_bytes(), src.as_bytes()]) < self.miss_rate;
                    out.push_str(if miss { src } else { tgt });
                    rest = &rest[src.len()..];
                    continue 'outer;
                }
            }
            let ch = rest.chars().next().unwrap();
            out.push(ch);
            rest = &rest[ch.len_utf8()..];
        }
        out
    }
}

impl MtBackend for LexiconMt {
    fn translate(&self, req: &TranslateRequest) -> Result<Vec<String>, BackendError> {
        Ok(req.texts.iter().map(|t| self.translate_one(t)).collect())
    }
}

/// Returns the same log-probability for every pair.
pub struct ConstantScorer {
    log_prob: f64,
}

impl ConstantScorer {
    pub fn new(log_prob: f64) -> Self {
        assert!(log_prob <= 0.0, "log-probability must be <= 0");
        ConstantScorer { log_prob }
    }
}

impl ScoreBackend for ConstantScorer {
    fn score_pairs(&self, req: &ScoreRequest) -> Result<Vec<f64>, BackendError> {
        Ok(vec![self.log_prob; req.pairs.len()])
    }
}

/// A copy model: probability 1 when target equals source, otherwise the
/// log of the character-bigram Dice similarity (floored at 1e-6).
pub struct CopyScorer;

fn bigrams(s: &str) -> HashMap<(char, char), usize> {
    let chars: Vec<char> = s.chars().collect();
    let mut m = HashMap::new();
    for w in chars.windows(2) {
        *m.entry((w[0], w[1])).or_insert(0) += 1;
    }
    m
}

fn dice(a: &str, b: &str) -> f64 {
    let (x, y) = (bigrams(a), bigrams(b));
    let total: usize = x.values().sum::<usize>() + y.values().sum::<usize>();
    if total == 0 {
        return 0.0;
    }
    let common: usize = x.iter().map(|(k, v)| (*v).min(*y.get(k).unwrap_or(&0))).sum();
    2.0 * common as f64 / total as f64
}

impl ScoreBackend for CopyScorer {
    fn score_pairs(&self, req: &ScoreRequest) -> Result<Vec<f64>, BackendError> {
        Ok(req
            .pairs
            .iter()
            .map(|(s, t)| if s == t { 0.0 } else { dice(s, t).max(1e-6).ln().min(0.0) })
            .collect())
    }
}

/// Hash-derived log-probabilities, uniform in probability space on
/// `[min_prob, max_prob]`.
pub struct SeededScorer {
    seed: u64,
    min_prob: f64,
    max_prob: f64,
}

impl SeededScorer {
    pub fn new(seed: u64, min_prob: f64, max_prob: f64) -> Self {
        assert!(0.0 < min_prob && min_prob <= max_prob && max_prob <= 1.0);
        SeededScorer {
            seed,
            min_prob,
            max_prob,
        }
    }
}

impl ScoreBackend for SeededScorer {
    fn score_pairs(&self, req: &ScoreRequest) -> Result<Vec<f64>, BackendError> {
        let dir = req.direction.to_string();
        Ok(req
            .pairs
            .iter()
            .map(|(s, t)| {
                let u = unit(self.seed, &[dir.as_bytes(), s.as_bytes(), t.as_bytes()]);
                (self.min_prob + u * (self.max_prob - self.min_prob)).ln()
            })
            .collect())
    }
}

const TEMPLATES: usize = 12;
const CONTEXTS: usize = 8;

struct Bank {
    templates: [&'static str; TEMPLATES],
    contexts: [&'static str; CONTEXTS],
}

fn render(bank: &Bank, template: usize, context: usize, term: &str) -> String {
    bank.templates[template]
        .replace("{T}", term)
        .replace("{C}", bank.contexts[context])
}

fn bank(code: &str) -> &'static Bank {
    match code {
        "de" => &DE,
        "cs" => &CS,
        "zh" => &ZH,
        _ => &EN,
    }
}

static EN: Bank = Bank {
    templates: [
        "The report on {T} was published {C}.",
        "Experts discussed {T} at the conference {C}.",
        "The government wants to improve {T} {C}.",
        "Many citizens asked questions about {T} {C}.",
        "The new law regulates {T} {C}.",
        "Researchers analysed the role of {T} {C}.",
        "The company invested heavily in {T} {C}.",
        "A committee was set up to review {T} {C}.",
        "The minister spoke about {T} {C}.",
        "Local authorities are responsible for {T} {C}.",
        "The debate about {T} continued {C}.",
        "Students learned more about {T} {C}.",
    ],
    contexts: [
        "yesterday",
        "last year",
        "in Berlin",
        "this week",
        "on Monday",
        "in the capital",
        "after long negotiations",
        "for the first time",
    ],
};

static DE: Bank = Bank {
    templates: [
        "Der Bericht über {T} wurde {C} veröffentlicht.",
        "Experten haben {C} auf der Konferenz über {T} diskutiert.",
        "Die Regierung will {T} {C} verbessern.",
        "Viele Bürger haben {C} Fragen zu {T} gestellt.",
        "Das neue Gesetz regelt {C} {T}.",
        "Forscher haben {C} die Rolle von {T} untersucht.",
        "Das Unternehmen hat {C} stark in {T} investiert.",
        "Ein Ausschuss wurde {C} eingesetzt, um {T} zu prüfen.",
        "Der Minister sprach {C} über {T}.",
        "Die lokalen Behörden sind {C} für {T} zuständig.",
        "Die Debatte über {T} ging {C} weiter.",
        "Die Studenten haben {C} mehr über {T} gelernt.",
    ],
    contexts: [
        "gestern",
        "letztes Jahr",
        "in Berlin",
        "diese Woche",
        "am Montag",
        "in der Hauptstadt",
        "nach langen Verhandlungen",
        "zum ersten Mal",
    ],
};

static CS: Bank = Bank {
    templates: [
        "Zpráva o {T} byla zveřejněna {C}.",
        "Odborníci diskutovali o {T} na konferenci {C}.",
        "Vláda chce {C} zlepšit {T}.",
        "Mnoho občanů se {C} ptalo na {T}.",
        "Nový zákon {C} upravuje {T}.",
        "Vědci {C} zkoumali roli {T}.",
        "Společnost {C} hodně investovala do {T}.",
        "Byl {C} zřízen výbor, který má přezkoumat {T}.",
        "Ministr {C} hovořil o {T}.",
        "Místní úřady jsou {C} odpovědné za {T}.",
        "Debata o {T} pokračovala {C}.",
        "Studenti se {C} dozvěděli více o {T}.",
    ],
    contexts: [
        "včera",
        "loni",
        "v Praze",
        "tento týden",
        "v pondělí",
        "v hlavním městě",
        "po dlouhých jednáních",
        "poprvé",
    ],
};

static ZH: Bank = Bank {
    templates: [
        "关于{T}的报告{C}发布了。",
        "专家们{C}在会议上讨论了{T}。",
        "政府希望{C}改善{T}。",
        "许多市民{C}询问了有关{T}的问题。",
        "新法律{C}规范了{T}。",
        "研究人员{C}分析了{T}的作用。",
        "该公司{C}在{T}上投入了大量资金。",
        "{C}成立了一个委员会来审查{T}。",
        "部长{C}谈到了{T}。",
        "地方当局{C}负责{T}。",
        "关于{T}的辩论{C}仍在继续。",
        "学生们{C}进一步了解了{T}。",
    ],
    contexts: [
        "昨天",
        "去年",
        "在北京",
        "本周",
        "周一",
        "在首都",
        "经过长时间谈判后",
        "第一次",
    ],
};
