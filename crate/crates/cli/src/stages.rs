//! The eight pipeline stages, their declared inputs and outputs, and the
//! driver that hashes, writes and records them.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context as _, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use termweave_core::ape::{post_edit_corpus, ApeStats};
use termweave_core::backends::http::{HttpChat, HttpMt, HttpOptions, HttpScorer};
use termweave_core::backends::mock::{request_seed, EchoMt, LexiconMt, MockLlm, SeededScorer};
use termweave_core::backends::{
    map_bounded, ChatBackend, Direction, MtBackend, RetryPolicy, ScoreBackend, TranslateRequest,
};
use termweave_core::datagen::generate_for_terms;
use termweave_core::eval::{build_reports, EvalInputs};
use termweave_core::filter::{filter_corpus, subset, FilterStats, StopwordDetector};
use termweave_core::mixprep::{mix_and_split, oversample_to, sample_generic, trainer_files};
use termweave_core::record::{parse_term_tsv, validate_records};
use termweave_core::scorer::{baseline_self_score, build_quality_report, mean_exp_score, oriented_pairs, DirectionScore};
use termweave_core::termcheck::TermMatcher;
use termweave_core::{jsonl, BilingualPair, SegmentRecord, TermEntry, TermSetLabel};

use crate::cache::{key_for_value, CacheCounters, CachingChat, ChatCache, NoNetworkChat};
use crate::config::{BackendMode, RunConfig};
use crate::error::CliError;
use crate::manifest::{self, FileHash, Manifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Datagen,
    Filter,
    Score,
    Mixprep,
    Translate,
    Termcheck,
    Ape,
    Eval,
}

pub const ALL_STAGES: [Stage; 8] = [
    Stage::Datagen,
    Stage::Filter,
    Stage::Score,
    Stage::Mixprep,
    Stage::Translate,
    Stage::Termcheck,
    Stage::Ape,
    Stage::Eval,
];

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Datagen => "datagen",
            Stage::Filter => "filter",
            Stage::Score => "score",
            Stage::Mixprep => "mixprep",
            Stage::Translate => "translate",
            Stage::Termcheck => "termcheck",
            Stage::Ape => "ape",
            Stage::Eval => "eval",
        }
    }

    pub fn from_name(name: &str) -> Option<Stage> {
        ALL_STAGES.into_iter().find(|s| s.name() == name)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Stage outputs live under `<stage>/` in the work dir.
pub fn producer(name: &str) -> Option<Stage> {
    name.split_once('/').and_then(|(head, _)| Stage::from_name(head))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub path: PathBuf,
}

pub struct Context {
    pub cfg: RunConfig,
    pub offline: bool,
    pub cache: ChatCache,
}

fn derive_seed(seed: u64, label: &str) -> u64 {
    request_seed(seed, &[label.as_bytes()])
}

fn env_or(value: &Option<String>, var: &str, what: &str) -> Result<String, CliError> {
    value
        .clone()
        .or_else(|| std::env::var(var).ok())
        .ok_or_else(|| CliError::Config(format!("{what} URL not configured (set it in the config or {var})")))
}

fn parse_lexicon(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .filter_map(|l| l.split_once('\t'))
        .map(|(s, t)| (s.to_string(), t.to_string()))
        .collect()
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(read_text(path)?.lines().map(str::to_string).collect())
}

fn read_terms(path: &Path) -> Result<Vec<TermEntry>> {
    parse_term_tsv(&read_text(path)?).with_context(|| format!("in {}", path.display()))
}

/// Fine-tuned engine and optional baseline engine.
type Engines = (Box<dyn MtBackend>, Option<Box<dyn MtBackend>>);

/// Files a stage produced, keyed by work-dir relative name.
struct Produced {
    files: Vec<(String, Vec<u8>)>,
    summary: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    Ran { summary: String, cache: CacheCounters },
    UpToDate,
}

#[derive(Debug, Clone)]
pub struct StageReport {
    pub stage: Stage,
    pub status: Status,
    pub manifest_digest: String,
}

#[derive(Debug, Serialize)]
struct FilterSummary {
    #[serde(flatten)]
    stats: FilterStats,
    used: usize,
}

#[derive(Debug, Serialize)]
struct ApeSummary {
    set1: ApeStats,
    set2: ApeStats,
}

impl Context {
    pub fn new(cfg: RunConfig, offline: bool) -> Result<Self> {
        let cache = ChatCache::open(&cfg.cache_dir)
            .with_context(|| format!("cannot create cache dir {}", cfg.cache_dir.display()))?;
        Ok(Context { cfg, offline, cache })
    }

    pub fn work(&self, name: &str) -> PathBuf {
        self.cfg.work_dir.join(name)
    }

    fn mock(&self) -> bool {
        self.cfg.backends.mode == BackendMode::Mock
    }

    fn http_opts(&self) -> HttpOptions {
        let b = &self.cfg.backends;
        HttpOptions {
            timeout: Duration::from_secs(b.timeout_secs),
            retry: RetryPolicy {
                max_attempts: b.max_attempts.max(1),
                ..RetryPolicy::default()
            },
            rate_limit: b.rate_per_sec.map(|r| (r, b.burst)),
        }
    }

    fn forbid_network(&self, what: &str) -> Result<(), CliError> {
        if self.offline {
            return Err(CliError::Offline(format!("{what} needs the network; use mock backends")));
        }
        Ok(())
    }

    fn llm(&self, terms: &[TermEntry]) -> Result<CachingChat<'_, Box<dyn ChatBackend>>> {
        let inner: Box<dyn ChatBackend> = match self.cfg.backends.mode {
            BackendMode::Mock => Box::new(
                MockLlm::new(self.cfg.llm_seed())
                    .with_ape(self.cfg.mock.ape)
                    .with_gen(self.cfg.mock.gen.clone())
                    .with_names(self.cfg.names())
                    .with_glossary(terms),
            ),
            BackendMode::Http if self.offline => Box::new(NoNetworkChat),
            BackendMode::Http => {
                let url = env_or(&self.cfg.backends.llm_url, termweave_core::backends::http::ENV_LLM_URL, "LLM")?;
                let key = std::env::var(&self.cfg.backends.api_key_env).ok();
                Box::new(HttpChat::new(url, key, &self.http_opts()))
            }
        };
        Ok(CachingChat::new(&self.cache, inner))
    }

    fn scorer(&self) -> Result<Box<dyn ScoreBackend>> {
        if self.mock() {
            let m = &self.cfg.mock;
            return Ok(Box::new(SeededScorer::new(
                derive_seed(self.cfg.seed, "scorer"),
                m.scorer_min_prob,
                m.scorer_max_prob,
            )));
        }
        self.forbid_network("scoring")?;
        let url = env_or(&self.cfg.backends.scorer_url, termweave_core::backends::http::ENV_SCORER_URL, "scorer")?;
        Ok(Box::new(HttpScorer::new(&url, &self.http_opts())))
    }

    fn lexicon(&self) -> Result<Vec<(String, String)>> {
        match &self.cfg.inputs.lexicon {
            Some(p) => Ok(parse_lexicon(&read_text(p)?)),
            None => Ok(Vec::new()),
        }
    }

    /// Reference model that translates the scoring baseline.
    fn reference_mt(&self, dir: &Direction) -> Result<Box<dyn MtBackend>> {
        if self.mock() {
            if self.cfg.inputs.lexicon.is_none() {
                return Ok(Box::new(EchoMt));
            }
            let mut phrases = self.lexicon()?;
            let mut terms = read_terms(&self.cfg.inputs.terms)?;
            if dir.source != self.cfg.src_lang {
                phrases = phrases.into_iter().map(|(s, t)| (t, s)).collect();
                terms = terms
                    .into_iter()
                    .map(|t| TermEntry::new(&t.tgt_term, &t.src_term))
                    .collect::<Result<_, _>>()?;
            }
            return Ok(Box::new(LexiconMt::new(derive_seed(self.cfg.seed, "reference-mt"), 0.0, phrases, &terms)));
        }
        self.forbid_network("baseline translation")?;
        let b = &self.cfg.backends;
        let url = b
            .reference_mt_url
            .clone()
            .map(Ok)
            .unwrap_or_else(|| env_or(&b.scorer_url, termweave_core::backends::http::ENV_SCORER_URL, "reference MT"))?;
        Ok(Box::new(HttpMt::new(&url, &self.http_opts())))
    }

    fn stage_inputs(&self, stage: Stage) -> Vec<Artifact> {
        let i = &self.cfg.inputs;
        let ext = |key: &str, p: &PathBuf| Artifact {
            name: format!("inputs.{key}"),
            path: p.clone(),
        };
        let work = |name: &str| Artifact {
            name: name.to_string(),
            path: self.work(name),
        };
        let mut v = match stage {
            Stage::Datagen => vec![ext("terms", &i.terms)],
            Stage::Filter => vec![work("datagen/pairs.jsonl")],
            Stage::Score => vec![work("filter/used.jsonl")],
            Stage::Mixprep => vec![work("filter/used.jsonl"), ext("generic", &i.generic)],
            Stage::Translate => vec![ext("segments", &i.segments), work("mixprep/train.tgt.txt")],
            Stage::Termcheck => vec![work("translate/segments.jsonl")],
            Stage::Ape => vec![work("translate/segments.jsonl")],
            Stage::Eval => vec![work("ape/segments.jsonl")],
        };
        let mock_tables = self.mock() && matches!(stage, Stage::Score | Stage::Translate);
        if mock_tables {
            v.push(ext("terms", &i.terms));
            if let Some(l) = &i.lexicon {
                v.push(ext("lexicon", l));
            }
        }
        if matches!(stage, Stage::Termcheck | Stage::Eval) && self.work("translate/baseline.txt").exists() {
            v.push(work("translate/baseline.txt"));
        }
        if stage == Stage::Eval {
            if let Some(r) = &i.refs {
                v.push(ext("refs", r));
            }
            if let Some(x) = &i.external_scores {
                v.push(ext("external_scores", x));
            }
        }
        v
    }

    fn config_view(&self, stage: Stage) -> Value {
        let c = &self.cfg;
        let mode = c.backends.mode;
        let mock = mode == BackendMode::Mock;
        let pair = json!([c.src_lang, c.tgt_lang]);
        match stage {
            Stage::Datagen => json!({
                "pair": pair, "names": c.language_names, "datagen": c.datagen, "mode": mode,
                "mock_gen": mock.then_some(&c.mock.gen), "llm_seed": mock.then_some(c.llm_seed()),
            }),
            Stage::Filter => json!({"pair": pair, "filter": c.filter, "seed": c.seed}),
            Stage::Score => json!({
                "pair": pair, "score": c.score, "mode": mode, "seed": c.seed,
                "mock_scorer": mock.then_some([c.mock.scorer_min_prob, c.mock.scorer_max_prob]),
            }),
            Stage::Mixprep => json!({
                "mixprep": c.mixprep, "generic_size": c.generic_size().ok(), "seed": c.seed,
            }),
            Stage::Translate => json!({
                "pair": pair, "mode": mode, "seed": c.seed, "beam_size": c.score.beam_size,
                "mock_miss": mock.then_some([c.mock.baseline_miss_rate, c.mock.finetuned_miss_rate]),
            }),
            Stage::Termcheck => json!({"pair": pair, "match_mode": c.ape.match_mode}),
            Stage::Ape => json!({
                "pair": pair, "names": c.language_names, "ape": c.ape, "mode": mode,
                "mock_ape": mock.then_some(c.mock.ape), "llm_seed": mock.then_some(c.llm_seed()),
            }),
            Stage::Eval => json!({"pair": pair, "eval": c.eval, "match_mode": c.ape.match_mode}),
        }
    }

    pub fn config_hash(&self, stage: Stage) -> String {
        key_for_value(&self.config_view(stage))
    }

    fn direction(&self) -> Direction {
        Direction::new(self.cfg.src_lang.clone(), self.cfg.tgt_lang.clone())
    }

    fn matcher(&self) -> TermMatcher {
        TermMatcher::new(self.cfg.tgt_lang.clone(), self.cfg.ape.match_mode)
    }

    fn execute(&self, stage: Stage) -> Result<Produced> {
        match stage {
            Stage::Datagen => self.datagen(),
            Stage::Filter => self.filter(),
            Stage::Score => self.score(),
            Stage::Mixprep => self.mixprep(),
            Stage::Translate => self.translate(),
            Stage::Termcheck => self.termcheck(),
            Stage::Ape => self.ape(),
            Stage::Eval => self.eval(),
        }
    }

    fn datagen(&self) -> Result<Produced> {
        let terms = read_terms(&self.cfg.inputs.terms)?;
        let gen = self.cfg.gen_config()?;
        let llm = self.llm(&terms)?;
        let (pairs, stats) = generate_for_terms(&terms, &gen, &llm, self.cfg.parallelism)?;
        for e in stats.errors.iter().take(5) {
            log::warn!("{e}");
        }
        Ok(Produced {
            summary: format!(
                "{} terms, {} calls ({} failed), {} pairs, {} entries dropped",
                terms.len(),
                stats.calls,
                stats.failed_calls,
                stats.pairs,
                stats.dropped
            ),
            files: vec![
                ("datagen/pairs.jsonl".into(), jsonl::to_string(&pairs).into_bytes()),
                ("datagen/stats.json".into(), json_bytes(&stats)),
            ],
        })
    }

    fn filter(&self) -> Result<Produced> {
        let pairs: Vec<BilingualPair> = jsonl::read(&self.work("datagen/pairs.jsonl"))?;
        let cfg = self.cfg.filter_config()?;
        let (kept, stats) = filter_corpus(&pairs, &cfg, &StopwordDetector::compact(), &StopwordDetector::extended())?;
        let used = subset(&kept, self.cfg.filter.subset, derive_seed(self.cfg.seed, "subset"));
        let summary = format!("raw {}, filtered {}, used {}", stats.input_count, stats.after_langid, used.len());
        Ok(Produced {
            files: vec![
                ("filter/filtered.jsonl".into(), jsonl::to_string(&kept).into_bytes()),
                ("filter/used.jsonl".into(), jsonl::to_string(&used).into_bytes()),
                ("filter/stats.json".into(), json_bytes(&FilterSummary { stats, used: used.len() })),
            ],
            summary,
        })
    }

    fn score(&self) -> Result<Produced> {
        let pairs: Vec<BilingualPair> = jsonl::read(&self.work("filter/used.jsonl"))?;
        if pairs.is_empty() {
            bail!("no synthetic pairs left to score");
        }
        let corpus = self.direction();
        let cfg = self.cfg.score_config();
        let scorer = self.scorer()?;
        let mut scores = Vec::new();
        for dir in [corpus.clone(), corpus.reversed()] {
            let oriented = oriented_pairs(&pairs, &corpus, &dir)?;
            let candidate = mean_exp_score(&oriented, &dir, scorer.as_ref(), &cfg)?;
            let sources: Vec<String> = oriented.into_iter().map(|(s, _)| s).collect();
            let mt = self.reference_mt(&dir)?;
            let (baseline, stats) = baseline_self_score(&sources, &dir, mt.as_ref(), scorer.as_ref(), &cfg)?;
            if stats.empty_translations > 0 {
                log::warn!("{dir}: {} empty baseline translations skipped", stats.empty_translations);
            }
            scores.push(DirectionScore {
                direction: dir,
                candidate,
                baseline,
            });
        }
        let report = build_quality_report(&scores)?;
        let avg = &report.groups[0].average;
        Ok(Produced {
            summary: format!("{} avg candidate {:.2}, baseline {:.2}", avg.pair, avg.candidate, avg.baseline),
            files: vec![
                ("score/report.json".into(), json_bytes(&report)),
                ("score/report.txt".into(), report.to_text().into_bytes()),
            ],
        })
    }

    fn mixprep(&self) -> Result<Produced> {
        let synthetic: Vec<BilingualPair> = jsonl::read(&self.work("filter/used.jsonl"))?;
        let generic: Vec<BilingualPair> = jsonl::read(&self.cfg.inputs.generic)?;
        let k = self.cfg.generic_size()?;
        if k > generic.len() {
            bail!("generic corpus has {} pairs, fewer than generic_size {k}", generic.len());
        }
        let seed = self.cfg.seed;
        let sample = sample_generic(&generic, k, derive_seed(seed, "generic-sample"))?;
        let over = oversample_to(&synthetic, k, derive_seed(seed, "oversample"))?;
        let ft = &self.cfg.mixprep.finetune;
        let data = mix_and_split(&sample, &over, synthetic.len(), ft, derive_seed(seed, "split"))?;
        let mut files: Vec<(String, Vec<u8>)> = trainer_files(&data, ft)
            .into_iter()
            .map(|(n, c)| (format!("mixprep/{n}"), c.into_bytes()))
            .collect();
        files.push(("mixprep/provenance.json".into(), json_bytes(&data.provenance)));
        Ok(Produced {
            summary: format!(
                "generic {}, synthetic {} -> {}, train {}, val {}",
                data.provenance.generic_count,
                data.provenance.synthetic_count_before,
                data.provenance.synthetic_count_after,
                data.train.len(),
                data.val.len()
            ),
            files,
        })
    }

    /// MT engines for the fine-tuned and (optionally) the baseline system.
    fn translation_engines(&self) -> Result<Engines> {
        if self.mock() {
            let terms = read_terms(&self.cfg.inputs.terms)?;
            let phrases = self.lexicon()?;
            let matcher = self.matcher();
            let train: Vec<_> = read_lines(&self.work("mixprep/train.tgt.txt"))?
                .iter()
                .map(|l| matcher.prepare(l))
                .collect();
            let seen: Vec<TermEntry> = terms
                .iter()
                .filter(|t| train.iter().any(|l| matcher.contains_prepared(l, &t.tgt_term)))
                .cloned()
                .collect();
            log::info!("fine-tuned mock knows {} of {} terms", seen.len(), terms.len());
            let m = &self.cfg.mock;
            let tuned = LexiconMt::new(derive_seed(self.cfg.seed, "tuned-mt"), m.finetuned_miss_rate, phrases.clone(), &seen);
            let base = LexiconMt::new(derive_seed(self.cfg.seed, "base-mt"), m.baseline_miss_rate, phrases, &terms);
            return Ok((Box::new(tuned), Some(Box::new(base))));
        }
        self.forbid_network("translation")?;
        let b = &self.cfg.backends;
        let tuned = env_or(&b.mt_url, termweave_core::backends::http::ENV_MT_URL, "MT")?;
        let opts = self.http_opts();
        let base = b.baseline_mt_url.as_deref().map(|u| Box::new(HttpMt::new(u, &opts)) as Box<dyn MtBackend>);
        Ok((Box::new(HttpMt::new(&tuned, &opts)), base))
    }

    fn translate_all(&self, mt: &dyn MtBackend, texts: &[String]) -> Result<Vec<String>> {
        let chunks: Vec<&[String]> = texts.chunks(self.cfg.score.translate_batch).collect();
        let results = map_bounded(&chunks, self.cfg.parallelism, |chunk| {
            let req = TranslateRequest {
                source_lang: self.cfg.src_lang.clone(),
                target_lang: self.cfg.tgt_lang.clone(),
                texts: chunk.to_vec(),
                beam_size: self.cfg.score.beam_size,
            };
            mt.translate(&req)
        });
        let mut out = Vec::with_capacity(texts.len());
        for (chunk, r) in chunks.iter().zip(results) {
            let got = r.map_err(termweave_core::Error::from)?;
            if got.len() != chunk.len() {
                return Err(termweave_core::Error::SizeMismatch {
                    expected: chunk.len(),
                    actual: got.len(),
                }
                .into());
            }
            out.extend(got);
        }
        Ok(out)
    }

    fn translate(&self) -> Result<Produced> {
        let mut records: Vec<SegmentRecord> = jsonl::read(&self.cfg.inputs.segments)?;
        validate_records(&records)?;
        let srcs: Vec<String> = records.iter().map(|r| r.src.clone()).collect();
        let (tuned, base) = self.translation_engines()?;
        let mt = self.translate_all(tuned.as_ref(), &srcs)?;
        for (r, t) in records.iter_mut().zip(mt) {
            r.mt = Some(t);
            r.ape.clear();
        }
        let mut files = vec![("translate/segments.jsonl".to_string(), jsonl::to_string(&records).into_bytes())];
        if let Some(base) = base {
            let lines = self.translate_all(base.as_ref(), &srcs)?;
            let text: String = lines.iter().map(|l| l.replace(['\r', '\n'], " ") + "\n").collect();
            files.push(("translate/baseline.txt".into(), text.into_bytes()));
        }
        Ok(Produced {
            summary: format!("{} segments translated", records.len()),
            files,
        })
    }

    fn baseline_lines(&self, n: usize) -> Result<Option<Vec<String>>> {
        let p = self.work("translate/baseline.txt");
        if !p.exists() {
            return Ok(None);
        }
        let lines = read_lines(&p)?;
        if lines.len() != n {
            bail!("{} has {} lines for {n} segments", p.display(), lines.len());
        }
        Ok(Some(lines))
    }

    fn eval_inputs<'a>(&self, records: &'a [SegmentRecord], baseline: Option<&'a [String]>, refs: Option<&'a [String]>) -> EvalInputs<'a> {
        EvalInputs {
            direction: self.direction(),
            records,
            baseline,
            refs,
            matcher: self.matcher(),
            subset: self.cfg.eval.subset,
            bleu: self.cfg.eval.bleu,
            chrf: self.cfg.eval.chrf,
            external: BTreeMap::new(),
        }
    }

    fn termcheck(&self) -> Result<Produced> {
        let records: Vec<SegmentRecord> = jsonl::read(&self.work("translate/segments.jsonl"))?;
        let baseline = self.baseline_lines(records.len())?;
        let reports = build_reports(&self.eval_inputs(&records, baseline.as_deref(), None))?;
        let summary = reports
            .coverage
            .rows
            .iter()
            .map(|r| format!("{} {}", r.system, fmt_pct(r.avg_pct)))
            .collect::<Vec<_>>()
            .join(", ");
        Ok(Produced {
            files: vec![
                ("termcheck/coverage.json".into(), json_bytes(&reports.coverage)),
                ("termcheck/coverage.txt".into(), reports.coverage.to_text().into_bytes()),
            ],
            summary,
        })
    }

    fn ape(&self) -> Result<Produced> {
        let mut records: Vec<SegmentRecord> = jsonl::read(&self.work("translate/segments.jsonl"))?;
        let terms: Vec<TermEntry> = records
            .iter()
            .flat_map(|r| [&r.term_sets.0, &r.term_sets.1])
            .flat_map(|s| s.entries.iter().cloned())
            .collect();
        let cfg = self.cfg.ape_config()?;
        let llm = self.llm(&terms)?;
        let mut stats = Vec::new();
        for label in TermSetLabel::ALL {
            let (out, s) = post_edit_corpus(&records, label, &cfg, &llm, self.cfg.parallelism)?;
            records = out;
            stats.push(s);
        }
        let summary = ApeSummary {
            set2: stats.pop().expect("two labels"),
            set1: stats.pop().expect("two labels"),
        };
        let line = format!(
            "set1: {} improved, {} unimproved, {} skipped; set2: {} improved, {} unimproved, {} skipped; {} LLM calls",
            summary.set1.improved,
            summary.set1.unimproved,
            summary.set1.skipped,
            summary.set2.improved,
            summary.set2.unimproved,
            summary.set2.skipped,
            summary.set1.llm_calls + summary.set2.llm_calls
        );
        Ok(Produced {
            files: vec![
                ("ape/segments.jsonl".into(), jsonl::to_string(&records).into_bytes()),
                ("ape/stats.json".into(), json_bytes(&summary)),
            ],
            summary: line,
        })
    }

    fn eval(&self) -> Result<Produced> {
        let records: Vec<SegmentRecord> = jsonl::read(&self.work("ape/segments.jsonl"))?;
        let baseline = self.baseline_lines(records.len())?;
        let refs = match &self.cfg.inputs.refs {
            Some(p) => Some(read_lines(p)?),
            None => None,
        };
        let mut inputs = self.eval_inputs(&records, baseline.as_deref(), refs.as_deref());
        if let Some(p) = &self.cfg.inputs.external_scores {
            inputs.external = serde_json::from_str(&read_text(p)?)
                .with_context(|| format!("{} is not a {{system: {{metric: value}}}} map", p.display()))?;
        }
        let reports = build_reports(&inputs)?;
        for w in &reports.warnings {
            log::warn!("{w}");
        }
        let mut files = vec![
            ("eval/report.coverage.json".to_string(), json_bytes(&reports.coverage)),
            ("eval/report.coverage.txt".to_string(), reports.coverage.to_text().into_bytes()),
        ];
        if let Some(m) = &reports.metrics {
            files.push(("eval/report.metrics.json".into(), json_bytes(m)));
            files.push(("eval/report.metrics.txt".into(), m.to_text().into_bytes()));
        }
        let summary = reports
            .coverage
            .rows
            .iter()
            .map(|r| format!("{} {}", r.system, fmt_pct(r.avg_pct)))
            .collect::<Vec<_>>()
            .join(", ");
        Ok(Produced { files, summary })
    }

    fn hash_inputs(&self, inputs: &[Artifact]) -> Result<Vec<FileHash>> {
        inputs
            .iter()
            .map(|a| {
                if !a.path.exists() {
                    return Err(CliError::MissingInput(a.path.display().to_string()).into());
                }
                Ok(FileHash {
                    name: a.name.clone(),
                    sha256: manifest::sha256_file(&a.path).with_context(|| format!("cannot read {}", a.path.display()))?,
                })
            })
            .collect()
    }

    fn upstream(&self, inputs: &[Artifact]) -> BTreeMap<String, String> {
        inputs
            .iter()
            .filter_map(|a| producer(&a.name))
            .filter_map(|s| manifest::load(&self.cfg.work_dir, s.name()).map(|m| (s.name().to_string(), m.digest())))
            .collect()
    }

    /// Run one stage unconditionally.
    pub fn run_stage(&self, stage: Stage) -> Result<StageReport> {
        let inputs = self.stage_inputs(stage);
        let input_hashes = self.hash_inputs(&inputs)?;
        let upstream = self.upstream(&inputs);
        let before = self.cache.counters();
        let produced = self
            .execute(stage)
            .with_context(|| format!("stage {stage} failed"))?;
        let after = self.cache.counters();

        let previous = manifest::load(&self.cfg.work_dir, stage.name());
        let mut outputs = Vec::new();
        for (name, bytes) in &produced.files {
            let path = self.work(name);
            manifest::write_atomic(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
            outputs.push(FileHash {
                name: name.clone(),
                sha256: manifest::sha256_hex(bytes),
            });
        }
        if let Some(prev) = previous {
            for old in prev.outputs.iter().filter(|o| !outputs.iter().any(|n| n.name == o.name)) {
                let _ = fs::remove_file(self.work(&old.name));
            }
        }
        let m = Manifest {
            stage: stage.name().to_string(),
            config_hash: self.config_hash(stage),
            inputs: input_hashes,
            outputs,
            upstream,
            created_at: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        };
        manifest::store(&self.cfg.work_dir, &m).context("cannot write manifest")?;
        Ok(StageReport {
            stage,
            manifest_digest: m.digest(),
            status: Status::Ran {
                summary: produced.summary,
                cache: CacheCounters {
                    hits: after.hits - before.hits,
                    misses: after.misses - before.misses,
                    stores: after.stores - before.stores,
                    evictions: after.evictions - before.evictions,
                },
            },
        })
    }

    /// Problems that make the recorded run of `stage` differ from what is on disk now.
    pub fn staleness(&self, stage: Stage) -> Vec<String> {
        let Some(m) = manifest::load(&self.cfg.work_dir, stage.name()) else {
            return vec!["no manifest".into()];
        };
        let mut problems = Vec::new();
        if m.config_hash != self.config_hash(stage) {
            problems.push("configuration changed".into());
        }
        let inputs = self.stage_inputs(stage);
        let names: Vec<&str> = inputs.iter().map(|a| a.name.as_str()).collect();
        let recorded: Vec<&str> = m.inputs.iter().map(|f| f.name.as_str()).collect();
        if names != recorded {
            problems.push(format!("input set changed: {recorded:?} -> {names:?}"));
        }
        for a in &inputs {
            let now = manifest::sha256_file(&a.path).ok();
            let then = m.inputs.iter().find(|f| f.name == a.name).map(|f| f.sha256.clone());
            if now.is_none() {
                problems.push(format!("input {} missing", a.name));
            } else if now != then {
                problems.push(format!("input {} changed", a.name));
            }
        }
        for o in &m.outputs {
            match manifest::sha256_file(&self.work(&o.name)) {
                Ok(h) if h == o.sha256 => {}
                Ok(_) => problems.push(format!("output {} modified", o.name)),
                Err(_) => problems.push(format!("output {} missing", o.name)),
            }
        }
        for (up, digest) in &m.upstream {
            match manifest::load(&self.cfg.work_dir, up) {
                Some(um) if &um.digest() == digest => {}
                Some(_) => problems.push(format!("upstream manifest {up} changed")),
                None => problems.push(format!("upstream manifest {up} missing")),
            }
        }
        for a in inputs.iter().filter(|a| producer(&a.name).is_some()) {
            let up = producer(&a.name).expect("filtered").name();
            if !m.upstream.contains_key(up) {
                problems.push(format!("input {} has no producing manifest", a.name));
                continue;
            }
            let produced = manifest::load(&self.cfg.work_dir, up).and_then(|um| um.output(&a.name).map(|f| f.sha256.clone()));
            let used = m.inputs.iter().find(|f| f.name == a.name).map(|f| f.sha256.clone());
            if produced != used {
                problems.push(format!("input {} does not match the output recorded by {up}", a.name));
            }
        }
        problems
    }

    /// Run every stage in order, skipping stages whose manifest is still valid.
    pub fn run_pipeline(&self, force: bool, mut on_stage: impl FnMut(&StageReport)) -> Result<Vec<StageReport>> {
        let mut reports = Vec::new();
        for stage in ALL_STAGES {
            let report = if !force && self.staleness(stage).is_empty() {
                let m = manifest::load(&self.cfg.work_dir, stage.name()).expect("fresh stage has a manifest");
                StageReport {
                    stage,
                    status: Status::UpToDate,
                    manifest_digest: m.digest(),
                }
            } else {
                self.run_stage(stage)?
            };
            on_stage(&report);
            reports.push(report);
        }
        Ok(reports)
    }

    /// Check the full hash chain from the term list to the final reports.
    pub fn verify(&self) -> Result<Vec<String>, CliError> {
        let mut lines = Vec::new();
        let mut failures = Vec::new();
        for stage in ALL_STAGES {
            let problems = self.staleness(stage);
            if problems.is_empty() {
                let digest = manifest::load(&self.cfg.work_dir, stage.name()).map(|m| m.digest()).unwrap_or_default();
                lines.push(format!("{stage}: ok {}", &digest[..16.min(digest.len())]));
            } else {
                lines.push(format!("{stage}: {}", problems.join("; ")));
                failures.push(stage.name());
            }
        }
        if failures.is_empty() {
            Ok(lines)
        } else {
            Err(CliError::Verify(format!("{}\n{}", failures.join(", "), lines.join("\n"))))
        }
    }
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}%")).unwrap_or_else(|| "n/a".into())
}
