//! Run configuration loaded from a TOML file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use termweave_core::ape::ApeConfig;
use termweave_core::backends::mock::{ApeBehaviour, GenBehaviour};
use termweave_core::datagen::GenConfig;
use termweave_core::eval::{BleuConfig, ChrfConfig, MetricSubset};
use termweave_core::filter::{normalise_threshold, FilterConfig, SubsetMode};
use termweave_core::lang::LanguageNames;
use termweave_core::mixprep::FinetuneConfig;
use termweave_core::scorer::ScoreConfig;
use termweave_core::termcheck::MatchMode;
use termweave_core::LangCode;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub src_lang: LangCode,
    pub tgt_lang: LangCode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_work_dir")]
    pub work_dir: PathBuf,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Extra code to language-name entries for prompts.
    #[serde(default)]
    pub language_names: BTreeMap<String, String>,
    pub inputs: Inputs,
    #[serde(default)]
    pub backends: BackendSection,
    #[serde(default)]
    pub mock: MockSection,
    #[serde(default)]
    pub datagen: DatagenSection,
    #[serde(default)]
    pub filter: FilterSection,
    #[serde(default)]
    pub score: ScoreSection,
    #[serde(default)]
    pub mixprep: MixprepSection,
    #[serde(default)]
    pub ape: ApeSection,
    #[serde(default)]
    pub eval: EvalSection,
}

fn default_work_dir() -> PathBuf {
    PathBuf::from("work")
}

fn default_cache_dir() -> PathBuf {
    PathBuf::from("cache")
}

fn default_parallelism() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    /// Two-column TSV term dictionary.
    pub terms: PathBuf,
    /// SegmentRecord JSONL to translate and post-edit.
    pub segments: PathBuf,
    /// Generic BilingualPair JSONL for mixed fine-tuning.
    pub generic: PathBuf,
    /// Line-aligned references; without them evaluation is coverage-only.
    #[serde(default)]
    pub refs: Option<PathBuf>,
    /// Phrase table for the mock MT engines.
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    /// Externally computed scores, `{system: {metric: value}}`.
    #[serde(default)]
    pub external_scores: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub mode: BackendMode,
    /// Chat-completions URL; falls back to `TERMWEAVE_LLM_URL`.
    pub llm_url: Option<String>,
    /// Environment variable holding the LLM API key.
    pub api_key_env: String,
    /// Fine-tuned MT base URL; falls back to `TERMWEAVE_MT_URL`.
    pub mt_url: Option<String>,
    /// Untuned MT base URL for the baseline system.
    pub baseline_mt_url: Option<String>,
    /// Scorer base URL; falls back to `TERMWEAVE_SCORER_URL`.
    pub scorer_url: Option<String>,
    /// MT used to build the scoring baseline; defaults to the scorer URL.
    pub reference_mt_url: Option<String>,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub rate_per_sec: Option<f64>,
    pub burst: u32,
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection {
            mode: BackendMode::Mock,
            llm_url: None,
            api_key_env: "TERMWEAVE_LLM_API_KEY".into(),
            mt_url: None,
            baseline_mt_url: None,
            scorer_url: None,
            reference_mt_url: None,
            timeout_secs: 120,
            max_attempts: 5,
            rate_per_sec: None,
            burst: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockSection {
    /// Seed of the mock LLM; the run seed when absent.
    pub llm_seed: Option<u64>,
    pub ape: ApeBehaviour,
    pub gen: GenBehaviour,
    pub baseline_miss_rate: f64,
    pub finetuned_miss_rate: f64,
    pub scorer_min_prob: f64,
    pub scorer_max_prob: f64,
}

impl Default for MockSection {
    fn default() -> Self {
        MockSection {
            llm_seed: None,
            ape: ApeBehaviour::InsertAll,
            gen: GenBehaviour::default(),
            baseline_miss_rate: 0.5,
            finetuned_miss_rate: 0.2,
            scorer_min_prob: 0.3,
            scorer_max_prob: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatagenSection {
    pub model_id: String,
    pub sentences_per_call: usize,
    pub temperatures: Vec<f64>,
    pub top_p: f64,
    pub seed_with_both_terms: bool,
}

impl Default for DatagenSection {
    fn default() -> Self {
        DatagenSection {
            model_id: "gpt-3.5-turbo".into(),
            sentences_per_call: 20,
            temperatures: vec![0.0, 0.3],
            top_p: 1.0,
            seed_with_both_terms: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    /// Either a fraction or a percentage (90 means 0.9).
    pub primary_threshold: f64,
    pub secondary_threshold: f64,
    pub subset: SubsetMode,
}

impl Default for FilterSection {
    fn default() -> Self {
        FilterSection {
            primary_threshold: 0.9,
            secondary_threshold: 0.9,
            subset: SubsetMode::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreSection {
    pub beam_size: u32,
    pub max_batch_tokens: u32,
    pub translate_batch: usize,
}

impl Default for ScoreSection {
    fn default() -> Self {
        let d = ScoreConfig::default();
        ScoreSection {
            beam_size: d.beam_size,
            max_batch_tokens: d.max_batch_tokens,
            translate_batch: d.translate_batch,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixprepSection {
    /// Generic sample size; the per-language default when absent.
    pub generic_size: Option<usize>,
    pub finetune: FinetuneConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApeSection {
    pub model_id: String,
    pub temperatures: Vec<f64>,
    pub top_p: f64,
    pub max_terms_per_prompt: Option<usize>,
    pub strict: bool,
    pub match_mode: MatchMode,
}

impl Default for ApeSection {
    fn default() -> Self {
        ApeSection {
            model_id: "gpt-3.5-turbo".into(),
            temperatures: vec![0.0, 0.2],
            top_p: 1.0,
            max_terms_per_prompt: None,
            strict: false,
            match_mode: MatchMode::Boundary,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub subset: MetricSubset,
    pub bleu: BleuConfig,
    pub chrf: ChrfConfig,
}

/// Generic sample sizes used for the published DE, CS and ZH systems.
pub fn default_generic_size(src: &LangCode, tgt: &LangCode) -> Option<usize> {
    let other = if src.primary() == "en" { tgt.primary() } else { src.primary() };
    match other {
        "cs" => Some(372_928),
        "de" => Some(419_881),
        "zh" => Some(462_780),
        _ => None,
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Load a config and resolve relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        self.work_dir = resolve(base, &self.work_dir);
        self.cache_dir = resolve(base, &self.cache_dir);
        let i = &mut self.inputs;
        i.terms = resolve(base, &i.terms);
        i.segments = resolve(base, &i.segments);
        i.generic = resolve(base, &i.generic);
        for p in [&mut i.refs, &mut i.lexicon, &mut i.external_scores].into_iter().flatten() {
            *p = resolve(base, p);
        }
    }

    pub fn names(&self) -> LanguageNames {
        LanguageNames::with_extra(self.language_names.clone())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |e: termweave_core::Error| CliError::Config(e.to_string());
        if self.src_lang == self.tgt_lang {
            return Err(CliError::Config("src_lang and tgt_lang must differ".into()));
        }
        if self.parallelism == 0 {
            return Err(CliError::Config("parallelism must be at least 1".into()));
        }
        self.gen_config().map_err(bad)?.validate().map_err(bad)?;
        self.filter_config()?.validate().map_err(bad)?;
        self.score_config().validate().map_err(bad)?;
        self.mixprep.finetune.validate().map_err(bad)?;
        self.ape_config().map_err(bad)?.validate().map_err(bad)?;
        self.generic_size()?;
        let m = &self.mock;
        for (name, v) in [("baseline_miss_rate", m.baseline_miss_rate), ("finetuned_miss_rate", m.finetuned_miss_rate)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CliError::Config(format!("mock.{name} must lie in [0, 1]")));
            }
        }
        if !(0.0 < m.scorer_min_prob && m.scorer_min_prob <= m.scorer_max_prob && m.scorer_max_prob <= 1.0) {
            return Err(CliError::Config("mock scorer probabilities must satisfy 0 < min <= max <= 1".into()));
        }
        Ok(())
    }

    pub fn gen_config(&self) -> termweave_core::Result<GenConfig> {
        let d = &self.datagen;
        let mut cfg = GenConfig::new(self.src_lang.clone(), self.tgt_lang.clone(), &self.names())?;
        cfg.model_id = d.model_id.clone();
        cfg.sentences_per_call = d.sentences_per_call;
        cfg.temperatures = d.temperatures.clone();
        cfg.top_p = d.top_p;
        cfg.seed_with_both_terms = d.seed_with_both_terms;
        Ok(cfg)
    }

    pub fn filter_config(&self) -> Result<FilterConfig, CliError> {
        let bad = |e: termweave_core::Error| CliError::Config(e.to_string());
        let mut cfg = FilterConfig::new(self.src_lang.clone(), self.tgt_lang.clone());
        cfg.primary_threshold = normalise_threshold(self.filter.primary_threshold).map_err(bad)?;
        cfg.secondary_threshold = normalise_threshold(self.filter.secondary_threshold).map_err(bad)?;
        Ok(cfg)
    }

    pub fn score_config(&self) -> ScoreConfig {
        ScoreConfig {
            beam_size: self.score.beam_size,
            max_batch_tokens: self.score.max_batch_tokens,
            parallelism: self.parallelism,
            translate_batch: self.score.translate_batch,
        }
    }

    pub fn ape_config(&self) -> termweave_core::Result<ApeConfig> {
        let a = &self.ape;
        let mut cfg = ApeConfig::new(self.src_lang.clone(), self.tgt_lang.clone(), &self.names())?;
        cfg.model_id = a.model_id.clone();
        cfg.temperatures = a.temperatures.clone();
        cfg.top_p = a.top_p;
        cfg.max_terms_per_prompt = a.max_terms_per_prompt;
        cfg.strict = a.strict;
        cfg.match_mode = a.match_mode;
        Ok(cfg)
    }

    pub fn generic_size(&self) -> Result<usize, CliError> {
        self.mixprep
            .generic_size
            .or_else(|| default_generic_size(&self.src_lang, &self.tgt_lang))
            .filter(|k| *k > 0)
            .ok_or_else(|| {
                CliError::Config(format!(
                    "mixprep.generic_size is required for {}-{}",
                    self.src_lang, self.tgt_lang
                ))
            })
    }

    pub fn llm_seed(&self) -> u64 {
        self.mock.llm_seed.unwrap_or(self.seed)
    }
}
