//! Mixed fine-tuning data: generic sample plus oversampled synthetic data,
//! shuffled and split into trainer-ready files.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{index::sample, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{BilingualPair, Origin};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub train_frac: f64,
    pub val_frac: f64,
    pub batch_size: u32,
    pub learning_rate: f64,
    pub accumulate_gradient: u32,
    pub weight_decay: f64,
    pub num_train_epochs: u32,
    pub max_input_length: u32,
    pub max_target_length: u32,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            train_frac: 0.9,
            val_frac: 0.1,
            batch_size: 32,
            learning_rate: 2e-5,
            accumulate_gradient: 4,
            weight_decay: 0.01,
            num_train_epochs: 1,
            max_input_length: 256,
            max_target_length: 256,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if (self.train_frac + self.val_frac - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("train_frac and val_frac must sum to 1"));
        }
        let positive = [self.train_frac, self.val_frac, self.learning_rate, self.weight_decay]
            .iter()
            .all(|v| *v > 0.0)
            && [
                self.batch_size,
                self.accumulate_gradient,
                self.num_train_epochs,
                self.max_input_length,
                self.max_target_length,
            ]
            .iter()
            .all(|v| *v > 0);
        if !positive {
            return Err(Error::invalid("all fine-tuning parameters must be positive"));
        }
        Ok(())
    }
}

/// Uniform sample of `k` generic pairs without replacement, kept in corpus order.
pub fn sample_generic(corpus: &[BilingualPair], k: usize, seed: u64) -> Result<Vec<BilingualPair>> {
    if k == 0 || k > corpus.len() {
        return Err(Error::invalid(format!(
            "cannot sample {k} generic pairs from a corpus of {}",
            corpus.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, corpus.len(), k).into_vec();
    idx.sort_unstable();
    Ok(idx
        .into_iter()
        .map(|i| {
            let mut p = corpus[i].clone();
            p.origin = Origin::Generic;
            p
        })
        .collect())
}

/// Full copies of `synthetic` followed by a seeded sample of the remainder.
pub fn oversample_to(synthetic: &[BilingualPair], target_size: usize, seed: u64) -> Result<Vec<BilingualPair>> {
    if synthetic.is_empty() {
        return Err(Error::invalid("cannot oversample an empty synthetic corpus"));
    }
    if target_size == 0 {
        return Err(Error::invalid("oversampling target must be at least 1"));
    }
    let copies = target_size / synthetic.len();
    let rest = target_size % synthetic.len();
    let mut out = Vec::with_capacity(target_size);
    for _ in 0..copies {
        out.extend_from_slice(synthetic);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, synthetic.len(), rest).into_vec();
    idx.sort_unstable();
    out.extend(idx.into_iter().map(|i| synthetic[i].clone()));
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub generic_count: usize,
    pub synthetic_count_before: usize,
    pub synthetic_count_after: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedDataset {
    pub train: Vec<BilingualPair>,
    pub val: Vec<BilingualPair>,
    pub provenance: Provenance,
}

pub fn val_size(total: usize, val_frac: f64) -> usize {
    ((total as f64 * val_frac).round() as usize).min(total)
}

/// Concatenate, shuffle with `seed`, and split off the validation portion.
pub fn mix_and_split(
    generic: &[BilingualPair],
    synthetic_oversampled: &[BilingualPair],
    synthetic_count_before: usize,
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<MixedDataset> {
    cfg.validate()?;
    if generic.len() != synthetic_oversampled.len() {
        return Err(Error::SizeMismatch {
            expected: generic.len(),
            actual: synthetic_oversampled.len(),
        });
    }
    let mut all: Vec<BilingualPair> = generic.iter().chain(synthetic_oversampled).cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    all.shuffle(&mut rng);
    let n_val = val_size(all.len(), cfg.val_frac);
    let train = all.split_off(n_val);
    Ok(MixedDataset {
        train,
        val: all,
        provenance: Provenance {
            generic_count: generic.len(),
            synthetic_count_before,
            synthetic_count_after: synthetic_oversampled.len(),
        },
    })
}

fn one_line(s: &str) -> String {
    s.replace(['\r', '\n'], " ")
}

fn lines(pairs: &[BilingualPair], side: fn(&BilingualPair) -> &str) -> String {
    pairs.iter().map(|p| one_line(side(p)) + "\n").collect()
}

/// File names and contents of the trainer-ready dataset: line-aligned
/// `{train,val}.{src,tgt}.txt` plus `finetune_config.json`.
pub fn trainer_files(data: &MixedDataset, cfg: &FinetuneConfig) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for (split, pairs) in [("train", &data.train), ("val", &data.val)] {
        out.push((format!("{split}.src.txt"), lines(pairs, |p| &p.src)));
        out.push((format!("{split}.tgt.txt"), lines(pairs, |p| &p.tgt)));
    }
    let json = serde_json::to_string_pretty(cfg).expect("config serializes");
    out.push(("finetune_config.json".into(), json + "\n"));
    out
}

/// Write [`trainer_files`] into `dir`.
pub fn write_trainer_files(dir: &Path, data: &MixedDataset, cfg: &FinetuneConfig) -> Result<Vec<PathBuf>> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| Error::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut written = Vec::new();
    for (name, content) in trainer_files(data, cfg) {
        let path = dir.join(name);
        fs::write(&path, content).map_err(io(&path))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::TermEntry;

    fn generic(n: usize) -> Vec<BilingualPair> {
        (0..n).map(|i| BilingualPair::generic(format!("g{i}"), format!("G{i}"))).collect()
    }

    fn synthetic(n: usize) -> Vec<BilingualPair> {
        let term = TermEntry::new("a", "b").unwrap();
        (0..n)
            .map(|i| BilingualPair::synthetic(format!("s{i}"), format!("S{i}"), term.clone()))
            .collect()
    }

    #[test]
    fn defaults_match_published_parameters() {
        let c = FinetuneConfig::default();
        assert_eq!((c.train_frac, c.val_frac, c.batch_size, c.learning_rate), (0.9, 0.1, 32, 2e-5));
        assert_eq!((c.accumulate_gradient, c.weight_decay, c.num_train_epochs), (4, 0.01, 1));
        assert_eq!((c.max_input_length, c.max_target_length), (256, 256));
        c.validate().unwrap();
    }

    #[test]
    fn sampling() {
        let g = generic(10);
        assert_eq!(sample_generic(&g, 10, 1).unwrap(), g);
        let a = sample_generic(&g, 4, 7).unwrap();
        assert_eq!(a, sample_generic(&g, 4, 7).unwrap());
        assert!(sample_generic(&g, 11, 1).is_err());
        assert!(sample_generic(&g, 0, 1).is_err());
        let tagged = sample_generic(&synthetic(3), 2, 0).unwrap();
        assert!(tagged.iter().all(|p| p.origin == Origin::Generic));
    }

    #[test]
    fn oversampling() {
        let s = synthetic(3);
        let o = oversample_to(&s, 7, 1).unwrap();
        assert_eq!(o.len(), 7);
        for p in &s {
            let n = o.iter().filter(|q| *q == p).count();
            assert!(n == 2 || n == 3);
        }
        assert_eq!(oversample_to(&s, 3, 1).unwrap(), s);
        let five = synthetic(5);
        let o = oversample_to(&five, 3, 1).unwrap();
        assert_eq!(o.len(), 3);
        assert!(o.iter().all(|p| o.iter().filter(|q| *q == p).count() == 1));
        assert!(oversample_to(&[], 3, 1).is_err());
    }

    #[test]
    fn split_sizes() {
        let cfg = FinetuneConfig::default();
        let d = mix_and_split(&generic(100), &synthetic(100), 100, &cfg, 3).unwrap();
        assert_eq!((d.train.len(), d.val.len()), (180, 20));
        let again = mix_and_split(&generic(100), &synthetic(100), 100, &cfg, 3).unwrap();
        assert_eq!(d, again);
        assert!(mix_and_split(&generic(3), &synthetic(2), 2, &cfg, 3).is_err());
    }

    #[test]
    fn trainer_files() {
        let dir = std::env::temp_dir().join(format!("mixprep-{}", std::process::id()));
        let cfg = FinetuneConfig::default();
        let mut g = generic(10);
        g[0].src = "line\nbreak".into();
        let d = mix_and_split(&g, &synthetic(10), 10, &cfg, 3).unwrap();
        write_trainer_files(&dir, &d, &cfg).unwrap();
        let train_src = fs::read_to_string(dir.join("train.src.txt")).unwrap();
        assert_eq!(train_src.lines().count(), d.train.len());
        let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("finetune_config.json")).unwrap()).unwrap();
        assert_eq!(json.as_object().unwrap().len(), 9);
        let back: FinetuneConfig = serde_json::from_value(json).unwrap();
        assert_eq!(back, cfg);
        fs::remove_dir_all(&dir).unwrap();
    }
}
