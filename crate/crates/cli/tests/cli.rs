use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_termweave");

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/de-en")
}

/// Copy the fixture into a fresh directory and return the config path.
fn setup(config_edit: impl FnOnce(String) -> String) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    for entry in fs::read_dir(fixture_dir()).unwrap() {
        let entry = entry.unwrap();
        if entry.file_type().unwrap().is_file() {
            fs::copy(entry.path(), dir.path().join(entry.file_name())).unwrap();
        }
    }
    let cfg = dir.path().join("run.toml");
    let text = fs::read_to_string(&cfg).unwrap();
    fs::write(&cfg, config_edit(text)).unwrap();
    (dir, cfg)
}

fn run(args: &[&str], cfg: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--config")
        .arg(cfg)
        .env_remove("TERMWEAVE_LLM_URL")
        .env_remove("TERMWEAVE_MT_URL")
        .env_remove("TERMWEAVE_SCORER_URL")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn files_under(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn without_timestamp(bytes: &[u8]) -> Value {
    let mut v: Value = serde_json::from_slice(bytes).unwrap();
    v.as_object_mut().unwrap().remove("created_at");
    v
}

#[test]
fn offline_pipeline_runs_and_verifies() {
    let (dir, cfg) = setup(|t| t);
    let o = run(&["pipeline", "run", "--offline"], &cfg);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for stage in ["datagen", "filter", "score", "mixprep", "translate", "termcheck", "ape", "eval"] {
        assert!(dir.path().join(format!("work/manifests/{stage}.json")).exists(), "{stage}");
    }
    for f in ["report.coverage.txt", "report.coverage.json", "report.metrics.txt", "report.metrics.json"] {
        assert!(dir.path().join("work/eval").join(f).exists(), "{f}");
    }
    for f in ["train.src.txt", "train.tgt.txt", "val.src.txt", "val.tgt.txt", "finetune_config.json"] {
        assert!(dir.path().join("work/mixprep").join(f).exists(), "{f}");
    }
    let v = run(&["pipeline", "verify"], &cfg);
    assert_eq!(code(&v), 0, "{}", String::from_utf8_lossy(&v.stderr));
    assert_eq!(stdout(&v).lines().filter(|l| l.contains(": ok ")).count(), 8);

    let again = run(&["pipeline", "run"], &cfg);
    assert_eq!(code(&again), 0);
    assert_eq!(stdout(&again).matches("up to date").count(), 8);
}

#[test]
fn reruns_are_byte_identical_apart_from_timestamps() {
    let (a, cfg_a) = setup(|t| t);
    let (b, cfg_b) = setup(|t| t);
    assert_eq!(code(&run(&["pipeline", "run"], &cfg_a)), 0);
    assert_eq!(code(&run(&["pipeline", "run"], &cfg_b)), 0);
    let fa = files_under(&a.path().join("work"));
    let fb = files_under(&b.path().join("work"));
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (name, bytes) in &fa {
        if name.starts_with("manifests") {
            assert_eq!(without_timestamp(bytes), without_timestamp(&fb[name]), "{name}");
        } else {
            assert!(bytes == &fb[name], "{name} differs");
        }
    }

    let forced = run(&["pipeline", "run", "--force"], &cfg_a);
    assert_eq!(code(&forced), 0);
    let refreshed = files_under(&a.path().join("work"));
    for (name, bytes) in &fa {
        if !name.starts_with("manifests") {
            assert!(bytes == &refreshed[name], "{name} changed on forced rerun");
        }
    }
    assert!(!stdout(&forced).contains("up to date"));
}

#[test]
fn resumes_after_filter() {
    let (_dir, cfg) = setup(|t| t);
    assert_eq!(code(&run(&["datagen"], &cfg)), 0);
    assert_eq!(code(&run(&["filter"], &cfg)), 0);
    let o = run(&["pipeline", "run"], &cfg);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.contains("datagen: up to date"));
    assert!(out.contains("filter: up to date"));
    for stage in ["score", "mixprep", "translate", "termcheck", "ape", "eval"] {
        assert!(!out.contains(&format!("{stage}: up to date")), "{stage} should have run");
    }
}

#[test]
fn tampered_output_fails_verify_and_is_regenerated() {
    let (dir, cfg) = setup(|t| t);
    assert_eq!(code(&run(&["pipeline", "run"], &cfg)), 0);
    let used = dir.path().join("work/filter/used.jsonl");
    let original = fs::read(&used).unwrap();
    fs::write(&used, b"{}\n").unwrap();

    let v = run(&["pipeline", "verify"], &cfg);
    assert_eq!(code(&v), 2);
    assert!(String::from_utf8_lossy(&v.stderr).contains("filter/used.jsonl"));

    let o = run(&["pipeline", "run"], &cfg);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.contains("datagen: up to date"));
    assert!(!out.contains("filter: up to date"));
    assert!(out.contains("score: up to date"), "identical regenerated output keeps downstream fresh:\n{out}");
    assert_eq!(fs::read(&used).unwrap(), original);
    assert_eq!(code(&run(&["pipeline", "verify"], &cfg)), 0);
}

#[test]
fn changed_config_reruns_affected_stages_only() {
    let (dir, cfg) = setup(|t| t);
    assert_eq!(code(&run(&["pipeline", "run"], &cfg)), 0);
    let text = fs::read_to_string(&cfg).unwrap();
    fs::write(&cfg, text.replace("finetuned_miss_rate = 0.2", "finetuned_miss_rate = 0.3")).unwrap();
    let v = run(&["pipeline", "verify"], &cfg);
    assert_eq!(code(&v), 2);
    let out = stdout(&run(&["pipeline", "run"], &cfg));
    for stage in ["datagen", "filter", "score", "mixprep"] {
        assert!(out.contains(&format!("{stage}: up to date")), "{stage}\n{out}");
    }
    assert!(!out.contains("translate: up to date"));
    assert!(dir.path().join("work/eval/report.metrics.txt").exists());
}

#[test]
fn warm_cache_serves_every_llm_call() {
    let (dir, cfg) = setup(|t| t);
    assert_eq!(code(&run(&["pipeline", "run"], &cfg)), 0);
    let first = files_under(&dir.path().join("work"));
    fs::remove_dir_all(dir.path().join("work")).unwrap();
    let o = run(&["pipeline", "run"], &cfg);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    for stage in ["datagen", "ape"] {
        let line = out.lines().find(|l| l.starts_with(&format!("{stage}: cache"))).unwrap();
        assert!(line.contains(" 0 misses"), "{line}");
    }
    let second = files_under(&dir.path().join("work"));
    for (name, bytes) in &first {
        if !name.starts_with("manifests") {
            assert!(bytes == &second[name], "{name}");
        }
    }
}

#[test]
fn offline_http_datagen_replays_mock_warmed_cache() {
    let (dir, cfg) = setup(|t| t);
    assert_eq!(code(&run(&["datagen"], &cfg)), 0);
    let mock_pairs = fs::read(dir.path().join("work/datagen/pairs.jsonl")).unwrap();

    let text = fs::read_to_string(&cfg).unwrap();
    let http = text.replace(
        "mode = \"mock\"",
        "mode = \"http\"\nllm_url = \"http://127.0.0.1:9/v1/chat/completions\"\nmax_attempts = 1",
    );
    fs::write(&cfg, http).unwrap();
    let o = run(&["datagen", "--offline"], &cfg);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(dir.path().join("work/datagen/pairs.jsonl")).unwrap(), mock_pairs);

    fs::remove_dir_all(dir.path().join("cache")).unwrap();
    let cold = run(&["datagen", "--offline"], &cfg);
    assert_eq!(code(&cold), 3, "{}", String::from_utf8_lossy(&cold.stderr));
}

#[test]
fn offline_refuses_network_translation() {
    let (_dir, cfg) = setup(|t| {
        t.replace("mode = \"mock\"", "mode = \"http\"\nmt_url = \"http://127.0.0.1:9\"\nscorer_url = \"http://127.0.0.1:9\"")
    });
    let o = run(&["score", "--offline"], &cfg);
    assert_eq!(code(&o), 2, "score without filter output is a missing input");
    let o = run(&["pipeline", "run", "--offline"], &cfg);
    assert_eq!(code(&o), 3, "datagen has no cache: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn offline_http_score_is_a_usage_error() {
    let (dir, cfg) = setup(|t| t);
    assert_eq!(code(&run(&["datagen"], &cfg)), 0);
    assert_eq!(code(&run(&["filter"], &cfg)), 0);
    let text = fs::read_to_string(&cfg).unwrap();
    fs::write(
        &cfg,
        text.replace("mode = \"mock\"", "mode = \"http\"\nscorer_url = \"http://127.0.0.1:9\""),
    )
    .unwrap();
    let o = run(&["score", "--offline"], &cfg);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!dir.path().join("work/score/report.json").exists());
}

#[test]
fn unreachable_llm_exhausts_backend() {
    let (_dir, cfg) = setup(|t| {
        t.replace(
            "mode = \"mock\"",
            "mode = \"http\"\nllm_url = \"http://127.0.0.1:9/v1/chat/completions\"\nmax_attempts = 1\ntimeout_secs = 2",
        )
    });
    let o = run(&["datagen"], &cfg);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_input_is_a_stage_failure() {
    let (dir, cfg) = setup(|t| t);
    let o = run(&["translate"], &cfg);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("train.tgt.txt"));

    fs::remove_file(dir.path().join("terms.tsv")).unwrap();
    let o = run(&["datagen"], &cfg);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("terms.tsv"));
}

#[test]
fn bad_configuration_is_a_usage_error() {
    let (_dir, cfg) = setup(|t| t.replace("[mixprep]", "[mixprep]\ncolour = \"blue\""));
    let o = run(&["datagen"], &cfg);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));

    let (_dir, cfg) = setup(|t| t.replace("tgt_lang = \"en\"", "tgt_lang = \"de\""));
    assert_eq!(code(&run(&["datagen"], &cfg)), 1);

    let (dir, _) = setup(|t| t);
    assert_eq!(code(&run(&["datagen"], &dir.path().join("absent.toml"))), 1);

    let o = Command::new(BIN).args(["datagen", "--bogus"]).output().unwrap();
    assert_eq!(code(&o), 1);
    let o = Command::new(BIN).arg("--help").output().unwrap();
    assert_eq!(code(&o), 0);
}

#[test]
fn seed_and_work_dir_overrides() {
    let (dir, cfg) = setup(|t| t);
    let alt = dir.path().join("alt");
    let o = Command::new(BIN)
        .args(["datagen", "--seed", "8", "--work-dir"])
        .arg(&alt)
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(alt.join("datagen/pairs.jsonl").exists());
    assert!(!dir.path().join("work").exists());
}
