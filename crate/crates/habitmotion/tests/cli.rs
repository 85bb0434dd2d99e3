use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use habitmotion::config::RunConfig;
use habitmotion::formats::{load_motion, load_motion_dir, motion_to_json, read_csv};
use habitmotion::pipeline::load_context;
use habitmotion_core::habit::HabitMode;
use habitmotion_core::motion::features_to_motion;
use habitmotion_core::transfer::with_consistent_velocities;
use tempfile::TempDir;

/// Small models so every command finishes in seconds.
const TINY: &str = r#"
profile = "desk"
seed = 3

[vqvae]
width = 16
code_dim = 8
codebook_size = 8
cond_dim = 8
text_dim = 16
iterations = 30
batch_size = 8
habit_draws = 2

[habit]
latent_dim = 8
hidden = 16
layers = 1
heads = 2
ff_dim = 16
flow_layers = 2
flow_hidden = 16
iterations = 10
batch_size = 8

[extractor]
hidden = 16
layers = 1
heads = 2
ff_dim = 16
embed_dim = 8
max_iterations = 40
eval_every = 20
patience = 40
"#;

fn habitmotion(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_habitmotion"))
        .args(args)
        .env_remove("HABITMOTION_PROFILE")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = habitmotion(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str], code: i32) -> String {
    let out = habitmotion(args);
    assert_eq!(out.status.code(), Some(code), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A synthesized 3-category corpus with every model trained.
struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn create(checkpoints: &str) -> Workspace {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace { dir };
        ok(&["synth", "--profile", "3cat", "--out", s(&ws.path("corpus")), "--seed", "1"]);
        ws.write_config("run.toml", checkpoints);
        let cfg = ws.path("run.toml");
        ok(&["train", "habit", "--config", s(&cfg)]);
        ok(&["train", "vqvae", "--config", s(&cfg)]);
        ok(&["train", "extractor", "--config", s(&cfg)]);
        ws
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn write_config(&self, name: &str, checkpoints: &str) {
        let text = format!("{TINY}\n[paths]\ncheckpoints = \"{checkpoints}\"\nlogs = \"{checkpoints}/logs\"\n");
        fs::write(self.path(name), text).unwrap();
    }

    fn config(&self) -> String {
        s(&self.path("run.toml")).to_string()
    }

    fn source(&self, category: &str) -> PathBuf {
        let dir = self.path("corpus/val");
        let mut files: Vec<PathBuf> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        files
            .into_iter()
            .find(|p| p.file_name().unwrap().to_str().unwrap().starts_with(category))
            .unwrap()
    }
}

fn workspace() -> &'static Workspace {
    static WS: OnceLock<Workspace> = OnceLock::new();
    WS.get_or_init(|| Workspace::create("checkpoints"))
}

fn files_under(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn help_lists_the_commands() {
    let help = ok(&["--help"]);
    for c in ["synth", "train", "transfer", "batch-transfer", "evaluate", "ablate", "plot-embeddings"] {
        assert!(help.contains(c), "{c} missing from help");
    }
    let help = ok(&["transfer", "--help"]);
    for flag in ["--src", "--target", "--mode", "--seed", "--out", "--config", "--manifest"] {
        assert!(help.contains(flag), "{flag} missing from transfer help");
    }
}

#[test]
fn synth_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(&["synth", "--profile", "3cat", "--out", s(a.path()), "--seed", "4"]);
    ok(&["synth", "--profile", "3cat", "--out", s(b.path()), "--seed", "4"]);
    let fa = files_under(a.path());
    assert_eq!(fa, files_under(b.path()));
    let motions = fa.iter().filter(|(p, _)| p.starts_with("train") || p.starts_with("val")).count();
    assert_eq!(motions, 60);
}

#[test]
fn synth_21_categories() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["synth", "--profile", "21cat", "--out", s(dir.path()), "--seed", "0"]);
    assert!(out.contains("in 21 categories"), "{out}");
    let corpus = habitmotion::formats::load_corpus(dir.path()).unwrap();
    assert_eq!(corpus.categories().len(), 21);
}

#[test]
fn habit_training_writes_one_checkpoint_per_category() {
    let ws = workspace();
    for c in ["cat", "cow", "horse"] {
        assert!(ws.path(&format!("checkpoints/habit_{c}.hmck")).is_file());
        assert!(ws.path(&format!("checkpoints/logs/habit_{c}.csv")).is_file());
    }
    for f in ["vqvae.hmck", "extractor.hmck", "logs/vqvae.csv", "logs/extractor.csv"] {
        assert!(ws.path(&format!("checkpoints/{f}")).is_file(), "{f}");
    }
    let (header, rows) = read_csv(&ws.path("checkpoints/logs/vqvae.csv")).unwrap();
    assert_eq!(header[0], "iteration");
    assert_eq!(rows.len(), 30);
}

#[test]
fn habit_training_for_a_missing_category_fails() {
    let ws = workspace();
    let err = fails(&["train", "habit", "--category", "unicorn", "--config", &ws.config()], 2);
    assert!(err.contains("unknown category"), "{err}");
}

#[test]
fn retraining_reproduces_every_byte() {
    let ws = workspace();
    ws.write_config("again.toml", "again");
    let cfg = ws.path("again.toml");
    ok(&["train", "habit", "--config", s(&cfg)]);
    ok(&["train", "vqvae", "--config", s(&cfg)]);
    ok(&["train", "extractor", "--config", s(&cfg)]);
    assert_eq!(files_under(&ws.path("checkpoints")), files_under(&ws.path("again")));

    let other = ws.path("seed.toml");
    fs::write(&other, fs::read_to_string(ws.path("again.toml")).unwrap().replace("again", "seeded")).unwrap();
    ok(&["train", "habit", "--category", "cat", "--config", s(&other), "--seed", "4"]);
    assert_ne!(
        fs::read(ws.path("seeded/habit_cat.hmck")).unwrap(),
        fs::read(ws.path("checkpoints/habit_cat.hmck")).unwrap()
    );
}

#[test]
fn same_category_transfer_writes_the_reconstruction() {
    let ws = workspace();
    let src = ws.source("horse");
    let out = ws.path("out/horse_det.json");
    ok(&["transfer", "--src", s(&src), "--target", "horse", "--mode", "det", "--seed", "5", "--out", s(&out), "--config", &ws.config()]);

    let cfg = RunConfig::load(&ws.path("run.toml"), None).unwrap();
    let ctx = load_context(&cfg).unwrap();
    let source = load_motion(&src).unwrap();
    let (condition, _) = ctx.condition("horse", HabitMode::Deterministic, 0).unwrap();
    let rec = ctx
        .vqvae
        .reconstruct(&source.to_features(), &condition, habitmotion_core::vqvae::QuantizerMode::Argmax, None)
        .unwrap();
    let (raw, _) = features_to_motion(&rec, source.skeleton(), "horse", source.fps()).unwrap();
    let expected = motion_to_json(&with_consistent_velocities(raw).unwrap());
    assert_eq!(fs::read_to_string(&out).unwrap(), expected);
}

#[test]
fn transfer_is_reproducible() {
    let ws = workspace();
    let src = ws.source("cat");
    let run = |name: &str, seed: &str| {
        let out = ws.path(&format!("out/{name}.json"));
        ok(&["transfer", "--src", s(&src), "--target", "cow", "--mode", "stoch", "--seed", seed, "--out", s(&out), "--config", &ws.config()]);
        fs::read(out).unwrap()
    };
    assert_eq!(run("a", "7"), run("b", "7"));
    assert_ne!(run("a", "7"), run("c", "8"));
}

#[test]
fn unknown_target_exits_with_domain_error() {
    let ws = workspace();
    let src = ws.source("cat");
    let out = ws.path("out/unicorn.json");
    let err = fails(&["transfer", "--src", s(&src), "--target", "unicorn", "--out", s(&out), "--config", &ws.config()], 2);
    assert!(err.contains("unknown category"), "{err}");
    assert!(!out.exists());
}

#[test]
fn unseen_target_records_the_borrowed_habit() {
    let ws = workspace();
    let src = ws.source("cow");
    let out = ws.path("out/okapi.json");
    let manifest = ws.path("out/okapi.csv");
    ok(&["transfer", "--src", s(&src), "--target", "okapi", "--out", s(&out), "--manifest", s(&manifest), "--config", &ws.config()]);
    let m = load_motion(&out).unwrap();
    assert_eq!(m.category(), "okapi");
    let (header, rows) = read_csv(&manifest).unwrap();
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][col("output")], "okapi.json");
    assert_eq!(rows[0][col("target_category")], "okapi");
    assert!(["cat", "cow", "horse"].contains(&rows[0][col("habit_from")].as_str()));
}

#[test]
fn missing_inputs_exit_with_io_error() {
    let ws = workspace();
    let dir = tempfile::tempdir().unwrap();
    let out = s(&dir.path().join("o.json")).to_string();
    fails(&["transfer", "--src", "/no/such.json", "--target", "cat", "--out", &out, "--config", &ws.config()], 3);
    fails(&["train", "vqvae", "--config", "/no/such.toml"], 3);
    fs::write(dir.path().join("empty.toml"), "").unwrap();
    let cfg = s(&dir.path().join("empty.toml")).to_string();
    fails(&["transfer", "--src", s(&ws.source("cat")), "--target", "cat", "--out", &out, "--config", &cfg], 3);
}

#[test]
fn bad_configuration_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[vqvae]\nalfa = 1.0\n").unwrap();
    let err = fails(&["train", "vqvae", "--config", s(&cfg)], 1);
    assert!(err.contains("unknown key `vqvae.alfa`"), "{err}");
    fails(&["evaluate", "--real", ".", "--generated", ".", "--metrics", "bogus"], 1);
    fails(&["train", "vqvae", "--run-profile", "huge"], 1);
    fails(&["transfer", "--target", "cat"], 1);
}

#[test]
fn batch_transfer_and_evaluation() {
    let ws = workspace();
    let out = ws.path("batch");
    let stdout = ok(&["batch-transfer", "--sources", s(&ws.path("corpus/val")), "--out", s(&out), "--config", &ws.config()]);
    assert!(stdout.contains("0 failures"), "{stdout}");
    let (_, rows) = read_csv(&out.join("manifest.csv")).unwrap();
    assert_eq!(rows.len(), 30);
    assert_eq!(load_motion_dir(&out).unwrap().len(), 30);

    let report = ws.path("eval/batch.json");
    ok(&["evaluate", "--real", s(&ws.path("corpus/val")), "--generated", s(&out.join("manifest.csv")), "--metrics", "all", "--out", s(&report), "--config", &ws.config()]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    for key in ["fid", "downstream", "diversity", "one_nna"] {
        assert!(json[key].as_f64().unwrap().is_finite(), "{key}");
    }
    assert_eq!(json["intra_fid"]["cat"].as_f64().is_some(), true);
    let (header, cats) = read_csv(&report.with_extension("csv")).unwrap();
    assert_eq!(header, ["category", "intra_fid", "downstream"]);
    assert_eq!(cats.len(), 3);
}

#[test]
fn evaluating_a_directory_against_itself() {
    let ws = workspace();
    let val = ws.path("corpus/val");
    let stdout = ok(&["evaluate", "--real", s(&val), "--generated", s(&val), "--metrics", "fid,intra_fid,mpjpe,nna", "--config", &ws.config()]);
    let json: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!(json["fid"].as_f64().unwrap() < 1e-8, "{json}");
    assert!(json["intra_fid"]["mean"].as_f64().unwrap() < 1e-8, "{json}");
    assert_eq!(json["mpjpe"].as_f64().unwrap(), 0.0);
    assert!(json["downstream"].is_null());
}

#[test]
fn ablation_tables_have_one_row_per_variant() {
    let ws = workspace();
    for (study, rows) in [("habit-components", 4), ("alpha", 5)] {
        let out = ws.path(&format!("ablate/{study}.csv"));
        let table = ok(&["ablate", "--study", study, "--out", s(&out), "--config", &ws.config()]);
        assert_eq!(table.lines().count(), rows + 1, "{table}");
        let (header, records) = read_csv(&out).unwrap();
        assert_eq!(header.len(), 7);
        assert_eq!(records.len(), rows);
        if study == "alpha" {
            let alphas: Vec<&str> = records.iter().map(|r| r[2].as_str()).collect();
            assert_eq!(alphas, ["0", "0.25", "0.5", "0.75", "1"]);
        } else {
            let grid: Vec<(&str, &str)> = records.iter().map(|r| (r[0].as_str(), r[1].as_str())).collect();
            assert_eq!(grid, [("false", "false"), ("true", "false"), ("false", "true"), ("true", "true")]);
        }
    }
}

#[test]
fn embedding_map() {
    let ws = workspace();
    let svg = ws.path("plots/map.svg");
    let again = ws.path("plots/again.svg");
    let emb = ws.path("corpus/embeddings.json");
    ok(&["plot-embeddings", "--embeddings", s(&emb), "--out", s(&svg)]);
    ok(&["plot-embeddings", "--embeddings", s(&emb), "--out", s(&again)]);
    let text = fs::read_to_string(&svg).unwrap();
    assert_eq!(text, fs::read_to_string(&again).unwrap());
    assert_eq!(text.matches("<circle").count(), 21);

    let small = ws.path("plots/two.json");
    fs::write(
        &small,
        r#"{"format_version": 1, "dim": 2, "entries": {
            "a": {"vector": [0, 1], "source": "hand", "observed": true},
            "b": {"vector": [1, 0], "source": "hand", "observed": true}}}"#,
    )
    .unwrap();
    fails(&["plot-embeddings", "--embeddings", s(&small), "--out", s(&ws.path("plots/two.svg"))], 1);
}
