use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[env]
horizon = 40
switch_every = 20

[meta]
K = 4
M = 4
iterations = 2
tasks_per_itr = 2
ts_per_itr = 80
epochs = 1
max_steps_per_epoch = 3
batch_size = 4
eval_segments = 4

[model]
hidden = [8]

[controller]
n_A_train = 8
H_train = 4
n_A_test = 8
H_test = 4

[eval]
seeds = [0, 1]
de_lr_grid = [0.0, 0.001]
validation_episodes = 1

[experiment]
sensitivity_values = [4, 6]
sensitivity_horizon = 4
compare_methods = ["grbal", "mb", "mb_de", "mb_oracle"]
"#;

fn metadyn(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metadyn"))
        .args(args)
        .env("METADYN_OUTPUT_ROOT", root)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn setup() -> (tempfile::TempDir, String) {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let cfg = cfg.to_str().unwrap().to_string();
    (tmp, cfg)
}

#[test]
fn unknown_experiment_is_a_usage_error() {
    let (tmp, _) = setup();
    let out = metadyn(tmp.path(), &["experiment", "fig5"]);
    assert_eq!(out.status.code(), Some(2));
    let err = text(&out.stderr);
    for name in ["fig4", "sensitivity", "distribution", "compare"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn config_errors_have_their_own_exit_code() {
    let (tmp, cfg) = setup();
    let out = metadyn(tmp.path(), &["train", "--config", &cfg, "--set", "meta.bogus=1"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(text(&out.stderr).contains("meta"));
    let out = metadyn(tmp.path(), &["train", "--config", &cfg, "--set", "controller.H_test=9"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(text(&out.stderr).contains("controller.H_test"));
}

#[test]
fn eval_without_checkpoint_is_an_artifact_error() {
    let (tmp, _) = setup();
    let missing = tmp.path().join("nothing");
    let out = metadyn(tmp.path(), &["eval", "--run", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn train_eval_inspect_and_resume() {
    let (tmp, cfg) = setup();
    let run = tmp.path().join("run");
    let run_s = run.to_str().unwrap();
    let out = metadyn(tmp.path(), &["train", "--config", &cfg, "--set", "meta.K=6", "--seed", "3", "--out", run_s]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let snap = fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(snap.contains("K = 6"));
    assert!(snap.contains("seed = 3"));

    let first = metadyn(tmp.path(), &["eval", "--run", run_s, "--scenario", "fast_adaptation", "--workers", "2"]);
    assert!(first.status.success(), "{}", text(&first.stderr));
    let seg = run.join("eval/fast_adaptation/grbal_fast_adaptation_segments.csv");
    let head = fs::read_to_string(&seg).unwrap();
    assert!(head.starts_with("seed,t,pre_error,post_error"));
    let before = fs::read(&seg).unwrap();
    let again = metadyn(tmp.path(), &["eval", "--run", run_s, "--scenario", "fast_adaptation"]);
    assert!(again.status.success());
    assert_eq!(before, fs::read(&seg).unwrap());

    let out = metadyn(tmp.path(), &["inspect", run_s]);
    assert!(out.status.success());
    let s = text(&out.stdout);
    assert!(s.contains("config hash") && s.contains("block theta") && s.contains("\"iteration\":2"), "{s}");

    let out = metadyn(tmp.path(), &["train", "--config", &cfg, "--set", "meta.K=8", "--seed", "3", "--out", run_s, "--resume"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(text(&out.stderr).contains("resume"));
    let out = metadyn(tmp.path(), &["train", "--config", &cfg, "--set", "meta.K=6", "--seed", "3", "--out", run_s]);
    assert_eq!(out.status.code(), Some(5));
    let out = metadyn(tmp.path(), &["train", "--config", &cfg, "--set", "meta.K=6", "--seed", "3", "--out", run_s, "--resume"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
}

#[test]
fn output_root_comes_from_the_environment() {
    let (tmp, cfg) = setup();
    let out = metadyn(tmp.path(), &["train", "--config", &cfg, "--set", "method=mb"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let dirs: Vec<_> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("mb_"))
        .collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    assert!(tmp.path().join(&dirs[0]).join("model.bin").is_file());
}

#[test]
fn compare_reports_budget_parity() {
    let (tmp, cfg) = setup();
    let out = metadyn(tmp.path(), &["experiment", "compare", "--config", &cfg, "--workers", "2"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let s = text(&out.stdout);
    assert!(s.contains("budget parity: 160 env steps per method, oracle 640"), "{s}");
    for m in ["GrBAL", "MB", "MB+DE", "MB-oracle"] {
        assert!(s.contains(&format!("{m}: mean return")), "{s}");
    }
}

#[test]
fn sensitivity_has_one_row_per_k() {
    let (tmp, cfg) = setup();
    let dir = tmp.path().join("sens");
    let out = metadyn(tmp.path(), &["experiment", "sensitivity", "--config", &cfg, "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let csv = fs::read_to_string(dir.join("sensitivity.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("4,4,") && lines[2].starts_with("6,6,"), "{csv}");
}

#[test]
fn distribution_needs_the_reacher() {
    let (tmp, cfg) = setup();
    let out = metadyn(tmp.path(), &["experiment", "distribution", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(3));
}
