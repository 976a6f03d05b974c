use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"
run_name = "tiny"
num_layers = 1
num_heads = 2
d_model = 8
d_ff = 16
max_len = 24
epochs = 2
batch_size = 8
lr_max = 0.003
synthetic_num_train = 24
synthetic_num_dev = 12
synthetic_num_test = 12
synthetic_vocab_size = 40
"#;

fn sslreg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sslreg"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(out: Output) -> Value {
    serde_json::from_str(&ok(out)).expect("stdout is JSON")
}

fn setup() -> (tempfile::TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    (tmp, cfg)
}

#[test]
fn gen_writes_corpus_files() {
    let (tmp, cfg) = setup();
    let files = json(sslreg(
        tmp.path(),
        &["gen", "--config", cfg.to_str().unwrap(), "--out", "data", "--num-examples", "500", "--num-classes", "2"],
    ));
    let train = tmp.path().join(files["train"].as_str().unwrap());
    let text = fs::read_to_string(train).unwrap();
    assert_eq!(text.lines().count(), 500);
    for line in text.lines() {
        let (label, words) = line.split_once('\t').unwrap();
        assert!(label == "0" || label == "1");
        assert!(!words.is_empty());
    }
    assert!(tmp.path().join(files["lexicon"].as_str().unwrap()).is_file());
}

#[test]
fn train_then_evaluate_reproduces_dev_metrics() {
    let (tmp, cfg) = setup();
    let cfg = cfg.to_str().unwrap();
    let summary = json(sslreg(tmp.path(), &["train", "--config", cfg, "--regime", "ssl_reg_satp"]));
    let run_dir = tmp.path().join("out/tiny");
    for f in ["config.toml", "history.jsonl", "best.ckpt", "metrics.json"] {
        assert!(run_dir.join(f).is_file(), "{f}");
    }
    assert_eq!(summary["regime"], "ssl_reg_satp");
    let dev = json(sslreg(tmp.path(), &["evaluate", "--config", cfg]));
    assert_eq!(dev, summary["dev"]);
    let test = json(sslreg(tmp.path(), &["evaluate", "--config", cfg, "--split", "test"]));
    assert_eq!(test, summary["test"]);
}

#[test]
fn same_config_twice_gives_identical_metrics() {
    let (tmp, cfg) = setup();
    let cfg = cfg.to_str().unwrap();
    ok(sslreg(tmp.path(), &["train", "--config", cfg]));
    let first = fs::read(tmp.path().join("out/tiny/metrics.json")).unwrap();
    ok(sslreg(tmp.path(), &["train", "--config", cfg]));
    assert_eq!(fs::read(tmp.path().join("out/tiny/metrics.json")).unwrap(), first);
}

#[test]
fn invalid_settings_exit_nonzero_with_a_message() {
    let (tmp, cfg) = setup();
    let cfg = cfg.to_str().unwrap();
    let out = sslreg(tmp.path(), &["train", "--config", cfg, "--regime", "tapt", "--lambda", "0.5"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("error:") && err.contains("lambda"), "{err}");

    fs::write(tmp.path().join("typo.toml"), "lamda = 0.1\n").unwrap();
    let out = sslreg(tmp.path(), &["train", "--config", "typo.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("lamda"));

    let out = sslreg(tmp.path(), &["train", "--config", "missing.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.toml"));

    let out = sslreg(tmp.path(), &["evaluate", "--config", cfg, "--checkpoint", "nope.ckpt"]);
    assert!(!out.status.success());
}

#[test]
fn sweep_writes_one_row_per_lambda() {
    let (tmp, cfg) = setup();
    let cfg = cfg.to_str().unwrap();
    let summary = json(sslreg(tmp.path(), &["sweep", "--config", cfg, "--lambdas", "0.01,0.1,1"]));
    assert_eq!(summary["rows"].as_array().unwrap().len(), 3);
    assert!(tmp.path().join("out/tiny/sweep_summary.json").is_file());

    let out = sslreg(tmp.path(), &["sweep", "--config", cfg, "--lambdas", "0.1,0.1"]);
    assert!(!out.status.success());
}

#[test]
fn augment_stats_cover_the_requested_operators() {
    let (tmp, cfg) = setup();
    let cfg = cfg.to_str().unwrap();
    let report = json(sslreg(tmp.path(), &["augment", "--config", cfg, "--ops", "SR+RD", "--stats", "--repeat", "20"]));
    let counts = report["op_counts"].as_object().unwrap();
    assert_eq!(counts.keys().collect::<Vec<_>>(), ["RD", "SR"]);
    assert!(report["instances"].as_u64().unwrap() > 0);

    let lines = ok(sslreg(tmp.path(), &["augment", "--config", cfg]));
    assert_eq!(lines.lines().count(), 24);
    let first: Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert!(first["tokens"].is_array() && first["op"].is_string());
}

#[test]
fn mask_stats_report_fractions() {
    let (tmp, cfg) = setup();
    let cfg = cfg.to_str().unwrap();
    let report = json(sslreg(tmp.path(), &["mask", "--config", cfg, "--stats", "--repeat", "200"]));
    let f = report["selected_fraction"].as_f64().unwrap();
    assert!((0.12..0.2).contains(&f), "{f}");
    let m = report["mask_fraction"].as_f64().unwrap();
    assert!((0.7..0.9).contains(&m), "{m}");
}

#[test]
fn gradcheck_reports_every_loss() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(sslreg(tmp.path(), &["gradcheck", "--seeds", "1", "--samples", "20"]));
    assert_eq!(out.lines().count(), 5);
    assert!(out.lines().all(|l| l.ends_with(" ok")), "{out}");
}

fn shipped_configs() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples");
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    paths.sort();
    paths
}

#[test]
fn shipped_configs_parse_and_validate() {
    let paths = shipped_configs();
    assert!(paths.len() >= 2);
    for p in paths {
        let cfg = sslreg::runner::ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}

#[test]
fn shipped_synthetic_example_runs_quickly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/synthetic_ssl_reg.toml");
    let start = std::time::Instant::now();
    let summary = json(sslreg(tmp.path(), &["train", "--config", cfg.to_str().unwrap()]));
    assert!(start.elapsed().as_secs() < 60);
    assert!(summary["dev"]["macro_f1"].as_f64().unwrap() > 0.5);
}
