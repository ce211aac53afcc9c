use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use momok_core::data::FeatureOptions;
use momok_core::{Config, Dataset, Trainer};

fn data_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn momok(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_momok"))
        .args(args)
        .output()
        .expect("spawn momok")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn toy_cfg() -> PathBuf {
    data_root().join("toy5.cfg")
}

/// Trains on the bundled toy graph into `dir` with extra overrides.
fn train_toy(dir: &Path, extra: &[&str]) -> Output {
    let cfg = toy_cfg();
    let mut args = vec!["train", "--config", s(&cfg), "--out_dir", s(dir)];
    args.extend_from_slice(extra);
    momok(&args)
}

#[test]
fn train_writes_checkpoint_trace_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_toy(dir.path(), &["--epochs", "3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["model.ckpt", "last.ckpt", "trace.tsv", "config.txt", "metrics.txt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let trace = fs::read_to_string(dir.path().join("trace.tsv")).unwrap();
    assert_eq!(trace.lines().count(), 4);
    assert!(String::from_utf8_lossy(&out.stdout).contains("mrr\t"));
}

#[test]
fn bad_config_values_and_keys_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_toy(dir.path(), &["--lambda", "-1"]);
    assert_eq!(code(&out), 2);
    let out = train_toy(dir.path(), &["--no_such_key", "1"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("no_such_key"));
}

#[test]
fn missing_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = momok(&[
        "train",
        "--data_dir",
        s(&dir.path().join("absent")),
        "--out_dir",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn zero_epochs_checkpoint_is_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_toy(dir.path(), &["--epochs", "0"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let cfg = Config::load(&toy_cfg()).unwrap();
    let data: Dataset = cfg.load_dataset().unwrap();
    let init = Trainer::new(&cfg, &data).unwrap().checkpoint().to_bytes();
    assert_eq!(fs::read(dir.path().join("model.ckpt")).unwrap(), init);
    assert_eq!(fs::read(dir.path().join("last.ckpt")).unwrap(), init);
}

#[test]
fn fixed_seed_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let oa = train_toy(a.path(), &["--epochs", "4"]);
    let ob = train_toy(b.path(), &["--epochs", "4"]);
    assert_eq!(oa.stdout.len(), ob.stdout.len());
    for f in ["model.ckpt", "last.ckpt", "trace.tsv", "metrics.txt"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn memorized_toy_graph_evaluates_with_high_hit1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&train_toy(dir.path(), &["--epochs", "200"])), 0);
    let ckpt = dir.path().join("last.ckpt");
    let out = momok(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--config",
        s(&dir.path().join("config.txt")),
        "--split",
        "train",
        "--per-modality",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("metrics_train.txt")).unwrap();
    let hit1: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("hit1\t"))
        .unwrap()
        .parse()
        .unwrap();
    assert!(hit1 >= 0.95, "{text}");
    let table = fs::read_to_string(dir.path().join("per_relation_train.tsv")).unwrap();
    assert!(table.starts_with("relation\tqueries\tstructure\timage\ttext\tjoint\tsum\n"));
}

#[test]
fn mismatched_dataset_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&train_toy(dir.path(), &["--epochs", "1"])), 0);
    let out = momok(&[
        "eval",
        "--checkpoint",
        s(&dir.path().join("model.ckpt")),
        "--data",
        s(&data_root().join("latent50")),
    ]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn report_writes_normalized_weights_and_rejects_unknown_relations() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&train_toy(dir.path(), &["--epochs", "2"])), 0);
    let ckpt = dir.path().join("model.ckpt");
    let toy = data_root().join("toy5");
    let out = momok(&[
        "report",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&toy),
        "--relations",
        "next,bogus_rel",
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("bogus_rel"));

    let out = momok(&["report", "--checkpoint", s(&ckpt), "--data", s(&toy)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let first = fs::read(dir.path().join("gate_weights.tsv")).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    let mut sums = std::collections::BTreeMap::<(String, String), f64>::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        *sums.entry((f[0].into(), f[1].into())).or_default() += f[3].parse::<f64>().unwrap();
    }
    assert!(!sums.is_empty());
    for (k, v) in sums {
        assert!((v - 1.0).abs() < 1e-5, "{k:?} sums to {v}");
    }
    assert!(dir.path().join("relation_mrr_test.tsv").exists());
    assert_eq!(
        code(&momok(&["report", "--checkpoint", s(&ckpt), "--data", s(&toy)])),
        0
    );
    assert_eq!(fs::read(dir.path().join("gate_weights.tsv")).unwrap(), first);
}

fn corrupt(data: &Path, scenario: &str, ratio: &str, seed: &str, out: &Path) -> Output {
    momok(&[
        "corrupt",
        "--data",
        s(data),
        "--scenario",
        scenario,
        "--ratio",
        ratio,
        "--seed",
        seed,
        "--out",
        s(out),
    ])
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn corrupt_ratio_zero_is_byte_identical_and_seeds_reproduce() {
    let src = data_root().join("latent50");
    let tmp = tempfile::tempdir().unwrap();
    for scenario in ["noise", "missing", "sparse"] {
        let zero = tmp.path().join(format!("{scenario}0"));
        assert_eq!(code(&corrupt(&src, scenario, "0", "1", &zero)), 0);
        assert_eq!(dir_bytes(&zero), dir_bytes(&src), "{scenario}");
        let a = tmp.path().join(format!("{scenario}a"));
        let b = tmp.path().join(format!("{scenario}b"));
        assert_eq!(code(&corrupt(&src, scenario, "0.3", "9", &a)), 0);
        assert_eq!(code(&corrupt(&src, scenario, "0.3", "9", &b)), 0);
        assert_eq!(dir_bytes(&a), dir_bytes(&b), "{scenario}");
        assert_ne!(dir_bytes(&a), dir_bytes(&src), "{scenario}");
        // The corrupted directory is a loadable dataset.
        Dataset::load(&momok_core::data::DataPaths::from_dir(&a), &FeatureOptions::default()).unwrap();
    }
}

#[test]
fn sparse_keeps_seventy_percent_of_train_lines() {
    let src = data_root().join("latent50");
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&corrupt(&src, "sparse", "0.3", "0", tmp.path())), 0);
    let lines = fs::read_to_string(tmp.path().join("train.tsv"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(lines, 210);
    let original: Vec<String> = fs::read_to_string(src.join("train.tsv"))
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    let kept = fs::read_to_string(tmp.path().join("train.tsv")).unwrap();
    assert!(kept.lines().all(|l| original.iter().any(|o| o == l)));
}

#[test]
fn bad_scenario_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = corrupt(&data_root().join("toy5"), "blur", "0.1", "0", tmp.path());
    assert_eq!(code(&out), 2);
}

#[test]
fn gradcheck_passes_fails_on_corruption_and_skips_club_for_one_expert() {
    let ok = momok(&["gradcheck"]);
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));
    let bad = momok(&["gradcheck", "--corrupt-gradient"]);
    assert_eq!(code(&bad), 5);
    assert!(stderr(&bad).contains("L_kgc\tFAIL"));
    let single = momok(&["gradcheck", "--experts", "1"]);
    assert_eq!(code(&single), 0);
    let text = String::from_utf8_lossy(&single.stdout).into_owned();
    assert!(text.contains("L_club\tskipped"), "{text}");
    assert!(text.contains("L_kgc\tok"), "{text}");
}
