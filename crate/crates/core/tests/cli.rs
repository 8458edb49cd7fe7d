use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn formpoint(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_formpoint"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("FORMPOINT_SEED")
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = formpoint(out, args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn manifest(out: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(out.join("corpus/manifest.json")).unwrap()).unwrap()
}

fn tiny_train(out: &Path, extra: &[&str]) -> String {
    let mut args = vec!["train", "--preset", "tiny", "--max-tokens", "32", "--epochs", "2"];
    args.extend_from_slice(extra);
    ok(out, &args)
}

#[test]
fn generate_counts_and_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(a.path(), &["--seed", "7", "generate", "--digital", "10"]);
    ok(b.path(), &["--seed", "7", "generate", "--digital", "10"]);
    let docs = &manifest(a.path())["documents"];
    let total: u64 = docs.as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(total, 10);
    assert_eq!(manifest(a.path())["seed"], 7);
    for f in ["train.json", "val.json", "test_digital.json", "manifest.json"] {
        assert_eq!(fs::read(a.path().join("corpus").join(f)).unwrap(), fs::read(b.path().join("corpus").join(f)).unwrap(), "{f}");
    }
    assert!(a.path().join("config-echo/generate.toml").is_file());
}

#[test]
fn noise_override_is_recorded() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["generate", "--handwritten", "5", "--value-drop", "0.3"]);
    let m = manifest(d.path());
    assert_eq!(m["profiles"]["handwritten"]["value_drop_rate"], 0.3);
    assert_eq!(m["documents"]["test_handwritten"], 5);
    let echo = fs::read_to_string(d.path().join("config-echo/generate.toml")).unwrap();
    assert!(echo.contains("value_drop_rate = 0.3"), "{echo}");
}

#[test]
fn invalid_profile_is_usage_error() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(formpoint(d.path(), &["generate", "--digital", "3", "--value-drop", "1.5"]).status.code(), Some(2));
    assert_eq!(formpoint(d.path(), &["generate", "--bogus"]).status.code(), Some(2));
}

#[test]
fn seed_precedence() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.toml");
    fs::write(&cfg, "seed = 11\n[model]\ndual_layers = 1\n").unwrap();
    let run = |args: &[&str], env: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_formpoint"));
        c.arg("--out").arg(d.path()).args(args).env_remove("FORMPOINT_SEED");
        if let Some(s) = env {
            c.env("FORMPOINT_SEED", s);
        }
        assert!(c.output().unwrap().status.success());
        manifest(d.path())["seed"].as_u64().unwrap()
    };
    assert_eq!(run(&["generate", "--digital", "1"], Some("5")), 5);
    assert_eq!(run(&["--config", cfg.to_str().unwrap(), "generate", "--digital", "1"], Some("5")), 11);
    assert_eq!(run(&["--config", cfg.to_str().unwrap(), "--seed", "3", "generate", "--digital", "1"], Some("5")), 3);
    assert_eq!(run(&["generate", "--digital", "1"], None), 0);
}

#[test]
fn train_writes_artifacts_and_respects_flags() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.toml");
    fs::write(&cfg, "[model]\ndual_layers = 3\nattn_heads = 4\n").unwrap();
    ok(d.path(), &["generate", "--digital", "6", "--zero-noise"]);
    let c = cfg.to_str().unwrap();
    let stdout = tiny_train(d.path(), &["--config", c, "--aspects", "VTP", "--dual-layers", "1"]);
    assert!(stdout.contains("params sha256"));
    for f in ["params/model.bin", "params/metrics.log", "reports/train_val.tsv", "reports/train_val.txt"] {
        assert!(d.path().join(f).is_file(), "{f}");
    }
    let echo: toml::Table = toml::from_str(&fs::read_to_string(d.path().join("config-echo/train.toml")).unwrap()).unwrap();
    let model = echo["model"].as_table().unwrap();
    assert_eq!(model["aspect_flags"].as_str(), Some("VTP"));
    // flag beats file, file beats preset
    assert_eq!(model["dual_layers"].as_integer(), Some(1));
    assert_eq!(model["attn_heads"].as_integer(), Some(4));
    assert_eq!(model["d_model"].as_integer(), Some(8));
    let log = fs::read_to_string(d.path().join("params/metrics.log")).unwrap();
    assert_eq!(log.lines().filter(|l| !l.starts_with('#')).count(), 2);
}

#[test]
fn train_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        ok(d.path(), &["--seed", "4", "generate", "--digital", "4"]);
    }
    let ha = tiny_train(a.path(), &["--seed", "4"]);
    let hb = tiny_train(b.path(), &["--seed", "4"]);
    assert_eq!(ha, hb);
    assert_eq!(fs::read(a.path().join("params/model.bin")).unwrap(), fs::read(b.path().join("params/model.bin")).unwrap());
}

#[test]
fn missing_corpus_exits_with_usage_code() {
    let d = tempfile::tempdir().unwrap();
    let o = formpoint(d.path(), &["train", "--corpus", d.path().join("nope").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not exist"));
}

#[test]
fn evaluate_all_natures_and_parser_mode() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["generate", "--digital", "5", "--printed", "2", "--handwritten", "2"]);
    tiny_train(d.path(), &[]);
    let stdout = ok(d.path(), &["evaluate", "--parser-mode", "--iou", "0.5", "--merge-rate", "0.3", "--split-rate", "0.3"]);
    for (split, tag) in [("test_digital", "[D]"), ("test_printed", "[P]"), ("test_handwritten", "[H]")] {
        assert!(stdout.contains(&format!("{split} {tag}")), "{stdout}");
        let tsv = fs::read_to_string(d.path().join(format!("reports/eval_{split}.tsv"))).unwrap();
        assert!(tsv.starts_with("run_id\tsplit\tmetric\tclass\tvalue\n"));
        assert!(tsv.contains("\tweighted_f1\tall\t"));
        let parser = fs::read_to_string(d.path().join(format!("reports/parser_{split}.tsv"))).unwrap();
        assert!(parser.contains("\tparser_accuracy\tall\t"));
    }
}

#[test]
fn evaluate_rejects_params_of_another_shape() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["generate", "--digital", "10"]);
    fs::create_dir_all(d.path().join("params")).unwrap();
    fs::write(d.path().join("params/model.bin"), b"FPPARAMS garbage").unwrap();
    let o = formpoint(d.path(), &["evaluate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
}

#[test]
fn ablation_grid_file() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["generate", "--digital", "4", "--handwritten", "2"]);
    let stdout = ok(
        d.path(),
        &[
            "evaluate",
            "--split",
            "test_handwritten",
            "--ablation",
            "aspects=VTP,VTPDG",
            "--ablation",
            "pe=none,linear,xy",
            "--preset",
            "tiny",
            "--max-tokens",
            "32",
            "--epochs",
            "1",
        ],
    );
    assert_eq!(stdout.lines().count(), 7, "{stdout}");
    let tsv = fs::read_to_string(d.path().join("reports/ablation.tsv")).unwrap();
    for cell in ["aspects=VTP,pe=none", "aspects=VTPDG,pe=xy", "aspects=VTP,pe=linear"] {
        assert!(tsv.contains(cell), "{cell}");
    }
    assert_eq!(formpoint(d.path(), &["evaluate", "--ablation", "depth=1,2"]).status.code(), Some(2));
}

#[test]
fn stats_and_agreement() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["generate", "--digital", "10", "--handwritten", "3"]);
    ok(d.path(), &["stats"]);
    let stats: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("reports/stats.json")).unwrap()).unwrap();
    assert_eq!(stats["components"], manifest(d.path())["components"]);
    let rel = fs::read_to_string(d.path().join("reports/relations.tsv")).unwrap();
    for line in rel.lines().skip(1) {
        let f: Vec<f64> = line.split('\t').skip(1).take(2).map(|x| x.parse().unwrap()).collect();
        assert!((f[0] + f[1] - 100.0).abs() < 1e-9, "{line}");
    }
    let labels = d.path().join("corpus/train.json");
    let l = labels.to_str().unwrap();
    let out = ok(d.path(), &["stats", "--labels", l, "--labels", l]);
    assert!(out.contains("cohen kappa 1.0000"), "{out}");
    let agreement = fs::read_to_string(d.path().join("reports/agreement.tsv")).unwrap();
    assert!(agreement.contains("cohen_kappa\t1\n") && agreement.contains("hamming_loss\t0\n"), "{agreement}");
}

#[test]
fn predict_paths() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["generate", "--digital", "3", "--zero-noise"]);
    tiny_train(d.path(), &[]);
    let doc = d.path().join("corpus/train.json");
    let doc = doc.to_str().unwrap();
    let out = ok(d.path(), &["predict", "--document", doc, "--key", "com_nm"]);
    let line = out.trim();
    assert!(line == "NO_VALUE" || line.split('\t').count() == 3, "{line}");

    let o = formpoint(d.path(), &["predict", "--document", doc, "--key", "company"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    for name in ["com_nm", "hold_nm", "new_pct"] {
        assert!(err.contains(name), "{err}");
    }

    let bad = d.path().join("bad.json");
    fs::write(&bad, "{\"format\": \"formpoint-annotations\", \"version\": 1, \"documents\": [{}]}").unwrap();
    let o = formpoint(d.path(), &["predict", "--document", bad.to_str().unwrap(), "--key", "com_nm"]);
    assert_eq!(o.status.code(), Some(1));
}
