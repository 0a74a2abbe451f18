use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn beatagg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beatagg")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("cfg.json");
    fs::write(
        &path,
        r#"{
            "synth.pieces": 16, "synth.min_duration_s": 8, "synth.max_duration_s": 10,
            "synth.channels": 2, "synth.features": 8,
            "train.model.hidden": 8, "train.model.msam.channel_dim": 4,
            "train.clip_seconds": 6, "train.clip_overlap_seconds": 2, "train.min_tail_seconds": 2,
            "train.learning_rate": 0.003, "train.batch_size": 8
        }"#,
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn gradcheck_passes_with_default_seed() {
    let o = beatagg(&["gradcheck"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.starts_with("PASS"), "{out}");
    assert!(out.contains("max relative error"));
}

#[test]
fn eval_on_identical_files_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("a.beats");
    let text: String = (0..40).map(|k| format!("{:.3}\t{}\n", 0.5 + k as f64 * 0.5, k % 4 + 1)).collect();
    fs::write(&f, text).unwrap();
    let report = dir.path().join("r.json");
    let f = f.to_str().unwrap();
    let o = beatagg(&["eval", "--est", f, "--ref", f, "--out", report.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    for key in ["f_measure", "cml_t", "aml_t"] {
        assert_eq!(v["beats"]["mean"][key], 1.0, "{key}");
        assert_eq!(v["downbeats"]["mean"][key], 1.0, "{key}");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    // missing mandatory seed
    assert_eq!(beatagg(&["synth", "--out", out.to_str().unwrap()]).status.code(), Some(1));
    // unknown configuration key
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"train.nope": 1}"#).unwrap();
    let o = beatagg(&["--config", cfg.to_str().unwrap(), "synth", "--seed", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
    // unreadable input
    let missing = dir.path().join("missing.beats");
    let o = beatagg(&["eval", "--est", missing.to_str().unwrap(), "--ref", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    assert_eq!(beatagg(&["--help"]).status.code(), Some(0));
}

#[test]
fn synth_train_track_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let p = |s: &str| dir.path().join(s).to_string_lossy().into_owned();

    for d in ["data", "data2"] {
        let o = beatagg(&["--config", &cfg, "-q", "synth", "--seed", "3", "--out", &p(d)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(
        fs::read(dir.path().join("data/features/synth_005.npy")).unwrap(),
        fs::read(dir.path().join("data2/features/synth_005.npy")).unwrap()
    );

    let manifest = p("data/manifest.json");
    let train = |ckpt: &str, log: &str| {
        let o = beatagg(&[
            "--config", &cfg, "-q", "train", "--manifest", &manifest, "--seed", "5", "--out", ckpt, "--log", log,
            "--max-epochs", "2",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        o
    };
    let o = train(&p("m.bfm"), &p("log.jsonl"));
    let summary: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(summary["epochs"], 2);
    let log = fs::read_to_string(p("log.jsonl")).unwrap();
    let records: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 2);
    assert!(records[1]["val_loss"].is_f64() && records[1]["timestamp"].is_f64());
    train(&p("m2.bfm"), &p("log2.jsonl"));
    assert_eq!(fs::read(p("m.bfm")).unwrap(), fs::read(p("m2.bfm")).unwrap());

    let o = beatagg(&["--jobs", "2", "-q", "track", "--checkpoint", &p("m.bfm"), "--manifest", &manifest, "--all", "--out", &p("est")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_dir(p("est")).unwrap().count(), 16);

    let one = beatagg(&[
        "-q", "track", "--checkpoint", &p("m.bfm"), "--features", &p("data/features/synth_000.npy"), "--out", &p("one.beats"),
    ]);
    assert!(one.status.success());
    assert_eq!(fs::read(p("one.beats")).unwrap(), fs::read(p("est/synth_000.beats")).unwrap());

    let o = beatagg(&["--jobs", "3", "eval", "--est", &p("est"), "--ref", &manifest, "--no-trim"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("beats") && out.contains("downbeats") && out.contains("mean"), "{out}");
    let by_dir = beatagg(&["eval", "--est", &p("est"), "--ref", &p("data/annotations"), "--no-trim"]);
    assert_eq!(stdout(&by_dir), out);
}

#[test]
fn ablate_prints_rows_in_table_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let data = dir.path().join("data");
    let manifest = data.join("manifest.json");
    assert!(beatagg(&["--config", &cfg, "-q", "synth", "--seed", "1", "--out", data.to_str().unwrap()]).status.success());
    let o = beatagg(&[
        "--config", &cfg, "-q", "ablate", "--manifest", manifest.to_str().unwrap(), "--seed", "2", "--max-epochs", "1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 8);
    let ticks: Vec<usize> = rows.iter().map(|r| r.matches('✓').count()).collect();
    assert_eq!(ticks, vec![0, 1, 1, 1, 2, 2, 2, 3], "{out}");
    assert!(rows[1].starts_with(" ✓ "), "{out}");
    assert!(rows[7].starts_with(" ✓   ✓   ✓ "), "{out}");
}
