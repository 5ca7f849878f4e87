use std::path::Path;
use std::process::{Command, Output};

use depthduet::data::{load_dataset, load_depth_raw, Domain};

fn depthduet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_depthduet"))
        .args(args)
        .env_remove("DEPTHDUET_DATA_ROOT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = depthduet(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn file_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["rgb", "sparse", "dense"] {
        let mut names: Vec<_> = std::fs::read_dir(dir.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        for p in names {
            out.push((p.display().to_string(), std::fs::read(&p).unwrap()));
        }
    }
    out.push(("manifest".into(), std::fs::read(dir.join("manifest.txt")).unwrap()));
    out
}

#[test]
fn gen_data_split_determinism_and_density() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        ok(&["gen-data", "--out", s(dir), "--set", "count=10", "--set", "height=128", "--set", "width=128"]);
    }
    let samples = load_dataset(&a).unwrap();
    assert_eq!(samples.len(), 10);
    let syn = samples.iter().filter(|x| x.domain == Domain::Synthetic).count();
    assert_eq!((syn, samples.len() - syn), (5, 5));
    let manifest = std::fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert_eq!(manifest.lines().count(), 10);

    let strip = |v: Vec<(String, Vec<u8>)>, root: &Path| -> Vec<(String, Vec<u8>)> {
        v.into_iter()
            .map(|(n, bytes)| (n.replace(&root.display().to_string(), ""), bytes))
            .collect()
    };
    assert_eq!(strip(file_bytes(&a), &a), strip(file_bytes(&b), &b));

    for entry in std::fs::read_dir(a.join("sparse")).unwrap() {
        let (h, w, raw) = load_depth_raw(entry.unwrap().path()).unwrap();
        let density = raw.iter().filter(|&&v| v > 0).count() as f64 / (h * w) as f64;
        assert!((density - 0.04).abs() <= 0.004, "density {density}");
    }

    let other = tmp.path().join("c");
    ok(&["gen-data", "--out", s(&other), "--seed", "1", "--set", "count=10"]);
    ok(&["gen-data", "--out", s(&a), "--set", "count=10"]);
    assert_ne!(
        std::fs::read(other.join("rgb/000000.png")).unwrap(),
        std::fs::read(b.join("rgb/000000.png")).unwrap()
    );
}

#[test]
fn unknown_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = depthduet(&["gen-data", "--out", s(tmp.path()), "--set", "colour=blue"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("colour"), "{err}");
    assert_eq!(err.lines().count(), 1);

    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "count = 4\nwidht = 64\n").unwrap();
    let out = depthduet(&["gen-data", "--out", s(tmp.path()), "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("widht"));
}

#[test]
fn distinct_failures_have_distinct_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(depthduet(&["frobnicate"]).status.code(), Some(2));
    let missing = tmp.path().join("missing.ckpt");
    let code = depthduet(&["complete", "--checkpoint", s(&missing), "--input", "x.png", "--out", "y.png"]).status.code();
    assert_eq!(code, Some(4));
    let junk = tmp.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let code = depthduet(&["complete", "--checkpoint", s(&junk), "--input", "x.png", "--out", "y.png"]).status.code();
    assert_eq!(code, Some(7));
    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    std::fs::write(empty.join("manifest.txt"), "").unwrap();
    assert_eq!(depthduet(&["eval", "--baseline", "--input", s(&empty)]).status.code(), Some(8));
}

#[test]
fn eval_ground_truth_against_itself_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["gen-data", "--out", s(&data), "--set", "count=4", "--set", "height=32", "--set", "width=32"]);
    // a "sparse" input equal to the dense ground truth makes nearest-neighbour completion exact
    for entry in std::fs::read_dir(data.join("dense")).unwrap() {
        let p = entry.unwrap().path();
        std::fs::copy(&p, data.join("sparse").join(p.file_name().unwrap())).unwrap();
    }
    let csv = tmp.path().join("m.csv");
    ok(&["eval", "--baseline", "--input", s(&data), "--out", s(&csv)]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "id,rmse_mm,mae_mm");
    assert_eq!(lines.len(), 6);
    for line in &lines[1..] {
        let fields: Vec<&str> = line.split(',').collect();
        assert!(fields[1..].iter().all(|f| f.parse::<f64>().unwrap() == 0.0), "{line}");
    }
    assert!(lines[5].starts_with("aggregate,"));
}

#[test]
fn train_estimate_complete_plot_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let small = ["--set", "height=16", "--set", "width=16", "--set", "base_width=4", "--set", "depth_levels=2"];
    let mut args = vec!["gen-data", "--out", s(&data), "--set", "count=4"];
    args.extend(small);
    ok(&args);

    let run = tmp.path().join("run");
    let mut args = vec!["train", "--input", s(&data), "--out", s(&run), "--steps", "4", "--set", "checkpoint_every=2"];
    args.extend(small);
    ok(&args);
    let ckpt = run.join("model.ckpt");
    assert!(ckpt.exists() && run.join("checkpoints/step_000004.ckpt").exists());

    let rgb = data.join("rgb/000000.png");
    let (sparse, dense, completed) = (tmp.path().join("s.png"), tmp.path().join("d.png"), tmp.path().join("c.png"));
    ok(&["estimate", "--checkpoint", s(&ckpt), "--input", s(&rgb), "--out", s(&dense), "--sparse-out", s(&sparse)]);
    ok(&["complete", "--checkpoint", s(&ckpt), "--input", s(&sparse), "--out", s(&completed)]);
    assert_eq!(std::fs::read(&dense).unwrap(), std::fs::read(&completed).unwrap());

    // the generators are fully convolutional, but sizes must divide by 2^depth_levels
    let odd = tmp.path().join("odd");
    ok(&["gen-data", "--out", s(&odd), "--set", "count=1", "--set", "height=18", "--set", "width=18"]);
    let out = depthduet(&["estimate", "--checkpoint", s(&ckpt), "--input", s(&odd.join("rgb/000000.png")), "--out", s(&dense)]);
    assert_eq!(out.status.code(), Some(6));

    let svg = tmp.path().join("loss.svg");
    ok(&["plot", "--input", s(&run.join("loss.csv")), "--out", s(&svg)]);
    let text = std::fs::read_to_string(&svg).unwrap();
    assert!(text.starts_with("<svg") && text.contains("rec_dg"));

    // resume continues the step counter and the loss log
    let mut args = vec!["train", "--input", s(&data), "--out", s(&run), "--checkpoint", s(&ckpt), "--steps", "2"];
    args.extend(small);
    ok(&args);
    let log = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 6);
}
