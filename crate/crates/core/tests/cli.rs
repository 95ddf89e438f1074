use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use hlmelody::cli::commands::format_predictions;
use hlmelody::data::labels::read_labels;
use hlmelody::data::manifest::Manifest;
use hlmelody::data::synth::Split;
use hlmelody::infer::MelodyEstimate;
use hlmelody::pitchgrid::hz_to_log;
use hlmelody::Method;
use tempfile::TempDir;

fn hlmelody(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_hlmelody"))
        .args(args)
        .output()
        .expect("run binary");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn ok(args: &[&str]) {
    let (code, err) = hlmelody(args);
    assert_eq!(code, 0, "{args:?} failed: {err}");
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small dataset under `root/data`; returns the manifest path.
fn small_data(root: &Path, n_train: usize, n_test: usize) -> PathBuf {
    let data = root.join("data");
    ok(&[
        "synth",
        "--out-dir",
        s(&data),
        "--n-train",
        &n_train.to_string(),
        "--n-test",
        &n_test.to_string(),
        "--set",
        "duration_s=2.0",
    ]);
    data.join("manifest.json")
}

fn train(root: &Path, manifest: &Path, method: &str, epochs: usize) -> PathBuf {
    let ck = root.join(format!("{method}.json"));
    ok(&[
        "train",
        "--manifest",
        s(manifest),
        "--checkpoint",
        s(&ck),
        "--trace",
        s(&root.join(format!("{method}_trace.csv"))),
        "--method",
        method,
        "--epochs",
        &epochs.to_string(),
        "--set",
        "hidden=[16]",
    ]);
    ck
}

fn trace_rows(path: &Path) -> Vec<(usize, f64)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("epoch"))
        .map(|l| {
            let (e, v) = l.split_once(',').unwrap();
            (e.parse().unwrap(), v.parse().unwrap())
        })
        .collect()
}

fn sorted_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn bad_method_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let manifest = small_data(tmp.path(), 1, 0);
    let (code, err) = hlmelody(&["train", "--manifest", s(&manifest), "--method", "M9"]);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn unknown_key_and_bad_usage_exit_with_two() {
    assert_eq!(hlmelody(&["synth", "--set", "colour=blue"]).0, 2);
    assert_eq!(hlmelody(&["synth", "--set", "no_equals_sign"]).0, 2);
    assert_eq!(hlmelody(&["frobnicate"]).0, 2);
    assert_eq!(hlmelody(&["--threads", "0", "synth"]).0, 2);
}

#[test]
fn missing_input_is_a_runtime_error() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nope.json");
    let (code, _) = hlmelody(&["train", "--manifest", s(&missing), "--method", "M1"]);
    assert_eq!(code, 1);
}

#[test]
fn config_file_sections_are_read() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.toml");
    let out = tmp.path().join("from_file");
    fs::write(&cfg, format!("[synth]\nout_dir = {:?}\nn_train = 2\nn_test = 1\nduration_s = 1.0\n", s(&out))).unwrap();
    ok(&["--config", s(&cfg), "synth"]);
    let m = Manifest::load(&out.join("manifest.json")).unwrap();
    assert_eq!(m.entries.len(), 3);
}

#[test]
fn empty_dataset_gives_a_valid_manifest() {
    let tmp = TempDir::new().unwrap();
    let manifest = small_data(tmp.path(), 0, 0);
    let m = Manifest::load(&manifest).unwrap();
    assert!(m.entries.is_empty());
}

#[test]
fn splits_are_disjoint_and_complete() {
    let tmp = TempDir::new().unwrap();
    let manifest = small_data(tmp.path(), 5, 3);
    let m = Manifest::load(&manifest).unwrap();
    let train: Vec<_> = m.split(Split::Train).map(|e| e.id.clone()).collect();
    let test: Vec<_> = m.split(Split::Test).map(|e| e.id.clone()).collect();
    assert_eq!((train.len(), test.len()), (5, 3));
    assert!(train.iter().all(|id| !test.contains(id)));
    for e in &m.entries {
        let labels = read_labels(&manifest.parent().unwrap().join(&e.labels)).unwrap();
        assert_eq!(labels.len(), 200);
    }
}

#[test]
fn synth_is_deterministic_per_seed() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for dir in [&a, &b] {
        ok(&["synth", "--out-dir", s(dir.path()), "--seed", "7", "--n-train", "3", "--n-test", "2"]);
    }
    for sub in ["", "audio", "labels"] {
        assert_eq!(sorted_files(&a.path().join(sub)), sorted_files(&b.path().join(sub)), "{sub}");
    }
    let c = TempDir::new().unwrap();
    ok(&["synth", "--out-dir", s(c.path()), "--seed", "8", "--n-train", "3", "--n-test", "2"]);
    assert_ne!(sorted_files(&a.path().join("audio")), sorted_files(&c.path().join("audio")));
}

#[test]
fn m1_smoke_run_has_finite_trace_and_scores() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    let manifest = small_data(root, 4, 2);
    let ck = train(root, &manifest, "M1", 3);
    let rows = trace_rows(&root.join("M1_trace.csv"));
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert!(rows.iter().all(|r| r.1.is_finite()));

    let pred = root.join("pred");
    ok(&["predict", "--checkpoint", s(&ck), "--manifest", s(&manifest), "--out-dir", s(&pred)]);
    assert_eq!(fs::read_dir(&pred).unwrap().count(), 2);
    let eval = root.join("eval");
    ok(&["eval", "--manifest", s(&manifest), "--predictions", s(&pred), "--out-dir", s(&eval)]);
    for f in ["report.json", "clips.csv", "metrics.csv", "sweep.csv", "f1.csv", "scatter.csv", "overlay.csv"] {
        assert!(eval.join(f).is_file(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(eval.join("report.json")).unwrap()).unwrap();
    let oa = report["report"]["oa"]["mean"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&oa));
}

#[test]
fn resume_appends_epochs_to_the_trace() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    let manifest = small_data(root, 3, 0);
    let ck = train(root, &manifest, "M2", 2);
    let trace = root.join("M2_trace.csv");
    let before = trace_rows(&trace);
    let ck2 = root.join("resumed.json");
    ok(&[
        "train",
        "--manifest",
        s(&manifest),
        "--checkpoint",
        s(&ck2),
        "--trace",
        s(&trace),
        "--method",
        "M2",
        "--epochs",
        "3",
        "--resume",
        s(&ck),
        "--set",
        "hidden=[16]",
    ]);
    let after = trace_rows(&trace);
    assert_eq!(after.len(), before.len() + 3);
    assert_eq!(&after[..before.len()], &before[..]);
    assert_eq!(after.iter().map(|r| r.0).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);

    // method must match the checkpoint being resumed
    let (code, _) = hlmelody(&[
        "train",
        "--manifest",
        s(&manifest),
        "--checkpoint",
        s(&root.join("x.json")),
        "--trace",
        s(&root.join("x.csv")),
        "--method",
        "M1",
        "--resume",
        s(&ck),
    ]);
    assert_ne!(code, 0);
}

#[test]
fn prune_is_ignored_for_the_bayesian_model() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    let manifest = small_data(root, 3, 2);
    let ck = train(root, &manifest, "M3", 2);
    let plain = root.join("plain");
    let pruned = root.join("pruned");
    ok(&["predict", "--checkpoint", s(&ck), "--manifest", s(&manifest), "--out-dir", s(&plain)]);
    ok(&["predict", "--checkpoint", s(&ck), "--manifest", s(&manifest), "--out-dir", s(&pruned), "--prune"]);
    assert_eq!(sorted_files(&plain), sorted_files(&pruned));
}

#[test]
fn prune_preserves_frame_timing() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    let manifest = small_data(root, 3, 2);
    let ck = train(root, &manifest, "M1", 2);
    let plain = root.join("plain");
    let pruned = root.join("pruned");
    ok(&["predict", "--checkpoint", s(&ck), "--manifest", s(&manifest), "--out-dir", s(&plain)]);
    ok(&["predict", "--checkpoint", s(&ck), "--manifest", s(&manifest), "--out-dir", s(&pruned), "--prune"]);
    for ((name, a), (_, b)) in sorted_files(&plain).iter().zip(sorted_files(&pruned)) {
        let a = String::from_utf8(a.clone()).unwrap();
        let b = String::from_utf8(b).unwrap();
        let rows = |t: &str| t.lines().filter(|l| !l.starts_with('#')).map(str::to_owned).collect::<Vec<_>>();
        let (ra, rb) = (rows(&a), rows(&b));
        assert_eq!(ra.len(), rb.len(), "{name}");
        // timestamps are untouched
        for (x, y) in ra.iter().zip(&rb) {
            assert_eq!(x.split(',').next(), y.split(',').next());
        }
    }
}

#[test]
fn perfect_predictions_score_one_with_degenerate_intervals() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    let manifest_path = small_data(root, 0, 3);
    let manifest = Manifest::load(&manifest_path).unwrap();
    let pred = root.join("pred");
    fs::create_dir_all(&pred).unwrap();
    let mut voiced_frames = 0;
    for e in manifest.split(Split::Test) {
        let labels = read_labels(&manifest_path.parent().unwrap().join(&e.labels)).unwrap();
        let est: Vec<MelodyEstimate> = labels
            .iter()
            .map(|l| {
                if l.voiced() {
                    voiced_frames += 1;
                    MelodyEstimate {
                        voiced: true,
                        pitch_hz: Some(l.freq_hz),
                        shadow_pitch_hz: l.freq_hz,
                        y_hat: hz_to_log(l.freq_hz).unwrap(),
                        sigma_hat: 0.01,
                    }
                } else {
                    MelodyEstimate { voiced: false, pitch_hz: None, shadow_pitch_hz: 200.0, y_hat: 1.0, sigma_hat: 0.01 }
                }
            })
            .collect();
        fs::write(pred.join(format!("{}.csv", e.id)), format_predictions(Method::M3, "# config: {}\n", &est)).unwrap();
    }
    let eval = root.join("eval");
    ok(&["eval", "--manifest", s(&manifest_path), "--predictions", s(&pred), "--out-dir", s(&eval)]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(eval.join("report.json")).unwrap()).unwrap();
    for metric in ["rpa", "rca", "oa"] {
        let m = &report["report"][metric];
        assert_eq!(m["mean"].as_f64(), Some(1.0), "{metric}");
        assert_eq!(m["ci_lo"].as_f64(), Some(1.0), "{metric}");
        assert_eq!(m["ci_hi"].as_f64(), Some(1.0), "{metric}");
    }
    let scatter = fs::read_to_string(eval.join("scatter.csv")).unwrap();
    assert_eq!(scatter.lines().filter(|l| !l.starts_with('#') && !l.starts_with("clip")).count(), voiced_frames);
}
