//! End-to-end checks of the `diffsal` binary: argument handling, the
//! synth/train/sample/eval pipeline, and byte-level rerun determinism.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

/// Tiny configuration sized so a full pipeline finishes in well under a second.
const TINY: &str = "\
seed = 7
synth.count = 2
synth.frames = 4
synth.height = 16
synth.width = 24
synth.objects = 2
synth.object_sigma = 1.5
synth.duration_secs = 0.1
synth.tones_hz = 500,2000
model.c_base = 2
model.heads = 2
audio.window = 64
audio.hop_ms = 2.0
audio.n_mels = 8
audio.slice_frames = 8
audio.slice_hop_ms = 16.0
audio.slices = 2
diffusion.t_max = 10
diffusion.steps = 2
train.epochs = 2
train.batch = 2
train.log_every = 1
";

fn diffsal(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diffsal"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("failed to launch diffsal")
}

fn run_ok(cwd: &Path, args: &[&str]) -> String {
    let out = diffsal(cwd, args);
    assert!(
        out.status.success(),
        "diffsal {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Every file under `root`, keyed by relative path.
fn dir_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).expect("read_dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).expect("read file"));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

// --- argument handling ------------------------------------------------------

#[test]
fn invalid_flag_exits_nonzero_and_prints_usage() {
    let tmp = tempfile::tempdir().unwrap();
    let out = diffsal(tmp.path(), &["--definitely-not-a-flag", "synth"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("Usage"), "no usage text in: {stderr}");
}

#[test]
fn missing_subcommand_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(!diffsal(tmp.path(), &[]).status.success());
}

#[test]
fn unknown_config_key_is_rejected_before_any_work() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.cfg"), "synth.cont = 4\n").unwrap();
    let out = diffsal(tmp.path(), &["--config", "bad.cfg", "--out", "run", "synth"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("synth.cont"), "error does not name the key: {stderr}");
    assert!(!tmp.path().join("run").exists(), "output directory was created anyway");
}

#[test]
fn invalid_value_is_rejected_with_nonzero_exit() {
    let tmp = tempfile::tempdir().unwrap();
    let out = diffsal(tmp.path(), &["--out", "run", "train", "--loss", "huber"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("huber"), "error does not name the value: {stderr}");
}

#[test]
fn unknown_preset_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = diffsal(tmp.path(), &["--preset", "galactic", "--out", "run", "synth"]);
    assert!(!out.status.success());
}

// --- pipeline ---------------------------------------------------------------

#[test]
fn pipeline_produces_expected_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("tiny.cfg"), TINY).unwrap();
    let base = ["--config", "tiny.cfg", "--out", "run"];

    run_ok(tmp.path(), &[&base[..], &["synth"]].concat());
    let run = tmp.path().join("run");
    assert!(run.join("dataset/manifest.tsv").is_file());
    assert!(run.join("dataset/sample_000/clip.dstn").is_file());
    assert!(run.join("dataset/sample_001/audio.wav").is_file());

    run_ok(tmp.path(), &[&base[..], &["train"]].concat());
    assert!(run.join("model.ckpt").is_file());
    assert!(run.join("model.cfg").is_file());
    assert!(run.join("checkpoints/epoch_000.ckpt").is_file());
    assert!(run.join("checkpoints/epoch_001.ckpt").is_file());
    let log = std::fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert!(log.starts_with("step,loss,lr,wallclock_ms\n"));
    assert!(log.lines().count() > 1, "train log has no data rows");

    // No --config here: the checkpoint sidecar must supply the run settings.
    run_ok(tmp.path(), &["--out", "run", "sample"]);
    assert!(run.join("predictions/sample_000.pgm").is_file());
    assert!(run.join("predictions/sample_001.pgm").is_file());

    let table = run_ok(tmp.path(), &["--out", "run", "eval"]);
    assert!(table.contains("mean"), "eval table missing mean row: {table}");
    let csv = std::fs::read_to_string(run.join("eval.csv")).unwrap();
    assert!(csv.starts_with("sample,cc,nss,aucj,sim,kl\n"));
    assert_eq!(csv.lines().count(), 4, "expected 2 samples + header + mean");
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("tiny.cfg"), TINY).unwrap();
    for root in ["a", "b"] {
        let base = ["--config", "tiny.cfg", "--out", root];
        run_ok(tmp.path(), &[&base[..], &["synth"]].concat());
        run_ok(tmp.path(), &[&base[..], &["train"]].concat());
        run_ok(tmp.path(), &[&base[..], &["sample"]].concat());
    }
    let a = dir_bytes(&tmp.path().join("a"));
    let b = dir_bytes(&tmp.path().join("b"));
    assert_eq!(
        a.keys().collect::<Vec<_>>(),
        b.keys().collect::<Vec<_>>(),
        "runs produced different file sets"
    );
    for (path, bytes) in &a {
        if path == "train_log.csv" {
            continue; // wallclock column differs between runs
        }
        assert_eq!(bytes, &b[path], "{path} differs between identical runs");
    }
}

#[test]
fn parallel_synth_matches_serial_output() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("tiny.cfg"), TINY).unwrap();
    let mut cfg = TINY.replace("synth.count = 2", "synth.count = 5");
    cfg.push_str("jobs = 3\n");
    std::fs::write(tmp.path().join("par.cfg"), cfg).unwrap();

    run_ok(tmp.path(), &["--config", "tiny.cfg", "--out", "s", "synth", "--count", "5"]);
    run_ok(tmp.path(), &["--config", "par.cfg", "--out", "p", "synth"]);
    assert_eq!(dir_bytes(&tmp.path().join("s")), dir_bytes(&tmp.path().join("p")));
}

#[test]
fn sample_steps_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("tiny.cfg"), TINY).unwrap();
    let base = ["--config", "tiny.cfg", "--out", "run"];
    run_ok(tmp.path(), &[&base[..], &["synth"]].concat());
    run_ok(tmp.path(), &[&base[..], &["train"]].concat());

    run_ok(tmp.path(), &[&base[..], &["sample", "--steps", "1"]].concat());
    let one = std::fs::read(tmp.path().join("run/predictions/sample_000.pgm")).unwrap();
    run_ok(tmp.path(), &[&base[..], &["sample", "--steps", "4"]].concat());
    let four = std::fs::read(tmp.path().join("run/predictions/sample_000.pgm")).unwrap();
    assert_ne!(one, four, "step count had no effect on the sampled map");
}

#[test]
fn ablate_writes_sweep_csv_and_ranking_line() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("tiny.cfg"), TINY).unwrap();
    let base = ["--config", "tiny.cfg", "--out", "run"];
    run_ok(tmp.path(), &[&base[..], &["synth"]].concat());
    let out = run_ok(tmp.path(), &[&base[..], &["ablate", "--epochs", "1"]].concat());
    assert!(out.contains("loss ranking mse >= kl >= ce"), "missing ranking line: {out}");

    let csv = std::fs::read_to_string(tmp.path().join("run/ablation.csv")).unwrap();
    assert!(csv.starts_with("axis,variant,cc,nss,aucj,sim,kl\n"));
    for needle in ["fusion,", "attention,", "loss,", "mode,", "steps,"] {
        assert!(csv.contains(needle), "csv missing {needle} rows:\n{csv}");
    }
}
