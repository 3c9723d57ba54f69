use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use me_rppg::data::read_dataset;
use me_rppg::model::load_checkpoint;

const DESK_CONFIG: &str = "# tiny model for 8x8 frames\ninput_h=8\ninput_w=8\nencoder_channels=8,16,16\nfeature_dim=16\nstate_dim=8\nbatch_size=8\n";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_me-rppg"));
    c.env_remove("ME_RPPG_THREADS");
    c
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().unwrap()
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = run(args, dir);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str], dir: &Path) -> i32 {
    run(args, dir).status.code().unwrap()
}

/// Synthesizes 4 short 8x8 clips and trains a 2-epoch checkpoint in `ck`.
fn trained(dir: &Path) {
    fs::write(dir.join("desk.cfg"), DESK_CONFIG).unwrap();
    ok(&["synth", "--out", "data", "--clips", "4", "--seed", "3", "--resolution", "8x8", "--duration", "6"], dir);
    ok(&["train", "--data", "data", "--config", "desk.cfg", "--epochs", "2", "--chunk-len", "90", "--out", "ck"], dir);
}

#[test]
fn synth_writes_deterministic_files() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for out in ["a", "b"] {
        ok(&["synth", "--out", out, "--clips", "4", "--seed", "7", "--resolution", "8x8", "--duration", "2"], d);
    }
    let mut names: Vec<String> = fs::read_dir(d.join("a")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names.iter().filter(|n| n.ends_with(".metr")).count(), 4);
    assert_eq!(names.iter().filter(|n| n.ends_with(".csv")).count(), 5);
    assert!(names.contains(&"manifest.csv".to_string()));
    for n in &names {
        assert_eq!(fs::read(d.join("a").join(n)).unwrap(), fs::read(d.join("b").join(n)).unwrap(), "{n} differs");
    }
    assert_eq!(read_dataset(&d.join("a")).unwrap().len(), 4);
    assert_eq!(code(&["synth", "--out", "c", "--hr-range", "20,90"], d), 2);
    assert_eq!(code(&["synth", "--out", "c", "--hr-range", "60,200"], d), 2);
}

#[test]
fn train_resume_and_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    trained(d);
    let ck = load_checkpoint(&d.join("ck")).unwrap();
    assert_eq!(ck.params.config.input_h, 8);
    assert_eq!(ck.meta.get::<usize>("epoch").unwrap(), Some(2));

    ok(&["train", "--data", "data", "--config", "desk.cfg", "--epochs", "1", "--chunk-len", "90", "--resume", "ck", "--out", "ck2"], d);
    let log = fs::read_to_string(d.join("ck2/train_log.csv")).unwrap();
    let rows: Vec<Vec<String>> = log.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    let steps: Vec<u64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(steps, (1..=steps.len() as u64).collect::<Vec<_>>());
    assert_eq!(rows.last().unwrap()[0], "2");

    assert_eq!(code(&["train", "--data", "missing", "--out", "x"], d), 2);
    let blow_up = ["train", "--data", "data", "--config", "desk.cfg", "--epochs", "1", "--chunk-len", "90", "--lr", "1e300", "--out", "x"];
    assert_eq!(code(&blow_up, d), 4);
}

#[test]
fn thread_count_does_not_change_training() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    trained(d);
    let out = bin()
        .args(["train", "--data", "data", "--config", "desk.cfg", "--epochs", "2", "--chunk-len", "90", "--out", "ck4"])
        .env("ME_RPPG_THREADS", "4")
        .current_dir(d)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(fs::read(d.join("ck/tensors.bin")).unwrap(), fs::read(d.join("ck4/tensors.bin")).unwrap());
    assert_eq!(code(&["--threads", "0", "synth", "--out", "z"], d), 2);
}

fn hr_of(stdout: &str) -> f64 {
    let field = stdout.split_whitespace().find_map(|w| w.strip_prefix("hr_bpm=")).unwrap();
    field.parse().unwrap()
}

#[test]
fn infer_modes_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    trained(d);
    let chunk = ok(&["infer", "--ckpt", "ck", "--video", "data/clip_0000.metr", "--mode", "chunk", "--out", "c.csv"], d);
    let flow = ok(&["infer", "--ckpt", "ck", "--video", "data/clip_0000.metr", "--mode", "flow", "--out", "f.csv"], d);
    let c = me_rppg::data::read_signal(&d.join("c.csv")).unwrap();
    let f = me_rppg::data::read_signal(&d.join("f.csv")).unwrap();
    assert_eq!(c.len(), 180);
    assert_eq!(c.len(), f.len());
    assert!((hr_of(&chunk) - hr_of(&flow)).abs() <= 2.0, "{chunk} vs {flow}");

    let bytes = fs::read(d.join("data/clip_0000.metr")).unwrap();
    fs::write(d.join("bad.metr"), &bytes[..bytes.len() / 3]).unwrap();
    assert_eq!(code(&["infer", "--ckpt", "ck", "--video", "bad.metr", "--out", "z.csv"], d), 3);
    assert_eq!(code(&["infer", "--ckpt", "ck", "--video", "bad.metr", "--mode", "sideways", "--out", "z.csv"], d), 2);
}

#[test]
fn eval_grid_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    trained(d);
    let args = ["eval", "--ckpt", "ck", "--data", "data", "--test-chunk-lens", "60,90,180,1800", "--mode", "both", "--report", "r1.csv"];
    let table = ok(&args, d);
    assert!(table.contains("MAE") && table.contains("flow/180"));
    let csv = fs::read_to_string(d.join("r1.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "mode,chunk_len,mae,rmse,r,n");
    // 3 usable lengths x 2 modes; 1800 exceeds every clip.
    assert_eq!(lines.len(), 1 + 6);
    assert!(lines.iter().skip(1).all(|l| l.split(',').count() == 6));
    assert!(d.join("r1.txt").exists());

    let mut again = args;
    again[args.len() - 1] = "r2.csv";
    ok(&again, d);
    assert_eq!(fs::read(d.join("r1.csv")).unwrap(), fs::read(d.join("r2.csv")).unwrap());
    assert_eq!(code(&["eval", "--ckpt", "ck", "--data", "data", "--test-chunk-lens", "5000"], d), 2);
}

#[test]
fn bench_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("desk.cfg"), DESK_CONFIG).unwrap();
    let flow = ok(&["bench", "--config", "desk.cfg", "--frames", "200", "--report", "flow.csv"], d);
    assert!(flow.contains("Latency(ms)") && flow.contains("state bytes after warm-up 1280 / at end 1280"));
    let chunk = ok(&["bench", "--config", "desk.cfg", "--mode", "chunk", "--frames", "120"], d);
    assert!(chunk.contains("R2="));
    let csv = fs::read_to_string(d.join("flow.csv")).unwrap();
    assert!(csv.starts_with(me_rppg::bench::EFFICIENCY_CSV_HEADER));
}
