mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::low_rank_tensor;
use tucker_stream::datagen::{sine_tensor, SineSpec};
use tucker_stream::io::{list_slices, read_model, read_tensor, write_tensor};

fn tucker(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tucker")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = tucker(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(str::to_owned).collect()).collect()
}

#[test]
fn synth_writes_slices_and_whole_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let slices = dir.path().join("s");
    let whole = dir.path().join("x.bin");
    ok(&[
        "synth",
        "--dims",
        "12,10,30",
        "--bandwidths",
        "2,2,2",
        "--eta",
        "5e-4",
        "--seed",
        "1",
        "--out",
        p(&whole),
        "--slices-dir",
        p(&slices),
    ]);
    let files = list_slices(&slices).unwrap();
    assert_eq!(files.len(), 30);
    assert!(files[0].ends_with("slice_000000"));
    let x = read_tensor(&whole).unwrap();
    assert_eq!(x.dims(), &[12, 10, 30]);
    for (i, f) in files.iter().enumerate() {
        let s = read_tensor(f).unwrap();
        assert_eq!(s.dims(), &[12, 10]);
        assert_eq!(s, x.last_mode_slice(i).unwrap());
    }
}

#[test]
fn synth_without_noise_is_the_clean_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let whole = dir.path().join("x.bin");
    ok(&["synth", "--dims", "6,7,8", "--bandwidths", "1,2,1", "--eta", "0", "--seed", "9", "--out", p(&whole)]);
    let clean = sine_tensor(&SineSpec::new(&[6, 7, 8], &[1, 2, 1], 9).unwrap());
    assert_eq!(read_tensor(&whole).unwrap(), clean);
}

#[test]
fn usage_errors_exit_nonzero() {
    let out = tucker(&["synth", "--bandwidths", "1,1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = tucker(&["synth", "--dims", "4,4", "--bandwidths", "1,1"]);
    assert_eq!(out.status.code(), Some(7));
    let out = tucker(&["synth", "--dims", "4,4", "--bandwidths", "1", "--out", "/dev/null"]);
    assert_eq!(out.status.code(), Some(7));
}

#[test]
fn compress_exact_input_and_report_csv() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.bin");
    let model = dir.path().join("m.tkr");
    let metrics = dir.path().join("m.csv");
    write_tensor(&input, &low_rank_tensor(&[9, 8, 7], &[2, 3, 2], 0.0, 5)).unwrap();
    ok(&["compress", "--in", p(&input), "--tau", "1e-6", "--out-model", p(&model), "--metrics-csv", p(&metrics)]);
    let text = fs::read_to_string(&metrics).unwrap();
    assert!(text.starts_with("algorithm,tau,ranks,peak_bytes,wall_ms,rel_error\n"));
    let rows = csv_rows(&metrics);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "batch");
    assert_eq!(rows[0][2], "2x3x2");
    assert!(rows[0][3].parse::<usize>().unwrap() > 0);
    assert!(rows[0][5].parse::<f64>().unwrap() <= 1e-6);
    assert_eq!(read_model(&model).unwrap().ranks(), vec![2, 3, 2]);
}

#[test]
fn failed_compress_leaves_no_model() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.tkr");
    let out = tucker(&["compress", "--in", p(&dir.path().join("missing")), "--tau", "0.1", "--out-model", p(&model)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!model.exists());

    let bad = dir.path().join("bad.bin");
    fs::write(&bad, b"NOTATENSOR______").unwrap();
    let out = tucker(&["compress", "--in", p(&bad), "--tau", "0.1", "--out-model", p(&model)]);
    assert_eq!(out.status.code(), Some(4));

    let input = dir.path().join("x.bin");
    write_tensor(&input, &low_rank_tensor(&[4, 4, 4], &[1, 1, 1], 0.0, 1)).unwrap();
    let bytes = fs::read(&input).unwrap();
    fs::write(&input, &bytes[..bytes.len() - 8]).unwrap();
    let out = tucker(&["compress", "--in", p(&input), "--tau", "0.1", "--out-model", p(&model)]);
    assert_eq!(out.status.code(), Some(5));

    write_tensor(&input, &low_rank_tensor(&[4, 4, 4], &[1, 1, 1], 0.0, 1)).unwrap();
    let out = tucker(&["compress", "--in", p(&input), "--tau", "1.5", "--out-model", p(&model)]);
    assert_eq!(out.status.code(), Some(7));
    assert!(!model.exists());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 2);
}

#[test]
fn stream_reconstruct_and_diff() {
    let dir = tempfile::tempdir().unwrap();
    let slices = dir.path().join("s");
    let whole = dir.path().join("x.bin");
    let model = dir.path().join("m.tkr");
    let metrics = dir.path().join("s.csv");
    let recon = dir.path().join("r.bin");
    ok(&[
        "synth",
        "--dims",
        "16,14,60",
        "--bandwidths",
        "2,2,2",
        "--eta",
        "1e-4",
        "--seed",
        "3",
        "--out",
        p(&whole),
        "--slices-dir",
        p(&slices),
    ]);
    ok(&[
        "stream",
        "--init-slices",
        "10",
        "--slices-dir",
        p(&slices),
        "--tau",
        "2e-3",
        "--out-model",
        p(&model),
        "--metrics-csv",
        p(&metrics),
    ]);
    let rows = csv_rows(&metrics);
    assert_eq!(rows.len(), 50);
    assert_eq!(rows[49][1], "50");
    assert_eq!(rows[49][2], "60");
    assert_eq!(rows[49][4], "5x5x5");
    ok(&["reconstruct", "--model", p(&model), "--out", p(&recon)]);
    let out = ok(&["diff", "--a", p(&whole), "--b", p(&recon)]);
    let err: f64 = String::from_utf8(out.stdout).unwrap().trim().parse().unwrap();
    assert!(err <= 2e-3, "{err}");
    let out = ok(&["diff", "--a", p(&whole), "--b", p(&whole)]);
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim().parse::<f64>().unwrap(), 0.0);
}

#[test]
fn stream_needs_enough_initial_slices() {
    let dir = tempfile::tempdir().unwrap();
    let slices = dir.path().join("s");
    ok(&["synth", "--dims", "5,5,4", "--bandwidths", "1,1,1", "--seed", "1", "--slices-dir", p(&slices)]);
    let out = tucker(&[
        "stream",
        "--init-slices",
        "5",
        "--slices-dir",
        p(&slices),
        "--tau",
        "0.01",
        "--out-model",
        p(&dir.path().join("m")),
    ]);
    assert_eq!(out.status.code(), Some(7));
}

#[test]
fn resumed_stream_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let slices = dir.path().join("s");
    ok(&[
        "synth",
        "--dims",
        "14,12,50",
        "--bandwidths",
        "2,1,2",
        "--eta",
        "1e-3",
        "--seed",
        "4",
        "--slices-dir",
        p(&slices),
    ]);
    let full = dir.path().join("full.tkr");
    ok(&["stream", "--init-slices", "8", "--slices-dir", p(&slices), "--tau", "1e-2", "--out-model", p(&full)]);

    let part = dir.path().join("part.tkr");
    let ckpt = dir.path().join("part.tkr.ckpt");
    let csv = dir.path().join("part.csv");
    ok(&[
        "stream",
        "--init-slices",
        "8",
        "--slices-dir",
        p(&slices),
        "--tau",
        "1e-2",
        "--out-model",
        p(&part),
        "--checkpoint-every",
        "5",
        "--stop-after",
        "17",
        "--metrics-csv",
        p(&csv),
    ]);
    assert!(ckpt.exists());
    assert!(!part.exists());
    ok(&[
        "stream",
        "--init-slices",
        "8",
        "--slices-dir",
        p(&slices),
        "--tau",
        "1e-2",
        "--out-model",
        p(&part),
        "--resume",
        p(&ckpt),
        "--metrics-csv",
        p(&csv),
    ]);

    let a = read_model(&full).unwrap();
    let b = read_model(&part).unwrap();
    assert_eq!(a.ranks(), b.ranks());
    let gap = a.core.sub(&b.core).unwrap().frobenius_norm() / a.core.frobenius_norm();
    assert!(gap <= 1e-12, "{gap}");
    let rows = csv_rows(&csv);
    assert_eq!(rows.len(), 42);
    let steps: Vec<u64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(steps, (1..=42).collect::<Vec<_>>());

    let out = tucker(&[
        "stream",
        "--init-slices",
        "8",
        "--slices-dir",
        p(&slices),
        "--tau",
        "5e-2",
        "--out-model",
        p(&part),
        "--resume",
        p(&ckpt),
    ]);
    assert_eq!(out.status.code(), Some(7));
}
