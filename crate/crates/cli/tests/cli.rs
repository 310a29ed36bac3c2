use std::path::Path;
use std::process::{Command, Output};

use gridgauss::io::{read_gmap, read_pgm, write_gmap, DType, GridStack};
use gridgauss::GridShape;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridgauss")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).expect("valid JSON")
}

#[test]
fn fit_then_logprob_reproduces_final_nll() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--kind", "ground-truth", "--shape", "5x6", "--count", "48", "--seed", "2", "--out", "s.gmap"]);
    for extra in [&[][..], &["--scaled"][..], &["--diagonal-only", "--radius", "2"][..]] {
        let mut args = vec!["fit", "--samples", "s.gmap", "--out", "m", "--report", "fit.json", "--max-iters", "150"];
        args.extend_from_slice(extra);
        ok(d, &args);
        let report = json(&std::fs::read(d.join("fit.json")).unwrap());
        assert_eq!(report["schema_version"], 1);
        let final_nll = report["final_nll"].as_f64().unwrap();
        let lp = json(&ok(d, &["logprob", "--model", "m", "--samples", "s.gmap"]).stdout);
        let nll = lp["nll"].as_f64().unwrap();
        assert!(((nll - final_nll) / final_nll).abs() < 1e-9, "{extra:?}: {nll} vs {final_nll}");
    }
}

#[test]
fn sampling_is_byte_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--kind", "ground-truth", "--shape", "7x5", "--count", "2", "--out", "s.gmap", "--model-out", "m"]);
    for (out, fmt) in [("a.gmap", "gmap"), ("b.gmap", "gmap"), ("a.csv", "csv"), ("b.csv", "csv")] {
        ok(d, &["sample", "--model", "m", "--count", "4", "--seed", "7", "--jacobi-iters", "40", "--out", out, "--format", fmt]);
    }
    assert_eq!(std::fs::read(d.join("a.gmap")).unwrap(), std::fs::read(d.join("b.gmap")).unwrap());
    assert_eq!(std::fs::read(d.join("a.csv")).unwrap(), std::fs::read(d.join("b.csv")).unwrap());
    ok(d, &["sample", "--model", "m", "--count", "4", "--seed", "8", "--jacobi-iters", "40", "--out", "c.gmap"]);
    assert_ne!(std::fs::read(d.join("a.gmap")).unwrap(), std::fs::read(d.join("c.gmap")).unwrap());

    let (stack, dtype) = read_gmap(std::fs::File::open(d.join("a.gmap")).unwrap()).unwrap();
    assert_eq!((stack.channels, dtype), (4, DType::F64));
    ok(d, &["sample", "--model", "m", "--count", "1", "--out", "f.gmap", "--precision", "f32"]);
    assert_eq!(read_gmap(std::fs::File::open(d.join("f.gmap")).unwrap()).unwrap().1, DType::F32);
}

#[test]
fn introspect_writes_valid_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--kind", "ground-truth", "--shape", "9x11", "--count", "1", "--out", "s.gmap", "--model-out", "m"]);
    ok(d, &["introspect", "--model", "m", "--pixel", "4,5", "--out", "row.pgm"]);
    let bytes = std::fs::read(d.join("row.pgm")).unwrap();
    assert!(bytes.starts_with(b"P5\n11 9\n255\n"));
    let (shape, levels) = read_pgm(bytes.as_slice()).unwrap();
    assert_eq!(shape, GridShape::new(9, 11).unwrap());
    // the pixel's own variance is positive and saturates the clip
    assert_eq!(levels[4 * 11 + 5], 255);

    ok(d, &["introspect", "--model", "m", "--pixel", "4,5", "--out", "row.pgm", "--mode", "split"]);
    for f in ["row.pos.pgm", "row.neg.pgm"] {
        let (shape, _) = read_pgm(std::fs::read(d.join(f)).unwrap().as_slice()).unwrap();
        assert_eq!(shape.len(), 99);
    }
    let out = run(d, &["introspect", "--model", "m", "--pixel", "9,0", "--out", "x.pgm"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out.stderr)["kind"], "invalid_argument");
}

#[test]
fn condition_pins_known_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--kind", "ground-truth", "--shape", "4x4", "--count", "1", "--out", "v.gmap", "--model-out", "m"]);
    let shape = GridShape::new(4, 4).unwrap();
    let mask: Vec<f64> = (0..16).map(|i| f64::from(u8::from(i % 5 == 0))).collect();
    write_gmap(std::fs::File::create(d.join("mask.gmap")).unwrap(), &GridStack::new(shape, 1, mask.clone()).unwrap(), DType::U8)
        .unwrap();
    ok(d, &["condition", "--model", "m", "--mask", "mask.gmap", "--values", "v.gmap", "--count", "3", "--out", "c.gmap"]);
    let (c, _) = read_gmap(std::fs::File::open(d.join("c.gmap")).unwrap()).unwrap();
    let (v, _) = read_gmap(std::fs::File::open(d.join("v.gmap")).unwrap()).unwrap();
    for k in 0..3 {
        for p in (0..16).filter(|&p| mask[p] != 0.0) {
            assert_eq!(c.channel(k)[p], v.values[p]);
        }
    }
}

#[test]
fn eval_reports_rows_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let shape = GridShape::new(3, 3).unwrap();
    let gt: Vec<f64> = (1..=9).map(f64::from).collect();
    let pred: Vec<f64> = gt.iter().map(|g| 1.2 * g).collect();
    for (name, v) in [("gt.gmap", gt.clone()), ("pred.gmap", pred), ("unc.gmap", gt)] {
        write_gmap(std::fs::File::create(d.join(name)).unwrap(), &GridStack::new(shape, 1, v).unwrap(), DType::F64).unwrap();
    }
    let out = ok(d, &["eval", "--pred", "pred.gmap", "--gt", "gt.gmap", "--uncertainty", "unc.gmap", "--summary", "s.csv"]);
    let report = json(&out.stdout);
    assert_eq!(report["schema_version"], 1);
    let row = &report["rows"][0];
    assert!((row["absrel"].as_f64().unwrap() - 0.2).abs() < 1e-12);
    assert_eq!(row["a1"].as_f64().unwrap(), 1.0);
    let csv = std::fs::read_to_string(d.join("s.csv")).unwrap();
    assert!(csv.starts_with("metric,value,ause,aurg\nabsrel,"));
}

#[test]
fn oracle_check_and_bench_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(d, &["oracle-check", "--seeds", "10", "--max-size", "6x6"]);
    let report = json(&out.stdout);
    assert_eq!(report["schema_version"], 1);
    assert!(report["checks"].as_array().unwrap().iter().all(|c| c["passed"] == true));

    ok(d, &["bench", "--sizes", "8x8,16x16", "--repeats", "1", "--jacobi-iters", "5", "--report", "b.json"]);
    let bench = json(&std::fs::read(d.join("b.json")).unwrap());
    assert_eq!(bench["schema_version"], 1);
    assert_eq!(bench["points"].as_array().unwrap().len(), 2);
    assert_eq!(bench["per_doubling_ratios"].as_array().unwrap().len(), 1);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run(d, &["sample", "--unknown-flag"]).status.code(), Some(2));
    assert_eq!(run(d, &["fit", "--samples", "x.gmap", "--radius", "3", "--out", "m"]).status.code(), Some(2));
    assert_eq!(run(d, &["sample", "--model", "m"]).status.code(), Some(2));
    assert_eq!(run(d, &[]).status.code(), Some(2));
}

#[test]
fn threads_variable_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = Command::new(env!("CARGO_BIN_EXE_gridgauss"))
        .current_dir(d)
        .env("GMRF_THREADS", "3")
        .args(["bench", "--sizes", "4x4,8x8", "--repeats", "1", "--jacobi-iters", "2"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let expect = if cfg!(feature = "parallel") { 3 } else { 1 };
    assert_eq!(json(&out.stdout)["threads"], expect);
    let bad = Command::new(env!("CARGO_BIN_EXE_gridgauss"))
        .current_dir(d)
        .env("GMRF_THREADS", "many")
        .args(["oracle-check", "--seeds", "1"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}
