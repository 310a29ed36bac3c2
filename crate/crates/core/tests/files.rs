mod common;

use std::fs::File;

use common::*;
use gridgauss::io::{load_model, read_stack, save_model, write_csv, write_gmap, DType, GridStack, ModelPaths};

#[test]
fn models_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    for (i, scaled) in [false, true].into_iter().enumerate() {
        let g = model(5, 7, 1 + i, scaled, 3);
        let prefix = dir.path().join(format!("m{i}"));
        save_model(&prefix, &g, DType::F64).unwrap();
        assert_eq!(load_model(&prefix).unwrap(), g);

        save_model(&prefix, &g, DType::F32).unwrap();
        let back = load_model(&prefix).unwrap();
        let d = normals(1, 35);
        let (a, b) = (g.log_density(&d).unwrap(), back.log_density(&d).unwrap());
        assert!(((a - b) / a).abs() < 1e-5);
    }
}

#[test]
fn mismatched_model_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("m");
    save_model(&prefix, &model(4, 4, 1, false, 1), DType::F64).unwrap();
    let other = dir.path().join("o");
    save_model(&other, &model(4, 5, 1, false, 1), DType::F64).unwrap();
    let paths = ModelPaths::new(&prefix);
    std::fs::copy(ModelPaths::new(&other).mean, &paths.mean).unwrap();
    assert!(load_model(&prefix).is_err());
    std::fs::remove_file(&paths.sidecar).unwrap();
    assert!(load_model(&prefix).is_err());
}

#[test]
fn stacks_are_read_by_extension() {
    let dir = tempfile::tempdir().unwrap();
    let stack = GridStack::new(shape(3, 4), 2, normals(5, 24)).unwrap();
    let csv = dir.path().join("s.csv");
    let gmap = dir.path().join("s.gmap");
    write_csv(File::create(&csv).unwrap(), &stack).unwrap();
    write_gmap(File::create(&gmap).unwrap(), &stack, DType::F64).unwrap();
    assert_eq!(read_stack(&gmap).unwrap(), stack);
    let from_csv = read_stack(&csv).unwrap();
    assert_eq!((from_csv.shape, from_csv.channels), (stack.shape, 2));
    assert!(rel_err(&from_csv.values, &stack.values) < 1e-15);
}
