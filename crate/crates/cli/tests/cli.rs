//! Black-box tests of the `tdn` binary: flags, exit codes, output
//! contracts, and determinism.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tdn_core::{
    save_checkpoint, write_features, AdamParams, FeatureFile, Matrix, TDNConfig, TDNModel,
};

fn tdn(args: &[&str]) -> Output {
    tdn_env(args, &[])
}

fn tdn_env(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tdn"));
    cmd.args(args).env_remove("TDN_SEED");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("failed to launch tdn")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

/// All files under a directory keyed by relative path.
fn dir_contents(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, map: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, map);
            } else {
                map.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut map = BTreeMap::new();
    walk(dir, dir, &mut map);
    map
}

/// Minimal PGM reader, independent of the writer.
fn parse_pgm(bytes: &[u8]) -> (usize, usize, Vec<u8>) {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).unwrap().to_string());
    }
    pos += 1; // single whitespace after maxval
    assert_eq!(fields[0], "P5", "not a binary PGM");
    let width: usize = fields[1].parse().unwrap();
    let height: usize = fields[2].parse().unwrap();
    assert_eq!(fields[3], "255");
    let pixels = bytes[pos..].to_vec();
    assert_eq!(pixels.len(), width * height, "pixel payload size");
    (width, height, pixels)
}

fn small_config(dim: usize, classes: usize, layers: usize) -> TDNConfig {
    TDNConfig {
        feature_dim: dim,
        num_layers: layers,
        num_classes: classes,
        optimizer: AdamParams::default(),
        seed: 0,
        batch_size: 4,
    }
}

/// Model whose first-layer kernel is the identity map.
fn identity_kernel_checkpoint(dir: &Path, dim: usize, layers: usize) -> PathBuf {
    let mut model = TDNModel::init(&small_config(dim, 2, layers)).unwrap();
    let wf = model.layers[0].kernel.wf;
    let bf = model.layers[0].kernel.bf;
    model.store.set_value(wf, Matrix::identity(dim)).unwrap();
    model.store.set_value(bf, Matrix::zeros(1, dim)).unwrap();
    let path = dir.join("identity.tdnc");
    save_checkpoint(&model, &path).unwrap();
    path
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let flags = ["--videos", "6", "--frames", "16", "--dim", "4", "--classes", "4",
                 "--segments", "2", "--noise", "0.05", "--seed", "7"];
    for out in [&a, &b] {
        let run = tdn(&[&["synth", "--out", out.to_str().unwrap()], &flags[..]].concat());
        assert!(run.status.success(), "{}", stderr(&run));
    }
    assert_eq!(dir_contents(&a), dir_contents(&b));
}

#[test]
fn synth_rejects_infeasible_spec() {
    let dir = tempfile::tempdir().unwrap();
    let run = tdn(&["synth", "--out", dir.path().join("x").to_str().unwrap(),
                    "--segments", "9", "--classes", "8"]);
    assert_eq!(run.status.code(), Some(1));
    assert!(stderr(&run).contains("segments"), "{}", stderr(&run));
    assert!(stdout(&run).is_empty());
}

#[test]
fn tdn_seed_env_applies_only_without_flag() {
    let dir = tempfile::tempdir().unwrap();
    let by_env = dir.path().join("env");
    let by_flag = dir.path().join("flag");
    let by_both = dir.path().join("both");
    let base = ["--videos", "4", "--frames", "16", "--dim", "4", "--classes", "4", "--segments", "2"];

    let run = tdn_env(&[&["synth", "--out", by_env.to_str().unwrap()], &base[..]].concat(),
                      &[("TDN_SEED", "7")]);
    assert!(run.status.success(), "{}", stderr(&run));
    let run = tdn(&[&["synth", "--out", by_flag.to_str().unwrap()], &base[..], &["--seed", "7"]].concat());
    assert!(run.status.success(), "{}", stderr(&run));
    // An explicit flag wins over the environment.
    let run = tdn_env(&[&["synth", "--out", by_both.to_str().unwrap()], &base[..], &["--seed", "7"]].concat(),
                      &[("TDN_SEED", "99")]);
    assert!(run.status.success(), "{}", stderr(&run));

    assert_eq!(dir_contents(&by_env), dir_contents(&by_flag));
    assert_eq!(dir_contents(&by_flag), dir_contents(&by_both));

    let run = tdn_env(&["synth", "--out", dir.path().join("bad").to_str().unwrap()],
                      &[("TDN_SEED", "not-a-number")]);
    assert_eq!(run.status.code(), Some(1));
}

#[test]
fn train_zero_epochs_writes_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let ckpt = dir.path().join("model.tdnc");
    let run = tdn(&["synth", "--out", data.to_str().unwrap(), "--videos", "5",
                    "--frames", "16", "--dim", "4", "--classes", "4", "--segments", "2"]);
    assert!(run.status.success());
    let run = tdn(&["train", "--data", data.to_str().unwrap(), "--ckpt", ckpt.to_str().unwrap(),
                    "--epochs", "0"]);
    assert!(run.status.success(), "{}", stderr(&run));
    assert!(!stdout(&run).contains("epoch="), "no training lines expected");
    tdn_core::load_checkpoint(&ckpt).unwrap();
}

#[test]
fn train_zero_learning_rate_has_constant_loss() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let ckpt = dir.path().join("model.tdnc");
    tdn(&["synth", "--out", data.to_str().unwrap(), "--videos", "6", "--frames", "16",
          "--dim", "4", "--classes", "4", "--segments", "2"]);
    let run = tdn(&["train", "--data", data.to_str().unwrap(), "--ckpt", ckpt.to_str().unwrap(),
                    "--epochs", "4", "--lr", "0"]);
    assert!(run.status.success(), "{}", stderr(&run));
    let losses: Vec<f64> = stdout(&run)
        .lines()
        .filter(|l| l.starts_with("epoch="))
        .map(|l| {
            let field = l.split_whitespace().find(|f| f.starts_with("train_loss=")).unwrap();
            field["train_loss=".len()..].parse().unwrap()
        })
        .collect();
    assert_eq!(losses.len(), 4);
    for loss in &losses[1..] {
        assert!((loss - losses[0]).abs() < 1e-12);
    }
}

#[test]
fn train_rejects_missing_data() {
    let dir = tempfile::tempdir().unwrap();
    let run = tdn(&["train", "--data", dir.path().join("nope").to_str().unwrap(),
                    "--ckpt", dir.path().join("m.tdnc").to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(1));
    assert!(!stderr(&run).is_empty());
}

#[test]
fn eval_is_perfect_on_single_class_data_and_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let ckpt = dir.path().join("model.tdnc");
    // With one class, every label set is {0} and any ranking is perfect.
    tdn(&["synth", "--out", data.to_str().unwrap(), "--videos", "4", "--frames", "16",
          "--dim", "4", "--classes", "1", "--segments", "1"]);
    tdn(&["train", "--data", data.to_str().unwrap(), "--ckpt", ckpt.to_str().unwrap(),
          "--epochs", "0"]);
    let run = tdn(&["eval", "--data", data.to_str().unwrap(), "--ckpt", ckpt.to_str().unwrap()]);
    assert!(run.status.success(), "{}", stderr(&run));
    assert_eq!(stdout(&run), "GAP: 1.000000\n");
    let again = tdn(&["eval", "--data", data.to_str().unwrap(), "--ckpt", ckpt.to_str().unwrap()]);
    assert_eq!(stdout(&run), stdout(&again));
}

#[test]
fn eval_rejects_mismatched_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    tdn(&["synth", "--out", data.to_str().unwrap(), "--videos", "3", "--frames", "16",
          "--dim", "8", "--classes", "4", "--segments", "2"]);
    let model = TDNModel::init(&small_config(6, 4, 2)).unwrap();
    let ckpt = dir.path().join("model.tdnc");
    save_checkpoint(&model, &ckpt).unwrap();
    let run = tdn(&["eval", "--data", data.to_str().unwrap(), "--ckpt", ckpt.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(1));
    assert!(stderr(&run).contains("feature_dim"), "{}", stderr(&run));
}

#[test]
fn segment_prints_empty_cut_list_for_single_frame() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = identity_kernel_checkpoint(dir.path(), 4, 2);
    let features = dir.path().join("one.tdnf");
    write_features(&FeatureFile::new("one", 1, 4, vec![1.0, 0.0, 0.0, 0.0]).unwrap(), &features)
        .unwrap();
    let run = tdn(&["segment", "--features", features.to_str().unwrap(),
                    "--ckpt", ckpt.to_str().unwrap()]);
    assert!(run.status.success(), "{}", stderr(&run));
    assert_eq!(stdout(&run), "\n");
}

#[test]
fn segment_recovers_two_block_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = identity_kernel_checkpoint(dir.path(), 4, 2);
    // 20 frames: 10 of e0, then 10 of e1. Orthogonal blocks, one planted cut.
    let mut values = Vec::new();
    for frame in 0..20 {
        let basis = if frame < 10 { 0 } else { 1 };
        for d in 0..4 {
            values.push(if d == basis { 1.0f32 } else { 0.0 });
        }
    }
    let features = dir.path().join("two.tdnf");
    write_features(&FeatureFile::new("two", 20, 4, values).unwrap(), &features).unwrap();
    let run = tdn(&["segment", "--features", features.to_str().unwrap(),
                    "--ckpt", ckpt.to_str().unwrap()]);
    assert!(run.status.success(), "{}", stderr(&run));
    assert_eq!(stdout(&run), "10\n");
}

#[test]
fn segment_rejects_out_of_range_layer() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = identity_kernel_checkpoint(dir.path(), 4, 2);
    let features = dir.path().join("one.tdnf");
    write_features(&FeatureFile::new("one", 1, 4, vec![1.0, 0.0, 0.0, 0.0]).unwrap(), &features)
        .unwrap();
    let run = tdn(&["segment", "--features", features.to_str().unwrap(),
                    "--ckpt", ckpt.to_str().unwrap(), "--layer", "99"]);
    assert_eq!(run.status.code(), Some(1));
    assert!(stderr(&run).contains("layer"), "{}", stderr(&run));
}

#[test]
fn viz_identity_adjacency_is_white_diagonal() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = identity_kernel_checkpoint(dir.path(), 4, 1);
    let mut values = Vec::new();
    for frame in 0..4 {
        for d in 0..4 {
            values.push(if d == frame { 1.0f32 } else { 0.0 });
        }
    }
    let features = dir.path().join("basis.tdnf");
    write_features(&FeatureFile::new("basis", 4, 4, values).unwrap(), &features).unwrap();
    let out = dir.path().join("a.pgm");
    let run = tdn(&["viz", "--features", features.to_str().unwrap(),
                    "--ckpt", ckpt.to_str().unwrap(), "--stage", "raw",
                    "--out", out.to_str().unwrap()]);
    assert!(run.status.success(), "{}", stderr(&run));
    let (w, h, pixels) = parse_pgm(&fs::read(&out).unwrap());
    assert_eq!((w, h), (4, 4));
    for r in 0..4 {
        for c in 0..4 {
            assert_eq!(pixels[r * 4 + c], if r == c { 255 } else { 0 });
        }
    }
}

#[test]
fn viz_refined_stage_blacks_out_cross_segment_blocks() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = identity_kernel_checkpoint(dir.path(), 4, 1);
    // Two blocks whose centers overlap (dot 0.6): the raw image has gray
    // cross blocks, the refined one must be exactly black there.
    let c1 = [1.0f32, 0.0, 0.0, 0.0];
    let c2 = [0.6f32, 0.8, 0.0, 0.0];
    let mut values = Vec::new();
    for frame in 0..16 {
        let center = if frame < 8 { &c1 } else { &c2 };
        values.extend_from_slice(center);
    }
    let features = dir.path().join("overlap.tdnf");
    write_features(&FeatureFile::new("overlap", 16, 4, values).unwrap(), &features).unwrap();

    let seg = tdn(&["segment", "--features", features.to_str().unwrap(),
                    "--ckpt", ckpt.to_str().unwrap()]);
    assert_eq!(stdout(&seg), "8\n", "cut must fall on the block boundary");

    let raw_path = dir.path().join("raw.pgm");
    let refined_path = dir.path().join("refined.pgm");
    for (stage, path) in [("raw", &raw_path), ("refined", &refined_path)] {
        let run = tdn(&["viz", "--features", features.to_str().unwrap(),
                        "--ckpt", ckpt.to_str().unwrap(), "--stage", stage,
                        "--out", path.to_str().unwrap()]);
        assert!(run.status.success(), "{}", stderr(&run));
    }
    let (_, _, raw) = parse_pgm(&fs::read(&raw_path).unwrap());
    let (w, h, refined) = parse_pgm(&fs::read(&refined_path).unwrap());
    assert_eq!((w, h), (16, 16));
    let mut raw_cross_gray = false;
    for r in 0..16 {
        for c in 0..16 {
            let cross = (r < 8) != (c < 8);
            if cross {
                raw_cross_gray |= raw[r * 16 + c] > 0;
                assert_eq!(refined[r * 16 + c], 0, "cross pixel ({r},{c}) not black");
            } else {
                assert_eq!(refined[r * 16 + c], raw[r * 16 + c]);
            }
        }
    }
    assert!(raw_cross_gray, "raw image should show the overlap");
}

#[test]
fn viz_shape_matches_node_count() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = identity_kernel_checkpoint(dir.path(), 4, 2);
    let mut values = vec![0.0f32; 300 * 4];
    for (i, v) in values.iter_mut().enumerate() {
        *v = ((i * 2654435761) % 97) as f32 / 97.0;
    }
    let features = dir.path().join("long.tdnf");
    write_features(&FeatureFile::new("long", 300, 4, values).unwrap(), &features).unwrap();
    let out = dir.path().join("long.pgm");
    let run = tdn(&["viz", "--features", features.to_str().unwrap(),
                    "--ckpt", ckpt.to_str().unwrap(), "--layer", "1", "--stage", "raw",
                    "--out", out.to_str().unwrap()]);
    assert!(run.status.success(), "{}", stderr(&run));
    let (w, h, _) = parse_pgm(&fs::read(&out).unwrap());
    assert_eq!((w, h), (300, 300));

    // Layer 2 operates on the pooled nodes.
    let out2 = dir.path().join("long2.pgm");
    let run = tdn(&["viz", "--features", features.to_str().unwrap(),
                    "--ckpt", ckpt.to_str().unwrap(), "--layer", "2", "--stage", "refined",
                    "--out", out2.to_str().unwrap()]);
    assert!(run.status.success(), "{}", stderr(&run));
    let (w2, h2, _) = parse_pgm(&fs::read(&out2).unwrap());
    assert_eq!((w2, h2), (8, 8));
}

#[test]
fn viz_rejects_unwritable_output() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = identity_kernel_checkpoint(dir.path(), 4, 1);
    let features = dir.path().join("one.tdnf");
    write_features(&FeatureFile::new("one", 1, 4, vec![1.0, 0.0, 0.0, 0.0]).unwrap(), &features)
        .unwrap();
    let run = tdn(&["viz", "--features", features.to_str().unwrap(),
                    "--ckpt", ckpt.to_str().unwrap(), "--stage", "raw",
                    "--out", dir.path().join("missing/dir/a.pgm").to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(1));
}

#[test]
fn unknown_flags_exit_with_input_error() {
    let run = tdn(&["synth", "--bogus"]);
    assert_eq!(run.status.code(), Some(1));
}
