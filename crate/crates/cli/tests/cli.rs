use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bilinear_cli::commands::token_weights_to_container;
use bilinear_cli::container::{load_model, save_model, Container};
use bilinear_cli::tree::load_trees;
use bilinear_core::decompose::evaluate_tree;
use bilinear_core::model::{BilinearLayer, BilinearModel, Topology};
use bilinear_core::ngram::TokenWeights;
use bilinear_core::Matrix;
use flate2::write::GzEncoder;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn bilinear(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bilinear"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = bilinear(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SYNTH: [&str; 8] = [
    "--dataset",
    "synthetic",
    "--samples",
    "200",
    "--dim",
    "8",
    "--classes",
    "4",
];

fn train_synthetic(dir: &Path, name: &str, seed: &str) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec!["train"];
    args.extend(SYNTH);
    args.extend([
        "--d-model",
        "6",
        "--epochs",
        "8",
        "--batch",
        "20",
        "--lr",
        "0.01",
        "--seed",
        seed,
        "--out",
        p(&out),
    ]);
    let stdout = ok(&args);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.iter().filter(|l| l.starts_with("epoch=")).count(), 8);
    let fields: Vec<&str> = lines[0]
        .split(' ')
        .map(|f| f.split('=').next().unwrap())
        .collect();
    assert_eq!(fields, ["epoch", "loss", "val_acc", "lr"]);
    out
}

#[test]
fn train_eval_sweep_agree() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_synthetic(dir.path(), "m.blnr", "3");
    let mut args = vec!["eval", "--model", p(&model)];
    args.extend(SYNTH);
    let eval = ok(&args);
    let acc: f64 = eval
        .trim()
        .strip_prefix("val_acc=")
        .unwrap()
        .parse()
        .unwrap();
    assert!(acc > 0.9, "{eval}");

    let csv = dir.path().join("sweep.csv");
    let mut args = vec![
        "truncate-sweep",
        "--model",
        p(&model),
        "--ks",
        "1,2,6",
        "--out",
        p(&csv),
    ];
    args.extend(SYNTH);
    ok(&args);
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "k,accuracy");
    assert_eq!(rows.len(), 4);
    let last: f64 = rows[3].split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(format!("{last:.6}"), format!("{acc:.6}"));
}

#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = train_synthetic(dir.path(), "a.blnr", "9");
    let b = train_synthetic(dir.path(), "b.blnr", "9");
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn decompose_then_render() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_synthetic(dir.path(), "m.blnr", "1");
    let spec = dir.path().join("spec.blnr");
    ok(&[
        "decompose",
        "--model",
        p(&model),
        "--class",
        "2",
        "--out",
        p(&spec),
    ]);
    let img = dir.path().join("f.ppm");
    ok(&[
        "render",
        "--spectrum",
        p(&spec),
        "--rank",
        "0",
        "--sign",
        "pos",
        "--width",
        "4",
        "--height",
        "2",
        "--out",
        p(&img),
    ]);
    let bytes = std::fs::read(&img).unwrap();
    assert!(bytes.starts_with(b"P6\n4 2\n255\n"));
    assert_eq!(bytes.len(), b"P6\n4 2\n255\n".len() + 3 * 8);

    let out = bilinear(&[
        "render",
        "--spectrum",
        p(&spec),
        "--width",
        "3",
        "--height",
        "3",
        "--out",
        p(&img),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let out = bilinear(&[
        "render",
        "--spectrum",
        p(&spec),
        "--rank",
        "99",
        "--out",
        p(&img),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn decompile_tree_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = BilinearModel::init(&Topology::classifier(5, 3, 2, 2), &mut rng).unwrap();
    let path = dir.path().join("m.blnr");
    save_model(&path, &model, None).unwrap();
    let json = dir.path().join("tree.json");
    ok(&[
        "decompile",
        "--model",
        p(&path),
        "--branch",
        "3",
        "--out",
        p(&json),
    ]);
    assert!(dir.path().join("tree.blnr").is_file());
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(doc["branching"], 3);
    assert_eq!(doc["classes"][1]["class"], 1);
    let trees = load_trees(&json).unwrap();
    let x = [0.2, -0.4, 1.0, 0.3, 0.0];
    let logits = model.forward(&x).unwrap();
    for t in &trees {
        let got = evaluate_tree(t, &x);
        assert!((got - logits[t.class]).abs() <= 1e-9 * logits[t.class].abs().max(1.0));
    }
}

#[test]
fn similarity_table_is_ordered() {
    let dir = tempfile::tempdir().unwrap();
    let a = train_synthetic(dir.path(), "a.blnr", "0");
    let b = train_synthetic(dir.path(), "b.blnr", "1");
    let csv = dir.path().join("sim.csv");
    let stdout = ok(&[
        "similarity",
        "--model-a",
        p(&a),
        "--model-b",
        p(&b),
        "--top",
        "2",
        "--out",
        p(&csv),
    ]);
    assert!(stdout.starts_with("mean_similarity="));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("class,rank,similarity,match_index"));
    let keys: Vec<(usize, usize)> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let s: f64 = f[2].parse().unwrap();
            assert!((0.0..=1.0).contains(&s));
            (f[0].parse().unwrap(), f[1].parse().unwrap())
        })
        .collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

#[test]
fn ngram_modes_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let layer = BilinearLayer::new(
        gaussian(4, 3, &mut rng),
        gaussian(4, 3, &mut rng),
        Some(gaussian(3, 4, &mut rng)),
    )
    .unwrap();
    let tw = TokenWeights::new(gaussian(3, 5, &mut rng), gaussian(5, 3, &mut rng), layer).unwrap();
    let weights = dir.path().join("tw.blnr");
    token_weights_to_container(&tw).save(&weights).unwrap();
    let mut ov = Container::new("ov");
    ov.push("ov", gaussian(3, 3, &mut rng));
    let ov_path = dir.path().join("ov.blnr");
    ov.save(&ov_path).unwrap();
    let csv = dir.path().join("t.csv");

    for mode in ["residual", "mlp-diag", "combined"] {
        ok(&[
            "ngram",
            "--weights",
            p(&weights),
            "--mode",
            mode,
            "--top",
            "7",
            "--out",
            p(&csv),
        ]);
        let text = std::fs::read_to_string(&csv).unwrap();
        assert!(text.starts_with("rank,context,output,score\n"));
        assert_eq!(text.lines().count(), 8);
    }
    ok(&[
        "ngram",
        "--weights",
        p(&weights),
        "--mode",
        "combined",
        "--class",
        "1",
        "--top",
        "20",
        "--out",
        p(&csv),
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(text
        .lines()
        .skip(1)
        .all(|l| l.split(',').nth(2) == Some("1")));

    ok(&[
        "ngram",
        "--weights",
        p(&weights),
        "--mode",
        "skip-trigram",
        "--ov",
        p(&ov_path),
        "--class",
        "4",
        "--out",
        p(&csv),
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("rank,virtual,direct,score\n"));
    assert_eq!(text.lines().count(), 21);

    let missing_ov = bilinear(&[
        "ngram",
        "--weights",
        p(&weights),
        "--mode",
        "skip-trigram",
        "--class",
        "1",
        "--out",
        p(&csv),
    ]);
    assert_eq!(missing_ov.status.code(), Some(2));
    assert_eq!(
        String::from_utf8_lossy(&missing_ov.stderr).lines().count(),
        1
    );
    let bad_flag = bilinear(&[
        "ngram",
        "--weights",
        p(&weights),
        "--mode",
        "residual",
        "--bogus",
        "--out",
        p(&csv),
    ]);
    assert_eq!(bad_flag.status.code(), Some(2));
    let bad_mode = bilinear(&[
        "ngram",
        "--weights",
        p(&weights),
        "--mode",
        "quadgram",
        "--out",
        p(&csv),
    ]);
    assert_eq!(bad_mode.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.blnr");
    let out = bilinear(&["eval", "--model", p(&missing), "--dataset", "synthetic"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(stderr.lines().count(), 1);
    assert!(stderr.starts_with("error: "));

    let bad = dir.path().join("bad.blnr");
    std::fs::write(&bad, b"NOPE\x01\x00\x00\x00").unwrap();
    let out = bilinear(&[
        "decompose",
        "--model",
        p(&bad),
        "--class",
        "0",
        "--out",
        p(&dir.path().join("s.blnr")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("BLNR"));
}

fn idx(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
    let mut v = magic.to_be_bytes().to_vec();
    for d in dims {
        v.extend_from_slice(&d.to_be_bytes());
    }
    v.extend_from_slice(payload);
    v
}

fn gz(bytes: &[u8]) -> Vec<u8> {
    let mut e = GzEncoder::new(Vec::new(), flate2::Compression::default());
    e.write_all(bytes).unwrap();
    e.finish().unwrap()
}

#[test]
fn eval_reads_gzipped_idx() {
    let dir = tempfile::tempdir().unwrap();
    let pixels: Vec<u8> = (0..40u32).map(|i| (i * 37 % 256) as u8).collect();
    let labels: Vec<u8> = (0..10).collect();
    for split in ["train", "t10k"] {
        let images = idx(0x803, &[10, 2, 2], &pixels);
        let labels = idx(0x801, &[10], &labels);
        std::fs::write(
            dir.path().join(format!("{split}-images-idx3-ubyte.gz")),
            gz(&images),
        )
        .unwrap();
        std::fs::write(
            dir.path().join(format!("{split}-labels-idx1-ubyte")),
            labels,
        )
        .unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = BilinearModel::init(&Topology::classifier(4, 3, 1, 10), &mut rng).unwrap();
    let path = dir.path().join("m.blnr");
    save_model(&path, &model, None).unwrap();
    assert_eq!(load_model(&path).unwrap(), model);
    let stdout = ok(&["eval", "--model", p(&path), "--data-dir", p(dir.path())]);
    assert!(stdout.starts_with("val_acc="));
}
