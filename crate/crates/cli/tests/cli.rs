use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"{
  "profile": "desk",
  "data_dir": "data",
  "output_dir": "out",
  "checkpoint_dir": "ckpt",
  "simulation": {"total_frames": 6, "start_count": 60, "end_count": 100},
  "decoder": {"template_size": 64},
  "autoencoder": {"epochs": 2, "input_points": 64},
  "regressor": {"epochs": 3},
  "encode_points": 64,
  "tsne": {"perplexity": 2.0, "iterations": 300}
}"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_embryo-align"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn tiny_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.json"), TINY).unwrap();
    dir
}

fn with<'a>(common: &[&'a str], extra: &[&'a str]) -> Vec<&'a str> {
    [common, extra].concat()
}

/// Runs every command once and returns the contents of all produced files.
fn full_pipeline(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let c = ["--config", "tiny.json", "--seed", "11"];
    ok(dir, &with(&c, &["simulate"]));
    ok(dir, &with(&c, &["warp"]));
    ok(dir, &with(&c, &["train-ae"]));
    ok(dir, &with(&c, &["encode"]));
    ok(dir, &with(&c, &["reconstruct"]));
    ok(dir, &with(&c, &["train-reg"]));
    ok(
        dir,
        &with(&c, &["encode", "--in", "data/warped/sin", "--out", "out/sin/codewords.csv"]),
    );
    ok(
        dir,
        &with(&c, &[
            "align",
            "--in",
            "out/sin/codewords.csv",
            "--ground-truth",
            "data/warped/sin/ground_truth.csv",
            "--out",
            "out/sin/alignment.csv",
        ]),
    );
    ok(dir, &with(&c, &["evaluate", "--in", "out/sin/alignment.csv", "--out", "out/table.csv"]));
    ok(dir, &with(&c, &["embed", "--method", "pca"]));
    ok(dir, &with(&c, &["embed", "--method", "tsne"]));
    ok(dir, &with(&c, &["centroid-diag", "--recon", "mcd=out/reconstruction"]));

    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_path_buf();
                files.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    files
}

#[test]
fn pipeline_reruns_are_bit_identical() {
    let a = tiny_dir();
    let b = tiny_dir();
    let fa = full_pipeline(a.path());
    let fb = full_pipeline(b.path());
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (path, bytes) in &fa {
        assert!(bytes == &fb[path], "{} differs between runs", path.display());
    }
    for expected in [
        "data/reference/frame_0006.csv",
        "data/warped/faster/ground_truth.csv",
        "ckpt/autoencoder.json",
        "ckpt/autoencoder.bin",
        "ckpt/autoencoder_loss.svg",
        "ckpt/regressor.json",
        "out/codewords.csv",
        "out/reconstruction/frame_0001.csv",
        "out/sin/alignment.svg",
        "out/embedding_tsne.svg",
        "out/centroids_x.svg",
    ] {
        assert!(fa.contains_key(Path::new(expected)), "missing {expected}");
    }
}

#[test]
fn simulate_writes_one_file_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["simulate", "--out", "ref"]);
    assert!(stdout.contains("120 frames"));
    let count = fs::read_dir(dir.path().join("ref")).unwrap().count();
    assert_eq!(count, 120);
}

#[test]
fn perfect_alignment_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let csv = "query_frame,raw_index,monotone_index,ground_truth_index\n1,1,1,1\n2,2.5,2.5,2.5\n3,4,4,4\n";
    fs::write(dir.path().join("perfect.csv"), csv).unwrap();
    let table = ok(dir.path(), &["evaluate", "--in", "perfect.csv"]);
    let row = table.lines().find(|l| l.starts_with("perfect")).unwrap();
    assert_eq!(row.split_whitespace().collect::<Vec<_>>(), ["perfect", "0.00", "0.00"]);
}

#[test]
fn centroid_curves_match_recomputed_means() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::create_dir_all(d.join("a")).unwrap();
    fs::create_dir_all(d.join("b")).unwrap();
    fs::write(d.join("a/frame_0001.csv"), "0,0,0\n2,4,1\n").unwrap();
    fs::write(d.join("a/frame_0002.csv"), "1,1,1\n3,3,3\n5,-1,0\n").unwrap();
    fs::write(d.join("b/frame_0001.csv"), "1,1,1\n").unwrap();
    fs::write(d.join("b/frame_0002.csv"), "3,0,0\n3,2,0\n").unwrap();
    let stdout = ok(d, &["centroid-diag", "--in", "a", "--recon", "rec=b", "--out", "c.csv"]);
    let text = fs::read_to_string(d.join("c.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "frame,input_x,input_y,rec_x,rec_y");
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows[0], [1.0, 1.0, 2.0, 1.0, 1.0]);
    assert_eq!(rows[1], [2.0, 3.0, 1.0, 3.0, 1.0]);
    // |dx| = (0 + 0) / 2, |dy| = (1 + 0) / 2
    assert!(stdout.contains("mean |dx| 0.0000, mean |dy| 0.5000"), "{stdout}");
    assert!(d.join("c_y.svg").exists());
}

#[test]
fn missing_input_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["encode", "--in", "nowhere", "--checkpoint", "none.json"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error:"), "{err}");
    assert!(err.contains("nowhere"), "{err}");
}

#[test]
fn malformed_csv_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let csv = "query_frame,raw_index,monotone_index,ground_truth_index\n1,1,1,1\n2,oops,2,2\n";
    fs::write(dir.path().join("bad.csv"), csv).unwrap();
    let out = run(dir.path(), &["evaluate", "--in", "bad.csv"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.csv:3"), "{err}");
}

#[test]
fn invalid_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.json"), r#"{"autoencoder": {"epochs": 0}}"#).unwrap();
    let out = run(dir.path(), &["--config", "c.json", "simulate"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochs"));

    fs::write(dir.path().join("d.json"), r#"{"typo_field": 1}"#).unwrap();
    let out = run(dir.path(), &["--config", "d.json", "simulate"]);
    assert!(!out.status.success());
}
