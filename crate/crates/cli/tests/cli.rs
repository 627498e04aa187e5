use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ecochash::data::{write_features, FeatureEncoding};
use ecochash::eval::GaussianClusters;
use ecochash::{FeatureSet, ModelFile, Sample};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ecochash"));
    c.env_remove("ECOCHASH_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
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

fn clusters(classes: usize, per_class: usize, seed: u64) -> FeatureSet {
    GaussianClusters {
        classes,
        dim: 8,
        per_class,
        separation: 4.0,
        spread: 0.3,
        seed,
    }
    .generate()
}

/// Rows `range` of `set`, with labels dropped on odd rows when `drop_odd`.
fn slice(set: &FeatureSet, range: std::ops::Range<usize>, drop_odd: bool) -> FeatureSet {
    let rows = set.samples()[range]
        .iter()
        .enumerate()
        .map(|(i, s)| Sample {
            label: if drop_odd && i % 2 == 1 {
                None
            } else {
                s.label.clone()
            },
            ..s.clone()
        });
    FeatureSet::from_samples(set.dim(), rows).unwrap()
}

struct Files {
    _dir: TempDir,
    root: PathBuf,
}

impl Files {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let root = dir.path().to_path_buf();
        // interleaved by class, so every contiguous slice is balanced
        let all = clusters(4, 150, 1);
        let train = slice(&all, 0..240, false);
        write_features(root.join("train.csv"), &train, FeatureEncoding::Csv).unwrap();
        write_features(root.join("train.bin"), &train, FeatureEncoding::Binary).unwrap();
        let db = slice(&all, 240..400, true);
        write_features(root.join("db.csv"), &db, FeatureEncoding::Csv).unwrap();
        let db_labeled = slice(&all, 400..560, false);
        write_features(
            root.join("db_labeled.csv"),
            &db_labeled,
            FeatureEncoding::Csv,
        )
        .unwrap();
        let test = slice(&all, 560..600, false);
        write_features(root.join("test.csv"), &test, FeatureEncoding::Csv).unwrap();
        Files { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn s(&self, name: &str) -> String {
        p(&self.path(name)).to_string()
    }
}

#[test]
fn training_twice_gives_identical_model_files() {
    let f = Files::new();
    for out in ["a.bin", "b.bin"] {
        ok(&[
            "--seed",
            "9",
            "train",
            "-i",
            &f.s("train.csv"),
            "-k",
            "16",
            "-o",
            &f.s(out),
        ]);
    }
    assert_eq!(
        fs::read(f.path("a.bin")).unwrap(),
        fs::read(f.path("b.bin")).unwrap()
    );
    ok(&[
        "--seed",
        "10",
        "train",
        "-i",
        &f.s("train.csv"),
        "-k",
        "16",
        "-o",
        &f.s("c.bin"),
    ]);
    assert_ne!(
        fs::read(f.path("a.bin")).unwrap(),
        fs::read(f.path("c.bin")).unwrap()
    );
}

#[test]
fn seed_falls_back_to_environment() {
    let f = Files::new();
    ok(&[
        "--seed",
        "4",
        "train",
        "-i",
        &f.s("train.csv"),
        "-k",
        "8",
        "-o",
        &f.s("flag.bin"),
    ]);
    let out = bin()
        .env("ECOCHASH_SEED", "4")
        .args([
            "train",
            "-i",
            &f.s("train.csv"),
            "-k",
            "8",
            "-o",
            &f.s("env.bin"),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(
        fs::read(f.path("flag.bin")).unwrap(),
        fs::read(f.path("env.bin")).unwrap()
    );
}

#[test]
fn csv_and_binary_inputs_train_identically() {
    let f = Files::new();
    ok(&[
        "train",
        "-i",
        &f.s("train.csv"),
        "-k",
        "16",
        "--rho",
        "3",
        "-o",
        &f.s("csv.model"),
    ]);
    ok(&[
        "train",
        "-i",
        &f.s("train.bin"),
        "-k",
        "16",
        "--rho",
        "3",
        "-o",
        &f.s("bin.model"),
    ]);
    assert_eq!(
        fs::read(f.path("csv.model")).unwrap(),
        fs::read(f.path("bin.model")).unwrap()
    );
}

#[test]
fn default_rho_and_summary() {
    let f = Files::new();
    let out = ok(&[
        "train",
        "-i",
        &f.s("train.csv"),
        "-k",
        "32",
        "-o",
        &f.s("m.bin"),
    ]);
    let model = ModelFile::load(f.path("m.bin")).unwrap();
    assert_eq!(model.trainer.config().rho, 20);
    let mut lines = out.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("labels_seen,cycles,width,"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..5], &["4", "1", "32", "240", "0"]);
}

#[test]
fn separable_stream_loss_falls() {
    let dir = TempDir::new().unwrap();
    let set = GaussianClusters {
        classes: 2,
        dim: 6,
        per_class: 250,
        separation: 5.0,
        spread: 0.3,
        seed: 12,
    }
    .generate();
    let input = dir.path().join("two.csv");
    write_features(&input, &set, FeatureEncoding::Csv).unwrap();
    let out = ok(&[
        "train",
        "-i",
        p(&input),
        "-k",
        "8",
        "-o",
        p(&dir.path().join("m")),
    ]);
    let row: Vec<f64> = out
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    let (first, last) = (row[6], row[7]);
    assert!(
        last < first,
        "last decile {last} not below first decile {first}"
    );
}

#[test]
fn codeword_index_requires_labels_unless_skipped() {
    let f = Files::new();
    ok(&[
        "train",
        "-i",
        &f.s("train.csv"),
        "-k",
        "16",
        "-o",
        &f.s("m.bin"),
    ]);
    let out = run(&[
        "index",
        "-m",
        &f.s("m.bin"),
        "-i",
        &f.s("db.csv"),
        "-o",
        &f.s("x.idx"),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[input]:"));

    let out = ok(&[
        "index",
        "-m",
        &f.s("m.bin"),
        "-i",
        &f.s("db.csv"),
        "--skip-unlabeled",
        "-o",
        &f.s("x.idx"),
    ]);
    assert_eq!(out.lines().nth(1).unwrap(), "80,80,codeword,16");

    let out = ok(&[
        "index",
        "-m",
        &f.s("m.bin"),
        "-i",
        &f.s("db_labeled.csv"),
        "-o",
        &f.s("y.idx"),
    ]);
    assert_eq!(out.lines().nth(1).unwrap(), "160,0,codeword,16");

    let out = ok(&[
        "index",
        "-m",
        &f.s("m.bin"),
        "-i",
        &f.s("db.csv"),
        "--mode",
        "phi",
        "-o",
        &f.s("z.idx"),
    ]);
    assert_eq!(out.lines().nth(1).unwrap(), "160,0,phi,16");
}

#[test]
fn query_output_is_ranked_and_deterministic() {
    let f = Files::new();
    ok(&[
        "train",
        "-i",
        &f.s("train.csv"),
        "-k",
        "16",
        "-o",
        &f.s("m.bin"),
    ]);
    ok(&[
        "index",
        "-m",
        &f.s("m.bin"),
        "-i",
        &f.s("db.csv"),
        "--mode",
        "phi",
        "-o",
        &f.s("p.idx"),
    ]);
    let args = [
        "query",
        "-m",
        &f.s("m.bin"),
        "--index",
        &f.s("p.idx"),
        "-q",
        &f.s("test.csv"),
        "--top",
        "5",
    ];
    let a = ok(&args);
    assert_eq!(a, ok(&args));
    let mut lines = a.lines();
    assert_eq!(lines.next().unwrap(), "query_id,rank,id,distance");
    let rows: Vec<Vec<u64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 40 * 5);
    for q in rows.chunks(5) {
        assert!(q
            .windows(2)
            .all(|w| w[0][0] == w[1][0] && w[0][3] <= w[1][3]));
        assert_eq!(
            q.iter().map(|r| r[1]).collect::<Vec<_>>(),
            vec![1, 2, 3, 4, 5]
        );
    }
}

#[test]
fn width_mismatch_is_a_consistency_error() {
    let f = Files::new();
    ok(&[
        "train",
        "-i",
        &f.s("train.csv"),
        "-k",
        "16",
        "-o",
        &f.s("m16.bin"),
    ]);
    ok(&[
        "train",
        "-i",
        &f.s("train.csv"),
        "-k",
        "8",
        "-o",
        &f.s("m8.bin"),
    ]);
    ok(&[
        "index",
        "-m",
        &f.s("m16.bin"),
        "-i",
        &f.s("db.csv"),
        "--mode",
        "phi",
        "-o",
        &f.s("p.idx"),
    ]);
    let out = run(&[
        "query",
        "-m",
        &f.s("m8.bin"),
        "--index",
        &f.s("p.idx"),
        "-q",
        &f.s("test.csv"),
    ]);
    assert_eq!(out.status.code(), Some(7));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[consistency]:"));
}

#[test]
fn exhausted_codebook_reports_hint() {
    let f = Files::new();
    let out = run(&[
        "train",
        "-i",
        &f.s("train.csv"),
        "-k",
        "8",
        "--capacity",
        "2",
        "-o",
        &f.s("m"),
    ]);
    assert_eq!(out.status.code(), Some(5));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.starts_with("error[capacity]:") && err.contains("hint:"),
        "{err}"
    );
}

#[test]
fn eval_of_separated_clusters_is_perfect() {
    let f = Files::new();
    ok(&[
        "train",
        "-i",
        &f.s("train.csv"),
        "-k",
        "16",
        "-o",
        &f.s("m.bin"),
    ]);
    ok(&[
        "index",
        "-m",
        &f.s("m.bin"),
        "-i",
        &f.s("db_labeled.csv"),
        "-o",
        &f.s("c.idx"),
    ]);
    let out = ok(&[
        "eval",
        "-m",
        &f.s("m.bin"),
        "--index",
        &f.s("c.idx"),
        "-t",
        &f.s("test.csv"),
    ]);
    let row: Vec<&str> = out.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "40");
    let map: f64 = row[1].parse().unwrap();
    assert!((map - 1.0).abs() <= 1e-2, "mAP {map}");
}

#[test]
fn eval_without_labeled_queries_fails() {
    let f = Files::new();
    ok(&[
        "train",
        "-i",
        &f.s("train.csv"),
        "-k",
        "16",
        "-o",
        &f.s("m.bin"),
    ]);
    ok(&[
        "index",
        "-m",
        &f.s("m.bin"),
        "-i",
        &f.s("db.csv"),
        "--mode",
        "phi",
        "-o",
        &f.s("p.idx"),
    ]);
    let rows = clusters(1, 3, 5)
        .samples()
        .iter()
        .map(|s| Sample {
            label: None,
            ..s.clone()
        })
        .collect::<Vec<_>>();
    let set = FeatureSet::from_samples(8, rows).unwrap();
    write_features(f.path("q.csv"), &set, FeatureEncoding::Csv).unwrap();
    let out = run(&[
        "eval",
        "-m",
        &f.s("m.bin"),
        "--index",
        &f.s("p.idx"),
        "-t",
        &f.s("q.csv"),
    ]);
    assert_eq!(out.status.code(), Some(8));
}

#[test]
fn full_experiment_is_reproducible() {
    let f = Files::new();
    let go = |tag: &str| {
        let curve = f.s(&format!("curve-{tag}.csv"));
        let dir = f.s(&format!("art-{tag}"));
        let summary = ok(&[
            "--seed",
            "3",
            "eval",
            "--full-experiment",
            "--train",
            &f.s("train.csv"),
            "--index-input",
            &f.s("db.csv"),
            "-t",
            &f.s("test.csv"),
            "-k",
            "8",
            "--rho",
            "2",
            "--orderings",
            "5",
            "--mode",
            "phi",
            "--refresh",
            "batched:5",
            "--checkpoints",
            "3",
            "--curve-out",
            &curve,
            "--artifacts-dir",
            &dir,
        ]);
        let mut bytes = vec![summary.into_bytes(), fs::read(&curve).unwrap()];
        for i in 0..5 {
            bytes.push(fs::read(f.path(&format!("art-{tag}/model-{i}.bin"))).unwrap());
            bytes.push(fs::read(f.path(&format!("art-{tag}/index-{i}.bin"))).unwrap());
        }
        bytes
    };
    let a = go("a");
    assert_eq!(a, go("b"));
    let summary = String::from_utf8(a[0].clone()).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 1 + 5 + 1);
    assert!(lines[6].starts_with("mean,,"));
    let seeds: Vec<&str> = lines[1..6]
        .iter()
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(seeds, ["3", "4", "5", "6", "7"]);
}

#[test]
fn codebook_stats_row() {
    let out = ok(&[
        "--seed",
        "1",
        "codebook-stats",
        "-k",
        "8",
        "--capacity",
        "20",
    ]);
    let row: Vec<&str> = out.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..4], &["8", "20", "128", "1"]);
    assert!(row[4].parse::<u32>().unwrap() >= 1);
    let out = run(&["codebook-stats", "-k", "3", "--capacity", "5"]);
    assert_eq!(out.status.code(), Some(5));
}
