use std::fs;
use std::path::{Path, PathBuf};

use tempfile::TempDir;
use variscan::stage1::Stage1Sampler;
use variscan::{CovariateMatrix, RandomSource, Standardization};
use variscan_cli::artifacts::{Stage1Checkpoint as Checkpoint, STAGE1_CHECKPOINT};
use variscan_cli::config::{hex_digest, load};
use variscan_cli::io::{ingest_covariates, read_key_values, write_covariates};
use variscan_cli::run;

const SMALL_STAGE1: [&str; 10] = [
    "--set",
    "stage1.burn_in=20",
    "--set",
    "stage1.samples=15",
    "--set",
    "stage1.thin=1",
    "--set",
    "stage1.configuration_burn_in=5",
    "--set",
    "stage1.configuration_samples=10",
];

const SMALL_STAGE2: [&str; 6] = [
    "--set",
    "stage2.burn_in=40",
    "--set",
    "stage2.samples=30",
    "--set",
    "stage2.thin=1",
];

fn cli(args: &[&str]) -> i32 {
    run(std::iter::once("variscan").chain(args.iter().copied()))
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn small_clusters(dir: &Path, seed: &str) -> String {
    let out = p(dir, "clusters");
    let code = cli(&[
        "simulate-clusters",
        "--seed",
        seed,
        "--set",
        "cluster_sim.n=12",
        "--set",
        "cluster_sim.p=20",
        "--out",
        &out,
    ]);
    assert_eq!(code, 0);
    out
}

fn fit_stage1(covariates: &str, out: &str, seed: &str, extra: &[&str]) -> i32 {
    let mut args = vec!["fit-stage1", "--seed", seed, "--covariates", covariates, "--out", out];
    args.extend_from_slice(&SMALL_STAGE1);
    args.extend_from_slice(extra);
    cli(&args)
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|path| path.extension().is_some_and(|e| e == "csv"))
        .map(|path| (path.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&path).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn minimal_matrix_is_accepted() {
    let dir = TempDir::new().unwrap();
    let path = write(dir.path(), "x.csv", "1,2\n3,4\n");
    let x = ingest_covariates(&path).unwrap();
    assert_eq!((x.matrix.n(), x.matrix.p()), (2, 2));
    assert_eq!(x.names, ["x1", "x2"]);
    assert_eq!(x.matrix.column(1), &[2.0, 4.0]);
}

#[test]
fn header_row_is_detected() {
    let dir = TempDir::new().unwrap();
    let path = write(dir.path(), "x.csv", "a,b,c\n1,2,3\n4,5,6\n");
    let x = ingest_covariates(&path).unwrap();
    assert_eq!(x.names, ["a", "b", "c"]);
    assert_eq!(x.matrix.n(), 2);
}

#[test]
fn malformed_covariates_exit_with_data_error() {
    let dir = TempDir::new().unwrap();
    for (name, text) in [
        ("ragged.csv", "1,2,3\n4,5\n6,7,8\n"),
        ("word.csv", "1,2\n3,abc\n5,6\n"),
        ("one_row.csv", "1,2,3\n"),
        ("one_col.csv", "1\n2\n3\n"),
    ] {
        let path = write(dir.path(), name, text);
        let err = ingest_covariates(&path).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{name}");
        let out = p(dir.path(), &format!("out_{name}"));
        assert_eq!(fit_stage1(&path.display().to_string(), &out, "1", &[]), 2, "{name}");
    }
}

#[test]
fn diagnostics_name_row_and_column() {
    let dir = TempDir::new().unwrap();
    let path = write(dir.path(), "x.csv", "a,b\n1,2\n3,zz\n");
    let msg = ingest_covariates(&path).unwrap_err().to_string();
    assert!(msg.contains("row 3") && msg.contains("column 2"), "{msg}");
}

#[test]
fn missing_cells_are_counted() {
    let dir = TempDir::new().unwrap();
    let (n, p) = (20, 10);
    let mut text = String::new();
    let mut expected = 0;
    for i in 0..n {
        let row: Vec<String> = (0..p)
            .map(|j| {
                if (i * p + j) % 20 == 7 {
                    expected += 1;
                    String::new()
                } else {
                    format!("{}", (i * 31 + j * 7) % 13)
                }
            })
            .collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    let path = write(dir.path(), "x.csv", &text);
    let x = ingest_covariates(&path).unwrap();
    assert_eq!(expected, 10);
    assert_eq!(x.matrix.missing_count(), expected);
}

#[test]
fn emitted_covariates_round_trip_exactly() {
    let dir = TempDir::new().unwrap();
    let mut rng = RandomSource::new(5, 0);
    let values: Vec<f64> = (0..60)
        .map(|i| variscan::kernel::sample::standard_normal(&mut rng) * 10f64.powi(i % 9 - 4))
        .collect();
    let mut missing = vec![false; 60];
    missing[13] = true;
    let x = CovariateMatrix::with_missing(10, 6, values, missing).unwrap();
    let names: Vec<String> = (1..=6).map(|j| format!("g{j}")).collect();
    let path = dir.path().join("x.csv");
    write_covariates(&path, "abc", &names, &x).unwrap();
    let back = ingest_covariates(&path).unwrap();
    assert_eq!(back.names, names);
    for j in 0..6 {
        for i in 0..10 {
            assert_eq!(back.matrix.is_missing(i, j), x.is_missing(i, j));
            if !x.is_missing(i, j) {
                assert_eq!(back.matrix.get(i, j).to_bits(), x.get(i, j).to_bits());
            }
        }
    }
}

#[test]
fn simulate_clusters_is_byte_identical_across_runs() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let out_a = small_clusters(a.path(), "7");
    let out_b = small_clusters(b.path(), "7");
    let files = csv_files(Path::new(&out_a));
    assert!(!files.is_empty());
    assert_eq!(files, csv_files(Path::new(&out_b)));
    assert_eq!(
        fs::read(Path::new(&out_a).join("truth.json")).unwrap(),
        fs::read(Path::new(&out_b).join("truth.json")).unwrap()
    );
}

#[test]
fn outputs_carry_the_config_hash() {
    let dir = TempDir::new().unwrap();
    let out = small_clusters(dir.path(), "2");
    let config = fs::read_to_string(Path::new(&out).join("config.toml")).unwrap();
    let hash = hex_digest(config.as_bytes());
    for (name, bytes) in csv_files(Path::new(&out)) {
        let first = String::from_utf8(bytes).unwrap().lines().next().unwrap().to_string();
        assert_eq!(first, format!("# config-hash: {hash}"), "{name}");
    }
}

#[test]
fn perfect_allocation_scores_kappa_one() {
    let dir = TempDir::new().unwrap();
    let out = small_clusters(dir.path(), "3");
    let ev = p(dir.path(), "ev");
    let code = cli(&[
        "evaluate",
        "--truth",
        &p(Path::new(&out), "truth.json"),
        "--allocation",
        &p(Path::new(&out), "truth_allocation.csv"),
        "--out",
        &ev,
    ]);
    assert_eq!(code, 0);
    let kv = read_key_values(&Path::new(&ev).join("evaluation.csv")).unwrap();
    assert!(kv.contains(&("kappa".to_string(), "1".to_string())), "{kv:?}");
    let q0 = kv.iter().find(|(k, _)| k == "q0").unwrap();
    let q = kv.iter().find(|(k, _)| k == "q_hat").unwrap();
    assert_eq!(q0.1, q.1);
}

#[test]
fn cluster_pipeline_report_has_summary_fields() {
    let dir = TempDir::new().unwrap();
    let out = small_clusters(dir.path(), "4");
    let s1 = p(dir.path(), "s1");
    assert_eq!(fit_stage1(&p(Path::new(&out), "covariates.csv"), &s1, "4", &[]), 0);
    let rep = p(dir.path(), "rep");
    let code = cli(&["report", "--stage1", &s1, "--truth", &p(Path::new(&out), "truth.json"), "--out", &rep]);
    assert_eq!(code, 0);
    let kv = read_key_values(&Path::new(&rep).join("summary.csv")).unwrap();
    for key in ["kappa", "q_hat", "q0", "d_lower", "d_upper", "p_dirichlet", "logbf_bound"] {
        assert!(kv.iter().any(|(k, _)| k == key), "missing {key}");
    }
    assert!(Path::new(&rep).join("cluster_sizes.csv").exists());
    assert!(Path::new(&rep).join("d_density.csv").exists());
}

fn survival_fit(dir: &Path) -> (String, String) {
    let sim = p(dir, "sim");
    let code = cli(&[
        "simulate-survival",
        "--seed",
        "11",
        "--beta-star",
        "1.0",
        "--set",
        "survival_sim.n=40",
        "--set",
        "survival_sim.p=30",
        "--set",
        "survival_sim.predictor_count=3",
        "--out",
        &sim,
    ]);
    assert_eq!(code, 0);
    let fit = p(dir, "fit");
    let cov = p(Path::new(&sim), "train_covariates.csv");
    let outcomes = p(Path::new(&sim), "train_outcomes.csv");
    let mut args = vec!["fit", "--seed", "12", "--covariates", &cov, "--outcomes", &outcomes, "--out", &fit];
    args.extend_from_slice(&SMALL_STAGE1);
    args.extend_from_slice(&SMALL_STAGE2);
    assert_eq!(cli(&args), 0);
    (sim, fit)
}

#[test]
fn survival_pipeline_predicts_and_scores() {
    let dir = TempDir::new().unwrap();
    let (sim, fit) = survival_fit(dir.path());
    let pred = p(dir.path(), "pred");
    let code = cli(&[
        "predict",
        "--stage1",
        &p(Path::new(&fit), "stage1"),
        "--stage2",
        &p(Path::new(&fit), "stage2"),
        "--covariates",
        &p(Path::new(&sim), "test_covariates.csv"),
        "--out",
        &pred,
    ]);
    assert_eq!(code, 0);
    let ev = p(dir.path(), "ev");
    let code = cli(&[
        "evaluate",
        "--outcomes",
        &p(Path::new(&sim), "test_outcomes.csv"),
        "--predictions",
        &p(Path::new(&pred), "predictions.csv"),
        "--out",
        &ev,
    ]);
    assert_eq!(code, 0);
    let kv = read_key_values(&Path::new(&ev).join("evaluation.csv")).unwrap();
    let err: f64 = kv.iter().find(|(k, _)| k == "concordance_error").unwrap().1.parse().unwrap();
    assert!((0.0..=1.0).contains(&err));
    let selection = fs::read_to_string(Path::new(&fit).join("stage2").join("selection.csv")).unwrap();
    assert!(selection.lines().nth(1).unwrap().starts_with("cluster,size,linear_prob,spline_prob"));
}

#[test]
fn predict_refuses_mismatched_stages() {
    let dir = TempDir::new().unwrap();
    let (sim, fit) = survival_fit(dir.path());
    let other = p(dir.path(), "other_s1");
    assert_eq!(fit_stage1(&p(Path::new(&sim), "train_covariates.csv"), &other, "99", &[]), 0);
    let code = cli(&[
        "predict",
        "--stage1",
        &other,
        "--stage2",
        &p(Path::new(&fit), "stage2"),
        "--covariates",
        &p(Path::new(&sim), "test_covariates.csv"),
        "--out",
        &p(dir.path(), "pred"),
    ]);
    assert_eq!(code, 4);
}

#[test]
fn resume_with_changed_config_is_a_checkpoint_mismatch() {
    let dir = TempDir::new().unwrap();
    let out = small_clusters(dir.path(), "5");
    let cov = p(Path::new(&out), "covariates.csv");
    let s1 = p(dir.path(), "s1");
    assert_eq!(fit_stage1(&cov, &s1, "5", &["--set", "io.checkpoint_every=10"]), 0);
    let code = fit_stage1(&cov, &s1, "6", &["--set", "io.checkpoint_every=10", "--resume"]);
    assert_eq!(code, 4);
}

#[test]
fn resumed_stage1_matches_uninterrupted_run() {
    let dir = TempDir::new().unwrap();
    let out = small_clusters(dir.path(), "8");
    let cov = p(Path::new(&out), "covariates.csv");
    let full = p(dir.path(), "full");
    assert_eq!(fit_stage1(&cov, &full, "8", &["--set", "io.checkpoint_every=0"]), 0);

    // checkpoint taken partway through the same chain
    let config_text = fs::read_to_string(Path::new(&full).join("config.toml")).unwrap();
    let mut args: Vec<String> = SMALL_STAGE1.iter().map(|s| s.to_string()).collect();
    args.retain(|a| a != "--set");
    args.push("io.checkpoint_every=0".into());
    let config = load(None, &args, Some(8)).unwrap();
    let raw = ingest_covariates(Path::new(&cov)).unwrap().matrix;
    let x = Standardization::fit(&raw).apply(&raw).unwrap();
    let mut sampler = Stage1Sampler::new(&x, config.stage1.clone(), RandomSource::new(8, 1)).unwrap();
    sampler.run(Some(13)).unwrap();
    let part = p(dir.path(), "part");
    fs::create_dir_all(&part).unwrap();
    let ckpt = Checkpoint { config_hash: hex_digest(config_text.as_bytes()), sampler };
    fs::write(Path::new(&part).join(STAGE1_CHECKPOINT), serde_json::to_vec(&ckpt).unwrap()).unwrap();

    assert_eq!(fit_stage1(&cov, &part, "8", &["--set", "io.checkpoint_every=0", "--resume"]), 0);
    assert_eq!(csv_files(Path::new(&full)), csv_files(Path::new(&part)));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(cli(&["no-such-command"]), 1);
    assert_eq!(cli(&["fit-stage1", "--out", "/tmp/x"]), 1);
    let dir = TempDir::new().unwrap();
    assert_eq!(cli(&["evaluate", "--out", &p(dir.path(), "ev")]), 1);
    assert_eq!(cli(&["simulate-clusters", "--set", "stage1.samples=0", "--out", &p(dir.path(), "c")]), 1);
}
