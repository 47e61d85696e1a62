use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tempfile::TempDir;

fn hcv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hcv"))
        .args(args)
        .output()
        .expect("spawn hcv")
}

fn ok(args: &[&str]) -> String {
    let out = hcv(args);
    assert!(
        out.status.success(),
        "hcv {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn value(stdout: &str, key: &str) -> f64 {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')))
        .unwrap_or_else(|| panic!("no {key} in {stdout:?}"))
        .trim()
        .parse()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_csv(dir: &Path, name: &str, header: &[&str], rows: &[Vec<f64>]) -> PathBuf {
    let mut text = header.join(",");
    text.push('\n');
    for r in rows {
        let fields: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
        text.push_str(&fields.join(","));
        text.push('\n');
    }
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn normals(n: usize, cols: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..cols).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect()
}

#[test]
fn hsic_detects_a_duplicated_column() {
    let dir = TempDir::new().unwrap();
    let rows: Vec<Vec<f64>> = normals(80, 1, 1).into_iter().map(|r| vec![r[0], r[0]]).collect();
    let csv = write_csv(dir.path(), "d.csv", &["a", "b"], &rows);
    let out = ok(&["hsic", "--input", path(&csv), "--u", "a", "--v", "b", "--permutations", "199", "--seed", "3"]);
    assert!(value(&out, "hsic") > 0.0);
    assert!(value(&out, "p_value") <= 0.01, "{out}");
}

#[test]
fn constant_column_gives_zero_or_a_bandwidth_error() {
    let dir = TempDir::new().unwrap();
    let rows: Vec<Vec<f64>> = normals(30, 1, 2).into_iter().map(|r| vec![1.5, r[0]]).collect();
    let csv = write_csv(dir.path(), "c.csv", &["u", "v"], &rows);
    let out = ok(&["hsic", "--input", path(&csv), "--u", "u", "--v", "v", "--gamma-u", "1"]);
    assert_eq!(value(&out, "hsic"), 0.0);

    let failed = hcv(&["hsic", "--input", path(&csv), "--u", "u", "--v", "v"]);
    assert_eq!(failed.status.code(), Some(3));
    let err = String::from_utf8_lossy(&failed.stderr);
    assert!(err.contains("degenerate bandwidth"), "{err}");
}

#[test]
fn hsic_output_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let csv = write_csv(dir.path(), "r.csv", &["a", "b", "c"], &normals(60, 3, 4));
    let args = ["hsic", "--input", path(&csv), "--u", "a,b", "--v", "c", "--permutations", "99", "--seed", "9"];
    assert_eq!(ok(&args), ok(&args));
}

#[test]
fn dhsic_with_two_groups_matches_hsic() {
    let dir = TempDir::new().unwrap();
    let csv = write_csv(dir.path(), "r.csv", &["a", "b", "c"], &normals(50, 3, 5));
    let h = value(&ok(&["hsic", "--input", path(&csv), "--u", "a,b", "--v", "c"]), "hsic");
    let d = value(
        &ok(&["dhsic", "--input", path(&csv), "--group", "a,b", "--group", "c"]),
        "dhsic",
    );
    assert_eq!(h, d);
}

#[test]
fn mmd_between_identical_halves_is_zero() {
    let dir = TempDir::new().unwrap();
    let half = normals(25, 2, 6);
    let rows: Vec<Vec<f64>> = half.iter().chain(&half).cloned().collect();
    let csv = write_csv(dir.path(), "h.csv", &["x", "y"], &rows);
    let out = ok(&["mmd", "--input", path(&csv), "--columns", "x,y", "--split-half"]);
    assert_eq!(value(&out, "mmd"), 0.0);
}

#[test]
fn delta_kernel_hsic_matches_weighted_mmd_sum() {
    let dir = TempDir::new().unwrap();
    let rows: Vec<Vec<f64>> = normals(90, 2, 7)
        .into_iter()
        .enumerate()
        .map(|(i, r)| vec![r[0], r[1], (i % 3) as f64])
        .collect();
    let csv = write_csv(dir.path(), "l.csv", &["z0", "z1", "label"], &rows);
    let hsic = value(
        &ok(&[
            "hsic", "--input", path(&csv), "--u", "z*", "--v", "label", "--kernel-v", "delta", "--gamma-u", "0.5",
        ]),
        "hsic",
    );
    let sum = value(
        &ok(&[
            "mmd", "--input", path(&csv), "--columns", "z*", "--label", "label", "--weighted-sum", "--gamma", "0.5",
        ]),
        "weighted_mmd_sum",
    );
    assert!((hsic - sum).abs() <= 1e-10, "{hsic} vs {sum}");
}

#[test]
fn mmd_with_two_labels_is_positive_for_shifted_samples() {
    let dir = TempDir::new().unwrap();
    let rows: Vec<Vec<f64>> = normals(60, 1, 8)
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let label = (i % 2) as f64;
            vec![r[0] + 3.0 * label, label]
        })
        .collect();
    let csv = write_csv(dir.path(), "s.csv", &["x", "g"], &rows);
    assert!(value(&ok(&["mmd", "--input", path(&csv), "--columns", "x", "--label", "g"]), "mmd") > 0.1);
}

fn zero_model_json(v: usize, u: usize, r: usize, d: usize) -> String {
    let zeros = |rows: usize, cols: usize| serde_json::json!({"shape": [rows, cols], "data": vec![0.0; rows * cols]});
    serde_json::json!({
        "format": "hcv-lingauss-model/1",
        "dims": {"v": v, "u": u, "noise_rank": r, "obs": d},
        "noise_scale": 1.0,
        "seed": 0,
        "a": zeros(d, v),
        "b": zeros(d, u),
        "c": zeros(d, r),
    })
    .to_string()
}

#[test]
fn zero_model_loglik_is_standard_normal() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("m.json");
    std::fs::write(&model, zero_model_json(1, 1, 1, 2)).unwrap();
    let data = write_csv(dir.path(), "x.csv", &["x_0", "x_1"], &[vec![0.0, 0.0]]);
    let ll = value(&ok(&["lingauss", "loglik", "--model", path(&model), "--data", path(&data)]), "loglik");
    assert!((ll - -1.837877).abs() < 1e-6, "{ll}");
}

#[test]
fn gen_then_loglik_is_finite_and_gen_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        ok(&["lingauss", "gen", "--seed", "11", "--rows", "200", "--out-dir", path(d)]);
    }
    for f in ["data.csv", "model.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let ll = value(
        &ok(&[
            "lingauss", "loglik", "--model", path(&a.join("model.json")), "--data", path(&a.join("data.csv")),
        ]),
        "loglik",
    );
    assert!(ll.is_finite() && ll < 0.0);
}

#[test]
fn posterior_of_a_model_without_latent_loadings_is_identity() {
    let dir = TempDir::new().unwrap();
    ok(&["lingauss", "gen", "--v", "2", "--u", "3", "--noise-rank", "2", "--obs", "5", "--rows", "10", "--out-dir", path(dir.path())]);
    let model_path = dir.path().join("model.json");
    let mut model: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&model_path).unwrap()).unwrap();
    for key in ["a", "b"] {
        let n = model[key]["data"].as_array().unwrap().len();
        model[key]["data"] = serde_json::json!(vec![0.0; n]);
    }
    std::fs::write(&model_path, model.to_string()).unwrap();
    let out = ok(&["lingauss", "posterior", "--model", path(&model_path)]);
    let lines: Vec<&str> = out.lines().collect();
    let cov_at = lines.iter().position(|l| l.starts_with("covariance")).unwrap();
    assert_eq!(lines[cov_at], "covariance 5 5");
    for i in 0..5 {
        let row: Vec<f64> = lines[cov_at + 1 + i].split(' ').map(|s| s.parse().unwrap()).collect();
        for (j, v) in row.iter().enumerate() {
            assert_eq!(*v, if i == j { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn loglik_rejects_mismatched_dimensions() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("m.json");
    std::fs::write(&model, zero_model_json(1, 1, 1, 3)).unwrap();
    let data = write_csv(dir.path(), "x.csv", &["x_0", "x_1"], &[vec![0.0, 0.0]]);
    let out = hcv(&["lingauss", "loglik", "--model", path(&model), "--data", path(&data)]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn malformed_csv_reports_line_and_column() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("bad.csv");
    std::fs::write(&csv, "a,b\n1,2\n3,x\n").unwrap();
    let out = hcv(&["hsic", "--input", path(&csv), "--u", "a", "--v", "b"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3") && err.contains("column 2"), "{err}");
}

#[test]
fn invalid_config_exits_with_a_field_message() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"train": {"batch_size": 0}}"#).unwrap();
    let out = hcv(&["train", "--config", path(&cfg), "--out-dir", path(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("batch_size"));

    std::fs::write(&cfg, r#"{"train": {"epoch": 3}}"#).unwrap();
    let out = hcv(&["train", "--config", path(&cfg), "--out-dir", path(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));
}

const SMALL: [&str; 6] = ["--epochs", "1", "--n-train", "300", "--n-test", "100"];

#[test]
fn zero_lambda_hcv_and_vae_write_identical_traces() {
    let dir = TempDir::new().unwrap();
    let vae = dir.path().join("vae");
    let hcv0 = dir.path().join("hcv0");
    let mut a = vec!["train", "--objective", "vae", "--seed", "2", "--out-dir", path(&vae)];
    a.extend(SMALL);
    ok(&a);
    let mut b = vec!["train", "--objective", "hcv", "--lambda", "0", "--seed", "2", "--out-dir", path(&hcv0)];
    b.extend(SMALL);
    ok(&b);
    assert_eq!(
        std::fs::read(vae.join("trace.csv")).unwrap(),
        std::fs::read(hcv0.join("trace.csv")).unwrap()
    );
}

#[test]
fn train_writes_its_artifacts_and_the_oracle_line() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("t");
    let mut a = vec!["train", "--objective", "beta-vae", "--beta", "2", "--oracle", "--out-dir", path(&out_dir)];
    a.extend(SMALL);
    let out = ok(&a);
    assert!(out.lines().any(|l| l.starts_with("final step=")), "{out}");
    assert!(out.lines().any(|l| l.starts_with("oracle ")), "{out}");
    for f in ["trace.csv", "checkpoint.json", "oracle.csv", "manifest.json"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let trace = std::fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    assert!(trace.starts_with("step,epoch,train_elbo,test_elbo,test_elbo_se,test_hsic,test_pearson,penalty\n"));
    assert!(!trace.contains('\r'));

    let m = dir.path().join("m");
    ok(&["lingauss", "gen", "--rows", "100", "--out-dir", path(&m)]);
    let gap = ok(&[
        "lingauss",
        "gap",
        "--model",
        path(&dir.path().join("m/model.json")),
        "--data",
        path(&dir.path().join("m/data.csv")),
        "--checkpoint",
        path(&out_dir.join("checkpoint.json")),
    ]);
    let total = value(&gap, "total_gap");
    let parts = value(&gap, "marginal_kl_sum") + value(&gap, "coupling_term");
    assert!(total >= 0.0 && (total - parts).abs() <= 1e-9 * total.abs().max(1.0), "{gap}");
}

#[test]
fn divergence_keeps_the_partial_trace() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("d");
    let mut a = vec!["train", "--lr", "1e300", "--out-dir", path(&out_dir)];
    a.extend(["--epochs", "2", "--n-train", "300", "--n-test", "100"]);
    let out = hcv(&a);
    assert_eq!(out.status.code(), Some(4));
    let trace = std::fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 2, "{trace}");
    assert!(!out_dir.join("checkpoint.json").exists());
}

#[test]
fn tampered_manifest_output_fails_rerun() {
    let dir = TempDir::new().unwrap();
    let g = dir.path().join("g");
    ok(&["lingauss", "gen", "--rows", "20", "--out-dir", path(&g)]);
    let manifest = g.join("manifest.json");
    ok(&["rerun", "--manifest", path(&manifest)]);
    let mut m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    m["outputs"][0]["sha256"] = serde_json::json!("00");
    std::fs::write(&manifest, m.to_string()).unwrap();
    assert_eq!(hcv(&["rerun", "--manifest", path(&manifest)]).status.code(), Some(4));
}
