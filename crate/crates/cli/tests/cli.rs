use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use aucmtl::dataio::{self, ModelFile};
use aucmtl::ModelParams;
use serde_json::Value;
use tempfile::TempDir;

fn aucmtl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aucmtl"))
        .args(args)
        .env_remove("AUCMTL_THREADS")
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate_small(dir: &Path, seed: &str) {
    let o = aucmtl(&[
        "simulate", "--out", p(dir), "--users", "6", "--samples", "120", "--dim", "8",
        "--top-pos", "20", "--seed", seed,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn read_report(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn data_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn simulate_writes_all_files_with_expected_rows() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("sim");
    let o = aucmtl(&[
        "simulate", "--out", p(&out), "--users", "2", "--samples", "10", "--dim", "3",
        "--top-pos", "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["train.csv", "test.csv", "truth_model.json", "simconfig.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    assert_eq!(data_rows(&out.join("train.csv")) + data_rows(&out.join("test.csv")), 20);
    let header = fs::read_to_string(out.join("train.csv")).unwrap();
    assert!(header.starts_with("user_id,label,f1,f2,f3\n"));
}

#[test]
fn simulate_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    simulate_small(&a, "11");
    simulate_small(&b, "11");
    for f in ["train.csv", "test.csv", "truth_model.json", "simconfig.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let c = tmp.path().join("c");
    simulate_small(&c, "12");
    assert_ne!(fs::read(a.join("train.csv")).unwrap(), fs::read(c.join("train.csv")).unwrap());
}

#[test]
fn paper_scale_conflicts_with_size_flags() {
    let tmp = TempDir::new().unwrap();
    let o = aucmtl(&["simulate", "--out", p(tmp.path()), "--paper-scale", "--users", "3"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn fit_separable_toy_reaches_auc_one() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("toy.csv");
    let mut csv = String::from("user_id,label,f1,f2\n");
    for (user, flip) in [("a", 1.0), ("b", 0.5)] {
        for k in 0..6 {
            let x = k as f64;
            let label = if k >= 3 { 1 } else { -1 };
            csv.push_str(&format!("{user},{label},{},{}\n", x * flip, (k % 2) as f64));
        }
    }
    fs::write(&data, csv).unwrap();
    let model = tmp.path().join("m.json");
    let trace = tmp.path().join("trace.csv");
    let o = aucmtl(&[
        "fit", "--data", p(&data), "--out", p(&model), "--trace", p(&trace), "--lambda1",
        "0.001", "--lambda2", "0.001", "--lambda3", "0.001", "--max-iters", "2000",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("training AUC: 1.0000"), "{out}");
    assert!(out.contains("stop_reason: tolerance"), "{out}");
    assert!(out.contains("final objective: "), "{out}");

    let trace = fs::read_to_string(trace).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("iter,objective,loss,reg1,reg2,reg3,rho,d_theta,d_g,d_p"));
    let objectives: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(!objectives.is_empty());
    assert!(objectives.windows(2).all(|w| w[1] <= w[0]));

    let saved = dataio::read_model(&model).unwrap();
    assert_eq!(saved.params.user_order(), ["a".to_string(), "b".to_string()]);
    assert!(saved.hyperparams.is_some());
}

#[test]
fn fit_exit_code_two_at_iteration_limit() {
    let tmp = TempDir::new().unwrap();
    simulate_small(tmp.path(), "5");
    let model = tmp.path().join("m.json");
    let o = aucmtl(&[
        "fit", "--data", p(&tmp.path().join("train.csv")), "--out", p(&model), "--max-iters", "2",
        "--tol", "1e-14",
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stdout(&o).contains("stop_reason: max_iters"));
    assert!(model.exists());
}

#[test]
fn fit_rejects_alpha_of_one() {
    let tmp = TempDir::new().unwrap();
    simulate_small(tmp.path(), "5");
    let o = aucmtl(&[
        "fit", "--data", p(&tmp.path().join("train.csv")), "--out",
        p(&tmp.path().join("m.json")), "--alpha", "1.0",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("alpha"), "{}", stderr(&o));
    assert!(!tmp.path().join("m.json").exists());
}

#[test]
fn fit_clamps_large_kappa_with_warning() {
    let tmp = TempDir::new().unwrap();
    simulate_small(tmp.path(), "5");
    let model = tmp.path().join("m.json");
    let o = aucmtl(&[
        "fit", "--data", p(&tmp.path().join("train.csv")), "--out", p(&model), "--kappa", "50",
        "--max-iters", "20",
    ]);
    assert_ne!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("kappa clamped"), "{}", stderr(&o));
    assert_eq!(dataio::read_model(&model).unwrap().hyperparams.unwrap().kappa, 6);
}

#[test]
fn fit_reports_bad_csv_with_line_number() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("bad.csv");
    fs::write(&data, "user_id,label,f1\na,1,0.5\na,0,1.0\n").unwrap();
    let o = aucmtl(&["fit", "--data", p(&data), "--out", p(&tmp.path().join("m.json"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn fit_from_init_continues_downhill() {
    let tmp = TempDir::new().unwrap();
    simulate_small(tmp.path(), "8");
    let train = tmp.path().join("train.csv");
    let first = tmp.path().join("first.json");
    let o = aucmtl(&["fit", "--data", p(&train), "--out", p(&first), "--max-iters", "40"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let final_objective = |out: &str| -> f64 {
        out.lines()
            .find_map(|l| l.strip_prefix("final objective: "))
            .unwrap()
            .parse()
            .unwrap()
    };
    let f1 = final_objective(&stdout(&o));
    let trace = tmp.path().join("trace.csv");
    let o = aucmtl(&[
        "fit", "--data", p(&train), "--out", p(&tmp.path().join("second.json")), "--init",
        p(&first), "--max-iters", "40", "--trace", p(&trace),
    ]);
    assert_ne!(o.status.code(), Some(1), "{}", stderr(&o));
    let objectives: Vec<f64> = fs::read_to_string(trace)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(objectives.iter().all(|&v| v <= f1), "{objectives:?} vs {f1}");
    assert!(final_objective(&stdout(&o)) < f1);
}

#[test]
fn evaluate_truth_model_on_its_test_split() {
    let tmp = TempDir::new().unwrap();
    simulate_small(tmp.path(), "21");
    let report = tmp.path().join("report.json");
    let o = aucmtl(&[
        "evaluate", "--data", p(&tmp.path().join("test.csv")), "--model",
        p(&tmp.path().join("truth_model.json")), "--out", p(&report),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = read_report(&report);
    assert!(r["macro_auc"]["mean"].as_f64().unwrap() > 0.95, "{r}");
    assert!(r["unknown_users"].as_array().unwrap().is_empty());
    assert!(r["surrogate_loss"].as_f64().unwrap() >= 0.0);
    let per_user = r["per_user"].as_array().unwrap();
    assert_eq!(per_user.len(), 6);
    for u in per_user {
        assert_eq!(u["auc"].is_null(), u["surrogate_loss"].is_null());
    }
}

#[test]
fn evaluate_zero_model_gives_one_half() {
    let tmp = TempDir::new().unwrap();
    simulate_small(tmp.path(), "21");
    let test = dataio::read_dataset(tmp.path().join("test.csv")).unwrap();
    let zeros = ModelFile::new(ModelParams::zeros(test.dim(), test.user_ids()));
    let model = tmp.path().join("zeros.json");
    dataio::write_model(&zeros, &model).unwrap();
    let report = tmp.path().join("report.json");
    let o = aucmtl(&[
        "evaluate", "--data", p(&tmp.path().join("test.csv")), "--model", p(&model), "--out",
        p(&report),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = read_report(&report);
    assert_eq!(r["macro_auc"]["mean"].as_f64(), Some(0.5));
    assert_eq!(r["macro_auc"]["std"].as_f64(), Some(0.0));
    // All scores are zero, so every pair contributes (1 - 0)^2 / 2.
    for u in r["per_user"].as_array().unwrap() {
        if let Some(loss) = u["surrogate_loss"].as_f64() {
            assert!((loss - 0.5).abs() < 1e-12, "{loss}");
        }
    }
}

#[test]
fn evaluate_flags_users_missing_from_model() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("d.csv");
    fs::write(&data, "user_id,label,f1\nknown,1,2\nknown,-1,1\nstranger,1,1\nstranger,-1,2\n").unwrap();
    let params = ModelParams::new(
        nalgebra_vec(&[1.0]),
        nalgebra_mat(&[0.0]),
        nalgebra_mat(&[0.0]),
        vec!["known".into()],
    )
    .unwrap();
    let model = tmp.path().join("m.json");
    dataio::write_model(&ModelFile::new(params), &model).unwrap();
    let report = tmp.path().join("r.json");
    let o = aucmtl(&["evaluate", "--data", p(&data), "--model", p(&model), "--out", p(&report)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("stranger"));
    let r = read_report(&report);
    assert_eq!(r["unknown_users"], serde_json::json!(["stranger"]));
    let per_user = r["per_user"].as_array().unwrap();
    assert_eq!(per_user[0]["fallback"], Value::Bool(false));
    assert_eq!(per_user[1]["fallback"], Value::Bool(true));
    assert_eq!(per_user[1]["auc"].as_f64(), Some(0.0));
}

fn nalgebra_vec(v: &[f64]) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_column_slice(v)
}

fn nalgebra_mat(v: &[f64]) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_column_slice(v.len(), 1, v)
}

#[test]
fn evaluate_empty_file_is_an_error() {
    let tmp = TempDir::new().unwrap();
    simulate_small(tmp.path(), "21");
    let empty = tmp.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    let o = aucmtl(&[
        "evaluate", "--data", p(&empty), "--model", p(&tmp.path().join("truth_model.json")),
        "--out", p(&tmp.path().join("r.json")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error:"));
}

#[test]
fn bench_eval_writes_nan_above_cap() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("bench.csv");
    let o = aucmtl(&[
        "bench-eval", "--sizes", "40,80", "--dim", "4", "--repeats", "3", "--naive-cap", "50",
        "--out", p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0], ["n", "t_fast", "t_naive", "ratio"]);
    assert_eq!(rows[1][0], "40");
    assert!(rows[1][2].parse::<f64>().unwrap() > 0.0);
    assert_eq!(rows[2][0], "80");
    assert_eq!(&rows[2][2..], ["nan", "nan"]);
}

#[test]
fn help_lists_every_flag_with_defaults() {
    let o = aucmtl(&["fit", "--help"]);
    assert!(o.status.success());
    let help = stdout(&o);
    for flag in [
        "--data", "--lambda1", "--lambda2", "--lambda3", "--kappa", "--rho0", "--alpha",
        "--max-iters", "--tol", "--out", "--trace", "--init", "--threads",
    ] {
        assert!(help.contains(flag), "missing {flag}");
    }
    for default in ["[default: 0.01]", "[default: 1]", "[default: 2]", "[default: 500]", "[default: 0.000001]"] {
        assert!(help.contains(default), "missing {default} in\n{help}");
    }
    assert!(help.contains("AUCMTL_THREADS"));

    let help = stdout(&aucmtl(&["simulate", "--help"]));
    for flag in ["--users", "--samples", "--dim", "--top-pos", "--noise-sd", "--seed", "--paper-scale"] {
        assert!(help.contains(flag), "missing {flag}");
    }
    let help = stdout(&aucmtl(&["bench-eval", "--help"]));
    for flag in ["--sizes", "--dim", "--repeats", "--naive-cap", "--out"] {
        assert!(help.contains(flag), "missing {flag}");
    }
}

#[test]
fn thread_count_from_environment() {
    let tmp = TempDir::new().unwrap();
    let sim = |dir: &Path, threads: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_aucmtl"))
            .args(["simulate", "--out", p(dir), "--users", "4", "--samples", "50", "--dim", "5", "--top-pos", "8"])
            .env("AUCMTL_THREADS", threads)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
    };
    sim(&tmp.path().join("one"), "1");
    sim(&tmp.path().join("many"), "4");
    assert_eq!(
        fs::read(tmp.path().join("one/train.csv")).unwrap(),
        fs::read(tmp.path().join("many/train.csv")).unwrap()
    );
}
