use std::path::Path;
use std::process::{Command, Output};

use noisy_gpr::data::read_dataset;
use noisy_gpr::report::ReportDocument;
use tempfile::TempDir;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_noisy-gpr"))
        .args(args)
        .current_dir(dir)
        .env_remove("NOISY_GPR_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn example1(dir: &Path) {
    let out = run(dir, &["gen", "--example1", "--seed", "0", "--out", "d.csv"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gen_example1_writes_24_rows_with_10_corrupted() {
    let dir = TempDir::new().unwrap();
    example1(dir.path());
    let data = read_dataset(&dir.path().join("d.csv")).unwrap();
    assert_eq!(data.len(), 24);
    assert_eq!(data.truth().unwrap().n_corrupted(), 10);
}

#[test]
fn gen_example1_rejects_a_noise_rate() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["gen", "--example1", "--rate", "0.5", "--out", "d.csv"]);
    assert_eq!(code(&out), 1);
    assert!(!dir.path().join("d.csv").exists());
}

#[test]
fn gen_grid_rounds_the_corrupted_count() {
    let dir = TempDir::new().unwrap();
    let out = run(
        dir.path(),
        &["gen", "--grid", "--n", "30", "--rate", "0.1", "--level", "0.5", "--seed", "7", "--out", "g.csv"],
    );
    assert_eq!(code(&out), 0);
    let data = read_dataset(&dir.path().join("g.csv")).unwrap();
    assert_eq!(data.truth().unwrap().n_corrupted(), 3);
}

#[test]
fn usage_and_io_errors_have_distinct_codes() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&run(dir.path(), &["fit", "--bogus-flag"])), 1);
    assert_eq!(code(&run(dir.path(), &["fit", "--data", "missing.csv", "--out", "r.json"])), 2);
    std::fs::write(dir.path().join("bad.csv"), "x0,y\n0.1,NaN\n").unwrap();
    let out = run(dir.path(), &["fit", "--data", "bad.csv", "--out", "r.json"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.csv"));
    assert_eq!(code(&run(dir.path(), &["--help"])), 0);
}

#[test]
fn fit_writes_a_monotone_report() {
    let dir = TempDir::new().unwrap();
    example1(dir.path());
    let out = run(dir.path(), &["fit", "--data", "d.csv", "--out", "r.json"]);
    assert_eq!(code(&out), 0);
    let report = ReportDocument::read(&dir.path().join("r.json")).unwrap();
    assert_eq!(report.schema_version, 1);
    assert_eq!(report.command, "fit");
    assert_eq!(report.per_label.len(), 24);
    assert!(report.trace.monotone && report.trace.converged);
    assert!(report.per_label.iter().all(|l| l.sigma >= 0.0 && l.corrupted.is_some()));
    assert_eq!(report.config["mode"], "full");
}

#[test]
fn unconverged_fit_exits_with_its_own_code() {
    let dir = TempDir::new().unwrap();
    example1(dir.path());
    let out = run(dir.path(), &["fit", "--data", "d.csv", "--max-iters", "2", "--out", "r.json"]);
    assert_eq!(code(&out), 4);
    let report = ReportDocument::read(&dir.path().join("r.json")).unwrap();
    assert!(!report.trace.converged);
}

#[test]
fn basic_mode_broadcasts_its_scalar() {
    let dir = TempDir::new().unwrap();
    example1(dir.path());
    assert_eq!(code(&run(dir.path(), &["fit", "--data", "d.csv", "--mode", "basic", "--out", "r.json"])), 0);
    let report = ReportDocument::read(&dir.path().join("r.json")).unwrap();
    let s = report.model.sigma_scalar.expect("scalar noise");
    assert_eq!(report.per_label.len(), 24);
    assert!(report.per_label.iter().all(|l| l.sigma == s));
}

#[test]
fn penalty_is_echoed() {
    let dir = TempDir::new().unwrap();
    example1(dir.path());
    let out = run(dir.path(), &["fit", "--data", "d.csv", "--lambda", "0.5", "--p", "1", "--out", "r.json"]);
    assert_eq!(code(&out), 0);
    let report = ReportDocument::read(&dir.path().join("r.json")).unwrap();
    assert_eq!(report.model.penalty_lambda, 0.5);
    assert_eq!(report.model.penalty_p, 1.0);
    assert_eq!(report.config["lambda"], "0.5");
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let dir = TempDir::new().unwrap();
    example1(dir.path());
    std::fs::write(dir.path().join("run.cfg"), "# defaults\nmode = basic\nmax_iters = 500\n").unwrap();
    let out = run(dir.path(), &["fit", "--config", "run.cfg", "--data", "d.csv", "--max-iters", "700", "--out", "r.json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = ReportDocument::read(&dir.path().join("r.json")).unwrap();
    assert_eq!(report.config["mode"], "basic");
    assert_eq!(report.config["max-iters"], "700");
    assert_eq!(report.config["tol-sigma"], "0.00000001");
}

#[test]
fn unknown_config_key_is_an_error() {
    let dir = TempDir::new().unwrap();
    example1(dir.path());
    std::fs::write(dir.path().join("run.cfg"), "mode=full\nbogus=1\n").unwrap();
    let out = run(dir.path(), &["fit", "--config", "run.cfg", "--data", "d.csv", "--out", "r.json"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn detect_scores_against_ground_truth() {
    let dir = TempDir::new().unwrap();
    example1(dir.path());
    assert_eq!(code(&run(dir.path(), &["fit", "--data", "d.csv", "--out", "r.json"])), 0);
    assert_eq!(code(&run(dir.path(), &["detect", "--report", "r.json", "--out", "det.json"])), 0);
    let report = ReportDocument::read(&dir.path().join("det.json")).unwrap();
    let metrics = report.metrics.expect("truth columns give metrics");
    let auc = metrics.auc.value.expect("defined auc");
    assert!((0.0..=1.0).contains(&auc));
    let levels: Vec<f64> = metrics.precision_at_recall.iter().map(|p| p.recall_level).collect();
    assert_eq!(levels, vec![0.70, 0.95]);
}

#[test]
fn detect_without_truth_only_flags() {
    let dir = TempDir::new().unwrap();
    example1(dir.path());
    let text = std::fs::read_to_string(dir.path().join("d.csv")).unwrap();
    let stripped: String = text
        .lines()
        .map(|l| l.split(',').take(2).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    std::fs::write(dir.path().join("bare.csv"), stripped).unwrap();
    let out = run(dir.path(), &["detect", "--data", "bare.csv", "--threshold", "0.5", "--out", "det.json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = ReportDocument::read(&dir.path().join("det.json")).unwrap();
    assert!(report.metrics.is_none());
    assert_eq!(report.threshold, 0.5);
    assert_eq!(report.threshold_rule, "explicit");
    for l in &report.per_label {
        assert_eq!(l.flag, l.sigma > 0.5);
        assert!(l.corrupted.is_none());
    }
}

#[test]
fn benchmark_grid_shape_and_undefined_metrics() {
    let dir = TempDir::new().unwrap();
    let out = run(
        dir.path(),
        &["benchmark", "--gp", "--n", "30", "--rates", "0.0,0.1,0.3", "--levels", "0.5,1.0", "--seed", "2", "--out", "b.csv"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("b.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "rate,level,r2,auc,p_at_70,p_at_95,mae_plain,mae_basic,mae_full,error");
    assert_eq!(lines.len(), 1 + 6);
    for row in &lines[1..] {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells.len(), 10);
        for mae in &cells[6..9] {
            assert!(mae.parse::<f64>().is_ok(), "{row}");
        }
        if cells[0].parse::<f64>().unwrap() == 0.0 {
            assert_eq!(&cells[2..6], &["NA"; 4], "{row}");
        } else {
            assert!(cells[3].parse::<f64>().is_ok(), "{row}");
        }
    }
}

#[test]
fn compare_optimizers_traces() {
    let dir = TempDir::new().unwrap();
    example1(dir.path());
    run(dir.path(), &["compare-optimizers", "--data", "d.csv", "--max-iters", "300", "--out", "t.csv"]);
    let text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("optimizer,iter,nll,evals"));
    let mult: Vec<(usize, f64, usize)> = lines
        .filter(|l| l.starts_with("multiplicative,"))
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            (c[1].parse().unwrap(), c[2].parse().unwrap(), c[3].parse().unwrap())
        })
        .collect();
    assert!(mult.len() > 1);
    assert!(mult.windows(2).all(|w| w[1].1 <= w[0].1));
    assert!(mult.iter().all(|&(iter, _, evals)| evals == iter + 1));
    assert!(text.lines().any(|l| l.starts_with("projected_gradient,")));
}
