use std::path::Path;
use std::process::{Command, Output};

fn fxam(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fxam"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].parse().unwrap()).collect()
}

fn generated(dir: &Path) {
    let out = fxam(
        dir,
        &[
            "generate", "--out", "d.csv", "--truth-out", "truth.csv", "--records", "600", "--features", "4",
            "--temporal", "--seasonality-ratio", "0.05", "--desk-scale", "--data-seed", "5",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_predict_decompose_export() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generated(d);
    let out = fxam(d, &["train", "--data", "d.csv", "--schema", "d.csv.schema.json", "--model-out", "m.json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    // prediction input without the response column
    let mut r = csv::Reader::from_path(d.join("d.csv")).unwrap();
    let headers = r.headers().unwrap().clone();
    let keep: Vec<usize> = (0..headers.len()).filter(|&i| &headers[i] != "y").collect();
    let mut w = csv::Writer::from_path(d.join("x.csv")).unwrap();
    w.write_record(keep.iter().map(|&i| &headers[i])).unwrap();
    for rec in r.records() {
        let rec = rec.unwrap();
        w.write_record(keep.iter().map(|&i| &rec[i])).unwrap();
    }
    w.flush().unwrap();

    let out = fxam(d, &["predict", "--model", "m.json", "--data", "x.csv", "--schema", "d.csv.schema.json", "--out", "p.csv"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = fxam(
        d,
        &["decompose", "--model", "m.json", "--data", "d.csv", "--schema", "d.csv.schema.json", "--out", "parts.csv"],
    );
    assert_eq!(code(&out), 0);
    let pred = column(&d.join("p.csv"), "prediction");
    let total = column(&d.join("parts.csv"), "prediction");
    assert_eq!(pred.len(), 600);
    for (a, b) in pred.iter().zip(&total) {
        assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }
    let seasonal = column(&d.join("parts.csv"), "t.seasonal");
    assert!(seasonal.iter().any(|v| v.abs() > 0.0));

    let out = fxam(d, &["export-contributions", "--model", "m.json", "--out", "c.csv"]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(d.join("c.csv")).unwrap();
    assert!(text.starts_with("kind,feature,phase,key,value\nintercept,"));
    assert!(text.contains("\nseasonal,t,9,"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generated(d);
    assert_eq!(code(&fxam(d, &["train", "--bogus"])), 2);
    assert_eq!(code(&fxam(d, &["sweep", "--experiment", "nope", "--out", "s.csv"])), 2);
    assert_eq!(
        code(&fxam(d, &["train", "--data", "missing.csv", "--schema", "d.csv.schema.json", "--model-out", "m.json"])),
        3
    );
    let text = std::fs::read_to_string(d.join("d.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let rest = lines[2].split_once(',').unwrap().1.to_string();
    lines[2] = format!("oops,{rest}");
    std::fs::write(d.join("bad.csv"), lines.join("\n")).unwrap();
    let out = fxam(d, &["train", "--data", "bad.csv", "--schema", "d.csv.schema.json", "--model-out", "m.json"]);
    assert_eq!(code(&out), 3);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3") && err.contains("`x0`"), "{err}");

    let out = fxam(
        d,
        &["train", "--data", "d.csv", "--schema", "d.csv.schema.json", "--model-out", "m.json", "--max-cycles", "1"],
    );
    assert_eq!(code(&out), 4);
    assert!(d.join("m.json").exists(), "the last iterate is still written");
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generated(d);
    std::fs::write(d.join("cfg.json"), r#"{"train": {"max_cycles": 1}}"#).unwrap();
    let base = ["train", "--data", "d.csv", "--schema", "d.csv.schema.json", "--model-out", "m.json", "--config", "cfg.json"];
    assert_eq!(code(&fxam(d, &base)), 4);
    let mut args = base.to_vec();
    args.extend(["--max-cycles", "50"]);
    assert_eq!(code(&fxam(d, &args)), 0);

    std::fs::write(d.join("typo.json"), r#"{"train": {"max_cycle": 1}}"#).unwrap();
    let mut args = base.to_vec();
    args[8] = "typo.json";
    assert_eq!(code(&fxam(d, &args)), 2);
}

#[test]
fn evaluate_writes_the_fold_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generated(d);
    let run = |report: &str| {
        let out = fxam(
            d,
            &["evaluate", "--data", "d.csv", "--schema", "d.csv.schema.json", "--report", report, "--fold-seed", "3"],
        );
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    let summary = run("r1.csv");
    assert!(summary.contains("mean rmse"));
    run("r2.csv");
    let text = std::fs::read_to_string(d.join("r1.csv")).unwrap();
    assert!(text.starts_with("fold,rmse,train_seconds\n"));
    assert_eq!(text.lines().count(), 6);
    // everything but the timings is reproducible
    assert_eq!(column(&d.join("r1.csv"), "rmse"), column(&d.join("r2.csv"), "rmse"));

    let out = fxam(d, &["evaluate", "--records", "300", "--features", "20", "--folds", "3", "--desk-scale"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sweep_writes_plot_ready_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = fxam(
        d,
        &[
            "sweep", "--experiment", "varySeasonality", "--record-scale", "0.004", "--folds", "2", "--ablation", "none",
            "--ablation", "no-temporal-stage", "--out", "s.csv",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mut r = csv::Reader::from_path(d.join("s.csv")).unwrap();
    let headers: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(headers[0], "experiment");
    assert!(headers.contains(&"mean_rmse".to_string()));
    assert_eq!(r.records().count(), 10);
}
