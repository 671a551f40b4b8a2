//! End-to-end exercises of every subcommand against the real binary.

use std::path::{Path, PathBuf};
use std::process::Command;

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_uavtraj"))
}

struct TempDir(PathBuf);

impl TempDir {
    fn new(tag: &str) -> Self {
        let dir = std::env::temp_dir().join(format!(
            "uavtraj-cli-{tag}-{}-{}",
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .unwrap()
                .as_nanos()
        ));
        std::fs::create_dir_all(&dir).unwrap();
        Self(dir)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }
}

impl Drop for TempDir {
    fn drop(&mut self) {
        std::fs::remove_dir_all(&self.0).ok();
    }
}

fn run_ok(cmd: &mut Command) -> String {
    let output = cmd.output().expect("binary runs");
    assert!(
        output.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn generate_small(dir: &TempDir, name: &str, count: usize, seed: u64) -> PathBuf {
    let out = dir.path(name);
    run_ok(binary().args([
        "generate",
        "--seed",
        &seed.to_string(),
        "--count",
        &count.to_string(),
        "--out",
        out.to_str().unwrap(),
    ]));
    out
}

#[test]
fn generate_is_reproducible_and_respects_count() {
    let dir = TempDir::new("generate");
    let a = generate_small(&dir, "a.jsonl", 5, 70);
    let b = generate_small(&dir, "b.jsonl", 5, 70);
    let bytes_a = std::fs::read(&a).unwrap();
    let bytes_b = std::fs::read(&b).unwrap();
    assert_eq!(bytes_a, bytes_b);
    assert_eq!(bytes_a.iter().filter(|&&c| c == b'\n').count(), 5);

    let c = generate_small(&dir, "c.jsonl", 5, 71);
    assert_ne!(bytes_a, std::fs::read(&c).unwrap());
}

#[test]
fn generate_accepts_config_file_and_threads() {
    let dir = TempDir::new("config");
    let config = dir.path("gen.cfg");
    std::fs::write(&config, "track_count = 4\nseed = 9\nspeed_min = 2.0\n").unwrap();
    let serial = dir.path("serial.jsonl");
    run_ok(binary().args([
        "generate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        serial.to_str().unwrap(),
        "--dump-rejections",
    ]));
    let parallel = dir.path("parallel.jsonl");
    run_ok(binary().args([
        "generate",
        "--config",
        config.to_str().unwrap(),
        "--threads",
        "3",
        "--out",
        parallel.to_str().unwrap(),
    ]));
    assert_eq!(
        std::fs::read(&serial).unwrap(),
        std::fs::read(&parallel).unwrap()
    );
}

#[test]
fn dump_qp_writes_plaintext_matrices() {
    let dir = TempDir::new("dumpqp");
    let qp_dir = dir.path("qp");
    run_ok(binary().args([
        "generate",
        "--seed",
        "3",
        "--count",
        "1",
        "--out",
        dir.path("d.jsonl").to_str().unwrap(),
        "--dump-qp",
        qp_dir.to_str().unwrap(),
    ]));
    for name in ["Q.txt", "A.txt", "b.txt"] {
        let text = std::fs::read_to_string(qp_dir.join(name)).unwrap();
        assert!(!text.trim().is_empty(), "{name} empty");
        let first_row_cols = text.lines().next().unwrap().split_whitespace().count();
        assert!(first_row_cols >= 1);
        for token in text.split_whitespace().take(64) {
            token.parse::<f64>().unwrap_or_else(|_| panic!("{name}: bad number {token}"));
        }
    }
}

#[test]
fn predict_kalman_and_linear_write_forecasts() {
    let dir = TempDir::new("predict");
    let data = generate_small(&dir, "d.jsonl", 3, 42);
    for method in ["kalman", "linear"] {
        let out = dir.path(&format!("{method}.jsonl"));
        run_ok(binary().args([
            "predict",
            "--method",
            method,
            "--obs",
            "8",
            "--horizon",
            "12",
            "--in",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--stride",
            "4",
        ]));
        let text = std::fs::read_to_string(&out).unwrap();
        assert!(!text.trim().is_empty());
        let record: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(record["method"], method);
        assert_eq!(record["horizon"], 12);
        assert_eq!(record["mean"].as_array().unwrap().len(), 12);
    }
}

#[test]
fn train_then_predict_and_evaluate_with_mdn() {
    let dir = TempDir::new("train");
    let data = generate_small(&dir, "d.jsonl", 6, 5);
    let config = dir.path("train.cfg");
    std::fs::write(
        &config,
        "epochs = 3\nbatch_size = 16\nembed_dim = 8\nhidden_dim = 8\nwindow_stride = 6\n",
    )
    .unwrap();
    let model = dir.path("model.json");
    run_ok(binary().args([
        "train",
        "--data",
        data.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "1",
        "--out",
        model.to_str().unwrap(),
    ]));
    assert!(model.is_file());

    let forecasts = dir.path("mdn.jsonl");
    run_ok(binary().args([
        "predict",
        "--method",
        "mdn",
        "--model",
        model.to_str().unwrap(),
        "--horizon",
        "10",
        "--in",
        data.to_str().unwrap(),
        "--out",
        forecasts.to_str().unwrap(),
        "--stride",
        "8",
    ]));
    assert!(!std::fs::read_to_string(&forecasts).unwrap().trim().is_empty());

    let report = dir.path("report.csv");
    let table = run_ok(binary().args([
        "evaluate",
        "--data",
        data.to_str().unwrap(),
        "--methods",
        "mdn,kalman,linear",
        "--model",
        model.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]));
    assert!(table.contains("| Approach |"));
    let csv = std::fs::read_to_string(&report).unwrap();
    assert!(csv.contains("method,horizon,fde_mean_px,fde_std_px,windows"));
    // 3 methods x 3 horizons.
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count() - 1, 9);
}

#[test]
fn evaluate_reports_are_deterministic() {
    let dir = TempDir::new("evaldet");
    let data = generate_small(&dir, "d.jsonl", 5, 33);
    let args = |report: &Path| {
        vec![
            "evaluate".to_string(),
            "--data".into(),
            data.to_str().unwrap().into(),
            "--methods".into(),
            "kalman,linear".into(),
            "--noise-sigma".into(),
            "1.5".into(),
            "--noise-seed".into(),
            "12".into(),
            "--report".into(),
            report.to_str().unwrap().into(),
        ]
    };
    let r1 = dir.path("r1.csv");
    let r2 = dir.path("r2.csv");
    run_ok(binary().args(args(&r1)));
    run_ok(binary().args(args(&r2)));
    assert_eq!(std::fs::read(&r1).unwrap(), std::fs::read(&r2).unwrap());
}

#[test]
fn evaluate_ingests_annotation_files() {
    let dir = TempDir::new("annot");
    // Two synthetic "annotation" sequences with a gap in one of them.
    let exist: Vec<i32> = (0..40).map(|i| if i == 25 { 0 } else { 1 }).collect();
    let rects: Vec<serde_json::Value> = (0..40)
        .map(|i| {
            if i == 25 {
                serde_json::json!([])
            } else {
                serde_json::json!([100.0 + 3.0 * i as f64, 200.0 - i as f64, 20.0, 10.0])
            }
        })
        .collect();
    let seq = serde_json::json!({ "exist": exist, "gt_rect": rects });
    let ann_dir = dir.path("sequences");
    std::fs::create_dir_all(&ann_dir).unwrap();
    std::fs::write(ann_dir.join("IR_0001.json"), seq.to_string()).unwrap();
    std::fs::write(ann_dir.join("IR_0002.json"), seq.to_string()).unwrap();

    let report = dir.path("ir.csv");
    run_ok(binary().args([
        "evaluate",
        "--data",
        ann_dir.to_str().unwrap(),
        "--methods",
        "kalman,linear",
        "--modality",
        "ir",
        "--report",
        report.to_str().unwrap(),
    ]));
    let csv = std::fs::read_to_string(&report).unwrap();
    assert!(csv.contains("kalman,8,"));
    assert!(csv.contains("linear,12,"));

    // Same sequences under remapped field names, ingested via --schema-map.
    let remapped = serde_json::json!({
        "visible": (0..40).map(|_| 1).collect::<Vec<i32>>(),
        "boxes": (0..40)
            .map(|i| serde_json::json!([50.0 + 2.0 * i as f64, 90.0, 12.0, 8.0]))
            .collect::<Vec<serde_json::Value>>(),
    });
    let alt_dir = dir.path("remapped");
    std::fs::create_dir_all(&alt_dir).unwrap();
    std::fs::write(alt_dir.join("EO_07.json"), remapped.to_string()).unwrap();
    let mapping = dir.path("fields.json");
    std::fs::write(
        &mapping,
        r#"{"exist_field": "visible", "rect_field": "boxes"}"#,
    )
    .unwrap();
    let report2 = dir.path("eo.csv");
    run_ok(binary().args([
        "evaluate",
        "--data",
        alt_dir.to_str().unwrap(),
        "--methods",
        "linear",
        "--schema-map",
        mapping.to_str().unwrap(),
        "--report",
        report2.to_str().unwrap(),
    ]));
    assert!(std::fs::read_to_string(&report2)
        .unwrap()
        .contains("linear,12,"));
}

#[test]
fn export_report_renders_markdown_and_csv() {
    let dir = TempDir::new("export");
    let data = generate_small(&dir, "d.jsonl", 4, 8);
    let report = dir.path("report.csv");
    run_ok(binary().args([
        "evaluate",
        "--data",
        data.to_str().unwrap(),
        "--methods",
        "linear",
        "--report",
        report.to_str().unwrap(),
    ]));

    let md = run_ok(binary().args([
        "export-report",
        "--in",
        report.to_str().unwrap(),
        "--format",
        "md",
    ]));
    assert!(md.contains("| Approach |") && md.contains("8/12"));

    let csv_out = dir.path("again.csv");
    run_ok(binary().args([
        "export-report",
        "--in",
        report.to_str().unwrap(),
        "--format",
        "csv",
        "--out",
        csv_out.to_str().unwrap(),
    ]));
    let text = std::fs::read_to_string(&csv_out).unwrap();
    assert!(text.contains("method,horizon,fde_mean_px,fde_std_px,windows"));
}
