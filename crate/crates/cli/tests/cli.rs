use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use vcnet_core::data::{generate_synthetic, write_idx, write_lightfield, LightFieldSample, SyntheticSpec};
use vcnet_core::Tensor;

fn vcnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vcnet")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest_value(dir: &Path, key: &str) -> String {
    let text = fs::read_to_string(dir.join("manifest.txt")).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing from manifest"))
        .to_string()
}

fn train_synthetic(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--data-synthetic",
        "4",
        "--seed",
        "3",
        "--deterministic",
        "--out",
        out.to_str().unwrap(),
    ];
    if !extra.contains(&"--epochs") {
        args.extend(["--epochs", "2"]);
    }
    args.extend_from_slice(extra);
    vcnet(&args)
}

#[test]
fn inspect_reports_budget_and_order() {
    let o = vcnet(&["inspect", "--variant", "mini"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let value = |key: &str| -> String {
        text.lines()
            .find_map(|l| l.strip_prefix(&format!("{key}=")))
            .unwrap()
            .to_string()
    };
    let total: usize = value("total_parameters").parse().unwrap();
    assert!(total <= 12_000);
    assert!(value("execution_order").starts_with("V1,"));
    let block_sum: usize = text
        .lines()
        .skip_while(|l| *l != "parameters:")
        .skip(1)
        .take_while(|l| l.starts_with("  "))
        .map(|l| l.split_whitespace().last().unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(block_sum, total);
    let bytes: usize = value("serialized_bytes").parse().unwrap();
    assert!(bytes <= 50_000);
}

#[test]
fn train_is_reproducible_and_eval_matches_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = train_synthetic(&a, &["--lambda", "0.25"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(train_synthetic(&b, &["--lambda", "0.25"]).status.success());

    let csv = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(csv, fs::read_to_string(b.join("metrics.csv")).unwrap());
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,train_ce,train_pred_penalty,train_acc,val_acc,wall_seconds");
    assert_eq!(lines.len(), 3);
    for row in &lines[1..] {
        let f: Vec<f64> = row.split(',').map(|v| v.parse().unwrap()).collect();
        assert!((f[1] - (f[2] + 0.25 * f[3])).abs() < 1e-9, "{row}");
        assert_eq!(f[6], 0.0);
    }
    assert_eq!(manifest_value(&a, "lambda"), "0.25");

    let ckpt = a.join("model.vcn");
    let o = vcnet(&["eval", "--data-synthetic", "4", "--seed", "3", "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let acc = stdout(&o)
        .lines()
        .find_map(|l| l.strip_prefix("accuracy=").map(str::to_string))
        .unwrap();
    assert_eq!(acc, manifest_value(&a, "final_val_acc"));
}

#[test]
fn eval_names_checkpoint_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.vcn");
    let o = vcnet(&["eval", "--data-synthetic", "4", "--seed", "1", "--checkpoint", missing.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("not found"), "{}", stderr(&o));

    let run = dir.path().join("run");
    assert!(train_synthetic(&run, &["--epochs", "1"]).status.success());
    let ckpt = run.join("model.vcn");
    let mut bytes = fs::read(&ckpt).unwrap();
    let corrupt = dir.path().join("corrupt.vcn");
    bytes[0] = b'X';
    fs::write(&corrupt, &bytes).unwrap();
    let o = vcnet(&["eval", "--data-synthetic", "4", "--seed", "3", "--checkpoint", corrupt.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("magic"), "{}", stderr(&o));

    let o = vcnet(&[
        "eval",
        "--data-synthetic",
        "4",
        "--seed",
        "3",
        "--variant",
        "full",
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("checkpoint does not match"), "{}", stderr(&o));
}

#[test]
fn gradcheck_passes_and_catches_injected_fault() {
    let o = vcnet(&["gradcheck"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("block/cbam"));
    let o = vcnet(&["gradcheck", "--inject-fault", "sigmoid"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("exceeded tolerance at"));
}

#[test]
fn argument_contract() {
    assert!(!vcnet(&["train", "--data-synthetic", "4"]).status.success(), "seed is mandatory");
    let both = vcnet(&["train", "--data-synthetic", "4", "--data-lf", "x", "--grid", "1", "1", "--seed", "1"]);
    assert!(!both.status.success());
    let no_grid = vcnet(&["train", "--data-lf", "x", "--seed", "1"]);
    assert!(!no_grid.status.success());
}

#[test]
fn trains_from_idx_and_lightfield_sources() {
    let dir = tempfile::tempdir().unwrap();
    let (samples, _) = generate_synthetic(&SyntheticSpec::new(2, 0)).unwrap();
    let (ip, lp) = (dir.path().join("img.idx"), dir.path().join("lab.idx"));
    write_idx(&ip, &lp, &samples).unwrap();
    let out = dir.path().join("idx_run");
    let o = vcnet(&[
        "train",
        "--data-idx",
        ip.to_str().unwrap(),
        lp.to_str().unwrap(),
        "--epochs",
        "1",
        "--seed",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(manifest_value(&out, "classes"), "10");

    let lf = dir.path().join("lf");
    let fixture: Vec<LightFieldSample> = (0..20)
        .map(|i| LightFieldSample {
            views: Tensor::full(&[4, 8, 8], (i % 2) as f64 * 0.5 + 0.1),
            label: i % 2,
            class_name: ["dark", "light"][i % 2].to_string(),
            grid: (2, 2),
        })
        .collect();
    write_lightfield(&lf, &fixture).unwrap();
    let out = dir.path().join("lf_run");
    let o = vcnet(&[
        "train",
        "--data-lf",
        lf.to_str().unwrap(),
        "--grid",
        "2",
        "2",
        "--epochs",
        "1",
        "--seed",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(manifest_value(&out, "input_shape"), "[4, 8, 8]");
    assert_eq!(manifest_value(&out, "val_samples"), "2");
}
