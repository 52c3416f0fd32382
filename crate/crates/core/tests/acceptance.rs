//! End-to-end acceptance run: one `PASS`/`FAIL` line per criterion.
//!
//! Positional arguments filter criteria by substring, e.g.
//! `cargo test --test acceptance -- overfit`. The optional IDX stretch run
//! reads `VCNET_IDX_DIR`, a directory holding `train-images-idx3-ubyte`,
//! `train-labels-idx1-ubyte`, `test-images-idx3-ubyte` and
//! `test-labels-idx1-ubyte`.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vcnet_core::blocks::{predictive_error, RecurrentBlock};
use vcnet_core::data::lightfield::view_file_name;
use vcnet_core::data::{
    generate_synthetic, load_idx, load_lightfield, write_lightfield, LabeledImage, LightFieldSample, SyntheticSpec,
};
use vcnet_core::gradcheck::{check, run_suite, TOLERANCE};
use vcnet_core::graph::{build_model, checkpoint, ModelConfig, Variant, MINI_PARAMETER_BUDGET};
use vcnet_core::train::{
    calibrate, composite_loss, evaluate, fit, train_epoch, training_rng, AdamState, AugmentationConfig, EpochRecord, TrainConfig,
};
use vcnet_core::{ParamStore, Result, Tape, Tensor};

const CHECKPOINT_LIMIT_BYTES: u64 = 50_000;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn within(elapsed: Duration, minutes: u64) -> bool {
    elapsed <= Duration::from_secs(60 * minutes)
}

fn gradient_suite() -> Result<Outcome> {
    let start = Instant::now();
    let reports = run_suite(None)?;
    let elapsed = start.elapsed();
    let worst = reports
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .expect("suite is not empty");
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    Ok(verdict(
        failed.is_empty() && within(elapsed, 5),
        format!(
            "{} cases, worst {:.2e} at {} (limit {TOLERANCE:e}), failed {failed:?}, {:.1}s (limit 300s)",
            reports.len(),
            worst.max_rel_error,
            worst.name,
            elapsed.as_secs_f64()
        ),
    ))
}

fn oracle_equivalence() -> Result<Outcome> {
    let conv = conv_sweep(200, 200);
    let depthwise = depthwise_sweep(201, 200);
    let pool = pool_sweep(202, 200);
    Ok(verdict(
        conv.max(depthwise).max(pool) <= 1e-12,
        format!("200 shapes each: conv2d {conv:.1e}, depthwise_separable {depthwise:.1e}, pool {pool:.1e} (limit 1e-12)"),
    ))
}

fn top_down_gradient(lambda: f64) -> Result<f64> {
    let g = build_model(&ModelConfig::mini(10), 21)?;
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = Tensor::uniform(&[4, 1, 32, 32], 0.0, 1.0, &mut rng);
    let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..10)).collect();
    let mut t = Tape::new();
    let p = g.bind(&mut t);
    let xv = t.constant(x);
    let out = g.forward(&mut t, &p, xv)?;
    let loss = composite_loss(&mut t, &out, &labels, lambda)?;
    t.backward(loss.total)?;
    let grads = p.grads(&t);
    Ok(g.top_down()
        .projection
        .param_ids()
        .iter()
        .map(|id| grads[id.index()].max_abs())
        .fold(0.0, f64::max))
}

fn predictive_coding() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (mut min_eps, mut max_same) = (f64::INFINITY, 0.0f64);
    for _ in 0..1000 {
        let shape = [rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..6), rng.gen_range(1..6)];
        let a = Tensor::uniform(&shape, -2.0, 2.0, &mut rng);
        let b = Tensor::uniform(&shape, -2.0, 2.0, &mut rng);
        let mut t = Tape::new();
        let (av, bv, a2) = (t.constant(a.clone()), t.constant(b), t.constant(a));
        let eps = predictive_error(&mut t, av, bv)?.epsilon;
        min_eps = t.value(eps).data().iter().copied().fold(min_eps, f64::min);
        let same = predictive_error(&mut t, av, a2)?.epsilon;
        max_same = max_same.max(t.value(same).max_abs());
    }
    let (off, on) = (top_down_gradient(0.0)?, top_down_gradient(0.1)?);
    Ok(verdict(
        min_eps >= 0.0 && max_same == 0.0 && off == 0.0 && on > 0.0,
        format!(
            "1000 pairs: min eps {min_eps}, max eps on equal inputs {max_same}; top-down |grad| {off} at lambda 0, {on:.2e} at lambda 0.1"
        ),
    ))
}

fn recurrent_contract() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let mut store = ParamStore::new();
    let block = RecurrentBlock::new(&mut store, "r", 3, 3, &mut rng)?;
    let z0 = Tensor::uniform(&[1, 3, 5, 5], 0.0, 1.0, &mut rng);
    let run = |store: &ParamStore| -> Result<Tensor> {
        let mut t = Tape::new();
        let p = store.bind(&mut t);
        let x = t.constant(z0.clone());
        let y = block.forward(&mut t, &p, x)?;
        Ok(t.value(y).clone())
    };
    let mut fixed = store.clone();
    fixed.get_mut(block.conv.weight).data_mut().fill(0.0);
    if let Some(b) = block.conv.bias {
        fixed.get_mut(b).data_mut().fill(0.0);
    }
    let zero_err = max_abs_diff(&run(&fixed)?, &z0);
    for c in 0..3 {
        fixed.get_mut(block.conv.weight).data_mut()[(c * 3 + c) * 9 + 4] = 1.0;
    }
    let four = z0.map(|v| 4.0 * v);
    let identity_err = max_abs_diff(&run(&fixed)?, &four);

    let mut gstore = ParamStore::new();
    let input = gstore.add("z0", z0.clone());
    let gblock = RecurrentBlock::new(&mut gstore, "r", 3, 3, &mut rng)?;
    let report = check(
        "recurrent",
        &gstore,
        |t, p| {
            let z = gblock.forward(t, p, p.get(input))?;
            let sq = t.mul(z, z)?;
            Ok(t.sum(sq))
        },
        None,
        None,
    )?;
    Ok(verdict(
        zero_err == 0.0 && identity_err <= 1e-12 && report.passed(),
        format!(
            "f=0 deviation {zero_err}, identity 4*z0 deviation {identity_err:.1e}, shared-weight gradient rel err {:.2e}",
            report.max_rel_error
        ),
    ))
}

fn parameter_budget() -> Result<Outcome> {
    let g = build_model(&ModelConfig::mini(10), 0)?;
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("mini.vcn");
    checkpoint::save(g.params(), &path)?;
    let bytes = std::fs::metadata(&path)?.len();
    let count = g.parameter_count();
    Ok(verdict(
        count <= MINI_PARAMETER_BUDGET && bytes <= CHECKPOINT_LIMIT_BYTES,
        format!("{count} parameters (limit {MINI_PARAMETER_BUDGET}), checkpoint {bytes} bytes (limit {CHECKPOINT_LIMIT_BYTES})"),
    ))
}

fn overfit_smoke() -> Result<Outcome> {
    const SEED: u64 = 7;
    const STEP_LIMIT: usize = 300;
    let data = SyntheticSpec::new(5, SEED).interleaved(32)?;
    let start = Instant::now();
    let mut g = build_model(&ModelConfig::mini(10), SEED)?;
    let mut cfg = TrainConfig::new(SEED);
    cfg.epoch.augmentation = AugmentationConfig::none();
    calibrate(&mut g, &data, cfg.epoch.batch_size, SEED)?;
    let mut rng = training_rng(SEED);
    let mut adam = AdamState::new(g.params().tensors(), cfg.adam);
    let (mut steps, mut acc) = (0, 0.0);
    while steps < STEP_LIMIT {
        steps += train_epoch(&mut g, &data, &mut adam, &cfg.epoch, &mut rng)?.steps;
        acc = evaluate(&g, &data)?.accuracy;
        if acc == 1.0 {
            break;
        }
    }
    let elapsed = start.elapsed();
    Ok(verdict(
        acc == 1.0 && steps <= STEP_LIMIT && within(elapsed, 2),
        format!(
            "32 samples, lambda {}, seed {SEED}: train accuracy {acc} after {steps} steps (limit {STEP_LIMIT}), {:.1}s (limit 120s)",
            cfg.epoch.lambda,
            elapsed.as_secs_f64()
        ),
    ))
}

fn synthetic_task() -> Result<Outcome> {
    let spec = SyntheticSpec {
        test_per_class: Some(20),
        ..SyntheticSpec::new(220, 0)
    };
    let (train, test) = generate_synthetic(&spec)?;
    let start = Instant::now();
    let mut g = build_model(&ModelConfig::mini(10), 0)?;
    let records = fit(&mut g, &train, &test, &TrainConfig::new(0), |r| {
        eprintln!("  synthetic epoch {:>2}: loss {:.4} val {:.3}", r.epoch, r.train_loss, r.val_acc);
        Ok(())
    })?;
    let elapsed = start.elapsed();
    let acc = records.last().map_or(0.0, |r| r.val_acc);
    Ok(verdict(
        acc >= 0.90 && within(elapsed, 20),
        format!(
            "{} train / {} test, {} epochs: test accuracy {acc:.4} (limit 0.90), {:.0}s (limit 1200s)",
            train.len(),
            test.len(),
            records.len(),
            elapsed.as_secs_f64()
        ),
    ))
}

/// Writes `fixture` in the directory convention, loads it back and lists
/// every format audit that fails.
fn lightfield_round_trip(fixture: &[LightFieldSample], size: usize) -> Result<(Vec<LabeledImage>, Vec<String>)> {
    let dir = tempfile::tempdir()?;
    write_lightfield(dir.path(), fixture)?;
    let loaded = load_lightfield(dir.path(), 2, 2)?;
    let mut audits = Vec::new();
    if loaded.len() != fixture.len() {
        audits.push(format!("loaded {} of {} samples", loaded.len(), fixture.len()));
    }
    let view_files = ["far", "focal", "near"].iter().all(|class| {
        (0..2).all(|r| (0..2).all(|c| dir.path().join(class).join("0000").join(view_file_name(r, c)).is_file()))
    });
    if !view_files {
        audits.push("view files missing".into());
    }
    for (a, b) in loaded.iter().zip(fixture) {
        if a.label != b.label || a.class_name != b.class_name || a.views.shape() != [4, size, size] {
            audits.push(format!("sample {} ({}) metadata differs", a.class_name, a.label));
            break;
        }
        if max_abs_diff(&a.views, &b.views) > 1.0 / 510.0 + 1e-12 {
            audits.push(format!("{} pixels exceed half a quantisation step", a.class_name));
            break;
        }
    }
    Ok((loaded.into_iter().map(LightFieldSample::into_labeled).collect(), audits))
}

/// Trains on the 40-per-class fixture and tests on an independently drawn
/// fixture of the same size, so the threshold is not decided by a dozen
/// samples.
fn lightfield_task() -> Result<Outcome> {
    const SIZE: usize = 16;
    let (train, mut audits) = lightfield_round_trip(&parallax_fixture(40, SIZE, 0), SIZE)?;
    let (test, test_audits) = lightfield_round_trip(&parallax_fixture(40, SIZE, 1), SIZE)?;
    audits.extend(test_audits);

    let start = Instant::now();
    let mut g = build_model(&ModelConfig::new(Variant::Mini, 4, SIZE, SIZE, 3), 0)?;
    let mut cfg = TrainConfig::new(0);
    cfg.epoch.augmentation.angular_grid = Some((2, 2));
    let records = fit(&mut g, &train, &test, &cfg, |r| {
        eprintln!("  light-field epoch {:>2}: loss {:.4} test {:.3}", r.epoch, r.train_loss, r.val_acc);
        Ok(())
    })?;
    let elapsed = start.elapsed();
    let acc = records.last().map_or(0.0, |r| r.val_acc);
    Ok(verdict(
        audits.is_empty() && acc >= 0.95 && within(elapsed, 10),
        format!(
            "format audits {}; {} train / {} held-out: test accuracy {acc:.4} (limit 0.95), {:.0}s (limit 600s)",
            if audits.is_empty() { "ok".to_string() } else { audits.join(", ") },
            train.len(),
            test.len(),
            elapsed.as_secs_f64()
        ),
    ))
}

fn idx_stretch() -> Result<Outcome> {
    let Some(dir) = std::env::var_os("VCNET_IDX_DIR").map(std::path::PathBuf::from) else {
        return Ok(Outcome::Skip("VCNET_IDX_DIR not set; non-gating".into()));
    };
    let train = load_idx(&dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte"))?;
    let test = load_idx(&dir.join("test-images-idx3-ubyte"), &dir.join("test-labels-idx1-ubyte"))?;
    let shape = train.first().map(|s| s.pixels.shape().to_vec()).unwrap_or_default();
    let classes = vcnet_core::data::class_count(&train).max(2);
    let mut g = build_model(&ModelConfig::new(Variant::Mini, 1, shape[1], shape[2], classes), 0)?;
    let records = fit(&mut g, &train, &test, &TrainConfig::new(0), |r| {
        eprintln!("  idx epoch {:>2}: loss {:.4} test {:.3}", r.epoch, r.train_loss, r.val_acc);
        Ok(())
    })?;
    let acc = records.last().map_or(0.0, |r| r.val_acc);
    // Reported, never gating.
    Ok(Outcome::Pass(format!(
        "{} train / {} test: test accuracy {acc:.4} (target 0.80, non-gating{})",
        train.len(),
        test.len(),
        if acc >= 0.80 { "" } else { ", below target" }
    )))
}

fn determinism() -> Result<Outcome> {
    let (train, test) = generate_synthetic(&SyntheticSpec::new(6, 3))?;
    let run = || -> Result<String> {
        let mut g = build_model(&ModelConfig::mini(10), 3)?;
        let mut cfg = TrainConfig::new(3);
        cfg.epochs = 3;
        cfg.deterministic = true;
        let mut csv = format!("{}\n", EpochRecord::CSV_HEADER);
        fit(&mut g, &train, &test, &cfg, |r| {
            csv.push_str(&r.csv_row());
            csv.push('\n');
            Ok(())
        })?;
        Ok(csv)
    };
    let (a, b) = (run()?, run()?);
    Ok(verdict(
        a.as_bytes() == b.as_bytes(),
        format!("two seeded 3-epoch runs, {} CSV bytes each, identical: {}", a.len(), a == b),
    ))
}

type Criterion = (&'static str, fn() -> Result<Outcome>);

const CRITERIA: &[Criterion] = &[
    ("gradient-suite", gradient_suite),
    ("oracle-equivalence", oracle_equivalence),
    ("predictive-coding", predictive_coding),
    ("recurrent", recurrent_contract),
    ("parameter-budget", parameter_budget),
    ("overfit-smoke", overfit_smoke),
    ("synthetic-10-class", synthetic_task),
    ("lightfield-fixture", lightfield_task),
    ("idx-stretch", idx_stretch),
    ("determinism", determinism),
];

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (name, run) in CRITERIA {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let line = match run() {
            Ok(Outcome::Pass(d)) => format!("PASS {name}: {d}"),
            Ok(Outcome::Skip(d)) => format!("SKIP {name}: {d}"),
            Ok(Outcome::Fail(d)) => {
                failures += 1;
                format!("FAIL {name}: {d}")
            }
            Err(e) => {
                failures += 1;
                format!("FAIL {name}: error: {e}")
            }
        };
        println!("{line}");
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
