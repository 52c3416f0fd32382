use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use vcnet_core::gradcheck::run_suite;
use vcnet_core::graph::{build_model, checkpoint, StreamGraph};
use vcnet_core::train::{evaluate, fit, EpochRecord, TrainConfig};
use vcnet_core::{Error, Result};

use crate::{source, EvalArgs, GradcheckArgs, InspectArgs, TrainArgs};

fn write_manifest(path: &Path, entries: &[(&str, String)]) -> Result<()> {
    let mut out = String::new();
    for (k, v) in entries {
        out.push_str(&format!("{k}={v}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Replaces the graph's parameters with those stored at `path`.
fn restore(graph: &mut StreamGraph, path: &Path) -> Result<()> {
    let stored = checkpoint::load(path)?;
    graph.params_mut().load_from(&stored)
}

pub fn train(args: &TrainArgs) -> Result<bool> {
    if !(args.lambda >= 0.0) {
        return Err(Error::Config(format!("lambda {} must be non-negative", args.lambda)));
    }
    let data = source::load(&args.data, &args.model)?;
    let config = data.model_config(&args.model)?;
    let mut graph = build_model(&config, args.model.seed)?;
    fs::create_dir_all(&args.out)?;
    let checkpoint_path = args.checkpoint.clone().unwrap_or_else(|| args.out.join("model.vcn"));
    let metrics_path = args.out.join("metrics.csv");

    let mut cfg = TrainConfig::new(args.model.seed);
    cfg.epochs = args.epochs;
    cfg.epoch.lambda = args.lambda;
    cfg.epoch.workers = args.workers.max(1);
    cfg.deterministic = args.deterministic;
    if args.data.data_lf.is_some() {
        // flips must swap view columns or the parallax sign inverts
        cfg.epoch.augmentation.angular_grid = args.model.grid.as_deref().map(|g| (g[0], g[1]));
    }

    let mut metrics = BufWriter::new(File::create(&metrics_path)?);
    writeln!(metrics, "{}", EpochRecord::CSV_HEADER)?;
    let start = Instant::now();
    let records = fit(&mut graph, &data.train, &data.val, &cfg, |r| {
        writeln!(metrics, "{}", r.csv_row())?;
        metrics.flush()?;
        eprintln!(
            "epoch {:>3}  loss {:.4}  train_acc {:.4}  val_acc {:.4}  ({:.1}s)",
            r.epoch,
            r.train_loss,
            r.train_acc,
            r.val_acc,
            start.elapsed().as_secs_f64()
        );
        Ok(())
    })?;
    drop(metrics);

    checkpoint::save(graph.params(), &checkpoint_path)?;
    // Report what `eval` will see: the checkpoint's narrowed values.
    restore(&mut graph, &checkpoint_path)?;
    let final_eval = evaluate(&graph, &data.val)?;

    let last = records.last();
    let field = |f: fn(&EpochRecord) -> f64| last.map_or("nan".to_string(), |r| f(r).to_string());
    write_manifest(
        &args.out.join("manifest.txt"),
        &[
            ("command", "train".into()),
            ("data", data.description.clone()),
            ("variant", config.variant.to_string()),
            ("classes", config.classes.to_string()),
            ("input_shape", format!("{:?}", config.sample_shape())),
            ("epochs", args.epochs.to_string()),
            ("lambda", args.lambda.to_string()),
            ("seed", args.model.seed.to_string()),
            ("workers", cfg.epoch.workers.to_string()),
            ("deterministic", args.deterministic.to_string()),
            ("train_samples", data.train.len().to_string()),
            ("val_samples", data.val.len().to_string()),
            ("parameter_count", graph.parameter_count().to_string()),
            ("serialized_bytes", graph.serialized_size_bytes().to_string()),
            ("final_train_loss", field(|r| r.train_loss)),
            ("final_train_ce", field(|r| r.train_ce)),
            ("final_train_pred_penalty", field(|r| r.train_pred_penalty)),
            ("final_train_acc", field(|r| r.train_acc)),
            ("final_val_acc", final_eval.accuracy.to_string()),
            ("final_val_loss", final_eval.mean_cross_entropy.to_string()),
            ("checkpoint", checkpoint_path.display().to_string()),
            ("metrics", metrics_path.display().to_string()),
        ],
    )?;
    println!("val_acc={} checkpoint={}", final_eval.accuracy, checkpoint_path.display());
    Ok(true)
}

pub fn eval(args: &EvalArgs) -> Result<bool> {
    let data = source::load(&args.data, &args.model)?;
    let config = data.model_config(&args.model)?;
    let mut graph = build_model(&config, args.model.seed)?;
    restore(&mut graph, &args.checkpoint)?;
    let e = evaluate(&graph, &data.val)?;
    println!("accuracy={}", e.accuracy);
    println!("mean_loss={}", e.mean_cross_entropy);
    println!("samples={}", data.val.len());
    Ok(true)
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<bool> {
    let start = Instant::now();
    let reports = run_suite(args.inject_fault)?;
    let mut ok = true;
    for r in &reports {
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!("{status:<4} {r}");
        if !r.passed() {
            ok = false;
            eprintln!("exceeded tolerance at {}/{}", r.name, r.worst);
        }
    }
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    println!(
        "{} cases, max rel err {worst:.3e}, {:.1}s",
        reports.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(ok)
}

pub fn inspect(args: &InspectArgs) -> Result<bool> {
    let config = vcnet_core::graph::ModelConfig::new(args.variant, args.channels, args.size, args.size, args.classes);
    let graph = build_model(&config, 0)?;
    println!("variant={}", config.variant);
    println!("input=[{}, {}, {}]", args.channels, args.size, args.size);
    println!("classes={}", config.classes);
    let order: Vec<String> = graph.execution_order().iter().map(|a| a.to_string()).collect();
    println!("execution_order={}", order.join(","));
    println!("widths:");
    for node in graph.nodes() {
        let pool = if node.downsample { " (2x pool on entry)" } else { "" };
        println!("  {:<16} {:>4}{pool}", node.name.to_string(), node.channels);
    }
    println!("parameters:");
    for (block, count) in graph.block_parameter_counts() {
        println!("  {block:<32} {count:>8}");
    }
    println!("total_parameters={}", graph.parameter_count());
    println!("serialized_bytes={}", graph.serialized_size_bytes());
    Ok(true)
}
