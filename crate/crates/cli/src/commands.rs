use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use covfuse::checkpoint::Checkpoint;
use covfuse::data::{
    chrono_split, load_frame, make_windows, window_at, write_frame, DatasetSchema, FutureCovMode, NormStats,
    SeriesFrame, WindowSample, WindowSpec,
};
use covfuse::evaluation::{evaluate, gen_synthetic, run_benchmark, BenchmarkConfig, SyntheticSpec};
use covfuse::model::{Model, ModelConfig, ModelShape};
use covfuse::screening::screen;
use covfuse::training::{fit, pretrain, TrainMode};

use crate::config::{self, RunConfig};
use crate::failure::Failure;

type Outcome = Result<(), Failure>;

fn ensure_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("cannot create {}: {e}", dir.display())))
}

fn write(path: &Path, contents: &str) -> Outcome {
    fs::write(path, contents).map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    write(path, &(text + "\n"))
}

fn shape_of(frame: &SeriesFrame) -> ModelShape {
    ModelShape::new(frame.n_targets(), frame.n_past(), frame.n_future())
}

/// Lists every differing field as `name: expected X, found Y`.
fn mismatches(what: &str, fields: &[(&str, String, String)]) -> Outcome {
    let diffs: Vec<String> = fields
        .iter()
        .filter(|(_, a, b)| a != b)
        .map(|(name, a, b)| format!("{name}: {what} {a}, found {b}"))
        .collect();
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(Failure::Config(format!("shape mismatch; {}", diffs.join("; "))))
    }
}

fn check_shape(model: &ModelShape, data: &ModelShape) -> Outcome {
    mismatches(
        "checkpoint has",
        &[
            ("C", model.targets.to_string(), data.targets.to_string()),
            ("Mp", model.past.to_string(), data.past.to_string()),
            ("Mf", model.future.to_string(), data.future.to_string()),
        ],
    )
}

struct Splits {
    norm: NormStats,
    train: SeriesFrame,
    val: SeriesFrame,
    test: SeriesFrame,
}

/// Loads the dataset, splits it and standardizes with `norm` when given,
/// otherwise with statistics of the training split.
fn load_splits(cfg: &RunConfig, norm: Option<&NormStats>) -> Result<Splits, Failure> {
    let frame = load_frame(&cfg.dataset.path, &cfg.dataset.schema)?;
    let span = cfg.eval.lookback + cfg.eval.horizon;
    let (train, val, test) = chrono_split(&frame, &cfg.dataset.split, span)?;
    let norm = match norm {
        Some(n) => n.clone(),
        None => NormStats::fit(&train)?,
    };
    Ok(Splits {
        train: norm.apply(&train)?,
        val: norm.apply(&val)?,
        test: norm.apply(&test)?,
        norm,
    })
}

fn train_windows(cfg: &RunConfig, s: &Splits) -> Result<(Vec<WindowSample>, Vec<WindowSample>), Failure> {
    let spec = WindowSpec::new(cfg.eval.lookback, cfg.eval.horizon).with_stride(cfg.dataset.train_stride);
    Ok((make_windows(&s.train, &spec)?, make_windows(&s.val, &spec)?))
}

pub fn pretrain_cmd(config: &Path) -> Outcome {
    let cfg = RunConfig::load(config)?;
    ensure_dir(&cfg.output_dir)?;
    let splits = load_splits(&cfg, None)?;
    let (train, val) = train_windows(&cfg, &splits)?;
    let model_cfg = cfg.model_config(shape_of(&splits.train), false);
    let (model, report) = pretrain(&model_cfg, &train, &val, cfg.pretrain_config(), None)?;
    let path = cfg.output_dir.join("pretrained.ckpt");
    Checkpoint {
        model,
        norm: Some(splits.norm),
        schema: Some(cfg.dataset.schema.clone()),
    }
    .save(&path)?;
    write_json(&cfg.output_dir.join("pretrain_report.json"), &report)?;
    println!(
        "pretrained backbone: {} parameters, {} epochs, best val loss {}",
        report.total_params,
        report.epochs.len(),
        report.best_val_loss.map_or("-".into(), |v| format!("{v:.6}"))
    );
    println!("checkpoint: {}", path.display());
    Ok(())
}

pub fn finetune_cmd(config: &Path, mode: Option<TrainMode>, with_future_cov: bool) -> Outcome {
    let cfg = RunConfig::load(config)?;
    ensure_dir(&cfg.output_dir)?;
    let base = Checkpoint::load(&cfg.pretrained_path())?;
    let splits = load_splits(&cfg, base.norm.as_ref())?;
    let mut shape = shape_of(&splits.train);
    if !with_future_cov {
        shape.future = 0;
    }
    let pre = &base.model.cfg;
    mismatches(
        "pretrained checkpoint has",
        &[
            ("C", pre.shape.targets.to_string(), shape.targets.to_string()),
            ("T", pre.lookback.to_string(), cfg.eval.lookback.to_string()),
            ("F", pre.horizon.to_string(), cfg.eval.horizon.to_string()),
            ("P", pre.patch.period.to_string(), cfg.model.patch.period.to_string()),
            ("D", pre.backbone.d_model.to_string(), cfg.model.backbone.d_model.to_string()),
        ],
    )?;
    let model_cfg = ModelConfig {
        backbone: pre.backbone.clone(),
        ..cfg.model_config(shape, true)
    };
    let mut train_cfg = cfg.train.clone();
    if let Some(m) = mode {
        train_cfg.mode = m;
    }
    let mut model = Model::new(model_cfg, train_cfg.seed)?;
    model.load_backbone(&base.model.store)?;
    let (mut train, mut val) = train_windows(&cfg, &splits)?;
    if !with_future_cov {
        train = train.iter().map(WindowSample::without_future).collect();
        val = val.iter().map(WindowSample::without_future).collect();
    }
    let report = fit(&mut model, &train, &val, &train_cfg, None)?;
    let mut schema = cfg.dataset.schema.clone();
    if !with_future_cov {
        schema.future_covariates.clear();
    }
    let path = cfg.output_dir.join("finetuned.ckpt");
    Checkpoint {
        model,
        norm: Some(splits.norm),
        schema: Some(schema),
    }
    .save(&path)?;
    write_json(&cfg.output_dir.join("finetune_report.json"), &report)?;
    let excluded = match train_cfg.mode {
        TrainMode::FrozenBackbone => " (backbone frozen)",
        _ => "",
    };
    println!(
        "trainable parameters: {} of {}{excluded}",
        report.trainable_params, report.total_params
    );
    println!(
        "best val loss {} at epoch {}",
        report.best_val_loss.map_or("-".into(), |v| format!("{v:.6}")),
        report.best_epoch.map_or("-".into(), |e| e.to_string())
    );
    println!("checkpoint: {}", path.display());
    Ok(())
}

pub fn evaluate_cmd(config: &Path, checkpoint: Option<PathBuf>, mode: Option<FutureCovMode>) -> Outcome {
    let cfg = RunConfig::load(config)?;
    ensure_dir(&cfg.output_dir)?;
    let ck = Checkpoint::load(&checkpoint.unwrap_or_else(|| cfg.output_dir.join("finetuned.ckpt")))?;
    let splits = load_splits(&cfg, ck.norm.as_ref())?;
    let mut data = shape_of(&splits.test);
    let model_shape = ck.model.cfg.shape;
    if model_shape.future == 0 {
        data.future = 0;
    }
    check_shape(&model_shape, &data)?;
    let mut protocol = cfg.eval;
    if let Some(m) = mode {
        protocol.future_cov_mode = m;
    }
    let windows = protocol.windows(&splits.test)?;
    let name = cfg
        .dataset
        .path
        .file_stem()
        .map_or("dataset".into(), |s| s.to_string_lossy().into_owned());
    let report = evaluate(&ck.model, &windows, &protocol, &name)?;
    write_json(&cfg.output_dir.join("eval_report.json"), &report)?;
    println!(
        "{name}: MSE {:.6}  MAE {:.6}  over {} windows ({} future covariates)",
        report.mse,
        report.mae,
        report.windows,
        match protocol.future_cov_mode {
            FutureCovMode::Provided => "with",
            FutureCovMode::Withheld => "without",
        }
    );
    if let Some(r) = &report.reference {
        println!("reference only, {}: MSE {:.3}  MAE {:.3}", r.source, r.mse, r.mae);
    }
    Ok(())
}

fn stamp(frame: &SeriesFrame, row: usize) -> String {
    (frame.start() + frame.frequency() * row as i32)
        .format("%Y-%m-%dT%H:%M:%S")
        .to_string()
}

pub fn forecast_cmd(checkpoint: &Path, input: &Path, output: &Path, origin: Option<usize>, plot: bool) -> Outcome {
    let ck = Checkpoint::load(checkpoint)?;
    let schema: &DatasetSchema = ck
        .schema
        .as_ref()
        .ok_or_else(|| Failure::Config(format!("{} stores no dataset schema", checkpoint.display())))?;
    let raw = load_frame(input, schema)?;
    let frame = match &ck.norm {
        Some(n) => n.apply(&raw)?,
        None => raw.clone(),
    };
    let model = &ck.model;
    let cfg = &model.cfg;
    check_shape(&cfg.shape, &shape_of(&frame))?;
    let origin = origin.unwrap_or_else(|| {
        (0..frame.len())
            .rev()
            .find(|&r| frame.targets().all(|c| c.values[r].is_finite()))
            .map_or(0, |r| r + 1)
    });
    if origin > frame.len() {
        return Err(Failure::Runtime(format!(
            "origin {origin} lies beyond the {} input rows",
            frame.len()
        )));
    }
    if origin < cfg.lookback {
        return Err(Failure::Runtime(format!(
            "insufficient history: the model needs {} steps, the input provides {origin}",
            cfg.lookback
        )));
    }
    let spec = WindowSpec::new(cfg.lookback, cfg.horizon);
    let sample = window_at(&frame, origin, &spec).map_err(|e| match cfg.shape.future {
        0 => Failure::from(e),
        _ => Failure::Runtime(format!("missing expected future covariates: {e}")),
    })?;
    let y_hat = model.predict(&sample)?;
    let targets: Vec<_> = frame.targets().map(|c| c.name.clone()).collect();
    let denorm = |name: &str, v: f64| ck.norm.as_ref().and_then(|n| n.get(name)).map_or(v, |s| s.denormalize(v));

    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    let mut out = format!("timestamp,{}\n", targets.join(","));
    for j in 0..cfg.horizon {
        let row: Vec<String> = targets
            .iter()
            .enumerate()
            .map(|(i, n)| format!("{}", denorm(n, y_hat[[i, j]])))
            .collect();
        out.push_str(&format!("{},{}\n", stamp(&frame, origin + j), row.join(",")));
    }
    write(output, &out)?;
    println!("{} forecast rows per channel written to {}", cfg.horizon, output.display());

    if plot {
        let path = plot_path(output);
        let mut text = String::from("timestamp");
        for n in &targets {
            text.push_str(&format!(",{n}_history,{n}_truth,{n}_forecast"));
        }
        text.push('\n');
        let cell = |v: f64| if v.is_finite() { format!("{v}") } else { String::new() };
        for r in origin - cfg.lookback..origin + cfg.horizon {
            text.push_str(&stamp(&frame, r));
            for (i, n) in targets.iter().enumerate() {
                if r < origin {
                    let v = raw.targets().nth(i).map_or(f64::NAN, |c| c.values[r]);
                    text.push_str(&format!(",{},,", cell(v)));
                } else {
                    let j = r - origin;
                    let truth = denorm(n, sample.y_target[[i, j]]);
                    text.push_str(&format!(",,{},{}", cell(truth), cell(denorm(n, y_hat[[i, j]]))));
                }
            }
            text.push('\n');
        }
        write(&path, &text)?;
        println!("plot data written to {}", path.display());
    }
    Ok(())
}

pub fn plot_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().map_or("forecast".into(), |s| s.to_string_lossy().into_owned());
    output.with_file_name(format!("{stem}_plot.csv"))
}

pub fn screen_cmd(config: &Path) -> Outcome {
    let cfg = RunConfig::load(config)?;
    ensure_dir(&cfg.output_dir)?;
    let frame = load_frame(&cfg.dataset.path, &cfg.dataset.schema)?;
    let (train, _, _) = chrono_split(&frame, &cfg.dataset.split, 0)?;
    let report = screen(&train, &cfg.screening)?;
    write(&cfg.output_dir.join("screening.csv"), &report.to_csv())?;
    write(&cfg.output_dir.join("screening.txt"), &report.to_table())?;
    if report.is_empty() {
        println!("notice: the dataset declares no covariates; nothing to screen");
    } else {
        print!("{}", report.to_table());
        for e in report.entries.iter().filter(|e| !e.notes.is_empty()) {
            println!("{} ← {}: {}", e.target, e.covariate, e.notes.join("; "));
        }
    }
    Ok(())
}

pub fn benchmark_cmd(config: &Path, output_dir: Option<PathBuf>) -> Outcome {
    let mut cfg: BenchmarkConfig = config::read(config)?;
    let base = config.parent().unwrap_or(Path::new("."));
    for ds in &mut cfg.datasets {
        if ds.path.is_relative() {
            ds.path = base.join(&ds.path);
        }
    }
    let dir = output_dir.unwrap_or_else(|| base.join("benchmark"));
    ensure_dir(&dir)?;
    let report = run_benchmark(&cfg)?;
    write(&dir.join("benchmark.csv"), &report.to_csv())?;
    write(&dir.join("benchmark.txt"), &report.to_table())?;
    print!("{}", report.to_table());
    if report.is_partial() {
        let bad = report.rows.iter().filter(|r| r.status != covfuse::evaluation::CellStatus::Ok).count();
        return Err(Failure::Runtime(format!(
            "partial success: {bad} of {} cells skipped or failed",
            report.rows.len()
        )));
    }
    Ok(())
}

pub fn gen_synthetic_cmd(spec: &SyntheticSpec, output: &Path) -> Outcome {
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    let frame = gen_synthetic(spec);
    write_frame(&frame, output)?;
    info!("{} rows written", frame.len());
    println!("{} rows written to {}", frame.len(), output.display());
    Ok(())
}
