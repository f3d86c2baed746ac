use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::{evaluate, reference, EvalProtocol, Reference};
use crate::backbone::BackboneConfig;
use crate::data::{
    chrono_split, fit_apply_norm, load_frame, make_windows, DatasetSchema, FutureCovMode, SplitSpec, WindowSample,
    WindowSpec,
};
use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::model::{Model, ModelConfig, ModelShape};
use crate::tokenizer::PatchConfig;
use crate::training::{fit, pretrain, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkDataset {
    pub name: String,
    pub path: PathBuf,
    pub schema: DatasetSchema,
}

/// Every dataset is split, standardized with training statistics, and run
/// through each protocol for both model variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub datasets: Vec<BenchmarkDataset>,
    #[serde(default = "both_modes")]
    pub protocols: Vec<FutureCovMode>,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub eval: EvalProtocol,
    #[serde(default = "default_patch")]
    pub patch: PatchConfig,
    #[serde(default)]
    pub backbone: BackboneConfig,
    #[serde(default)]
    pub fusion: FusionConfig,
    /// Backbone training on target-only windows.
    #[serde(default)]
    pub pretrain: TrainConfig,
    /// Applied to both variants after pretraining.
    #[serde(default)]
    pub finetune: TrainConfig,
    #[serde(default = "one")]
    pub train_stride: usize,
}

fn both_modes() -> Vec<FutureCovMode> {
    vec![FutureCovMode::Withheld, FutureCovMode::Provided]
}

fn default_patch() -> PatchConfig {
    PatchConfig::new(24)
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Backbone and head only.
    NoCov,
    /// Backbone with the covariate plug-in.
    Cov,
}

impl Variant {
    fn label(self) -> &'static str {
        match self {
            Variant::NoCov => "no-cov",
            Variant::Cov => "cov",
        }
    }
}

fn mode_label(mode: FutureCovMode) -> &'static str {
    match mode {
        FutureCovMode::Provided => "provided",
        FutureCovMode::Withheld => "withheld",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Skipped(String),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub dataset: String,
    pub protocol: FutureCovMode,
    pub variant: Variant,
    pub status: CellStatus,
    pub mse: Option<f64>,
    pub mae: Option<f64>,
    pub windows: usize,
    pub trainable_params: Option<usize>,
    pub runtime_secs: f64,
    /// Published score for the covariate model, for context only.
    pub reference: Option<Reference>,
}

impl BenchmarkRow {
    fn empty(dataset: &str, protocol: FutureCovMode, variant: Variant, status: CellStatus) -> Self {
        Self {
            dataset: dataset.to_string(),
            protocol,
            variant,
            status,
            mse: None,
            mae: None,
            windows: 0,
            trainable_params: None,
            runtime_secs: 0.0,
            reference: match variant {
                Variant::Cov => reference(dataset, protocol),
                Variant::NoCov => None,
            },
        }
    }

    fn status_label(&self) -> String {
        match &self.status {
            CellStatus::Ok => "OK".into(),
            CellStatus::Skipped(why) => format!("SKIPPED ({why})"),
            CellStatus::Failed(why) => format!("FAILED ({why})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
}

fn num(v: Option<f64>, precision: usize) -> String {
    v.map(|v| format!("{v:.precision$}")).unwrap_or_else(|| "-".into())
}

impl BenchmarkReport {
    /// True when any cell was skipped or failed.
    pub fn is_partial(&self) -> bool {
        self.rows.iter().any(|r| r.status != CellStatus::Ok)
    }

    pub fn row(&self, dataset: &str, protocol: FutureCovMode, variant: Variant) -> Option<&BenchmarkRow> {
        self.rows
            .iter()
            .find(|r| r.dataset == dataset && r.protocol == protocol && r.variant == variant)
    }

    /// One record per cell. Runtimes are left out so repeated runs match
    /// byte for byte.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,protocol,variant,status,mse,mae,windows,trainable_params,ref_mse,ref_mae\n");
        for r in &self.rows {
            let opt = |v: Option<f64>| v.map(|v| format!("{v}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},\"{}\",{},{},{},{},{},{}",
                r.dataset,
                mode_label(r.protocol),
                r.variant.label(),
                r.status_label().replace('"', "'"),
                opt(r.mse),
                opt(r.mae),
                r.windows,
                r.trainable_params.map(|p| p.to_string()).unwrap_or_default(),
                opt(r.reference.as_ref().map(|x| x.mse)),
                opt(r.reference.as_ref().map(|x| x.mae)),
            );
        }
        out
    }

    /// Aligned plain-text table. Published numbers sit in their own
    /// columns, marked as reference only.
    pub fn to_table(&self) -> String {
        let header = [
            "dataset", "protocol", "variant", "MSE", "MAE", "windows", "trainable", "ref MSE*", "ref MAE*", "status",
        ];
        let cells: Vec<[String; 10]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.dataset.clone(),
                    mode_label(r.protocol).to_string(),
                    r.variant.label().to_string(),
                    num(r.mse, 4),
                    num(r.mae, 4),
                    r.windows.to_string(),
                    r.trainable_params.map(|p| p.to_string()).unwrap_or_else(|| "-".into()),
                    num(r.reference.as_ref().map(|x| x.mse), 3),
                    num(r.reference.as_ref().map(|x| x.mae), 3),
                    r.status_label(),
                ]
            })
            .collect();
        let mut width = header.map(str::len);
        for row in &cells {
            for (w, c) in width.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, row: &[&str]| {
            let text: Vec<String> = row
                .iter()
                .zip(width)
                .enumerate()
                .map(|(i, (c, w))| if (3..9).contains(&i) { format!("{c:>w$}") } else { format!("{c:<w$}") })
                .collect();
            let _ = writeln!(out, "{}", text.join("  ").trim_end());
        };
        line(&mut out, &header);
        let rule: Vec<String> = width.iter().map(|w| "-".repeat(*w)).collect();
        line(&mut out, &rule.iter().map(String::as_str).collect::<Vec<_>>());
        for row in &cells {
            line(&mut out, &row.iter().map(String::as_str).collect::<Vec<_>>());
        }
        out.push_str("* published covariate-model scores, reference only\n");
        out
    }
}

struct Prepared {
    shape: ModelShape,
    train: Vec<WindowSample>,
    val: Vec<WindowSample>,
    test: Vec<WindowSample>,
}

fn prepare(ds: &BenchmarkDataset, cfg: &BenchmarkConfig) -> Result<Prepared> {
    let frame = load_frame(&ds.path, &ds.schema)?;
    let span = cfg.eval.lookback + cfg.eval.horizon;
    let (train, val, test) = chrono_split(&frame, &cfg.split, span)?;
    let (_, train, rest) = fit_apply_norm(&train, &[&val, &test])?;
    let spec = WindowSpec::new(cfg.eval.lookback, cfg.eval.horizon).with_stride(cfg.train_stride);
    let test_spec = EvalProtocol {
        future_cov_mode: FutureCovMode::Provided,
        ..cfg.eval
    };
    Ok(Prepared {
        shape: ModelShape::new(train.n_targets(), train.n_past(), train.n_future()),
        train: make_windows(&train, &spec)?,
        val: make_windows(&rest[0], &spec)?,
        test: test_spec.windows(&rest[1])?,
    })
}

fn strip_future(ws: &[WindowSample]) -> Vec<WindowSample> {
    ws.iter().map(WindowSample::without_future).collect()
}

fn strip_all(ws: &[WindowSample]) -> Vec<WindowSample> {
    ws.iter().map(WindowSample::without_covariates).collect()
}

fn cell(
    name: &str,
    model: &Model,
    test: &[WindowSample],
    protocol: &EvalProtocol,
    variant: Variant,
    started: Instant,
) -> Result<BenchmarkRow> {
    let report = evaluate(model, test, protocol, name)?;
    let mut row = BenchmarkRow::empty(name, protocol.future_cov_mode, variant, CellStatus::Ok);
    row.mse = Some(report.mse);
    row.mae = Some(report.mae);
    row.windows = report.windows;
    row.trainable_params = Some(model.store.count_trainable());
    row.runtime_secs = started.elapsed().as_secs_f64();
    Ok(row)
}

fn run_dataset(ds: &BenchmarkDataset, cfg: &BenchmarkConfig, rows: &mut Vec<BenchmarkRow>) -> Result<()> {
    let data = prepare(ds, cfg)?;
    let model_cfg = ModelConfig {
        lookback: cfg.eval.lookback,
        horizon: cfg.eval.horizon,
        shape: data.shape,
        patch: cfg.patch,
        backbone: cfg.backbone.clone(),
        fusion: Some(cfg.fusion.clone()),
    };
    info!("{}: pretraining backbone on {} windows", ds.name, data.train.len());
    let (backbone, _) = pretrain(&model_cfg, &data.train, &data.val, &cfg.pretrain, None)?;

    let started = Instant::now();
    let mut plain = backbone.clone();
    let no_cov = fit(&mut plain, &strip_all(&data.train), &strip_all(&data.val), &cfg.finetune, None)
        .map(|_| plain);
    let no_cov_test = strip_all(&data.test);
    for &mode in &cfg.protocols {
        let protocol = cfg.eval.with_mode(mode);
        let row = no_cov
            .as_ref()
            .map_err(|e| e.to_string())
            .and_then(|m| cell(&ds.name, m, &no_cov_test, &protocol, Variant::NoCov, started).map_err(|e| e.to_string()))
            .unwrap_or_else(|e| BenchmarkRow::empty(&ds.name, mode, Variant::NoCov, CellStatus::Failed(e)));
        rows.push(row);

        let started = Instant::now();
        let outcome = (|| -> Result<BenchmarkRow> {
            let mut mcfg = model_cfg.clone();
            let (train, val) = match mode {
                FutureCovMode::Provided => (data.train.clone(), data.val.clone()),
                FutureCovMode::Withheld => {
                    mcfg.shape.future = 0;
                    (strip_future(&data.train), strip_future(&data.val))
                }
            };
            let mut model = Model::new(mcfg, cfg.finetune.seed)?;
            model.load_backbone(&backbone.store)?;
            fit(&mut model, &train, &val, &cfg.finetune, None)?;
            cell(&ds.name, &model, &data.test, &protocol, Variant::Cov, started)
        })();
        rows.push(outcome.unwrap_or_else(|e| {
            warn!("{} {} cov: {e}", ds.name, mode_label(mode));
            BenchmarkRow::empty(&ds.name, mode, Variant::Cov, CellStatus::Failed(e.to_string()))
        }));
    }
    Ok(())
}

/// Trains and scores every (dataset, protocol, variant) cell. Failures are
/// recorded per cell; a missing dataset file marks its rows as skipped.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    if cfg.datasets.is_empty() {
        return Err(Error::Config("benchmark lists no datasets".into()));
    }
    if cfg.protocols.is_empty() {
        return Err(Error::Config("benchmark lists no protocols".into()));
    }
    cfg.pretrain.validate()?;
    cfg.finetune.validate()?;
    let mut rows = Vec::new();
    for ds in &cfg.datasets {
        let before = rows.len();
        if let Err(e) = run_dataset(ds, cfg, &mut rows) {
            rows.truncate(before);
            let status = match &e {
                Error::Io { .. } => CellStatus::Skipped(format!("missing dataset: {}", ds.path.display())),
                other => CellStatus::Failed(other.to_string()),
            };
            warn!("{}: {}", ds.name, e);
            for &mode in &cfg.protocols {
                for variant in [Variant::NoCov, Variant::Cov] {
                    rows.push(BenchmarkRow::empty(&ds.name, mode, variant, status.clone()));
                }
            }
        }
    }
    Ok(BenchmarkReport { rows })
}
