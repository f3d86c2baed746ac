//! Metrics, the evaluation protocol, benchmark tables and synthetic
//! oracle data.
//!
//! Metrics are computed in the standardized space produced by
//! [`NormStats`](crate::data::NormStats) and averaged with equal weight per
//! window.

mod benchmark;
mod synthetic;

pub use benchmark::{
    run_benchmark, BenchmarkConfig, BenchmarkDataset, BenchmarkReport, BenchmarkRow, CellStatus, Variant,
};
pub use synthetic::{gen_synthetic, SyntheticKind, SyntheticSpec};

use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{FutureCovMode, SeriesFrame, WindowSample, WindowSpec};
use crate::error::{Error, Result};
use crate::model::Model;

fn check_same(y: &Array2<f64>, y_hat: &Array2<f64>) -> Result<()> {
    if y.dim() != y_hat.dim() {
        return Err(Error::Shape(format!(
            "target is {:?}, forecast is {:?}",
            y.dim(),
            y_hat.dim()
        )));
    }
    if y.is_empty() {
        return Err(Error::Empty("metric over an empty array".into()));
    }
    Ok(())
}

/// Mean absolute entrywise error.
pub fn mae(y: &Array2<f64>, y_hat: &Array2<f64>) -> Result<f64> {
    check_same(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// Mean squared entrywise error.
pub fn mse(y: &Array2<f64>, y_hat: &Array2<f64>) -> Result<f64> {
    check_same(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalProtocol {
    #[serde(default = "default_lookback")]
    pub lookback: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub future_cov_mode: FutureCovMode,
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_lookback() -> usize {
    168
}

fn default_horizon() -> usize {
    24
}

fn default_stride() -> usize {
    1
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            lookback: default_lookback(),
            horizon: default_horizon(),
            future_cov_mode: FutureCovMode::Provided,
            stride: default_stride(),
        }
    }
}

impl EvalProtocol {
    pub fn new(lookback: usize, horizon: usize) -> Self {
        Self {
            lookback,
            horizon,
            ..Self::default()
        }
    }

    pub fn with_mode(mut self, mode: FutureCovMode) -> Self {
        self.future_cov_mode = mode;
        self
    }

    pub fn window_spec(&self) -> WindowSpec {
        WindowSpec::new(self.lookback, self.horizon)
            .with_stride(self.stride)
            .with_future_cov(self.future_cov_mode)
    }

    /// Test windows of `frame` under this protocol.
    pub fn windows(&self, frame: &SeriesFrame) -> Result<Vec<WindowSample>> {
        crate::data::make_windows(frame, &self.window_spec())
    }
}

/// Published scores, displayed next to ours and never compared against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub source: String,
    pub mse: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, Copy)]
struct ReferenceRow {
    dataset: &'static str,
    without: (f64, f64),
    with: (f64, f64),
}

const REFERENCE: [ReferenceRow; 6] = [
    ReferenceRow { dataset: "NP", without: (0.221, 0.259), with: (0.167, 0.216) },
    ReferenceRow { dataset: "PJM", without: (0.072, 0.168), with: (0.070, 0.157) },
    ReferenceRow { dataset: "BE", without: (0.365, 0.243), with: (0.338, 0.224) },
    ReferenceRow { dataset: "FR", without: (0.486, 0.198), with: (0.347, 0.177) },
    ReferenceRow { dataset: "DE", without: (0.414, 0.399), with: (0.289, 0.331) },
    ReferenceRow { dataset: "Energy", without: (0.100, 0.243), with: (0.079, 0.218) },
];

/// Published covariate-model score for a dataset name (case-insensitive)
/// under the given protocol.
pub fn reference(dataset: &str, mode: FutureCovMode) -> Option<Reference> {
    let row = REFERENCE.iter().find(|r| r.dataset.eq_ignore_ascii_case(dataset))?;
    let ((mse, mae), source) = match mode {
        FutureCovMode::Withheld => (row.without, "published, without future covariates"),
        FutureCovMode::Provided => (row.with, "published, with future covariates"),
    };
    Some(Reference {
        source: source.to_string(),
        mse,
        mae,
    })
}

/// Anything that maps windows to `C × F` forecasts.
pub trait Forecaster {
    fn id(&self) -> String;

    fn trainable_params(&self) -> usize {
        0
    }

    fn forecast(&self, windows: &[&WindowSample]) -> Result<Vec<Array2<f64>>>;
}

impl Forecaster for Model {
    fn id(&self) -> String {
        let s = self.cfg.shape;
        if self.has_fusion() {
            format!("covfuse(C={},Mp={},Mf={})", s.targets, s.past, s.future)
        } else {
            format!("backbone(C={})", s.targets)
        }
    }

    fn trainable_params(&self) -> usize {
        self.store.count_trainable()
    }

    /// Covariate blocks the model was built without are dropped first, so a
    /// backbone scores on the same windows as a fused model.
    fn forecast(&self, windows: &[&WindowSample]) -> Result<Vec<Array2<f64>>> {
        let shape = self.cfg.shape;
        let adapted: Vec<WindowSample> = windows
            .iter()
            .map(|w| {
                let mut w = (*w).clone();
                if shape.past == 0 {
                    w.x_past = Array2::zeros((0, w.lookback()));
                }
                if shape.future == 0 {
                    w.y_future = Array2::zeros((0, w.horizon()));
                }
                w
            })
            .collect();
        let mut out = Vec::with_capacity(windows.len());
        for chunk in adapted.chunks(64) {
            let refs: Vec<&WindowSample> = chunk.iter().collect();
            out.extend(self.predict_batch(&refs)?);
        }
        Ok(out)
    }
}

/// Returns the ground truth.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleForecaster;

impl Forecaster for OracleForecaster {
    fn id(&self) -> String {
        "oracle".into()
    }

    fn forecast(&self, windows: &[&WindowSample]) -> Result<Vec<Array2<f64>>> {
        Ok(windows.iter().map(|w| w.y_target.clone()).collect())
    }
}

/// Predicts a constant per target channel.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanForecaster {
    pub means: Vec<f64>,
}

impl MeanForecaster {
    /// Per-target mean of the finite values in `frame`.
    pub fn fit(frame: &SeriesFrame) -> Self {
        let means = frame
            .targets()
            .map(|c| {
                let (sum, n) = c
                    .values
                    .iter()
                    .filter(|v| v.is_finite())
                    .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
                if n == 0 { 0.0 } else { sum / n as f64 }
            })
            .collect();
        Self { means }
    }
}

impl Forecaster for MeanForecaster {
    fn id(&self) -> String {
        "train-mean".into()
    }

    fn forecast(&self, windows: &[&WindowSample]) -> Result<Vec<Array2<f64>>> {
        windows
            .iter()
            .map(|w| {
                if w.y_target.nrows() != self.means.len() {
                    return Err(Error::Shape(format!(
                        "window has {} targets, mean model has {}",
                        w.y_target.nrows(),
                        self.means.len()
                    )));
                }
                Ok(Array2::from_shape_fn(w.y_target.dim(), |(i, _)| self.means[i]))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub dataset: String,
    pub model_id: String,
    pub protocol: EvalProtocol,
    pub mse: f64,
    pub mae: f64,
    pub windows: usize,
    pub trainable_params: usize,
    pub runtime_secs: f64,
    pub reference: Option<Reference>,
}

/// Scores `model` on `windows`. In withheld mode every window is stripped
/// of its horizon covariates before it reaches the model.
pub fn evaluate<M: Forecaster + ?Sized>(
    model: &M,
    windows: &[WindowSample],
    protocol: &EvalProtocol,
    dataset: &str,
) -> Result<ForecastReport> {
    if windows.is_empty() {
        return Err(Error::Empty(format!("no test windows for {dataset}")));
    }
    let start = Instant::now();
    let mut stripped = Vec::new();
    for w in windows {
        if w.lookback() != protocol.lookback || w.horizon() != protocol.horizon {
            return Err(Error::Shape(format!(
                "window at row {} spans {}→{}, protocol is {}→{}",
                w.origin,
                w.lookback(),
                w.horizon(),
                protocol.lookback,
                protocol.horizon
            )));
        }
        if protocol.future_cov_mode == FutureCovMode::Withheld {
            stripped.push(w.without_future());
        }
    }
    let used = if stripped.is_empty() { windows } else { &stripped };
    let refs: Vec<&WindowSample> = used.iter().collect();
    let forecasts = model.forecast(&refs)?;
    let (mut total_mse, mut total_mae) = (0.0, 0.0);
    for (w, y_hat) in used.iter().zip(&forecasts) {
        total_mse += mse(&w.y_target, y_hat)?;
        total_mae += mae(&w.y_target, y_hat)?;
    }
    let n = used.len() as f64;
    Ok(ForecastReport {
        dataset: dataset.to_string(),
        model_id: model.id(),
        protocol: *protocol,
        mse: total_mse / n,
        mae: total_mae / n,
        windows: used.len(),
        trainable_params: model.trainable_params(),
        runtime_secs: start.elapsed().as_secs_f64(),
        reference: reference(dataset, protocol.future_cov_mode),
    })
}
