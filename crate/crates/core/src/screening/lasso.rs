use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LassoConfig {
    pub max_lag: usize,
    /// Explicit penalty grid; when absent a log grid below `lambda_max` is used.
    pub lambda_grid: Option<Vec<f64>>,
    pub n_lambdas: usize,
    /// Smallest grid value as a fraction of `lambda_max`.
    pub min_ratio: f64,
    /// Trailing fraction of rows held out to pick the penalty.
    pub val_fraction: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            max_lag: 24,
            lambda_grid: None,
            n_lambdas: 20,
            min_ratio: 1e-3,
            val_fraction: 0.2,
            max_iter: 10_000,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub coef: Array1<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub sweeps: usize,
    /// Objective after every full sweep.
    pub objective: Vec<f64>,
}

fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

fn objective(x: &Array2<f64>, y: &Array1<f64>, coef: &Array1<f64>, lambda: f64) -> f64 {
    let r = y - &x.dot(coef);
    r.dot(&r) / (2.0 * y.len() as f64) + lambda * coef.mapv(f64::abs).sum()
}

/// Centers `x` and `y` on their column means.
fn center(x: &Array2<f64>, y: &Array1<f64>) -> (Array2<f64>, Array1<f64>, Array1<f64>, f64) {
    let xm = x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(x.ncols()));
    let ym = y.mean().unwrap_or(0.0);
    (x - &xm, y - ym, xm, ym)
}

/// Largest penalty with a non-zero solution: `max_j |x_jᵀ(y − ȳ)| / n`.
pub fn lambda_max(x: &Array2<f64>, y: &Array1<f64>) -> f64 {
    let (xc, yc, _, _) = center(x, y);
    xc.t().dot(&yc).iter().fold(0.0f64, |m, v| m.max(v.abs())) / y.len() as f64
}

/// Minimizes `‖y − b₀ − Xb‖² / (2n) + λ‖b‖₁` by cyclic coordinate descent
/// with soft-thresholding. The intercept is unpenalized.
pub fn lasso_fit(
    x: &Array2<f64>,
    y: &Array1<f64>,
    lambda: f64,
    max_iter: usize,
    tol: f64,
    warm: Option<&Array1<f64>>,
) -> Result<LassoFit> {
    let (n, p) = x.dim();
    if y.len() != n || n == 0 {
        return Err(Error::Shape(format!("lasso design is {n}×{p} but target has {} rows", y.len())));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!("lambda must be non-negative, got {lambda}")));
    }
    let (xc, yc, xm, ym) = center(x, y);
    let col_sq: Vec<f64> = xc.axis_iter(Axis(1)).map(|c| c.dot(&c) / n as f64).collect();
    let mut coef = warm.cloned().unwrap_or_else(|| Array1::zeros(p));
    let mut resid = &yc - &xc.dot(&coef);
    let mut trace = Vec::new();
    let mut max_change = f64::INFINITY;
    let mut sweeps = 0;
    while sweeps < max_iter {
        sweeps += 1;
        max_change = 0.0f64;
        for j in 0..p {
            if col_sq[j] == 0.0 {
                coef[j] = 0.0;
                continue;
            }
            let col = xc.column(j);
            let old = coef[j];
            let rho = col.dot(&resid) / n as f64 + col_sq[j] * old;
            let new = soft_threshold(rho, lambda) / col_sq[j];
            if new != old {
                resid.scaled_add(old - new, &col);
                coef[j] = new;
                max_change = max_change.max((new - old).abs());
            }
        }
        trace.push(objective(&xc, &yc, &coef, lambda));
        if max_change <= tol {
            break;
        }
    }
    if max_change > tol {
        return Err(Error::NonConvergence {
            iterations: sweeps,
            max_change,
            gap: duality_gap(&xc, &yc, &coef, lambda),
        });
    }
    let intercept = ym - xm.dot(&coef);
    Ok(LassoFit {
        coef,
        intercept,
        lambda,
        sweeps,
        objective: trace,
    })
}

/// Primal minus a feasible dual objective, built by rescaling the residual.
fn duality_gap(x: &Array2<f64>, y: &Array1<f64>, coef: &Array1<f64>, lambda: f64) -> f64 {
    let n = y.len() as f64;
    let r = y - &x.dot(coef);
    let corr = x.t().dot(&r).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let s = if corr == 0.0 { 1.0 } else { (n * lambda / corr).min(1.0) };
    let nu = &r * s;
    let dual = (y.dot(y) - (y - &nu).mapv(|v| v * v).sum()) / (2.0 * n);
    objective(x, y, coef, lambda) - dual
}

/// `n_lambdas` log-spaced values from `hi` down to `hi · min_ratio`.
pub fn lambda_grid(hi: f64, n_lambdas: usize, min_ratio: f64) -> Vec<f64> {
    if n_lambdas <= 1 || hi == 0.0 {
        return vec![hi];
    }
    let (lo, hi) = ((hi * min_ratio).ln(), hi.ln());
    (0..n_lambdas)
        .map(|i| (hi + (lo - hi) * i as f64 / (n_lambdas - 1) as f64).exp())
        .collect()
}

/// Lag-augmented design: row `t` holds `x_c[t − l]` for every covariate
/// `c` and lag `l = 1..=max_lag`, for `t = max_lag..n`.
pub fn lag_design(covariates: &[&[f64]], max_lag: usize) -> Array2<f64> {
    let n = covariates.first().map_or(0, |c| c.len());
    let rows = n.saturating_sub(max_lag);
    Array2::from_shape_fn((rows, covariates.len() * max_lag), |(i, j)| {
        let (c, l) = (j / max_lag, j % max_lag + 1);
        covariates[c][i + max_lag - l]
    })
}

fn standardize(col: ArrayView1<f64>, mean: f64, std: f64) -> Array1<f64> {
    col.mapv(|v| if std > 0.0 { (v - mean) / std } else { 0.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoImportance {
    /// `(covariate index, Σ_lags |coef|)` sorted by descending score.
    pub ranking: Vec<(usize, f64)>,
    /// Score per covariate in input order.
    pub scores: Vec<f64>,
    pub lambda: f64,
    pub val_mse: f64,
}

/// Scores every covariate by the summed absolute standardized Lasso
/// coefficients over its lags. The penalty is chosen on the trailing
/// validation slice; the grid is walked from large to small with warm
/// starts.
pub fn lasso_lag_importance(covariates: &[&[f64]], target: &[f64], cfg: &LassoConfig) -> Result<LassoImportance> {
    if covariates.is_empty() {
        return Ok(LassoImportance {
            ranking: Vec::new(),
            scores: Vec::new(),
            lambda: 0.0,
            val_mse: 0.0,
        });
    }
    if covariates.iter().any(|c| c.len() != target.len()) {
        return Err(Error::Shape("covariates and target differ in length".into()));
    }
    if cfg.max_lag == 0 {
        return Err(Error::InvalidInput("max_lag must be at least 1".into()));
    }
    if covariates.iter().flat_map(|c| c.iter()).chain(target).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("lasso input contains NaN or infinity".into()));
    }
    let design = lag_design(covariates, cfg.max_lag);
    let y = Array1::from_iter(target[cfg.max_lag.min(target.len())..].iter().copied());
    let rows = y.len();
    let n_val = ((rows as f64) * cfg.val_fraction).floor() as usize;
    let n_fit = rows - n_val;
    if n_fit < 3 || n_val == 0 {
        return Err(Error::InvalidInput(format!(
            "{} points are too few for max_lag {} with a validation slice",
            target.len(),
            cfg.max_lag
        )));
    }
    let mut x = Array2::zeros(design.dim());
    for (j, col) in design.axis_iter(Axis(1)).enumerate() {
        let fit = col.slice(ndarray::s![..n_fit]);
        let mean = fit.mean().unwrap_or(0.0);
        let std = fit.std(0.0);
        x.column_mut(j).assign(&standardize(col, mean, std));
    }
    let fit_y = y.slice(ndarray::s![..n_fit]);
    let (ym, ys) = (fit_y.mean().unwrap_or(0.0), fit_y.std(0.0));
    let y = standardize(y.view(), ym, if ys > 0.0 { ys } else { 1.0 });
    let (x_fit, y_fit) = (x.slice(ndarray::s![..n_fit, ..]).to_owned(), y.slice(ndarray::s![..n_fit]).to_owned());
    let (x_val, y_val) = (x.slice(ndarray::s![n_fit.., ..]).to_owned(), y.slice(ndarray::s![n_fit..]).to_owned());

    let mut grid = match &cfg.lambda_grid {
        Some(g) => g.clone(),
        None => lambda_grid(lambda_max(&x_fit, &y_fit), cfg.n_lambdas, cfg.min_ratio),
    };
    grid.sort_by(|a, b| b.total_cmp(a));
    let mut warm: Option<Array1<f64>> = None;
    let mut best: Option<(f64, LassoFit)> = None;
    for &lambda in &grid {
        let fit = lasso_fit(&x_fit, &y_fit, lambda, cfg.max_iter, cfg.tol, warm.as_ref())?;
        let pred = x_val.dot(&fit.coef) + fit.intercept;
        let mse = (&y_val - &pred).mapv(|v| v * v).mean().unwrap_or(f64::INFINITY);
        warm = Some(fit.coef.clone());
        if best.as_ref().is_none_or(|(b, _)| mse < *b) {
            best = Some((mse, fit));
        }
    }
    let (val_mse, fit) = best.ok_or_else(|| Error::InvalidInput("empty lambda grid".into()))?;
    let scores = lag_scores(&fit.coef, covariates.len(), cfg.max_lag);
    let mut ranking: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
    ranking.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(LassoImportance {
        ranking,
        scores,
        lambda: fit.lambda,
        val_mse,
    })
}

/// `Σ_lags |coef|` per covariate for a coefficient vector laid out as in
/// [`lag_design`].
pub fn lag_scores(coef: &Array1<f64>, n_covariates: usize, max_lag: usize) -> Vec<f64> {
    (0..n_covariates)
        .map(|c| coef.slice(ndarray::s![c * max_lag..(c + 1) * max_lag]).mapv(f64::abs).sum())
        .collect()
}
