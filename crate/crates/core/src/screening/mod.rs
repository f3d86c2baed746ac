//! Covariate screening before training: daytime-masked Pearson
//! correlation, Granger causality and Lasso lag importance.

mod granger;
mod lasso;
mod pearson;

pub use granger::{granger_test, ols_rss, GrangerResult};
pub use lasso::{
    lag_design, lag_scores, lambda_grid, lambda_max, lasso_fit, lasso_lag_importance, LassoConfig, LassoFit,
    LassoImportance,
};
pub use pearson::{daytime_mask, masked_pearson, DaytimeRule};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{ChannelRole, SeriesFrame};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScreeningConfig {
    pub max_lag: usize,
    pub alpha: f64,
    pub daytime: DaytimeRule,
    pub lasso: LassoConfig,
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        Self {
            max_lag: 24,
            alpha: 0.05,
            daytime: DaytimeRule::All,
            lasso: LassoConfig::default(),
        }
    }
}

/// Screening outcome for one (target, covariate) pair. Failed tests leave
/// their value empty and record why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateScreen {
    pub target: String,
    pub covariate: String,
    pub role: ChannelRole,
    pub pearson_r: Option<f64>,
    pub pearson_mask: String,
    pub granger: Option<GrangerResult>,
    pub lasso_score: Option<f64>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningReport {
    pub entries: Vec<CovariateScreen>,
    pub lasso_lambda: Vec<(String, f64)>,
}

/// Ranking method for [`ScreeningReport::ranking`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Pearson,
    Granger,
    Lasso,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Pearson, Method::Granger, Method::Lasso];

    fn label(self) -> &'static str {
        match self {
            Method::Pearson => "pearson |r|",
            Method::Granger => "granger F",
            Method::Lasso => "lasso sum |coef|",
        }
    }
}

impl ScreeningReport {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(target, covariate, score)` in descending score order; pairs whose
    /// test failed are left out.
    pub fn ranking(&self, method: Method) -> Vec<(&str, &str, f64)> {
        let mut rows: Vec<_> = self
            .entries
            .iter()
            .filter_map(|e| {
                let score = match method {
                    Method::Pearson => e.pearson_r.map(f64::abs),
                    Method::Granger => e.granger.as_ref().map(|g| g.f_stat),
                    Method::Lasso => e.lasso_score,
                }?;
                Some((e.target.as_str(), e.covariate.as_str(), score))
            })
            .collect();
        rows.sort_by(|a, b| a.0.cmp(b.0).then(b.2.total_cmp(&a.2)).then(a.1.cmp(b.1)));
        rows
    }

    /// One record per pair, comma-separated with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "target,covariate,role,pearson_r,pearson_mask,granger_f,granger_p,granger_lag,granger_reject,lasso_score,notes\n",
        );
        let opt = |v: Option<f64>| v.map(|v| format!("{v}")).unwrap_or_default();
        for e in &self.entries {
            let g = e.granger.as_ref();
            let _ = writeln!(
                out,
                "{},{},{},{},\"{}\",{},{},{},{},{},\"{}\"",
                e.target,
                e.covariate,
                serde_json::to_value(e.role).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
                opt(e.pearson_r),
                e.pearson_mask,
                opt(g.map(|g| g.f_stat)),
                opt(g.map(|g| g.p_value)),
                g.map(|g| g.max_lag.to_string()).unwrap_or_default(),
                g.map(|g| g.reject.to_string()).unwrap_or_default(),
                opt(e.lasso_score),
                e.notes.join("; ").replace('"', "'"),
            );
        }
        out
    }

    /// Human-readable ranking tables, one section per method.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        if self.entries.is_empty() {
            out.push_str("no covariates to screen\n");
            return out;
        }
        for method in Method::ALL {
            let rows = self.ranking(method);
            let _ = writeln!(out, "== ranking by {} ==", method.label());
            let w = rows.iter().map(|r| r.1.len()).max().unwrap_or(9).max(9);
            let _ = writeln!(out, "{:<4} {:<12} {:<w$} {:>12}", "rank", "target", "covariate", "score");
            for (i, (t, c, s)) in rows.iter().enumerate() {
                let _ = writeln!(out, "{:<4} {:<12} {:<w$} {:>12.6}", i + 1, t, c, s);
            }
            out.push('\n');
        }
        out
    }
}

/// Screens every covariate against every target. Individual test failures
/// are recorded in the entry notes; the report is always produced.
pub fn screen(frame: &SeriesFrame, cfg: &ScreeningConfig) -> Result<ScreeningReport> {
    let mask = daytime_mask(frame, &cfg.daytime)?;
    let covariates: Vec<_> = frame.covariates().collect();
    let mut entries = Vec::new();
    let mut lambdas = Vec::new();
    for target in frame.targets() {
        let y = &target.values;
        let lasso_inputs: Vec<&[f64]> = covariates.iter().map(|c| c.values.as_slice()).collect();
        let lasso_cfg = LassoConfig {
            max_lag: cfg.max_lag,
            ..cfg.lasso.clone()
        };
        let lasso = lasso_lag_importance(&lasso_inputs, y, &lasso_cfg);
        if let Ok(imp) = &lasso {
            lambdas.push((target.name.clone(), imp.lambda));
        }
        for (k, cov) in covariates.iter().enumerate() {
            let mut notes = Vec::new();
            let finite: Vec<bool> = mask
                .iter()
                .zip(cov.values.iter().zip(y))
                .map(|(m, (a, b))| *m && a.is_finite() && b.is_finite())
                .collect();
            let pearson_r = masked_pearson(&cov.values, y, &finite)
                .map_err(|e| notes.push(format!("pearson skipped: {e}")))
                .ok();
            let granger = granger_test(&cov.values, y, cfg.max_lag, cfg.alpha)
                .map_err(|e| notes.push(format!("granger skipped: {e}")))
                .ok();
            let lasso_score = match &lasso {
                Ok(imp) => Some(imp.scores[k]),
                Err(e) => {
                    notes.push(format!("lasso skipped: {e}"));
                    None
                }
            };
            entries.push(CovariateScreen {
                target: target.name.clone(),
                covariate: cov.name.clone(),
                role: cov.role,
                pearson_r,
                pearson_mask: cfg.daytime.describe(),
                granger,
                lasso_score,
                notes,
            });
        }
    }
    Ok(ScreeningReport {
        entries,
        lasso_lambda: lambdas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Channel;
    use chrono::{NaiveDate, TimeDelta};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn frame(n: usize) -> SeriesFrame {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut draw = || -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
        let driver = draw();
        let noise = draw();
        let other = draw();
        let y = (0..n).map(|t| if t == 0 { 0.0 } else { 0.9 * driver[t - 1] + 0.3 * noise[t] }).collect();
        let start = NaiveDate::from_ymd_opt(2022, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        SeriesFrame::new(
            start,
            TimeDelta::hours(1),
            vec![
                Channel::new("y", ChannelRole::Target, y),
                Channel::new("noise", ChannelRole::PastCovariate, other),
                Channel::new("driver", ChannelRole::Covariate, driver),
            ],
        )
        .unwrap()
    }

    #[test]
    fn report_ranks_driver_first_in_granger_and_lasso() {
        let cfg = ScreeningConfig {
            max_lag: 4,
            ..ScreeningConfig::default()
        };
        let report = screen(&frame(800), &cfg).unwrap();
        assert_eq!(report.entries.len(), 2);
        assert_eq!(report.ranking(Method::Granger)[0].1, "driver");
        assert_eq!(report.ranking(Method::Lasso)[0].1, "driver");
        let table = report.to_table();
        assert_eq!(table.matches("== ranking by").count(), 3);
        assert_eq!(report.to_csv().lines().count(), 3);
    }

    #[test]
    fn short_series_records_skip_reason() {
        let cfg = ScreeningConfig::default();
        let report = screen(&frame(40), &cfg).unwrap();
        assert!(report.entries.iter().all(|e| e.granger.is_none()));
        assert!(report.entries[0].notes.iter().any(|n| n.starts_with("granger skipped")));
    }

    #[test]
    fn covariate_free_frame_gives_empty_report() {
        let f = frame(100).without_covariates();
        let report = screen(&f, &ScreeningConfig::default()).unwrap();
        assert!(report.is_empty());
        assert!(report.to_table().contains("no covariates"));
    }
}
