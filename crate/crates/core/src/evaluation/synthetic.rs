use std::f64::consts::TAU;

use chrono::{NaiveDate, TimeDelta};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Channel, ChannelRole, SeriesFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// `y_t = sin(2πt/P) + σε_t`.
    Periodic,
    /// `y_t = sin(2πt/P) + α·d_t + σε_t` with white-noise driver `d` exposed
    /// as a future-known channel.
    PeriodicPlusFutureDriver,
    /// `y_t = 0.9·x_{t−1} + σε_t` with white-noise `x`.
    VarCoupled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub length: usize,
    /// Standard deviation `σ` of the target noise.
    pub noise: f64,
    /// Driver gain `α`.
    pub alpha: f64,
    pub period: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            kind: SyntheticKind::Periodic,
            length: 2000,
            noise: 0.1,
            alpha: 1.0,
            period: 24,
            seed: 0,
        }
    }
}

/// Hourly frame starting 2024-01-01. Channels: `y` (target), plus `driver`
/// (future covariate) or `x` (covariate) depending on the kind.
pub fn gen_synthetic(spec: &SyntheticSpec) -> SeriesFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut normal = |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let n = spec.length;
    let p = spec.period.max(1) as f64;
    let wave = |t: usize| (TAU * t as f64 / p).sin();
    let channels = match spec.kind {
        SyntheticKind::Periodic => {
            let eps = normal(n);
            vec![Channel::new(
                "y",
                ChannelRole::Target,
                (0..n).map(|t| wave(t) + spec.noise * eps[t]).collect(),
            )]
        }
        SyntheticKind::PeriodicPlusFutureDriver => {
            let driver = normal(n);
            let eps = normal(n);
            let y = (0..n).map(|t| wave(t) + spec.alpha * driver[t] + spec.noise * eps[t]).collect();
            vec![
                Channel::new("y", ChannelRole::Target, y),
                Channel::new("driver", ChannelRole::FutureCovariate, driver),
            ]
        }
        SyntheticKind::VarCoupled => {
            let x = normal(n);
            let eps = normal(n);
            let y = (0..n)
                .map(|t| if t == 0 { 0.0 } else { 0.9 * x[t - 1] } + spec.noise * eps[t])
                .collect();
            vec![
                Channel::new("y", ChannelRole::Target, y),
                Channel::new("x", ChannelRole::Covariate, x),
            ]
        }
    };
    let start = NaiveDate::from_ymd_opt(2024, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid date");
    SeriesFrame::new(start, TimeDelta::hours(1), channels).expect("channels share one length")
}
