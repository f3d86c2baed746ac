use log::warn;
use serde::{Deserialize, Serialize};

use super::SeriesFrame;
use crate::error::{Error, Result};

/// Smallest standard deviation used for scaling.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub name: String,
    pub mean: f64,
    /// Population standard deviation, floored at [`STD_FLOOR`].
    pub std: f64,
}

impl ChannelStats {
    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// Per-channel statistics fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub channels: Vec<ChannelStats>,
}

impl NormStats {
    /// Mean and population std of each channel, ignoring `NaN`s.
    pub fn fit(train: &SeriesFrame) -> Result<Self> {
        let mut channels = Vec::with_capacity(train.channels().len());
        for c in train.channels() {
            let observed: Vec<f64> = c.values.iter().copied().filter(|v| v.is_finite()).collect();
            if observed.is_empty() {
                return Err(Error::Empty(format!(
                    "channel {} has no observed values in the training split",
                    c.name
                )));
            }
            let n = observed.len() as f64;
            let mean = observed.iter().sum::<f64>() / n;
            let var = observed.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let mut std = var.sqrt();
            if std < STD_FLOOR {
                warn!("channel {} is constant on the training split; std floored to {STD_FLOOR}", c.name);
                std = STD_FLOOR;
            }
            channels.push(ChannelStats {
                name: c.name.clone(),
                mean,
                std,
            });
        }
        Ok(Self { channels })
    }

    pub fn get(&self, name: &str) -> Option<&ChannelStats> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn apply(&self, frame: &SeriesFrame) -> Result<SeriesFrame> {
        let mut out = frame.clone();
        for c in out.channels_mut() {
            let stats = self
                .get(&c.name)
                .ok_or_else(|| Error::Schema(format!("no normalization statistics for {}", c.name)))?;
            for v in &mut c.values {
                *v = stats.normalize(*v);
            }
        }
        Ok(out)
    }

    pub fn invert(&self, frame: &SeriesFrame) -> Result<SeriesFrame> {
        let mut out = frame.clone();
        for c in out.channels_mut() {
            let stats = self
                .get(&c.name)
                .ok_or_else(|| Error::Schema(format!("no normalization statistics for {}", c.name)))?;
            for v in &mut c.values {
                *v = stats.denormalize(*v);
            }
        }
        Ok(out)
    }
}

/// Fits statistics on `train` alone and applies the same transform to
/// `train` and every frame in `others`.
pub fn fit_apply_norm(train: &SeriesFrame, others: &[&SeriesFrame]) -> Result<(NormStats, SeriesFrame, Vec<SeriesFrame>)> {
    let stats = NormStats::fit(train)?;
    let train_n = stats.apply(train)?;
    let others_n = others.iter().map(|f| stats.apply(f)).collect::<Result<_>>()?;
    Ok((stats, train_n, others_n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Channel, ChannelRole};
    use chrono::{NaiveDate, TimeDelta};
    use proptest::prelude::*;

    fn frame(values: Vec<f64>) -> SeriesFrame {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        SeriesFrame::new(
            start,
            TimeDelta::hours(1),
            vec![Channel::new("y", ChannelRole::Target, values)],
        )
        .unwrap()
    }

    #[test]
    fn population_std_and_train_only_transform() {
        let (stats, _, others) = fit_apply_norm(&frame(vec![0.0, 2.0]), &[&frame(vec![3.0])]).unwrap();
        let s = stats.get("y").unwrap();
        assert_eq!((s.mean, s.std), (1.0, 1.0));
        assert_eq!(others[0].channel("y").unwrap().values, vec![2.0]);
    }

    #[test]
    fn constant_channel_gets_floored_std() {
        let (stats, train, _) = fit_apply_norm(&frame(vec![5.0, 5.0, 5.0]), &[]).unwrap();
        assert_eq!(stats.get("y").unwrap().std, STD_FLOOR);
        assert!(train.channel("y").unwrap().values.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn missing_values_are_ignored_when_fitting() {
        let stats = NormStats::fit(&frame(vec![1.0, f64::NAN, 3.0])).unwrap();
        assert_eq!(stats.get("y").unwrap().mean, 2.0);
    }

    proptest! {
        #[test]
        fn stats_ignore_other_splits(
            train in proptest::collection::vec(-100.0f64..100.0, 2..50),
            test_a in proptest::collection::vec(-100.0f64..100.0, 1..50),
            test_b in proptest::collection::vec(-1e6f64..1e6, 1..50),
        ) {
            let t = frame(train);
            let (a, _, _) = fit_apply_norm(&t, &[&frame(test_a)]).unwrap();
            let (b, _, _) = fit_apply_norm(&t, &[&frame(test_b)]).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn denormalize_inverts_normalize(
            train in proptest::collection::vec(-1e3f64..1e3, 2..50),
            x in -1e4f64..1e4,
        ) {
            let stats = NormStats::fit(&frame(train)).unwrap();
            let s = stats.get("y").unwrap();
            prop_assume!(s.std > 1e-3);
            let back = s.denormalize(s.normalize(x));
            prop_assert!((back - x).abs() <= 1e-10 * x.abs().max(1.0));
        }
    }
}
