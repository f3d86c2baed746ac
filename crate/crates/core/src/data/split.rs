use serde::{Deserialize, Serialize};

use super::SeriesFrame;
use crate::error::{Error, Result};

/// Chronological train/validation/test proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Config(format!("split ratios must be non-negative: {self:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1: {self:?}")));
        }
        Ok(())
    }

    /// `(train, val, test)` row counts: train and val are floored, test
    /// takes the remainder.
    pub fn lengths(&self, n: usize) -> (usize, usize, usize) {
        // the epsilon keeps exact products such as 0.7 * 10 from flooring to 6
        let floor = |ratio: f64| ((ratio * n as f64) + 1e-9).floor() as usize;
        let train = floor(self.train).min(n);
        let val = floor(self.val).min(n - train);
        (train, val, n - train - val)
    }
}

/// Contiguous chronological split. Each part must hold at least
/// `window_len` rows (pass `0` to skip the check).
pub fn chrono_split(frame: &SeriesFrame, spec: &SplitSpec, window_len: usize) -> Result<(SeriesFrame, SeriesFrame, SeriesFrame)> {
    spec.validate()?;
    let (train, val, test) = spec.lengths(frame.len());
    for (name, len) in [("train", train), ("val", val), ("test", test)] {
        if len < window_len {
            return Err(Error::SplitTooSmall {
                split: name,
                len,
                needed: window_len,
            });
        }
    }
    Ok((
        frame.slice(0, train),
        frame.slice(train, train + val),
        frame.slice(train + val, frame.len()),
    ))
}
