use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Channel, SeriesFrame};
use crate::error::{Error, Result};

/// Whether horizon covariates reach the model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FutureCovMode {
    #[default]
    Provided,
    /// `Y_future` is emitted with zero channels.
    Withheld,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub lookback: usize,
    pub horizon: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub future_cov: FutureCovMode,
}

fn one() -> usize {
    1
}

impl WindowSpec {
    pub fn new(lookback: usize, horizon: usize) -> Self {
        Self {
            lookback,
            horizon,
            stride: 1,
            future_cov: FutureCovMode::Provided,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_future_cov(mut self, mode: FutureCovMode) -> Self {
        self.future_cov = mode;
        self
    }

    /// `T + F`.
    pub fn span(&self) -> usize {
        self.lookback + self.horizon
    }

    /// Number of origins a series of length `n` yields, before any
    /// window is dropped for missing values.
    pub fn count(&self, n: usize) -> usize {
        if n < self.span() {
            0
        } else {
            (n - self.span()) / self.stride + 1
        }
    }
}

/// One training or evaluation instance.
///
/// Lookback blocks cover rows `[origin - T, origin)`, horizon blocks cover
/// `[origin, origin + F)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// Row of the first forecast step.
    pub origin: usize,
    /// `C × T`.
    pub x_target: Array2<f64>,
    /// `Mp × T`.
    pub x_past: Array2<f64>,
    /// `Mf × F`.
    pub y_future: Array2<f64>,
    /// `C × F`.
    pub y_target: Array2<f64>,
}

impl WindowSample {
    pub fn lookback(&self) -> usize {
        self.x_target.ncols()
    }

    pub fn horizon(&self) -> usize {
        self.y_target.ncols()
    }

    /// Drops every covariate block.
    pub fn without_covariates(&self) -> WindowSample {
        WindowSample {
            x_past: Array2::zeros((0, self.lookback())),
            y_future: Array2::zeros((0, self.horizon())),
            ..self.clone()
        }
    }

    /// Drops the horizon covariates only.
    pub fn without_future(&self) -> WindowSample {
        WindowSample {
            y_future: Array2::zeros((0, self.horizon())),
            ..self.clone()
        }
    }
}

fn block<'a>(channels: impl Iterator<Item = &'a Channel>, start: usize, end: usize) -> Array2<f64> {
    let rows: Vec<&Channel> = channels.collect();
    let mut out = Array2::zeros((rows.len(), end - start));
    for (i, c) in rows.iter().enumerate() {
        for (j, v) in c.values[start..end].iter().enumerate() {
            out[[i, j]] = *v;
        }
    }
    out
}

/// Sliding windows at origins `T, T + stride, ...`. Windows with a
/// non-finite value in any emitted block are skipped.
pub fn make_windows(frame: &SeriesFrame, spec: &WindowSpec) -> Result<Vec<WindowSample>> {
    if spec.lookback == 0 || spec.horizon == 0 || spec.stride == 0 {
        return Err(Error::InvalidInput(format!(
            "lookback, horizon and stride must be positive: {spec:?}"
        )));
    }
    let mut out = Vec::with_capacity(spec.count(frame.len()));
    for k in 0..spec.count(frame.len()) {
        let origin = spec.lookback + k * spec.stride;
        let (lo, hi) = (origin - spec.lookback, origin + spec.horizon);
        let y_future = match spec.future_cov {
            FutureCovMode::Provided => block(frame.future_covariates(), origin, hi),
            FutureCovMode::Withheld => Array2::zeros((0, spec.horizon)),
        };
        let sample = WindowSample {
            origin,
            x_target: block(frame.targets(), lo, origin),
            x_past: block(frame.past_covariates(), lo, origin),
            y_future,
            y_target: block(frame.targets(), origin, hi),
        };
        let finite = [&sample.x_target, &sample.x_past, &sample.y_future, &sample.y_target]
            .iter()
            .all(|a| a.iter().all(|v| v.is_finite()));
        if finite {
            out.push(sample);
        }
    }
    Ok(out)
}

/// The window whose first forecast step is row `origin`. Unlike
/// [`make_windows`] the horizon may run past the end of the frame and hold
/// missing targets; those cells of `y_target` are `NaN`.
pub fn window_at(frame: &SeriesFrame, origin: usize, spec: &WindowSpec) -> Result<WindowSample> {
    if origin < spec.lookback {
        return Err(Error::InvalidInput(format!(
            "history holds {origin} rows before the forecast origin, the model needs {}",
            spec.lookback
        )));
    }
    let lo = origin - spec.lookback;
    let hi = origin + spec.horizon;
    let y_future = match spec.future_cov {
        FutureCovMode::Withheld => Array2::zeros((0, spec.horizon)),
        FutureCovMode::Provided if frame.n_future() == 0 => Array2::zeros((0, spec.horizon)),
        FutureCovMode::Provided => {
            let available = frame.len().saturating_sub(origin);
            if available < spec.horizon {
                return Err(Error::InvalidInput(format!(
                    "future covariates cover {available} of the {} horizon steps",
                    spec.horizon
                )));
            }
            block(frame.future_covariates(), origin, hi)
        }
    };
    let mut y_target = Array2::from_elem((frame.n_targets(), spec.horizon), f64::NAN);
    let end = hi.min(frame.len());
    if end > origin {
        y_target
            .slice_mut(ndarray::s![.., ..end - origin])
            .assign(&block(frame.targets(), origin, end));
    }
    let sample = WindowSample {
        origin,
        x_target: block(frame.targets(), lo, origin),
        x_past: block(frame.past_covariates(), lo, origin),
        y_future,
        y_target,
    };
    for (name, a) in [("target history", &sample.x_target), ("past covariates", &sample.x_past), ("future covariates", &sample.y_future)] {
        if let Some(pos) = a.iter().position(|v| !v.is_finite()) {
            let col = pos % a.ncols();
            let row = if name == "future covariates" { origin + col } else { lo + col };
            return Err(Error::NonFinite(format!("{name} missing at row {row}")));
        }
    }
    Ok(sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ChannelRole;
    use chrono::{NaiveDate, TimeDelta};
    use proptest::prelude::*;

    fn frame(n: usize) -> SeriesFrame {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let idx = |offset: f64| (0..n).map(|i| i as f64 + offset).collect::<Vec<_>>();
        SeriesFrame::new(
            start,
            TimeDelta::hours(1),
            vec![
                Channel::new("y", ChannelRole::Target, idx(0.0)),
                Channel::new("sensor", ChannelRole::PastCovariate, idx(0.25)),
                Channel::new("wind", ChannelRole::FutureCovariate, idx(0.5)),
                Channel::new("load", ChannelRole::Covariate, idx(0.75)),
            ],
        )
        .unwrap()
    }

    fn enumerate(n: usize, t: usize, f: usize, stride: usize) -> usize {
        let mut origin = t;
        let mut count = 0;
        while origin + f <= n {
            count += 1;
            origin += stride;
        }
        count
    }

    #[test]
    fn counts() {
        let f = frame(1000);
        assert_eq!(make_windows(&f, &WindowSpec::new(168, 24)).unwrap().len(), 809);
        assert_eq!(make_windows(&frame(192), &WindowSpec::new(168, 24)).unwrap().len(), 1);
        let strided = make_windows(&f, &WindowSpec::new(168, 24).with_stride(24)).unwrap();
        assert_eq!(strided.len(), enumerate(1000, 168, 24, 24));
        assert_eq!(strided.len(), 34);
    }

    #[test]
    fn block_shapes_and_roles() {
        let w = &make_windows(&frame(50), &WindowSpec::new(8, 4)).unwrap()[0];
        assert_eq!(w.x_target.dim(), (1, 8));
        assert_eq!(w.x_past.dim(), (2, 8));
        assert_eq!(w.y_future.dim(), (2, 4));
        assert_eq!(w.y_target.dim(), (1, 4));
        assert_eq!(w.x_past[[0, 0]], 0.25);
        assert_eq!(w.x_past[[1, 0]], 0.75);
        assert_eq!(w.y_future[[0, 0]], 8.5);
        assert_eq!(w.y_future[[1, 0]], 8.75);
    }

    #[test]
    fn withheld_mode_empties_future_block() {
        let spec = WindowSpec::new(8, 4).with_future_cov(FutureCovMode::Withheld);
        let w = &make_windows(&frame(50), &spec).unwrap()[0];
        assert_eq!(w.y_future.dim(), (0, 4));
        assert_eq!(w.x_past.dim(), (2, 8));
    }

    #[test]
    fn missing_target_drops_window() {
        let mut f = frame(30);
        f.channels_mut()[0].values[10] = f64::NAN;
        let ws = make_windows(&f, &WindowSpec::new(8, 4)).unwrap();
        assert!(ws.iter().all(|w| !(w.origin - 8..w.origin + 4).contains(&10)));
        assert_eq!(ws.len(), 19 - 11);
    }

    #[test]
    fn window_at_tolerates_open_horizon() {
        let f = frame(20);
        let w = window_at(&f, 18, &WindowSpec::new(8, 4).with_future_cov(FutureCovMode::Withheld)).unwrap();
        assert_eq!(w.y_target[[0, 1]], 19.0);
        assert!(w.y_target[[0, 2]].is_nan());
        assert!(window_at(&f, 18, &WindowSpec::new(8, 4)).is_err());
        assert_eq!(window_at(&f, 16, &WindowSpec::new(8, 4)).unwrap(), make_windows(&f, &WindowSpec::new(8, 4)).unwrap()[8]);
        assert!(matches!(window_at(&f, 5, &WindowSpec::new(8, 4)), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn zero_stride_rejected() {
        assert!(make_windows(&frame(30), &WindowSpec::new(8, 4).with_stride(0)).is_err());
    }

    proptest! {
        #[test]
        fn windows_stay_time_aligned(n in 10usize..200, t in 1usize..20, f in 1usize..10, stride in 1usize..7) {
            let ws = make_windows(&frame(n), &WindowSpec::new(t, f).with_stride(stride)).unwrap();
            prop_assert_eq!(ws.len(), enumerate(n, t, f, stride));
            for w in &ws {
                for j in 0..t {
                    let row = (w.origin - t + j) as f64;
                    prop_assert_eq!(w.x_target[[0, j]], row);
                    prop_assert_eq!(w.x_past[[0, j]] - 0.25, row);
                }
                for j in 0..f {
                    let row = (w.origin + j) as f64;
                    prop_assert_eq!(w.y_target[[0, j]], row);
                    prop_assert_eq!(w.y_future[[0, j]] - 0.5, row);
                }
            }
        }
    }
}
