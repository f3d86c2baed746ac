//! Timestamped multichannel series, preprocessing and window emission.

mod impute;
mod load;
mod norm;
mod split;
mod window;

pub use impute::{forward_fill, forward_fill_series, FillReport, Gap};
pub use load::{load_frame, parse_frequency, parse_timestamp, write_frame, DatasetSchema};
pub use norm::{fit_apply_norm, ChannelStats, NormStats, STD_FLOOR};
pub use split::{chrono_split, SplitSpec};
pub use window::{make_windows, window_at, FutureCovMode, WindowSample, WindowSpec};

use chrono::{NaiveDateTime, TimeDelta};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a channel takes part in forecasting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelRole {
    Target,
    /// Observed over the lookback only.
    PastCovariate,
    /// Known over the horizon at issue time.
    FutureCovariate,
    /// Contributes its history to the past pathway and its horizon segment
    /// to the future pathway.
    Covariate,
}

impl ChannelRole {
    pub fn is_target(self) -> bool {
        self == ChannelRole::Target
    }

    pub fn has_past(self) -> bool {
        matches!(self, ChannelRole::PastCovariate | ChannelRole::Covariate)
    }

    pub fn has_future(self) -> bool {
        matches!(self, ChannelRole::FutureCovariate | ChannelRole::Covariate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub name: String,
    pub role: ChannelRole,
    pub values: Vec<f64>,
}

impl Channel {
    pub fn new(name: impl Into<String>, role: ChannelRole, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            role,
            values,
        }
    }
}

/// A timestamp-indexed multichannel series at a fixed frequency.
///
/// Missing observations are stored as `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFrame {
    start: NaiveDateTime,
    frequency: TimeDelta,
    len: usize,
    channels: Vec<Channel>,
}

impl SeriesFrame {
    pub fn new(start: NaiveDateTime, frequency: TimeDelta, channels: Vec<Channel>) -> Result<Self> {
        if frequency <= TimeDelta::zero() {
            return Err(Error::InvalidInput("frequency must be positive".into()));
        }
        let len = channels.first().map_or(0, |c| c.values.len());
        if let Some(c) = channels.iter().find(|c| c.values.len() != len) {
            return Err(Error::Shape(format!(
                "channel {} has {} values, expected {len}",
                c.name,
                c.values.len()
            )));
        }
        if !channels.iter().any(|c| c.role.is_target()) {
            return Err(Error::Schema("at least one target channel is required".into()));
        }
        for (i, c) in channels.iter().enumerate() {
            if channels[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::Schema(format!("duplicate channel {}", c.name)));
            }
        }
        Ok(Self {
            start,
            frequency,
            len,
            channels,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn start(&self) -> NaiveDateTime {
        self.start
    }

    pub fn frequency(&self) -> TimeDelta {
        self.frequency
    }

    pub fn timestamp(&self, row: usize) -> NaiveDateTime {
        self.start + self.frequency * row as i32
    }

    pub fn timestamps(&self) -> impl Iterator<Item = NaiveDateTime> + '_ {
        (0..self.len).map(|i| self.timestamp(i))
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn channels_mut(&mut self) -> &mut [Channel] {
        &mut self.channels
    }

    pub fn channel(&self, name: &str) -> Option<&Channel> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn targets(&self) -> impl Iterator<Item = &Channel> {
        self.channels.iter().filter(|c| c.role.is_target())
    }

    pub fn past_covariates(&self) -> impl Iterator<Item = &Channel> {
        self.channels.iter().filter(|c| c.role.has_past())
    }

    pub fn future_covariates(&self) -> impl Iterator<Item = &Channel> {
        self.channels.iter().filter(|c| c.role.has_future())
    }

    pub fn covariates(&self) -> impl Iterator<Item = &Channel> {
        self.channels.iter().filter(|c| !c.role.is_target())
    }

    /// `C`.
    pub fn n_targets(&self) -> usize {
        self.targets().count()
    }

    /// `Mp`.
    pub fn n_past(&self) -> usize {
        self.past_covariates().count()
    }

    /// `Mf`.
    pub fn n_future(&self) -> usize {
        self.future_covariates().count()
    }

    /// Rows `[start, end)` as a new frame.
    pub fn slice(&self, start: usize, end: usize) -> SeriesFrame {
        assert!(start <= end && end <= self.len, "slice out of range");
        SeriesFrame {
            start: self.timestamp(start),
            frequency: self.frequency,
            len: end - start,
            channels: self
                .channels
                .iter()
                .map(|c| Channel::new(c.name.clone(), c.role, c.values[start..end].to_vec()))
                .collect(),
        }
    }

    /// Same frame with every covariate removed.
    pub fn without_covariates(&self) -> SeriesFrame {
        SeriesFrame {
            channels: self.targets().cloned().collect(),
            ..self.clone()
        }
    }
}
