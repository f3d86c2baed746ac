use chrono::Timelike;
use serde::{Deserialize, Serialize};

use crate::data::SeriesFrame;
use crate::error::{Error, Result};

/// Sample Pearson correlation over the indices where `mask` is set.
///
/// Fails with [`Error::UndefinedCorrelation`] when either series is
/// constant on the mask, rather than returning `NaN`.
pub fn masked_pearson(x: &[f64], y: &[f64], mask: &[bool]) -> Result<f64> {
    if x.len() != y.len() || x.len() != mask.len() {
        return Err(Error::Shape(format!(
            "pearson inputs differ in length: x {}, y {}, mask {}",
            x.len(),
            y.len(),
            mask.len()
        )));
    }
    let pairs: Vec<(f64, f64)> = (0..x.len()).filter(|&i| mask[i]).map(|i| (x[i], y[i])).collect();
    if pairs.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "pearson needs at least 3 masked-in points, got {}",
            pairs.len()
        )));
    }
    if pairs.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(Error::NonFinite("pearson input is not finite on the mask".into()));
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in &pairs {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(format!(
            "zero variance on the mask ({} points)",
            pairs.len()
        )));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// How daytime rows are picked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DaytimeRule {
    /// Rows where an irradiance channel exceeds `threshold`.
    Irradiance { channel: String, threshold: f64 },
    /// Rows whose clock hour lies in `[start_hour, end_hour)`.
    Clock { start_hour: u32, end_hour: u32 },
    /// Every row.
    All,
}

impl Default for DaytimeRule {
    fn default() -> Self {
        DaytimeRule::Clock {
            start_hour: 6,
            end_hour: 18,
        }
    }
}

impl DaytimeRule {
    pub fn describe(&self) -> String {
        match self {
            DaytimeRule::Irradiance { channel, threshold } => format!("{channel} > {threshold}"),
            DaytimeRule::Clock { start_hour, end_hour } => format!("hour in [{start_hour}, {end_hour})"),
            DaytimeRule::All => "all rows".into(),
        }
    }
}

pub fn daytime_mask(frame: &SeriesFrame, rule: &DaytimeRule) -> Result<Vec<bool>> {
    match rule {
        DaytimeRule::Irradiance { channel, threshold } => {
            let c = frame
                .channel(channel)
                .ok_or_else(|| Error::Schema(format!("irradiance channel {channel} not in frame")))?;
            Ok(c.values.iter().map(|v| *v > *threshold).collect())
        }
        DaytimeRule::Clock { start_hour, end_hour } => Ok(frame
            .timestamps()
            .map(|t| (*start_hour..*end_hour).contains(&t.hour()))
            .collect()),
        DaytimeRule::All => Ok(vec![true; frame.len()]),
    }
}
