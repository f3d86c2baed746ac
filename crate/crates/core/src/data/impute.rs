use super::SeriesFrame;

/// A run of missing values: `len` steps starting at `start`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gap {
    pub channel: String,
    pub start: usize,
    pub len: usize,
    /// Nothing precedes the gap, so it cannot be filled.
    pub leading: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FillReport {
    pub frame: SeriesFrame,
    /// Gaps left in place because they were too long or leading.
    pub unfilled: Vec<Gap>,
}

/// Forward-fills runs of at most `max_gap` missing values in place and
/// returns `(start, len, leading)` for every run that was left missing.
pub fn forward_fill_series(values: &mut [f64], max_gap: usize) -> Vec<(usize, usize, bool)> {
    let mut unfilled = Vec::new();
    let mut i = 0;
    while i < values.len() {
        if !values[i].is_nan() {
            i += 1;
            continue;
        }
        let start = i;
        while i < values.len() && values[i].is_nan() {
            i += 1;
        }
        let len = i - start;
        if start == 0 {
            unfilled.push((start, len, true));
        } else if len > max_gap {
            unfilled.push((start, len, false));
        } else {
            let last = values[start - 1];
            values[start..i].fill(last);
        }
    }
    unfilled
}

/// Forward-fills short covariate gaps. Target channels are never touched:
/// a missing target invalidates the windows that contain it.
pub fn forward_fill(frame: &SeriesFrame, max_gap: usize) -> FillReport {
    let mut frame = frame.clone();
    let mut unfilled = Vec::new();
    for channel in frame.channels_mut() {
        if channel.role.is_target() {
            continue;
        }
        for (start, len, leading) in forward_fill_series(&mut channel.values, max_gap) {
            unfilled.push(Gap {
                channel: channel.name.clone(),
                start,
                len,
                leading,
            });
        }
    }
    FillReport { frame, unfilled }
}
