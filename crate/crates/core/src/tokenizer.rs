//! Period-aware patching and the linear embedding of future-known
//! covariate patches.
//!
//! A series of length `L` is cut into `ceil(L / P)` consecutive patches of
//! one cycle each. When `P` does not divide `L`, the series is left-padded by
//! repeating its earliest value so that the most recent patch is always
//! complete; the padded positions are recorded in the grid's mask.

use ndarray::{Array2, Array3, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How future-covariate tokens are matched to the backbone's horizon tokens
/// when their patch lengths differ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenAlignment {
    /// Token counts must agree exactly.
    #[default]
    Strict,
    /// Backbone token `j` takes the covariate token whose span starts
    /// closest to it: `floor(j * O_star / O)`.
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchConfig {
    /// Cycle length for targets and past covariates.
    pub period: usize,
    /// Patch length for future-known covariates; defaults to `period`.
    #[serde(default)]
    pub future_period: Option<usize>,
    #[serde(default)]
    pub alignment: TokenAlignment,
}

impl PatchConfig {
    pub fn new(period: usize) -> Self {
        Self {
            period,
            future_period: None,
            alignment: TokenAlignment::Strict,
        }
    }

    pub fn future_period(&self) -> usize {
        self.future_period.unwrap_or(self.period)
    }

    pub fn validate(&self) -> Result<()> {
        if self.period == 0 || self.future_period() == 0 {
            return Err(Error::Config("patch lengths must be at least 1".into()));
        }
        Ok(())
    }
}

/// Number of patches needed to cover `len` steps.
pub fn token_count(len: usize, period: usize) -> usize {
    len.div_ceil(period)
}

/// Patches of one or more channels: `values[[channel, offset, patch]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub values: Array3<f64>,
    /// `pad_mask[[offset, patch]]` is `true` for padded positions.
    pub pad_mask: Array2<bool>,
}

impl PatchGrid {
    pub fn num_patches(&self) -> usize {
        self.values.dim().2
    }

    pub fn patch_len(&self) -> usize {
        self.values.dim().1
    }

    pub fn pad_len(&self) -> usize {
        self.pad_mask.iter().filter(|m| **m).count()
    }
}

/// Left padding needed so that `len` becomes a multiple of `period`.
pub fn pad_len(len: usize, period: usize) -> usize {
    token_count(len, period) * period - len
}

/// Cuts one series into patches. Panics if the series is empty or
/// `period == 0`.
pub fn patch(series: ArrayView1<f64>, period: usize) -> PatchGrid {
    patch_channels(series.insert_axis(ndarray::Axis(0)), period)
}

/// Patches every row of a `channels × L` matrix with a shared mask.
pub fn patch_channels(series: ArrayView2<f64>, period: usize) -> PatchGrid {
    let (channels, len) = series.dim();
    assert!(len >= 1, "cannot patch an empty series");
    assert!(period >= 1, "period must be at least 1");
    let n = token_count(len, period);
    let pad = pad_len(len, period);
    let mut values = Array3::zeros((channels, period, n));
    let mut pad_mask = Array2::from_elem((period, n), false);
    for pos in 0..n * period {
        let (patch_idx, offset) = (pos / period, pos % period);
        pad_mask[[offset, patch_idx]] = pos < pad;
    }
    for c in 0..channels {
        let row = series.row(c);
        for pos in 0..n * period {
            let src = pos.saturating_sub(pad);
            values[[c, pos % period, pos / period]] = row[src];
        }
    }
    PatchGrid { values, pad_mask }
}

/// Flattened patches of one series as `num_patches × period` rows, the layout
/// consumed by the input projection.
pub fn patch_rows(series: ArrayView1<f64>, period: usize) -> Array2<f64> {
    let len = series.len();
    let n = token_count(len, period);
    let pad = pad_len(len, period);
    Array2::from_shape_fn((n, period), |(p, o)| {
        let pos = p * period + o;
        series[pos.saturating_sub(pad)]
    })
}

/// Future-covariate embeddings `f[[m, :, j]] = W_f · patch(m, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FutureCovEmbedding {
    /// `Mf × D × O`.
    pub tokens: Array3<f64>,
}

/// Maps covariate token indices onto backbone token indices.
pub fn align_tokens(
    covariate_tokens: usize,
    backbone_tokens: usize,
    alignment: TokenAlignment,
) -> Result<Vec<usize>> {
    if covariate_tokens == backbone_tokens {
        return Ok((0..backbone_tokens).collect());
    }
    match alignment {
        TokenAlignment::Strict => Err(Error::Shape(format!(
            "future covariates produce {covariate_tokens} tokens but the backbone decodes {backbone_tokens}; \
             set alignment = \"nearest\" or make the patch lengths equal"
        ))),
        TokenAlignment::Nearest => Ok((0..backbone_tokens)
            .map(|j| (j * covariate_tokens) / backbone_tokens)
            .collect()),
    }
}

/// Embeds each future-covariate patch into the latent space.
///
/// `future` is `Mf × F`, `weight` is `D × P_star`. The number of output
/// tokens equals `backbone_tokens`; see [`align_tokens`].
pub fn embed_future_cov(
    future: ArrayView2<f64>,
    cfg: &PatchConfig,
    weight: ArrayView2<f64>,
    backbone_tokens: usize,
) -> Result<FutureCovEmbedding> {
    let (mf, horizon) = future.dim();
    let p_star = cfg.future_period();
    if horizon == 0 {
        return Err(Error::InvalidInput("future covariate horizon is empty".into()));
    }
    if weight.ncols() != p_star {
        return Err(Error::Shape(format!(
            "W_f has {} columns, expected patch length {p_star}",
            weight.ncols()
        )));
    }
    let d = weight.nrows();
    let o_star = token_count(horizon, p_star);
    let map = align_tokens(o_star, backbone_tokens, cfg.alignment)?;
    let mut tokens = Array3::zeros((mf, d, backbone_tokens));
    for m in 0..mf {
        let patches = patch_rows(future.row(m), p_star);
        for (j, &src) in map.iter().enumerate() {
            let e = weight.dot(&patches.row(src));
            tokens.slice_mut(ndarray::s![m, .., j]).assign(&e);
        }
    }
    Ok(FutureCovEmbedding { tokens })
}
