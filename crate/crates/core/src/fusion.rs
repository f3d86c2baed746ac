//! Two-stage post-decoder covariate fusion.
//!
//! For every horizon token `j`:
//!
//! 1. the decoded target tokens and past-covariate tokens are concatenated
//!    along the variable axis and flattened, `u1_j ∈ R^{(C+Mp)·D}`, then
//!    `h_j = MLP_past(LayerNorm(u1_j))`;
//! 2. `h_j` is concatenated with the embedded future-known covariate
//!    patches, `u2_j = [h_j ‖ f_{1,j} ‖ … ‖ f_{Mf,j}] ∈ R^{(1+Mf)·D}`, then
//!    `r_j = MLP_future(LayerNorm(u2_j))`.
//!
//! The refined tokens `R = [r_1 … r_O]` are shared by every target and tiled
//! along the variable axis before going through the shared output head as an
//! additive residual.
//!
//! The last layer of `MLP_future` starts at zero, so a freshly attached
//! plug-in reproduces the backbone forecast exactly.

use ndarray::{s, Array2, Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape, Var};
use crate::backbone::DecodedTokens;
use crate::error::{Error, Result};
use crate::layers::{Activation, LayerNorm, Linear, Mlp};
use crate::params::{ParamGroup, ParamStore};
use crate::tokenizer::{align_tokens, patch_rows, token_count, PatchConfig};

/// What stage 2 does when there are no future-known covariates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MfZeroMode {
    /// Run `MLP_future` on `h_j` alone (input width `D`).
    #[default]
    Apply,
    /// Skip stage 2 and use `R = H`.
    Bypass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    /// Hidden width `D_h`; `None` means `D / 4`.
    pub hidden: Option<usize>,
    /// Number of linear layers `L` in each MLP.
    pub depth: usize,
    pub activation: Activation,
    /// Zero-initialize the last layer of `MLP_future`.
    pub zero_init: bool,
    pub mf_zero_mode: MfZeroMode,
    /// Include the head bias when projecting the refined tokens.
    pub residual_head_bias: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            hidden: None,
            depth: 1,
            activation: Activation::Gelu,
            zero_init: true,
            mf_zero_mode: MfZeroMode::Apply,
            residual_head_bias: false,
        }
    }
}

impl FusionConfig {
    pub fn hidden_width(&self, d_model: usize) -> usize {
        self.hidden.unwrap_or((d_model / 4).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("fusion.depth must be at least 1".into()));
        }
        if self.hidden == Some(0) {
            return Err(Error::Config("fusion.hidden must be at least 1".into()));
        }
        Ok(())
    }
}

/// Variable counts the plug-in was built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionShape {
    pub targets: usize,
    pub past: usize,
    pub future: usize,
    pub d_model: usize,
}

impl FusionShape {
    /// Length of the flattened stage-1 input, `(C + Mp)·D`.
    pub fn u1_len(&self) -> usize {
        (self.targets + self.past) * self.d_model
    }

    /// Length of the stage-2 input, `(1 + Mf)·D`.
    pub fn u2_len(&self) -> usize {
        (1 + self.future) * self.d_model
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fusion {
    pub cfg: FusionConfig,
    pub shape: FusionShape,
    future_embed: Option<Linear>,
    norm_past: LayerNorm,
    mlp_past: Mlp,
    stage2: Option<(LayerNorm, Mlp)>,
}

impl Fusion {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        cfg: &FusionConfig,
        shape: FusionShape,
        patch: &PatchConfig,
    ) -> Self {
        let d = shape.d_model;
        let hidden = cfg.hidden_width(d);
        let future_embed = (shape.future > 0).then(|| {
            Linear::new(
                store,
                rng,
                "fusion.future_embedding",
                ParamGroup::FutureEmbedding,
                patch.future_period(),
                d,
                false,
            )
        });
        let norm_past = LayerNorm::new(store, "fusion.past.norm", ParamGroup::MlpPast, shape.u1_len());
        let mlp_past = Mlp::new(
            store,
            rng,
            "fusion.past.mlp",
            ParamGroup::MlpPast,
            shape.u1_len(),
            hidden,
            d,
            cfg.depth,
            cfg.activation,
        );
        let stage2 = (shape.future > 0 || cfg.mf_zero_mode == MfZeroMode::Apply).then(|| {
            let norm = LayerNorm::new(store, "fusion.future.norm", ParamGroup::MlpFuture, shape.u2_len());
            let mlp = Mlp::new(
                store,
                rng,
                "fusion.future.mlp",
                ParamGroup::MlpFuture,
                shape.u2_len(),
                hidden,
                d,
                cfg.depth,
                cfg.activation,
            );
            if cfg.zero_init {
                let last = mlp.last();
                store.get_mut(last.weight).value.fill(0.0);
                if let Some(b) = last.bias {
                    store.get_mut(b).value.fill(0.0);
                }
            }
            (norm, mlp)
        });
        Self {
            cfg: cfg.clone(),
            shape,
            future_embed,
            norm_past,
            mlp_past,
            stage2,
        }
    }

    /// Flattened stage-1 input for a batch: rows ordered `(window, token)`,
    /// columns `[z_target_1 … z_target_C ‖ z_past_1 … z_past_Mp]`.
    pub fn stage1_input(&self, tape: &mut Tape, z_target: Var, z_past: Option<Var>, batch: usize, tokens: usize) -> Var {
        let mut parts = Vec::with_capacity(self.shape.targets + self.shape.past);
        for c in 0..self.shape.targets {
            parts.push(tape.gather_rows(z_target, variable_rows(batch, self.shape.targets, c, tokens)));
        }
        if let Some(zp) = z_past {
            for m in 0..self.shape.past {
                parts.push(tape.gather_rows(zp, variable_rows(batch, self.shape.past, m, tokens)));
            }
        }
        tape.concat_cols(&parts)
    }

    /// `H`, one row per `(window, token)`.
    pub fn stage1(&self, tape: &mut Tape, z_target: Var, z_past: Option<Var>, batch: usize, tokens: usize) -> Var {
        let u1 = self.stage1_input(tape, z_target, z_past, batch, tokens);
        let n = self.norm_past.forward(tape, u1);
        self.mlp_past.forward(tape, n)
    }

    /// Embeds `B·Mf × F` future covariates into `B·Mf·O × D` token rows.
    pub fn embed_future(
        &self,
        tape: &mut Tape,
        y_future: &Matrix,
        patch: &PatchConfig,
        tokens: usize,
    ) -> Result<Option<Var>> {
        let Some(embed) = &self.future_embed else {
            return Ok(None);
        };
        let p_star = patch.future_period();
        let horizon = y_future.ncols();
        let map = align_tokens(token_count(horizon, p_star), tokens, patch.alignment)?;
        let n_series = y_future.nrows();
        let mut rows = Matrix::zeros((n_series * tokens, p_star));
        for i in 0..n_series {
            let patches = patch_rows(y_future.row(i), p_star);
            for (j, &src) in map.iter().enumerate() {
                rows.row_mut(i * tokens + j).assign(&patches.row(src));
            }
        }
        let x = tape.constant(rows);
        Ok(Some(embed.forward_no_bias(tape, x)))
    }

    pub fn stage2_input(&self, tape: &mut Tape, h: Var, f: Option<Var>, batch: usize, tokens: usize) -> Var {
        let mut parts = vec![h];
        if let Some(f) = f {
            for m in 0..self.shape.future {
                parts.push(tape.gather_rows(f, variable_rows(batch, self.shape.future, m, tokens)));
            }
        }
        if parts.len() == 1 {
            h
        } else {
            tape.concat_cols(&parts)
        }
    }

    /// `R`, one row per `(window, token)`.
    pub fn stage2(&self, tape: &mut Tape, h: Var, f: Option<Var>, batch: usize, tokens: usize) -> Var {
        match &self.stage2 {
            None => h,
            Some((norm, mlp)) => {
                let u2 = self.stage2_input(tape, h, f, batch, tokens);
                let n = norm.forward(tape, u2);
                mlp.forward(tape, n)
            }
        }
    }

    /// Repeats each window's `R` for every target: rows `(window, target, token)`.
    pub fn tile(&self, tape: &mut Tape, r: Var, batch: usize, tokens: usize) -> Var {
        let targets = self.shape.targets;
        let idx = (0..batch)
            .flat_map(|b| (0..targets).flat_map(move |_| (0..tokens).map(move |j| b * tokens + j)))
            .collect();
        tape.gather_rows(r, idx)
    }

    /// Stage 1 on a single window: returns `H` as `D × O`.
    pub fn stage1_past_fusion(&self, store: &ParamStore, z_target: &DecodedTokens, z_past: &DecodedTokens) -> Result<Array2<f64>> {
        let o = z_target.tokens();
        if z_past.channels() > 0 && z_past.tokens() != o {
            return Err(Error::Shape(format!(
                "target has {o} tokens but past covariates have {}",
                z_past.tokens()
            )));
        }
        self.check_counts(z_target.channels(), z_past.channels(), None)?;
        let mut tape = Tape::inference(store);
        let zt = tape.constant(z_target.to_rows());
        let zp = (z_past.channels() > 0).then(|| tape.constant(z_past.to_rows()));
        let h = self.stage1(&mut tape, zt, zp, 1, o);
        Ok(tape.value(h).t().to_owned())
    }

    /// Stage 2 on a single window. `h` is `D × O`, `f` is `Mf × D × O`.
    pub fn stage2_future_fusion(&self, store: &ParamStore, h: &Array2<f64>, f: &Array3<f64>) -> Result<Array2<f64>> {
        let o = h.ncols();
        if f.dim().0 > 0 && f.dim().2 != o {
            return Err(Error::Shape(format!(
                "intermediate tokens cover {o} positions but future embeddings cover {}",
                f.dim().2
            )));
        }
        self.check_counts(self.shape.targets, self.shape.past, Some(f.dim().0))?;
        let mut tape = Tape::inference(store);
        let hv = tape.constant(h.t().to_owned());
        let fv = (f.dim().0 > 0).then(|| tape.constant(DecodedTokens { z: f.clone() }.to_rows()));
        let r = self.stage2(&mut tape, hv, fv, 1, o);
        Ok(tape.value(r).t().to_owned())
    }

    fn check_counts(&self, targets: usize, past: usize, future: Option<usize>) -> Result<()> {
        let mut problems = Vec::new();
        if targets != self.shape.targets {
            problems.push(format!("C: expected {}, got {targets}", self.shape.targets));
        }
        if past != self.shape.past {
            problems.push(format!("Mp: expected {}, got {past}", self.shape.past));
        }
        if let Some(mf) = future {
            if mf != self.shape.future {
                problems.push(format!("Mf: expected {}, got {mf}", self.shape.future));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Shape(problems.join("; ")))
        }
    }
}

/// Row indices of variable `v` in a `(window, variable, token)` layout,
/// ordered `(window, token)`.
fn variable_rows(batch: usize, variables: usize, v: usize, tokens: usize) -> Vec<usize> {
    (0..batch)
        .flat_map(|b| (0..tokens).map(move |j| (b * variables + v) * tokens + j))
        .collect()
}

/// Copies `R` (`D × O`) into every one of `targets` slices.
pub fn tile_refined(r: &Array2<f64>, targets: usize) -> Array3<f64> {
    let (d, o) = r.dim();
    let mut out = Array3::zeros((targets, d, o));
    for mut slice in out.axis_iter_mut(Axis(0)) {
        slice.assign(r);
    }
    debug_assert!(targets == 0 || out.slice(s![0, .., ..]) == r.view());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build(shape: FusionShape, cfg: FusionConfig) -> (ParamStore, Fusion) {
        let mut store = ParamStore::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = Fusion::new(&mut store, &mut rng, &cfg, shape, &PatchConfig::new(4));
        (store, f)
    }

    fn random_tokens(rng: &mut ChaCha8Rng, v: usize, d: usize, o: usize) -> DecodedTokens {
        DecodedTokens {
            z: Array3::from_shape_fn((v, d, o), |_| rng.gen_range(-1.0..1.0)),
        }
    }

    #[test]
    fn stage1_input_width_is_c_plus_mp_times_d() {
        let shape = FusionShape {
            targets: 1,
            past: 2,
            future: 0,
            d_model: 4,
        };
        assert_eq!(shape.u1_len(), 12);
        let (store, f) = build(shape, FusionConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::inference(&store);
        let zt = tape.constant(random_tokens(&mut rng, 1, 4, 3).to_rows());
        let zp = tape.constant(random_tokens(&mut rng, 2, 4, 3).to_rows());
        let u1 = f.stage1_input(&mut tape, zt, Some(zp), 1, 3);
        assert_eq!(tape.shape(u1), (3, 12));
    }

    #[test]
    fn stage1_without_past_covariates() {
        let shape = FusionShape {
            targets: 2,
            past: 0,
            future: 0,
            d_model: 4,
        };
        let (store, f) = build(shape, FusionConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let zt = random_tokens(&mut rng, 2, 4, 2);
        let h = f.stage1_past_fusion(&store, &zt, &DecodedTokens::empty(4, 2)).unwrap();
        assert_eq!(h.dim(), (4, 2));
        assert!(h.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn stage1_rejects_token_mismatch() {
        let shape = FusionShape {
            targets: 1,
            past: 1,
            future: 0,
            d_model: 4,
        };
        let (store, f) = build(shape, FusionConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let zt = random_tokens(&mut rng, 1, 4, 2);
        let zp = random_tokens(&mut rng, 1, 4, 3);
        assert!(matches!(f.stage1_past_fusion(&store, &zt, &zp), Err(Error::Shape(_))));
    }

    #[test]
    fn permuting_covariates_with_weight_blocks_leaves_h_unchanged() {
        let d = 3;
        let shape = FusionShape {
            targets: 1,
            past: 2,
            future: 0,
            d_model: d,
        };
        let (mut store, f) = build(shape, FusionConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let zt = random_tokens(&mut rng, 1, d, 2);
        let zp = random_tokens(&mut rng, 2, d, 2);
        let h = f.stage1_past_fusion(&store, &zt, &zp).unwrap();

        // swap the two covariates and the matching column blocks of the
        // norm parameters and first linear layer
        let swapped = DecodedTokens {
            z: ndarray::stack(Axis(0), &[zp.z.index_axis(Axis(0), 1), zp.z.index_axis(Axis(0), 0)]).unwrap(),
        };
        let swap_cols = |m: &mut Matrix| {
            let a = m.slice(s![.., d..2 * d]).to_owned();
            let b = m.slice(s![.., 2 * d..3 * d]).to_owned();
            m.slice_mut(s![.., d..2 * d]).assign(&b);
            m.slice_mut(s![.., 2 * d..3 * d]).assign(&a);
        };
        swap_cols(&mut store.get_mut(f.norm_past.gain).value);
        swap_cols(&mut store.get_mut(f.norm_past.shift).value);
        swap_cols(&mut store.get_mut(f.mlp_past.layers[0].weight).value);
        let h2 = f.stage1_past_fusion(&store, &zt, &swapped).unwrap();
        for (a, b) in h.iter().zip(h2.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_initialized_stage2_outputs_zero() {
        let shape = FusionShape {
            targets: 1,
            past: 0,
            future: 2,
            d_model: 4,
        };
        assert_eq!(shape.u2_len(), 12);
        let (store, f) = build(shape, FusionConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = Array2::from_shape_fn((4, 3), |_| rng.gen_range(-1.0..1.0));
        let emb = Array3::from_shape_fn((2, 4, 3), |_| rng.gen_range(-1.0..1.0));
        let r = f.stage2_future_fusion(&store, &h, &emb).unwrap();
        assert!(r.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn no_future_covariates_uses_h_alone() {
        let shape = FusionShape {
            targets: 1,
            past: 0,
            future: 0,
            d_model: 4,
        };
        let cfg = FusionConfig {
            zero_init: false,
            ..FusionConfig::default()
        };
        let (store, f) = build(shape, cfg.clone());
        let (_, mlp) = f.stage2.as_ref().unwrap();
        assert_eq!(store.get(mlp.layers[0].weight).value.ncols(), 4);
        let h = Array2::from_shape_fn((4, 2), |(i, j)| (i + j) as f64);
        let r = f.stage2_future_fusion(&store, &h, &Array3::zeros((0, 4, 2))).unwrap();
        assert_eq!(r.dim(), (4, 2));

        let bypass = FusionConfig {
            mf_zero_mode: MfZeroMode::Bypass,
            ..cfg
        };
        let (store, f) = build(shape, bypass);
        let r = f.stage2_future_fusion(&store, &h, &Array3::zeros((0, 4, 2))).unwrap();
        assert_eq!(r, h);
    }

    #[test]
    fn mlp_depth_and_hidden_width() {
        let shape = FusionShape {
            targets: 2,
            past: 1,
            future: 1,
            d_model: 8,
        };
        let cfg = FusionConfig {
            depth: 3,
            hidden: Some(5),
            ..FusionConfig::default()
        };
        let (store, f) = build(shape, cfg);
        let dims: Vec<_> = f
            .mlp_past
            .layers
            .iter()
            .map(|l| store.get(l.weight).value.dim())
            .collect();
        assert_eq!(dims, vec![(5, 24), (5, 5), (8, 5)]);
        let (_, mlp) = f.stage2.as_ref().unwrap();
        let dims: Vec<_> = mlp.layers.iter().map(|l| store.get(l.weight).value.dim()).collect();
        assert_eq!(dims, vec![(5, 16), (5, 5), (8, 5)]);
        // default hidden width is D / 4
        assert_eq!(FusionConfig::default().hidden_width(64), 16);
    }

    #[test]
    fn tiling_copies_by_value() {
        let mut r = Array2::from_shape_fn((3, 2), |(i, j)| (i * 2 + j) as f64);
        let tiled = tile_refined(&r, 23);
        assert_eq!(tiled.dim(), (23, 3, 2));
        for i in 0..23 {
            assert_eq!(tiled.index_axis(Axis(0), i), r.view());
        }
        let single = tile_refined(&r, 1);
        assert_eq!(single.index_axis(Axis(0), 0), r.view());
        r.fill(-1.0);
        assert_eq!(tiled[[5, 1, 1]], 3.0);
    }
}
