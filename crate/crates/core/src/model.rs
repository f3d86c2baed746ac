//! Backbone plus optional covariate plug-in, assembled over one parameter store.

use ndarray::{s, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape, Var};
use crate::backbone::{Backbone, BackboneConfig, DecodedTokens, Dropout};
use crate::data::WindowSample;
use crate::error::{Error, Result};
use crate::fusion::{Fusion, FusionConfig, FusionShape};
use crate::params::ParamStore;
use crate::tokenizer::PatchConfig;

/// Variable counts `C`, `Mp`, `Mf`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    pub targets: usize,
    #[serde(default)]
    pub past: usize,
    #[serde(default)]
    pub future: usize,
}

impl ModelShape {
    pub fn new(targets: usize, past: usize, future: usize) -> Self {
        Self { targets, past, future }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub shape: ModelShape,
    pub patch: PatchConfig,
    #[serde(default)]
    pub backbone: BackboneConfig,
    /// `None` builds the backbone alone.
    #[serde(default)]
    pub fusion: Option<FusionConfig>,
}

impl ModelConfig {
    pub fn new(lookback: usize, horizon: usize, period: usize, shape: ModelShape) -> Self {
        Self {
            lookback,
            horizon,
            shape,
            patch: PatchConfig::new(period),
            backbone: BackboneConfig::default(),
            fusion: Some(FusionConfig::default()),
        }
    }

    pub fn without_fusion(mut self) -> Self {
        self.fusion = None;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.patch.validate()?;
        self.backbone.validate()?;
        if let Some(f) = &self.fusion {
            f.validate()?;
        }
        if self.shape.targets == 0 {
            return Err(Error::Config("at least one target channel is required".into()));
        }
        if self.lookback < self.patch.period {
            return Err(Error::Config(format!(
                "lookback {} is shorter than one period ({})",
                self.lookback, self.patch.period
            )));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        Ok(())
    }

    /// `O = ceil(F / P)`.
    pub fn output_tokens(&self) -> usize {
        crate::tokenizer::token_count(self.horizon, self.patch.period)
    }
}

/// Windows stacked for one forward pass. Rows are ordered
/// `(window, variable)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    /// `B·C × T`.
    pub x_target: Matrix,
    /// `B·Mp × T`.
    pub x_past: Matrix,
    /// `B·Mf × F`.
    pub y_future: Matrix,
    /// `B·C × F`.
    pub y_target: Matrix,
}

impl Batch {
    /// Stacks samples for a model of the given shape. Samples without
    /// horizon covariates are zero-filled when the model expects some.
    pub fn from_samples(samples: &[&WindowSample], cfg: &ModelConfig) -> Result<Self> {
        let (t, f) = (cfg.lookback, cfg.horizon);
        let ModelShape { targets: c, past: mp, future: mf } = cfg.shape;
        let b = samples.len();
        let mut batch = Batch {
            size: b,
            x_target: Matrix::zeros((b * c, t)),
            x_past: Matrix::zeros((b * mp, t)),
            y_future: Matrix::zeros((b * mf, f)),
            y_target: Matrix::zeros((b * c, f)),
        };
        for (i, w) in samples.iter().enumerate() {
            check_block("X_target", w.x_target.dim(), (c, t))?;
            check_block("X_past", w.x_past.dim(), (mp, t))?;
            check_block("Y_target", w.y_target.dim(), (c, f))?;
            batch.x_target.slice_mut(s![i * c..(i + 1) * c, ..]).assign(&w.x_target);
            batch.y_target.slice_mut(s![i * c..(i + 1) * c, ..]).assign(&w.y_target);
            batch.x_past.slice_mut(s![i * mp..(i + 1) * mp, ..]).assign(&w.x_past);
            if w.y_future.nrows() > 0 {
                check_block("Y_future", w.y_future.dim(), (mf, f))?;
                batch.y_future.slice_mut(s![i * mf..(i + 1) * mf, ..]).assign(&w.y_future);
            }
        }
        Ok(batch)
    }
}

fn check_block(name: &str, got: (usize, usize), want: (usize, usize)) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "{name} is {}×{}, model expects {}×{}",
            got.0, got.1, want.0, want.1
        )))
    }
}

/// Decoded tokens computed ahead of time with the backbone in eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedTokens {
    /// `C·O × D`.
    pub target: Matrix,
    /// `Mp·O × D`.
    pub past: Matrix,
}

/// Where the decoded tokens for a forward pass come from.
pub enum TokenSource<'a, 'r> {
    Compute(Dropout<'r>),
    Cached(&'a [&'a CachedTokens]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub backbone: Backbone,
    pub fusion: Option<Fusion>,
}

impl Model {
    /// Fresh parameters. The backbone and the plug-in draw from separate
    /// streams, so two configs that differ only in `fusion` share identical
    /// backbone weights for the same seed.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = Backbone::new(&mut store, &mut rng, &cfg.backbone, cfg.patch.period);
        backbone.check_geometry(cfg.lookback, cfg.horizon)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let fusion = cfg.fusion.as_ref().map(|fc| {
            let shape = FusionShape {
                targets: cfg.shape.targets,
                past: cfg.shape.past,
                future: cfg.shape.future,
                d_model: cfg.backbone.d_model,
            };
            Fusion::new(&mut store, &mut rng, fc, shape, &cfg.patch)
        });
        Ok(Self {
            cfg,
            store,
            backbone,
            fusion,
        })
    }

    /// Copies backbone and head parameters by name from `source`.
    /// Returns the number of tensors copied.
    pub fn load_backbone(&mut self, source: &ParamStore) -> Result<usize> {
        let mut copied = 0;
        let ids: Vec<_> = self.store.ids().collect();
        for id in ids {
            let p = self.store.get(id);
            if !(p.group.is_backbone() || p.group == crate::params::ParamGroup::Head) {
                continue;
            }
            let src = source
                .id(&p.name)
                .map(|sid| source.get(sid))
                .ok_or_else(|| Error::Checkpoint(format!("pretrained state lacks parameter {}", p.name)))?;
            if src.value.dim() != p.value.dim() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} is {:?} in the pretrained state, model expects {:?}",
                    p.name,
                    src.value.dim(),
                    p.value.dim()
                )));
            }
            self.store.get_mut(id).value = src.value.clone();
            copied += 1;
        }
        Ok(copied)
    }

    pub fn has_fusion(&self) -> bool {
        self.fusion.is_some()
    }

    pub fn output_tokens(&self) -> usize {
        self.cfg.output_tokens()
    }

    /// Eval-mode token cache for one window.
    pub fn cache_tokens(&self, sample: &WindowSample) -> Result<CachedTokens> {
        let batch = Batch::from_samples(&[sample], &self.cfg)?;
        let mut tape = Tape::inference(&self.store);
        let horizon = self.cfg.horizon;
        let zt = self.backbone_tokens(&mut tape, &batch.x_target, horizon, &mut Dropout::off());
        let target = tape.value(zt).clone();
        let past = if batch.x_past.nrows() > 0 {
            let zp = self.backbone_tokens(&mut tape, &batch.x_past, horizon, &mut Dropout::off());
            tape.value(zp).clone()
        } else {
            Matrix::zeros((0, self.cfg.backbone.d_model))
        };
        Ok(CachedTokens { target, past })
    }

    fn backbone_tokens(&self, tape: &mut Tape, raw: &Matrix, horizon: usize, dropout: &mut Dropout) -> Var {
        let stats = self.backbone.instance_stats(raw.view());
        let normalized = stats.normalize(raw.view());
        self.backbone.tokens(tape, &normalized, horizon, dropout)
    }

    /// Records the forward pass on `tape` and returns the `B·C × F`
    /// forecast in data units. With `use_fusion = false` only the backbone
    /// path runs.
    pub fn forward(&self, tape: &mut Tape, batch: &Batch, tokens: TokenSource, use_fusion: bool) -> Result<Var> {
        let ModelShape { targets: c, past: mp, .. } = self.cfg.shape;
        let (b, horizon, o) = (batch.size, self.cfg.horizon, self.output_tokens());
        if batch.x_target.iter().chain(batch.x_past.iter()).chain(batch.y_future.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model input contains NaN or infinity".into()));
        }
        let stats = self.backbone.instance_stats(batch.x_target.view());
        let (zt, zp) = match tokens {
            TokenSource::Compute(mut dropout) => {
                let normalized = stats.normalize(batch.x_target.view());
                let zt = self.backbone.tokens(tape, &normalized, horizon, &mut dropout);
                let zp = (use_fusion && mp > 0 && self.fusion.is_some())
                    .then(|| self.backbone_tokens(tape, &batch.x_past, horizon, &mut dropout));
                (zt, zp)
            }
            TokenSource::Cached(cache) => {
                if cache.len() != b {
                    return Err(Error::Shape(format!("{} cached windows for a batch of {b}", cache.len())));
                }
                let d = self.cfg.backbone.d_model;
                let mut target = Matrix::zeros((b * c * o, d));
                let mut past = Matrix::zeros((b * mp * o, d));
                for (i, t) in cache.iter().enumerate() {
                    target.slice_mut(s![i * c * o..(i + 1) * c * o, ..]).assign(&t.target);
                    past.slice_mut(s![i * mp * o..(i + 1) * mp * o, ..]).assign(&t.past);
                }
                let zt = tape.constant(target);
                let zp = (mp > 0).then(|| tape.constant(past));
                (zt, zp)
            }
        };
        let mut y = self.backbone.project(tape, zt, b * c, horizon, true);
        if let (true, Some(fusion)) = (use_fusion, &self.fusion) {
            let h = fusion.stage1(tape, zt, zp, b, o);
            let f = fusion.embed_future(tape, &batch.y_future, &self.cfg.patch, o)?;
            let r = fusion.stage2(tape, h, f, b, o);
            let r_tile = fusion.tile(tape, r, b, o);
            let residual = self.backbone.project(tape, r_tile, b * c, horizon, fusion.cfg.residual_head_bias);
            y = tape.add(y, residual);
        }
        let y = tape.scale_rows(y, stats.std);
        Ok(tape.add_rows_const(y, &stats.mean))
    }

    fn predict_with(&self, samples: &[&WindowSample], use_fusion: bool) -> Result<Vec<Array2<f64>>> {
        let batch = Batch::from_samples(samples, &self.cfg)?;
        let mut tape = Tape::inference(&self.store);
        let y = self.forward(&mut tape, &batch, TokenSource::Compute(Dropout::off()), use_fusion)?;
        let c = self.cfg.shape.targets;
        let y = tape.value(y);
        Ok((0..samples.len())
            .map(|i| y.slice(s![i * c..(i + 1) * c, ..]).to_owned())
            .collect())
    }

    /// `C × F` forecast for one window, dropout off.
    pub fn predict(&self, sample: &WindowSample) -> Result<Array2<f64>> {
        Ok(self.predict_with(&[sample], true)?.remove(0))
    }

    pub fn predict_batch(&self, samples: &[&WindowSample]) -> Result<Vec<Array2<f64>>> {
        self.predict_with(samples, true)
    }

    /// Forecast from the backbone and head alone.
    pub fn predict_backbone(&self, sample: &WindowSample) -> Result<Array2<f64>> {
        Ok(self.predict_with(&[sample], false)?.remove(0))
    }
}

/// `Ŷ = Head(Z_target) + Head(R_tile)` through the single shared head.
/// `Z_target` is `C × D × O`, `R_tile` is `C × D × O`.
pub fn compose_forecast(
    backbone: &Backbone,
    store: &ParamStore,
    z_target: &DecodedTokens,
    r_tile: &Array3<f64>,
    horizon: usize,
    residual_bias: bool,
) -> Result<Array2<f64>> {
    if z_target.z.dim() != r_tile.dim() {
        return Err(Error::Shape(format!(
            "Z_target is {:?} but R_tile is {:?}",
            z_target.z.dim(),
            r_tile.dim()
        )));
    }
    let base = backbone.head(store, z_target, horizon)?;
    let mut tape = Tape::inference(store);
    let rows = tape.constant(DecodedTokens { z: r_tile.clone() }.to_rows());
    let residual = backbone.project(&mut tape, rows, r_tile.dim().0, horizon, residual_bias);
    Ok(base + tape.value(residual))
}
