//! Channel-independent encoder–decoder backbone and the shared output head.
//!
//! Each channel's lookback is instance-normalized, cut into period-length
//! patches, projected to the latent width and run through a pre-norm
//! Transformer encoder. Decoding is parallel: `O = ceil(F / P)` learned
//! horizon queries cross-attend to the encoder output in a single pass, so
//! every horizon token is produced at once. The head maps each decoded token
//! to one period of forecast values.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{FeedForward, LayerNorm, Linear, MultiHeadAttention};
use crate::params::{init_normal, ParamGroup, ParamId, ParamStore};
use crate::tokenizer::{patch_rows, token_count};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub d_model: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    /// Size of the learned positional table over lookback patches.
    pub max_input_tokens: usize,
    /// Number of learned horizon queries available to the decoder.
    pub max_output_tokens: usize,
    /// Shift/scale each channel by its lookback mean and std.
    pub instance_norm: bool,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_enc_layers: 2,
            n_dec_layers: 1,
            n_heads: 4,
            d_ff: 128,
            dropout: 0.1,
            max_input_tokens: 64,
            max_output_tokens: 32,
            instance_norm: true,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("d_model", self.d_model),
            ("n_enc_layers", self.n_enc_layers),
            ("n_dec_layers", self.n_dec_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("max_input_tokens", self.max_input_tokens),
            ("max_output_tokens", self.max_output_tokens),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("backbone.{name} must be at least 1")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "backbone.d_model ({}) must be divisible by n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "backbone.dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Decoder-side latent grid, `V × D × O`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedTokens {
    pub z: Array3<f64>,
}

impl DecodedTokens {
    pub fn empty(d_model: usize, tokens: usize) -> Self {
        Self {
            z: Array3::zeros((0, d_model, tokens)),
        }
    }

    pub fn channels(&self) -> usize {
        self.z.dim().0
    }

    pub fn d_model(&self) -> usize {
        self.z.dim().1
    }

    pub fn tokens(&self) -> usize {
        self.z.dim().2
    }

    /// From the tape layout: rows ordered `(channel, token)`, `D` columns.
    pub fn from_rows(rows: &Matrix, channels: usize, tokens: usize) -> Self {
        let d = rows.ncols();
        let mut z = Array3::zeros((channels, d, tokens));
        for v in 0..channels {
            for j in 0..tokens {
                z.slice_mut(s![v, .., j]).assign(&rows.row(v * tokens + j));
            }
        }
        Self { z }
    }

    pub fn to_rows(&self) -> Matrix {
        let (v_n, d, o) = self.z.dim();
        let mut rows = Matrix::zeros((v_n * o, d));
        for v in 0..v_n {
            for j in 0..o {
                rows.row_mut(v * o + j).assign(&self.z.slice(s![v, .., j]));
            }
        }
        rows
    }
}

/// Per-row lookback statistics used for instance normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceStats {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

const INSTANCE_EPS: f64 = 1e-5;

impl InstanceStats {
    pub fn identity(rows: usize) -> Self {
        Self {
            mean: Array1::zeros(rows),
            std: Array1::ones(rows),
        }
    }

    pub fn of(series: ArrayView2<f64>) -> Self {
        let mean = series.mean_axis(Axis(1)).unwrap_or_else(|| Array1::zeros(series.nrows()));
        let std = series
            .axis_iter(Axis(0))
            .zip(mean.iter())
            .map(|(row, m)| {
                let var = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / row.len().max(1) as f64;
                (var + INSTANCE_EPS).sqrt()
            })
            .collect();
        Self { mean, std }
    }

    pub fn normalize(&self, series: ArrayView2<f64>) -> Matrix {
        let mut out = series.to_owned();
        for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            row.mapv_inplace(|v| (v - self.mean[i]) / self.std[i]);
        }
        out
    }
}

/// Dropout switch threaded through a forward pass.
pub struct Dropout<'r> {
    rate: f64,
    rng: Option<&'r mut ChaCha8Rng>,
}

impl<'r> Dropout<'r> {
    pub fn off() -> Self {
        Self { rate: 0.0, rng: None }
    }

    pub fn on(rate: f64, rng: &'r mut ChaCha8Rng) -> Self {
        Self {
            rate,
            rng: Some(rng),
        }
    }

    pub fn is_active(&self) -> bool {
        self.rng.is_some() && self.rate > 0.0
    }

    pub fn apply(&mut self, tape: &mut Tape, x: Var) -> Var {
        let rate = self.rate;
        match self.rng.as_deref_mut() {
            Some(rng) if rate > 0.0 => {
                let keep = 1.0 / (1.0 - rate);
                let mask = Matrix::from_shape_fn(tape.shape(x), |_| {
                    if rng.gen::<f64>() < rate {
                        0.0
                    } else {
                        keep
                    }
                });
                tape.mask(x, mask)
            }
            _ => x,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct EncoderLayer {
    norm_attn: LayerNorm,
    attn: MultiHeadAttention,
    norm_ff: LayerNorm,
    ff: FeedForward,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct DecoderLayer {
    norm_self: LayerNorm,
    self_attn: MultiHeadAttention,
    norm_cross: LayerNorm,
    cross_attn: MultiHeadAttention,
    norm_ff: LayerNorm,
    ff: FeedForward,
}

/// Parameter handles for the backbone and head inside a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    pub period: usize,
    input: Linear,
    positional: ParamId,
    encoder: Vec<EncoderLayer>,
    enc_norm: LayerNorm,
    queries: ParamId,
    decoder: Vec<DecoderLayer>,
    dec_norm: LayerNorm,
    head: Linear,
}

impl Backbone {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, cfg: &BackboneConfig, period: usize) -> Self {
        let d = cfg.d_model;
        let input = Linear::new(store, rng, "backbone.input", ParamGroup::InputProjection, period, d, true);
        let positional = store.insert(
            "backbone.positional",
            ParamGroup::Positional,
            init_normal(rng, cfg.max_input_tokens, d, 0.02),
        );
        let encoder = (0..cfg.n_enc_layers)
            .map(|i| {
                let name = format!("backbone.encoder.{i}");
                let g = ParamGroup::Encoder;
                EncoderLayer {
                    norm_attn: LayerNorm::new(store, &format!("{name}.norm_attn"), g, d),
                    attn: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), g, d, cfg.n_heads),
                    norm_ff: LayerNorm::new(store, &format!("{name}.norm_ff"), g, d),
                    ff: FeedForward::new(store, rng, &format!("{name}.ff"), g, d, cfg.d_ff),
                }
            })
            .collect();
        let enc_norm = LayerNorm::new(store, "backbone.encoder.norm", ParamGroup::Encoder, d);
        let queries = store.insert(
            "backbone.decoder.queries",
            ParamGroup::Decoder,
            init_normal(rng, cfg.max_output_tokens, d, 0.02),
        );
        let decoder = (0..cfg.n_dec_layers)
            .map(|i| {
                let name = format!("backbone.decoder.{i}");
                let g = ParamGroup::Decoder;
                DecoderLayer {
                    norm_self: LayerNorm::new(store, &format!("{name}.norm_self"), g, d),
                    self_attn: MultiHeadAttention::new(store, rng, &format!("{name}.self_attn"), g, d, cfg.n_heads),
                    norm_cross: LayerNorm::new(store, &format!("{name}.norm_cross"), g, d),
                    cross_attn: MultiHeadAttention::new(store, rng, &format!("{name}.cross_attn"), g, d, cfg.n_heads),
                    norm_ff: LayerNorm::new(store, &format!("{name}.norm_ff"), g, d),
                    ff: FeedForward::new(store, rng, &format!("{name}.ff"), g, d, cfg.d_ff),
                }
            })
            .collect();
        let dec_norm = LayerNorm::new(store, "backbone.decoder.norm", ParamGroup::Decoder, d);
        let head = Linear::new(store, rng, "head", ParamGroup::Head, d, period, true);
        Self {
            cfg: cfg.clone(),
            period,
            input,
            positional,
            encoder,
            enc_norm,
            queries,
            decoder,
            dec_norm,
            head,
        }
    }

    pub fn d_model(&self) -> usize {
        self.cfg.d_model
    }

    pub fn output_tokens(&self, horizon: usize) -> usize {
        token_count(horizon, self.period)
    }

    pub fn head_layer(&self) -> &Linear {
        &self.head
    }

    /// Checks that a lookback/horizon pair fits this backbone.
    pub fn check_geometry(&self, lookback: usize, horizon: usize) -> Result<()> {
        if lookback < self.period {
            return Err(Error::InvalidInput(format!(
                "lookback {lookback} is shorter than one period ({})",
                self.period
            )));
        }
        if horizon == 0 {
            return Err(Error::InvalidInput("horizon must be at least 1".into()));
        }
        let n_in = token_count(lookback, self.period);
        if n_in > self.cfg.max_input_tokens {
            return Err(Error::Config(format!(
                "lookback {lookback} needs {n_in} patches but max_input_tokens is {}",
                self.cfg.max_input_tokens
            )));
        }
        let o = self.output_tokens(horizon);
        if o > self.cfg.max_output_tokens {
            return Err(Error::Config(format!(
                "horizon {horizon} needs {o} tokens but max_output_tokens is {}",
                self.cfg.max_output_tokens
            )));
        }
        Ok(())
    }

    /// Instance statistics for a `S × T` block of raw lookbacks.
    pub fn instance_stats(&self, series: ArrayView2<f64>) -> InstanceStats {
        if self.cfg.instance_norm {
            InstanceStats::of(series)
        } else {
            InstanceStats::identity(series.nrows())
        }
    }

    /// Decoded tokens for `S` independent (already normalized) series.
    /// Returns a `S·O × D` node with rows ordered `(series, token)`.
    pub fn tokens(&self, tape: &mut Tape, series: &Matrix, horizon: usize, dropout: &mut Dropout) -> Var {
        let (n_seq, lookback) = series.dim();
        let p = self.period;
        let n_in = token_count(lookback, p);
        let o = self.output_tokens(horizon);

        let mut patches = Matrix::zeros((n_seq * n_in, p));
        for i in 0..n_seq {
            patches
                .slice_mut(s![i * n_in..(i + 1) * n_in, ..])
                .assign(&patch_rows(series.row(i), p));
        }
        let x = tape.constant(patches);
        let x = self.input.forward(tape, x);
        let pos = tape.param(self.positional);
        let pos = tape.gather_rows(pos, (0..n_seq).flat_map(|_| 0..n_in).collect());
        let x = tape.add(x, pos);
        let mut x = dropout.apply(tape, x);

        for layer in &self.encoder {
            let h = layer.norm_attn.forward(tape, x);
            let h = layer.attn.forward(tape, h, h, n_seq, n_in, n_in);
            let h = dropout.apply(tape, h);
            x = tape.add(x, h);
            let h = layer.norm_ff.forward(tape, x);
            let h = layer.ff.forward(tape, h);
            let h = dropout.apply(tape, h);
            x = tape.add(x, h);
        }
        let memory = self.enc_norm.forward(tape, x);

        let queries = tape.param(self.queries);
        let mut q = tape.gather_rows(queries, (0..n_seq).flat_map(|_| 0..o).collect());
        for layer in &self.decoder {
            let h = layer.norm_self.forward(tape, q);
            let h = layer.self_attn.forward(tape, h, h, n_seq, o, o);
            let h = dropout.apply(tape, h);
            q = tape.add(q, h);
            let h = layer.norm_cross.forward(tape, q);
            let h = layer.cross_attn.forward(tape, h, memory, n_seq, o, n_in);
            let h = dropout.apply(tape, h);
            q = tape.add(q, h);
            let h = layer.norm_ff.forward(tape, q);
            let h = layer.ff.forward(tape, h);
            let h = dropout.apply(tape, h);
            q = tape.add(q, h);
        }
        self.dec_norm.forward(tape, q)
    }

    /// Projects `S·O × D` token rows to `S × F` forecasts: one period per
    /// token, concatenated along the horizon and truncated to `horizon`.
    pub fn project(&self, tape: &mut Tape, tokens: Var, n_series: usize, horizon: usize, with_bias: bool) -> Var {
        let o = self.output_tokens(horizon);
        let y = if with_bias {
            self.head.forward(tape, tokens)
        } else {
            self.head.forward_no_bias(tape, tokens)
        };
        let y = tape.reshape(y, n_series, o * self.period);
        if o * self.period > horizon {
            tape.take_cols(y, horizon)
        } else {
            y
        }
    }

    /// Decoded `D × O` tokens for one raw channel history.
    pub fn encode_decode(&self, store: &ParamStore, history: &Array1<f64>, horizon: usize) -> Result<Matrix> {
        let series = history.view().insert_axis(Axis(0)).to_owned();
        let z = self.forward_channels(store, series.view(), horizon)?;
        Ok(z.z.index_axis(Axis(0), 0).to_owned())
    }

    /// Target pathway: every row of `C × T` is decoded independently.
    pub fn forward_target(&self, store: &ParamStore, x_target: ArrayView2<f64>, horizon: usize) -> Result<DecodedTokens> {
        self.forward_channels(store, x_target, horizon)
    }

    /// Past-covariate pathway. Shares every parameter with the target
    /// pathway; an empty input yields an empty grid.
    pub fn forward_past_cov(&self, store: &ParamStore, x_past: ArrayView2<f64>, horizon: usize) -> Result<DecodedTokens> {
        self.forward_channels(store, x_past, horizon)
    }

    fn forward_channels(&self, store: &ParamStore, series: ArrayView2<f64>, horizon: usize) -> Result<DecodedTokens> {
        let o = self.output_tokens(horizon);
        if series.nrows() == 0 {
            return Ok(DecodedTokens::empty(self.d_model(), o));
        }
        self.check_geometry(series.ncols(), horizon)?;
        if series.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("backbone input contains NaN or infinity".into()));
        }
        let stats = self.instance_stats(series);
        let normalized = stats.normalize(series);
        let mut tape = Tape::inference(store);
        let z = self.tokens(&mut tape, &normalized, horizon, &mut Dropout::off());
        Ok(DecodedTokens::from_rows(tape.value(z), series.nrows(), o))
    }

    /// Applies the head (with bias) to every channel slice of `z`, giving a
    /// `V × F` matrix in the normalized space.
    pub fn head(&self, store: &ParamStore, z: &DecodedTokens, horizon: usize) -> Result<Array2<f64>> {
        if z.tokens() != self.output_tokens(horizon) {
            return Err(Error::Shape(format!(
                "{} tokens cannot cover horizon {horizon} at period {}",
                z.tokens(),
                self.period
            )));
        }
        if z.channels() == 0 {
            return Ok(Array2::zeros((0, horizon)));
        }
        let mut tape = Tape::inference(store);
        let rows = tape.constant(z.to_rows());
        let y = self.project(&mut tape, rows, z.channels(), horizon, true);
        Ok(tape.value(y).clone())
    }
}
