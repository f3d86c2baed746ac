//! Layer building blocks expressed as tape operations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AttnShape, Matrix, Tape, Var};
use crate::params::{init_weight, ParamGroup, ParamId, ParamStore};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        group: ParamGroup,
        inp: usize,
        out: usize,
        bias: bool,
    ) -> Self {
        let weight = store.insert(format!("{name}.weight"), group, init_weight(rng, out, inp));
        let bias = bias.then(|| store.insert(format!("{name}.bias"), group, Matrix::zeros((1, out))));
        Self { weight, bias }
    }

    /// Looks up `{name}.weight` and optionally `{name}.bias`.
    pub fn bind(store: &ParamStore, name: &str) -> Option<Self> {
        Some(Self {
            weight: store.id(&format!("{name}.weight"))?,
            bias: store.id(&format!("{name}.bias")),
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.weight);
        let y = tape.matmul_t(x, w);
        match self.bias {
            Some(b) => {
                let b = tape.param(b);
                tape.add_row(y, b)
            }
            None => y,
        }
    }

    /// Applies the weight only, skipping the bias even if one exists.
    pub fn forward_no_bias(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.weight);
        tape.matmul_t(x, w)
    }
}

/// Layer normalization with trainable gain and shift.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, group: ParamGroup, dim: usize) -> Self {
        Self {
            gain: store.insert(format!("{name}.gain"), group, Matrix::ones((1, dim))),
            shift: store.insert(format!("{name}.shift"), group, Matrix::zeros((1, dim))),
        }
    }

    pub fn bind(store: &ParamStore, name: &str) -> Option<Self> {
        Some(Self {
            gain: store.id(&format!("{name}.gain"))?,
            shift: store.id(&format!("{name}.shift"))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let n = tape.layer_norm(x);
        let g = tape.param(self.gain);
        let b = tape.param(self.shift);
        let y = tape.mul_row(n, g);
        tape.add_row(y, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Gelu,
    Identity,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Gelu => tape.gelu(x),
            Activation::Identity => x,
        }
    }
}

/// `depth` linear layers; the first `depth - 1` are followed by the
/// activation and have width `hidden`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        group: ParamGroup,
        inp: usize,
        hidden: usize,
        out: usize,
        depth: usize,
        activation: Activation,
    ) -> Self {
        assert!(depth >= 1, "mlp depth must be at least 1");
        let mut layers = Vec::with_capacity(depth);
        let mut width = inp;
        for i in 0..depth {
            let next = if i + 1 == depth { out } else { hidden };
            layers.push(Linear::new(
                store,
                rng,
                &format!("{name}.{i}"),
                group,
                width,
                next,
                true,
            ));
            width = next;
        }
        Self { layers, activation }
    }

    pub fn bind(store: &ParamStore, name: &str, depth: usize, activation: Activation) -> Option<Self> {
        let layers = (0..depth)
            .map(|i| Linear::bind(store, &format!("{name}.{i}")))
            .collect::<Option<Vec<_>>>()?;
        Some(Self { layers, activation })
    }

    pub fn forward(&self, tape: &mut Tape, mut x: Var) -> Var {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, x);
            if i < last {
                x = self.activation.apply(tape, x);
            }
        }
        x
    }

    pub fn last(&self) -> &Linear {
        self.layers.last().expect("mlp has at least one layer")
    }
}

/// Multi-head attention with input and output projections.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        group: ParamGroup,
        dim: usize,
        heads: usize,
    ) -> Self {
        Self {
            query: Linear::new(store, rng, &format!("{name}.q"), group, dim, dim, true),
            key: Linear::new(store, rng, &format!("{name}.k"), group, dim, dim, true),
            value: Linear::new(store, rng, &format!("{name}.v"), group, dim, dim, true),
            out: Linear::new(store, rng, &format!("{name}.o"), group, dim, dim, true),
            heads,
        }
    }

    pub fn bind(store: &ParamStore, name: &str, heads: usize) -> Option<Self> {
        Some(Self {
            query: Linear::bind(store, &format!("{name}.q"))?,
            key: Linear::bind(store, &format!("{name}.k"))?,
            value: Linear::bind(store, &format!("{name}.v"))?,
            out: Linear::bind(store, &format!("{name}.o"))?,
            heads,
        })
    }

    /// `queries` holds `n_seq` blocks of `q_len` rows; `memory` holds
    /// `n_seq` blocks of `kv_len` rows.
    pub fn forward(
        &self,
        tape: &mut Tape,
        queries: Var,
        memory: Var,
        n_seq: usize,
        q_len: usize,
        kv_len: usize,
    ) -> Var {
        let q = self.query.forward(tape, queries);
        let k = self.key.forward(tape, memory);
        let v = self.value.forward(tape, memory);
        let shape = AttnShape {
            n_seq,
            q_len,
            kv_len,
            heads: self.heads,
        };
        let a = tape.attention(q, k, v, shape);
        self.out.forward(tape, a)
    }
}

/// Two-layer position-wise feedforward block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        group: ParamGroup,
        dim: usize,
        hidden: usize,
    ) -> Self {
        Self {
            up: Linear::new(store, rng, &format!("{name}.up"), group, dim, hidden, true),
            down: Linear::new(store, rng, &format!("{name}.down"), group, hidden, dim, true),
        }
    }

    pub fn bind(store: &ParamStore, name: &str) -> Option<Self> {
        Some(Self {
            up: Linear::bind(store, &format!("{name}.up"))?,
            down: Linear::bind(store, &format!("{name}.down"))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let h = self.up.forward(tape, x);
        let h = tape.gelu(h);
        self.down.forward(tape, h)
    }
}
