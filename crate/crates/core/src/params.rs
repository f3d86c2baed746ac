//! Named parameter tensors with group tags and freeze flags.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }

    pub(crate) fn from_index(i: usize) -> Self {
        ParamId(i)
    }
}

/// Which part of the model a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    InputProjection,
    Positional,
    Encoder,
    Decoder,
    Head,
    FutureEmbedding,
    MlpPast,
    MlpFuture,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 8] = [
        ParamGroup::InputProjection,
        ParamGroup::Positional,
        ParamGroup::Encoder,
        ParamGroup::Decoder,
        ParamGroup::Head,
        ParamGroup::FutureEmbedding,
        ParamGroup::MlpPast,
        ParamGroup::MlpFuture,
    ];

    /// Encoder, decoder, input projection and positional tables. The output
    /// head is deliberately not part of the backbone.
    pub fn is_backbone(self) -> bool {
        matches!(
            self,
            ParamGroup::InputProjection
                | ParamGroup::Positional
                | ParamGroup::Encoder
                | ParamGroup::Decoder
        )
    }

    pub fn is_fusion(self) -> bool {
        matches!(
            self,
            ParamGroup::FutureEmbedding | ParamGroup::MlpPast | ParamGroup::MlpFuture
        )
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.get(v as usize).copied()
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ParamGroup::InputProjection => "input_projection",
            ParamGroup::Positional => "positional",
            ParamGroup::Encoder => "encoder",
            ParamGroup::Decoder => "decoder",
            ParamGroup::Head => "head",
            ParamGroup::FutureEmbedding => "future_embedding",
            ParamGroup::MlpPast => "mlp_past",
            ParamGroup::MlpFuture => "mlp_future",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Matrix,
    pub trainable: bool,
}

/// Insertion-ordered collection of parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn insert(&mut self, name: impl Into<String>, group: ParamGroup, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            name,
            group,
            value,
            trainable: true,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    /// Total number of scalar entries.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn count_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn count_where(&self, pred: impl Fn(ParamGroup) -> bool) -> usize {
        self.params
            .iter()
            .filter(|p| pred(p.group))
            .map(|p| p.value.len())
            .sum()
    }

    pub fn set_trainable_where(&mut self, pred: impl Fn(ParamGroup) -> bool) {
        for p in &mut self.params {
            p.trainable = pred(p.group);
        }
    }
}

/// Xavier-style normal initialization for an `out × in` weight.
pub(crate) fn init_weight<R: Rng>(rng: &mut R, out: usize, inp: usize) -> Matrix {
    let std = (2.0 / (out + inp) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    Matrix::from_shape_fn((out, inp), |_| normal.sample(rng))
}

pub(crate) fn init_normal<R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Matrix {
    let normal = Normal::new(0.0, std).expect("finite std");
    Matrix::from_shape_fn((rows, cols), |_| normal.sample(rng))
}
