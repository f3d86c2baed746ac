//! A small reverse-mode differentiation tape over dense `f64` matrices.
//!
//! Every value on the tape is a 2-D matrix. Operations record just enough
//! state to run their vector-Jacobian product, and [`Tape::backward`] walks
//! the nodes in reverse insertion order (which is a valid topological order
//! because nodes can only reference earlier nodes).
//!
//! Parameters enter the tape through [`Tape::param`], which reads from a
//! [`ParamStore`]. Whether a parameter receives a gradient is decided by its
//! `trainable` flag at the time the tape is built; nodes that do not depend on
//! any trainable parameter are skipped during the backward sweep.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

use crate::params::{ParamId, ParamStore};

pub type Matrix = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Geometry of a batched multi-head attention call.
///
/// Queries are laid out as `n_seq` consecutive blocks of `q_len` rows, keys
/// and values as `n_seq` blocks of `kv_len` rows. Attention never crosses a
/// block boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnShape {
    pub n_seq: usize,
    pub q_len: usize,
    pub kv_len: usize,
    pub heads: usize,
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a · bᵀ`; weights are stored `out × in`.
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    ScaleRows(Var, Array1<f64>),
    AddRowsConst(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        rstd: Array1<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        shape: AttnShape,
        probs: Vec<Matrix>,
    },
    GatherRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Reshape(Var),
    Mask(Var, Matrix),
    Mse(Var, Matrix),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by parameter.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads.get(id.index()).and_then(Option::as_ref)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId::from_index(i), g)))
    }
}

pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    grad_enabled: bool,
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

impl<'a> Tape<'a> {
    /// Tape that records gradients for trainable parameters.
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
            grad_enabled: true,
        }
    }

    /// Tape used for inference: no node ever needs a gradient.
    pub fn inference(store: &'a ParamStore) -> Self {
        let mut tape = Self::new(store);
        tape.grad_enabled = false;
        tape
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad: needs_grad && self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A constant input.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// The current value of a stored parameter. Repeated calls return the
    /// same node so gradients accumulate in one place.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let p = self.store.get(id);
        let v = self.push(p.value.clone(), Op::Param(id), p.trainable);
        self.param_vars[id.index()] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMulT(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let value = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Add(a, b), ng)
    }

    /// `x + row` where `row` is `1 × cols`, broadcast over every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let value = self.value(x) + self.value(row);
        let ng = self.ng(x) || self.ng(row);
        self.push(value, Op::AddRow(x, row), ng)
    }

    /// `x ⊙ row` where `row` is `1 × cols`.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Var {
        let value = self.value(x) * self.value(row);
        let ng = self.ng(x) || self.ng(row);
        self.push(value, Op::MulRow(x, row), ng)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x) * factor;
        let ng = self.ng(x);
        self.push(value, Op::Scale(x, factor), ng)
    }

    /// Multiplies row `i` of `x` by the constant `factors[i]`.
    pub fn scale_rows(&mut self, x: Var, factors: Array1<f64>) -> Var {
        let mut value = self.value(x).clone();
        for (mut row, f) in value.axis_iter_mut(Axis(0)).zip(factors.iter()) {
            row *= *f;
        }
        let ng = self.ng(x);
        self.push(value, Op::ScaleRows(x, factors), ng)
    }

    /// Adds the constant `offsets[i]` to every entry of row `i`.
    pub fn add_rows_const(&mut self, x: Var, offsets: &Array1<f64>) -> Var {
        let mut value = self.value(x).clone();
        for (mut row, o) in value.axis_iter_mut(Axis(0)).zip(offsets.iter()) {
            row += *o;
        }
        let ng = self.ng(x);
        self.push(value, Op::AddRowsConst(x), ng)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(gelu);
        let ng = self.ng(x);
        self.push(value, Op::Gelu(x), ng)
    }

    /// Row-wise standardization without affine parameters.
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let input = self.value(x);
        let (rows, cols) = input.dim();
        let mut value = Matrix::zeros((rows, cols));
        let mut rstd = Array1::zeros(rows);
        for (i, row) in input.axis_iter(Axis(0)).enumerate() {
            let mean = row.sum() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let r = 1.0 / (var + LN_EPS).sqrt();
            rstd[i] = r;
            value
                .row_mut(i)
                .assign(&row.mapv(|v| (v - mean) * r));
        }
        let ng = self.ng(x);
        self.push(value, Op::LayerNorm { x, rstd }, ng)
    }

    /// Scaled dot-product attention, batched over independent sequences and
    /// split into `shape.heads` heads along the column axis.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, shape: AttnShape) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.ncols();
        assert_eq!(d % shape.heads, 0, "attention: width not divisible by heads");
        assert_eq!(qv.nrows(), shape.n_seq * shape.q_len);
        assert_eq!(kv.nrows(), shape.n_seq * shape.kv_len);
        let dh = d / shape.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Matrix::zeros((qv.nrows(), d));
        let mut probs = Vec::with_capacity(shape.n_seq * shape.heads);
        for seq in 0..shape.n_seq {
            let qr = seq * shape.q_len..(seq + 1) * shape.q_len;
            let kr = seq * shape.kv_len..(seq + 1) * shape.kv_len;
            for h in 0..shape.heads {
                let c = h * dh..(h + 1) * dh;
                let qs = qv.slice(s![qr.clone(), c.clone()]);
                let ks = kv.slice(s![kr.clone(), c.clone()]);
                let vs = vv.slice(s![kr.clone(), c.clone()]);
                let mut scores = qs.dot(&ks.t()) * scale;
                softmax_rows(&mut scores);
                out.slice_mut(s![qr.clone(), c]).assign(&scores.dot(&vs));
                probs.push(scores);
            }
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                shape,
                probs,
            },
            ng,
        )
    }

    /// Output row `i` is input row `indices[i]`; rows may repeat.
    pub fn gather_rows(&mut self, x: Var, indices: Vec<usize>) -> Var {
        let input = self.value(x);
        let mut value = Matrix::zeros((indices.len(), input.ncols()));
        for (i, &src) in indices.iter().enumerate() {
            value.row_mut(i).assign(&input.row(src));
        }
        let ng = self.ng(x);
        self.push(value, Op::GatherRows(x, indices), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols: no inputs");
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Keeps the first `len` columns.
    pub fn take_cols(&mut self, x: Var, len: usize) -> Var {
        let value = self.value(x).slice(s![.., ..len]).to_owned();
        let ng = self.ng(x);
        self.push(value, Op::SliceCols(x, len), ng)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let input = self.value(x);
        let flat: Vec<f64> = input.iter().copied().collect();
        let value = Matrix::from_shape_vec((rows, cols), flat).expect("reshape: size mismatch");
        let ng = self.ng(x);
        self.push(value, Op::Reshape(x), ng)
    }

    /// Elementwise product with a constant mask (used for dropout).
    pub fn mask(&mut self, x: Var, mask: Matrix) -> Var {
        let value = self.value(x) * &mask;
        let ng = self.ng(x);
        self.push(value, Op::Mask(x, mask), ng)
    }

    /// Mean squared error against a constant target, as a `1 × 1` node.
    pub fn mse(&mut self, pred: Var, target: Matrix) -> Var {
        assert_eq!(self.shape(pred), target.dim(), "mse: shape mismatch");
        let n = target.len() as f64;
        let loss = Zip::from(self.value(pred))
            .and(&target)
            .fold(0.0, |acc, &p, &t| acc + (p - t) * (p - t))
            / n;
        let ng = self.ng(pred);
        self.push(Matrix::from_elem((1, 1), loss), Op::Mse(pred, target), ng)
    }

    /// Backpropagates from a scalar (`1 × 1`) node and returns gradients for
    /// every trainable parameter that was touched.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.shape(root), (1, 1), "backward: root must be scalar");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::ones((1, 1)));
        let mut out = vec![None; self.store.len()];

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out[id.index()] = Some(g),
                Op::MatMul(a, b) => {
                    if self.ng(*a) {
                        let ga = g.dot(&self.value(*b).t());
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.ng(*b) {
                        let gb = self.value(*a).t().dot(&g);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::MatMulT(a, b) => {
                    if self.ng(*a) {
                        let ga = g.dot(self.value(*b));
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.ng(*b) {
                        let gb = g.t().dot(self.value(*a));
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.ng(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.ng(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::AddRow(x, row) => {
                    if self.ng(*row) {
                        let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut grads, *row, gr);
                    }
                    if self.ng(*x) {
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::MulRow(x, row) => {
                    if self.ng(*row) {
                        let gr = (&g * self.value(*x)).sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut grads, *row, gr);
                    }
                    if self.ng(*x) {
                        let gx = &g * self.value(*row);
                        accumulate(&mut grads, *x, gx);
                    }
                }
                Op::Scale(x, f) => accumulate(&mut grads, *x, g * *f),
                Op::ScaleRows(x, factors) => {
                    let mut gx = g;
                    for (mut row, f) in gx.axis_iter_mut(Axis(0)).zip(factors.iter()) {
                        row *= *f;
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::AddRowsConst(x) => accumulate(&mut grads, *x, g),
                Op::Gelu(x) => {
                    let gx = Zip::from(&g)
                        .and(self.value(*x))
                        .map_collect(|&gi, &xi| gi * gelu_grad(xi));
                    accumulate(&mut grads, *x, gx);
                }
                Op::LayerNorm { x, rstd } => {
                    let y = &node.value;
                    let cols = y.ncols() as f64;
                    let mut gx = Matrix::zeros(y.dim());
                    for i in 0..y.nrows() {
                        let gy = g.row(i);
                        let yr = y.row(i);
                        let mean_g = gy.sum() / cols;
                        let mean_gy = gy.dot(&yr) / cols;
                        let r = rstd[i];
                        for j in 0..y.ncols() {
                            gx[[i, j]] = r * (gy[j] - mean_g - yr[j] * mean_gy);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    shape,
                    probs,
                } => {
                    let (gq, gk, gv) = self.attention_backward(&g, *q, *k, *v, *shape, probs);
                    if self.ng(*q) {
                        accumulate(&mut grads, *q, gq);
                    }
                    if self.ng(*k) {
                        accumulate(&mut grads, *k, gk);
                    }
                    if self.ng(*v) {
                        accumulate(&mut grads, *v, gv);
                    }
                }
                Op::GatherRows(x, indices) => {
                    let mut gx = Matrix::zeros(self.shape(*x));
                    for (i, &src) in indices.iter().enumerate() {
                        let mut dst = gx.row_mut(src);
                        dst += &g.row(i);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        if self.ng(p) {
                            let gp = g.slice(s![.., start..start + w]).to_owned();
                            accumulate(&mut grads, p, gp);
                        }
                        start += w;
                    }
                }
                Op::SliceCols(x, len) => {
                    let mut gx = Matrix::zeros(self.shape(*x));
                    gx.slice_mut(s![.., ..*len]).assign(&g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Reshape(x) => {
                    let shape = self.shape(*x);
                    let flat: Vec<f64> = g.iter().copied().collect();
                    let gx = Matrix::from_shape_vec(shape, flat).expect("reshape backward");
                    accumulate(&mut grads, *x, gx);
                }
                Op::Mask(x, mask) => accumulate(&mut grads, *x, g * mask),
                Op::Mse(pred, target) => {
                    let n = target.len() as f64;
                    let scale = 2.0 * g[[0, 0]] / n;
                    let gp = (self.value(*pred) - target) * scale;
                    accumulate(&mut grads, *pred, gp);
                }
            }
        }
        Gradients { grads: out }
    }

    fn attention_backward(
        &self,
        g: &Matrix,
        q: Var,
        k: Var,
        v: Var,
        shape: AttnShape,
        probs: &[Matrix],
    ) -> (Matrix, Matrix, Matrix) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.ncols();
        let dh = d / shape.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut gq = Matrix::zeros(qv.dim());
        let mut gk = Matrix::zeros(kv.dim());
        let mut gv = Matrix::zeros(vv.dim());
        for seq in 0..shape.n_seq {
            let qr = seq * shape.q_len..(seq + 1) * shape.q_len;
            let kr = seq * shape.kv_len..(seq + 1) * shape.kv_len;
            for h in 0..shape.heads {
                let c = h * dh..(h + 1) * dh;
                let a = &probs[seq * shape.heads + h];
                let go = g.slice(s![qr.clone(), c.clone()]);
                let qs = qv.slice(s![qr.clone(), c.clone()]);
                let ks = kv.slice(s![kr.clone(), c.clone()]);
                let vs = vv.slice(s![kr.clone(), c.clone()]);
                gv.slice_mut(s![kr.clone(), c.clone()]).assign(&a.t().dot(&go));
                let ga = go.dot(&vs.t());
                // softmax backward: A ⊙ (dA − rowsum(dA ⊙ A))
                let mut gs = &ga * a;
                let row_dot = gs.sum_axis(Axis(1));
                for (mut row, (arow, dot)) in gs
                    .axis_iter_mut(Axis(0))
                    .zip(a.axis_iter(Axis(0)).zip(row_dot.iter()))
                {
                    row.scaled_add(-*dot, &arow);
                }
                gs *= scale;
                gq.slice_mut(s![qr.clone(), c.clone()]).assign(&gs.dot(&ks));
                gk.slice_mut(s![kr.clone(), c]).assign(&gs.t().dot(&qs));
            }
        }
        (gq, gk, gv)
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

fn softmax_rows(m: &mut Matrix) {
    for mut row in m.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{ParamGroup, ParamStore};
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
    }

    /// Central-difference check of d(loss)/d(param) for a graph builder.
    fn check<F>(store: &mut ParamStore, build: F)
    where
        F: Fn(&mut Tape) -> Var,
    {
        let grads = {
            let mut tape = Tape::new(store);
            let loss = build(&mut tape);
            tape.backward(loss)
        };
        let eps = 1e-6;
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let analytic = grads.get(id).expect("missing gradient").clone();
            let shape = store.get(id).value.dim();
            for r in 0..shape.0 {
                for c in 0..shape.1 {
                    let orig = store.get(id).value[[r, c]];
                    store.get_mut(id).value[[r, c]] = orig + eps;
                    let plus = {
                        let mut t = Tape::inference(store);
                        let l = build(&mut t);
                        t.value(l)[[0, 0]]
                    };
                    store.get_mut(id).value[[r, c]] = orig - eps;
                    let minus = {
                        let mut t = Tape::inference(store);
                        let l = build(&mut t);
                        t.value(l)[[0, 0]]
                    };
                    store.get_mut(id).value[[r, c]] = orig;
                    let numeric = (plus - minus) / (2.0 * eps);
                    let a = analytic[[r, c]];
                    let denom = a.abs().max(numeric.abs()).max(1e-8);
                    assert!(
                        (a - numeric).abs() / denom < 1e-5,
                        "param {} [{r},{c}]: analytic {a} numeric {numeric}",
                        store.get(id).name
                    );
                }
            }
        }
    }

    #[test]
    fn linear_gelu_layer_norm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::default();
        let w = store.insert("w", ParamGroup::Head, random(&mut rng, 4, 3));
        let b = store.insert("b", ParamGroup::Head, random(&mut rng, 1, 4));
        let gamma = store.insert("g", ParamGroup::Head, random(&mut rng, 1, 4));
        let x = random(&mut rng, 5, 3);
        let target = random(&mut rng, 5, 4);
        check(&mut store, |t| {
            let xv = t.constant(x.clone());
            let wv = t.param(w);
            let bv = t.param(b);
            let gv = t.param(gamma);
            let h = t.matmul_t(xv, wv);
            let h = t.add_row(h, bv);
            let h = t.gelu(h);
            let h = t.layer_norm(h);
            let h = t.mul_row(h, gv);
            t.mse(h, target.clone())
        });
    }

    #[test]
    fn attention_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::default();
        let q = store.insert("q", ParamGroup::Encoder, random(&mut rng, 6, 4));
        let k = store.insert("k", ParamGroup::Encoder, random(&mut rng, 4, 4));
        let v = store.insert("v", ParamGroup::Encoder, random(&mut rng, 4, 4));
        let target = random(&mut rng, 6, 4);
        let shape = AttnShape {
            n_seq: 2,
            q_len: 3,
            kv_len: 2,
            heads: 2,
        };
        check(&mut store, |t| {
            let (qv, kv, vv) = (t.param(q), t.param(k), t.param(v));
            let out = t.attention(qv, kv, vv, shape);
            t.mse(out, target.clone())
        });
    }

    #[test]
    fn structural_op_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::default();
        let a = store.insert("a", ParamGroup::MlpPast, random(&mut rng, 3, 2));
        let b = store.insert("b", ParamGroup::MlpPast, random(&mut rng, 3, 3));
        let c = store.insert("c", ParamGroup::MlpPast, random(&mut rng, 5, 4));
        let mask = random(&mut rng, 4, 5);
        let target = random(&mut rng, 2, 7);
        check(&mut store, |t| {
            let (av, bv, cv) = (t.param(a), t.param(b), t.param(c));
            let cat = t.concat_cols(&[av, bv]);
            let g = t.gather_rows(cat, vec![2, 0, 0, 1]);
            let g = t.mask(g, mask.clone());
            let m = t.matmul(g, cv);
            let m = t.scale_rows(m, array![1.0, -2.0, 0.5, 3.0]);
            let m = t.add_rows_const(m, &array![1.0, 2.0, 3.0, 4.0]);
            let m = t.scale(m, 0.7);
            let r = t.reshape(m, 2, 8);
            let r = t.take_cols(r, 7);
            t.mse(r, target.clone())
        });
    }

    #[test]
    fn frozen_params_receive_no_gradient() {
        let mut store = ParamStore::default();
        let w = store.insert("w", ParamGroup::Encoder, Matrix::ones((2, 2)));
        let h = store.insert("h", ParamGroup::Head, Matrix::ones((2, 2)));
        store.get_mut(w).trainable = false;
        let mut tape = Tape::new(&store);
        let x = tape.constant(Matrix::ones((1, 2)));
        let wv = tape.param(w);
        let hv = tape.param(h);
        let y = tape.matmul(x, wv);
        let y = tape.matmul(y, hv);
        let loss = tape.mse(y, Matrix::zeros((1, 2)));
        let grads = tape.backward(loss);
        assert!(grads.get(w).is_none());
        assert!(grads.get(h).is_some());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut m = array![[1.0, 2.0, 3.0], [1000.0, 1000.0, -1000.0]];
        softmax_rows(&mut m);
        for row in m.axis_iter(Axis(0)) {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
