//! Reverse-mode tape over dense `f64` vectors. Each op stores its inputs and
//! whatever its backward rule needs; `backward` walks the tape once in reverse
//! and accumulates into the gradient buffers of [`ModelParams`].

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ModelParams, ParamId};
use crate::error::{FiltError, Result};
use crate::rng::rng_for;

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::LeakyRelu => "leaky_relu",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = FiltError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "leaky_relu" | "leakyrelu" => Ok(Activation::LeakyRelu),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            _ => Err(FiltError::InvalidArgument(format!("unknown activation `{s}`"))),
        }
    }
}

#[derive(Debug)]
enum Op {
    Const,
    Param { id: ParamId, offset: usize },
    MatVec { w: NodeId, x: NodeId, rows: usize, cols: usize },
    Concat(Vec<NodeId>),
    Slice { x: NodeId, start: usize },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale { s: NodeId, x: NodeId },
    MulConst { x: NodeId, c: f64 },
    WeightedSum { w: NodeId, xs: Vec<NodeId> },
    Softmax(NodeId),
    Dot(NodeId, NodeId),
    Act { x: NodeId, kind: Activation },
    Sin(NodeId),
    Cos(NodeId),
    Mask { x: NodeId, mask: Vec<f64> },
    ComplexScore(NodeId, NodeId, NodeId),
    Hinge { pos: NodeId, negs: Vec<NodeId>, margin: f64 },
    Sum(Vec<NodeId>),
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// One forward recording. Parameter reads are cached, so repeated lookups of
/// the same row or matrix share a node.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    cache: HashMap<(ParamId, usize, usize), NodeId>,
    train: bool,
    dropout_seed: u64,
}

fn shape_err(op: &'static str, detail: String) -> FiltError {
    FiltError::Shape { op, detail }
}

impl Tape {
    /// `train` enables dropout; masks are derived from `dropout_seed` and the
    /// caller's key, never from call order.
    pub fn new(train: bool, dropout_seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            cache: HashMap::new(),
            train,
            dropout_seed,
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    fn dim(&self, id: NodeId) -> usize {
        self.nodes[id.0].value.len()
    }

    pub fn constant(&mut self, value: Vec<f64>) -> NodeId {
        self.push(value, Op::Const)
    }

    /// A contiguous slice `[offset, offset + len)` of a parameter tensor.
    pub fn param_slice(
        &mut self,
        params: &ModelParams,
        id: ParamId,
        offset: usize,
        len: usize,
    ) -> Result<NodeId> {
        if let Some(&n) = self.cache.get(&(id, offset, len)) {
            return Ok(n);
        }
        let t = params.get(id);
        if offset + len > t.len() {
            return Err(shape_err(
                "param_slice",
                format!("[{offset}, {}) out of range for {} ({})", offset + len, t.name, t.len()),
            ));
        }
        let n = self.push(t.values[offset..offset + len].to_vec(), Op::Param { id, offset });
        self.cache.insert((id, offset, len), n);
        Ok(n)
    }

    pub fn param(&mut self, params: &ModelParams, id: ParamId) -> Result<NodeId> {
        let len = params.get(id).len();
        self.param_slice(params, id, 0, len)
    }

    pub fn param_row(&mut self, params: &ModelParams, id: ParamId, row: usize) -> Result<NodeId> {
        let t = params.get(id);
        let w = t.row_len();
        if row >= t.shape[0] {
            return Err(shape_err(
                "param_row",
                format!("row {row} out of range for {} with {} rows", t.name, t.shape[0]),
            ));
        }
        self.param_slice(params, id, row * w, w)
    }

    /// `W x` for a row-major `rows x cols` matrix node.
    pub fn matvec(&mut self, w: NodeId, rows: usize, cols: usize, x: NodeId) -> Result<NodeId> {
        if self.dim(w) != rows * cols || self.dim(x) != cols {
            return Err(shape_err(
                "matvec",
                format!(
                    "matrix {rows}x{cols} (len {}) times vector of len {}",
                    self.dim(w),
                    self.dim(x)
                ),
            ));
        }
        let (wv, xv) = (self.value(w), self.value(x));
        let out = (0..rows)
            .map(|i| {
                wv[i * cols..(i + 1) * cols]
                    .iter()
                    .zip(xv)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        Ok(self.push(out, Op::MatVec { w, x, rows, cols }))
    }

    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(shape_err("concat", "no inputs".into()));
        }
        let out = xs.iter().flat_map(|&x| self.value(x).iter().copied()).collect();
        Ok(self.push(out, Op::Concat(xs.to_vec())))
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        if start + len > self.dim(x) {
            return Err(shape_err(
                "slice",
                format!("[{start}, {}) of a vector of len {}", start + len, self.dim(x)),
            ));
        }
        let out = self.value(x)[start..start + len].to_vec();
        Ok(self.push(out, Op::Slice { x, start }))
    }

    fn same_len(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.dim(a) != self.dim(b) {
            return Err(shape_err(op, format!("lengths {} and {}", self.dim(a), self.dim(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_len("add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_len("sub", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Scalar node `s` times vector `x`.
    pub fn scale(&mut self, s: NodeId, x: NodeId) -> Result<NodeId> {
        if self.dim(s) != 1 {
            return Err(shape_err("scale", format!("scale factor has len {}", self.dim(s))));
        }
        let k = self.scalar(s);
        let out = self.value(x).iter().map(|v| k * v).collect();
        Ok(self.push(out, Op::Scale { s, x }))
    }

    pub fn mul_const(&mut self, x: NodeId, c: f64) -> NodeId {
        let out = self.value(x).iter().map(|v| c * v).collect();
        self.push(out, Op::MulConst { x, c })
    }

    /// `sum_i w[i] * xs[i]`.
    pub fn weighted_sum(&mut self, w: NodeId, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() || self.dim(w) != xs.len() {
            return Err(shape_err(
                "weighted_sum",
                format!("{} weights for {} vectors", self.dim(w), xs.len()),
            ));
        }
        let d = self.dim(xs[0]);
        if let Some(bad) = xs.iter().find(|&&x| self.dim(x) != d) {
            return Err(shape_err(
                "weighted_sum",
                format!("vector lengths {d} and {}", self.dim(*bad)),
            ));
        }
        let mut out = vec![0.0; d];
        for (&wi, &x) in self.value(w).iter().zip(xs) {
            for (o, v) in out.iter_mut().zip(self.value(x)) {
                *o += wi * v;
            }
        }
        Ok(self.push(out, Op::WeightedSum { w, xs: xs.to_vec() }))
    }

    /// Max-shifted softmax.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        if self.dim(x) == 0 {
            return Err(shape_err("softmax", "empty input".into()));
        }
        let out = softmax(self.value(x));
        Ok(self.push(out, Op::Softmax(x)))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_len("dot", a, b)?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).sum();
        Ok(self.push(vec![v], Op::Dot(a, b)))
    }

    pub fn activation(&mut self, x: NodeId, kind: Activation) -> NodeId {
        let out = self.value(x).iter().map(|&v| kind.apply(v)).collect();
        self.push(out, Op::Act { x, kind })
    }

    pub fn sin(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).iter().map(|v| v.sin()).collect();
        self.push(out, Op::Sin(x))
    }

    pub fn cos(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).iter().map(|v| v.cos()).collect();
        self.push(out, Op::Cos(x))
    }

    /// Inverted dropout. Identity when not training or when `p == 0`.
    pub fn dropout(&mut self, x: NodeId, p: f64, key: &[u64]) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(FiltError::InvalidArgument(format!("dropout rate {p} outside [0, 1)")));
        }
        if !self.train || p == 0.0 {
            return Ok(x);
        }
        let mut rng = rng_for(self.dropout_seed, key);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.dim(x))
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out = self.value(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        Ok(self.push(out, Op::Mask { x, mask }))
    }

    /// `Re(<s, r, conj(o)>)` with real parts in the first half of each vector.
    pub fn complex_score(&mut self, s: NodeId, r: NodeId, o: NodeId) -> Result<NodeId> {
        let v = crate::scoring::complex_score(self.value(s), self.value(r), self.value(o))?;
        Ok(self.push(vec![v], Op::ComplexScore(s, r, o)))
    }

    /// `sum_j max(margin - pos + negs[j], 0)` over scalar nodes.
    pub fn hinge(&mut self, pos: NodeId, negs: &[NodeId], margin: f64) -> Result<NodeId> {
        if self.dim(pos) != 1 || negs.iter().any(|&n| self.dim(n) != 1) {
            return Err(shape_err("hinge", "scores must be scalars".into()));
        }
        let p = self.scalar(pos);
        let v = negs
            .iter()
            .map(|&n| (margin - p + self.scalar(n)).max(0.0))
            .sum();
        Ok(self.push(
            vec![v],
            Op::Hinge {
                pos,
                negs: negs.to_vec(),
                margin,
            },
        ))
    }

    pub fn sum(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.iter().any(|&x| self.dim(x) != 1) {
            return Err(shape_err("sum", "inputs must be scalars".into()));
        }
        let v = xs.iter().map(|&x| self.scalar(x)).sum();
        Ok(self.push(vec![v], Op::Sum(xs.to_vec())))
    }

    /// Accumulate d(loss)/d(param) into `params` for every parameter read on
    /// this tape. Gradients add to whatever is already in the buffers.
    pub fn backward(&self, loss: NodeId, params: &mut ModelParams) -> Result<()> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(FiltError::InvalidArgument(
                "backward called without a recorded forward pass".into(),
            ));
        }
        if self.dim(loss) != 1 {
            return Err(shape_err("backward", format!("loss has len {}", self.dim(loss))));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Const => {}
                Op::Param { id, offset } => {
                    let t = params.get_mut(*id);
                    for (dst, gv) in t.grad[*offset..*offset + g.len()].iter_mut().zip(&g) {
                        *dst += gv;
                    }
                }
                Op::MatVec { w, x, rows, cols } => {
                    let (wv, xv) = (self.value(*w), self.value(*x));
                    {
                        let gw = acc(&mut grads, *w, rows * cols);
                        for r in 0..*rows {
                            let gr = g[r];
                            if gr == 0.0 {
                                continue;
                            }
                            for (dst, xj) in gw[r * cols..(r + 1) * cols].iter_mut().zip(xv) {
                                *dst += gr * xj;
                            }
                        }
                    }
                    let gx = acc(&mut grads, *x, *cols);
                    for r in 0..*rows {
                        let gr = g[r];
                        for (dst, wij) in gx.iter_mut().zip(&wv[r * cols..(r + 1) * cols]) {
                            *dst += gr * wij;
                        }
                    }
                }
                Op::Concat(xs) => {
                    let mut start = 0;
                    for &x in xs {
                        let n = self.dim(x);
                        add_into(acc(&mut grads, x, n), &g[start..start + n]);
                        start += n;
                    }
                }
                Op::Slice { x, start } => {
                    let n = self.dim(*x);
                    add_into(&mut acc(&mut grads, *x, n)[*start..*start + g.len()], &g);
                }
                Op::Add(a, b) => {
                    add_into(acc(&mut grads, *a, g.len()), &g);
                    add_into(acc(&mut grads, *b, g.len()), &g);
                }
                Op::Sub(a, b) => {
                    add_into(acc(&mut grads, *a, g.len()), &g);
                    for (dst, gv) in acc(&mut grads, *b, g.len()).iter_mut().zip(&g) {
                        *dst -= gv;
                    }
                }
                Op::Scale { s, x } => {
                    let k = self.scalar(*s);
                    let xv = self.value(*x);
                    let gs: f64 = g.iter().zip(xv).map(|(a, b)| a * b).sum();
                    acc(&mut grads, *s, 1)[0] += gs;
                    for (dst, gv) in acc(&mut grads, *x, g.len()).iter_mut().zip(&g) {
                        *dst += k * gv;
                    }
                }
                Op::MulConst { x, c } => {
                    for (dst, gv) in acc(&mut grads, *x, g.len()).iter_mut().zip(&g) {
                        *dst += c * gv;
                    }
                }
                Op::WeightedSum { w, xs } => {
                    let wv = self.value(*w);
                    for (k, &x) in xs.iter().enumerate() {
                        let xv = self.value(x);
                        let gw: f64 = g.iter().zip(xv).map(|(a, b)| a * b).sum();
                        acc(&mut grads, *w, xs.len())[k] += gw;
                        let wk = wv[k];
                        for (dst, gv) in acc(&mut grads, x, g.len()).iter_mut().zip(&g) {
                            *dst += wk * gv;
                        }
                    }
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let gy: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                    for ((dst, gv), yv) in acc(&mut grads, *x, y.len()).iter_mut().zip(&g).zip(y) {
                        *dst += yv * (gv - gy);
                    }
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    for (dst, v) in acc(&mut grads, *a, av.len()).iter_mut().zip(bv) {
                        *dst += g[0] * v;
                    }
                    for (dst, v) in acc(&mut grads, *b, bv.len()).iter_mut().zip(av) {
                        *dst += g[0] * v;
                    }
                }
                Op::Act { x, kind } => {
                    let xv = self.value(*x);
                    let y = &node.value;
                    let gx = acc(&mut grads, *x, y.len());
                    for k in 0..y.len() {
                        gx[k] += g[k] * kind.derivative(xv[k], y[k]);
                    }
                }
                Op::Sin(x) => {
                    let xv = self.value(*x);
                    for ((dst, gv), v) in acc(&mut grads, *x, g.len()).iter_mut().zip(&g).zip(xv) {
                        *dst += gv * v.cos();
                    }
                }
                Op::Cos(x) => {
                    let xv = self.value(*x);
                    for ((dst, gv), v) in acc(&mut grads, *x, g.len()).iter_mut().zip(&g).zip(xv) {
                        *dst -= gv * v.sin();
                    }
                }
                Op::Mask { x, mask } => {
                    for ((dst, gv), m) in acc(&mut grads, *x, g.len()).iter_mut().zip(&g).zip(mask) {
                        *dst += gv * m;
                    }
                }
                Op::ComplexScore(s, r, o) => {
                    let (gs, gr, go) =
                        crate::scoring::complex_score_grads(self.value(*s), self.value(*r), self.value(*o));
                    let n = gs.len();
                    for (dst, v) in acc(&mut grads, *s, n).iter_mut().zip(&gs) {
                        *dst += g[0] * v;
                    }
                    for (dst, v) in acc(&mut grads, *r, n).iter_mut().zip(&gr) {
                        *dst += g[0] * v;
                    }
                    for (dst, v) in acc(&mut grads, *o, n).iter_mut().zip(&go) {
                        *dst += g[0] * v;
                    }
                }
                Op::Hinge { pos, negs, margin } => {
                    let p = self.scalar(*pos);
                    let mut gp = 0.0;
                    for &n in negs {
                        if margin - p + self.scalar(n) > 0.0 {
                            gp -= g[0];
                            acc(&mut grads, n, 1)[0] += g[0];
                        }
                    }
                    acc(&mut grads, *pos, 1)[0] += gp;
                }
                Op::Sum(xs) => {
                    for &x in xs {
                        acc(&mut grads, x, 1)[0] += g[0];
                    }
                }
            }
        }
        Ok(())
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut Vec<f64> {
    grads[id.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Max-shifted softmax of a plain slice.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::params::ModelDims;

    fn params() -> ModelParams {
        ModelParams::init(
            ModelDims {
                num_entities: 3,
                num_relations: 1,
                num_concepts: 1,
                dim: 2,
                time_dim: 1,
            },
            0,
        )
        .unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut t = Tape::new(false, 0);
        let x = t.constant(vec![0.0; 3]);
        let y = t.softmax(x).unwrap();
        for v in t.value(y) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        // large logits stay finite
        let big = softmax(&[1000.0, 1000.0, -1000.0]);
        assert!((big[0] - 0.5).abs() < 1e-12 && big[2] == 0.0);
    }

    #[test]
    fn leaky_relu_slope() {
        assert_eq!(Activation::LeakyRelu.apply(-1.0), -0.01);
        assert_eq!(Activation::LeakyRelu.apply(2.0), 2.0);
    }

    #[test]
    fn dropout_zero_and_eval_are_identity() {
        let mut t = Tape::new(true, 1);
        let x = t.constant(vec![1.0, 2.0]);
        assert_eq!(t.dropout(x, 0.0, &[1]).unwrap(), x);
        let mut t = Tape::new(false, 1);
        let x = t.constant(vec![1.0, 2.0]);
        assert_eq!(t.dropout(x, 0.5, &[1]).unwrap(), x);
    }

    #[test]
    fn dot_self_gradient() {
        let mut p = params();
        p.get_mut(ParamId::Entity).row_mut(0).copy_from_slice(&[1.0, 2.0]);
        let mut t = Tape::new(false, 0);
        let x = t.param_row(&p, ParamId::Entity, 0).unwrap();
        let l = t.dot(x, x).unwrap();
        t.backward(l, &mut p).unwrap();
        assert_eq!(&p.get(ParamId::Entity).grad[..2], &[2.0, 4.0]);
        // untouched rows stay zero
        assert!(p.get(ParamId::Entity).grad[2..].iter().all(|g| *g == 0.0));
        // accumulation is additive
        t.backward(l, &mut p).unwrap();
        assert_eq!(&p.get(ParamId::Entity).grad[..2], &[4.0, 8.0]);
    }

    #[test]
    fn backward_without_forward_fails() {
        let mut p = params();
        let t = Tape::new(false, 0);
        assert!(t.backward(NodeId(0), &mut p).is_err());
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut t = Tape::new(false, 0);
        let a = t.constant(vec![1.0, 2.0]);
        let b = t.constant(vec![1.0]);
        let err = t.add(a, b).unwrap_err().to_string();
        assert!(err.contains("add"), "{err}");
        let err = t.matvec(a, 2, 2, b).unwrap_err().to_string();
        assert!(err.contains("matvec"), "{err}");
    }
}
