//! Minimal deterministic reverse-mode autodiff over dense tensors.
//!
//! Operations are recorded into an arena [`Graph`] in execution order, which
//! is already a topological order, so [`Graph::backward`] is a single reverse
//! sweep. Kernels are sequential with a fixed accumulation order, so forward
//! and backward results are bitwise reproducible for identical inputs.
//!
//! Training runs in `f32`; gradient checks instantiate the same graph code
//! with `f64` to keep finite-difference comparisons meaningful.

mod check;
mod kernels;

pub use check::{numerical_gradient, relative_error};

use crate::{Error, Result};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};

/// Scalar type the engine is generic over. Implemented for `f32` and `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Type tag used in file headers.
    const DTYPE: &'static str;
    /// Encoded size in bytes.
    const BYTES: usize;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Real for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

/// Convert an `f64` constant into the working precision.
#[inline]
pub fn real<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("constant out of range for scalar type")
}

/// Handle to a tensor stored in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

#[derive(Clone)]
enum Op<T: Real> {
    Leaf,
    /// `[..., k] x [k, n]`; leading dims of `a` are treated as rows.
    Matmul { a: TensorId, b: TensorId },
    /// `[g, m, k] x [g, k, n]`, independent product per leading index.
    BatchMatmul { a: TensorId, b: TensorId },
    /// Swap the last two axes.
    TransposeLast { a: TensorId },
    Add { a: TensorId, b: TensorId },
    /// `[..., d] + [d]`, bias broadcast over rows.
    AddBias { a: TensorId, bias: TensorId },
    Scale { a: TensorId, c: T },
    /// Repeat the whole tensor along a new leading axis.
    Tile { a: TensorId, reps: usize },
    /// Concatenate along axis 1 of 3-D tensors `[b, s, d]`.
    ConcatSeq { a: TensorId, b: TensorId },
    /// Slice `from..to` along axis 1 of a 3-D tensor.
    SliceSeq { a: TensorId, from: usize, to: usize },
    /// `[a0, a1, a2, a3] -> [a0, a2, a1, a3]`.
    SwapAxes12 { a: TensorId },
    Reshape { a: TensorId },
    /// Numerically stabilized softmax over the last axis.
    Softmax { a: TensorId },
    LayerNorm {
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        // Per-row statistics saved by the forward pass.
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu { a: TensorId },
    /// Mask entries are 0 or 1/(1-p) (inverted dropout).
    Dropout { a: TensorId, mask: Vec<T> },
    /// Mean over all elements of `(a - b)^2`.
    Mse { a: TensorId, b: TensorId },
    SumAll { a: TensorId },
    Detach,
}

struct Node<T: Real> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Arena of executed operations. Build one per forward pass; parameters are
/// bound as leaves and their gradients read back after `backward`.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    finite_checks: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Graph<T> {
    /// Graph with debug-mode finite checks on every op output.
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), finite_checks: true }
    }

    /// Graph without the debug-mode finite checks. Training loops use this so
    /// a divergent run reaches the loss-level non-finite diagnostic instead
    /// of asserting inside a kernel.
    pub fn unchecked() -> Self {
        Graph { nodes: Vec::new(), finite_checks: false }
    }

    fn check_finite(&self, op: &'static str, data: &[T]) {
        if cfg!(debug_assertions) && self.finite_checks {
            for &v in data {
                assert!(v.is_finite(), "non-finite value produced by {op}");
            }
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, requires_grad: bool, op: Op<T>) -> TensorId {
        debug_assert_eq!(numel(&shape), data.len());
        self.nodes.push(Node {
            shape,
            data,
            grad: None,
            requires_grad,
            op,
        });
        TensorId(self.nodes.len() - 1)
    }

    /// Insert a leaf tensor. Leaves with `requires_grad` accumulate gradients
    /// additively across `backward` calls.
    pub fn leaf(&mut self, data: Vec<T>, shape: &[usize], requires_grad: bool) -> Result<TensorId> {
        if numel(shape) != data.len() {
            return Err(Error::BadShape {
                op: "leaf",
                expected: format!("{} elements", numel(shape)),
                got: vec![data.len()],
            });
        }
        Ok(self.push(shape.to_vec(), data, requires_grad, Op::Leaf))
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, data: Vec<T>, shape: &[usize]) -> Result<TensorId> {
        self.leaf(data, shape, false)
    }

    /// Scalar constant with shape `[1]`.
    pub fn scalar(&mut self, v: T) -> TensorId {
        self.push(vec![1], vec![v], false, Op::Leaf)
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn value(&self, id: TensorId) -> &[T] {
        &self.nodes[id.0].data
    }

    /// Value of a single-element tensor.
    pub fn scalar_value(&self, id: TensorId) -> T {
        debug_assert_eq!(self.nodes[id.0].data.len(), 1);
        self.nodes[id.0].data[0]
    }

    pub fn grad(&self, id: TensorId) -> Option<&[T]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Clear accumulated gradients on every node.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn rg2(&self, a: TensorId, b: TensorId) -> bool {
        self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad
    }

    // ── forward ops ──────────────────────────────────────────────────

    /// Matrix product `[..., k] x [k, n] -> [..., n]`. Leading axes of `a`
    /// are flattened into rows.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() != 2 || sa.is_empty() || sa[sa.len() - 1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let k = sb[0];
        let n = sb[1];
        let m = numel(sa) / k;
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_nn(self.value(a), self.value(b), m, k, n, &mut out);
        self.check_finite("matmul", &out);
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let rg = self.rg2(a, b);
        Ok(self.push(shape, out, rg, Op::Matmul { a, b }))
    }

    /// Batched matrix product `[g, m, k] x [g, k, n] -> [g, m, n]`.
    pub fn batch_matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::ShapeMismatch {
                op: "batch_matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (g, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![T::zero(); g * m * n];
        for i in 0..g {
            kernels::matmul_nn(
                &self.value(a)[i * m * k..(i + 1) * m * k],
                &self.value(b)[i * k * n..(i + 1) * k * n],
                m,
                k,
                n,
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        self.check_finite("batch_matmul", &out);
        let rg = self.rg2(a, b);
        Ok(self.push(vec![g, m, n], out, rg, Op::BatchMatmul { a, b }))
    }

    /// Swap the last two axes.
    pub fn transpose_last(&mut self, a: TensorId) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        if sa.len() < 2 {
            return Err(Error::BadShape {
                op: "transpose_last",
                expected: "rank >= 2".into(),
                got: sa,
            });
        }
        let (m, n) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let g = numel(&sa) / (m * n);
        let mut out = vec![T::zero(); numel(&sa)];
        kernels::transpose_batched(self.value(a), g, m, n, &mut out);
        let mut shape = sa.clone();
        let l = shape.len();
        shape.swap(l - 2, l - 1);
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(shape, out, rg, Op::TransposeLast { a }))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let out: Vec<T> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x + y)
            .collect();
        self.check_finite("add", &out);
        let shape = self.shape(a).to_vec();
        let rg = self.rg2(a, b);
        Ok(self.push(shape, out, rg, Op::Add { a, b }))
    }

    /// Add a `[d]` bias to every row of `[..., d]`.
    pub fn add_bias(&mut self, a: TensorId, bias: TensorId) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(bias).to_vec();
        let d = *sa.last().unwrap_or(&0);
        if sb.len() != 1 || sb[0] != d {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: sa,
                rhs: sb,
            });
        }
        let bv = self.value(bias).to_vec();
        let out: Vec<T> = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv[i % d])
            .collect();
        self.check_finite("add_bias", &out);
        let rg = self.rg2(a, bias);
        Ok(self.push(sa, out, rg, Op::AddBias { a, bias }))
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&mut self, a: TensorId, c: T) -> TensorId {
        let out: Vec<T> = self.value(a).iter().map(|&x| x * c).collect();
        self.check_finite("scale", &out);
        let shape = self.shape(a).to_vec();
        let rg = self.nodes[a.0].requires_grad;
        self.push(shape, out, rg, Op::Scale { a, c })
    }

    /// Repeat a tensor `reps` times along a new leading axis.
    pub fn tile(&mut self, a: TensorId, reps: usize) -> Result<TensorId> {
        if reps == 0 {
            return Err(Error::Config("tile with reps=0".into()));
        }
        let base = self.value(a).to_vec();
        let mut out = Vec::with_capacity(base.len() * reps);
        for _ in 0..reps {
            out.extend_from_slice(&base);
        }
        let mut shape = vec![reps];
        shape.extend_from_slice(self.shape(a));
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(shape, out, rg, Op::Tile { a, reps }))
    }

    /// Concatenate two `[b, s, d]` tensors along the sequence axis.
    pub fn concat_seq(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[2] {
            return Err(Error::ShapeMismatch {
                op: "concat_seq",
                lhs: sa,
                rhs: sb,
            });
        }
        let (bs, s1, s2, d) = (sa[0], sa[1], sb[1], sa[2]);
        let mut out = Vec::with_capacity(bs * (s1 + s2) * d);
        for i in 0..bs {
            out.extend_from_slice(&self.value(a)[i * s1 * d..(i + 1) * s1 * d]);
            out.extend_from_slice(&self.value(b)[i * s2 * d..(i + 1) * s2 * d]);
        }
        let rg = self.rg2(a, b);
        Ok(self.push(vec![bs, s1 + s2, d], out, rg, Op::ConcatSeq { a, b }))
    }

    /// Slice `from..to` along the sequence axis of a `[b, s, d]` tensor.
    pub fn slice_seq(&mut self, a: TensorId, from: usize, to: usize) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 3 || from >= to || to > sa[1] {
            return Err(Error::BadShape {
                op: "slice_seq",
                expected: format!("rank 3 with {from}..{to} inside sequence"),
                got: sa,
            });
        }
        let (bs, s, d) = (sa[0], sa[1], sa[2]);
        let w = to - from;
        let mut out = Vec::with_capacity(bs * w * d);
        for i in 0..bs {
            let row = &self.value(a)[i * s * d..(i + 1) * s * d];
            out.extend_from_slice(&row[from * d..to * d]);
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(vec![bs, w, d], out, rg, Op::SliceSeq { a, from, to }))
    }

    /// Permute a 4-D tensor `[a0, a1, a2, a3] -> [a0, a2, a1, a3]`.
    pub fn swap_axes_1_2(&mut self, a: TensorId) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 4 {
            return Err(Error::BadShape {
                op: "swap_axes_1_2",
                expected: "rank 4".into(),
                got: sa,
            });
        }
        let mut out = vec![T::zero(); numel(&sa)];
        kernels::swap_axes_1_2(self.value(a), sa[0], sa[1], sa[2], sa[3], &mut out);
        let shape = vec![sa[0], sa[2], sa[1], sa[3]];
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(shape, out, rg, Op::SwapAxes12 { a }))
    }

    /// Reinterpret the data with a new shape of equal element count.
    pub fn reshape(&mut self, a: TensorId, shape: &[usize]) -> Result<TensorId> {
        if numel(shape) != self.value(a).len() {
            return Err(Error::BadShape {
                op: "reshape",
                expected: format!("{} elements", self.value(a).len()),
                got: shape.to_vec(),
            });
        }
        let data = self.value(a).to_vec();
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(shape.to_vec(), data, rg, Op::Reshape { a }))
    }

    /// Softmax over the last axis, stabilized by subtracting the row max.
    /// Each slice along the last axis sums to 1.
    pub fn softmax(&mut self, a: TensorId) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        let d = *sa.last().ok_or(Error::BadShape {
            op: "softmax",
            expected: "rank >= 1".into(),
            got: sa.clone(),
        })?;
        let rows = numel(&sa) / d;
        let mut out = self.value(a).to_vec();
        kernels::softmax_rows(&mut out, rows, d);
        self.check_finite("softmax", &out);
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(sa, out, rg, Op::Softmax { a }))
    }

    /// Per-row normalization over the last axis followed by an affine map:
    /// `y = (x - mean) / sqrt(var + eps) * gamma + beta` with biased variance.
    pub fn layer_norm(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
    ) -> Result<TensorId> {
        let sx = self.shape(x).to_vec();
        let d = *sx.last().unwrap_or(&0);
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: sx,
                rhs: self.shape(gamma).to_vec(),
            });
        }
        if eps <= 0.0 {
            return Err(Error::Config("layer_norm requires eps > 0".into()));
        }
        let rows = numel(&sx) / d;
        let mut out = vec![T::zero(); rows * d];
        let mut mean = vec![T::zero(); rows];
        let mut rstd = vec![T::zero(); rows];
        kernels::layer_norm_fwd(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            real(eps),
            rows,
            d,
            &mut out,
            &mut mean,
            &mut rstd,
        );
        self.check_finite("layer_norm", &out);
        let rg = self.nodes[x.0].requires_grad || self.rg2(gamma, beta);
        Ok(self.push(sx, out, rg, Op::LayerNorm { x, gamma, beta, mean, rstd }))
    }

    /// GELU with the tanh approximation:
    /// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    pub fn gelu(&mut self, a: TensorId) -> TensorId {
        let out: Vec<T> = self.value(a).iter().map(|&x| kernels::gelu(x)).collect();
        self.check_finite("gelu", &out);
        let shape = self.shape(a).to_vec();
        let rg = self.nodes[a.0].requires_grad;
        self.push(shape, out, rg, Op::Gelu { a })
    }

    /// Inverted dropout with keep-probability `1 - p`; `mask` entries must be
    /// `0` or `1/(1-p)`. Callers sample the mask so the graph stays pure.
    pub fn dropout(&mut self, a: TensorId, mask: Vec<T>) -> Result<TensorId> {
        if mask.len() != self.value(a).len() {
            return Err(Error::BadShape {
                op: "dropout",
                expected: format!("mask of {} elements", self.value(a).len()),
                got: vec![mask.len()],
            });
        }
        let out: Vec<T> = self
            .value(a)
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| x * m)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(shape, out, rg, Op::Dropout { a, mask }))
    }

    /// Mean over all elements of `(a - b)^2`, a `[1]`-shaped scalar.
    pub fn mse(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: "mse",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let n = real::<T>(self.value(a).len() as f64);
        let mut acc = T::zero();
        for (&x, &y) in self.value(a).iter().zip(self.value(b)) {
            let d = x - y;
            acc = acc + d * d;
        }
        let out = vec![acc / n];
        self.check_finite("mse", &out);
        let rg = self.rg2(a, b);
        Ok(self.push(vec![1], out, rg, Op::Mse { a, b }))
    }

    /// Sum of all elements, a `[1]`-shaped scalar.
    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let mut acc = T::zero();
        for &x in self.value(a) {
            acc = acc + x;
        }
        let rg = self.nodes[a.0].requires_grad;
        self.push(vec![1], vec![acc], rg, Op::SumAll { a })
    }

    /// Identity on values; gradient does not propagate through this edge.
    pub fn detach(&mut self, a: TensorId) -> TensorId {
        let data = self.value(a).to_vec();
        let shape = self.shape(a).to_vec();
        self.push(shape, data, false, Op::Detach)
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Visits nodes in reverse recording
    /// order exactly once; leaf gradients accumulate additively across calls,
    /// intermediate gradients are recomputed fresh each call.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        for n in &mut self.nodes {
            if !matches!(n.op, Op::Leaf) {
                n.grad = None;
            }
        }
        self.accumulate(loss, &[T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || node.grad.is_none() {
                continue;
            }
            let op = node.op.clone();
            let g = node.grad.clone().unwrap();
            self.backprop_node(TensorId(i), op, &g);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: TensorId, contrib: &[T]) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let n = &mut self.nodes[id.0];
        let grad = n.grad.get_or_insert_with(|| vec![T::zero(); n.data.len()]);
        for (g, &c) in grad.iter_mut().zip(contrib) {
            *g = *g + c;
        }
    }

    fn backprop_node(&mut self, id: TensorId, op: Op<T>, g: &[T]) {
        match op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let sb = self.shape(b).to_vec();
                let (k, n) = (sb[0], sb[1]);
                let m = self.value(a).len() / k;
                if self.requires_grad(a) {
                    let mut da = vec![T::zero(); m * k];
                    kernels::matmul_nt(g, self.value(b), m, n, k, &mut da);
                    self.accumulate(a, &da);
                }
                if self.requires_grad(b) {
                    let mut db = vec![T::zero(); k * n];
                    kernels::matmul_tn(self.value(a), g, m, k, n, &mut db);
                    self.accumulate(b, &db);
                }
            }
            Op::BatchMatmul { a, b } => {
                let sa = self.shape(a).to_vec();
                let sb = self.shape(b).to_vec();
                let (gn, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                if self.requires_grad(a) {
                    let mut da = vec![T::zero(); gn * m * k];
                    for i in 0..gn {
                        kernels::matmul_nt(
                            &g[i * m * n..(i + 1) * m * n],
                            &self.value(b)[i * k * n..(i + 1) * k * n],
                            m,
                            n,
                            k,
                            &mut da[i * m * k..(i + 1) * m * k],
                        );
                    }
                    self.accumulate(a, &da);
                }
                if self.requires_grad(b) {
                    let mut db = vec![T::zero(); gn * k * n];
                    for i in 0..gn {
                        kernels::matmul_tn(
                            &self.value(a)[i * m * k..(i + 1) * m * k],
                            &g[i * m * n..(i + 1) * m * n],
                            m,
                            k,
                            n,
                            &mut db[i * k * n..(i + 1) * k * n],
                        );
                    }
                    self.accumulate(b, &db);
                }
            }
            Op::TransposeLast { a } => {
                let s = self.shape(id).to_vec();
                let (m, n) = (s[s.len() - 2], s[s.len() - 1]);
                let gn = g.len() / (m * n);
                let mut da = vec![T::zero(); g.len()];
                kernels::transpose_batched(g, gn, m, n, &mut da);
                self.accumulate(a, &da);
            }
            Op::Add { a, b } => {
                self.accumulate(a, g);
                self.accumulate(b, g);
            }
            Op::AddBias { a, bias } => {
                self.accumulate(a, g);
                if self.requires_grad(bias) {
                    let d = self.value(bias).len();
                    let mut db = vec![T::zero(); d];
                    for (i, &gv) in g.iter().enumerate() {
                        db[i % d] = db[i % d] + gv;
                    }
                    self.accumulate(bias, &db);
                }
            }
            Op::Scale { a, c } => {
                let da: Vec<T> = g.iter().map(|&x| x * c).collect();
                self.accumulate(a, &da);
            }
            Op::Tile { a, reps } => {
                let n = self.value(a).len();
                let mut da = vec![T::zero(); n];
                for r in 0..reps {
                    for j in 0..n {
                        da[j] = da[j] + g[r * n + j];
                    }
                }
                self.accumulate(a, &da);
            }
            Op::ConcatSeq { a, b } => {
                let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
                let (bs, s1, s2, d) = (sa[0], sa[1], sb[1], sa[2]);
                let mut da = vec![T::zero(); bs * s1 * d];
                let mut db = vec![T::zero(); bs * s2 * d];
                let w = (s1 + s2) * d;
                for i in 0..bs {
                    da[i * s1 * d..(i + 1) * s1 * d].copy_from_slice(&g[i * w..i * w + s1 * d]);
                    db[i * s2 * d..(i + 1) * s2 * d]
                        .copy_from_slice(&g[i * w + s1 * d..(i + 1) * w]);
                }
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::SliceSeq { a, from, to } => {
                let sa = self.shape(a).to_vec();
                let (bs, s, d) = (sa[0], sa[1], sa[2]);
                let w = to - from;
                let mut da = vec![T::zero(); bs * s * d];
                for i in 0..bs {
                    da[i * s * d + from * d..i * s * d + to * d]
                        .copy_from_slice(&g[i * w * d..(i + 1) * w * d]);
                }
                self.accumulate(a, &da);
            }
            Op::SwapAxes12 { a } => {
                let s = self.shape(id).to_vec();
                let mut da = vec![T::zero(); g.len()];
                kernels::swap_axes_1_2(g, s[0], s[1], s[2], s[3], &mut da);
                self.accumulate(a, &da);
            }
            Op::Reshape { a } => {
                self.accumulate(a, g);
            }
            Op::Softmax { a } => {
                let y = self.value(id);
                let d = *self.shape(id).last().unwrap();
                let rows = y.len() / d;
                let mut da = vec![T::zero(); y.len()];
                for r in 0..rows {
                    let y_r = &y[r * d..(r + 1) * d];
                    let g_r = &g[r * d..(r + 1) * d];
                    let mut dot = T::zero();
                    for j in 0..d {
                        dot = dot + g_r[j] * y_r[j];
                    }
                    let da_r = &mut da[r * d..(r + 1) * d];
                    for j in 0..d {
                        da_r[j] = y_r[j] * (g_r[j] - dot);
                    }
                }
                self.accumulate(a, &da);
            }
            Op::LayerNorm { x, gamma, beta, mean, rstd } => {
                let d = *self.shape(x).last().unwrap();
                let rows = self.value(x).len() / d;
                let xv = self.value(x).to_vec();
                let gv = self.value(gamma).to_vec();
                let mut dx = vec![T::zero(); rows * d];
                let mut dgamma = vec![T::zero(); d];
                let mut dbeta = vec![T::zero(); d];
                kernels::layer_norm_bwd(
                    &xv, &gv, &mean, &rstd, g, rows, d, &mut dx, &mut dgamma, &mut dbeta,
                );
                if self.requires_grad(x) {
                    self.accumulate(x, &dx);
                }
                if self.requires_grad(gamma) {
                    self.accumulate(gamma, &dgamma);
                }
                if self.requires_grad(beta) {
                    self.accumulate(beta, &dbeta);
                }
            }
            Op::Gelu { a } => {
                let da: Vec<T> = self
                    .value(a)
                    .iter()
                    .zip(g)
                    .map(|(&x, &gv)| gv * kernels::gelu_grad(x))
                    .collect();
                self.accumulate(a, &da);
            }
            Op::Dropout { a, mask } => {
                let da: Vec<T> = g.iter().zip(&mask).map(|(&gv, &m)| gv * m).collect();
                self.accumulate(a, &da);
            }
            Op::Mse { a, b } => {
                let n = real::<T>(self.value(a).len() as f64);
                let two = real::<T>(2.0);
                let s = g[0] * two / n;
                if self.requires_grad(a) {
                    let da: Vec<T> = self
                        .value(a)
                        .iter()
                        .zip(self.value(b))
                        .map(|(&x, &y)| s * (x - y))
                        .collect();
                    self.accumulate(a, &da);
                }
                if self.requires_grad(b) {
                    let db: Vec<T> = self
                        .value(a)
                        .iter()
                        .zip(self.value(b))
                        .map(|(&x, &y)| -s * (x - y))
                        .collect();
                    self.accumulate(b, &db);
                }
            }
            Op::SumAll { a } => {
                let da = vec![g[0]; self.value(a).len()];
                self.accumulate(a, &da);
            }
            // Forward-transparent, backward-opaque.
            Op::Detach => {}
        }
    }
}
