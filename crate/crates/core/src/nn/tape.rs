//! Reverse-mode differentiation over batched row-major matrices.
//!
//! A [`Tape`] records one forward computation. Every value lives on the tape
//! as a node addressed by a [`Var`]; [`Tape::backward`] walks the nodes in
//! reverse and accumulates gradients into the leaves. Parameters enter the
//! tape through [`Tape::param`] with a caller-chosen slot number so the
//! gradients can be handed back to the owning [`Tensor`]s afterwards.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::linalg::gemm;
use super::{Activation, Tensor};
use crate::{Error, Result};

/// Pre-activations are clamped to this magnitude before `tanh`/`sigmoid`.
pub const ACTIVATION_CLAMP: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

/// Backward rule for an operation implemented outside the built-in set.
///
/// `input_grads[i]` is a zero-initialised buffer with the length of input
/// `i`; implementations add their contribution to it.
pub trait CustomBackward {
    fn backward(&self, grad_out: &[f64], input_grads: &mut [Vec<f64>]);
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Dense(Var, Var, Var, Activation),
    AddBias(Var, Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    MulScalar(Var, Var),
    Square(Var),
    Sqrt(Var),
    Recip(Var),
    Ln(Var),
    Sum(Var),
    RowSums(Var),
    Reshape(Var),
    SliceCols(Var, usize),
    GatherCols(Var, Vec<usize>),
    ConcatCols(Var, Var),
    Clamp(Var, f64, f64),
    ComplexMul(Var, Vec<f64>),
    Custom(Vec<Var>, Box<dyn CustomBackward>),
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
    slot: Option<usize>,
    grad: Option<Vec<f64>>,
}

/// Order-sensitive digest of the branch decisions taken at non-smooth points
/// (ReLU sign, clamp activity, min-sum argument choice).
///
/// Two forward passes with the same digest evaluated the same smooth piece of
/// the function, so a finite-difference stencil between them is valid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchDigest {
    state: u64,
    /// Set when some non-smooth op was evaluated exactly on its kink.
    pub on_kink: bool,
}

impl Default for BranchDigest {
    fn default() -> Self {
        Self {
            state: 0xcbf2_9ce4_8422_2325,
            on_kink: false,
        }
    }
}

impl BranchDigest {
    #[inline]
    pub fn push(&mut self, branch: u8) {
        self.state ^= u64::from(branch) + 1;
        self.state = self.state.wrapping_mul(0x0000_0100_0000_01b3);
    }

    #[inline]
    pub fn kink(&mut self) {
        self.on_kink = true;
    }

    pub fn value(&self) -> u64 {
        self.state
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    digest: Option<BranchDigest>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Tape that also digests branch decisions; see [`BranchDigest`].
    pub fn with_branch_tracking() -> Self {
        Self {
            nodes: Vec::new(),
            digest: Some(BranchDigest::default()),
        }
    }

    pub fn branch_digest(&self) -> Option<BranchDigest> {
        self.digest
    }

    /// Hook for custom ops that take non-smooth branches.
    pub fn digest_mut(&mut self) -> Option<&mut BranchDigest> {
        self.digest.as_mut()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            requires_grad,
            slot: None,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    /// Accumulated gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        assert_eq!(rows * cols, value.len(), "constant shape");
        self.push(rows, cols, value, Op::Leaf, false)
    }

    /// Leaf that receives a gradient but is not tied to a parameter slot.
    pub fn input(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        assert_eq!(rows * cols, value.len(), "input shape");
        self.push(rows, cols, value, Op::Leaf, true)
    }

    /// Registers a parameter tensor as a differentiable leaf for `slot`.
    pub fn param(&mut self, slot: usize, t: &Tensor) -> Var {
        let (r, c) = t.rows_cols();
        let v = self.push(r, c, t.values().to_vec(), Op::Leaf, true);
        self.nodes[v.0].slot = Some(slot);
        v
    }

    /// Gradient accumulated for parameter `slot`, summed over every leaf
    /// bound to it.
    pub fn param_grad(&self, slot: usize) -> Option<Vec<f64>> {
        let mut out: Option<Vec<f64>> = None;
        for n in self.nodes.iter().filter(|n| n.slot == Some(slot)) {
            if let Some(g) = &n.grad {
                match &mut out {
                    Some(o) => o.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                    None => out = Some(g.clone()),
                }
            }
        }
        out
    }

    /// Adds the accumulated gradient of every slot into the matching tensor.
    pub fn export_grads<'a>(&self, params: impl IntoIterator<Item = &'a mut Tensor>) {
        for (slot, t) in params.into_iter().enumerate() {
            if let Some(g) = self.param_grad(slot) {
                t.accumulate_grad(&g);
            }
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape {
                op,
                expected: format!("{sa:?}"),
                actual: format!("{sb:?}"),
            });
        }
        Ok(sa)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                expected: format!("inner dimension {k}"),
                actual: format!("{k2}"),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), false, 0.0, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(m, n, out, Op::MatMul(a, b), rg))
    }

    /// Fused `act(a·w + bias)`; same values and gradients as the separate
    /// ops with a single stored output.
    pub fn dense(&mut self, a: Var, w: Var, bias: Var, act: Activation) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(w);
        let (br, bc) = self.shape(bias);
        if k != k2 || br * bc != n {
            return Err(Error::Shape {
                op: "dense",
                expected: format!("{k}x? weights and matching bias"),
                actual: format!("{k2}x{n} weights, {} bias entries", br * bc),
            });
        }
        let mut out = vec![0.0; m * n];
        if n > 0 {
            for row in out.chunks_exact_mut(n) {
                row.copy_from_slice(self.value(bias));
            }
        }
        gemm(m, k, n, self.value(a), false, self.value(w), false, 1.0, &mut out);
        match act {
            Activation::Relu => {
                if let Some(d) = self.digest.as_mut() {
                    for &v in &out {
                        d.push(u8::from(v > 0.0));
                        if v == 0.0 {
                            d.kink();
                        }
                    }
                }
                out.iter_mut().for_each(|v| {
                    if !(*v > 0.0) {
                        *v = 0.0
                    }
                });
            }
            Activation::Tanh => out.iter_mut().for_each(|v| *v = tanh_safe(*v)),
            Activation::Sigmoid => out.iter_mut().for_each(|v| *v = sigmoid(*v)),
            Activation::Linear | Activation::None => {}
        }
        let rg = self.rg(a) || self.rg(w) || self.rg(bias);
        Ok(self.push(m, n, out, Op::Dense(a, w, bias, act), rg))
    }

    /// Adds a length-`cols` bias to every row.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        let (br, bc) = self.shape(bias);
        if br * bc != c {
            return Err(Error::Shape {
                op: "add_bias",
                expected: format!("{c} bias entries"),
                actual: format!("{}", br * bc),
            });
        }
        let b = self.value(bias);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_exact_mut(c) {
            row.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(r, c, out, Op::AddBias(a, bias), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let x = &self.nodes[a.0].value;
        if let Some(d) = self.digest.as_mut() {
            for &v in x {
                d.push(u8::from(v > 0.0));
                if v == 0.0 {
                    d.kink();
                }
            }
        }
        let out = x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let rg = self.rg(a);
        self.push(r, c, out, Op::Relu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&v| tanh_safe(v)).collect();
        let rg = self.rg(a);
        self.push(r, c, out, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&v| sigmoid(v)).collect();
        let rg = self.rg(a);
        self.push(r, c, out, Op::Sigmoid(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape("add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(r, c, out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape("sub", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(r, c, out, Op::Sub(a, b), rg))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape("mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(r, c, out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|x| x * k).collect();
        let rg = self.rg(a);
        self.push(r, c, out, Op::Scale(a, k), rg)
    }

    /// `a + k` element-wise.
    pub fn shift(&mut self, a: Var, k: f64) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|x| x + k).collect();
        let rg = self.rg(a);
        self.push(r, c, out, Op::Shift(a), rg)
    }

    /// Multiplies every entry of `a` by the 1×1 node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.shape(s) != (1, 1) {
            return Err(Error::Shape {
                op: "mul_scalar",
                expected: "(1, 1)".into(),
                actual: format!("{:?}", self.shape(s)),
            });
        }
        let (r, c) = self.shape(a);
        let k = self.scalar(s);
        let out = self.value(a).iter().map(|x| x * k).collect();
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(r, c, out, Op::MulScalar(a, s), rg))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|x| x * x).collect();
        let rg = self.rg(a);
        self.push(r, c, out, Op::Square(a), rg)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| libm::sqrt(x)).collect();
        let rg = self.rg(a);
        self.push(r, c, out, Op::Sqrt(a), rg)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|x| 1.0 / x).collect();
        let rg = self.rg(a);
        self.push(r, c, out, Op::Recip(a), rg)
    }

    /// Natural logarithm.
    pub fn ln(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| libm::log(x)).collect();
        let rg = self.rg(a);
        self.push(r, c, out, Op::Ln(a), rg)
    }

    /// Sum of all entries, as a 1×1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let rg = self.rg(a);
        self.push(1, 1, vec![s], Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Per-row sums, as a rows×1 node.
    pub fn row_sums(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = if c == 0 {
            vec![0.0; r]
        } else {
            self.value(a).chunks_exact(c).map(|row| row.iter().sum()).collect()
        };
        let rg = self.rg(a);
        self.push(r, 1, out, Op::RowSums(a), rg)
    }

    /// Reinterprets the row-major buffer with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if r * c != rows * cols {
            return Err(Error::Shape {
                op: "reshape",
                expected: format!("{} entries", r * c),
                actual: format!("{rows}x{cols}"),
            });
        }
        let out = self.value(a).to_vec();
        let rg = self.rg(a);
        Ok(self.push(rows, cols, out, Op::Reshape(a), rg))
    }

    /// Columns `start..end` of every row.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start > end || end > c {
            return Err(Error::Shape {
                op: "slice_cols",
                expected: format!("range within 0..{c}"),
                actual: format!("{start}..{end}"),
            });
        }
        let w = end - start;
        let mut out = Vec::with_capacity(r * w);
        for row in self.value(a).chunks_exact(c.max(1)).take(r) {
            out.extend_from_slice(&row[start..end]);
        }
        let rg = self.rg(a);
        Ok(self.push(r, w, out, Op::SliceCols(a, start), rg))
    }

    /// Selects the listed columns (in order) from every row.
    pub fn gather_cols(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(a);
        if let Some(&bad) = cols.iter().find(|&&j| j >= c) {
            return Err(Error::Shape {
                op: "gather_cols",
                expected: format!("column < {c}"),
                actual: format!("{bad}"),
            });
        }
        let mut out = Vec::with_capacity(r * cols.len());
        for row in self.value(a).chunks_exact(c.max(1)).take(r) {
            out.extend(cols.iter().map(|&j| row[j]));
        }
        let rg = self.rg(a);
        Ok(self.push(r, cols.len(), out, Op::GatherCols(a, cols.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if ra != rb {
            return Err(Error::Shape {
                op: "concat_cols",
                expected: format!("{ra} rows"),
                actual: format!("{rb}"),
            });
        }
        let mut out = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            out.extend_from_slice(&self.value(a)[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&self.value(b)[i * cb..(i + 1) * cb]);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(ra, ca + cb, out, Op::ConcatCols(a, b), rg))
    }

    /// Clamps into `[lo, hi]`; the gradient passes only strictly inside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let (r, c) = self.shape(a);
        let x = &self.nodes[a.0].value;
        if let Some(d) = self.digest.as_mut() {
            for &v in x {
                d.push(u8::from(v <= lo) | (u8::from(v >= hi) << 1));
                if v == lo || v == hi {
                    d.kink();
                }
            }
        }
        let out = x.iter().map(|&v| v.clamp(lo, hi)).collect();
        let rg = self.rg(a);
        self.push(r, c, out, Op::Clamp(a, lo, hi), rg)
    }

    /// Complex product of each row `[re, im]` of `a` (n×2) with a constant
    /// coefficient `h[2i] + j·h[2i+1]`.
    pub fn complex_mul(&mut self, a: Var, h: Vec<f64>) -> Result<Var> {
        let (r, c) = self.shape(a);
        if c != 2 || h.len() != 2 * r {
            return Err(Error::Shape {
                op: "complex_mul",
                expected: format!("{r}x2 with {} coefficients", 2 * r),
                actual: format!("{r}x{c} with {}", h.len()),
            });
        }
        let x = self.value(a);
        let mut out = vec![0.0; 2 * r];
        for i in 0..r {
            let (xr, xi) = (x[2 * i], x[2 * i + 1]);
            let (hr, hi) = (h[2 * i], h[2 * i + 1]);
            out[2 * i] = hr * xr - hi * xi;
            out[2 * i + 1] = hr * xi + hi * xr;
        }
        let rg = self.rg(a);
        Ok(self.push(r, 2, out, Op::ComplexMul(a, h), rg))
    }

    /// Records the output of an externally computed op.
    pub fn custom(
        &mut self,
        inputs: Vec<Var>,
        rows: usize,
        cols: usize,
        value: Vec<f64>,
        backward: Box<dyn CustomBackward>,
    ) -> Var {
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(rows, cols, value, Op::Custom(inputs, backward), rg)
    }

    /// Back-propagates from the scalar `loss`, adding into leaf gradients.
    ///
    /// Calling it again (for another loss or the same one) accumulates.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.scalar(loss).is_finite() {
            return Err(Error::Usage("backward on a non-finite loss".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut leaf_grads: Vec<(usize, Vec<f64>)> = Vec::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let nodes = &self.nodes;
            let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
                let n = &nodes[v.0];
                if !n.requires_grad {
                    return;
                }
                let buf = grads[v.0].get_or_insert_with(|| vec![0.0; n.value.len()]);
                f(buf);
            };
            let y = &node.value;
            match &node.op {
                Op::Leaf => leaf_grads.push((idx, g)),
                Op::MatMul(a, b) => {
                    let (m, k) = (nodes[a.0].rows, nodes[a.0].cols);
                    let n = nodes[b.0].cols;
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    acc(*a, &mut |ga| gemm(m, n, k, &g, false, bv, true, 1.0, ga));
                    acc(*b, &mut |gb| gemm(k, m, n, av, true, &g, false, 1.0, gb));
                }
                Op::Dense(a, w, bias, act) => {
                    let (m, k) = (nodes[a.0].rows, nodes[a.0].cols);
                    let n = node.cols;
                    let mut gz = g;
                    match act {
                        Activation::Relu => gz.iter_mut().zip(y).for_each(|(o, &yi)| {
                            if !(yi > 0.0) {
                                *o = 0.0
                            }
                        }),
                        Activation::Tanh => gz.iter_mut().zip(y).for_each(|(o, &yi)| *o *= 1.0 - yi * yi),
                        Activation::Sigmoid => {
                            let lo = sigmoid(-ACTIVATION_CLAMP);
                            gz.iter_mut().zip(y).for_each(|(o, &yi)| {
                                *o = if yi <= lo { 0.0 } else { *o * yi * (1.0 - yi) }
                            })
                        }
                        Activation::Linear | Activation::None => {}
                    }
                    let (av, wv) = (&nodes[a.0].value, &nodes[w.0].value);
                    acc(*a, &mut |ga| gemm(m, n, k, &gz, false, wv, true, 1.0, ga));
                    acc(*w, &mut |gw| gemm(k, m, n, av, true, &gz, false, 1.0, gw));
                    acc(*bias, &mut |gb| {
                        if n > 0 {
                            for row in gz.chunks_exact(n) {
                                add_into(gb, row);
                            }
                        }
                    });
                }
                Op::AddBias(a, bias) => {
                    let c = node.cols;
                    acc(*a, &mut |ga| add_into(ga, &g));
                    acc(*bias, &mut |gb| {
                        for row in g.chunks_exact(c) {
                            add_into(gb, row);
                        }
                    });
                }
                Op::Relu(a) => {
                    let x = &nodes[a.0].value;
                    acc(*a, &mut |ga| {
                        for ((o, &xi), &gi) in ga.iter_mut().zip(x).zip(&g) {
                            if xi > 0.0 {
                                *o += gi;
                            }
                        }
                    });
                }
                Op::Tanh(a) => {
                    let x = &nodes[a.0].value;
                    acc(*a, &mut |ga| {
                        for (((o, &yi), &xi), &gi) in ga.iter_mut().zip(y).zip(x).zip(&g) {
                            if xi.abs() < ACTIVATION_CLAMP {
                                *o += gi * (1.0 - yi * yi);
                            }
                        }
                    });
                }
                Op::Sigmoid(a) => {
                    let x = &nodes[a.0].value;
                    acc(*a, &mut |ga| {
                        for (((o, &yi), &xi), &gi) in ga.iter_mut().zip(y).zip(x).zip(&g) {
                            if xi.abs() < ACTIVATION_CLAMP {
                                *o += gi * yi * (1.0 - yi);
                            }
                        }
                    });
                }
                Op::Add(a, b) => {
                    acc(*a, &mut |ga| add_into(ga, &g));
                    acc(*b, &mut |gb| add_into(gb, &g));
                }
                Op::Sub(a, b) => {
                    acc(*a, &mut |ga| add_into(ga, &g));
                    acc(*b, &mut |gb| gb.iter_mut().zip(&g).for_each(|(o, gi)| *o -= gi));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    acc(*a, &mut |ga| {
                        for ((o, gi), bi) in ga.iter_mut().zip(&g).zip(bv) {
                            *o += gi * bi;
                        }
                    });
                    acc(*b, &mut |gb| {
                        for ((o, gi), ai) in gb.iter_mut().zip(&g).zip(av) {
                            *o += gi * ai;
                        }
                    });
                }
                Op::Scale(a, k) => {
                    acc(*a, &mut |ga| ga.iter_mut().zip(&g).for_each(|(o, gi)| *o += gi * k));
                }
                Op::Shift(a) | Op::Reshape(a) => acc(*a, &mut |ga| add_into(ga, &g)),
                Op::MulScalar(a, s) => {
                    let k = nodes[s.0].value[0];
                    let av = &nodes[a.0].value;
                    acc(*a, &mut |ga| ga.iter_mut().zip(&g).for_each(|(o, gi)| *o += gi * k));
                    acc(*s, &mut |gs| {
                        gs[0] += g.iter().zip(av).map(|(gi, ai)| gi * ai).sum::<f64>();
                    });
                }
                Op::Square(a) => {
                    let x = &nodes[a.0].value;
                    acc(*a, &mut |ga| {
                        for ((o, gi), xi) in ga.iter_mut().zip(&g).zip(x) {
                            *o += 2.0 * gi * xi;
                        }
                    });
                }
                Op::Sqrt(a) => acc(*a, &mut |ga| {
                    for ((o, gi), yi) in ga.iter_mut().zip(&g).zip(y) {
                        *o += gi * 0.5 / yi;
                    }
                }),
                Op::Recip(a) => acc(*a, &mut |ga| {
                    for ((o, gi), yi) in ga.iter_mut().zip(&g).zip(y) {
                        *o -= gi * yi * yi;
                    }
                }),
                Op::Ln(a) => {
                    let x = &nodes[a.0].value;
                    acc(*a, &mut |ga| {
                        for ((o, gi), xi) in ga.iter_mut().zip(&g).zip(x) {
                            *o += gi / xi;
                        }
                    });
                }
                Op::Sum(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|o| *o += g[0])),
                Op::RowSums(a) => {
                    let c = nodes[a.0].cols;
                    acc(*a, &mut |ga| {
                        if c > 0 {
                            for (row, gi) in ga.chunks_exact_mut(c).zip(&g) {
                                row.iter_mut().for_each(|o| *o += gi);
                            }
                        }
                    });
                }
                Op::SliceCols(a, start) => {
                    let c = nodes[a.0].cols;
                    let w = node.cols;
                    acc(*a, &mut |ga| {
                        if w > 0 {
                            for (row, gi) in ga.chunks_exact_mut(c).zip(g.chunks_exact(w)) {
                                add_into(&mut row[*start..*start + w], gi);
                            }
                        }
                    });
                }
                Op::GatherCols(a, cols) => {
                    let c = nodes[a.0].cols;
                    let w = cols.len();
                    acc(*a, &mut |ga| {
                        if w > 0 {
                            for (row, gi) in ga.chunks_exact_mut(c).zip(g.chunks_exact(w)) {
                                for (&j, v) in cols.iter().zip(gi) {
                                    row[j] += v;
                                }
                            }
                        }
                    });
                }
                Op::ConcatCols(a, b) => {
                    let (ca, cb) = (nodes[a.0].cols, nodes[b.0].cols);
                    let w = ca + cb;
                    acc(*a, &mut |ga| {
                        for (i, row) in g.chunks_exact(w).enumerate() {
                            add_into(&mut ga[i * ca..(i + 1) * ca], &row[..ca]);
                        }
                    });
                    acc(*b, &mut |gb| {
                        for (i, row) in g.chunks_exact(w).enumerate() {
                            add_into(&mut gb[i * cb..(i + 1) * cb], &row[ca..]);
                        }
                    });
                }
                Op::Clamp(a, lo, hi) => {
                    let x = &nodes[a.0].value;
                    acc(*a, &mut |ga| {
                        for ((o, gi), &xi) in ga.iter_mut().zip(&g).zip(x) {
                            if xi > *lo && xi < *hi {
                                *o += gi;
                            }
                        }
                    });
                }
                Op::ComplexMul(a, h) => acc(*a, &mut |ga| {
                    // conj(h) · g
                    for i in 0..node.rows {
                        let (gr, gi) = (g[2 * i], g[2 * i + 1]);
                        let (hr, hi) = (h[2 * i], h[2 * i + 1]);
                        ga[2 * i] += hr * gr + hi * gi;
                        ga[2 * i + 1] += hr * gi - hi * gr;
                    }
                }),
                Op::Custom(inputs, op) => {
                    let mut bufs: Vec<Vec<f64>> =
                        inputs.iter().map(|v| vec![0.0; nodes[v.0].value.len()]).collect();
                    op.backward(&g, &mut bufs);
                    for (v, b) in inputs.iter().zip(bufs) {
                        acc(*v, &mut |gv| add_into(gv, &b));
                    }
                }
            }
        }

        for (idx, g) in leaf_grads {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(format!("tape leaf #{idx}")));
            }
            match &mut self.nodes[idx].grad {
                Some(acc) => add_into(acc, &g),
                None => self.nodes[idx].grad = Some(g),
            }
        }
        Ok(())
    }
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

#[inline]
pub fn tanh_safe(x: f64) -> f64 {
    libm::tanh(x.clamp(-ACTIVATION_CLAMP, ACTIVATION_CLAMP))
}

/// Logistic function; branches on sign so `exp` never overflows.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    let x = x.clamp(-ACTIVATION_CLAMP, ACTIVATION_CLAMP);
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}
