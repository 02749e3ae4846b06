//! Scaled min-sum belief propagation on the polar factor graph.
//!
//! The graph has `n + 1` layers of `N` nodes: layer 0 carries the `u` side
//! (frozen priors enter as right-going messages `R[0]`), layer `n` the
//! channel side (channel LLRs enter as left-going messages `L[n]`). Stage
//! `i` joins layers `i` and `i + 1` with butterflies `(j, j + s)`, where
//! `s = N / 2^(i+1)` and `j & s == 0`.
//!
//! The butterflies compute `u · F^{⊗n}` in natural order, and the encoder's
//! output bit-reversal is undone on entry: node `j` of layer `n` holds the
//! LLR of codeword position `rev(j)`.
//!
//! One iteration is a right-to-left sweep (stages `n−1 … 0`) writing `L`,
//! then a left-to-right sweep (stages `0 … n−1`) writing `R`:
//!
//! ```text
//! L[i][j]   = α · g(L[i+1][j], L[i+1][j+s] + R[i][j+s])
//! L[i][j+s] = α · g(R[i][j],   L[i+1][j]) + L[i+1][j+s]
//! R[i+1][j]   = β · g(R[i][j], L[i+1][j+s] + R[i][j+s])
//! R[i+1][j+s] = β · g(R[i][j], L[i+1][j]) + R[i][j+s]
//! ```
//!
//! with every output clipped to `±LLR_CLIP`. Scaling multiplies the `g`
//! term only. `α`/`β` are indexed `[t][i][j]` by iteration, stage and the
//! node being written.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::nn::{sigmoid, BranchDigest, CustomBackward, Tape, Tensor, Var};
use crate::polar::{bit_reverse, BitVector, PolarCode};
use crate::{Error, Result, FROZEN_LLR, LLR_CLIP};

/// Min-sum check-node kernel `sign(a)·sign(b)·min(|a|, |b|)`, with `sign(0) = 0`.
#[inline]
pub fn g(a: f64, b: f64) -> f64 {
    let sign = |x: f64| {
        if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    sign(a) * sign(b) * a.abs().min(b.abs())
}

#[inline]
fn clip(x: f64) -> f64 {
    x.clamp(-LLR_CLIP, LLR_CLIP)
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Message storage: `(n + 1) × N` matrices, row `i` = layer `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LlrState {
    pub n: usize,
    pub stages: usize,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

impl LlrState {
    pub fn l(&self, layer: usize, j: usize) -> f64 {
        self.left[layer * self.n + j]
    }

    pub fn r(&self, layer: usize, j: usize) -> f64 {
        self.right[layer * self.n + j]
    }

    /// `L[0][j] + R[0][j]`, the decision LLR of `u_j`.
    pub fn decision_llrs(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.left[j] + self.right[j]).collect()
    }
}

/// Polar BP decoder and its per-edge, per-iteration scaling parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BpDecoder {
    n: usize,
    stages: usize,
    iterations: usize,
    alpha: Tensor,
    beta: Tensor,
    frozen: Vec<bool>,
}

impl BpDecoder {
    /// Classic min-sum: every scaling parameter is 1.
    pub fn new(code: &PolarCode, iterations: usize) -> Result<Self> {
        Self::with_scaling(code, iterations, 1.0, 1.0)
    }

    /// Uniform scaling `α`, `β` on every edge.
    pub fn with_scaling(code: &PolarCode, iterations: usize, alpha: f64, beta: f64) -> Result<Self> {
        if iterations == 0 {
            return Err(Error::Config("BP needs at least one iteration".into()));
        }
        for (name, v) in [("alpha", alpha), ("beta", beta)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        let (n, stages) = (code.block_length(), code.stages());
        let shape = vec![iterations, stages, n];
        Ok(Self {
            n,
            stages,
            iterations,
            alpha: Tensor::filled(shape.clone(), alpha),
            beta: Tensor::filled(shape, beta),
            frozen: code.frozen_mask().to_vec(),
        })
    }

    /// Rebuilds a decoder from stored scaling tensors of shape `[T, n, N]`.
    pub fn from_parts(code: &PolarCode, alpha: Tensor, beta: Tensor) -> Result<Self> {
        let (n, stages) = (code.block_length(), code.stages());
        let shape = alpha.shape().to_vec();
        if shape.len() != 3 || shape[1] != stages || shape[2] != n || shape[0] == 0 || beta.shape() != shape.as_slice() {
            return Err(Error::Config(format!(
                "scaling tensors {:?}/{:?} do not fit N={n} (expected [T, {stages}, {n}])",
                alpha.shape(),
                beta.shape()
            )));
        }
        let dec = Self {
            n,
            stages,
            iterations: shape[0],
            alpha,
            beta,
            frozen: code.frozen_mask().to_vec(),
        };
        dec.check_scaling()?;
        Ok(dec)
    }

    pub fn check_scaling(&self) -> Result<()> {
        for (name, t) in [("bp.alpha", &self.alpha), ("bp.beta", &self.beta)] {
            if let Some(v) = t.values().iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                return Err(Error::Config(format!("{name} holds non-positive entry {v}")));
            }
        }
        Ok(())
    }

    /// Copy that runs only the first `iterations` iterations.
    pub fn truncated(&self, iterations: usize) -> Result<Self> {
        if iterations == 0 || iterations > self.iterations {
            return Err(Error::Config(format!(
                "cannot run {iterations} iterations with parameters for {}",
                self.iterations
            )));
        }
        let len = iterations * self.stages * self.n;
        let cut = |t: &Tensor| Tensor::new(vec![iterations, self.stages, self.n], t.values()[..len].to_vec());
        Ok(Self {
            alpha: cut(&self.alpha)?,
            beta: cut(&self.beta)?,
            iterations,
            ..self.clone()
        })
    }

    pub fn block_length(&self) -> usize {
        self.n
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn frozen_mask(&self) -> &[bool] {
        &self.frozen
    }

    pub fn alpha(&self) -> &Tensor {
        &self.alpha
    }

    pub fn beta(&self) -> &Tensor {
        &self.beta
    }

    pub fn alpha_mut(&mut self) -> &mut Tensor {
        &mut self.alpha
    }

    pub fn beta_mut(&mut self) -> &mut Tensor {
        &mut self.beta
    }

    pub fn scaling_mut(&mut self) -> (&mut Tensor, &mut Tensor) {
        (&mut self.alpha, &mut self.beta)
    }

    /// Keeps every scaling parameter at or above `floor`.
    pub fn project_scaling(&mut self, floor: f64) {
        for v in self.alpha.values_mut().iter_mut().chain(self.beta.values_mut()) {
            if *v < floor {
                *v = floor;
            }
        }
    }

    fn check_llrs(&self, llrs: &[f64]) -> Result<()> {
        if llrs.len() != self.n {
            return Err(Error::Length {
                expected: self.n,
                actual: llrs.len(),
            });
        }
        if let Some(p) = llrs.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("channel LLR {p} is not finite")));
        }
        Ok(())
    }

    pub fn init_state(&self, channel_llrs: &[f64]) -> Result<LlrState> {
        self.check_llrs(channel_llrs)?;
        let (n, st) = (self.n, self.stages);
        let mut left = vec![0.0; (st + 1) * n];
        let mut right = vec![0.0; (st + 1) * n];
        let bits = st as u32;
        for j in 0..n {
            left[st * n + j] = clip(channel_llrs[bit_reverse(j, bits)]);
            if self.frozen[j] {
                right[j] = FROZEN_LLR;
            }
        }
        Ok(LlrState {
            n,
            stages: st,
            left,
            right,
        })
    }

    /// One right-to-left plus left-to-right sweep with the parameters of
    /// iteration `t` (1-based).
    pub fn iterate(&self, state: &mut LlrState, t: usize) -> Result<()> {
        if t == 0 || t > self.iterations {
            return Err(Error::Usage(format!("iteration {t} outside 1..={}", self.iterations)));
        }
        if state.n != self.n || state.stages != self.stages {
            return Err(Error::Usage("state does not belong to this decoder".into()));
        }
        self.sweep(&mut state.left, &mut state.right, t - 1, None);
        Ok(())
    }

    /// Runs all iterations and returns `L[0] + R[0]`.
    pub fn decision_llrs(&self, channel_llrs: &[f64]) -> Result<Vec<f64>> {
        let mut s = self.init_state(channel_llrs)?;
        for t in 0..self.iterations {
            self.sweep(&mut s.left, &mut s.right, t, None);
        }
        Ok(s.decision_llrs())
    }

    /// Hard decisions on `u`: bit 0 when the decision LLR is ≥ 0.
    pub fn decode_hard(&self, channel_llrs: &[f64]) -> Result<BitVector> {
        let d = self.decision_llrs(channel_llrs)?;
        BitVector::new(d.iter().map(|&v| u8::from(v < 0.0)).collect())
    }

    /// `σ(−(L[0] + R[0]))` for each row of `llrs` (B×N, channel order), i.e.
    /// P(u_j = 1). Differentiable with respect to `llrs` and, when `slots` is
    /// `Some((alpha_slot, beta_slot))`, the scaling parameters.
    pub fn decode_soft(&self, tape: &mut Tape, llrs: Var, slots: Option<(usize, usize)>) -> Result<Var> {
        let d = self.decision_llrs_on_tape(tape, llrs, slots)?;
        let neg = tape.scale(d, -1.0);
        Ok(tape.sigmoid(neg))
    }

    /// Decision LLRs `L[0] + R[0]` as a differentiable B×N node.
    pub fn decision_llrs_on_tape(&self, tape: &mut Tape, llrs: Var, slots: Option<(usize, usize)>) -> Result<Var> {
        let (rows, cols) = tape.shape(llrs);
        if cols != self.n {
            return Err(Error::Shape {
                op: "decode_soft",
                expected: format!("N = {} columns", self.n),
                actual: format!("{cols}"),
            });
        }
        let (alpha, beta) = match slots {
            Some((a, b)) => (tape.param(a, &self.alpha), tape.param(b, &self.beta)),
            None => {
                let (r, c) = self.alpha.rows_cols();
                (
                    tape.constant(r, c, self.alpha.values().to_vec()),
                    tape.constant(r, c, self.beta.values().to_vec()),
                )
            }
        };
        let (n, st, iters) = (self.n, self.stages, self.iterations);
        let layer_block = iters * st * n;
        let input = tape.value(llrs).to_vec();
        if let Some(p) = input.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("channel LLR {p} is not finite")));
        }
        let bits = st as u32;
        let mut channel = vec![0.0; rows * n];
        let mut trace_l = vec![0.0; rows * layer_block];
        let mut trace_r = vec![0.0; rows * layer_block];
        let mut out = vec![0.0; rows * n];
        let mut digest = tape.branch_digest();
        for b in 0..rows {
            let ch = &mut channel[b * n..(b + 1) * n];
            for j in 0..n {
                ch[j] = input[b * n + bit_reverse(j, bits)];
            }
            let mut left = vec![0.0; (st + 1) * n];
            let mut right = vec![0.0; (st + 1) * n];
            for j in 0..n {
                left[st * n + j] = clip(ch[j]);
                if self.frozen[j] {
                    right[j] = FROZEN_LLR;
                }
            }
            for t in 0..iters {
                self.sweep(&mut left, &mut right, t, digest.as_mut());
                let base = b * layer_block + t * st * n;
                trace_l[base..base + st * n].copy_from_slice(&left[..st * n]);
                trace_r[base..base + st * n].copy_from_slice(&right[n..]);
            }
            for j in 0..n {
                out[b * n + j] = left[j] + right[j];
            }
        }
        if let (Some(d), Some(slot)) = (digest, tape.digest_mut()) {
            *slot = d;
        }
        let backward = SoftBackward {
            n,
            stages: st,
            iterations: iters,
            rows,
            alpha: self.alpha.values().to_vec(),
            beta: self.beta.values().to_vec(),
            frozen: self.frozen.clone(),
            channel,
            trace_l,
            trace_r,
        };
        Ok(tape.custom(vec![llrs, alpha, beta], rows, n, out, Box::new(backward)))
    }

    /// One iteration in place on `(n+1)×N` message buffers.
    fn sweep(
        &self,
        left: &mut [f64],
        right: &mut [f64],
        t: usize,
        mut digest: Option<&mut BranchDigest>,
    ) {
        let (n, st) = (self.n, self.stages);
        let alpha = &self.alpha.values()[t * st * n..(t + 1) * st * n];
        let beta = &self.beta.values()[t * st * n..(t + 1) * st * n];
        let mut note = |g_lhs: f64, g_rhs: f64, pre: f64| {
            if let Some(d) = digest.as_deref_mut() {
                let (x, y) = (g_lhs.abs(), g_rhs.abs());
                d.push(if x < y { 0 } else if y < x { 1 } else { 2 });
                d.push(u8::from(pre.abs() >= LLR_CLIP));
                if x == y || pre.abs() == LLR_CLIP {
                    d.kink();
                }
            }
        };
        for i in (0..st).rev() {
            let s = n >> (i + 1);
            let (lo, hi) = left.split_at_mut((i + 1) * n);
            let li = &mut lo[i * n..];
            let l_next = &hi[..n];
            let ri = &right[i * n..(i + 1) * n];
            let w = &alpha[i * n..(i + 1) * n];
            for base in (0..n).step_by(2 * s) {
                for j in base..base + s {
                    let (a, b, c, d) = (l_next[j], l_next[j + s], ri[j], ri[j + s]);
                    let q = b + d;
                    let p1 = w[j] * g(a, q);
                    note(a, q, p1);
                    let p2 = w[j + s] * g(c, a) + b;
                    note(c, a, p2);
                    li[j] = clip(p1);
                    li[j + s] = clip(p2);
                }
            }
        }
        for i in 0..st {
            let s = n >> (i + 1);
            let (lo, hi) = right.split_at_mut((i + 1) * n);
            let ri = &lo[i * n..];
            let r_next = &mut hi[..n];
            let l_next = &left[(i + 1) * n..(i + 2) * n];
            let w = &beta[i * n..(i + 1) * n];
            for base in (0..n).step_by(2 * s) {
                for j in base..base + s {
                    let (a, b, c, d) = (l_next[j], l_next[j + s], ri[j], ri[j + s]);
                    let q = b + d;
                    let p1 = w[j] * g(c, q);
                    note(c, q, p1);
                    let p2 = w[j + s] * g(c, a) + d;
                    note(c, a, p2);
                    r_next[j] = clip(p1);
                    r_next[j + s] = clip(p2);
                }
            }
        }
    }
}

/// Adjoint of the full BP unrolling for a batch.
///
/// `trace_l[b][t]` stores `L[0..n]` after the right-to-left sweep of
/// iteration `t`, `trace_r[b][t]` stores `R[1..=n]` after the left-to-right
/// sweep; together with the channel and the priors they reproduce every PE
/// input.
struct SoftBackward {
    n: usize,
    stages: usize,
    iterations: usize,
    rows: usize,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    frozen: Vec<bool>,
    channel: Vec<f64>,
    trace_l: Vec<f64>,
    trace_r: Vec<f64>,
}

/// Gradient of `clip(w · g(p, q) + add)` given the output adjoint; returns
/// `(d/dw, d/dp, d/dq, d/dadd)`.
#[inline]
fn pe_adjoint(go: f64, w: f64, p: f64, q: f64, add: f64) -> (f64, f64, f64, f64) {
    let gv = g(p, q);
    let pre = w * gv + add;
    if go == 0.0 || pre.abs() >= LLR_CLIP {
        return (0.0, 0.0, 0.0, 0.0);
    }
    let gg = go * w;
    let (ap, aq) = (p.abs(), q.abs());
    let (dp, dq) = if ap < aq {
        (gg * sign(q), 0.0)
    } else if aq < ap {
        (0.0, gg * sign(p))
    } else {
        (0.0, 0.0)
    };
    (go * gv, dp, dq, go)
}

impl CustomBackward for SoftBackward {
    fn backward(&self, grad_out: &[f64], input_grads: &mut [Vec<f64>]) {
        let (n, st, iters) = (self.n, self.stages, self.iterations);
        let block = iters * st * n;
        let bits = st as u32;
        let (g_llr, rest) = input_grads.split_at_mut(1);
        let (g_alpha, g_beta) = rest.split_at_mut(1);
        let (g_llr, g_alpha, g_beta) = (&mut g_llr[0], &mut g_alpha[0], &mut g_beta[0]);

        let prior: Vec<f64> = self.frozen.iter().map(|&f| if f { FROZEN_LLR } else { 0.0 }).collect();
        let zeros = vec![0.0; n];
        let mut gl = vec![0.0; (st + 1) * n];
        let mut gr = vec![0.0; (st + 1) * n];

        for b in 0..self.rows {
            let go = &grad_out[b * n..(b + 1) * n];
            if go.iter().all(|&v| v == 0.0) {
                continue;
            }
            let ch_raw = &self.channel[b * n..(b + 1) * n];
            let ch: Vec<f64> = ch_raw.iter().map(|&v| clip(v)).collect();
            let tl = &self.trace_l[b * block..(b + 1) * block];
            let tr = &self.trace_r[b * block..(b + 1) * block];
            // L[layer] as seen during iteration t
            let l_at = |t: usize, layer: usize| -> &[f64] {
                if layer == st {
                    &ch
                } else {
                    &tl[(t * st + layer) * n..(t * st + layer + 1) * n]
                }
            };
            // R[layer] after the left-to-right sweep of iteration t
            let r_after = |t: usize, layer: usize| -> &[f64] {
                if layer == 0 {
                    &prior
                } else {
                    &tr[(t * st + layer - 1) * n..(t * st + layer) * n]
                }
            };
            gl.iter_mut().for_each(|v| *v = 0.0);
            gr.iter_mut().for_each(|v| *v = 0.0);
            gl[..n].copy_from_slice(go);

            for t in (0..iters).rev() {
                let abase = t * st * n;
                // left-to-right sweep, reversed
                for i in (0..st).rev() {
                    let s = n >> (i + 1);
                    let ri = r_after(t, i);
                    let l_next = l_at(t, i + 1);
                    for base in (0..n).step_by(2 * s) {
                        for j in base..base + s {
                            let (a, bb, c, d) = (l_next[j], l_next[j + s], ri[j], ri[j + s]);
                            let o1 = core::mem::take(&mut gr[(i + 1) * n + j]);
                            let o2 = core::mem::take(&mut gr[(i + 1) * n + j + s]);
                            let k1 = abase + i * n + j;
                            let (dw, dc, dq, _) = pe_adjoint(o1, self.beta[k1], c, bb + d, 0.0);
                            g_beta[k1] += dw;
                            gr[i * n + j] += dc;
                            gl[(i + 1) * n + j + s] += dq;
                            gr[i * n + j + s] += dq;
                            let k2 = k1 + s;
                            let (dw, dc, da, dadd) = pe_adjoint(o2, self.beta[k2], c, a, d);
                            g_beta[k2] += dw;
                            gr[i * n + j] += dc;
                            gl[(i + 1) * n + j] += da;
                            gr[i * n + j + s] += dadd;
                        }
                    }
                }
                // right-to-left sweep, reversed
                for i in 0..st {
                    let s = n >> (i + 1);
                    let ri: &[f64] = if i == 0 {
                        &prior
                    } else if t == 0 {
                        &zeros
                    } else {
                        r_after(t - 1, i)
                    };
                    let l_next = l_at(t, i + 1);
                    for base in (0..n).step_by(2 * s) {
                        for j in base..base + s {
                            let (a, bb, c, d) = (l_next[j], l_next[j + s], ri[j], ri[j + s]);
                            let o1 = core::mem::take(&mut gl[i * n + j]);
                            let o2 = core::mem::take(&mut gl[i * n + j + s]);
                            let k1 = abase + i * n + j;
                            let (dw, da, dq, _) = pe_adjoint(o1, self.alpha[k1], a, bb + d, 0.0);
                            g_alpha[k1] += dw;
                            gl[(i + 1) * n + j] += da;
                            gl[(i + 1) * n + j + s] += dq;
                            gr[i * n + j + s] += dq;
                            let k2 = k1 + s;
                            let (dw, dc, da, dadd) = pe_adjoint(o2, self.alpha[k2], c, a, bb);
                            g_alpha[k2] += dw;
                            gr[i * n + j] += dc;
                            gl[(i + 1) * n + j] += da;
                            gl[(i + 1) * n + j + s] += dadd;
                        }
                    }
                }
            }
            for j in 0..n {
                let raw = ch_raw[j];
                if raw.abs() < LLR_CLIP {
                    g_llr[b * n + bit_reverse(j, bits)] += gl[st * n + j];
                }
            }
        }
    }
}

/// P(bit = 1) from a decision LLR.
#[inline]
pub fn bit_one_probability(llr: f64) -> f64 {
    sigmoid(-llr)
}
