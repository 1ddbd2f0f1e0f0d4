use super::{gemm, MatRef, Real, Tensor, GELU_C, GELU_K};
use crate::error::{Result, XlmError};
use crate::rng::Rng;
use crate::streams::IGNORE;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Layout of a fused multi-head attention call over `[batch * seq, dim]`
/// activations.
#[derive(Clone, Debug)]
pub struct AttentionSpec {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
    pub causal: bool,
    /// `[batch * seq]`; `false` keys are never attended to.
    pub key_mask: Vec<bool>,
}

impl AttentionSpec {
    fn allowed(&self, b: usize, i: usize, j: usize) -> bool {
        self.key_mask[b * self.seq + j] && (!self.causal || j <= i)
    }
}

macro_rules! slot {
    ($g:expr, $v:expr) => {
        grad_slot(&mut $g.grads, &$g.values, &$g.requires, $v)
    };
}

pub const MASKED_LOGIT: f64 = -1e9;

enum Op<T> {
    Leaf,
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    MatMul { a: Var, b: Var, bt: bool },
    /// `s` is the logistic factor, `gelu(x) = x * s`.
    Gelu { x: Var, s: Vec<T> },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Gather { table: Var, ids: Vec<usize> },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        spec: AttentionSpec,
        probs: Vec<T>,
    },
    Dropout { x: Var, mask: Vec<T> },
    CrossEntropy {
        logits: Var,
        targets: Vec<i32>,
        probs: Vec<T>,
        count: usize,
    },
}

/// Operation tape. Nodes are appended in evaluation order, so reverse
/// insertion order is a valid reverse topological order.
pub struct Graph<T: Real> {
    values: Vec<Tensor<T>>,
    grads: Vec<Option<Vec<T>>>,
    requires: Vec<bool>,
    ops: Vec<Op<T>>,
    consumed: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(msg: String) -> XlmError {
    XlmError::Shape(msg)
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            values: Vec::new(),
            grads: Vec::new(),
            requires: Vec::new(),
            ops: Vec::new(),
            consumed: false,
        }
    }

    fn push(&mut self, value: Tensor<T>, requires: bool, op: Op<T>) -> Var {
        self.values.push(value);
        self.grads.push(None);
        self.requires.push(requires);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    /// Trainable leaf: receives a gradient on `backward`.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, true, Op::Leaf)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    /// Move a gradient out of the graph.
    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads[v.0].take()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(self.values[v.0].shape().to_vec(), g.clone()).unwrap())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn req(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.requires[v.0])
    }

    fn mat(&self, v: Var) -> (usize, usize) {
        self.values[v.0].as_matrix()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (&self.values[a.0], &self.values[b.0]);
        if x.shape() != y.shape() {
            return Err(shape_err(format!("add {:?} + {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        let r = self.req(&[a, b]);
        Ok(self.push(out, r, Op::Add(a, b)))
    }

    /// `x [n, d] + bias [d]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (n, d) = self.mat(x);
        let bv = &self.values[bias.0];
        if bv.len() != d {
            return Err(shape_err(format!("add_row width {d} vs bias {}", bv.len())));
        }
        let xv = self.values[x.0].data();
        let mut data = Vec::with_capacity(n * d);
        for r in 0..n {
            data.extend(xv[r * d..(r + 1) * d].iter().zip(bv.data()).map(|(&p, &q)| p + q));
        }
        let out = Tensor::new(self.values[x.0].shape().to_vec(), data)?;
        let r = self.req(&[x, bias]);
        Ok(self.push(out, r, Op::AddRow(x, bias)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (&self.values[a.0], &self.values[b.0]);
        if x.shape() != y.shape() {
            return Err(shape_err(format!("mul {:?} * {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        let r = self.req(&[a, b]);
        Ok(self.push(out, r, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let x = &self.values[a.0];
        let out = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&p| p * s).collect())
            .unwrap();
        let r = self.req(&[a]);
        self.push(out, r, Op::Scale(a, s))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let mut acc = T::ZERO;
        for &x in self.values[a.0].data() {
            acc += x;
        }
        let r = self.req(&[a]);
        self.push(Tensor::scalar(acc), r, Op::Sum(a))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `[m, k] x [n, k]^T -> [m, n]`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, bt: bool) -> Result<Var> {
        let (m, k) = self.mat(a);
        let (br, bc) = self.mat(b);
        let (k2, n) = if bt { (bc, br) } else { (br, bc) };
        if self.values[b.0].shape().len() != 2 || k != k2 {
            return Err(shape_err(format!(
                "matmul{} {:?} x {:?}",
                if bt { "_bt" } else { "" },
                self.values[a.0].shape(),
                self.values[b.0].shape()
            )));
        }
        let mut out = vec![T::ZERO; m * n];
        let bm = MatRef::new(self.values[b.0].data(), br, bc);
        let bm = if bt { bm.t() } else { bm };
        gemm(
            T::ONE,
            MatRef::new(self.values[a.0].data(), m, k),
            bm,
            T::ZERO,
            &mut out,
            0,
            n,
        );
        let r = self.req(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, r, Op::MatMul { a, b, bt }))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let x = &self.values[a.0];
        let c = T::from_f64(GELU_C);
        let kk = T::from_f64(GELU_K);
        let two = T::from_f64(2.0);
        let s: Vec<T> = x
            .data()
            .iter()
            .map(|&v| T::ONE / (T::ONE + (-two * c * (v + kk * v * v * v)).exp()))
            .collect();
        let data = x.data().iter().zip(&s).map(|(&v, &sv)| v * sv).collect();
        let out = Tensor::new(x.shape().to_vec(), data).unwrap();
        let r = self.req(&[a]);
        self.push(out, r, Op::Gelu { x: a, s })
    }

    /// Normalize each row over its last axis with a biased variance.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (n, d) = self.mat(x);
        if d == 0 {
            return Err(shape_err("layer_norm over an empty axis".into()));
        }
        if self.values[gain.0].len() != d || self.values[bias.0].len() != d {
            return Err(shape_err(format!("layer_norm width {d} vs gain/bias")));
        }
        let xv = self.values[x.0].data();
        let g = self.values[gain.0].data();
        let bb = self.values[bias.0].data();
        let eps = T::from_f64(eps);
        let dn = T::from_f64(d as f64);
        let mut xhat = Vec::with_capacity(n * d);
        let mut inv_std = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n * d);
        for r in 0..n {
            let row = &xv[r * d..(r + 1) * d];
            let mut mean = T::ZERO;
            for &v in row {
                mean += v;
            }
            mean = mean / dn;
            let mut var = T::ZERO;
            for &v in row {
                var += (v - mean) * (v - mean);
            }
            var = var / dn;
            let is = T::ONE / (var + eps).sqrt();
            inv_std.push(is);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(h * g[j] + bb[j]);
            }
        }
        let out = Tensor::new(self.values[x.0].shape().to_vec(), out)?;
        let r = self.req(&[x, gain, bias]);
        Ok(self.push(
            out,
            r,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Row gather `table[ids]`; the backward pass scatter-adds.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.mat(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(XlmError::IdOutOfRange { id: bad, size: v });
        }
        let t = self.values[table.0].data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&t[i * d..(i + 1) * d]);
        }
        let out = Tensor::new(vec![ids.len(), d], out)?;
        let r = self.req(&[table]);
        Ok(self.push(
            out,
            r,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Fused multi-head scaled dot-product attention. Disallowed logits are
    /// set to `MASKED_LOGIT` before the softmax.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, spec: AttentionSpec) -> Result<Var> {
        let (n, d) = self.mat(q);
        let (bsz, l, h) = (spec.batch, spec.seq, spec.heads);
        if n != bsz * l || self.mat(k) != (n, d) || self.mat(v) != (n, d) {
            return Err(shape_err(format!(
                "attention over [{n}, {d}] with batch {bsz} x seq {l}"
            )));
        }
        if h == 0 || d % h != 0 || spec.key_mask.len() != n {
            return Err(shape_err(format!("attention heads {h} / dim {d} / mask")));
        }
        let dh = d / h;
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());
        let masked = T::from_f64(MASKED_LOGIT);
        let mut probs = vec![T::ZERO; bsz * h * l * l];
        let mut out = vec![T::ZERO; n * d];
        let qv = MatRef::new(self.values[q.0].data(), n, d);
        let kv = MatRef::new(self.values[k.0].data(), n, d);
        let vv = MatRef::new(self.values[v.0].data(), n, d);
        for b in 0..bsz {
            for hh in 0..h {
                let base = (b * h + hh) * l * l;
                let p = &mut probs[base..base + l * l];
                gemm(
                    scale,
                    qv.block(b * l, hh * dh, l, dh),
                    kv.block(b * l, hh * dh, l, dh).t(),
                    T::ZERO,
                    p,
                    0,
                    l,
                );
                for i in 0..l {
                    let row = &mut p[i * l..(i + 1) * l];
                    for (j, x) in row.iter_mut().enumerate() {
                        if !spec.allowed(b, i, j) {
                            *x = masked;
                        }
                    }
                    softmax_in_place(row);
                }
                gemm(
                    T::ONE,
                    MatRef::new(&probs[base..base + l * l], l, l),
                    vv.block(b * l, hh * dh, l, dh),
                    T::ZERO,
                    &mut out,
                    b * l * d + hh * dh,
                    d,
                );
            }
        }
        let out = Tensor::new(vec![n, d], out)?;
        let r = self.req(&[q, k, v]);
        Ok(self.push(
            out,
            r,
            Op::Attention {
                q,
                k,
                v,
                spec,
                probs,
            },
        ))
    }

    /// Inverted dropout: kept cells are scaled by `1 / (1 - p)`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut Rng) -> Var {
        if p <= 0.0 {
            return x;
        }
        let keep = T::from_f64(1.0 / (1.0 - p));
        let n = self.values[x.0].len();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.next_f64() < p { T::ZERO } else { keep })
            .collect();
        let xv = &self.values[x.0];
        let data = xv.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let out = Tensor::new(xv.shape().to_vec(), data).unwrap();
        let r = self.req(&[x]);
        self.push(out, r, Op::Dropout { x, mask })
    }

    /// Mean negative log-likelihood over rows whose target is not `IGNORE`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[i32]) -> Result<Var> {
        let (n, vsz) = self.mat(logits);
        if targets.len() != n {
            return Err(shape_err(format!("{n} logit rows vs {} targets", targets.len())));
        }
        let count = targets.iter().filter(|&&t| t != IGNORE).count();
        if count == 0 {
            return Err(XlmError::Empty("every target is ignored".into()));
        }
        if let Some(&t) = targets.iter().find(|&&t| t != IGNORE && (t < 0 || t as usize >= vsz)) {
            return Err(XlmError::IdOutOfRange {
                id: t.max(0) as usize,
                size: vsz,
            });
        }
        let lv = self.values[logits.0].data();
        let mut probs = vec![T::ZERO; n * vsz];
        let mut total = T::ZERO;
        for (r, &t) in targets.iter().enumerate() {
            if t == IGNORE {
                continue;
            }
            let p = &mut probs[r * vsz..(r + 1) * vsz];
            p.copy_from_slice(&lv[r * vsz..(r + 1) * vsz]);
            let m = p.iter().fold(p[0], |a, &b| a.max(b));
            let mut z = T::ZERO;
            for x in p.iter_mut() {
                *x = (*x - m).exp();
                z += *x;
            }
            total += m + z.ln() - lv[r * vsz + t as usize];
            for x in p.iter_mut() {
                *x = *x / z;
            }
        }
        let loss = total / T::from_f64(count as f64);
        let r = self.req(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            r,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
        ))
    }

    /// Reverse-mode accumulation from a scalar. Consumes the tape: operation
    /// records are dropped and a second call fails.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(XlmError::TapeConsumed);
        }
        if self.values[loss.0].len() != 1 {
            return Err(shape_err(format!(
                "backward from non-scalar {:?}",
                self.values[loss.0].shape()
            )));
        }
        self.consumed = true;
        if !self.requires[loss.0] {
            self.ops.clear();
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::ONE]);
        for i in (0..=loss.0).rev() {
            if !self.requires[i] {
                continue;
            }
            let op = std::mem::replace(&mut self.ops[i], Op::Leaf);
            if matches!(op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(op, &g);
        }
        self.ops.clear();
        Ok(())
    }

    fn accumulate_slice(&mut self, v: Var, g: &[T]) {
        if !self.requires[v.0] {
            return;
        }
        match &mut self.grads[v.0] {
            Some(buf) => {
                for (x, &gi) in buf.iter_mut().zip(g) {
                    *x += gi;
                }
            }
            empty => *empty = Some(g.to_vec()),
        }
    }

    fn accumulate(&mut self, v: Var, contrib: impl Fn(usize) -> T) {
        if let Some(buf) = slot!(self, v) {
            for (i, x) in buf.iter_mut().enumerate() {
                *x += contrib(i);
            }
        }
    }

    fn propagate(&mut self, op: Op<T>, g: &[T]) {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate_slice(a, g);
                self.accumulate_slice(b, g);
            }
            Op::AddRow(x, bias) => {
                self.accumulate_slice(x, g);
                let d = self.values[bias.0].len();
                if let Some(buf) = slot!(self, bias) {
                    for (i, &gi) in g.iter().enumerate() {
                        buf[i % d] += gi;
                    }
                }
            }
            Op::Mul(a, b) => {
                let av = self.values[a.0].data().to_vec();
                let bv = self.values[b.0].data().to_vec();
                self.accumulate(a, |i| g[i] * bv[i]);
                self.accumulate(b, |i| g[i] * av[i]);
            }
            Op::Scale(a, s) => self.accumulate(a, |i| g[i] * s),
            Op::Sum(a) => {
                let g0 = g[0];
                self.accumulate(a, |_| g0);
            }
            Op::MatMul { a, b, bt } => {
                let (m, k) = self.mat(a);
                let (br, bc) = self.mat(b);
                let n = if bt { br } else { bc };
                let gm = MatRef::new(g, m, n);
                if self.requires[a.0] {
                    // dA = dC * B^T  (B^T is [n, k])
                    let buf = slot!(self, a).unwrap();
                    let bm = MatRef::new(self.values[b.0].data(), br, bc);
                    let bmt = if bt { bm } else { bm.t() };
                    gemm(T::ONE, gm, bmt, T::ONE, buf, 0, k);
                }
                if self.requires[b.0] {
                    let buf = slot!(self, b).unwrap();
                    let am = MatRef::new(self.values[a.0].data(), m, k);
                    if bt {
                        // dB [n, k] = dC^T * A
                        gemm(T::ONE, gm.t(), am, T::ONE, buf, 0, k);
                    } else {
                        // dB [k, n] = A^T * dC
                        gemm(T::ONE, am.t(), gm, T::ONE, buf, 0, n);
                    }
                }
            }
            Op::Gelu { x, s } => {
                let c = T::from_f64(GELU_C);
                let three_k = T::from_f64(3.0 * GELU_K);
                let two = T::from_f64(2.0);
                if let Some(buf) = slot!(self, x) {
                    let xv = self.values[x.0].data();
                    for i in 0..buf.len() {
                        // ds/dz = 2 s (1 - s) with z = c (x + k x^3)
                        let (v, sv) = (xv[i], s[i]);
                        let dz = c * (T::ONE + three_k * v * v);
                        buf[i] += g[i] * (sv + v * two * sv * (T::ONE - sv) * dz);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = self.values[gain.0].len();
                let n = inv_std.len();
                let gv = self.values[gain.0].data().to_vec();
                if let Some(buf) = slot!(self, gain) {
                    for (i, &gi) in g.iter().enumerate() {
                        buf[i % d] += gi * xhat[i];
                    }
                }
                if let Some(buf) = slot!(self, bias) {
                    for (i, &gi) in g.iter().enumerate() {
                        buf[i % d] += gi;
                    }
                }
                if let Some(buf) = slot!(self, x) {
                    let dn = T::from_f64(d as f64);
                    let mut dxhat = vec![T::ZERO; d];
                    for r in 0..n {
                        let mut m1 = T::ZERO;
                        let mut m2 = T::ZERO;
                        for j in 0..d {
                            let v = g[r * d + j] * gv[j];
                            dxhat[j] = v;
                            m1 += v;
                            m2 += v * xhat[r * d + j];
                        }
                        m1 = m1 / dn;
                        m2 = m2 / dn;
                        for j in 0..d {
                            buf[r * d + j] +=
                                inv_std[r] * (dxhat[j] - m1 - xhat[r * d + j] * m2);
                        }
                    }
                }
            }
            Op::Gather { table, ids } => {
                let d = self.values[table.0].as_matrix().1;
                if let Some(buf) = slot!(self, table) {
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            buf[id * d + j] += g[r * d + j];
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                spec,
                probs,
            } => self.attention_backward(q, k, v, &spec, &probs, g),
            Op::Dropout { x, mask } => self.accumulate(x, |i| g[i] * mask[i]),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                let vsz = self.values[logits.0].as_matrix().1;
                let scale = g[0] / T::from_f64(count as f64);
                if let Some(buf) = slot!(self, logits) {
                    for (r, &t) in targets.iter().enumerate() {
                        if t == IGNORE {
                            continue;
                        }
                        for j in 0..vsz {
                            buf[r * vsz + j] += scale * probs[r * vsz + j];
                        }
                        buf[r * vsz + t as usize] -= scale;
                    }
                }
            }
        }
    }

    fn attention_backward(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        spec: &AttentionSpec,
        probs: &[T],
        g: &[T],
    ) {
        let (n, d) = self.mat(q);
        let (bsz, l, h) = (spec.batch, spec.seq, spec.heads);
        let dh = d / h;
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());
        let (rq, rk, rv) = (self.requires[q.0], self.requires[k.0], self.requires[v.0]);
        let gm = MatRef::new(g, n, d);
        let qm = MatRef::new(self.values[q.0].data(), n, d);
        let km = MatRef::new(self.values[k.0].data(), n, d);
        let vm = MatRef::new(self.values[v.0].data(), n, d);
        let mut dp = vec![T::ZERO; l * l];
        for b in 0..bsz {
            for hh in 0..h {
                let base = (b * h + hh) * l * l;
                let p = MatRef::new(&probs[base..base + l * l], l, l);
                let go = gm.block(b * l, hh * dh, l, dh);
                let off = b * l * d + hh * dh;
                if rv {
                    let buf = slot!(self, v).unwrap();
                    gemm(T::ONE, p.t(), go, T::ONE, buf, off, d);
                }
                if !(rq || rk) {
                    continue;
                }
                gemm(T::ONE, go, vm.block(b * l, hh * dh, l, dh).t(), T::ZERO, &mut dp, 0, l);
                for i in 0..l {
                    let prow = &probs[base + i * l..base + (i + 1) * l];
                    let drow = &mut dp[i * l..(i + 1) * l];
                    let mut dot = T::ZERO;
                    for j in 0..l {
                        dot += drow[j] * prow[j];
                    }
                    for j in 0..l {
                        drow[j] = prow[j] * (drow[j] - dot) * scale;
                    }
                }
                let ds = MatRef::new(&dp, l, l);
                if rq {
                    let buf = slot!(self, q).unwrap();
                    gemm(T::ONE, ds, km.block(b * l, hh * dh, l, dh), T::ONE, buf, off, d);
                }
                if rk {
                    let buf = slot!(self, k).unwrap();
                    gemm(T::ONE, ds.t(), qm.block(b * l, hh * dh, l, dh), T::ONE, buf, off, d);
                }
            }
        }
    }
}

fn grad_slot<'a, T: Real>(
    grads: &'a mut [Option<Vec<T>>],
    values: &[Tensor<T>],
    requires: &[bool],
    v: Var,
) -> Option<&'a mut Vec<T>> {
    if !requires[v.0] {
        return None;
    }
    let n = values[v.0].len();
    Some(grads[v.0].get_or_insert_with(|| vec![T::ZERO; n]))
}

fn softmax_in_place<T: Real>(row: &mut [T]) {
    let m = row.iter().fold(row[0], |a, &b| a.max(b));
    let mut z = T::ZERO;
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        z += *x;
    }
    for x in row.iter_mut() {
        *x = *x / z;
    }
}
