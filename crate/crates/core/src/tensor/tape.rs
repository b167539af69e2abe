use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{matmul_into, transpose};
use super::nn::{ParamId, ParamStore};
use super::{dims2, Tensor};
use crate::math;
use crate::{Error, Result};

/// Masked logits are set to this instead of -inf.
pub const MASKED_LOGIT: f64 = -1e30;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which key positions each query row may attend to.
#[derive(Clone, Debug, PartialEq)]
pub enum AttnMask {
    None,
    /// Row `i` attends to keys `0..=i`.
    Causal,
    /// Row-major `n_q × n_k`; `false` blocks the pair.
    Explicit(Vec<bool>),
    /// Block-diagonal self-attention over consecutive row segments of the
    /// given lengths. Query and key rows must coincide.
    Segments(Vec<usize>),
}

impl AttnMask {
    fn allows(&self, i: usize, j: usize, n_k: usize) -> bool {
        match self {
            AttnMask::None | AttnMask::Segments(_) => true,
            AttnMask::Causal => j <= i,
            AttnMask::Explicit(m) => m[i * n_k + j],
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf { param: Option<ParamId> },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Reshape(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, heads: usize, blocks: Vec<AttnBlock> },
    HCat(Vec<Var>),
    VCat(Vec<Var>),
    Rows { src: Var, idx: Vec<usize> },
    SegmentMax { x: Var, argmax: Vec<usize> },
    Dropout { x: Var, mask: Vec<f64> },
    Sum(Var),
    Mean(Var),
    Bce { logits: Var, targets: Vec<f64> },
    Mse { pred: Var, target: Var },
}

/// Saved softmax weights for one (segment, head) block.
#[derive(Debug)]
struct AttnBlock {
    q0: usize,
    nq: usize,
    k0: usize,
    nk: usize,
    head: usize,
    probs: Vec<f64>,
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Records a computation for reverse-mode differentiation.
///
/// A tape is single-use: build it, call [`Tape::backward`] once, harvest
/// gradients. Values are immutable once recorded.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn shape_err<T>(msg: alloc::string::String) -> Result<T> {
    Err(Error::Shape(msg))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node { shape, value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        dims2(&self.nodes[v.0].shape)
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(&n.shape, n.value.clone()).expect("recorded shapes are valid")
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an input tensor; its own `requires_grad` flag is honored.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf { param: None }, t.requires_grad())
    }

    /// Records a constant (never differentiated).
    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != data.len() || n == 0 {
            return shape_err(format!("constant shape {shape:?} with {} values", data.len()));
        }
        Ok(self.push(shape.to_vec(), data, Op::Leaf { param: None }, false))
    }

    /// Records a trainable parameter from the store.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let t = store.get(id);
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf { param: Some(id) }, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return shape_err(format!("matmul {sa:?} x {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), rg))
    }

    /// Adds a length-`n` row vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.value(bias).len() != n {
            return shape_err(format!("add_row {:?} + {:?}", self.shape(a), self.shape(bias)));
        }
        let bv = self.value(bias);
        let mut out = self.value(a).to_vec();
        for r in 0..m {
            for (o, b) in out[r * n..(r + 1) * n].iter_mut().zip(bv) {
                *o += b;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(self.shape(a).to_vec(), out, Op::AddRow(a, bias), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).iter().map(|x| x * s).collect();
        let rg = self.rg(a);
        self.push(self.shape(a).to_vec(), out, Op::Scale(a, s), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let rg = self.rg(a);
        self.push(self.shape(a).to_vec(), out, Op::Relu(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(a).len() {
            return shape_err(format!("reshape {:?} -> {shape:?}", self.shape(a)));
        }
        let out = self.value(a).to_vec();
        let rg = self.rg(a);
        Ok(self.push(shape.to_vec(), out, Op::Reshape(a), rg))
    }

    /// Row-wise layer normalization with affine parameters of length `d`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (m, d) = self.dims(x);
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return shape_err(format!("layer_norm width {d}"));
        }
        let xv = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![0.0; m * d];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * d];
        for r in 0..m {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / math::sqrt(var + eps);
            rstd[r] = rs;
            for c in 0..d {
                let h = (row[c] - mean) * rs;
                xhat[r * d + c] = h;
                out[r * d + c] = h * g[c] + b[c];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(self.shape(x).to_vec(), out, Op::LayerNorm { x, gamma, beta, xhat, rstd }, rg))
    }

    /// Multi-head scaled dot-product attention, `softmax(QKᵀ/√d_k)V` per head.
    ///
    /// `q` is `n_q × d`, `k` is `n_k × d`, `v` is `n_k × d_v`; both `d` and
    /// `d_v` must divide by `heads`. Heads occupy consecutive column blocks.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, mask: &AttnMask) -> Result<Var> {
        let (nq, d) = self.dims(q);
        let (nk, dk) = self.dims(k);
        let (nv, dv) = self.dims(v);
        if d != dk || nk != nv || heads == 0 || d % heads != 0 || dv % heads != 0 {
            return shape_err(format!(
                "attention q {:?} k {:?} v {:?} heads {heads}",
                self.shape(q),
                self.shape(k),
                self.shape(v)
            ));
        }
        let segments: Vec<(usize, usize, usize, usize)> = match mask {
            AttnMask::Segments(lens) => {
                if nq != nk || lens.iter().sum::<usize>() != nq || lens.iter().any(|&l| l == 0) {
                    return shape_err(format!("segments {lens:?} over {nq} rows"));
                }
                let mut s = Vec::with_capacity(lens.len());
                let mut off = 0;
                for &l in lens {
                    s.push((off, l, off, l));
                    off += l;
                }
                s
            }
            AttnMask::Explicit(m) => {
                if m.len() != nq * nk {
                    return shape_err(format!("mask of {} entries for {nq}x{nk}", m.len()));
                }
                vec![(0, nq, 0, nk)]
            }
            _ => vec![(0, nq, 0, nk)],
        };
        let hd = d / heads;
        let hv = dv / heads;
        let scale = 1.0 / math::sqrt(hd as f64);
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut out = vec![0.0; nq * dv];
        let mut blocks = Vec::with_capacity(segments.len() * heads);
        for &(q0, sq, k0, sk) in &segments {
            for h in 0..heads {
                // Head slices, keys transposed for the product.
                let mut qh = vec![0.0; sq * hd];
                for i in 0..sq {
                    qh[i * hd..(i + 1) * hd]
                        .copy_from_slice(&qv[(q0 + i) * d + h * hd..(q0 + i) * d + (h + 1) * hd]);
                }
                let mut kt = vec![0.0; hd * sk];
                for j in 0..sk {
                    for c in 0..hd {
                        kt[c * sk + j] = kv[(k0 + j) * d + h * hd + c];
                    }
                }
                let mut logits = vec![0.0; sq * sk];
                matmul_into(&qh, &kt, &mut logits, sq, hd, sk);
                let mut probs = logits;
                for i in 0..sq {
                    let row = &mut probs[i * sk..(i + 1) * sk];
                    let mut mx = f64::NEG_INFINITY;
                    let mut any = false;
                    for (j, val) in row.iter_mut().enumerate() {
                        if mask.allows(q0 + i, k0 + j, nk) {
                            *val *= scale;
                            any = true;
                            if *val > mx {
                                mx = *val;
                            }
                        } else {
                            *val = MASKED_LOGIT;
                        }
                    }
                    if !any {
                        return Err(Error::FullyMasked { row: q0 + i });
                    }
                    let mut sum = 0.0;
                    for (j, val) in row.iter_mut().enumerate() {
                        if mask.allows(q0 + i, k0 + j, nk) {
                            *val = math::exp(*val - mx);
                            sum += *val;
                        } else {
                            *val = 0.0;
                        }
                    }
                    let inv = 1.0 / sum;
                    row.iter_mut().for_each(|p| *p *= inv);
                }
                let mut vh = vec![0.0; sk * hv];
                for j in 0..sk {
                    vh[j * hv..(j + 1) * hv]
                        .copy_from_slice(&vv[(k0 + j) * dv + h * hv..(k0 + j) * dv + (h + 1) * hv]);
                }
                let mut oh = vec![0.0; sq * hv];
                matmul_into(&probs, &vh, &mut oh, sq, sk, hv);
                for i in 0..sq {
                    out[(q0 + i) * dv + h * hv..(q0 + i) * dv + (h + 1) * hv]
                        .copy_from_slice(&oh[i * hv..(i + 1) * hv]);
                }
                blocks.push(AttnBlock { q0, nq: sq, k0, nk: sk, head: h, probs });
            }
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(vec![nq, dv], out, Op::Attention { q, k, v, heads, blocks }, rg))
    }

    /// Softmax weights of the most recent attention node `att`, head `h`,
    /// as an `n_q × n_k` matrix (full or explicit masks only).
    pub fn attention_weights(&self, att: Var, h: usize) -> Option<Vec<f64>> {
        match &self.node(att).op {
            Op::Attention { blocks, .. } => {
                blocks.iter().find(|b| b.head == h && b.q0 == 0).map(|b| b.probs.clone())
            }
            _ => None,
        }
    }

    /// Concatenates along columns; all parts share the row count.
    pub fn hcat(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.dims(parts[0]).0;
        if parts.iter().any(|&p| self.dims(p).0 != m) {
            return shape_err("hcat row mismatch".into());
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = vec![0.0; m * total];
        let mut off = 0;
        for &p in parts {
            let c = self.dims(p).1;
            let pv = self.value(p);
            for r in 0..m {
                out[r * total + off..r * total + off + c].copy_from_slice(&pv[r * c..(r + 1) * c]);
            }
            off += c;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(vec![m, total], out, Op::HCat(parts.to_vec()), rg))
    }

    /// Concatenates along rows; all parts share the column count.
    pub fn vcat(&mut self, parts: &[Var]) -> Result<Var> {
        let c = self.dims(parts[0]).1;
        if parts.iter().any(|&p| self.dims(p).1 != c) {
            return shape_err("vcat column mismatch".into());
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        let m = out.len() / c;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(vec![m, c], out, Op::VCat(parts.to_vec()), rg))
    }

    /// Gathers rows by index (repeats allowed); also serves as embedding lookup.
    pub fn rows(&mut self, src: Var, idx: &[usize]) -> Result<Var> {
        let (m, c) = self.dims(src);
        if idx.is_empty() || idx.iter().any(|&i| i >= m) {
            return shape_err(format!("row index out of range for {m} rows"));
        }
        let sv = self.value(src);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&sv[i * c..(i + 1) * c]);
        }
        let rg = self.rg(src);
        Ok(self.push(vec![idx.len(), c], out, Op::Rows { src, idx: idx.to_vec() }, rg))
    }

    /// Column-wise max over consecutive row segments; one output row per segment.
    pub fn segment_max(&mut self, x: Var, lens: &[usize]) -> Result<Var> {
        let (m, c) = self.dims(x);
        if lens.iter().sum::<usize>() != m || lens.iter().any(|&l| l == 0) {
            return shape_err(format!("segment_max {lens:?} over {m} rows"));
        }
        let xv = self.value(x);
        let mut out = vec![0.0; lens.len() * c];
        let mut argmax = vec![0usize; lens.len() * c];
        let mut off = 0;
        for (s, &l) in lens.iter().enumerate() {
            for col in 0..c {
                let mut best = off;
                let mut bv = xv[off * c + col];
                for r in off + 1..off + l {
                    let v = xv[r * c + col];
                    if v > bv {
                        bv = v;
                        best = r;
                    }
                }
                out[s * c + col] = bv;
                argmax[s * c + col] = best;
            }
            off += l;
        }
        let rg = self.rg(x);
        Ok(self.push(vec![lens.len(), c], out, Op::SegmentMax { x, argmax }, rg))
    }

    /// Multiplies by a precomputed mask (already scaled for inverted dropout).
    pub fn dropout_mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return shape_err("dropout mask size".into());
        }
        let out = self.value(x).iter().zip(&mask).map(|(a, m)| a * m).collect();
        let rg = self.rg(x);
        Ok(self.push(self.shape(x).to_vec(), out, Op::Dropout { x, mask }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let rg = self.rg(a);
        self.push(vec![1], vec![s], Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(a);
        self.push(vec![1], vec![s], Op::Mean(a), rg)
    }

    /// Mean binary cross-entropy on logits, in the overflow-free form
    /// `max(z,0) − z·t + ln(1 + e^{−|z|})`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let z = self.value(logits);
        if z.len() != targets.len() {
            return shape_err(format!("bce: {} logits vs {} targets", z.len(), targets.len()));
        }
        let mut total = 0.0;
        for (&zi, &ti) in z.iter().zip(targets) {
            total += zi.max(0.0) - zi * ti + math::ln_1p(math::exp(-zi.abs()));
        }
        let loss = total / z.len() as f64;
        let rg = self.rg(logits);
        Ok(self.push(vec![1], vec![loss], Op::Bce { logits, targets: targets.to_vec() }, rg))
    }

    /// Mean squared difference over all entries.
    pub fn l2_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape(pred, target, "l2_loss")?;
        let (p, t) = (self.value(pred), self.value(target));
        let loss = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(vec![1], vec![loss], Op::Mse { pred, target }, rg))
    }

    /// Populates gradients of the scalar `loss` with respect to every
    /// recorded value that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let n = self.value(loss).len();
        if n != 1 {
            return Err(Error::NonScalarLoss(n));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = self.grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.backprop_node(idx, &g);
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    /// Gradient of the last backward pass with respect to `v`, if any flowed.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds gradients of parameter leaves into the store's gradient buffers.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Leaf { param: Some(id) }, Some(g)) = (&node.op, &self.grads.get(i).and_then(|g| g.as_ref())) {
                let dst = store.get_mut(*id).grad_mut();
                for (d, s) in dst.iter_mut().zip(g.iter()) {
                    *d += s;
                }
            }
        }
    }

    fn acc(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.len();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![0.0; n]);
        f(slot);
    }

    fn acc_add(&mut self, v: Var, g: &[f64]) {
        self.acc(v, |d| d.iter_mut().zip(g).for_each(|(a, b)| *a += b));
    }

    fn backprop_node(&mut self, idx: usize, g: &[f64]) {
        // Ops are moved out temporarily so saved buffers can be borrowed
        // while gradients of inputs are mutated.
        let op = core::mem::replace(&mut self.nodes[idx].op, Op::Leaf { param: None });
        match &op {
            Op::Leaf { .. } => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                if self.rg(*a) {
                    let bt = transpose(self.value(*b), k, n);
                    let mut da = vec![0.0; m * k];
                    matmul_into(g, &bt, &mut da, m, n, k);
                    self.acc_add(*a, &da);
                }
                if self.rg(*b) {
                    let at = transpose(self.value(*a), m, k);
                    let mut db = vec![0.0; k * n];
                    matmul_into(&at, g, &mut db, k, m, n);
                    self.acc_add(*b, &db);
                }
            }
            Op::Add(a, b) => {
                self.acc_add(*a, g);
                self.acc_add(*b, g);
            }
            Op::Sub(a, b) => {
                self.acc_add(*a, g);
                self.acc(*b, |d| d.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let bv: Vec<f64> = self.value(*b).iter().zip(g).map(|(x, y)| x * y).collect();
                    self.acc_add(*a, &bv);
                }
                if self.rg(*b) {
                    let av: Vec<f64> = self.value(*a).iter().zip(g).map(|(x, y)| x * y).collect();
                    self.acc_add(*b, &av);
                }
            }
            Op::AddRow(a, bias) => {
                self.acc_add(*a, g);
                if self.rg(*bias) {
                    let n = self.value(*bias).len();
                    let mut db = vec![0.0; n];
                    for row in g.chunks(n) {
                        db.iter_mut().zip(row).for_each(|(d, x)| *d += x);
                    }
                    self.acc_add(*bias, &db);
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.acc(*a, |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += s * y));
            }
            Op::Relu(a) => {
                let mask: Vec<f64> = self.value(*a).iter().zip(g).map(|(&x, &y)| if x > 0.0 { y } else { 0.0 }).collect();
                self.acc_add(*a, &mask);
            }
            Op::Reshape(a) => self.acc_add(*a, g),
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let (m, d) = self.dims(*x);
                if self.rg(*gamma) || self.rg(*beta) {
                    let mut dg = vec![0.0; d];
                    let mut dbt = vec![0.0; d];
                    for r in 0..m {
                        for c in 0..d {
                            dg[c] += g[r * d + c] * xhat[r * d + c];
                            dbt[c] += g[r * d + c];
                        }
                    }
                    self.acc_add(*gamma, &dg);
                    self.acc_add(*beta, &dbt);
                }
                if self.rg(*x) {
                    let gm = self.value(*gamma).to_vec();
                    let mut dx = vec![0.0; m * d];
                    for r in 0..m {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for c in 0..d {
                            let dh = g[r * d + c] * gm[c];
                            s1 += dh;
                            s2 += dh * xhat[r * d + c];
                        }
                        let inv_d = 1.0 / d as f64;
                        for c in 0..d {
                            let dh = g[r * d + c] * gm[c];
                            dx[r * d + c] = rstd[r] * (dh - s1 * inv_d - xhat[r * d + c] * s2 * inv_d);
                        }
                    }
                    self.acc_add(*x, &dx);
                }
            }
            Op::Attention { q, k, v, heads, blocks } => {
                let (q, k, v, heads) = (*q, *k, *v, *heads);
                let (nq, d) = self.dims(q);
                let (nk, dv) = self.dims(v);
                let hd = d / heads;
                let hv = dv / heads;
                let scale = 1.0 / math::sqrt(hd as f64);
                let mut dq = vec![0.0; nq * d];
                let mut dk = vec![0.0; nk * d];
                let mut dvv = vec![0.0; nk * dv];
                {
                    let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
                    for b in blocks {
                        let (sq, sk, h) = (b.nq, b.nk, b.head);
                        let p = &b.probs;
                        let mut go = vec![0.0; sq * hv];
                        for i in 0..sq {
                            go[i * hv..(i + 1) * hv]
                                .copy_from_slice(&g[(b.q0 + i) * dv + h * hv..(b.q0 + i) * dv + (h + 1) * hv]);
                        }
                        // dV = Pᵀ dO
                        let pt = transpose(p, sq, sk);
                        let mut dvh = vec![0.0; sk * hv];
                        matmul_into(&pt, &go, &mut dvh, sk, sq, hv);
                        for j in 0..sk {
                            for c in 0..hv {
                                dvv[(b.k0 + j) * dv + h * hv + c] += dvh[j * hv + c];
                            }
                        }
                        // dP = dO Vᵀ
                        let mut vt = vec![0.0; hv * sk];
                        for j in 0..sk {
                            for c in 0..hv {
                                vt[c * sk + j] = vv[(b.k0 + j) * dv + h * hv + c];
                            }
                        }
                        let mut dp = vec![0.0; sq * sk];
                        matmul_into(&go, &vt, &mut dp, sq, hv, sk);
                        // dS = P ⊙ (dP − rowsum(P ⊙ dP)), scaled
                        for i in 0..sq {
                            let row_p = &p[i * sk..(i + 1) * sk];
                            let row_dp = &mut dp[i * sk..(i + 1) * sk];
                            let dot: f64 = row_p.iter().zip(row_dp.iter()).map(|(a, b)| a * b).sum();
                            for (dpv, &pv) in row_dp.iter_mut().zip(row_p) {
                                *dpv = pv * (*dpv - dot) * scale;
                            }
                        }
                        let ds = dp;
                        // dQ = dS K, dK = dSᵀ Q
                        let mut kh = vec![0.0; sk * hd];
                        for j in 0..sk {
                            kh[j * hd..(j + 1) * hd]
                                .copy_from_slice(&kv[(b.k0 + j) * d + h * hd..(b.k0 + j) * d + (h + 1) * hd]);
                        }
                        let mut dqh = vec![0.0; sq * hd];
                        matmul_into(&ds, &kh, &mut dqh, sq, sk, hd);
                        for i in 0..sq {
                            for c in 0..hd {
                                dq[(b.q0 + i) * d + h * hd + c] += dqh[i * hd + c];
                            }
                        }
                        let mut qh = vec![0.0; sq * hd];
                        for i in 0..sq {
                            qh[i * hd..(i + 1) * hd]
                                .copy_from_slice(&qv[(b.q0 + i) * d + h * hd..(b.q0 + i) * d + (h + 1) * hd]);
                        }
                        let dst = transpose(&ds, sq, sk);
                        let mut dkh = vec![0.0; sk * hd];
                        matmul_into(&dst, &qh, &mut dkh, sk, sq, hd);
                        for j in 0..sk {
                            for c in 0..hd {
                                dk[(b.k0 + j) * d + h * hd + c] += dkh[j * hd + c];
                            }
                        }
                    }
                }
                self.acc_add(q, &dq);
                self.acc_add(k, &dk);
                self.acc_add(v, &dvv);
            }
            Op::HCat(parts) => {
                let total = self.dims(Var(idx)).1;
                let m = self.dims(Var(idx)).0;
                let mut off = 0;
                for &p in parts {
                    let c = self.dims(p).1;
                    if self.rg(p) {
                        let mut gp = vec![0.0; m * c];
                        for r in 0..m {
                            gp[r * c..(r + 1) * c].copy_from_slice(&g[r * total + off..r * total + off + c]);
                        }
                        self.acc_add(p, &gp);
                    }
                    off += c;
                }
            }
            Op::VCat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.acc_add(p, &g[off..off + n]);
                    off += n;
                }
            }
            Op::Rows { src, idx: rows } => {
                let c = self.dims(*src).1;
                self.acc(*src, |d| {
                    for (o, &r) in rows.iter().enumerate() {
                        for j in 0..c {
                            d[r * c + j] += g[o * c + j];
                        }
                    }
                });
            }
            Op::SegmentMax { x, argmax } => {
                let c = self.dims(*x).1;
                self.acc(*x, |d| {
                    for (o, &r) in argmax.iter().enumerate() {
                        d[r * c + o % c] += g[o];
                    }
                });
            }
            Op::Dropout { x, mask } => {
                self.acc(*x, |d| d.iter_mut().zip(g).zip(mask).for_each(|((a, b), m)| *a += b * m));
            }
            Op::Sum(a) => {
                let g0 = g[0];
                self.acc(*a, |d| d.iter_mut().for_each(|x| *x += g0));
            }
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                let g0 = g[0] / n;
                self.acc(*a, |d| d.iter_mut().for_each(|x| *x += g0));
            }
            Op::Bce { logits, targets } => {
                let n = targets.len() as f64;
                let grad: Vec<f64> = self
                    .value(*logits)
                    .iter()
                    .zip(targets)
                    .map(|(&z, &t)| (sigmoid(z) - t) * g[0] / n)
                    .collect();
                self.acc_add(*logits, &grad);
            }
            Op::Mse { pred, target } => {
                let n = self.value(*pred).len() as f64;
                let diff: Vec<f64> = self
                    .value(*pred)
                    .iter()
                    .zip(self.value(*target))
                    .map(|(p, t)| 2.0 * (p - t) * g[0] / n)
                    .collect();
                self.acc_add(*pred, &diff);
                self.acc(*target, |d| d.iter_mut().zip(&diff).for_each(|(a, b)| *a -= b));
            }
        }
        self.nodes[idx].op = op;
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + math::exp(-z))
    } else {
        let e = math::exp(z);
        e / (1.0 + e)
    }
}
