//! Parameter storage and the transformer building blocks.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use super::tape::{AttnMask, Tape, Var};
use super::Tensor;
use crate::math;
use crate::rng::{mix64, unit_from_hash, Rng};
use crate::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Named trainable tensors. Names are dot-separated paths.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor.with_requires_grad(true));
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Multiplies every accumulated gradient by `s`.
    pub fn scale_grads(&mut self, s: f64) {
        for t in &mut self.tensors {
            if let Some(g) = t.grad.as_mut() {
                g.iter_mut().for_each(|x| *x *= s);
            }
        }
    }

    /// Rescales gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let sq: f64 = self
            .tensors
            .iter()
            .filter_map(|t| t.grad())
            .flat_map(|g| g.iter())
            .map(|x| x * x)
            .sum();
        let norm = math::sqrt(sq);
        if norm > max_norm && norm > 0.0 {
            self.scale_grads(max_norm / norm);
        }
        norm
    }

    /// Overwrites the value of an existing parameter, checking its shape.
    pub fn set(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<()> {
        let id = self.find(name).ok_or_else(|| Error::Model(format!("unknown parameter {name}")))?;
        if self.tensors[id.0].shape() != shape {
            return Err(Error::Shape(format!(
                "parameter {name}: expected {:?}, got {shape:?}",
                self.tensors[id.0].shape()
            )));
        }
        self.tensors[id.0] = Tensor::new(shape, data)?.with_requires_grad(true);
        Ok(())
    }
}

fn uniform(rng: &mut Rng, shape: &[usize], limit: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(shape, data).expect("valid init shape")
}

/// Counter-based dropout: the keep decision for an element depends only on
/// `(seed, site, row, col)`, so a row's mask is the same whatever the
/// sequence length. This makes step-by-step decoding reproduce a full
/// teacher-forced pass exactly under the same seed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutRng {
    pub seed: u64,
    pub p: f64,
}

impl DropoutRng {
    pub fn new(seed: u64, p: f64) -> Self {
        Self { seed, p }
    }

    pub fn apply(&self, tape: &mut Tape, x: Var, site: u64) -> Result<Var> {
        if self.p <= 0.0 {
            return Ok(x);
        }
        let (m, n) = tape.dims(x);
        let keep = 1.0 / (1.0 - self.p);
        let base = mix64(self.seed ^ mix64(site));
        let mut mask = vec![0.0; m * n];
        for r in 0..m {
            let rb = mix64(base ^ (r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            for c in 0..n {
                let u = unit_from_hash(mix64(rb ^ c as u64));
                mask[r * n + c] = if u >= self.p { keep } else { 0.0 };
            }
        }
        tape.dropout_mask(x, mask)
    }
}

fn site_id(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x1000_0000_01b3))
}

fn maybe_dropout(tape: &mut Tape, x: Var, drop: Option<&DropoutRng>, site: u64) -> Result<Var> {
    match drop {
        Some(d) => d.apply(tape, x, site),
        None => Ok(x),
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let limit = math::sqrt(6.0 / (fan_in + fan_out) as f64);
        let w = store.add(format!("{name}.w"), uniform(rng, &[fan_in, fan_out], limit));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]));
        Self { w, b, fan_in, fan_out }
    }

    /// Zero weights and bias; outputs are exactly zero until trained.
    pub fn new_zeroed(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let w = store.add(format!("{name}.w"), Tensor::zeros(&[fan_in, fan_out]));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]));
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::new(&[d], vec![1.0; d]).expect("shape"));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[d]));
        Self { gamma, beta }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layer_norm(x, g, b, LAYER_NORM_EPS)
    }
}

/// Learned lookup table.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub count: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, count: usize, dim: usize, rng: &mut Rng) -> Self {
        let table = store.add(format!("{name}.table"), uniform(rng, &[count, dim], 0.1));
        Self { table, count, dim }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, ids: &[usize]) -> Result<Var> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.count) {
            return Err(Error::Shape(format!("embedding index {bad} >= {}", self.count)));
        }
        let t = tape.param(store, self.table);
        tape.rows(t, ids)
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut Rng) -> Self {
        assert!(heads > 0 && d % heads == 0, "width {d} not divisible by {heads} heads");
        Self {
            wq: Linear::new(store, &format!("{name}.wq"), d, d, rng),
            wk: Linear::new(store, &format!("{name}.wk"), d, d, rng),
            wv: Linear::new(store, &format!("{name}.wv"), d, d, rng),
            wo: Linear::new(store, &format!("{name}.wo"), d, d, rng),
            heads,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, xq: Var, xkv: Var, mask: &AttnMask) -> Result<Var> {
        let q = self.wq.forward(tape, store, xq)?;
        let k = self.wk.forward(tape, store, xkv)?;
        let v = self.wv.forward(tape, store, xkv)?;
        let a = tape.attention(q, k, v, self.heads, mask)?;
        self.wo.forward(tape, store, a)
    }
}

/// Position-wise `Linear → ReLU → Linear`.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub l1: Linear,
    pub l2: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, hidden: usize, rng: &mut Rng) -> Self {
        Self {
            l1: Linear::new(store, &format!("{name}.l1"), d, hidden, rng),
            l2: Linear::new(store, &format!("{name}.l2"), hidden, d, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.l1.forward(tape, store, x)?;
        let h = tape.relu(h);
        self.l2.forward(tape, store, h)
    }
}

/// Self-attention and feed-forward sublayers, each wrapped in
/// residual + post layer norm.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub ff: FeedForward,
    pub ln2: LayerNorm,
    site: u64,
}

impl EncoderLayer {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut Rng) -> Self {
        Self {
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d, heads, rng),
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d),
            ff: FeedForward::new(store, &format!("{name}.ff"), d, 4 * d, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d),
            site: site_id(name),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        mask: &AttnMask,
        drop: Option<&DropoutRng>,
    ) -> Result<Var> {
        let a = self.attn.forward(tape, store, x, x, mask)?;
        let a = maybe_dropout(tape, a, drop, self.site)?;
        let r = tape.add(x, a)?;
        let x1 = self.ln1.forward(tape, store, r)?;
        let f = self.ff.forward(tape, store, x1)?;
        let f = maybe_dropout(tape, f, drop, self.site ^ 1)?;
        let r = tape.add(x1, f)?;
        self.ln2.forward(tape, store, r)
    }
}

/// Masked self-attention, cross-attention over `memory`, feed-forward.
#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub self_attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff: FeedForward,
    pub ln3: LayerNorm,
    site: u64,
}

impl DecoderLayer {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut Rng) -> Self {
        Self {
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), d, heads, rng),
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d),
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross_attn"), d, heads, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d),
            ff: FeedForward::new(store, &format!("{name}.ff"), d, 4 * d, rng),
            ln3: LayerNorm::new(store, &format!("{name}.ln3"), d),
            site: site_id(name),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        memory: Var,
        self_mask: &AttnMask,
        drop: Option<&DropoutRng>,
    ) -> Result<Var> {
        if let AttnMask::Explicit(m) = self_mask {
            let n = tape.dims(x).0;
            let upper = (0..n).any(|i| (i + 1..n).any(|j| m[i * n + j]));
            if upper {
                return Err(Error::Shape("decoder self-attention mask must be lower-triangular".to_string()));
            }
        }
        let a = self.self_attn.forward(tape, store, x, x, self_mask)?;
        let a = maybe_dropout(tape, a, drop, self.site)?;
        let r = tape.add(x, a)?;
        let x1 = self.ln1.forward(tape, store, r)?;
        let c = self.cross_attn.forward(tape, store, x1, memory, &AttnMask::None)?;
        let c = maybe_dropout(tape, c, drop, self.site ^ 1)?;
        let r = tape.add(x1, c)?;
        let x2 = self.ln2.forward(tape, store, r)?;
        let f = self.ff.forward(tape, store, x2)?;
        let f = maybe_dropout(tape, f, drop, self.site ^ 2)?;
        let r = tape.add(x2, f)?;
        self.ln3.forward(tape, store, r)
    }
}
