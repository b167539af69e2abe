use alloc::format;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::embed::{run_encoder, Embedder};
use super::{check_scene, featurize, ModelConfig, SceneInput, DELTA_DIM};
use crate::geometry::pose::{column, mat_mul, transpose};
use crate::geometry::{rot6d_to_matrix, Pose, Rot6D};
use crate::rng::{derive_seed, Rng};
use crate::scenegen::{PoseOffset, RearrangementExample};
use crate::tensor::{AttnMask, DecoderLayer, DropoutRng, EncoderLayer, Linear, ParamId, ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorVariant {
    /// Encoder-decoder predicting a structure frame, then per-object offsets.
    Full,
    /// Same decoder; memory holds only the word embeddings.
    NoEncoder,
    /// Encoder-decoder predicting world-frame offsets without a frame slot.
    NoStructure,
}

impl GeneratorVariant {
    pub fn has_frame(self) -> bool {
        self != GeneratorVariant::NoStructure
    }

    pub fn name(self) -> &'static str {
        match self {
            GeneratorVariant::Full => "full",
            GeneratorVariant::NoEncoder => "no_encoder",
            GeneratorVariant::NoStructure => "no_structure",
        }
    }

    /// Output rows for `n_queries` objects.
    pub fn outputs(self, n_queries: usize) -> usize {
        n_queries + usize::from(self.has_frame())
    }
}

/// Encoder output plus the raw object embeddings used as decoder inputs.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    pub memory: Var,
    pub objects: Var,
    pub n_queries: usize,
}

/// One autoregressive decode.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    /// Head outputs per step, network units.
    pub raw: Vec<[f64; DELTA_DIM]>,
    /// Inputs fed back after each step (orthonormalized rotation).
    pub fed: Vec<[f64; DELTA_DIM]>,
    pub deltas: Vec<PoseOffset>,
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub config: ModelConfig,
    pub variant: GeneratorVariant,
    embed: Embedder,
    enc_layers: Vec<EncoderLayer>,
    dec_in: Linear,
    start: ParamId,
    e0: ParamId,
    dec_layers: Vec<DecoderLayer>,
    head: Linear,
}

fn small_uniform(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-0.1..0.1)).collect()).expect("shape")
}

impl Generator {
    pub fn new(config: &ModelConfig, variant: GeneratorVariant, store: &mut ParamStore, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let n_enc = if variant == GeneratorVariant::NoEncoder { 0 } else { config.enc_layers };
        Ok(Self {
            config: config.clone(),
            variant,
            embed: Embedder::new(store, "gen.embed", config, rng),
            enc_layers: (0..n_enc)
                .map(|i| EncoderLayer::new(store, &format!("gen.enc{i}"), d, config.heads, rng))
                .collect(),
            dec_in: Linear::new(store, "gen.dec_in", DELTA_DIM + d, d, rng),
            start: store.add("gen.start", small_uniform(rng, &[1, DELTA_DIM])),
            e0: store.add("gen.e0", small_uniform(rng, &[1, d])),
            dec_layers: (0..config.dec_layers)
                .map(|i| DecoderLayer::new(store, &format!("gen.dec{i}"), d, config.heads, rng))
                .collect(),
            head: Linear::new(store, "gen.head", d, DELTA_DIM, rng),
        })
    }

    /// Encodes words and all objects; the first `n_queries` objects are the
    /// ones to place, in order.
    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        input: &SceneInput,
        n_queries: usize,
        drop: Option<&DropoutRng>,
    ) -> Result<Encoded> {
        check_scene(&self.config, input)?;
        if n_queries == 0 || n_queries > input.clouds.len() {
            return Err(Error::Model(format!("need 1..={} query objects, got {n_queries}", input.clouds.len())));
        }
        let m = input.tokens.len();
        let n = input.clouds.len();
        let words = self.embed.word_rows(tape, store, &input.tokens, 0)?;
        let clouds: Vec<&[_]> = input.clouds.iter().map(|c| c.as_slice()).collect();
        let positions: Vec<usize> = (m..m + n).collect();
        let objects = self.embed.object_rows(tape, store, &clouds, &positions, &alloc::vec![1; n])?;
        let memory = if self.variant == GeneratorVariant::NoEncoder {
            words
        } else {
            let seq = tape.vcat(&[words, objects])?;
            run_encoder(tape, store, &self.enc_layers, seq, drop)?
        };
        Ok(Encoded { memory, objects, n_queries })
    }

    /// Decoder outputs for the first `rows` positions given the previous
    /// offsets `prev[..rows - 1]` in network units.
    pub fn decode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        enc: &Encoded,
        prev: &[[f64; DELTA_DIM]],
        rows: usize,
        drop: Option<&DropoutRng>,
    ) -> Result<Var> {
        let total = self.variant.outputs(enc.n_queries);
        if rows == 0 || rows > total || prev.len() + 1 < rows {
            return Err(Error::Model(format!("decode of {rows} rows with {} inputs", prev.len())));
        }
        let start = tape.param(store, self.start);
        let poses = if rows > 1 {
            let flat: Vec<f64> = prev[..rows - 1].iter().flatten().copied().collect();
            let p = tape.constant(&[rows - 1, DELTA_DIM], flat)?;
            tape.vcat(&[start, p])?
        } else {
            start
        };
        let slots = if self.variant.has_frame() {
            let e0 = tape.param(store, self.e0);
            if rows > 1 {
                let idx: Vec<usize> = (0..rows - 1).collect();
                let objs = tape.rows(enc.objects, &idx)?;
                tape.vcat(&[e0, objs])?
            } else {
                e0
            }
        } else {
            let idx: Vec<usize> = (0..rows).collect();
            tape.rows(enc.objects, &idx)?
        };
        let x = tape.hcat(&[poses, slots])?;
        let mut h = self.dec_in.forward(tape, store, x)?;
        for l in &self.dec_layers {
            h = l.forward(tape, store, h, enc.memory, &AttnMask::Causal, drop)?;
        }
        self.head.forward(tape, store, h)
    }

    /// Teacher-forced outputs for all positions; `targets` are the
    /// ground-truth offsets in network units.
    pub fn teacher_forced(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        input: &SceneInput,
        n_queries: usize,
        targets: &[[f64; DELTA_DIM]],
        drop: Option<&DropoutRng>,
    ) -> Result<Var> {
        let rows = self.variant.outputs(n_queries);
        if targets.len() != rows {
            return Err(Error::Model(format!("expected {rows} target rows, got {}", targets.len())));
        }
        let enc = self.encode(tape, store, input, n_queries, drop)?;
        self.decode(tape, store, &enc, &targets[..rows - 1], rows, drop)
    }

    pub fn loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        input: &SceneInput,
        n_queries: usize,
        targets: &[[f64; DELTA_DIM]],
        drop: Option<&DropoutRng>,
    ) -> Result<Var> {
        let pred = self.teacher_forced(tape, store, input, n_queries, targets, drop)?;
        let flat: Vec<f64> = targets.iter().flatten().copied().collect();
        let t = tape.constant(&[targets.len(), DELTA_DIM], flat)?;
        tape.l2_loss(pred, t)
    }

    /// Network output row → offset in meters with an orthonormal rotation,
    /// plus the fed-back input vector.
    pub fn to_offset(&self, raw: &[f64]) -> Result<(PoseOffset, [f64; DELTA_DIM])> {
        if raw.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("generator output".into()));
        }
        let s = self.config.translation_scale;
        let m = rot6d_to_matrix(&Rot6D::from_slice(&raw[3..9]))?;
        let r = Rot6D::new(column(&m, 0), column(&m, 1));
        let off = PoseOffset { t: [raw[0] / s, raw[1] / s, raw[2] / s], rotation: r };
        let mut fed = off.features();
        for k in 0..3 {
            fed[k] = raw[k];
        }
        Ok((off, fed))
    }

    /// Step-by-step decoding, feeding each prediction back as the next input.
    pub fn rollout(&self, store: &ParamStore, input: &SceneInput, n_queries: usize, drop: Option<&DropoutRng>) -> Result<Rollout> {
        let mut tape = Tape::new();
        let enc = self.encode(&mut tape, store, input, n_queries, drop)?;
        let total = self.variant.outputs(n_queries);
        let mut out = Rollout { raw: Vec::new(), fed: Vec::new(), deltas: Vec::new() };
        for step in 0..total {
            let y = self.decode(&mut tape, store, &enc, &out.fed, step + 1, drop)?;
            let row: [f64; DELTA_DIM] = tape.value(y)[step * DELTA_DIM..(step + 1) * DELTA_DIM].try_into().expect("row");
            let (off, fed) = self.to_offset(&row)?;
            out.raw.push(row);
            out.fed.push(fed);
            out.deltas.push(off);
        }
        Ok(out)
    }
}

/// `B` rollouts with per-sample dropout seeds derived from `seed`. With
/// `p = 0` every sample is identical.
pub fn sample_rearrangements(
    generator: &Generator,
    store: &ParamStore,
    input: &SceneInput,
    n_queries: usize,
    b: usize,
    p: f64,
    seed: u64,
) -> Result<Vec<Vec<PoseOffset>>> {
    if b == 0 {
        return Err(Error::Config("need at least one sample".into()));
    }
    (0..b)
        .map(|k| {
            let drop = (p > 0.0).then(|| DropoutRng::new(derive_seed(seed, k as u64), p));
            Ok(generator.rollout(store, input, n_queries, drop.as_ref())?.deltas)
        })
        .collect()
}

/// Object order for generation: the given selection sorted by the
/// example's structure order where known, then by index; stationary objects
/// follow in index order.
pub fn canonical_order(ex: &RearrangementExample, selected: &[usize]) -> (Vec<usize>, usize) {
    let mut sel: Vec<usize> = selected.to_vec();
    sel.sort_by_key(|&i| (ex.objects[i].query_order.unwrap_or(u32::MAX), i));
    sel.dedup();
    let n = sel.len();
    sel.extend((0..ex.objects.len()).filter(|i| !selected.contains(i)));
    (sel, n)
}

/// Ground-truth input for the generator: queries in structure order, then
/// stationary objects.
pub fn generator_input(ex: &RearrangementExample) -> (SceneInput, Vec<usize>, usize) {
    let (order, n) = canonical_order(ex, &ex.query_indices());
    (featurize(ex, &order), order, n)
}

/// Ground-truth offsets in network units for `variant`.
pub fn generator_targets(ex: &RearrangementExample, variant: GeneratorVariant, translation_scale: f64) -> Result<Vec<[f64; DELTA_DIM]>> {
    let scale = |mut f: [f64; DELTA_DIM]| {
        for v in &mut f[..3] {
            *v *= translation_scale;
        }
        f
    };
    if variant.has_frame() {
        Ok(ex.delta_sequence()?.iter().map(|d| scale(d.features())).collect())
    } else {
        let q = ex.query_indices();
        q.iter()
            .map(|&i| {
                let o = &ex.objects[i];
                let g = o.goal_pose.expect("query has a goal");
                let r_off = mat_mul(&g.r, &transpose(&o.initial_pose.r));
                Ok(scale(PoseOffset { t: g.t, rotation: Rot6D::new(column(&r_off, 0), column(&r_off, 1)) }.features()))
            })
            .collect()
    }
}

/// Goal poses for every object: selected objects (in decode order) move by
/// their offsets, all others stay put.
pub fn apply_prediction(initial: &[Pose], selected: &[usize], deltas: &[PoseOffset], variant: GeneratorVariant) -> Result<Vec<Pose>> {
    if deltas.len() != variant.outputs(selected.len()) {
        return Err(Error::Model(format!("{} offsets for {} selected objects", deltas.len(), selected.len())));
    }
    let mut out = initial.to_vec();
    let (frame, object_deltas) = if variant.has_frame() {
        (deltas[0].pose()?, &deltas[1..])
    } else {
        (Pose::identity(), deltas)
    };
    for (&i, d) in selected.iter().zip(object_deltas) {
        out[i] = Pose::new(frame.apply(d.t), mat_mul(&d.matrix()?, &initial[i].r));
    }
    Ok(out)
}
