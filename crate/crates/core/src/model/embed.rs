use alloc::format;
use alloc::vec::Vec;

use super::{ModelConfig, MIN_POINTS, POINT_FEATURES};
use crate::rng::Rng;
use crate::tensor::{AttnMask, DropoutRng, Embedding, EncoderLayer, Linear, ParamStore, Tape, Var};
use crate::{Error, Result};

/// Per-point lift, self-attention within each object, max-pool, projection.
#[derive(Clone, Debug)]
pub struct PointEncoder {
    lift: Linear,
    layers: Vec<EncoderLayer>,
    out: Linear,
}

impl PointEncoder {
    pub fn new(store: &mut ParamStore, name: &str, config: &ModelConfig, rng: &mut Rng) -> Self {
        let w = config.pc_width;
        Self {
            lift: Linear::new(store, &format!("{name}.lift"), POINT_FEATURES, w, rng),
            layers: (0..config.pc_layers)
                .map(|i| EncoderLayer::new(store, &format!("{name}.layer{i}"), w, config.pc_heads, rng))
                .collect(),
            out: Linear::new(store, &format!("{name}.out"), w, config.d_obj, rng),
        }
    }

    /// One `d_obj` row per cloud.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, clouds: &[&[[f64; POINT_FEATURES]]]) -> Result<Var> {
        let mut lens = Vec::with_capacity(clouds.len());
        let mut flat = Vec::new();
        for (i, c) in clouds.iter().enumerate() {
            if c.len() < MIN_POINTS {
                return Err(Error::Model(format!("object {i} has {} points; need {MIN_POINTS}", c.len())));
            }
            lens.push(c.len());
            flat.extend(c.iter().flatten());
        }
        let total: usize = lens.iter().sum();
        let x = tape.constant(&[total, POINT_FEATURES], flat)?;
        let mut h = self.lift.forward(tape, store, x)?;
        let mask = AttnMask::Segments(lens.clone());
        for l in &self.layers {
            h = l.forward(tape, store, h, &mask, None)?;
        }
        let pooled = tape.segment_max(h, &lens)?;
        self.out.forward(tape, store, pooled)
    }
}

/// Builds `[content; position; type]` rows for words and objects.
#[derive(Clone, Debug)]
pub struct Embedder {
    pub points: PointEncoder,
    pub words: Embedding,
    pub pos: Embedding,
    pub types: Embedding,
}

impl Embedder {
    pub fn new(store: &mut ParamStore, name: &str, config: &ModelConfig, rng: &mut Rng) -> Self {
        Self {
            points: PointEncoder::new(store, &format!("{name}.points"), config, rng),
            words: Embedding::new(store, &format!("{name}.words"), config.vocab_size, config.d_obj, rng),
            pos: Embedding::new(store, &format!("{name}.pos"), config.positions(), config.d_pos, rng),
            types: Embedding::new(store, &format!("{name}.types"), config.n_types, config.d_type, rng),
        }
    }

    fn decorate(&self, tape: &mut Tape, store: &ParamStore, content: Var, positions: &[usize], types: &[usize]) -> Result<Var> {
        let p = self.pos.forward(tape, store, positions)?;
        let t = self.types.forward(tape, store, types)?;
        tape.hcat(&[content, p, t])
    }

    /// Word rows at positions `0..tokens.len()`, all with type `ty`.
    pub fn word_rows(&self, tape: &mut Tape, store: &ParamStore, tokens: &[u32], ty: usize) -> Result<Var> {
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let c = self.words.forward(tape, store, &ids)?;
        let positions: Vec<usize> = (0..tokens.len()).collect();
        self.decorate(tape, store, c, &positions, &alloc::vec![ty; tokens.len()])
    }

    /// Object rows with explicit positions and types.
    pub fn object_rows(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        clouds: &[&[[f64; POINT_FEATURES]]],
        positions: &[usize],
        types: &[usize],
    ) -> Result<Var> {
        let c = self.points.forward(tape, store, clouds)?;
        self.decorate(tape, store, c, positions, types)
    }
}

/// Encoder stack over a sequence.
pub(crate) fn run_encoder(
    tape: &mut Tape,
    store: &ParamStore,
    layers: &[EncoderLayer],
    mut x: Var,
    drop: Option<&DropoutRng>,
) -> Result<Var> {
    for l in layers {
        x = l.forward(tape, store, x, &AttnMask::None, drop)?;
    }
    Ok(x)
}
