//! Point-cloud and word encoders, the object selection network and the
//! autoregressive pose generator.

mod embed;
mod generator;
mod selection;

pub use embed::{Embedder, PointEncoder};
pub use generator::{
    apply_prediction, canonical_order, generator_input, generator_targets, sample_rearrangements, Encoded, Generator,
    GeneratorVariant, Rollout,
};
pub use selection::{SelectionNet, SelectionOutput};

use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::lang::{Color, Material, SEQ_LEN};
use crate::scenegen::{RearrangementExample, MAX_OBJECTS};
use crate::{Error, Result};

/// Per-point input channels: xyz, object rgb, material gloss.
pub const POINT_FEATURES: usize = 7;
/// Fewest points accepted for one object.
pub const MIN_POINTS: usize = 8;
/// Width of a pose offset vector `(t, a, b)`.
pub const DELTA_DIM: usize = 9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub d_obj: usize,
    pub d_pos: usize,
    pub d_type: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub pc_width: usize,
    pub pc_heads: usize,
    pub pc_layers: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub max_objects: usize,
    pub n_types: usize,
    pub dropout: f64,
    /// Translations are regressed in units of `1 / translation_scale` meters.
    pub translation_scale: f64,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            d_model: 128,
            d_obj: 80,
            d_pos: 24,
            d_type: 24,
            heads: 4,
            enc_layers: 2,
            dec_layers: 2,
            pc_width: 32,
            pc_heads: 2,
            pc_layers: 2,
            vocab_size,
            seq_len: SEQ_LEN,
            max_objects: MAX_OBJECTS,
            n_types: 2,
            dropout: 0.0,
            translation_scale: 10.0,
        }
    }

    /// Position-table entries: every word and object slot.
    pub fn positions(&self) -> usize {
        self.seq_len + self.max_objects
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::Config(m));
        if self.d_obj + self.d_pos + self.d_type != self.d_model {
            return bad(format!("{} + {} + {} != d_model {}", self.d_obj, self.d_pos, self.d_type, self.d_model));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 || self.pc_heads == 0 || self.pc_width % self.pc_heads != 0 {
            return bad("widths must be divisible by head counts".into());
        }
        if !(0.0..=1.0).contains(&self.dropout) || self.dropout == 1.0 {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.translation_scale > 0.0) {
            return bad("translation scale must be positive".into());
        }
        if self.n_types < 2 || self.vocab_size == 0 || self.seq_len == 0 || self.max_objects == 0 {
            return bad("degenerate sizes".into());
        }
        Ok(())
    }
}

/// Network input for one scene: instruction tokens and per-object
/// featurized points, objects in the order the network sees them.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneInput {
    pub tokens: Vec<u32>,
    pub clouds: Vec<Vec<[f64; POINT_FEATURES]>>,
}

pub fn color_rgb(c: Color) -> [f64; 3] {
    match c {
        Color::Blue => [0.0, 0.0, 1.0],
        Color::Cyan => [0.0, 1.0, 1.0],
        Color::Green => [0.0, 1.0, 0.0],
        Color::Magenta => [1.0, 0.0, 1.0],
        Color::Red => [1.0, 0.0, 0.0],
        Color::Yellow => [1.0, 1.0, 0.0],
    }
}

pub fn material_gloss(m: Material) -> f64 {
    match m {
        Material::Glass => 0.0,
        Material::Plastic => 0.5,
        Material::Metal => 1.0,
    }
}

/// Attaches object appearance to raw points.
pub fn featurize_points(points: &[[f64; 3]], color: Color, material: Material) -> Vec<[f64; POINT_FEATURES]> {
    let rgb = color_rgb(color);
    let g = material_gloss(material);
    points.iter().map(|p| [p[0], p[1], p[2], rgb[0], rgb[1], rgb[2], g]).collect()
}

/// Input with the example's objects in `order`.
pub fn featurize(ex: &RearrangementExample, order: &[usize]) -> SceneInput {
    let clouds = order
        .iter()
        .map(|&i| {
            let o = &ex.objects[i];
            featurize_points(&ex.segment(o.id), o.color, o.material)
        })
        .collect();
    SceneInput { tokens: ex.instruction.tokens.clone(), clouds }
}

pub(crate) fn check_scene(config: &ModelConfig, input: &SceneInput) -> Result<()> {
    let n = input.clouds.len();
    if n == 0 || n > config.max_objects {
        return Err(Error::Model(format!("scene has {n} objects; capacity is 1..={}", config.max_objects)));
    }
    if input.tokens.len() != config.seq_len {
        return Err(Error::Model(format!("expected {} tokens, got {}", config.seq_len, input.tokens.len())));
    }
    Ok(())
}

#[cfg(test)]
mod tests;
