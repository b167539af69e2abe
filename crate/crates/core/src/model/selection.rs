use alloc::format;
use alloc::vec::Vec;

use super::embed::{run_encoder, Embedder};
use super::{check_scene, ModelConfig, SceneInput};
use crate::rng::Rng;
use crate::tensor::{sigmoid, DropoutRng, EncoderLayer, Linear, ParamStore, Tape, Var};
use crate::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionOutput {
    pub logits: Vec<f64>,
    pub selected: Vec<bool>,
}

impl SelectionOutput {
    pub fn probabilities(&self) -> Vec<f64> {
        self.logits.iter().map(|&z| sigmoid(z)).collect()
    }
}

/// Encoder over `[words; objects]` with a per-object binary head.
#[derive(Clone, Debug)]
pub struct SelectionNet {
    pub config: ModelConfig,
    embed: Embedder,
    layers: Vec<EncoderLayer>,
    head: Linear,
}

impl SelectionNet {
    /// The output layer starts at zero, so untrained probabilities are 0.5.
    pub fn new(config: &ModelConfig, store: &mut ParamStore, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            embed: Embedder::new(store, "sel.embed", config, rng),
            layers: (0..config.enc_layers)
                .map(|i| EncoderLayer::new(store, &format!("sel.enc{i}"), config.d_model, config.heads, rng))
                .collect(),
            head: Linear::new_zeroed(store, "sel.head", config.d_model, 1),
        })
    }

    /// `N × 1` logits, one per object in input order.
    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, input: &SceneInput, drop: Option<&DropoutRng>) -> Result<Var> {
        check_scene(&self.config, input)?;
        let m = input.tokens.len();
        let n = input.clouds.len();
        let words = self.embed.word_rows(tape, store, &input.tokens, 0)?;
        let clouds: Vec<&[_]> = input.clouds.iter().map(|c| c.as_slice()).collect();
        let positions: Vec<usize> = (m..m + n).collect();
        let objs = self.embed.object_rows(tape, store, &clouds, &positions, &alloc::vec![1; n])?;
        let seq = tape.vcat(&[words, objs])?;
        let h = run_encoder(tape, store, &self.layers, seq, drop)?;
        let idx: Vec<usize> = (m..m + n).collect();
        let h_obj = tape.rows(h, &idx)?;
        self.head.forward(tape, store, h_obj)
    }

    pub fn predict(&self, store: &ParamStore, input: &SceneInput) -> Result<SelectionOutput> {
        let mut tape = Tape::new();
        let z = self.logits(&mut tape, store, input, None)?;
        let logits = tape.value(z).to_vec();
        let selected = logits.iter().map(|&l| sigmoid(l) > 0.5).collect();
        Ok(SelectionOutput { logits, selected })
    }
}
