use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::binary::BinaryNet;
use crate::model::{
    canonical_order, featurize, generator_input, generator_targets, sample_rearrangements, Generator, GeneratorVariant,
    ModelConfig, SelectionNet,
};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::scenegen::{PoseOffset, RearrangementExample};
use crate::tensor::{Adam, AdamConfig, DropoutRng, ParamStore, Tape, Var};
use crate::{Error, Result};

/// What a training run fits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Selection,
    Generator,
    Binary,
    NoEncoder,
    NoStructure,
}

impl Task {
    pub const ALL: [Task; 5] = [Task::Selection, Task::Generator, Task::Binary, Task::NoEncoder, Task::NoStructure];

    pub fn name(self) -> &'static str {
        match self {
            Task::Selection => "selection",
            Task::Generator => "generator",
            Task::Binary => "binary",
            Task::NoEncoder => "no-encoder",
            Task::NoStructure => "no-structure",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s)
    }

    pub fn variant(self) -> Option<GeneratorVariant> {
        match self {
            Task::Generator => Some(GeneratorVariant::Full),
            Task::NoEncoder => Some(GeneratorVariant::NoEncoder),
            Task::NoStructure => Some(GeneratorVariant::NoStructure),
            Task::Selection | Task::Binary => None,
        }
    }

    /// Whether placements start with a structure frame.
    pub fn has_frame(self) -> bool {
        self.variant().is_some_and(GeneratorVariant::has_frame)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u64,
    /// Stop after this many optimizer steps even if epochs remain.
    pub max_steps: Option<u64>,
    pub batch_size: usize,
    pub lr: f64,
    pub dropout: f64,
    pub seed: u64,
    /// Global gradient-norm clip; non-positive disables clipping.
    pub clip_norm: f64,
    /// Steps between checkpoint callbacks; 0 disables them.
    pub checkpoint_every: u64,
    pub data: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            max_steps: None,
            batch_size: 16,
            lr: 1e-4,
            dropout: 0.0,
            seed: 0,
            clip_norm: 1.0,
            checkpoint_every: 0,
            data: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

/// A trainable network of any task.
#[derive(Clone, Debug)]
pub enum Network {
    Selection(SelectionNet),
    Generator(Generator),
    Binary(BinaryNet),
}

impl Network {
    /// Fresh network with parameters registered in `store`.
    pub fn build(task: Task, config: &ModelConfig, store: &mut ParamStore, rng: &mut Rng) -> Result<Self> {
        Ok(match task {
            Task::Selection => Network::Selection(SelectionNet::new(config, store, rng)?),
            Task::Binary => Network::Binary(BinaryNet::new(config, store, rng)?),
            _ => Network::Generator(Generator::new(config, task.variant().expect("generator task"), store, rng)?),
        })
    }

    /// Network with the same structure as `build` and deterministic
    /// placeholder values, for loading a checkpoint into.
    pub fn skeleton(task: Task, config: &ModelConfig) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new();
        let net = Self::build(task, config, &mut store, &mut rng_from_seed(0))?;
        Ok((net, store))
    }

    pub fn task(&self) -> Task {
        match self {
            Network::Selection(_) => Task::Selection,
            Network::Binary(_) => Task::Binary,
            Network::Generator(g) => match g.variant {
                GeneratorVariant::Full => Task::Generator,
                GeneratorVariant::NoEncoder => Task::NoEncoder,
                GeneratorVariant::NoStructure => Task::NoStructure,
            },
        }
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            Network::Selection(n) => &n.config,
            Network::Generator(n) => &n.config,
            Network::Binary(n) => &n.config,
        }
    }

    /// Loss of one example. `rng` picks the step for the pairwise baseline.
    pub fn example_loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ex: &RearrangementExample,
        drop: Option<&DropoutRng>,
        rng: &mut Rng,
    ) -> Result<Var> {
        match self {
            Network::Selection(net) => {
                let order: Vec<usize> = (0..ex.objects.len()).collect();
                let input = featurize(ex, &order);
                let z = net.logits(tape, store, &input, drop)?;
                let targets: Vec<f64> = ex.objects.iter().map(|o| if o.is_query { 1.0 } else { 0.0 }).collect();
                tape.bce_with_logits(z, &targets)
            }
            Network::Generator(g) => {
                let (input, _, n) = generator_input(ex);
                let targets = generator_targets(ex, g.variant, g.config.translation_scale)?;
                g.loss(tape, store, &input, n, &targets, drop)
            }
            Network::Binary(net) => {
                let step = rng.random_range(0..ex.query_indices().len());
                net.step_loss(tape, store, ex, step, drop)
            }
        }
    }

    /// `b` candidate placements for `selected` objects. Returns the decode
    /// order and, per sample, the offsets (frame first when the task has one).
    pub fn sample(
        &self,
        store: &ParamStore,
        ex: &RearrangementExample,
        selected: &[usize],
        b: usize,
        p: f64,
        seed: u64,
    ) -> Result<(Vec<usize>, Vec<Vec<PoseOffset>>)> {
        let (order, n) = canonical_order(ex, selected);
        if n == 0 {
            return Err(Error::Model("nothing selected".into()));
        }
        let decode = order[..n].to_vec();
        let samples = match self {
            Network::Selection(_) => return Err(Error::Model("the selection network does not place objects".into())),
            Network::Generator(g) => sample_rearrangements(g, store, &featurize(ex, &order), n, b, p, seed)?,
            Network::Binary(net) => {
                (0..b).map(|k| net.rollout(store, ex, &decode, p, derive_seed(seed, k as u64))).collect::<Result<_>>()?
            }
        };
        Ok((decode, samples))
    }
}

/// Resumable optimizer progress.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub epoch: u64,
    /// Batches already consumed in the current epoch.
    pub batch: u64,
    pub adam: Adam,
}

impl TrainState {
    pub fn new(lr: f64) -> Self {
        Self { step: 0, epoch: 0, batch: 0, adam: Adam::new(AdamConfig { lr, ..AdamConfig::default() }) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: u64,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Example indices of `epoch` in visiting order.
pub fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(derive_seed(seed ^ 0xE90C_0000, epoch)));
    idx
}

/// Runs minibatch Adam until the epoch or step budget is spent or the
/// callback stops it. The callback sees every step.
pub fn train(
    net: &Network,
    store: &mut ParamStore,
    state: &mut TrainState,
    data: &[RearrangementExample],
    config: &TrainConfig,
    mut on_step: impl FnMut(&StepLog, &ParamStore, &TrainState) -> Control,
) -> Result<()> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    state.adam.config.lr = config.lr;
    let bs = config.batch_size;
    let batches = data.len().div_ceil(bs) as u64;
    let mut order = epoch_order(config.seed, state.epoch, data.len());
    while state.epoch < config.epochs && config.max_steps.is_none_or(|m| state.step < m) {
        let from = state.batch as usize * bs;
        let batch = order[from..(from + bs).min(data.len())].to_vec();
        store.zero_grads();
        let mut total = 0.0;
        for (k, &i) in batch.iter().enumerate() {
            let sub = derive_seed(derive_seed(config.seed, state.step), k as u64);
            let drop = (config.dropout > 0.0).then(|| DropoutRng::new(sub, config.dropout));
            let mut rng = rng_from_seed(sub ^ 0x5EED);
            let mut tape = Tape::new();
            let loss = net.example_loss(&mut tape, store, &data[i], drop.as_ref(), &mut rng)?;
            let value = tape.value(loss)[0];
            if !value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss at step {} (epoch {}, example seed {})",
                    state.step, state.epoch, data[i].seed
                )));
            }
            total += value;
            let scaled = tape.scale(loss, 1.0 / batch.len() as f64);
            tape.backward(scaled)?;
            tape.accumulate_param_grads(store);
        }
        let grad_norm = store.clip_grad_norm(if config.clip_norm > 0.0 { config.clip_norm } else { f64::INFINITY });
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite(format!("gradient norm at step {}", state.step)));
        }
        state.adam.step(store)?;
        state.step += 1;
        state.batch += 1;
        if state.batch == batches {
            state.batch = 0;
            state.epoch += 1;
            order = epoch_order(config.seed, state.epoch, data.len());
        }
        let log = StepLog { step: state.step, epoch: state.epoch, loss: total / batch.len() as f64, grad_norm };
        if on_step(&log, store, state) == Control::Stop {
            break;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::Vocabulary;
    use crate::scenegen::{generate_example, GenConfig, ObjectLibrary};

    fn tiny() -> ModelConfig {
        ModelConfig {
            d_model: 32,
            d_obj: 16,
            d_pos: 8,
            d_type: 8,
            heads: 2,
            enc_layers: 1,
            dec_layers: 1,
            pc_width: 8,
            pc_layers: 1,
            ..ModelConfig::new(Vocabulary::standard().len())
        }
    }

    fn data(n: u64) -> Vec<RearrangementExample> {
        let lib = ObjectLibrary::standard();
        let vocab = Vocabulary::standard();
        (0..n).map(|s| generate_example(s, &GenConfig::default(), &lib, &vocab).unwrap()).collect()
    }

    fn run(task: Task, config: &TrainConfig, data: &[RearrangementExample]) -> (Vec<StepLog>, ParamStore) {
        let mut store = ParamStore::new();
        let net = Network::build(task, &tiny(), &mut store, &mut rng_from_seed(config.seed)).unwrap();
        let mut state = TrainState::new(config.lr);
        let mut logs = Vec::new();
        train(&net, &mut store, &mut state, data, config, |l, _, _| {
            logs.push(*l);
            Control::Continue
        })
        .unwrap();
        (logs, store)
    }

    #[test]
    fn untrained_selection_loss_is_ln2() {
        let d = data(4);
        let mut store = ParamStore::new();
        let net = Network::build(Task::Selection, &tiny(), &mut store, &mut rng_from_seed(1)).unwrap();
        let mut tape = Tape::new();
        let l = net.example_loss(&mut tape, &store, &d[0], None, &mut rng_from_seed(0)).unwrap();
        assert!((tape.value(l)[0] - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn seeded_runs_agree_and_resume_continues() {
        let d = data(6);
        let config = TrainConfig { epochs: 2, batch_size: 4, lr: 1e-3, dropout: 0.1, seed: 9, ..TrainConfig::default() };
        for task in [Task::Selection, Task::Binary, Task::NoStructure] {
            let (a, sa) = run(task, &config, &d);
            let (b, sb) = run(task, &config, &d);
            assert_eq!(a, b);
            assert_eq!(sa, sb);
            assert_eq!(a.len(), 4);
        }

        let mut store = ParamStore::new();
        let net = Network::build(Task::Generator, &tiny(), &mut store, &mut rng_from_seed(9)).unwrap();
        let mut state = TrainState::new(config.lr);
        let half = TrainConfig { epochs: 1, ..config.clone() };
        train(&net, &mut store, &mut state, &d, &half, |_, _, _| Control::Continue).unwrap();
        assert_eq!((state.step, state.epoch), (2, 1));
        let mut resumed = Vec::new();
        train(&net, &mut store, &mut state, &d, &config, |l, _, _| {
            resumed.push(*l);
            Control::Continue
        })
        .unwrap();
        let (full, full_store) = run(Task::Generator, &config, &d);
        assert_eq!(resumed, full[2..]);
        assert_eq!(store, full_store);
    }

    #[test]
    fn config_checks() {
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { dropout: 1.0, ..TrainConfig::default() }.validate().is_err());
        assert_eq!(Task::from_name("no-encoder"), Some(Task::NoEncoder));
    }
}
