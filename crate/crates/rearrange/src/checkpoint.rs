//! Binary checkpoints.
//!
//! Layout: the magic `SFCK`, a little-endian `u32` format version, a `u64`
//! header length, a JSON header of that many bytes, then every parameter's
//! values as little-endian `f64` in header order. When the header says so,
//! the Adam first and second moments follow in the same layout.

use std::path::Path;

use serde::{Deserialize, Serialize};
use rearrange_core::lang::Vocabulary;
use rearrange_core::model::ModelConfig;
use rearrange_core::tensor::{AdamConfig, ParamStore};
use rearrange_core::traineval::{Network, Task, TrainConfig, TrainState};

use crate::error::{CliError, CliResult};
use crate::fsutil;

pub const MAGIC: &[u8; 4] = b"SFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub task: Task,
    pub model: ModelConfig,
    pub vocab_hash: String,
    pub vocab: String,
    pub train: TrainConfig,
    pub step: u64,
    pub epoch: u64,
    pub batch: u64,
    pub adam: AdamConfig,
    pub adam_step: u64,
    pub params: Vec<ParamEntry>,
    pub has_moments: bool,
}

/// A network with its weights and the training progress that produced them.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub vocab: Vocabulary,
    pub train: TrainConfig,
    pub net: Network,
    pub store: ParamStore,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn task(&self) -> Task {
        self.net.task()
    }

    pub fn to_bytes(&self) -> CliResult<Vec<u8>> {
        let adam = &self.state.adam;
        let has_moments = adam.m.len() == self.store.len();
        let header = CheckpointHeader {
            task: self.net.task(),
            model: self.net.config().clone(),
            vocab_hash: self.vocab.hash().into(),
            vocab: self.vocab.to_text(),
            train: self.train.clone(),
            step: self.state.step,
            epoch: self.state.epoch,
            batch: self.state.batch,
            adam: adam.config,
            adam_step: adam.step,
            params: self.store.iter().map(|(n, t)| ParamEntry { name: n.into(), shape: t.shape().to_vec() }).collect(),
            has_moments,
        };
        let json = serde_json::to_vec(&header).map_err(|e| CliError::Data(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + json.len() + 8 * self.store.num_scalars() * if has_moments { 3 } else { 1 });
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |xs: &[f64]| xs.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        for (_, t) in self.store.iter() {
            put(t.data());
        }
        if has_moments {
            adam.m.iter().for_each(|m| put(m));
            adam.v.iter().for_each(|v| put(v));
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        let bad = |m: String| CliError::Data(format!("checkpoint: {m}"));
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok_or_else(|| bad("truncated magic".into()))? != MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(r.take(4).ok_or_else(|| bad("truncated version".into()))?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let len = u64::from_le_bytes(r.take(8).ok_or_else(|| bad("truncated header length".into()))?.try_into().unwrap());
        let json = r.take(len as usize).ok_or_else(|| bad("truncated header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(json).map_err(|e| bad(e.to_string()))?;

        let vocab = Vocabulary::from_text(&header.vocab).map_err(|e| bad(e.to_string()))?;
        if vocab.hash() != header.vocab_hash {
            return Err(bad("embedded vocabulary does not match its hash".into()));
        }
        header.model.validate().map_err(|e| bad(e.to_string()))?;
        if header.model.vocab_size != vocab.len() {
            return Err(bad(format!("model vocabulary size {} but vocabulary has {}", header.model.vocab_size, vocab.len())));
        }
        let (net, mut store) = Network::skeleton(header.task, &header.model).map_err(|e| bad(e.to_string()))?;
        let expected: Vec<ParamEntry> =
            store.iter().map(|(n, t)| ParamEntry { name: n.into(), shape: t.shape().to_vec() }).collect();
        if expected != header.params {
            return Err(bad(format!("parameter layout does not match a {} network", header.task.name())));
        }
        let mut read_all = |what: &str| -> CliResult<Vec<Vec<f64>>> {
            header
                .params
                .iter()
                .map(|p| {
                    let n: usize = p.shape.iter().product();
                    r.f64s(n).ok_or_else(|| bad(format!("truncated {what} of {}", p.name)))
                })
                .collect()
        };
        let values = read_all("values")?;
        let (m, v) = if header.has_moments { (read_all("first moment")?, read_all("second moment")?) } else { (Vec::new(), Vec::new()) };
        if r.pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        for (p, data) in header.params.iter().zip(values) {
            if data.iter().any(|x| !x.is_finite()) {
                return Err(CliError::Numeric(format!("checkpoint: non-finite value in {}", p.name)));
            }
            store.set(&p.name, &p.shape, data)?;
        }
        let mut state = TrainState::new(header.adam.lr);
        state.step = header.step;
        state.epoch = header.epoch;
        state.batch = header.batch;
        state.adam.config = header.adam;
        state.adam.step = header.adam_step;
        state.adam.m = m;
        state.adam.v = v;
        Ok(Self { vocab, train: header.train, net, store, state })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn f64s(&mut self, n: usize) -> Option<Vec<f64>> {
        let raw = self.take(n.checked_mul(8)?)?;
        Some(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> CliResult<()> {
    fsutil::write_atomic(path, &ckpt.to_bytes()?)
}

pub fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    let bytes = fsutil::read(path)?;
    Checkpoint::from_bytes(&bytes).map_err(|e| match e {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}
