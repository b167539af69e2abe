//! Line-delimited dataset files: one header line, then one example per line.

use std::path::Path;

use serde::{Deserialize, Serialize};
use rearrange_core::lang::Vocabulary;
use rearrange_core::scenegen::{example_seed, generate_example, GenConfig, ObjectLibrary, RearrangementExample};

use crate::error::{CliError, CliResult};
use crate::fsutil;

pub const DATASET_FORMAT: &str = "rearrange-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format: String,
    pub format_version: u32,
    pub vocab_hash: String,
    pub vocab: String,
    pub master_seed: u64,
    pub count: usize,
    pub gen_config: GenConfig,
    /// Indices whose generation exhausted the retry budget.
    pub failures: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record<E> {
    index: u64,
    seed: u64,
    example: E,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    /// Dataset index of each example; skips failed indices.
    pub indices: Vec<u64>,
    pub examples: Vec<RearrangementExample>,
}

impl Dataset {
    pub fn new(vocab: &Vocabulary, master_seed: u64, gen_config: GenConfig) -> Self {
        Self {
            header: DatasetHeader {
                format: DATASET_FORMAT.into(),
                format_version: DATASET_VERSION,
                vocab_hash: vocab.hash().into(),
                vocab: vocab.to_text(),
                master_seed,
                count: 0,
                gen_config,
                failures: Vec::new(),
            },
            indices: Vec::new(),
            examples: Vec::new(),
        }
    }

    pub fn vocabulary(&self) -> CliResult<Vocabulary> {
        Ok(Vocabulary::from_text(&self.header.vocab)?)
    }

    pub fn to_jsonl(&self) -> CliResult<String> {
        let mut out = serde_json::to_string(&self.header).map_err(|e| CliError::Data(e.to_string()))?;
        out.push('\n');
        for (&index, ex) in self.indices.iter().zip(&self.examples) {
            let rec = Record { index, seed: ex.seed, example: ex };
            out.push_str(&serde_json::to_string(&rec).map_err(|e| CliError::Data(e.to_string()))?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Parses a dataset, checking the header against `expected_vocab` when
    /// given. Errors name the offending line (1-based).
    pub fn from_jsonl(text: &str, expected_vocab: Option<&str>) -> CliResult<Self> {
        let bad = |line: usize, msg: &dyn std::fmt::Display| CliError::Data(format!("line {line}: {msg}"));
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, first) = lines.next().ok_or_else(|| bad(1, &"empty dataset file"))?;
        let header: DatasetHeader = serde_json::from_str(first).map_err(|e| bad(1, &e))?;
        if header.format != DATASET_FORMAT || header.format_version != DATASET_VERSION {
            return Err(bad(1, &format!("unsupported format {} v{}", header.format, header.format_version)));
        }
        let vocab = Vocabulary::from_text(&header.vocab).map_err(|e| bad(1, &e))?;
        if vocab.hash() != header.vocab_hash {
            return Err(bad(1, &"embedded vocabulary does not match its hash"));
        }
        if let Some(h) = expected_vocab {
            if h != header.vocab_hash {
                return Err(bad(1, &format!("vocabulary hash {} does not match expected {h}", header.vocab_hash)));
            }
        }
        let mut indices = Vec::new();
        let mut examples = Vec::new();
        for (n, line) in lines {
            if line.is_empty() {
                continue;
            }
            let rec: Record<RearrangementExample> = serde_json::from_str(line).map_err(|e| bad(n, &e))?;
            if rec.seed != rec.example.seed {
                return Err(bad(n, &"record seed differs from example seed"));
            }
            rec.example.validate(&vocab).map_err(|e| bad(n, &e))?;
            indices.push(rec.index);
            examples.push(rec.example);
        }
        if examples.len() != header.count {
            return Err(bad(text.lines().count() + 1, &format!("header promises {} examples, found {}", header.count, examples.len())));
        }
        Ok(Self { header, indices, examples })
    }
}

pub fn write_dataset(path: &Path, data: &Dataset) -> CliResult<()> {
    fsutil::write_atomic(path, data.to_jsonl()?.as_bytes())
}

pub fn read_dataset(path: &Path, expected_vocab: Option<&str>) -> CliResult<Dataset> {
    let text = fsutil::read_to_string(path)?;
    Dataset::from_jsonl(&text, expected_vocab).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Reads and concatenates several datasets, which must share a vocabulary.
pub fn read_datasets(paths: &[impl AsRef<Path>], expected_vocab: Option<&str>) -> CliResult<Vec<RearrangementExample>> {
    let mut vocab = expected_vocab.map(str::to_owned);
    let mut out = Vec::new();
    for p in paths {
        let d = read_dataset(p.as_ref(), vocab.as_deref())?;
        vocab.get_or_insert(d.header.vocab_hash);
        out.extend(d.examples);
    }
    Ok(out)
}

/// Generates examples `0..count` from per-index seeds. Indices that fail
/// after the retry budget are listed in the header instead.
pub fn generate_dataset(master_seed: u64, count: u64, config: &GenConfig) -> CliResult<Dataset> {
    config.validate()?;
    let vocab = Vocabulary::standard();
    let lib = ObjectLibrary::standard();
    let mut data = Dataset::new(&vocab, master_seed, config.clone());
    for i in 0..count {
        match generate_example(example_seed(master_seed, i), config, &lib, &vocab) {
            Ok(ex) => {
                data.indices.push(i);
                data.examples.push(ex);
            }
            Err(rearrange_core::Error::Generation(msg)) => {
                log::debug!("example {i}: {msg}");
                data.header.failures.push(i);
            }
            Err(e) => return Err(e.into()),
        }
    }
    data.header.count = data.examples.len();
    Ok(data)
}
