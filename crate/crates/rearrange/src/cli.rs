//! Argument definitions and command implementations.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use rearrange_core::lang::{StructureShape, Vocabulary};
use rearrange_core::model::ModelConfig;
use rearrange_core::rng::{derive_seed, rng_from_seed};
use rearrange_core::scenegen::{GenConfig, TableBounds};
use rearrange_core::tensor::ParamStore;
use rearrange_core::traineval::{
    run_benchmark, train, BenchmarkConfig, Control, ModelEntry, Network, StepLog, Task, TrainConfig, TrainState,
};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::dataset::{generate_dataset, read_dataset, write_dataset, Dataset};
use crate::error::{CliError, CliResult};
use crate::fsutil;
use crate::infer::infer;
use crate::manifest::RunManifest;
use crate::report::{read_report, write_report};
use crate::svg;

#[derive(Debug, Parser)]
#[command(name = "rearrange", version, about = "Language-guided object rearrangement: data, training, evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded dataset of rearrangement examples.
    GenData(GenDataArgs),
    /// Train one network on one or more datasets.
    Train(TrainArgs),
    /// Evaluate checkpoints on a dataset and write a report.
    Eval(EvalArgs),
    /// Run selection then generation on a single scene.
    Infer(InferArgs),
    /// Render a scene, candidate file or report as SVG.
    ExportPlot(PlotArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub count: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated subset of circle, line, tower, table_setting.
    #[arg(long, value_delimiter = ',', value_parser = parse_shape)]
    pub structures: Vec<StructureShape>,
    /// Sample only camera-facing surface points.
    #[arg(long)]
    pub partial_view: bool,
    #[arg(long, default_value_t = 32)]
    pub points: usize,
    /// Largest tolerated fraction of examples that exhaust their retries.
    #[arg(long, default_value_t = 0.01)]
    pub max_failure_rate: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_task)]
    pub task: Task,
    #[arg(long, num_args = 1.., required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Save a checkpoint every this many steps.
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long)]
    pub ckpt_out: PathBuf,
    /// Loss curve destination; defaults to `<ckpt-out>.loss.csv`.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    /// Continue a run from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// JSON file with network sizes; defaults to the built-in sizes.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Placement checkpoints to compare.
    #[arg(long = "ckpt", num_args = 1.., required = true)]
    pub ckpts: Vec<PathBuf>,
    /// Selection checkpoint for selection scores and full-pipeline success.
    #[arg(long)]
    pub ckpt_selection: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long = "B", default_value_t = 8)]
    pub samples: usize,
    #[arg(long = "dropout-p", default_value_t = 0.0)]
    pub dropout: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub report_out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt_selection: PathBuf,
    #[arg(long)]
    pub ckpt_generator: PathBuf,
    /// Dataset file holding the scene.
    #[arg(long)]
    pub scene: PathBuf,
    /// Record position within the dataset file.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long = "B", default_value_t = 8)]
    pub samples: usize,
    #[arg(long = "dropout-p", default_value_t = 0.0)]
    pub dropout: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PlotArgs {
    /// A dataset, candidate file from `infer`, or evaluation report.
    #[arg(long = "input", alias = "scene-or-report")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Record position, when plotting a dataset.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Candidate number, when plotting infer output.
    #[arg(long, default_value_t = 0)]
    pub candidate: usize,
}

fn parse_task(s: &str) -> Result<Task, String> {
    Task::from_name(s).ok_or_else(|| {
        let names: Vec<&str> = Task::ALL.iter().map(|t| t.name()).collect();
        format!("unknown task {s:?}; expected one of {}", names.join(", "))
    })
}

fn parse_shape(s: &str) -> Result<StructureShape, String> {
    StructureShape::from_name(s).ok_or_else(|| format!("unknown structure {s:?}"))
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Eval(a) => eval_cmd(&a),
        Command::Infer(a) => infer_cmd(&a),
        Command::ExportPlot(a) => plot_cmd(&a),
    }
}

fn gen_data(a: &GenDataArgs) -> CliResult<()> {
    let vocab = Vocabulary::standard();
    let mut manifest = RunManifest::start("gen-data", a, a.seed, vocab.hash())?;
    let mut config = GenConfig { partial_view: a.partial_view, points_per_object: a.points, ..GenConfig::default() };
    if !a.structures.is_empty() {
        config = config.with_structures(&a.structures);
    }
    let data = generate_dataset(a.seed, a.count, &config)?;
    let failed = data.header.failures.len();
    if failed as f64 > a.max_failure_rate * a.count as f64 {
        return Err(CliError::Data(format!(
            "{failed} of {} examples exhausted their retry budget (limit {:.2}%)",
            a.count,
            100.0 * a.max_failure_rate
        )));
    }
    write_dataset(&a.out, &data)?;
    log::info!("wrote {} examples ({failed} failed) to {}", data.examples.len(), a.out.display());
    manifest.output(&a.out);
    manifest.finish(&a.out)
}

fn read_model_config(path: &Path, vocab: &Vocabulary) -> CliResult<ModelConfig> {
    let text = fsutil::read_to_string(path)?;
    // Partial files override the built-in sizes field by field.
    let mut base = serde_json::to_value(ModelConfig::new(vocab.len())).expect("config serializes");
    let patch: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let serde_json::Value::Object(fields) = patch else {
        return Err(CliError::Usage(format!("{}: expected a JSON object", path.display())));
    };
    for (k, v) in fields {
        if base.get(&k).is_none() {
            return Err(CliError::Usage(format!("{}: unknown field {k}", path.display())));
        }
        base[k] = v;
    }
    let config: ModelConfig = serde_json::from_value(base).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if config.vocab_size != vocab.len() {
        return Err(CliError::Usage(format!("vocab_size must be {}", vocab.len())));
    }
    config.validate()?;
    Ok(config)
}

fn loss_csv(logs: &[StepLog]) -> String {
    let mut out = String::from("step,epoch,loss,grad_norm\n");
    for l in logs {
        out.push_str(&format!("{},{},{},{}\n", l.step, l.epoch, l.loss, l.grad_norm));
    }
    out
}

fn train_cmd(a: &TrainArgs) -> CliResult<()> {
    let mut datasets: Vec<Dataset> = Vec::new();
    for p in &a.data {
        let expected = datasets.first().map(|d| d.header.vocab_hash.clone());
        datasets.push(read_dataset(p, expected.as_deref())?);
    }
    let vocab = datasets[0].vocabulary()?;
    let examples: Vec<_> = datasets.into_iter().flat_map(|d| d.examples).collect();

    let (net, mut store, mut state, mut config) = match &a.resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            if ck.task() != a.task {
                return Err(CliError::Usage(format!("checkpoint task is {}, not {}", ck.task().name(), a.task.name())));
            }
            if ck.vocab.hash() != vocab.hash() {
                return Err(CliError::Data("checkpoint vocabulary does not match the dataset".into()));
            }
            if a.model_config.is_some() {
                return Err(CliError::Usage("--model-config cannot change a resumed network".into()));
            }
            log::info!("resuming {} at step {}", path.display(), ck.state.step);
            (ck.net, ck.store, ck.state, ck.train)
        }
        None => {
            let mut model = match &a.model_config {
                Some(p) => read_model_config(p, &vocab)?,
                None => ModelConfig::new(vocab.len()),
            };
            model.dropout = a.dropout.unwrap_or(0.0);
            let seed = a.seed.unwrap_or(0);
            let mut store = ParamStore::new();
            let net = Network::build(a.task, &model, &mut store, &mut rng_from_seed(derive_seed(seed, 0x1417)))?;
            let config = TrainConfig { seed, ..TrainConfig::default() };
            (net, store, TrainState::new(config.lr), config)
        }
    };
    // A resumed run keeps its seed and batching so it continues the same
    // trajectory; budgets and the learning rate may change.
    if a.resume.is_none() {
        if let Some(v) = a.batch {
            config.batch_size = v;
        }
        if let Some(v) = a.dropout {
            config.dropout = v;
        }
    } else if a.batch.is_some_and(|b| b != config.batch_size) || a.seed.is_some_and(|s| s != config.seed) {
        return Err(CliError::Usage("--batch and --seed are fixed by the resumed checkpoint".into()));
    }
    match (a.epochs, a.max_steps) {
        (Some(v), _) => config.epochs = v,
        // A step budget alone is not cut short by the default epoch count.
        (None, Some(_)) if a.resume.is_none() => config.epochs = u64::MAX,
        _ => {}
    }
    if a.max_steps.is_some() {
        config.max_steps = a.max_steps;
    }
    if let Some(v) = a.lr {
        config.lr = v;
    }
    if let Some(v) = a.clip_norm {
        config.clip_norm = v;
    }
    if let Some(v) = a.checkpoint_every {
        config.checkpoint_every = v;
    }
    config.data = a.data.iter().map(|p| p.display().to_string()).collect();
    config.validate()?;

    let mut manifest = RunManifest::start("train", a, config.seed, vocab.hash())?;
    log::info!("training {} on {} examples, {} parameters", a.task.name(), examples.len(), store.num_scalars());
    let mut logs = Vec::new();
    let mut save_error = None;
    let every = config.checkpoint_every;
    let result = train(&net, &mut store, &mut state, &examples, &config, |log, store, state| {
        logs.push(*log);
        if log.step % 100 == 0 {
            log::info!("step {} epoch {} loss {:.6} grad {:.4}", log.step, log.epoch, log.loss, log.grad_norm);
        }
        if every > 0 && log.step % every == 0 {
            let ck = Checkpoint { vocab: vocab.clone(), train: config.clone(), net: net.clone(), store: store.clone(), state: state.clone() };
            if let Err(e) = save_checkpoint(&a.ckpt_out, &ck) {
                save_error = Some(e);
                return Control::Stop;
            }
        }
        Control::Continue
    });
    if let Some(e) = save_error {
        return Err(e);
    }
    let csv_path = a.loss_csv.clone().unwrap_or_else(|| fsutil::sibling(&a.ckpt_out, ".loss.csv"));
    // Keep the curve up to the failure so a diverged run can be inspected.
    fsutil::write_atomic(&csv_path, loss_csv(&logs).as_bytes())?;
    result?;
    let ck = Checkpoint { vocab: vocab.clone(), train: config.clone(), net, store, state };
    save_checkpoint(&a.ckpt_out, &ck)?;
    log::info!("saved {} at step {}", a.ckpt_out.display(), ck.state.step);
    manifest.output(&a.ckpt_out);
    manifest.output(&csv_path);
    manifest.finish(&a.ckpt_out)
}

fn eval_cmd(a: &EvalArgs) -> CliResult<()> {
    let data = read_dataset(&a.data, None)?;
    let hash = data.header.vocab_hash.clone();
    let load = |p: &Path| -> CliResult<Checkpoint> {
        let ck = load_checkpoint(p)?;
        if ck.vocab.hash() != hash {
            return Err(CliError::Data(format!("{}: vocabulary does not match the dataset", p.display())));
        }
        Ok(ck)
    };
    let ckpts: Vec<Checkpoint> = a.ckpts.iter().map(|p| load(p)).collect::<CliResult<_>>()?;
    let mut names: Vec<String> = Vec::new();
    for ck in &ckpts {
        if ck.task() == Task::Selection {
            return Err(CliError::Usage("pass selection checkpoints with --ckpt-selection".into()));
        }
        let base = ck.task().name().to_string();
        let dup = names.iter().filter(|n| n.split('#').next() == Some(base.as_str())).count();
        names.push(if dup == 0 { base } else { format!("{base}#{}", dup + 1) });
    }
    let selection = a.ckpt_selection.as_deref().map(load).transpose()?;
    let sel = match &selection {
        None => None,
        Some(ck) => match &ck.net {
            Network::Selection(n) => Some((n, &ck.store)),
            _ => return Err(CliError::Usage(format!("{} is not a selection checkpoint", a.ckpt_selection.as_ref().unwrap().display()))),
        },
    };
    let entries: Vec<ModelEntry> =
        ckpts.iter().zip(&names).map(|(ck, name)| ModelEntry { name, net: &ck.net, store: &ck.store }).collect();
    let config = BenchmarkConfig { samples: a.samples, dropout: a.dropout, seed: a.seed, table: data.header.gen_config.table };
    let mut manifest = RunManifest::start("eval", a, a.seed, &hash)?;
    let (report, records) = run_benchmark(&entries, sel, &data.examples, &config)?;
    print!("{}", report.to_table());
    for p in write_report(&a.report_out, &report, &records)? {
        manifest.output(&p);
    }
    manifest.finish(&a.report_out)
}

fn infer_cmd(a: &InferArgs) -> CliResult<()> {
    let data = read_dataset(&a.scene, None)?;
    let ex = data
        .examples
        .get(a.index)
        .ok_or_else(|| CliError::Usage(format!("{} has {} records; no index {}", a.scene.display(), data.examples.len(), a.index)))?;
    let sel = load_checkpoint(&a.ckpt_selection)?;
    let gen = load_checkpoint(&a.ckpt_generator)?;
    if gen.vocab.hash() != data.header.vocab_hash {
        return Err(CliError::Data("checkpoint vocabulary does not match the scene file".into()));
    }
    let mut manifest = RunManifest::start("infer", a, a.seed, &data.header.vocab_hash)?;
    let out = infer(&sel, &gen, ex, a.samples, a.dropout, a.seed, &data.header.gen_config.table)?;
    for c in &out.candidates {
        log::info!("candidate {}: {}", c.sample, c.failure.map_or("success", |f| f.as_str()));
    }
    let mut json = serde_json::to_string_pretty(&out).map_err(|e| CliError::Data(e.to_string()))?;
    json.push('\n');
    fsutil::write_atomic(&a.out, json.as_bytes())?;
    manifest.output(&a.out);
    manifest.finish(&a.out)
}

fn plot_cmd(a: &PlotArgs) -> CliResult<()> {
    let text = fsutil::read_to_string(&a.input)?;
    let first = text.lines().next().unwrap_or("");
    let head: serde_json::Value = serde_json::from_str(first)
        .or_else(|_| serde_json::from_str(&text))
        .map_err(|e| CliError::Data(format!("{}: {e}", a.input.display())))?;
    let svg = match head.get("format").and_then(|f| f.as_str()) {
        Some(crate::dataset::DATASET_FORMAT) => {
            let data = Dataset::from_jsonl(&text, None)?;
            let ex = data
                .examples
                .get(a.index)
                .ok_or_else(|| CliError::Usage(format!("no record {} in {}", a.index, a.input.display())))?;
            let vocab = data.vocabulary()?;
            let goals: Vec<_> = ex.objects.iter().map(|o| o.goal_pose).collect();
            svg::scene_svg(ex, &goals, Some(&ex.structure_frame), &svg::caption(&vocab, &ex.instruction.tokens), &data.header.gen_config.table)
        }
        Some(crate::infer::CANDIDATES_FORMAT) => {
            let out: crate::infer::InferOutput =
                serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", a.input.display())))?;
            let vocab = Vocabulary::standard();
            if vocab.hash() != out.vocab_hash {
                return Err(CliError::Data("candidate file uses an unknown vocabulary".into()));
            }
            let c = out
                .candidates
                .get(a.candidate)
                .ok_or_else(|| CliError::Usage(format!("no candidate {} in {}", a.candidate, a.input.display())))?;
            let ex = &out.example;
            let goals: Vec<_> = ex.objects.iter().map(|o| c.goals.iter().find(|g| g.id == o.id).map(|g| g.pose)).collect();
            let verdict = c.failure.map_or("success", |f| f.as_str());
            let caption = format!("{} [candidate {}: {verdict}]", svg::caption(&vocab, &ex.instruction.tokens), c.sample);
            svg::scene_svg(ex, &goals, c.frame.as_ref(), &caption, &TableBounds::default())
        }
        _ if head.get("schema_version").is_some() => svg::report_svg(&read_report(&a.input)?),
        _ => return Err(CliError::Data(format!("{}: not a dataset, candidate file or report", a.input.display()))),
    };
    fsutil::write_atomic(&a.out, svg.as_bytes())
}
