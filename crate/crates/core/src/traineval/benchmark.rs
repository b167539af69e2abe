use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{compute_errors, example_errors, property_group, ErrorTable, SelectionCounts, SelectionScores};
use super::success::{evaluate_success, FailureReason, SuccessOutcome};
use super::train::{Network, Task};
use crate::geometry::Pose;
use crate::lang::StructureShape;
use crate::math;
use crate::model::{apply_prediction, GeneratorVariant, SelectionNet};
use crate::rng::derive_seed;
use crate::scenegen::{PoseOffset, RearrangementExample, TableBounds};
use crate::tensor::ParamStore;
use crate::Result;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
/// How one of the B samples is chosen.
pub const SAMPLE_RULE: &str = "first_success";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub samples: usize,
    pub dropout: f64,
    pub seed: u64,
    pub table: TableBounds,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self { samples: 8, dropout: 0.0, seed: 0, table: TableBounds::default() }
    }
}

/// A placement model under evaluation.
#[derive(Clone, Copy, Debug)]
pub struct ModelEntry<'a> {
    pub name: &'a str,
    pub net: &'a Network,
    pub store: &'a ParamStore,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SuccessRow {
    pub count: usize,
    pub success: usize,
    pub rate: f64,
}

impl SuccessRow {
    fn add(&mut self, ok: bool) {
        self.count += 1;
        self.success += usize::from(ok);
        self.rate = self.success as f64 / self.count as f64;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SuccessTable {
    pub by_structure: BTreeMap<String, SuccessRow>,
    pub overall: SuccessRow,
    pub failures: BTreeMap<String, usize>,
    /// Distractors moved, over successful scenes.
    pub distractors_moved_mean: f64,
    pub distractors_moved_std: f64,
}

impl SuccessTable {
    fn from_outcomes(items: &[(StructureShape, &SuccessOutcome)]) -> Self {
        let mut t = SuccessTable::default();
        let mut moved = Vec::new();
        for (shape, o) in items {
            t.by_structure.entry(shape.name().to_string()).or_default().add(o.success);
            t.overall.add(o.success);
            match o.failure {
                Some(f) => *t.failures.entry(f.as_str().to_string()).or_default() += 1,
                None => moved.push(o.distractors_moved as f64),
            }
        }
        if !moved.is_empty() {
            let n = moved.len() as f64;
            let mean = moved.iter().sum::<f64>() / n;
            t.distractors_moved_mean = mean;
            t.distractors_moved_std = math::sqrt(moved.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / n);
        }
        t
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub name: String,
    pub task: Task,
    pub has_frame: bool,
    /// Placement errors with ground-truth selection.
    pub errors: ErrorTable,
    /// Physical success with ground-truth selection.
    pub success: SuccessTable,
    /// Success with objects chosen by the selection network.
    pub pipeline: Option<SuccessTable>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub overall: SelectionScores,
    pub by_property: BTreeMap<String, SelectionScores>,
    pub by_query_count: BTreeMap<usize, SelectionScores>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub examples: usize,
    pub samples: usize,
    pub dropout: f64,
    pub seed: u64,
    pub sample_rule: String,
    pub structure_counts: BTreeMap<String, usize>,
    pub models: Vec<ModelReport>,
    pub selection: Option<SelectionReport>,
}

/// Per-example outcome, one record per model and example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub index: usize,
    pub seed: u64,
    pub structure: String,
    pub model: String,
    pub sample: usize,
    pub success: bool,
    pub failure: Option<FailureReason>,
    pub pipeline_success: Option<bool>,
    pub pipeline_failure: Option<FailureReason>,
    pub distractors_moved: Option<usize>,
}

fn apply_variant(task: Task) -> GeneratorVariant {
    if task.has_frame() {
        GeneratorVariant::Full
    } else {
        GeneratorVariant::NoStructure
    }
}

/// Draws `b` samples and keeps the first that succeeds, else the first.
pub fn choose_sample(
    entry: &ModelEntry,
    ex: &RearrangementExample,
    selected: &[usize],
    config: &BenchmarkConfig,
    seed: u64,
) -> Result<(usize, Vec<PoseOffset>, SuccessOutcome)> {
    let (decode, samples) = entry.net.sample(entry.store, ex, selected, config.samples, config.dropout, seed)?;
    let initial: Vec<Pose> = ex.objects.iter().map(|o| o.initial_pose).collect();
    let variant = apply_variant(entry.net.task());
    let mut first = None;
    for (k, deltas) in samples.into_iter().enumerate() {
        let goals = apply_prediction(&initial, &decode, &deltas, variant)?;
        let outcome = evaluate_success(ex, &goals, &decode, &config.table);
        if outcome.success {
            return Ok((k, deltas, outcome));
        }
        if first.is_none() {
            first = Some((k, deltas, outcome));
        }
    }
    Ok(first.expect("at least one sample"))
}

fn failed(reason: FailureReason) -> SuccessOutcome {
    SuccessOutcome { success: false, distractors_moved: 0, failure: Some(reason), settled: Vec::new() }
}

/// Evaluates every model on `data`. Models see identical examples and
/// sample seeds; a selection network, when given, adds selection scores and
/// full-pipeline success.
pub fn run_benchmark(
    models: &[ModelEntry],
    selection: Option<(&SelectionNet, &ParamStore)>,
    data: &[RearrangementExample],
    config: &BenchmarkConfig,
) -> Result<(EvalReport, Vec<ExampleRecord>)> {
    let mut structure_counts = BTreeMap::new();
    for ex in data {
        *structure_counts.entry(ex.shape().name().to_string()).or_insert(0) += 1;
    }

    let mut picks: Vec<Option<Vec<usize>>> = alloc::vec![None; data.len()];
    let selection_report = match selection {
        None => None,
        Some((net, store)) => {
            let mut overall = SelectionCounts::default();
            let mut by_property: BTreeMap<String, SelectionCounts> = BTreeMap::new();
            let mut by_count: BTreeMap<usize, SelectionCounts> = BTreeMap::new();
            for (i, ex) in data.iter().enumerate() {
                let order: Vec<usize> = (0..ex.objects.len()).collect();
                let out = net.predict(store, &crate::model::featurize(ex, &order))?;
                let chosen: BTreeSet<usize> = out.selected.iter().enumerate().filter(|(_, &s)| s).map(|(k, _)| k).collect();
                let truth: BTreeSet<usize> = ex.query_indices().into_iter().collect();
                overall.add(&chosen, &truth);
                by_property.entry(property_group(ex)).or_default().add(&chosen, &truth);
                by_count.entry(truth.len()).or_default().add(&chosen, &truth);
                picks[i] = Some(chosen.into_iter().collect());
            }
            Some(SelectionReport {
                overall: overall.summary(),
                by_property: by_property.into_iter().map(|(k, v)| (k, v.summary())).collect(),
                by_query_count: by_count.into_iter().map(|(k, v)| (k, v.summary())).collect(),
            })
        }
    };

    let mut reports = Vec::new();
    let mut records = Vec::new();
    for entry in models {
        let task = entry.net.task();
        let mut errors = Vec::with_capacity(data.len());
        let mut gt_outcomes = Vec::with_capacity(data.len());
        let mut pipe_outcomes = Vec::new();
        for (i, ex) in data.iter().enumerate() {
            let seed = derive_seed(config.seed, i as u64);
            let (k, deltas, outcome) = choose_sample(entry, ex, &ex.query_indices(), config, seed)?;
            errors.push(example_errors(ex, &deltas, task.has_frame())?);
            let pipe = match &picks[i] {
                None => None,
                Some(sel) if sel.is_empty() => Some(failed(FailureReason::Prediction)),
                Some(sel) => Some(choose_sample(entry, ex, sel, config, seed)?.2),
            };
            records.push(ExampleRecord {
                index: i,
                seed: ex.seed,
                structure: ex.shape().name().to_string(),
                model: entry.name.to_string(),
                sample: k,
                success: outcome.success,
                failure: outcome.failure,
                pipeline_success: pipe.as_ref().map(|p| p.success),
                pipeline_failure: pipe.as_ref().and_then(|p| p.failure),
                distractors_moved: pipe.as_ref().map(|p| p.distractors_moved),
            });
            gt_outcomes.push((ex.shape(), outcome));
            if let Some(p) = pipe {
                pipe_outcomes.push((ex.shape(), p));
            }
        }
        let gt_refs: Vec<(StructureShape, &SuccessOutcome)> = gt_outcomes.iter().map(|(s, o)| (*s, o)).collect();
        let pipe_refs: Vec<(StructureShape, &SuccessOutcome)> = pipe_outcomes.iter().map(|(s, o)| (*s, o)).collect();
        reports.push(ModelReport {
            name: entry.name.to_string(),
            task,
            has_frame: task.has_frame(),
            errors: compute_errors(&errors),
            success: SuccessTable::from_outcomes(&gt_refs),
            pipeline: selection.map(|_| SuccessTable::from_outcomes(&pipe_refs)),
        });
    }

    let report = EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        examples: data.len(),
        samples: config.samples,
        dropout: config.dropout,
        seed: config.seed,
        sample_rule: SAMPLE_RULE.to_string(),
        structure_counts,
        models: reports,
        selection: selection_report,
    };
    Ok((report, records))
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.2}"),
        None => "/".to_string(),
    }
}

impl EvalReport {
    /// Aligned text: one row per model, Obj/Struct × t/R per structure.
    pub fn to_table(&self) -> String {
        let shapes: Vec<&str> = StructureShape::ALL.iter().map(|s| s.name()).filter(|s| self.structure_counts.contains_key(*s)).collect();
        let name_w = self.models.iter().map(|m| m.name.len()).max().unwrap_or(5).max(5);
        let mut out = String::new();
        let _ = write!(out, "{:name_w$}", "model");
        for s in &shapes {
            let _ = write!(out, " | {:^31}", s);
        }
        out.push('\n');
        let _ = write!(out, "{:name_w$}", "");
        for _ in &shapes {
            let _ = write!(out, " | {:>7} {:>7} {:>7} {:>7}", "obj t", "obj R", "str t", "str R");
        }
        out.push('\n');
        for m in &self.models {
            let _ = write!(out, "{:name_w$}", m.name);
            for s in &shapes {
                match m.errors.by_structure.get(*s) {
                    Some(r) => {
                        let _ = write!(
                            out,
                            " | {:>7} {:>7} {:>7} {:>7}",
                            cell(Some(r.obj_t_cm)),
                            cell(Some(r.obj_r_deg)),
                            cell(r.struct_t_cm),
                            cell(r.struct_r_deg)
                        );
                    }
                    None => {
                        let _ = write!(out, " | {:>31}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out.push_str("\nsuccess (ground-truth selection)\n");
        for m in &self.models {
            let _ = write!(out, "{:name_w$}", m.name);
            for s in &shapes {
                let r = m.success.by_structure.get(*s).cloned().unwrap_or_default();
                let _ = write!(out, " | {s} {}/{}", r.success, r.count);
            }
            if let Some(p) = &m.pipeline {
                let _ = write!(
                    out,
                    " | pipeline {}/{} | distractors moved {:.2} ± {:.2}",
                    p.overall.success, p.overall.count, p.distractors_moved_mean, p.distractors_moved_std
                );
            }
            out.push('\n');
        }
        if let Some(sel) = &self.selection {
            let o = &sel.overall;
            let _ = write!(
                out,
                "\nselection: precision {:.3} recall {:.3} F1 {:.3}; all queries found in {}/{}\n",
                o.precision, o.recall, o.f1, o.counts.all_found, o.counts.examples
            );
            for (k, v) in &sel.by_property {
                let _ = writeln!(out, "  {k:<16} F1 {:.3} ({} scenes)", v.f1, v.counts.examples);
            }
            for (k, v) in &sel.by_query_count {
                let _ = writeln!(out, "  {k:>2} queries       F1 {:.3} ({} scenes)", v.f1, v.counts.examples);
            }
        }
        out
    }
}
