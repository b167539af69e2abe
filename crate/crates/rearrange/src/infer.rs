//! Selection followed by pose generation on a single scene.

use serde::{Deserialize, Serialize};
use rearrange_core::geometry::Pose;
use rearrange_core::model::{apply_prediction, featurize, GeneratorVariant};
use rearrange_core::scenegen::{RearrangementExample, TableBounds};
use rearrange_core::traineval::{evaluate_success, FailureReason, Network, Task};

use crate::checkpoint::Checkpoint;
use crate::error::{CliError, CliResult};

pub const CANDIDATES_FORMAT: &str = "rearrange-candidates";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectGoal {
    pub id: u32,
    pub pose: Pose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub sample: usize,
    pub success: bool,
    pub failure: Option<FailureReason>,
    pub distractors_moved: usize,
    /// Predicted structure frame, for models that have one.
    pub frame: Option<Pose>,
    /// Predicted goals of the moved objects, in decode order.
    pub goals: Vec<ObjectGoal>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferOutput {
    pub format: String,
    pub vocab_hash: String,
    pub generator_task: Task,
    pub samples: usize,
    pub dropout: f64,
    pub seed: u64,
    pub selection_probabilities: Vec<f64>,
    pub selected: Vec<u32>,
    pub candidates: Vec<Candidate>,
    pub example: RearrangementExample,
}

pub fn infer(
    selection: &Checkpoint,
    generator: &Checkpoint,
    ex: &RearrangementExample,
    samples: usize,
    dropout: f64,
    seed: u64,
    table: &TableBounds,
) -> CliResult<InferOutput> {
    let Network::Selection(sel) = &selection.net else {
        return Err(CliError::Usage(format!("selection checkpoint holds a {} network", selection.task().name())));
    };
    let task = generator.task();
    if task == Task::Selection {
        return Err(CliError::Usage("generator checkpoint holds a selection network".into()));
    }
    if selection.vocab.hash() != generator.vocab.hash() {
        return Err(CliError::Data("selection and generator checkpoints use different vocabularies".into()));
    }
    if samples == 0 {
        return Err(CliError::Usage("need at least one sample".into()));
    }
    let order: Vec<usize> = (0..ex.objects.len()).collect();
    let out = sel.predict(&selection.store, &featurize(ex, &order))?;
    let chosen: Vec<usize> = out.selected.iter().enumerate().filter(|(_, &s)| s).map(|(i, _)| i).collect();
    let mut candidates = Vec::new();
    if chosen.is_empty() {
        log::warn!("selection picked no objects; no candidates produced");
    } else {
        let (decode, all) = generator.net.sample(&generator.store, ex, &chosen, samples, dropout, seed)?;
        let variant = if task.has_frame() { GeneratorVariant::Full } else { GeneratorVariant::NoStructure };
        let initial: Vec<Pose> = ex.objects.iter().map(|o| o.initial_pose).collect();
        for (k, deltas) in all.iter().enumerate() {
            let goals = apply_prediction(&initial, &decode, deltas, variant)?;
            let outcome = evaluate_success(ex, &goals, &decode, table);
            candidates.push(Candidate {
                sample: k,
                success: outcome.success,
                failure: outcome.failure,
                distractors_moved: outcome.distractors_moved,
                frame: if task.has_frame() { Some(deltas[0].pose()?) } else { None },
                goals: decode.iter().map(|&i| ObjectGoal { id: ex.objects[i].id, pose: goals[i] }).collect(),
            });
        }
    }
    Ok(InferOutput {
        format: CANDIDATES_FORMAT.into(),
        vocab_hash: generator.vocab.hash().into(),
        generator_task: task,
        samples,
        dropout,
        seed,
        selection_probabilities: out.probabilities(),
        selected: chosen.iter().map(|&i| ex.objects[i].id).collect(),
        candidates,
        example: ex.clone(),
    })
}
