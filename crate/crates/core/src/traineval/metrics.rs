//! Placement errors and object-selection scores.

use alloc::collections::BTreeMap;
use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geometry::pose::{distance, geodesic_deg, mat_mul};
use crate::geometry::Pose;
use crate::lang::StructureShape;
use crate::scenegen::{PoseOffset, RearrangementExample};
use crate::{Error, Result};

const CM: f64 = 100.0;

/// Errors of one prediction against its example, in cm and degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleErrors {
    pub shape: StructureShape,
    /// Object positions in the structure frame for frame-predicting models,
    /// world positions otherwise.
    pub obj_t_cm: f64,
    pub obj_r_deg: f64,
    pub struct_t_cm: Option<f64>,
    pub struct_r_deg: Option<f64>,
    /// World-frame goal position error for every model.
    pub world_t_cm: f64,
}

/// Compares predicted offsets (ground-truth selection, structure order)
/// with the example. `with_frame` says whether `deltas[0]` is a structure
/// frame; without one, object offsets carry world positions.
pub fn example_errors(ex: &RearrangementExample, deltas: &[PoseOffset], with_frame: bool) -> Result<ExampleErrors> {
    let q = ex.query_indices();
    let expected = q.len() + usize::from(with_frame);
    if deltas.len() != expected {
        return Err(Error::Model(alloc::format!("{} offsets for {} query objects", deltas.len(), q.len())));
    }
    let (frame, objs, struct_t, struct_r) = if with_frame {
        let f = deltas[0].pose()?;
        let t = distance(f.t, ex.structure_frame.t) * CM;
        let r = geodesic_deg(&f.r, &ex.structure_frame.r);
        (f, &deltas[1..], Some(t), Some(r))
    } else {
        (Pose::identity(), deltas, None, None)
    };
    let n = q.len() as f64;
    let (mut t_sum, mut r_sum, mut w_sum) = (0.0, 0.0, 0.0);
    for ((&i, d), gt) in q.iter().zip(objs).zip(&ex.deltas) {
        let o = &ex.objects[i];
        let goal = o.goal_pose.expect("query has a goal");
        let pred_t = frame.apply(d.t);
        let pred_r = mat_mul(&d.matrix()?, &o.initial_pose.r);
        w_sum += distance(pred_t, goal.t) * CM;
        t_sum += if with_frame { distance(d.t, gt.t) * CM } else { distance(pred_t, goal.t) * CM };
        r_sum += geodesic_deg(&pred_r, &goal.r);
    }
    Ok(ExampleErrors {
        shape: ex.shape(),
        obj_t_cm: t_sum / n,
        obj_r_deg: r_sum / n,
        struct_t_cm: struct_t,
        struct_r_deg: struct_r,
        world_t_cm: w_sum / n,
    })
}

/// Mean errors over a set of examples. Structure-frame columns are `None`
/// when any example lacks them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub count: usize,
    pub obj_t_cm: f64,
    pub obj_r_deg: f64,
    pub struct_t_cm: Option<f64>,
    pub struct_r_deg: Option<f64>,
    pub world_t_cm: f64,
}

impl ErrorRow {
    pub fn from_examples(rows: &[&ExampleErrors]) -> Self {
        let n = rows.len();
        let mean = |f: &dyn Fn(&ExampleErrors) -> f64| if n == 0 { 0.0 } else { rows.iter().map(|r| f(r)).sum::<f64>() / n as f64 };
        let opt = |f: &dyn Fn(&ExampleErrors) -> Option<f64>| {
            if n == 0 {
                return None;
            }
            rows.iter().map(|r| f(r)).sum::<Option<f64>>().map(|s| s / n as f64)
        };
        Self {
            count: n,
            obj_t_cm: mean(&|r| r.obj_t_cm),
            obj_r_deg: mean(&|r| r.obj_r_deg),
            struct_t_cm: opt(&|r| r.struct_t_cm),
            struct_r_deg: opt(&|r| r.struct_r_deg),
            world_t_cm: mean(&|r| r.world_t_cm),
        }
    }
}

/// Per-structure and overall means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorTable {
    pub by_structure: BTreeMap<String, ErrorRow>,
    pub overall: ErrorRow,
}

pub fn compute_errors(errors: &[ExampleErrors]) -> ErrorTable {
    let mut by_structure = BTreeMap::new();
    for shape in StructureShape::ALL {
        let rows: Vec<&ExampleErrors> = errors.iter().filter(|e| e.shape == *shape).collect();
        if !rows.is_empty() {
            by_structure.insert(String::from(shape.name()), ErrorRow::from_examples(&rows));
        }
    }
    let all: Vec<&ExampleErrors> = errors.iter().collect();
    ErrorTable { by_structure, overall: ErrorRow::from_examples(&all) }
}

/// Object-level counts for precision, recall and F1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionCounts {
    pub examples: usize,
    pub tp: usize,
    pub fp: usize,
    pub r#fn: usize,
    /// Examples whose selection equals the query set.
    pub exact: usize,
    /// Examples where every query object was selected.
    pub all_found: usize,
}

impl SelectionCounts {
    pub fn add(&mut self, predicted: &BTreeSet<usize>, truth: &BTreeSet<usize>) {
        self.examples += 1;
        let tp = predicted.intersection(truth).count();
        self.tp += tp;
        self.fp += predicted.len() - tp;
        self.r#fn += truth.len() - tp;
        self.exact += usize::from(predicted == truth);
        self.all_found += usize::from(tp == truth.len());
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.r#fn)
    }

    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.r#fn)
    }

    pub fn summary(&self) -> SelectionScores {
        SelectionScores { counts: *self, precision: self.precision(), recall: self.recall(), f1: self.f1() }
    }
}

/// Empty denominators score 1: nothing was missed or wrongly added.
fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        1.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionScores {
    pub counts: SelectionCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Group label used for selection scores: the referring-expression property
/// type, or the structure name when the instruction has no expression.
pub fn property_group(ex: &RearrangementExample) -> String {
    match &ex.instruction.refexpr {
        Some(e) => String::from(e.property_type()),
        None => String::from(ex.shape().name()),
    }
}
