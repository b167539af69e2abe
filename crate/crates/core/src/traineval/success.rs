//! Kinematic settling and the structure predicates deciding whether a
//! predicted rearrangement realizes the instruction.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geometry::pose::{distance, rot_z, yaw_of};
use crate::geometry::{extent, footprint_overlap, stable_on, Pose, PrimitiveShape};
use crate::geometry::collision::footprints_intersect;
use crate::lang::StructureShape;
use crate::math;
use crate::scenegen::{size_range, RearrangementExample, TableBounds, TABLE_ROLES, TABLE_SLOTS};

/// Height above the predicted resting height from which objects are dropped.
pub const DROP_HEIGHT: f64 = 0.03;
/// Largest tilt of an object's vertical axis that still lands upright.
pub const MAX_TILT_DEG: f64 = 15.0;
pub const CIRCLE_RESIDUAL: f64 = 0.02;
pub const LINE_DEVIATION: f64 = 0.02;
pub const SLOT_DISTANCE: f64 = 0.05;
const Z_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    OffTable,
    Tipped,
    Collision,
    Unstable,
    Stacked,
    StructureResidual,
    Radius,
    TowerCount,
    Slot,
    Bin,
    /// The model produced no usable output.
    Prediction,
}

impl FailureReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureReason::OffTable => "off table",
            FailureReason::Tipped => "tipped",
            FailureReason::Collision => "collision",
            FailureReason::Unstable => "unstable",
            FailureReason::Stacked => "stacked",
            FailureReason::StructureResidual => "structure residual",
            FailureReason::Radius => "radius",
            FailureReason::TowerCount => "tower count",
            FailureReason::Slot => "slot",
            FailureReason::Bin => "bin",
            FailureReason::Prediction => "prediction",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessOutcome {
    pub success: bool,
    pub distractors_moved: usize,
    pub failure: Option<FailureReason>,
    /// Poses after settling, one per object.
    #[serde(skip)]
    pub settled: Vec<Pose>,
}

/// Upright yaw-only version of `r`, or `None` when it would tip over.
fn upright(r: &crate::geometry::Mat3) -> Option<crate::geometry::Mat3> {
    let cos_tilt = r[2][2].clamp(-1.0, 1.0);
    if math::acos(cos_tilt).to_degrees() > MAX_TILT_DEG {
        return None;
    }
    Some(rot_z(yaw_of(r)))
}

/// Lowers `shape` from `pose` until it rests on the table or on the highest
/// object below it whose footprint it overlaps. Only z changes.
pub fn settle(shape: &PrimitiveShape, pose: &Pose, others: &[(PrimitiveShape, Pose)]) -> Pose {
    let e = extent(shape, pose);
    let mut floor = 0.0f64;
    for (s, p) in others {
        let o = extent(s, p);
        if o.z_hi <= e.z_lo + Z_EPS && footprints_intersect(&e.foot, &o.foot) {
            floor = floor.max(o.z_hi);
        }
    }
    let dz = (floor - e.z_lo).min(0.0);
    Pose::new([pose.t[0], pose.t[1], pose.t[2] + dz], pose.r)
}

/// Checks a predicted scene. `predicted` holds one pose per object (as from
/// `apply_prediction`); `moved` lists the moved objects in placement order.
///
/// Moved objects are lifted first, then each is dropped from
/// [`DROP_HEIGHT`] above its predicted resting height and settled.
pub fn evaluate_success(ex: &RearrangementExample, predicted: &[Pose], moved: &[usize], table: &TableBounds) -> SuccessOutcome {
    let n = ex.objects.len();
    let distractors_moved = moved.iter().filter(|&&i| !ex.objects[i].is_query).count();
    let fail = |reason, settled| SuccessOutcome { success: false, distractors_moved, failure: Some(reason), settled };
    let mut poses: Vec<Pose> = ex.objects.iter().map(|o| o.initial_pose).collect();
    if predicted.len() != n || moved.iter().any(|&i| i >= n) {
        return fail(FailureReason::Prediction, poses);
    }
    if predicted.iter().any(|p| p.t.iter().chain(p.r.iter().flatten()).any(|x| !x.is_finite())) {
        return fail(FailureReason::Prediction, poses);
    }
    let is_moved = |i: usize| moved.contains(&i);
    for &i in moved {
        let Some(r) = upright(&predicted[i].r) else {
            return fail(FailureReason::Tipped, poses);
        };
        let shape = &ex.objects[i].shape;
        let rest = Pose::new(predicted[i].t, r);
        let drop = Pose::new([rest.t[0], rest.t[1], rest.t[2] + DROP_HEIGHT], r);
        let placed: Vec<(PrimitiveShape, Pose)> = (0..n)
            .filter(|&j| j != i && (!is_moved(j) || moved.iter().position(|&m| m == j) < moved.iter().position(|&m| m == i)))
            .map(|j| (ex.objects[j].shape, poses[j]))
            .collect();
        poses[i] = settle(shape, &drop, &placed);
    }
    for &i in moved {
        if !table.contains(&ex.objects[i].shape, &poses[i]) {
            return fail(FailureReason::OffTable, poses);
        }
    }
    for a in 0..n {
        for b in a + 1..n {
            if footprint_overlap(&ex.objects[a].shape, &poses[a], &ex.objects[b].shape, &poses[b]) {
                return fail(FailureReason::Collision, poses);
            }
        }
    }
    let shape = ex.shape();
    let queries = ex.query_indices();
    let resting_on_table = |i: usize| extent(&ex.objects[i].shape, &poses[i]).z_lo.abs() < 1e-6;
    if shape == StructureShape::Tower {
        let mut stack = queries.clone();
        stack.sort_by(|&a, &b| poses[a].t[2].total_cmp(&poses[b].t[2]));
        if !resting_on_table(stack[0]) {
            return fail(FailureReason::TowerCount, poses);
        }
        for w in stack.windows(2) {
            let (s, t) = (&ex.objects[w[0]], &ex.objects[w[1]]);
            if !stable_on(&t.shape, &poses[w[1]], &s.shape, &poses[w[0]], None) {
                return fail(FailureReason::Unstable, poses);
            }
        }
    } else if moved.iter().any(|&i| !resting_on_table(i)) {
        return fail(FailureReason::Stacked, poses);
    }

    let centers: Vec<[f64; 2]> = queries.iter().map(|&i| [poses[i].t[0], poses[i].t[1]]).collect();
    let params = ex.spec.params;
    let origin = match shape {
        StructureShape::Circle => {
            let Some((c, r, residual)) = fit_circle(&centers) else {
                return fail(FailureReason::StructureResidual, poses);
            };
            if residual >= CIRCLE_RESIDUAL {
                return fail(FailureReason::StructureResidual, poses);
            }
            let (lo, hi) = size_range(shape, params.size);
            if r < lo || r > hi {
                return fail(FailureReason::Radius, poses);
            }
            c
        }
        StructureShape::Line => {
            if line_deviation(&centers) >= LINE_DEVIATION {
                return fail(FailureReason::StructureResidual, poses);
            }
            mean2(&centers)
        }
        StructureShape::Tower => {
            let bottom = queries.iter().copied().min_by(|&a, &b| poses[a].t[2].total_cmp(&poses[b].t[2])).expect("queries");
            [poses[bottom].t[0], poses[bottom].t[1]]
        }
        StructureShape::TableSetting => match table_slots_ok(ex, &poses) {
            Some(o) => o,
            None => return fail(FailureReason::Slot, poses),
        },
    };
    let (x0, x1) = table.x_bin(params.hpos);
    let (y0, y1) = table.y_bin(params.vpos);
    if !(origin[0] >= x0 && origin[0] <= x1 && origin[1] >= y0 && origin[1] <= y1) {
        return fail(FailureReason::Bin, poses);
    }
    SuccessOutcome { success: true, distractors_moved, failure: None, settled: poses }
}

fn mean2(p: &[[f64; 2]]) -> [f64; 2] {
    let n = p.len() as f64;
    [p.iter().map(|q| q[0]).sum::<f64>() / n, p.iter().map(|q| q[1]).sum::<f64>() / n]
}

/// Least-squares circle through `points`: center, radius and the largest
/// absolute radial residual. Two points span a diameter.
pub fn fit_circle(points: &[[f64; 2]]) -> Option<([f64; 2], f64, f64)> {
    let c = match points.len() {
        0 | 1 => return None,
        2 => mean2(points),
        _ => {
            let m = mean2(points);
            // Solve for u, v, w in (x² + y²) = 2ux + 2vy + w, centered at m.
            let mut a = [[0.0; 3]; 3];
            let mut b = [0.0; 3];
            for p in points {
                let (x, y) = (p[0] - m[0], p[1] - m[1]);
                let row = [2.0 * x, 2.0 * y, 1.0];
                let rhs = x * x + y * y;
                for i in 0..3 {
                    for j in 0..3 {
                        a[i][j] += row[i] * row[j];
                    }
                    b[i] += row[i] * rhs;
                }
            }
            let sol = solve3(&a, &b)?;
            [m[0] + sol[0], m[1] + sol[1]]
        }
    };
    let radii: Vec<f64> = points.iter().map(|p| math::sqrt((p[0] - c[0]) * (p[0] - c[0]) + (p[1] - c[1]) * (p[1] - c[1]))).collect();
    let r = radii.iter().sum::<f64>() / radii.len() as f64;
    let residual = radii.iter().map(|d| (d - r).abs()).fold(0.0, f64::max);
    Some((c, r, residual))
}

fn det3(a: &[[f64; 3]; 3]) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

fn solve3(a: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
    let d = det3(a);
    let scale: f64 = a.iter().flatten().map(|x| x.abs()).fold(0.0, f64::max);
    if !(d.abs() > 1e-12 * scale * scale * scale) {
        return None;
    }
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        let mut m = *a;
        for i in 0..3 {
            m[i][k] = b[i];
        }
        *o = det3(&m) / d;
    }
    Some(out)
}

/// Largest perpendicular distance from the total-least-squares line.
pub fn line_deviation(points: &[[f64; 2]]) -> f64 {
    if points.len() < 3 {
        return 0.0;
    }
    let m = mean2(points);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let (x, y) = (p[0] - m[0], p[1] - m[1]);
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
    }
    let theta = 0.5 * math::atan2(2.0 * sxy, sxx - syy);
    let normal = [-math::sin(theta), math::cos(theta)];
    points.iter().map(|p| ((p[0] - m[0]) * normal[0] + (p[1] - m[1]) * normal[1]).abs()).fold(0.0, f64::max)
}

/// Every role object is near its slot relative to the plate, using the
/// instructed heading and the middle of the size bin. Returns the plate
/// position.
fn table_slots_ok(ex: &RearrangementExample, poses: &[Pose]) -> Option<[f64; 2]> {
    let params = ex.spec.params;
    let (lo, hi) = size_range(StructureShape::TableSetting, params.size);
    let scale = (lo + hi) / 2.0;
    let find = |role: &str| ex.query_indices().into_iter().find(|&i| ex.objects[i].class.name() == role);
    let plate = find(TABLE_ROLES[0])?;
    let frame = Pose::from_yaw([poses[plate].t[0], poses[plate].t[1], 0.0], ex.spec.yaw());
    for (role, slot) in TABLE_ROLES.iter().zip(TABLE_SLOTS) {
        let i = find(role)?;
        let want = frame.apply([slot[0] * scale, slot[1] * scale, 0.0]);
        if distance([want[0], want[1], 0.0], [poses[i].t[0], poses[i].t[1], 0.0]) >= SLOT_DISTANCE {
            return None;
        }
    }
    Some([poses[plate].t[0], poses[plate].t[1]])
}
