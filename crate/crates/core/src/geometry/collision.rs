//! Ground-plane footprints, overlap and support predicates.
//!
//! Footprints are exact (oriented rectangle or circle) for poses that only
//! rotate about z. Any tilted pose falls back to the axis-aligned bounds of
//! the rotated local bounding box, which over-approximates the object.

use super::pose::{is_yaw_only, mat_vec, Pose};
use super::shape::PrimitiveShape;
use crate::math;

/// Penetration depth below which surfaces count as touching.
pub const CONTACT_EPS: f64 = 1e-9;
/// Allowed gap between a resting face and its support.
pub const SUPPORT_TOL: f64 = 0.005;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Footprint {
    /// Center, unit axes, half extents along those axes.
    Rect { c: [f64; 2], ax: [[f64; 2]; 2], half: [f64; 2] },
    Circle { c: [f64; 2], r: f64 },
}

impl Footprint {
    pub fn center(&self) -> [f64; 2] {
        match *self {
            Footprint::Rect { c, .. } | Footprint::Circle { c, .. } => c,
        }
    }

    /// Smallest full width of the footprint.
    pub fn min_extent(&self) -> f64 {
        match *self {
            Footprint::Rect { half, .. } => 2.0 * half[0].min(half[1]),
            Footprint::Circle { r, .. } => 2.0 * r,
        }
    }

    /// Strict containment in the footprint shrunk by `margin`.
    pub fn strictly_contains(&self, p: [f64; 2], margin: f64) -> bool {
        match *self {
            Footprint::Rect { c, ax, half } => {
                let d = [p[0] - c[0], p[1] - c[1]];
                (0..2).all(|k| {
                    let along = d[0] * ax[k][0] + d[1] * ax[k][1];
                    along.abs() < half[k] - margin
                })
            }
            Footprint::Circle { c, r } => {
                let d = math::sqrt((p[0] - c[0]) * (p[0] - c[0]) + (p[1] - c[1]) * (p[1] - c[1]));
                d < r - margin
            }
        }
    }

    /// Corner or bound points used to test table containment.
    pub fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        match *self {
            Footprint::Rect { c, ax, half } => {
                let ex = half[0] * ax[0][0].abs() + half[1] * ax[1][0].abs();
                let ey = half[0] * ax[0][1].abs() + half[1] * ax[1][1].abs();
                ([c[0] - ex, c[1] - ey], [c[0] + ex, c[1] + ey])
            }
            Footprint::Circle { c, r } => ([c[0] - r, c[1] - r], [c[0] + r, c[1] + r]),
        }
    }
}

/// Footprint plus vertical extent of a placed object.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Extent {
    pub foot: Footprint,
    pub z_lo: f64,
    pub z_hi: f64,
}

pub fn extent(shape: &PrimitiveShape, pose: &Pose) -> Extent {
    let he = shape.half_extents();
    let c = [pose.t[0], pose.t[1]];
    if is_yaw_only(&pose.r) {
        let ax = [[pose.r[0][0], pose.r[1][0]], [pose.r[0][1], pose.r[1][1]]];
        let foot = match *shape {
            PrimitiveShape::Box { .. } => Footprint::Rect { c, ax, half: [he[0], he[1]] },
            _ => Footprint::Circle { c, r: he[0] },
        };
        return Extent { foot, z_lo: pose.t[2] - he[2], z_hi: pose.t[2] + he[2] };
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            for sz in [-1.0, 1.0] {
                let p = mat_vec(&pose.r, [sx * he[0], sy * he[1], sz * he[2]]);
                for k in 0..3 {
                    lo[k] = lo[k].min(p[k]);
                    hi[k] = hi[k].max(p[k]);
                }
            }
        }
    }
    Extent {
        foot: Footprint::Rect {
            c,
            ax: [[1.0, 0.0], [0.0, 1.0]],
            half: [(hi[0] - lo[0]) / 2.0, (hi[1] - lo[1]) / 2.0],
        },
        z_lo: pose.t[2] + lo[2],
        z_hi: pose.t[2] + hi[2],
    }
}

fn rect_corners(c: [f64; 2], ax: [[f64; 2]; 2], half: [f64; 2]) -> [[f64; 2]; 4] {
    let mut out = [[0.0; 2]; 4];
    let mut i = 0;
    for s0 in [-1.0, 1.0] {
        for s1 in [-1.0, 1.0] {
            out[i] = [
                c[0] + s0 * half[0] * ax[0][0] + s1 * half[1] * ax[1][0],
                c[1] + s0 * half[0] * ax[0][1] + s1 * half[1] * ax[1][1],
            ];
            i += 1;
        }
    }
    out
}

fn project(pts: &[[f64; 2]; 4], axis: [f64; 2]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in pts {
        let v = p[0] * axis[0] + p[1] * axis[1];
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// Open-interval intersection of two footprints: touching is not overlap.
pub fn footprints_intersect(a: &Footprint, b: &Footprint) -> bool {
    match (*a, *b) {
        (Footprint::Circle { c: c1, r: r1 }, Footprint::Circle { c: c2, r: r2 }) => {
            let d = math::sqrt((c1[0] - c2[0]) * (c1[0] - c2[0]) + (c1[1] - c2[1]) * (c1[1] - c2[1]));
            d < r1 + r2 - CONTACT_EPS
        }
        (Footprint::Rect { c, ax, half }, Footprint::Circle { c: cc, r })
        | (Footprint::Circle { c: cc, r }, Footprint::Rect { c, ax, half }) => {
            let d = [cc[0] - c[0], cc[1] - c[1]];
            let mut dist2 = 0.0;
            for k in 0..2 {
                let along = d[0] * ax[k][0] + d[1] * ax[k][1];
                let excess = along.abs() - half[k];
                if excess > 0.0 {
                    dist2 += excess * excess;
                }
            }
            math::sqrt(dist2) < r - CONTACT_EPS
        }
        (Footprint::Rect { c: c1, ax: a1, half: h1 }, Footprint::Rect { c: c2, ax: a2, half: h2 }) => {
            let p1 = rect_corners(c1, a1, h1);
            let p2 = rect_corners(c2, a2, h2);
            [a1[0], a1[1], a2[0], a2[1]].iter().all(|&axis| {
                let (l1, u1) = project(&p1, axis);
                let (l2, u2) = project(&p2, axis);
                u1.min(u2) - l1.max(l2) > CONTACT_EPS
            })
        }
    }
}

/// True iff the ground-plane footprints intersect and the vertical
/// extents overlap (both as open intervals).
pub fn footprint_overlap(s1: &PrimitiveShape, p1: &Pose, s2: &PrimitiveShape, p2: &Pose) -> bool {
    let (e1, e2) = (extent(s1, p1), extent(s2, p2));
    let vertical = e1.z_hi.min(e2.z_hi) - e1.z_lo.max(e2.z_lo) > CONTACT_EPS;
    vertical && footprints_intersect(&e1.foot, &e2.foot)
}

/// Default stability margin: 10% of the support's smaller footprint extent.
pub fn default_margin(support: &PrimitiveShape, pose: &Pose) -> f64 {
    0.1 * extent(support, pose).foot.min_extent()
}

/// `top` rests on `support` with its footprint centroid strictly inside the
/// support footprint shrunk by `margin` (default margin when `None`).
pub fn stable_on(top: &PrimitiveShape, top_pose: &Pose, support: &PrimitiveShape, support_pose: &Pose, margin: Option<f64>) -> bool {
    let (et, es) = (extent(top, top_pose), extent(support, support_pose));
    if (et.z_lo - es.z_hi).abs() > SUPPORT_TOL {
        return false;
    }
    let margin = margin.unwrap_or_else(|| 0.1 * es.foot.min_extent());
    es.foot.strictly_contains(et.foot.center(), margin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pose::rot_z;

    const UNIT: PrimitiveShape = PrimitiveShape::Box { w: 0.2, d: 0.2, h: 0.2 };

    fn at(x: f64, y: f64, z: f64) -> Pose {
        Pose::translation([x, y, z])
    }

    #[test]
    fn separated_and_coincident() {
        assert!(!footprint_overlap(&UNIT, &at(0.0, 0.0, 0.1), &UNIT, &at(2.0, 0.0, 0.1)));
        assert!(footprint_overlap(&UNIT, &at(0.0, 0.0, 0.1), &UNIT, &at(0.0, 0.0, 0.1)));
    }

    #[test]
    fn edge_contact_is_not_overlap() {
        assert!(!footprint_overlap(&UNIT, &at(0.0, 0.0, 0.1), &UNIT, &at(0.2, 0.0, 0.1)));
        assert!(footprint_overlap(&UNIT, &at(0.0, 0.0, 0.1), &UNIT, &at(0.199, 0.0, 0.1)));
        // Stacked face to face.
        assert!(!footprint_overlap(&UNIT, &at(0.0, 0.0, 0.1), &UNIT, &at(0.0, 0.0, 0.3)));
    }

    #[test]
    fn rotated_boxes_use_separating_axes() {
        let long = PrimitiveShape::Box { w: 0.4, d: 0.02, h: 0.05 };
        let a = Pose::from_yaw([0.0, 0.0, 0.025], 0.0);
        let b = Pose::from_yaw([0.0, 0.1, 0.025], core::f64::consts::FRAC_PI_2);
        assert!(footprint_overlap(&long, &a, &long, &b));
        let c = Pose::new([0.3, 0.3, 0.025], rot_z(0.7));
        assert!(!footprint_overlap(&long, &a, &long, &c));
    }

    #[test]
    fn circle_rect_contact() {
        let cyl = PrimitiveShape::Cylinder { radius: 0.05, height: 0.1 };
        assert!(!footprint_overlap(&UNIT, &at(0.0, 0.0, 0.05), &cyl, &at(0.15, 0.0, 0.05)));
        assert!(footprint_overlap(&UNIT, &at(0.0, 0.0, 0.05), &cyl, &at(0.149, 0.0, 0.05)));
        // Corner region: distance to the corner decides.
        assert!(!footprint_overlap(&UNIT, &at(0.0, 0.0, 0.05), &cyl, &at(0.14, 0.14, 0.05)));
    }

    #[test]
    fn stacking_stability() {
        assert!(stable_on(&UNIT, &at(0.0, 0.0, 0.3), &UNIT, &at(0.0, 0.0, 0.1), None));
        assert!(!stable_on(&UNIT, &at(0.11, 0.0, 0.3), &UNIT, &at(0.0, 0.0, 0.1), None));
        // Margin 0.02 shrinks the half width 0.1 to 0.08: the boundary itself is excluded.
        assert!(!stable_on(&UNIT, &at(0.08, 0.0, 0.3), &UNIT, &at(0.0, 0.0, 0.1), None));
        assert!(stable_on(&UNIT, &at(0.0799, 0.0, 0.3), &UNIT, &at(0.0, 0.0, 0.1), None));
        // Floating 1 cm above the support.
        assert!(!stable_on(&UNIT, &at(0.0, 0.0, 0.31), &UNIT, &at(0.0, 0.0, 0.1), None));
    }
}
