//! Goal layouts for the four structure types.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::geometry::{extent, footprint_overlap, Pose, PrimitiveShape};
use crate::lang::{HPos, Heading, ObjectClass, SizeClass, StructureParams, StructureShape, VPos};
use crate::math;
use crate::rng::Rng;
use crate::{Error, Result};

pub const MAX_QUERIES: usize = 7;
/// Table-setting role classes in canonical order.
pub const TABLE_ROLES: [&str; 4] = ["plate", "fork", "knife", "cup"];
/// Role slots in the structure frame at unit scale (x forward, y left).
pub const TABLE_SLOTS: [[f64; 2]; 4] = [[0.0, 0.0], [0.0, 0.16], [0.0, -0.16], [0.16, -0.24]];

/// Axis-aligned table region in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableBounds {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Default for TableBounds {
    fn default() -> Self {
        Self { lo: [0.0, 0.0], hi: [1.0, 1.0] }
    }
}

impl TableBounds {
    pub fn area(&self) -> f64 {
        (self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1])
    }

    /// Footprint of `shape` at `pose` lies inside the table.
    pub fn contains(&self, shape: &PrimitiveShape, pose: &Pose) -> bool {
        let (lo, hi) = extent(shape, pose).foot.bounds();
        (0..2).all(|k| lo[k] >= self.lo[k] && hi[k] <= self.hi[k])
    }

    fn third(&self, axis: usize, i: usize) -> (f64, f64) {
        let w = (self.hi[axis] - self.lo[axis]) / 3.0;
        (self.lo[axis] + w * i as f64, self.lo[axis] + w * (i + 1) as f64)
    }

    pub fn x_bin(&self, h: HPos) -> (f64, f64) {
        self.third(
            0,
            match h {
                HPos::Left => 0,
                HPos::Center => 1,
                HPos::Right => 2,
            },
        )
    }

    pub fn y_bin(&self, v: VPos) -> (f64, f64) {
        self.third(
            1,
            match v {
                VPos::Bottom => 0,
                VPos::Middle => 1,
                VPos::Top => 2,
            },
        )
    }
}

pub fn heading_yaw(h: Heading) -> f64 {
    match h {
        Heading::East => 0.0,
        Heading::North => PI / 2.0,
        Heading::West => PI,
        Heading::South => -PI / 2.0,
    }
}

/// Numeric range of the size class: circle radius, line length or
/// table-setting scale. Towers have no size parameter.
pub fn size_range(shape: StructureShape, size: SizeClass) -> (f64, f64) {
    let i = size.index();
    match shape {
        StructureShape::Circle => [(0.08, 0.12), (0.12, 0.18), (0.18, 0.25)][i],
        StructureShape::Line => [(0.2, 0.3), (0.3, 0.45), (0.45, 0.6)][i],
        StructureShape::TableSetting => [(0.85, 0.95), (0.95, 1.05), (1.05, 1.15)][i],
        StructureShape::Tower => (0.0, 0.0),
    }
}

/// Concrete structure placement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureSpec {
    pub params: StructureParams,
    pub size_value: f64,
    pub position: [f64; 2],
}

impl StructureSpec {
    pub fn yaw(&self) -> f64 {
        heading_yaw(self.params.rotation)
    }

    pub fn frame(&self) -> Pose {
        Pose::from_yaw([self.position[0], self.position[1], 0.0], self.yaw())
    }

    pub fn validate(&self, table: &TableBounds) -> Result<()> {
        let (lo, hi) = size_range(self.params.shape, self.params.size);
        if self.size_value < lo || self.size_value > hi {
            return Err(Error::Config(format!("size value {} outside [{lo}, {hi}]", self.size_value)));
        }
        let [x, y] = self.position;
        if x < table.lo[0] || x > table.hi[0] || y < table.lo[1] || y > table.hi[1] {
            return Err(Error::Config(format!("structure position {:?} off the table", self.position)));
        }
        Ok(())
    }
}

/// Goal poses of the query objects, in canonical structure order.
#[derive(Clone, Debug, PartialEq)]
pub struct Structure {
    pub frame: Pose,
    /// `order[k]` is the input index of the k-th object in canonical order.
    pub order: Vec<usize>,
    /// World-frame goal poses aligned with `order`.
    pub goals: Vec<Pose>,
}

/// Canonical order and structure-frame poses (yaw 0 in the frame).
pub fn local_layout(
    shape: StructureShape,
    size_value: f64,
    objects: &[(ObjectClass, PrimitiveShape)],
) -> Result<(Vec<usize>, Vec<Pose>)> {
    let n = objects.len();
    if n == 0 || n > MAX_QUERIES {
        return Err(Error::Infeasible(format!("structure needs 1 to {MAX_QUERIES} objects, got {n}")));
    }
    let base = |i: usize, x: f64, y: f64| Pose::translation([x, y, objects[i].1.height() / 2.0]);
    let (order, local): (Vec<usize>, Vec<Pose>) = match shape {
        StructureShape::Circle => (0..n)
            .map(|i| {
                let a = -2.0 * PI * i as f64 / n as f64;
                (i, base(i, size_value * math::cos(a), size_value * math::sin(a)))
            })
            .unzip(),
        StructureShape::Line => (0..n)
            .map(|i| {
                let x = if n == 1 { 0.0 } else { -size_value / 2.0 + size_value * i as f64 / (n - 1) as f64 };
                (i, base(i, x, 0.0))
            })
            .unzip(),
        StructureShape::Tower => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| objects[b].1.footprint_area().total_cmp(&objects[a].1.footprint_area()));
            let mut z = 0.0;
            let poses = order
                .iter()
                .map(|&i| {
                    let h = objects[i].1.height();
                    let p = Pose::translation([0.0, 0.0, z + h / 2.0]);
                    z += h;
                    p
                })
                .collect();
            (order, poses)
        }
        StructureShape::TableSetting => {
            if n != TABLE_ROLES.len() {
                return Err(Error::Infeasible(format!("table setting needs {} objects, got {n}", TABLE_ROLES.len())));
            }
            let mut order = Vec::new();
            let mut poses = Vec::new();
            for (role, slot) in TABLE_ROLES.iter().zip(TABLE_SLOTS) {
                let i = objects
                    .iter()
                    .position(|(c, _)| c.name() == *role)
                    .ok_or_else(|| Error::Infeasible(format!("table setting misses a {role}")))?;
                if order.contains(&i) {
                    return Err(Error::Infeasible(format!("duplicate {role}")));
                }
                order.push(i);
                poses.push(base(i, slot[0] * size_value, slot[1] * size_value));
            }
            (order, poses)
        }
    };
    if shape != StructureShape::Tower {
        for a in 0..n {
            for b in a + 1..n {
                if footprint_overlap(&objects[order[a]].1, &local[a], &objects[order[b]].1, &local[b]) {
                    return Err(Error::Infeasible(format!("objects {} and {} collide in the layout", order[a], order[b])));
                }
            }
        }
    }
    Ok((order, local))
}

/// Samples a frame position inside the instructed bin such that every goal
/// footprint stays on the table.
pub fn sample_position(
    params: &StructureParams,
    objects: &[(ObjectClass, PrimitiveShape)],
    order: &[usize],
    local: &[Pose],
    table: &TableBounds,
    rng: &mut Rng,
) -> Result<[f64; 2]> {
    let rot = Pose::from_yaw([0.0; 3], heading_yaw(params.rotation));
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for (k, &i) in order.iter().enumerate() {
        let (l, h) = extent(&objects[i].1, &rot.compose(&local[k])).foot.bounds();
        for a in 0..2 {
            lo[a] = lo[a].min(l[a]);
            hi[a] = hi[a].max(h[a]);
        }
    }
    const GUARD: f64 = 1e-6;
    let bins = [table.x_bin(params.hpos), table.y_bin(params.vpos)];
    let mut out = [0.0; 2];
    for a in 0..2 {
        let from = bins[a].0.max(table.lo[a] - lo[a]) + GUARD;
        let to = bins[a].1.min(table.hi[a] - hi[a]) - GUARD;
        if from >= to {
            return Err(Error::Infeasible("structure does not fit the instructed table region".into()));
        }
        out[a] = rng.random_range(from..to);
    }
    Ok(out)
}

/// World-frame goal poses in canonical order for a fully specified structure.
pub fn synthesize_structure(
    spec: &StructureSpec,
    objects: &[(ObjectClass, PrimitiveShape)],
    table: &TableBounds,
) -> Result<Structure> {
    let (order, local) = local_layout(spec.params.shape, spec.size_value, objects)?;
    let frame = spec.frame();
    let goals: Vec<Pose> = local.iter().map(|l| frame.compose(l)).collect();
    for (k, &i) in order.iter().enumerate() {
        if !table.contains(&objects[i].1, &goals[k]) {
            return Err(Error::Infeasible(format!("object {i} leaves the table")));
        }
    }
    Ok(Structure { frame, order, goals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pose::distance;
    use crate::geometry::stable_on;

    fn point_like(n: usize) -> Vec<(ObjectClass, PrimitiveShape)> {
        let c = ObjectClass::from_name("can").unwrap();
        (0..n).map(|_| (c, PrimitiveShape::Cylinder { radius: 0.01, height: 0.1 })).collect()
    }

    #[test]
    fn circle_is_clockwise_from_heading() {
        let (order, local) = local_layout(StructureShape::Circle, 0.2, &point_like(4)).unwrap();
        assert_eq!(order, [0, 1, 2, 3]);
        let want = [[0.2, 0.0], [0.0, -0.2], [-0.2, 0.0], [0.0, 0.2]];
        for (p, w) in local.iter().zip(want) {
            assert!((p.t[0] - w[0]).abs() < 1e-12 && (p.t[1] - w[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn tower_stacks_identical_boxes() {
        let c = ObjectClass::from_name("book").unwrap();
        let h = 0.04;
        let objs = alloc::vec![(c, PrimitiveShape::Box { w: 0.1, d: 0.1, h }); 3];
        let (_, local) = local_layout(StructureShape::Tower, 0.0, &objs).unwrap();
        for (k, z) in [h / 2.0, 1.5 * h, 2.5 * h].iter().enumerate() {
            assert!((local[k].t[2] - z).abs() < 1e-12);
        }
        for k in 1..3 {
            assert!(stable_on(&objs[0].1, &local[k], &objs[0].1, &local[k - 1], None));
        }
    }

    #[test]
    fn tower_orders_by_descending_area() {
        let c = ObjectClass::from_name("book").unwrap();
        let objs = [
            (c, PrimitiveShape::Box { w: 0.05, d: 0.05, h: 0.02 }),
            (c, PrimitiveShape::Box { w: 0.15, d: 0.1, h: 0.02 }),
            (c, PrimitiveShape::Box { w: 0.1, d: 0.1, h: 0.02 }),
        ];
        assert_eq!(local_layout(StructureShape::Tower, 0.0, &objs).unwrap().0, [1, 2, 0]);
    }

    #[test]
    fn oversized_circle_is_infeasible() {
        let pan = ObjectClass::from_name("pan").unwrap();
        let objs = alloc::vec![(pan, PrimitiveShape::Disk { radius: 0.13, height: 0.05 }); 5];
        assert!(matches!(local_layout(StructureShape::Circle, 0.1, &objs), Err(Error::Infeasible(_))));
    }

    #[test]
    fn generated_circles_are_equidistant() {
        let mut rng = crate::rng::rng_from_seed(3);
        let table = TableBounds::default();
        let mut built = 0;
        for n in 1..=7 {
            for size in SizeClass::ALL {
                let params = StructureParams {
                    shape: StructureShape::Circle,
                    size: *size,
                    hpos: HPos::Center,
                    vpos: VPos::Middle,
                    rotation: Heading::ALL[n % 4],
                };
                let objs = point_like(n);
                let (lo, hi) = size_range(StructureShape::Circle, *size);
                let r = rng.random_range(lo..hi);
                let (order, local) = local_layout(StructureShape::Circle, r, &objs).unwrap();
                let position = sample_position(&params, &objs, &order, &local, &table, &mut rng).unwrap();
                let spec = StructureSpec { params, size_value: r, position };
                let s = synthesize_structure(&spec, &objs, &table).unwrap();
                for g in &s.goals {
                    let d = distance([g.t[0], g.t[1], 0.0], [position[0], position[1], 0.0]);
                    assert!((d - r).abs() < 1e-9);
                }
                built += 1;
            }
        }
        assert_eq!(built, 21);
    }
}
