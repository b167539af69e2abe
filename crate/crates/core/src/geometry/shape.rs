use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::pose::{dot, mat_vec, Pose, Vec3};
use crate::math;
use crate::rng::Rng;
use crate::{Error, Result};

pub const MIN_EXTENT: f64 = 0.005;
pub const MAX_EXTENT: f64 = 0.5;

/// Direction from the scene toward the fixed virtual camera.
pub const CAMERA_DIR: Vec3 = [-core::f64::consts::FRAC_1_SQRT_2, 0.0, core::f64::consts::FRAC_1_SQRT_2];

/// Parametric object geometry, centered on its pose origin. Extents in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrimitiveShape {
    Box { w: f64, d: f64, h: f64 },
    Cylinder { radius: f64, height: f64 },
    Disk { radius: f64, height: f64 },
}

impl PrimitiveShape {
    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x > MIN_EXTENT && x < MAX_EXTENT;
        let fine = match *self {
            PrimitiveShape::Box { w, d, h } => ok(w) && ok(d) && ok(h),
            PrimitiveShape::Cylinder { radius, height } | PrimitiveShape::Disk { radius, height } => {
                ok(radius) && ok(height)
            }
        };
        if fine {
            Ok(())
        } else {
            Err(Error::Config(alloc::format!("shape extents out of range: {self:?}")))
        }
    }

    pub fn height(&self) -> f64 {
        match *self {
            PrimitiveShape::Box { h, .. } => h,
            PrimitiveShape::Cylinder { height, .. } | PrimitiveShape::Disk { height, .. } => height,
        }
    }

    pub fn footprint_area(&self) -> f64 {
        match *self {
            PrimitiveShape::Box { w, d, .. } => w * d,
            PrimitiveShape::Cylinder { radius, .. } | PrimitiveShape::Disk { radius, .. } => {
                core::f64::consts::PI * radius * radius
            }
        }
    }

    /// Footprint area times height.
    pub fn volume(&self) -> f64 {
        self.footprint_area() * self.height()
    }

    /// Half extents of the local axis-aligned bounding box.
    pub fn half_extents(&self) -> Vec3 {
        match *self {
            PrimitiveShape::Box { w, d, h } => [w / 2.0, d / 2.0, h / 2.0],
            PrimitiveShape::Cylinder { radius, height } | PrimitiveShape::Disk { radius, height } => {
                [radius, radius, height / 2.0]
            }
        }
    }

    /// Largest horizontal distance from the center to the footprint boundary.
    pub fn footprint_radius(&self) -> f64 {
        match *self {
            PrimitiveShape::Box { w, d, .. } => math::sqrt(w * w + d * d) / 2.0,
            PrimitiveShape::Cylinder { radius, .. } | PrimitiveShape::Disk { radius, .. } => radius,
        }
    }

    /// True when the shape looks the same under any rotation about z.
    pub fn is_round(&self) -> bool {
        !matches!(self, PrimitiveShape::Box { .. })
    }

    pub fn surface_area(&self) -> f64 {
        match *self {
            PrimitiveShape::Box { w, d, h } => 2.0 * (w * d + w * h + d * h),
            PrimitiveShape::Cylinder { radius, height } | PrimitiveShape::Disk { radius, height } => {
                2.0 * core::f64::consts::PI * radius * (radius + height)
            }
        }
    }
}

/// Segment-labelled points in the world frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub segment_ids: Vec<u32>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() || self.points.len() != self.segment_ids.len() {
            return Err(Error::Shape("point cloud needs ≥1 point and one segment id per point".into()));
        }
        if self.points.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("point cloud".into()));
        }
        Ok(())
    }

    pub fn centroid(&self) -> Vec3 {
        let n = self.points.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p[k] / n;
            }
        }
        c
    }

    /// Rigidly moves every point by `delta` (left-multiplied world transform).
    pub fn transformed(&self, delta: &Pose) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|&p| delta.apply(p)).collect(),
            segment_ids: self.segment_ids.clone(),
        }
    }
}

/// Surface patch in the shape's local frame.
#[derive(Clone, Copy)]
enum Face {
    Rect { origin: Vec3, u: Vec3, v: Vec3, normal: Vec3 },
    Disk { center: Vec3, radius: f64, normal: Vec3 },
    Side { radius: f64, height: f64 },
}

impl Face {
    fn area(&self) -> f64 {
        match *self {
            Face::Rect { u, v, .. } => math::sqrt(dot(u, u)) * math::sqrt(dot(v, v)),
            Face::Disk { radius, .. } => core::f64::consts::PI * radius * radius,
            Face::Side { radius, height } => 2.0 * core::f64::consts::PI * radius * height,
        }
    }

    /// Maps unit-square coordinates to a local point and outward normal,
    /// preserving uniform area density.
    fn point(&self, s: f64, t: f64) -> (Vec3, Vec3) {
        match *self {
            Face::Rect { origin, u, v, normal } => {
                ([origin[0] + s * u[0] + t * v[0], origin[1] + s * u[1] + t * v[1], origin[2] + s * u[2] + t * v[2]], normal)
            }
            Face::Disk { center, radius, normal } => {
                let r = radius * math::sqrt(s);
                let a = 2.0 * core::f64::consts::PI * t;
                ([center[0] + r * math::cos(a), center[1] + r * math::sin(a), center[2]], normal)
            }
            Face::Side { radius, height } => {
                let a = 2.0 * core::f64::consts::PI * s;
                let (c, sn) = (math::cos(a), math::sin(a));
                ([radius * c, radius * sn, -height / 2.0 + t * height], [c, sn, 0.0])
            }
        }
    }
}

fn faces(shape: &PrimitiveShape) -> Vec<Face> {
    match *shape {
        PrimitiveShape::Box { w, d, h } => {
            let (x, y, z) = (w / 2.0, d / 2.0, h / 2.0);
            alloc::vec![
                Face::Rect { origin: [x, -y, -z], u: [0.0, d, 0.0], v: [0.0, 0.0, h], normal: [1.0, 0.0, 0.0] },
                Face::Rect { origin: [-x, -y, -z], u: [0.0, d, 0.0], v: [0.0, 0.0, h], normal: [-1.0, 0.0, 0.0] },
                Face::Rect { origin: [-x, y, -z], u: [w, 0.0, 0.0], v: [0.0, 0.0, h], normal: [0.0, 1.0, 0.0] },
                Face::Rect { origin: [-x, -y, -z], u: [w, 0.0, 0.0], v: [0.0, 0.0, h], normal: [0.0, -1.0, 0.0] },
                Face::Rect { origin: [-x, -y, z], u: [w, 0.0, 0.0], v: [0.0, d, 0.0], normal: [0.0, 0.0, 1.0] },
                Face::Rect { origin: [-x, -y, -z], u: [w, 0.0, 0.0], v: [0.0, d, 0.0], normal: [0.0, 0.0, -1.0] },
            ]
        }
        PrimitiveShape::Cylinder { radius, height } | PrimitiveShape::Disk { radius, height } => alloc::vec![
            Face::Disk { center: [0.0, 0.0, height / 2.0], radius, normal: [0.0, 0.0, 1.0] },
            Face::Disk { center: [0.0, 0.0, -height / 2.0], radius, normal: [0.0, 0.0, -1.0] },
            Face::Side { radius, height },
        ],
    }
}

/// Splits `n` samples over faces proportionally to area (largest remainder).
fn allocate(areas: &[f64], n: usize) -> Vec<usize> {
    let total: f64 = areas.iter().sum();
    let quotas: Vec<f64> = areas.iter().map(|a| a / total * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| math::floor(*q) as usize).collect();
    let mut rest = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..areas.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - counts[a] as f64;
        let fb = quotas[b] - counts[b] as f64;
        fb.partial_cmp(&fa).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    counts
}

/// Latin-hypercube samples of the unit square.
fn latin_square(k: usize, rng: &mut Rng) -> Vec<(f64, f64)> {
    let mut ps: Vec<usize> = (0..k).collect();
    let mut pt: Vec<usize> = (0..k).collect();
    ps.shuffle(rng);
    pt.shuffle(rng);
    (0..k)
        .map(|i| {
            let s = (ps[i] as f64 + rng.random::<f64>()) / k as f64;
            let t = (pt[i] as f64 + rng.random::<f64>()) / k as f64;
            (s, t)
        })
        .collect()
}

/// Samples `n` points uniformly over the shape's surface, then moves them
/// by `pose`. Sampling is stratified: faces receive area-proportional
/// counts and each face is covered by a Latin hypercube.
///
/// With `partial_view`, points whose outward normal does not face
/// [`CAMERA_DIR`] are culled; if fewer than 8 survive, more visible
/// points are drawn until 8 are available.
pub fn sample_surface(
    shape: &PrimitiveShape,
    pose: &Pose,
    n: usize,
    partial_view: bool,
    segment_id: u32,
    rng: &mut Rng,
) -> Result<PointCloud> {
    if n < 8 {
        return Err(Error::Config(alloc::format!("need at least 8 surface samples, got {n}")));
    }
    let fs = faces(shape);
    let areas: Vec<f64> = fs.iter().map(Face::area).collect();
    let counts = allocate(&areas, n);
    let mut points = Vec::with_capacity(n);
    for (face, &k) in fs.iter().zip(&counts) {
        if k == 0 {
            continue;
        }
        for (s, t) in latin_square(k, rng) {
            let (p, nrm) = face.point(s, t);
            let world_n = mat_vec(&pose.r, nrm);
            if partial_view && dot(world_n, CAMERA_DIR) <= 0.0 {
                continue;
            }
            points.push(pose.apply(p));
        }
    }
    if partial_view && points.len() < 8 {
        let total: f64 = areas.iter().sum();
        let mut guard = 0;
        while points.len() < 8 && guard < 100_000 {
            guard += 1;
            let mut pick = rng.random::<f64>() * total;
            let mut face = fs[fs.len() - 1];
            for (f, a) in fs.iter().zip(&areas) {
                if pick < *a {
                    face = *f;
                    break;
                }
                pick -= a;
            }
            let (p, nrm) = face.point(rng.random(), rng.random());
            if dot(mat_vec(&pose.r, nrm), CAMERA_DIR) > 0.0 {
                points.push(pose.apply(p));
            }
        }
    }
    let segment_ids = alloc::vec![segment_id; points.len()];
    Ok(PointCloud { points, segment_ids })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn box_samples_stay_on_bounds() {
        let mut rng = rng_from_seed(1);
        let shape = PrimitiveShape::Box { w: 0.4, d: 0.4, h: 0.4 };
        let pc = sample_surface(&shape, &Pose::identity(), 256, false, 0, &mut rng).unwrap();
        assert_eq!(pc.len(), 256);
        for p in &pc.points {
            assert!(p.iter().all(|c| c.abs() <= 0.2 + 1e-12));
            // On the surface: at least one coordinate at the boundary.
            assert!(p.iter().any(|c| (c.abs() - 0.2).abs() < 1e-12));
        }
    }

    #[test]
    fn partial_view_culls() {
        let mut rng = rng_from_seed(2);
        let shape = PrimitiveShape::Box { w: 0.1, d: 0.2, h: 0.3 };
        let full = sample_surface(&shape, &Pose::identity(), 64, false, 3, &mut rng).unwrap();
        let part = sample_surface(&shape, &Pose::identity(), 64, true, 3, &mut rng).unwrap();
        assert!(part.len() < full.len());
        assert!(part.len() >= 8);
        assert!(part.segment_ids.iter().all(|&s| s == 3));
    }

    #[test]
    fn rejects_tiny_counts() {
        let mut rng = rng_from_seed(2);
        let shape = PrimitiveShape::Disk { radius: 0.1, height: 0.02 };
        assert!(sample_surface(&shape, &Pose::identity(), 7, false, 0, &mut rng).is_err());
    }

    #[test]
    fn allocation_sums() {
        assert_eq!(allocate(&[1.0, 1.0, 1.0], 10).iter().sum::<usize>(), 10);
        assert_eq!(allocate(&[3.0, 1.0], 8), alloc::vec![6, 2]);
    }
}
