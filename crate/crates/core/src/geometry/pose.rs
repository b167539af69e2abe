use serde::{Deserialize, Serialize};

use rand::Rng as _;

use crate::math;
use crate::rng::Rng;
use crate::{Error, Result};

pub type Vec3 = [f64; 3];
/// Row-major 3×3 matrix.
pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Tolerance for accepting a matrix as a rotation.
pub const ROTATION_TOL: f64 = 1e-9;
/// Norm/collinearity threshold below which a 6D rotation is degenerate.
pub const ROT6D_DEGENERATE: f64 = 1e-8;

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn norm(a: Vec3) -> f64 {
    math::sqrt(dot(a, a))
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn distance(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn mat_vec(a: &Mat3, v: Vec3) -> Vec3 {
    [dot(a[0], v), dot(a[1], v), dot(a[2], v)]
}

pub fn transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub fn det(a: &Mat3) -> f64 {
    dot(a[0], cross(a[1], a[2]))
}

pub fn column(a: &Mat3, j: usize) -> Vec3 {
    [a[0][j], a[1][j], a[2][j]]
}

pub fn from_columns(c0: Vec3, c1: Vec3, c2: Vec3) -> Mat3 {
    [[c0[0], c1[0], c2[0]], [c0[1], c1[1], c2[1]], [c0[2], c1[2], c2[2]]]
}

pub fn frobenius_diff(a: &Mat3, b: &Mat3) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += (a[i][j] - b[i][j]) * (a[i][j] - b[i][j]);
        }
    }
    math::sqrt(s)
}

/// Rotation about +z by `yaw` radians.
pub fn rot_z(yaw: f64) -> Mat3 {
    let (s, c) = (math::sin(yaw), math::cos(yaw));
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

/// Heading of the rotated x-axis in the ground plane.
pub fn yaw_of(r: &Mat3) -> f64 {
    math::atan2(r[1][0], r[0][0])
}

/// True when `r` only rotates about the vertical axis.
pub fn is_yaw_only(r: &Mat3) -> bool {
    (r[2][2] - 1.0).abs() < 1e-9
}

/// Checks `RᵀR = I` and `det R = +1` within `tol`.
pub fn check_rotation(r: &Mat3, tol: f64) -> Result<()> {
    if r.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::InvalidRotation("non-finite entry".into()));
    }
    let rtr = mat_mul(&transpose(r), r);
    let err = frobenius_diff(&rtr, &IDENTITY);
    if err > tol {
        return Err(Error::InvalidRotation(alloc::format!("|RᵀR − I| = {err:e}")));
    }
    let d = det(r);
    if (d - 1.0).abs() > tol {
        return Err(Error::InvalidRotation(alloc::format!("det = {d}")));
    }
    Ok(())
}

/// Geodesic angle between two rotations, in degrees, in `[0, 180]`.
///
/// Computed as `atan2(|w|, (tr(R1ᵀR2) − 1)/2)` with `w` the axial vector
/// of the relative rotation, which equals the clamped-arccos form but stays
/// accurate near 0° and 180°.
pub fn geodesic_deg(r1: &Mat3, r2: &Mat3) -> f64 {
    let m = mat_mul(&transpose(r1), r2);
    let c = ((m[0][0] + m[1][1] + m[2][2] - 1.0) / 2.0).clamp(-1.0, 1.0);
    let w = [(m[2][1] - m[1][2]) / 2.0, (m[0][2] - m[2][0]) / 2.0, (m[1][0] - m[0][1]) / 2.0];
    let s = norm(w).min(1.0);
    math::atan2(s, c).to_degrees()
}

/// Rigid transform: `x ↦ R·x + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub t: Vec3,
    pub r: Mat3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self { t: [0.0; 3], r: IDENTITY }
    }

    pub fn new(t: Vec3, r: Mat3) -> Self {
        Self { t, r }
    }

    pub fn translation(t: Vec3) -> Self {
        Self { t, r: IDENTITY }
    }

    /// Pose at `t` with heading `yaw` about +z.
    pub fn from_yaw(t: Vec3, yaw: f64) -> Self {
        Self { t, r: rot_z(yaw) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidRotation("non-finite translation".into()));
        }
        check_rotation(&self.r, ROTATION_TOL)
    }

    pub fn apply(&self, x: Vec3) -> Vec3 {
        add(mat_vec(&self.r, x), self.t)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose { t: self.apply(other.t), r: mat_mul(&self.r, &other.r) }
    }

    pub fn inverse(&self) -> Pose {
        let rt = transpose(&self.r);
        Pose { t: scale(mat_vec(&rt, self.t), -1.0), r: rt }
    }

    pub fn yaw(&self) -> f64 {
        yaw_of(&self.r)
    }
}

pub fn compose(p1: &Pose, p2: &Pose) -> Pose {
    p1.compose(p2)
}

pub fn apply(p: &Pose, x: Vec3) -> Vec3 {
    p.apply(x)
}

/// Continuous 6D rotation: two unnormalized 3-vectors orthonormalized
/// into the first two columns of a rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rot6D {
    pub a: Vec3,
    pub b: Vec3,
}

impl Rot6D {
    pub fn new(a: Vec3, b: Vec3) -> Self {
        Self { a, b }
    }

    pub fn identity() -> Self {
        Self { a: [1.0, 0.0, 0.0], b: [0.0, 1.0, 0.0] }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.a[0], self.a[1], self.a[2], self.b[0], self.b[1], self.b[2]]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self { a: [v[0], v[1], v[2]], b: [v[3], v[4], v[5]] }
    }

    pub fn to_matrix(&self) -> Result<Mat3> {
        rot6d_to_matrix(self)
    }
}

/// Gram–Schmidt: `c1 = a/|a|`, `c2 = normalize(b − (b·c1)c1)`, `c3 = c1 × c2`.
///
/// The projection is applied twice so the columns stay orthogonal to
/// round-off even when `a` and `b` are nearly parallel.
pub fn rot6d_to_matrix(r: &Rot6D) -> Result<Mat3> {
    if r.a.iter().chain(r.b.iter()).any(|x| !x.is_finite()) {
        return Err(Error::DegenerateRotation("non-finite component"));
    }
    let na = norm(r.a);
    if na <= ROT6D_DEGENERATE {
        return Err(Error::DegenerateRotation("first vector has near-zero norm"));
    }
    let c1 = scale(r.a, 1.0 / na);
    let nb = norm(r.b);
    let mut c2 = sub(r.b, scale(c1, dot(r.b, c1)));
    let n2 = norm(c2);
    if nb <= ROT6D_DEGENERATE || n2 <= ROT6D_DEGENERATE * nb {
        return Err(Error::DegenerateRotation("vectors are nearly parallel"));
    }
    c2 = scale(c2, 1.0 / n2);
    c2 = sub(c2, scale(c1, dot(c2, c1)));
    c2 = scale(c2, 1.0 / norm(c2));
    let c3 = cross(c1, c2);
    Ok(from_columns(c1, c2, c3))
}

/// First two columns of a valid rotation.
pub fn matrix_to_rot6d(r: &Mat3) -> Result<Rot6D> {
    check_rotation(r, 1e-6)?;
    Ok(Rot6D { a: column(r, 0), b: column(r, 1) })
}

/// Re-orthonormalizes a nearly valid rotation through its 6D form.
pub fn orthonormalize(r: &Mat3) -> Result<Mat3> {
    rot6d_to_matrix(&Rot6D { a: column(r, 0), b: column(r, 1) })
}

/// Uniformly distributed rotation (Shoemake's unit-quaternion method).
pub fn random_rotation(rng: &mut Rng) -> Mat3 {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random::<f64>() * 2.0 * core::f64::consts::PI;
    let u3: f64 = rng.random::<f64>() * 2.0 * core::f64::consts::PI;
    let (a, b) = (math::sqrt(1.0 - u1), math::sqrt(u1));
    let (w, x, y, z) = (a * math::sin(u2), a * math::cos(u2), b * math::sin(u3), b * math::cos(u3));
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn close(a: &Mat3, b: &Mat3, tol: f64) -> bool {
        frobenius_diff(a, b) < tol
    }

    #[test]
    fn gram_schmidt_examples() {
        let m = rot6d_to_matrix(&Rot6D::new([1.0, 0.0, 0.0], [0.0, 1.0, 0.0])).unwrap();
        assert!(close(&m, &IDENTITY, 1e-15));
        let m = rot6d_to_matrix(&Rot6D::new([2.0, 0.0, 0.0], [1.0, 1.0, 0.0])).unwrap();
        assert!(close(&m, &IDENTITY, 1e-15));
        let m = rot6d_to_matrix(&Rot6D::new([0.0, 2.0, 0.0], [0.0, 0.0, 3.0])).unwrap();
        assert_eq!(column(&m, 0), [0.0, 1.0, 0.0]);
        assert_eq!(column(&m, 1), [0.0, 0.0, 1.0]);
        assert_eq!(column(&m, 2), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(matches!(
            rot6d_to_matrix(&Rot6D::new([1e-9, 0.0, 0.0], [0.0, 1.0, 0.0])),
            Err(Error::DegenerateRotation(_))
        ));
        assert!(matches!(
            rot6d_to_matrix(&Rot6D::new([1.0, 0.0, 0.0], [2.0, 1e-10, 0.0])),
            Err(Error::DegenerateRotation(_))
        ));
        // Just above the collinearity threshold still yields a rotation.
        let m = rot6d_to_matrix(&Rot6D::new([1.0, 0.0, 0.0], [1.0, 2e-8, 0.0])).unwrap();
        check_rotation(&m, 1e-9).unwrap();
    }

    #[test]
    fn rot6d_of_quarter_turn() {
        let r = matrix_to_rot6d(&rot_z(core::f64::consts::FRAC_PI_2)).unwrap();
        for (x, y) in r.a.iter().zip([0.0, 1.0, 0.0]) {
            assert!((x - y).abs() < 1e-15);
        }
        for (x, y) in r.b.iter().zip([-1.0, 0.0, 0.0]) {
            assert!((x - y).abs() < 1e-15);
        }
        let id = matrix_to_rot6d(&IDENTITY).unwrap();
        assert_eq!(id, Rot6D::identity());
        assert!(matrix_to_rot6d(&[[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).is_err());
    }

    #[test]
    fn geodesic_examples() {
        assert_eq!(geodesic_deg(&IDENTITY, &IDENTITY), 0.0);
        assert!((geodesic_deg(&IDENTITY, &rot_z(core::f64::consts::FRAC_PI_2)) - 90.0).abs() < 1e-12);
        assert!((geodesic_deg(&IDENTITY, &rot_z(core::f64::consts::PI)) - 180.0).abs() < 1e-12);
    }

    #[test]
    fn compose_and_inverse() {
        let mut rng = rng_from_seed(3);
        let p = Pose::new([0.3, -0.2, 0.1], random_rotation(&mut rng));
        let id = p.compose(&p.inverse());
        assert!(close(&id.r, &IDENTITY, 1e-12));
        assert!(norm(id.t) < 1e-12);
        assert_eq!(Pose::identity().compose(&p), p);
        assert_eq!(Pose::translation([1.0, 2.0, 3.0]).apply([0.0; 3]), [1.0, 2.0, 3.0]);
    }
}
