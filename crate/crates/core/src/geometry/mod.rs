//! SE(3) poses, the continuous 6D rotation parameterization, surface
//! sampling of parametric primitives, and footprint predicates.

pub mod collision;
pub mod pose;
pub mod shape;

pub use collision::{default_margin, extent, footprint_overlap, stable_on, Extent, Footprint, CONTACT_EPS};
pub use pose::{
    apply, compose, geodesic_deg, matrix_to_rot6d, random_rotation, rot6d_to_matrix, rot_z, Mat3, Pose, Rot6D,
    Vec3, IDENTITY,
};
pub use shape::{sample_surface, PointCloud, PrimitiveShape, CAMERA_DIR};
