//! Kalman filtering for orientation and position on surface-constrained
//! motion, generic over scalar precision.

pub mod eval;
pub mod linalg;
pub mod mekf;
pub mod odom;
pub mod revkf;
pub mod rotcore;
pub mod scalar;
pub mod sensors;
pub mod wide;

pub use scalar::Real;
pub use wide::Wide;

/// Double-precision aliases.
pub type Vec3d = linalg::Vec3<f64>;
pub type Mat3d = linalg::Mat3<f64>;
pub type Mat6d = linalg::Mat6<f64>;
pub type Quatd = rotcore::UnitQuaternion<f64>;

/// Extended-precision aliases (see [`wide::set_precision`]).
pub type Vec3x = linalg::Vec3<Wide>;
pub type Mat3x = linalg::Mat3<Wide>;
pub type Mat6x = linalg::Mat6<Wide>;
pub type Quatx = rotcore::UnitQuaternion<Wide>;
