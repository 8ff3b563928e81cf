//! Rotation algebra: quaternions, axis-angle, exponential and logarithmic
//! maps, skew matrices.
//!
//! Conventions, pinned once for the whole crate:
//! - Quaternions are scalar-first `(w, x, y, z)` with the Hamilton product.
//! - Body rates integrate by right multiplication:
//!   `q_{k+1} = q_k · exp(ω·dt)`.
//! - [`UnitQuaternion::rotate`] is the conjugation `q (0|v) q⁻¹` and maps
//!   body-frame vectors to the global frame; predicted body-frame sensor
//!   values therefore use `q⁻¹`.
//! - `quat_log` canonicalizes to `w ≥ 0` before taking the principal branch,
//!   so rotation vectors satisfy `‖u‖ ≤ π`.

use crate::linalg::{Mat3, SMat, Vec3};
use crate::scalar::Real;

/// Axis-angle 3-vector `u = α·û` in radians.
pub type RotationVector<T> = Vec3<T>;

/// Unit quaternion, scalar-first.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitQuaternion<T> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

/// Skew-symmetric matrix `[v]ₓ` with `[v]ₓ·w = v × w`.
pub fn skew<T: Real>(v: &Vec3<T>) -> Mat3<T> {
    let o = T::zero;
    SMat([
        [o(), -v.z.clone(), v.y.clone()],
        [v.z.clone(), o(), -v.x.clone()],
        [-v.y.clone(), v.x.clone(), o()],
    ])
}

/// Rodrigues formula: `I + (sin α/α)[u]ₓ + ((1−cos α)/α²)[u]ₓ²` with
/// `α = ‖u‖`; series below the small-angle threshold.
pub fn so3_exp<T: Real>(u: &RotationVector<T>) -> Mat3<T> {
    let a2 = u.norm_sq();
    let a = a2.clone().sqrt();
    let (s, c) = if a < T::taylor_threshold() {
        // sin α/α and (1−cos α)/α² to second order.
        (
            T::one() - a2.clone() / &T::from(6.0),
            T::from(0.5) - a2 / &T::from(24.0),
        )
    } else {
        (a.sin() / &a, (T::one() - a.cos()) / &a2)
    };
    let k = skew(u);
    let k2 = k.mul(&k);
    Mat3::identity().add(&k.scale(&s)).add(&k2.scale(&c))
}

/// Left Jacobian of the exponential map:
/// `Jl(u) = I + ((1−cos α)/α²)[u]ₓ + ((α−sin α)/α³)[u]ₓ²` with `α = ‖u‖`.
/// Satisfies `so3_exp(u) = I + [u]ₓ·Jl(u)` and
/// `∫₀^t exp([w]ₓ·τ) dτ = t·Jl(w·t)`.
pub fn so3_left_jacobian<T: Real>(u: &RotationVector<T>) -> Mat3<T> {
    let a2 = u.norm_sq();
    let a = a2.clone().sqrt();
    let (c1, c2) = if a < T::taylor_threshold() {
        // (1−cos α)/α² and (α−sin α)/α³ to second order.
        (
            T::from(0.5) - a2.clone() / &T::from(24.0),
            T::one() / &T::from(6.0) - a2 / &T::from(120.0),
        )
    } else {
        let a3 = a2.clone() * &a;
        ((T::one() - a.cos()) / &a2, (a.clone() - a.sin()) / &a3)
    };
    let k = skew(u);
    let k2 = k.mul(&k);
    Mat3::identity().add(&k.scale(&c1)).add(&k2.scale(&c2))
}

impl<T: Real> UnitQuaternion<T> {
    pub fn identity() -> Self {
        UnitQuaternion {
            w: T::one(),
            x: T::zero(),
            y: T::zero(),
            z: T::zero(),
        }
    }

    /// Builds from raw components, renormalizing.
    pub fn from_components(w: T, x: T, y: T, z: T) -> Self {
        UnitQuaternion { w, x, y, z }.normalized()
    }

    pub fn from_f64s(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self::from_components(T::from(w), T::from(x), T::from(y), T::from(z))
    }

    pub fn norm(&self) -> T {
        (self.w.clone() * &self.w
            + self.x.clone() * &self.x
            + self.y.clone() * &self.y
            + self.z.clone() * &self.z)
            .sqrt()
    }

    pub fn normalized(&self) -> Self {
        let inv = T::one() / self.norm();
        UnitQuaternion {
            w: self.w.clone() * &inv,
            x: self.x.clone() * &inv,
            y: self.y.clone() * &inv,
            z: self.z.clone() * &inv,
        }
    }

    /// Hamilton product `self · rhs`, renormalized.
    pub fn mul(&self, r: &Self) -> Self {
        let (aw, ax, ay, az) = (&self.w, &self.x, &self.y, &self.z);
        let (bw, bx, by, bz) = (&r.w, &r.x, &r.y, &r.z);
        UnitQuaternion {
            w: aw.clone() * bw - ax.clone() * bx - ay.clone() * by - az.clone() * bz,
            x: aw.clone() * bx + ax.clone() * bw + ay.clone() * bz - az.clone() * by,
            y: aw.clone() * by - ax.clone() * bz + ay.clone() * bw + az.clone() * bx,
            z: aw.clone() * bz + ax.clone() * by - ay.clone() * bx + az.clone() * bw,
        }
        .normalized()
    }

    /// Inverse (conjugate, for unit quaternions).
    pub fn inverse(&self) -> Self {
        UnitQuaternion {
            w: self.w.clone(),
            x: -self.x.clone(),
            y: -self.y.clone(),
            z: -self.z.clone(),
        }
    }

    /// Flips sign so `w ≥ 0`; `q` and `−q` are the same rotation.
    pub fn canonicalized(&self) -> Self {
        if self.w < T::zero() {
            UnitQuaternion {
                w: -self.w.clone(),
                x: -self.x.clone(),
                y: -self.y.clone(),
                z: -self.z.clone(),
            }
        } else {
            self.clone()
        }
    }

    /// Exponential map: `q = (cos(α/2), sin(α/2)·û)` for `u = α·û`.
    pub fn exp(u: &RotationVector<T>) -> Self {
        let a2 = u.norm_sq();
        let a = a2.clone().sqrt();
        let half = a.clone() * &T::from(0.5);
        let (w, k) = if a < T::taylor_threshold() {
            // cos(α/2) and sin(α/2)/α to second order in α/2.
            let h2 = half.clone() * &half;
            (
                T::one() - h2.clone() * &T::from(0.5),
                T::from(0.5) * &(T::one() - h2 / &T::from(6.0)),
            )
        } else {
            (half.cos(), half.sin() / &a)
        };
        UnitQuaternion {
            w,
            x: u.x.clone() * &k,
            y: u.y.clone() * &k,
            z: u.z.clone() * &k,
        }
        .normalized()
    }

    /// Logarithmic map, principal branch: returns `u` with `‖u‖ ≤ π` and
    /// `exp(u) ≡ ±self`.
    pub fn log(&self) -> RotationVector<T> {
        let q = self.canonicalized();
        let v = Vec3::new(q.x.clone(), q.y.clone(), q.z.clone());
        let vn = v.norm();
        let scale = if vn < T::taylor_threshold() {
            // 2·atan2(‖v‖, w)/‖v‖ to second order in ‖v‖/w.
            let t2 = vn.clone() * &vn / &(q.w.clone() * &q.w);
            T::from(2.0) / &q.w * &(T::one() - t2 / &T::from(3.0))
        } else {
            let half = vn.clone().atan2(&q.w);
            T::from(2.0) * &half / &vn
        };
        v.scale(&scale)
    }

    /// Conjugation `q (0|v) q⁻¹`: rotates body-frame `v` into the global
    /// frame.
    pub fn rotate(&self, v: &Vec3<T>) -> Vec3<T> {
        let qv = Vec3::new(self.x.clone(), self.y.clone(), self.z.clone());
        let t = qv.cross(v).scale(&T::from(2.0));
        let wt = t.scale(&self.w);
        &(v + &wt) + &qv.cross(&t)
    }

    /// Rotation matrix acting like [`UnitQuaternion::rotate`].
    pub fn to_mat3(&self) -> Mat3<T> {
        let two = T::from(2.0);
        let (w, x, y, z) = (&self.w, &self.x, &self.y, &self.z);
        let one = T::one;
        SMat([
            [
                one() - two.clone() * &(y.clone() * y + z.clone() * z),
                two.clone() * &(x.clone() * y - w.clone() * z),
                two.clone() * &(x.clone() * z + w.clone() * y),
            ],
            [
                two.clone() * &(x.clone() * y + w.clone() * z),
                one() - two.clone() * &(x.clone() * x + z.clone() * z),
                two.clone() * &(y.clone() * z - w.clone() * x),
            ],
            [
                two.clone() * &(x.clone() * z - w.clone() * y),
                two.clone() * &(y.clone() * z + w.clone() * x),
                one() - two.clone() * &(x.clone() * x + y.clone() * y),
            ],
        ])
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_f64s(&self) -> [f64; 4] {
        [
            self.w.to_f64(),
            self.x.to_f64(),
            self.y.to_f64(),
            self.z.to_f64(),
        ]
    }
}

/// Rotation angle between two orientations: `‖log(a⁻¹·b)‖ ∈ [0, π]`.
pub fn geodesic_distance<T: Real>(a: &UnitQuaternion<T>, b: &UnitQuaternion<T>) -> T {
    a.inverse().mul(b).log().norm()
}
