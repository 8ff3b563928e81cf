//! Gravity recovery between prediction and update. The magnetometer pins the
//! orientation to a one-parameter rotation family; intersecting that family
//! with the surface constraint leaves at most two candidate rotations, and
//! the one nearest the prediction supplies the gravity vector substituted
//! for the raw accelerometer in the update. Includes the measurement
//! reversal harness and the detection heuristic for noisy streams.

use thiserror::Error;

use crate::linalg::Vec3;
use crate::mekf::{
    predict, update, FilterError, FilterState, NoiseMatrices, ReferenceVectors, ResidualMode,
    TransitionModel,
};
use crate::rotcore::{geodesic_distance, UnitQuaternion};
use crate::scalar::Real;
use crate::sensors::ImuSample;

/// Residual bound met by candidates returned from the constraint solver;
/// also scales the detection capture region. About `1e-9` at double
/// precision, tightening with the mantissa.
pub fn solver_tolerance<T: Real>() -> T {
    T::exp2i(-(T::mantissa_bits() as i32 * 4 / 7))
}

/// Scalar target the surface constraint solves for.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ConstraintForm {
    /// The recovered global acceleration is tangent to the surface beyond
    /// gravity: `c = ⟨g, n̂⟩`. Independent of position and velocity.
    #[default]
    Tangency,
    /// Literal kinematic expression
    /// `⟨p − p₀ + v·dt − g·dt² + R⁻¹A, n̂⟩ = 0`, mixed units as written.
    Literal,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SurfaceError {
    #[error("surface normal must be nonzero")]
    DegenerateNormal,
    #[error("reference vectors must be nonzero")]
    DegenerateReference,
    #[error("reference field is collinear with the surface normal")]
    FieldAlongNormal,
}

/// Planar surface the motion is constrained to, with the global reference
/// vectors used to interpret the sensors.
#[derive(Clone, Debug)]
pub struct SurfaceModel<T> {
    /// Unit normal, global frame.
    pub normal: Vec3<T>,
    /// A point on the surface, m.
    pub point: Vec3<T>,
    /// Global gravity and field references.
    pub refs: ReferenceVectors<T>,
    pub form: ConstraintForm,
}

impl<T: Real> SurfaceModel<T> {
    /// Normalizes the normal and rejects degenerate geometry: both reference
    /// vectors must be nonzero and the field must not be collinear with the
    /// normal.
    pub fn new(
        normal: Vec3<T>,
        point: Vec3<T>,
        refs: ReferenceVectors<T>,
    ) -> Result<Self, SurfaceError> {
        let n = normal.normalized().ok_or(SurfaceError::DegenerateNormal)?;
        let b = refs
            .field
            .normalized()
            .ok_or(SurfaceError::DegenerateReference)?;
        refs.gravity
            .normalized()
            .ok_or(SurfaceError::DegenerateReference)?;
        if b.dot(&n).abs() >= T::from(1.0 - 1e-9) {
            return Err(SurfaceError::FieldAlongNormal);
        }
        Ok(Self {
            normal: n,
            point,
            refs,
            form: ConstraintForm::Tangency,
        })
    }

    /// Horizontal surface through the origin.
    pub fn horizontal(refs: ReferenceVectors<T>) -> Result<Self, SurfaceError> {
        Self::new(Vec3::from_f64s(0.0, 0.0, 1.0), Vec3::zeros(), refs)
    }
}

/// Position, velocity, and step length entering the literal constraint form.
#[derive(Clone, Debug)]
pub struct Kinematics<T> {
    pub p: Vec3<T>,
    pub v: Vec3<T>,
    pub dt: T,
}

impl<T: Real> Kinematics<T> {
    pub fn at_rest(dt: T) -> Self {
        Self {
            p: Vec3::zeros(),
            v: Vec3::zeros(),
            dt,
        }
    }
}

/// One-parameter family `R(θ) = Rot(axis, θ)·base` of all rotations taking
/// the reference field direction to the measured one.
#[derive(Clone, Debug)]
pub struct RotationFamily<T> {
    /// Unit rotation axis: the measured field direction.
    pub axis: Vec3<T>,
    /// Minimal rotation with `base·b̂ = M̂`.
    pub base: UnitQuaternion<T>,
    /// The inputs were antiparallel, so the base axis was ambiguous; an
    /// arbitrary axis perpendicular to `b̂` was used.
    pub antiparallel: bool,
}

impl<T: Real> RotationFamily<T> {
    /// Family member at angle `theta`.
    pub fn at(&self, theta: &T) -> UnitQuaternion<T> {
        if theta.is_zero() {
            return self.base.clone();
        }
        UnitQuaternion::exp(&self.axis.scale(theta)).mul(&self.base)
    }

    /// Angle of a member rotation in `[0, 2π)`. Meaningful only for
    /// rotations that belong to the family.
    pub fn angle_of(&self, r: &UnitQuaternion<T>) -> T {
        let v = r.mul(&self.base.inverse()).log();
        wrap_angle(self.axis.dot(&v))
    }
}

/// Builds the family `{R : R·b̂ = M̂}`. Both inputs must be nonzero.
pub fn rotation_family<T: Real>(b: &Vec3<T>, m: &Vec3<T>) -> RotationFamily<T> {
    let bu = b.normalized().expect("field reference must be nonzero");
    let mu = m.normalized().expect("field measurement must be nonzero");
    let d = bu.dot(&mu);
    if d <= T::from(-1.0 + 1e-12) {
        let axis = perpendicular(&bu);
        return RotationFamily {
            axis: mu,
            base: UnitQuaternion::exp(&axis.scale(&T::pi())),
            antiparallel: true,
        };
    }
    let c = bu.cross(&mu);
    let base = match c.normalized() {
        Some(u) => UnitQuaternion::exp(&u.scale(&c.norm().atan2(&d))),
        None => UnitQuaternion::identity(),
    };
    RotationFamily {
        axis: mu,
        base,
        antiparallel: false,
    }
}

/// Unit vector perpendicular to `u`: cross with the least-aligned
/// coordinate axis.
fn perpendicular<T: Real>(u: &Vec3<T>) -> Vec3<T> {
    let (ax, ay, az) = (u.x.abs(), u.y.abs(), u.z.abs());
    let e = if ax <= ay && ax <= az {
        Vec3::from_f64s(1.0, 0.0, 0.0)
    } else if ay <= az {
        Vec3::from_f64s(0.0, 1.0, 0.0)
    } else {
        Vec3::from_f64s(0.0, 0.0, 1.0)
    };
    u.cross(&e)
        .normalized()
        .expect("cross with least-aligned axis is nonzero")
}

fn wrap_angle<T: Real>(theta: T) -> T {
    let two_pi = T::pi() + T::pi();
    let mut t = theta;
    if t < T::zero() {
        t = t + two_pi.clone();
    }
    if t >= two_pi {
        t = t - two_pi;
    }
    t
}

/// Target normal component `c` in `⟨R(θ)⁻¹·A, n̂⟩ = c`.
pub fn constraint_target<T: Real>(surface: &SurfaceModel<T>, kin: &Kinematics<T>) -> T {
    let n = &surface.normal;
    match surface.form {
        ConstraintForm::Tangency => surface.refs.gravity.dot(n),
        ConstraintForm::Literal => {
            let rel = &kin.p - &surface.point;
            surface.refs.gravity.dot(n) * kin.dt.clone() * kin.dt.clone()
                - rel.dot(n)
                - kin.v.dot(n) * kin.dt.clone()
        }
    }
}

/// Coefficients of `⟨R(θ)⁻¹·A, d⟩ = d₀ + a·cosθ + b·sinθ`, obtained by
/// splitting `w = base·d` about the family axis.
fn sinusoid_coefficients<T: Real>(
    family: &RotationFamily<T>,
    accel: &Vec3<T>,
    direction: &Vec3<T>,
) -> (T, T, T) {
    let w = family.base.rotate(direction);
    let axis = &family.axis;
    let w_par = axis.scale(&w.dot(axis));
    let w_perp = &w - &w_par;
    let d0 = accel.dot(&w_par);
    let a = accel.dot(&w_perp);
    let b = accel.dot(&axis.cross(&w_perp));
    (d0, a, b)
}

/// Solves `⟨R(θ)⁻¹·A, n̂⟩ = c` over the family in closed form. Returns 0–2
/// angles in `[0, 2π)`, ascending; a tangency yields one angle.
///
/// The root split is taken from the discriminant `a² + b² − d²` rather than
/// `acos(d/r)`: when the discriminant sits inside its own rounding band the
/// double root collapses to the well-conditioned tangency angle instead of
/// two spurious roots √ulp apart. Motion tangent to the surface lives
/// exactly on that tangency, so this is the solver's main operating point.
pub fn solve_surface_constraint<T: Real>(
    family: &RotationFamily<T>,
    accel: &Vec3<T>,
    surface: &SurfaceModel<T>,
    kin: &Kinematics<T>,
) -> Vec<T> {
    let c = constraint_target(surface, kin);
    solve_direction_constraint(family, accel, &surface.normal, &c)
}

/// Solves `⟨R(θ)⁻¹·A, d̂⟩ = c` for an arbitrary direction and target; the
/// surface solver and the depth-constrained variant both reduce to this.
pub fn solve_direction_constraint<T: Real>(
    family: &RotationFamily<T>,
    accel: &Vec3<T>,
    direction: &Vec3<T>,
    c: &T,
) -> Vec<T> {
    let (d0, a, b) = sinusoid_coefficients(family, accel, direction);
    let d = c.clone() - d0;
    let r2 = a.clone() * a.clone() + b.clone() * b.clone();
    if r2.is_zero() {
        // The constraint is θ-independent: every member solves it or none
        // does. Two representatives stand in for the full family.
        return if d.is_zero() {
            vec![T::zero(), T::pi()]
        } else {
            vec![]
        };
    }
    let disc = r2.clone() - d.clone() * d.clone();
    let band = T::exp2i(5) * T::ulp() * (r2 + d.clone() * d.clone());
    let phi = b.atan2(&a);
    if disc < -band.clone() {
        return vec![];
    }
    if disc <= band {
        let root = if d < T::zero() { phi + T::pi() } else { phi };
        return vec![wrap_angle(root)];
    }
    let delta = disc.sqrt().atan2(&d);
    let mut out = vec![
        wrap_angle(phi.clone() - delta.clone()),
        wrap_angle(phi + delta),
    ];
    out.sort_by(|x, y| x.partial_cmp(y).expect("angles are finite"));
    out
}

/// Which branch produced the acceleration handed to the update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinAlgMode {
    /// A surface-consistent rotation was selected; its gravity replaces the
    /// raw accelerometer vector.
    Corrected,
    /// The constraint has no solution on the family; the raw vector passes
    /// through.
    NoIntersection,
    /// Detection only: the prediction's constraint residual is outside the
    /// capture region; the raw vector passes through.
    PredictionOutside,
    /// Detection only: the prediction sits closer to the gravity-aligned
    /// default rotation, whose gravity is returned instead.
    DefaultKept,
}

/// Result of the gravity-recovery stage.
#[derive(Clone, Debug)]
pub struct LinAlgOutcome<T> {
    pub mode: LinAlgMode,
    /// Acceleration handed to the update, body frame.
    pub a_g: Vec3<T>,
    /// Selected rotation, mapping global reference vectors to body
    /// measurements (`R_sel·b̂ = M̂`). On pass-through branches this is the
    /// prediction expressed in the same direction.
    pub r_sel: UnitQuaternion<T>,
    /// Up to two `(θ, geodesic distance to the prediction)` pairs.
    pub candidates: Vec<(T, T)>,
}

impl<T: Real> LinAlgOutcome<T> {
    /// Geodesic distance from the prediction to the nearest candidate: the
    /// size of the applied correction. `None` on pass-through branches.
    pub fn correction_angle(&self) -> Option<T> {
        if self.mode != LinAlgMode::Corrected {
            return None;
        }
        self.candidates
            .iter()
            .map(|(_, d)| d.clone())
            .reduce(|x, y| x.minimum(&y))
    }
}

/// Recovers the body-frame gravity vector consistent with the magnetometer
/// and the surface constraint, choosing the candidate nearest the predicted
/// orientation. Falls back to the raw accelerometer when the constraint has
/// no solution.
pub fn linalg_gravity<T: Real>(
    pred_q: &UnitQuaternion<T>,
    accel: &Vec3<T>,
    mag: &Vec3<T>,
    surface: &SurfaceModel<T>,
    kin: &Kinematics<T>,
) -> LinAlgOutcome<T> {
    if mag.normalized().is_none() {
        return pass_through(LinAlgMode::NoIntersection, accel, pred_q, vec![]);
    }
    let family = rotation_family(&surface.refs.field, mag);
    let thetas = solve_surface_constraint(&family, accel, surface, kin);
    if thetas.is_empty() {
        return pass_through(LinAlgMode::NoIntersection, accel, pred_q, vec![]);
    }
    let (candidates, best) = rank_candidates(&family, &thetas, pred_q, &surface.normal);
    let r_sel = select_member(&family, &candidates[best].0, pred_q, accel, surface, kin);
    LinAlgOutcome {
        mode: LinAlgMode::Corrected,
        a_g: r_sel.rotate(&surface.refs.gravity),
        r_sel,
        candidates,
    }
}

/// Family member handed to the update for a selected root. Root extraction
/// is ill-conditioned near the tangency (sensitivity 1/slope), so when the
/// prediction's family projection is indistinguishable from the root within
/// the solver's own evaluation noise, the projection is the better
/// estimate: it carries the accumulated state instead of one step's rounded
/// coefficients. The second-order acceptance test keeps the constraint
/// residual at rounding scale either way.
fn select_member<T: Real>(
    family: &RotationFamily<T>,
    theta_sel: &T,
    pred_q: &UnitQuaternion<T>,
    accel: &Vec3<T>,
    surface: &SurfaceModel<T>,
    kin: &Kinematics<T>,
) -> UnitQuaternion<T> {
    let c = constraint_target(surface, kin);
    select_member_toward(family, theta_sel, pred_q, accel, &surface.normal, &c)
}

pub(crate) fn select_member_toward<T: Real>(
    family: &RotationFamily<T>,
    theta_sel: &T,
    pred_q: &UnitQuaternion<T>,
    accel: &Vec3<T>,
    direction: &Vec3<T>,
    c: &T,
) -> UnitQuaternion<T> {
    let theta_pred = family.angle_of(&pred_q.inverse());
    let gap = wrap_angle(theta_pred.clone() - theta_sel.clone());
    let two_pi = T::pi() + T::pi();
    let sep = gap.clone().minimum(&(two_pi - gap));
    let (_, a, b) = sinusoid_coefficients(family, accel, direction);
    let slope = (b.clone() * theta_sel.clone().cos() - a.clone() * theta_sel.clone().sin()).abs();
    let curvature = (a.clone() * a + b.clone() * b).sqrt();
    let tol = T::exp2i(4) * T::ulp() * (accel.norm() + c.abs() + T::one());
    let drift = slope * sep.clone() + T::from(0.5) * curvature * sep.clone() * sep;
    if drift <= tol {
        family.at(&theta_pred)
    } else {
        family.at(theta_sel)
    }
}

pub(crate) fn pass_through<T: Real>(
    mode: LinAlgMode,
    accel: &Vec3<T>,
    pred_q: &UnitQuaternion<T>,
    candidates: Vec<(T, T)>,
) -> LinAlgOutcome<T> {
    LinAlgOutcome {
        mode,
        a_g: accel.clone(),
        r_sel: pred_q.inverse(),
        candidates,
    }
}

/// Distances from the prediction to each candidate. `best` is the nearest;
/// distances equal within a few ulps tie-break toward the candidate whose
/// body z-axis lifts farthest along the surface normal.
pub(crate) fn rank_candidates<T: Real>(
    family: &RotationFamily<T>,
    thetas: &[T],
    pred_q: &UnitQuaternion<T>,
    normal: &Vec3<T>,
) -> (Vec<(T, T)>, usize) {
    let mut candidates: Vec<(T, T)> = Vec::with_capacity(thetas.len());
    for theta in thetas {
        let dist = geodesic_distance(&family.at(theta).inverse(), pred_q);
        candidates.push((theta.clone(), dist));
    }
    let mut best = 0usize;
    for i in 1..candidates.len() {
        let gap = candidates[i].1.clone() - candidates[best].1.clone();
        let band =
            T::exp2i(6 - T::mantissa_bits() as i32) * (T::one() + candidates[best].1.abs());
        let better = if gap.abs() <= band {
            lift(family, &candidates[i].0, normal) > lift(family, &candidates[best].0, normal)
        } else {
            gap < T::zero()
        };
        if better {
            best = i;
        }
    }
    (candidates, best)
}

/// Component of the member orientation's body z-axis along the normal.
fn lift<T: Real>(family: &RotationFamily<T>, theta: &T, normal: &Vec3<T>) -> T {
    family
        .at(theta)
        .inverse()
        .rotate(&Vec3::from_f64s(0.0, 0.0, 1.0))
        .dot(normal)
}

/// Angle whose member best explains the accelerometer as pure gravity,
/// maximizing `⟨R(θ)⁻¹·A, g⃗⟩` over the family.
pub(crate) fn default_angle<T: Real>(
    family: &RotationFamily<T>,
    accel: &Vec3<T>,
    gravity: &Vec3<T>,
) -> T {
    let (_, a, b) = sinusoid_coefficients(family, accel, gravity);
    if a.is_zero() && b.is_zero() {
        return T::zero();
    }
    wrap_angle(b.atan2(&a))
}

/// Detection heuristic for noisy streams. The raw magnetometer is replaced
/// by the predicted body-frame field direction, so the family always
/// contains the prediction; the branch then decides between the
/// surface-consistent correction, the gravity-aligned default rotation, and
/// the raw vector.
pub fn detect_and_correct<T: Real>(
    pred_q: &UnitQuaternion<T>,
    accel: &Vec3<T>,
    _mag_raw: &Vec3<T>,
    surface: &SurfaceModel<T>,
    gamma: &T,
    kin: &Kinematics<T>,
) -> LinAlgOutcome<T> {
    assert!(*gamma >= T::one(), "gamma must be at least 1");
    let pseudo_mag = pred_q.inverse().rotate(&surface.refs.field);
    let family = rotation_family(&surface.refs.field, &pseudo_mag);
    let thetas = solve_surface_constraint(&family, accel, surface, kin);
    if thetas.is_empty() {
        return pass_through(LinAlgMode::NoIntersection, accel, pred_q, vec![]);
    }
    let (candidates, best) = rank_candidates(&family, &thetas, pred_q, &surface.normal);

    // The prediction must sit inside the capture region of the intersecting
    // set, measured by its own constraint residual.
    let c = constraint_target(surface, kin);
    let residual = (pred_q.rotate(accel).dot(&surface.normal) - c).abs();
    let capture = T::from(3.0) * solver_tolerance::<T>() * accel.norm();
    if residual >= capture {
        return pass_through(LinAlgMode::PredictionOutside, accel, pred_q, candidates);
    }

    let theta_default = default_angle(&family, accel, &surface.refs.gravity);
    let default_member = family.at(&theta_default);
    let dist_default = geodesic_distance(&default_member.inverse(), pred_q);
    let dist_closest = candidates[best].1.clone();
    if gamma.clone() * dist_closest <= dist_default {
        let r_sel = select_member(&family, &candidates[best].0, pred_q, accel, surface, kin);
        return LinAlgOutcome {
            mode: LinAlgMode::Corrected,
            a_g: r_sel.rotate(&surface.refs.gravity),
            r_sel,
            candidates,
        };
    }
    LinAlgOutcome {
        mode: LinAlgMode::DefaultKept,
        a_g: default_member.rotate(&surface.refs.gravity),
        r_sel: default_member,
        candidates,
    }
}

/// One reversible-filter step: predict, recover gravity (through the
/// detection heuristic when `gamma` is given), update with the recovered
/// vector, then advance the kinematics with the implied external
/// acceleration.
pub fn revmekf_step<T: Real>(
    state: &FilterState<T>,
    sample: &ImuSample<T>,
    dt: &T,
    surface: &SurfaceModel<T>,
    noise: &NoiseMatrices<T>,
    gamma: Option<&T>,
) -> Result<(FilterState<T>, LinAlgOutcome<T>), FilterError> {
    let (pred, _) = predict(state, &sample.omega, dt, &noise.process, TransitionModel::Exact);
    let kin = Kinematics {
        p: pred.p.clone(),
        v: pred.v.clone(),
        dt: dt.clone(),
    };
    // With the heuristic the pseudo-magnetometer replaces the raw reading in
    // the update as well, so the field rows carry no innovation.
    let (outcome, mag_used) = match gamma {
        Some(g) => (
            detect_and_correct(&pred.q_ref, &sample.accel, &sample.mag, surface, g, &kin),
            pred.q_ref.inverse().rotate(&surface.refs.field),
        ),
        None => (
            linalg_gravity(&pred.q_ref, &sample.accel, &sample.mag, surface, &kin),
            sample.mag.clone(),
        ),
    };
    let mut next = update(
        &pred,
        &outcome.a_g,
        &mag_used,
        &noise.update,
        &surface.refs,
        ResidualMode::Additive,
    )?;
    let a_ext_global = match outcome.mode {
        LinAlgMode::Corrected | LinAlgMode::DefaultKept => {
            next.q_ref.rotate(&(&sample.accel - &outcome.a_g))
        }
        LinAlgMode::NoIntersection | LinAlgMode::PredictionOutside => {
            &next.q_ref.rotate(&sample.accel) - &surface.refs.gravity
        }
    };
    next.v = &next.v + &a_ext_global.scale(dt);
    next.p = &next.p + &next.v.scale(dt);
    Ok((next, outcome))
}

/// A step's measurement as the group-plus-vector pair the reversal acts on.
/// `h` is the global-to-body orientation increment `exp(−ω·dt)`, so acting
/// with `h⁻¹` both plays the gyro backward and rotates the vector readings
/// to the step's start.
#[derive(Clone, Debug)]
pub struct Measurement<T> {
    pub h: UnitQuaternion<T>,
    pub accel: Vec3<T>,
    pub mag: Vec3<T>,
}

impl<T: Real> Measurement<T> {
    pub fn from_imu(sample: &ImuSample<T>, dt: &T) -> Self {
        Self {
            h: UnitQuaternion::exp(&(-&sample.omega).scale(dt)),
            accel: sample.accel.clone(),
            mag: sample.mag.clone(),
        }
    }

    /// Body rate over the step, recovered from the group element.
    pub fn rates(&self, dt: &T) -> Vec3<T> {
        (-&self.h.log()).scale(&(T::one() / dt.clone()))
    }

    pub fn to_imu(&self, t: T, dt: &T) -> ImuSample<T> {
        ImuSample {
            t,
            omega: self.rates(dt),
            accel: self.accel.clone(),
            mag: self.mag.clone(),
        }
    }
}

/// Left action `g * (h, w) = (g·h, g·w)` of a rotation on a measurement.
pub fn act_on_measurement<T: Real>(g: &UnitQuaternion<T>, m: &Measurement<T>) -> Measurement<T> {
    Measurement {
        h: g.mul(&m.h),
        accel: g.rotate(&m.accel),
        mag: g.rotate(&m.mag),
    }
}

/// `h⁻¹ * (Id, w)`: the measurement that plays a step backward.
pub fn reverse_measurement<T: Real>(m: &Measurement<T>) -> Measurement<T> {
    act_on_measurement(
        &m.h.inverse(),
        &Measurement {
            h: UnitQuaternion::identity(),
            accel: m.accel.clone(),
            mag: m.mag.clone(),
        },
    )
}

/// Orientation-plus-bias distance between two filter states. Position and
/// velocity integrate outside the measurement action and are not part of
/// the reversed state.
pub fn state_distance<T: Real>(a: &FilterState<T>, b: &FilterState<T>) -> T {
    geodesic_distance(&a.q_ref, &b.q_ref) + (&a.bias - &b.bias).norm()
}

/// Runs `filter` forward on `m`, then on the reversed measurement, both
/// exact and ε-perturbed, and returns the two state distances back to
/// `state`. The perturbation misaligns the reversal by a rotation of angle
/// ε about a fixed axis, acting on the whole measurement; perturbing the
/// readings off the group orbit instead would fall off the constraint set,
/// where gravity recovery responds with order √ε (the double root splits).
pub fn check_reversibility<T, F>(
    filter: &F,
    state: &FilterState<T>,
    m: &Measurement<T>,
    epsilon: &T,
) -> (T, T)
where
    T: Real,
    F: Fn(&FilterState<T>, &Measurement<T>) -> FilterState<T>,
{
    let forward = filter(state, m);
    let back = reverse_measurement(m);
    let exact = filter(&forward, &back);
    let axis = Vec3::from_f64s(0.48, -0.6, 0.64);
    let perturbed_m = act_on_measurement(&UnitQuaternion::exp(&axis.scale(epsilon)), &back);
    let perturbed = filter(&forward, &perturbed_m);
    (
        state_distance(&exact, state),
        state_distance(&perturbed, state),
    )
}
