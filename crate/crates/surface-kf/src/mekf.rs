//! Multiplicative extended Kalman filter on the 6-dimensional error state
//! (orientation perturbation, gyro bias).
//!
//! The reference quaternion carries the full orientation; the Kalman state is
//! the small right-multiplicative error `q_true = q_ref · exp(η)` together
//! with the gyro-bias error. The error-state mean is zero between steps:
//! every update folds the estimated perturbation back into `q_ref` and the
//! bias. Position and velocity are not part of the Kalman state; they are
//! dead-reckoned alongside from the post-update orientation.

use thiserror::Error;

use crate::linalg::{Mat3, Mat6, Vec3, Vec6};
use crate::rotcore::{skew, so3_exp, so3_left_jacobian, UnitQuaternion};
use crate::scalar::Real;
use crate::sensors::{ImuSample, TruthSample};

pub const STANDARD_GRAVITY: f64 = 9.81;

/// Filter state between steps.
#[derive(Clone, Debug)]
pub struct FilterState<T> {
    pub q_ref: UnitQuaternion<T>,
    /// Gyro bias estimate (rad·s⁻¹).
    pub bias: Vec3<T>,
    /// Error-state covariance (rows 0–2 orientation, 3–5 bias).
    pub cov: Mat6<T>,
    pub p: Vec3<T>,
    pub v: Vec3<T>,
}

impl<T: Real> FilterState<T> {
    pub fn new(q_ref: UnitQuaternion<T>, p: Vec3<T>, v: Vec3<T>, cov: Mat6<T>) -> Self {
        FilterState {
            q_ref,
            bias: Vec3::zeros(),
            cov,
            p,
            v,
        }
    }

    /// Starts the filter at a known ground-truth sample.
    pub fn from_truth(s: &TruthSample<T>, cov: Mat6<T>) -> Self {
        Self::new(s.q.clone(), s.p.clone(), s.v.clone(), cov)
    }
}

/// Process and update noise.
#[derive(Clone, Debug)]
pub struct NoiseMatrices<T> {
    pub process: Mat6<T>,
    pub update: Mat6<T>,
}

impl<T: Real> NoiseMatrices<T> {
    pub fn diagonal(process: [f64; 6], update: [f64; 6]) -> Self {
        NoiseMatrices {
            process: Mat6::diag_f64(process),
            update: Mat6::diag_f64(update),
        }
    }

    pub fn uniform(process: f64, update: f64) -> Self {
        Self::diagonal([process; 6], [update; 6])
    }
}

/// Global-frame reference directions measured by the vector sensors.
#[derive(Clone, Debug)]
pub struct ReferenceVectors<T> {
    /// Gravity vector (m·s⁻²).
    pub gravity: Vec3<T>,
    /// Magnetic field direction.
    pub field: Vec3<T>,
}

impl<T: Real> ReferenceVectors<T> {
    /// Gravity `[0, 0, 9.81]`, field `[0, 1, 0]`.
    pub fn standard() -> Self {
        ReferenceVectors {
            gravity: Vec3::from_f64s(0.0, 0.0, STANDARD_GRAVITY),
            field: Vec3::from_f64s(0.0, 1.0, 0.0),
        }
    }

    /// Unit gravity `[0, 0, 1]`, field `[0, 1, 0]`.
    pub fn unit() -> Self {
        ReferenceVectors {
            gravity: Vec3::from_f64s(0.0, 0.0, 1.0),
            field: Vec3::from_f64s(0.0, 1.0, 0.0),
        }
    }
}

/// Innovation form for the vector-measurement update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResidualMode {
    /// `y = z − ẑ`, H rows are skew matrices of the predicted directions.
    Additive,
    /// `y = ẑ × ... ` cross-product residual, H rows are projectors.
    Multiplicative,
}

/// Error-state transition matrix construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransitionModel {
    /// `Φ = I + F·dt`.
    FirstOrder,
    /// `Φ = exp(F·dt)` in closed form, for large `ω·dt`.
    Exact,
}

#[derive(Clone, Debug)]
pub struct MekfConfig<T> {
    pub noise: NoiseMatrices<T>,
    pub refs: ReferenceVectors<T>,
    pub residual: ResidualMode,
    pub transition: TransitionModel,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FilterError {
    /// Innovation covariance failed the Cholesky/condition guard; the caller
    /// may skip the update.
    #[error("innovation covariance is numerically singular")]
    SingularInnovation,
}

/// Error-state transition matrix for one step.
///
/// Continuous dynamics: `η̇ = −ω̂×η − δb`, `δḃ = 0`, so
/// `F = [[−[ω̂]ₓ, −I₃], [0, 0]]`. The exact form uses the block structure of
/// `exp(F·dt)`: top-left `exp(−[ω̂]ₓ·dt)`, top-right `−dt·Jl(−ω̂·dt)`.
pub fn transition_matrix<T: Real>(w_hat: &Vec3<T>, dt: &T, model: TransitionModel) -> Mat6<T> {
    let mut phi = Mat6::<T>::identity();
    let (tl, tr) = match model {
        TransitionModel::FirstOrder => (
            Mat3::identity().sub(&skew(w_hat).scale(dt)),
            Mat3::identity().scale(&-dt.clone()),
        ),
        TransitionModel::Exact => {
            let u = -&w_hat.scale(dt);
            (so3_exp(&u), so3_left_jacobian(&u).scale(&-dt.clone()))
        }
    };
    phi.set_block(0, 0, &tl);
    phi.set_block(0, 3, &tr);
    phi
}

/// Prediction step: integrates the reference quaternion with the
/// bias-corrected rate and propagates the covariance. Returns the new state
/// and the transition matrix used.
pub fn predict<T: Real>(
    state: &FilterState<T>,
    omega: &Vec3<T>,
    dt: &T,
    process: &Mat6<T>,
    model: TransitionModel,
) -> (FilterState<T>, Mat6<T>) {
    let w_hat = omega - &state.bias;
    let step = w_hat.scale(dt);
    let q_ref = if step.norm_sq().is_zero() {
        state.q_ref.clone()
    } else {
        state.q_ref.mul(&UnitQuaternion::exp(&step))
    };
    let phi = transition_matrix(&w_hat, dt, model);
    let cov = phi
        .mul(&state.cov)
        .mul(&phi.transpose())
        .add(process)
        .symmetrized();
    (
        FilterState {
            q_ref,
            bias: state.bias.clone(),
            cov,
            p: state.p.clone(),
            v: state.v.clone(),
        },
        phi,
    )
}

/// Measurement matrix for the additive residual: rows are
/// `[[Â]ₓ, 0; [M̂]ₓ, 0]` where `Â`, `M̂` are the predicted body-frame
/// gravity and field directions.
pub fn build_h_additive<T: Real>(
    q_ref: &UnitQuaternion<T>,
    refs: &ReferenceVectors<T>,
) -> Mat6<T> {
    let inv = q_ref.inverse();
    let mut h = Mat6::zeros();
    h.set_block(0, 0, &skew(&inv.rotate(&refs.gravity)));
    h.set_block(3, 0, &skew(&inv.rotate(&refs.field)));
    h
}

/// Measurement matrix for the multiplicative (cross-product) residual: rows
/// are the projectors `I − Â·Âᵀ` and `I − M̂·M̂ᵀ` onto the planes normal to
/// the predicted unit directions.
pub fn build_h_multiplicative<T: Real>(
    q_ref: &UnitQuaternion<T>,
    refs: &ReferenceVectors<T>,
) -> Mat6<T> {
    let inv = q_ref.inverse();
    let proj = |d: &Vec3<T>| -> Mat3<T> {
        match d.normalized() {
            Some(u) => Mat3::identity().sub(&u.outer(&u)),
            None => Mat3::zeros(),
        }
    };
    let mut h = Mat6::zeros();
    h.set_block(0, 0, &proj(&inv.rotate(&refs.gravity)));
    h.set_block(3, 0, &proj(&inv.rotate(&refs.field)));
    h
}

fn innovation<T: Real>(
    q_ref: &UnitQuaternion<T>,
    accel: &Vec3<T>,
    mag: &Vec3<T>,
    refs: &ReferenceVectors<T>,
    mode: ResidualMode,
) -> Vec6<T> {
    let inv = q_ref.inverse();
    let a_pred = inv.rotate(&refs.gravity);
    let m_pred = inv.rotate(&refs.field);
    match mode {
        ResidualMode::Additive => Vec6::from_vec3s(&(accel - &a_pred), &(mag - &m_pred)),
        ResidualMode::Multiplicative => {
            // Unit-direction cross product z × ẑ ≈ (I − ẑẑᵀ)·η; degenerate
            // (zero-norm) rows carry no information.
            let cross = |z: &Vec3<T>, pred: &Vec3<T>| match (z.normalized(), pred.normalized()) {
                (Some(zu), Some(pu)) => zu.cross(&pu),
                _ => Vec3::zeros(),
            };
            Vec6::from_vec3s(&cross(accel, &a_pred), &cross(mag, &m_pred))
        }
    }
}

/// Which measurement rows participate in the update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MeasurementRows {
    /// Gravity and field rows both active.
    #[default]
    Both,
    /// Gravity rows only: the field rows of the observation matrix and of
    /// the innovation are zeroed, so the field reading cannot steer the
    /// state or contract the covariance. The field block of the update
    /// noise only pads the innovation solve and must stay positive
    /// definite.
    AccelOnly,
}

/// Measurement update. Computes the innovation against the predicted
/// body-frame directions, solves for the Kalman gain through Cholesky, folds
/// the estimated perturbation into the reference quaternion and bias, and
/// contracts the covariance.
pub fn update<T: Real>(
    state: &FilterState<T>,
    accel: &Vec3<T>,
    mag: &Vec3<T>,
    update_noise: &Mat6<T>,
    refs: &ReferenceVectors<T>,
    mode: ResidualMode,
) -> Result<FilterState<T>, FilterError> {
    update_rows(
        state,
        accel,
        mag,
        update_noise,
        refs,
        mode,
        MeasurementRows::Both,
    )
}

/// `update` restricted to a subset of measurement rows.
pub fn update_rows<T: Real>(
    state: &FilterState<T>,
    accel: &Vec3<T>,
    mag: &Vec3<T>,
    update_noise: &Mat6<T>,
    refs: &ReferenceVectors<T>,
    mode: ResidualMode,
    rows: MeasurementRows,
) -> Result<FilterState<T>, FilterError> {
    let mut h = match mode {
        ResidualMode::Additive => build_h_additive(&state.q_ref, refs),
        ResidualMode::Multiplicative => build_h_multiplicative(&state.q_ref, refs),
    };
    let mut y = innovation(&state.q_ref, accel, mag, refs, mode);
    if rows == MeasurementRows::AccelOnly {
        for r in 3..6 {
            for c in 0..6 {
                h[(r, c)] = T::zero();
            }
            y.vset(r, T::zero());
        }
    }

    let hp = h.mul(&state.cov);
    let s = hp.mul(&h.transpose()).add(update_noise).symmetrized();
    // K = P·Hᵀ·S⁻¹, computed as Kᵀ = S⁻¹·(H·P).
    let k = s
        .spd_solve(&hp)
        .ok_or(FilterError::SingularInnovation)?
        .transpose();
    let eta = k.mul(&y);
    let (d_rot, d_bias) = eta.split();

    // Skip the fold when the perturbation is exactly zero so that exact
    // predicted measurements are a fixed point bit for bit.
    let q_ref = if d_rot.norm_sq().is_zero() {
        state.q_ref.clone()
    } else {
        state.q_ref.mul(&UnitQuaternion::exp(&d_rot))
    };
    let bias = &state.bias + &d_bias;
    let cov = Mat6::identity()
        .sub(&k.mul(&h))
        .mul(&state.cov)
        .symmetrized();
    Ok(FilterState {
        q_ref,
        bias,
        cov,
        p: state.p.clone(),
        v: state.v.clone(),
    })
}

/// One full filter step for an IMU sample whose rate covers the interval
/// ending at the sample time: predict, update, then advance position and
/// velocity with the post-update orientation.
pub fn mekf_step<T: Real>(
    state: &FilterState<T>,
    sample: &ImuSample<T>,
    dt: &T,
    cfg: &MekfConfig<T>,
) -> Result<FilterState<T>, FilterError> {
    let (pred, _) = predict(state, &sample.omega, dt, &cfg.noise.process, cfg.transition);
    let mut next = update(
        &pred,
        &sample.accel,
        &sample.mag,
        &cfg.noise.update,
        &cfg.refs,
        cfg.residual,
    )?;
    let a_global = &next.q_ref.rotate(&sample.accel) - &cfg.refs.gravity;
    next.v = &next.v + &a_global.scale(dt);
    next.p = &next.p + &next.v.scale(dt);
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotcore::geodesic_distance;
    use crate::wide::Wide;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn fixed_quat() -> UnitQuaternion<f64> {
        UnitQuaternion::exp(&Vec3::from_f64s(0.3, -0.5, 0.7))
    }

    #[test]
    fn accel_only_rows_ignore_field_measurement() {
        let refs: ReferenceVectors<f64> = ReferenceVectors::standard();
        let state = FilterState::new(
            fixed_quat(),
            Vec3::zeros(),
            Vec3::zeros(),
            Mat6::diag_f64([1e-3; 6]),
        );
        let noise = Mat6::diag_f64([1e-2; 6]);
        let accel = Vec3::from_f64s(0.3, -0.2, 9.7);
        let mag_a = Vec3::from_f64s(0.1, 0.9, -0.2);
        let mag_b = Vec3::from_f64s(-5.0, 2.0, 7.0);
        let run = |mag: &Vec3<f64>| {
            update_rows(
                &state,
                &accel,
                mag,
                &noise,
                &refs,
                ResidualMode::Additive,
                MeasurementRows::AccelOnly,
            )
            .unwrap()
        };
        let ua = run(&mag_a);
        let ub = run(&mag_b);
        assert_eq!(ua.q_ref.to_f64s(), ub.q_ref.to_f64s());
        assert_eq!(ua.cov.to_f64s(), ub.cov.to_f64s());
        // The full update does react to the field reading.
        let full = update(&state, &accel, &mag_a, &noise, &refs, ResidualMode::Additive).unwrap();
        assert!(geodesic_distance(&full.q_ref, &ua.q_ref) > 1e-6);
    }

    fn full_cov(scale: f64) -> Mat6<f64> {
        // SPD with nonzero cross terms: A·Aᵀ + scale·I.
        let a = Mat6::<f64>::from_rows_f64([
            [0.4, 0.1, -0.2, 0.05, 0.0, 0.1],
            [0.0, 0.3, 0.1, -0.1, 0.02, 0.0],
            [0.2, -0.1, 0.5, 0.0, 0.1, -0.05],
            [0.1, 0.0, 0.0, 0.2, 0.05, 0.0],
            [0.0, 0.05, -0.1, 0.1, 0.3, 0.02],
            [-0.1, 0.0, 0.1, 0.0, 0.05, 0.25],
        ]);
        a.mul(&a.transpose()).scale(&scale).add(&Mat6::identity().scale(&(scale * 1e-3)))
    }

    #[test]
    fn predict_with_gyro_matching_bias_keeps_state() {
        let bias = Vec3::from_f64s(0.1, -0.2, 0.05);
        // Bias rows of P zero, so the bias-coupling block of Φ has nothing
        // to mix in.
        let cov = Mat6::diag_f64([1e-2, 1e-2, 1e-2, 0.0, 0.0, 0.0]);
        let state = FilterState {
            q_ref: fixed_quat(),
            bias: bias.clone(),
            cov: cov.clone(),
            p: Vec3::zeros(),
            v: Vec3::zeros(),
        };
        let (next, _) = predict(
            &state,
            &bias,
            &0.01,
            &Mat6::zeros(),
            TransitionModel::FirstOrder,
        );
        assert_eq!(next.q_ref.to_f64s(), state.q_ref.to_f64s());
        assert!(next.cov.sub(&cov).max_abs() <= 1e2 * f64::EPSILON);
    }

    #[test]
    fn predict_right_multiplies_rate_step() {
        let bias = Vec3::from_f64s(0.01, 0.02, -0.03);
        let omega = &Vec3::from_f64s(0.0, 0.0, std::f64::consts::FRAC_PI_2) + &bias;
        let state = FilterState {
            q_ref: fixed_quat(),
            bias,
            cov: full_cov(1e-2),
            p: Vec3::zeros(),
            v: Vec3::zeros(),
        };
        let (next, _) = predict(&state, &omega, &1.0, &Mat6::zeros(), TransitionModel::FirstOrder);
        let want = state.q_ref.mul(&UnitQuaternion::exp(&Vec3::from_f64s(
            0.0,
            0.0,
            std::f64::consts::FRAC_PI_2,
        )));
        assert!(geodesic_distance(&next.q_ref, &want) < 1e-13);
    }

    /// Propagates a finitely perturbed true state alongside the reference and
    /// reads back the new error; the Jacobian of this map is what Φ models.
    fn propagated_error(
        q_ref: &UnitQuaternion<f64>,
        bias: &Vec3<f64>,
        omega: &Vec3<f64>,
        dt: f64,
        eta: &Vec3<f64>,
        db: &Vec3<f64>,
    ) -> Vec6<f64> {
        let q_true = q_ref.mul(&UnitQuaternion::exp(eta));
        let b_true = bias + db;
        let q_true2 = q_true.mul(&UnitQuaternion::exp(&(omega - &b_true).scale(&dt)));
        let q_ref2 = q_ref.mul(&UnitQuaternion::exp(&(omega - bias).scale(&dt)));
        let eta2 = q_ref2.inverse().mul(&q_true2).log();
        Vec6::from_vec3s(&eta2, db)
    }

    fn numerical_transition(
        q_ref: &UnitQuaternion<f64>,
        bias: &Vec3<f64>,
        omega: &Vec3<f64>,
        dt: f64,
    ) -> Mat6<f64> {
        let h = 1e-6;
        Mat6::from_fn(|i, j| {
            let mut plus = [0.0; 6];
            plus[j] = h;
            let mut minus = [0.0; 6];
            minus[j] = -h;
            let f = |e: [f64; 6]| {
                let eta = Vec3::from_f64s(e[0], e[1], e[2]);
                let db = Vec3::from_f64s(e[3], e[4], e[5]);
                propagated_error(q_ref, bias, omega, dt, &eta, &db)
            };
            (f(plus).vget(i) - f(minus).vget(i)) / (2.0 * h)
        })
    }

    #[test]
    fn transition_matrix_matches_numerical_jacobian() {
        let q_ref = fixed_quat();
        let bias = Vec3::from_f64s(0.002, -0.001, 0.003);
        let dt = 0.01;

        // The exact model is the true Jacobian for any rate.
        let omega = Vec3::from_f64s(0.6, -0.4, 0.8);
        let w_hat = &omega - &bias;
        let oracle = numerical_transition(&q_ref, &bias, &omega, dt);
        let exact = transition_matrix(&w_hat, &dt, TransitionModel::Exact);
        assert!(
            exact.sub(&oracle).max_abs() < 1e-9,
            "exact model off by {}",
            exact.sub(&oracle).max_abs()
        );

        // The first-order model truncates at O(‖ω‖·dt²), so check it on a
        // gentler rate where that term sits below the tolerance.
        let omega = Vec3::from_f64s(0.006, -0.004, 0.008);
        let w_hat = &omega - &bias;
        let oracle = numerical_transition(&q_ref, &bias, &omega, dt);
        let first = transition_matrix(&w_hat, &dt, TransitionModel::FirstOrder);
        assert!(
            first.sub(&oracle).max_abs() < 1e-6,
            "first-order model off by {}",
            first.sub(&oracle).max_abs()
        );
    }

    #[test]
    fn transition_models_agree_for_small_steps() {
        let w = Vec3::from_f64s(0.3, -0.2, 0.1);
        let dt = 1e-4;
        let a = transition_matrix(&w, &dt, TransitionModel::FirstOrder);
        let b = transition_matrix(&w, &dt, TransitionModel::Exact);
        assert!(a.sub(&b).max_abs() < 1e-8);
    }

    #[test]
    fn h_additive_identity_gravity_is_skew() {
        let refs = ReferenceVectors::<f64>::unit();
        let h = build_h_additive(&UnitQuaternion::identity(), &refs);
        let want = skew(&Vec3::from_f64s(0.0, 0.0, 1.0));
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(h[(i, j)], want[(i, j)]);
            }
        }
    }

    #[test]
    fn h_right_blocks_are_zero() {
        let refs = ReferenceVectors::<f64>::standard();
        for h in [
            build_h_additive(&fixed_quat(), &refs),
            build_h_multiplicative(&fixed_quat(), &refs),
        ] {
            for i in 0..6 {
                for j in 3..6 {
                    assert_eq!(h[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn h_additive_first_order_consistency() {
        let refs = ReferenceVectors::<f64>::standard();
        let q = fixed_quat();
        let h = build_h_additive(&q, &refs);
        let predicted = |q: &UnitQuaternion<f64>| {
            let inv = q.inverse();
            Vec6::from_vec3s(&inv.rotate(&refs.gravity), &inv.rotate(&refs.field))
        };
        let z0 = predicted(&q);
        let dir = Vec3::from_f64s(0.6, -0.3, 0.74).normalized().unwrap();
        for mag in [1e-2, 1e-3, 1e-4] {
            let eta = dir.scale(&mag);
            let z = predicted(&q.mul(&UnitQuaternion::exp(&eta)));
            let lin = h.mul(&Vec6::from_vec3s(&eta, &Vec3::zeros()));
            let mut remainder: f64 = 0.0;
            for i in 0..6 {
                remainder += (z.vget(i) - z0.vget(i) - lin.vget(i)).powi(2);
            }
            let remainder = remainder.sqrt();
            // Second-order term is bounded by ‖η‖²·‖reference‖.
            assert!(
                remainder <= mag * mag * STANDARD_GRAVITY,
                "remainder {remainder} at ‖η‖ = {mag}"
            );
        }
    }

    #[test]
    fn h_multiplicative_projector_properties() {
        let refs = ReferenceVectors::<f64>::standard();
        let q = fixed_quat();
        let h = build_h_multiplicative(&q, &refs);
        let a_hat = q.inverse().rotate(&refs.gravity).normalized().unwrap();
        let block = Mat3::from_fn(|i, j| h[(i, j)]);
        assert!(block.mul_vec3(&a_hat).norm() < 1e-15);
        assert!(block.mul(&block).sub(&block).max_abs() < 1e-15);
    }

    fn update_perturbation(
        state: &FilterState<f64>,
        accel: &Vec3<f64>,
        mag: &Vec3<f64>,
        noise: &Mat6<f64>,
        refs: &ReferenceVectors<f64>,
        mode: ResidualMode,
    ) -> Vec6<f64> {
        let next = update(state, accel, mag, noise, refs, mode).unwrap();
        let d_rot = state.q_ref.inverse().mul(&next.q_ref).log();
        let d_bias = &next.bias - &state.bias;
        Vec6::from_vec3s(&d_rot, &d_bias)
    }

    #[test]
    fn residual_modes_converge_as_perturbation_shrinks() {
        // With a generic diagonal U the two updates differ by a bounded
        // linear map of the perturbation, so their disagreement decays with
        // log-log slope 1 as the perturbation goes to zero.
        let refs = ReferenceVectors::<f64>::unit();
        let noise = Mat6::diag_f64([1e-2, 2e-2, 5e-3, 1e-2, 3e-2, 8e-3]);
        let q_ref = fixed_quat();
        let dir = Vec3::from_f64s(-0.2, 0.9, 0.4).normalized().unwrap();
        let state = FilterState::new(q_ref.clone(), Vec3::zeros(), Vec3::zeros(), full_cov(1e-2));
        let measure = |eps: f64, noise: &Mat6<f64>| {
            let q_true = q_ref.mul(&UnitQuaternion::exp(&dir.scale(&eps)));
            let accel = q_true.inverse().rotate(&refs.gravity);
            let mag = q_true.inverse().rotate(&refs.field);
            let a = update_perturbation(&state, &accel, &mag, noise, &refs, ResidualMode::Additive);
            let m = update_perturbation(
                &state,
                &accel,
                &mag,
                noise,
                &refs,
                ResidualMode::Multiplicative,
            );
            let mut d: f64 = 0.0;
            let mut scale: f64 = 0.0;
            for i in 0..6 {
                d += (a.vget(i) - m.vget(i)).powi(2);
                scale += a.vget(i).powi(2);
            }
            (d.sqrt(), scale.sqrt())
        };

        let mut points = Vec::new();
        for k in 0..6 {
            let eps = 1e-1 * 0.25f64.powi(k);
            let (d, _) = measure(eps, &noise);
            points.push((eps.ln(), d.ln()));
        }
        let n = points.len() as f64;
        let (sx, sy): (f64, f64) = points.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
        let (sxx, sxy): (f64, f64) = points
            .iter()
            .fold((0.0, 0.0), |(a, b), (x, y)| (a + x * x, b + x * y));
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!(
            (0.8..=1.2).contains(&slope),
            "log-log slope of mode disagreement was {slope}"
        );

        // With per-block isotropic U the residual component the modes
        // disagree on lies along the predicted axis, which Hᵀ annihilates:
        // the folded updates then coincide to rounding even for large angles.
        let iso = Mat6::identity().scale(&1e-2);
        for eps in [0.5, 0.05] {
            let (d, scale) = measure(eps, &iso);
            assert!(
                d <= 1e-12 * (1.0 + scale),
                "isotropic-U disagreement {d} at perturbation {eps}"
            );
        }
    }

    fn static_measurements<T: Real>(
        q_true: &UnitQuaternion<T>,
        refs: &ReferenceVectors<T>,
    ) -> (Vec3<T>, Vec3<T>) {
        let inv = q_true.inverse();
        (inv.rotate(&refs.gravity), inv.rotate(&refs.field))
    }

    fn zero_innovation_fixed_point_case<T: Real>() {
        let refs = ReferenceVectors::<T>::standard();
        let q = UnitQuaternion::exp(&Vec3::from_f64s(0.3, -0.5, 0.7));
        let (accel, mag) = static_measurements(&q, &refs);
        let state = FilterState {
            q_ref: q,
            bias: Vec3::from_f64s(0.01, -0.02, 0.005),
            cov: Mat6::diag_f64([1e-2; 6]),
            p: Vec3::zeros(),
            v: Vec3::zeros(),
        };
        let noise = Mat6::diag_f64([1e-2; 6]);
        let next = update(&state, &accel, &mag, &noise, &refs, ResidualMode::Additive).unwrap();
        assert_eq!(next.q_ref.to_f64s(), state.q_ref.to_f64s());
        assert_eq!(next.bias.to_f64s(), state.bias.to_f64s());
        let trace = |m: &Mat6<T>| {
            let mut t = T::zero();
            for i in 0..6 {
                t = t + m[(i, i)].clone();
            }
            t
        };
        assert!(trace(&next.cov) < trace(&state.cov));
    }

    #[test]
    fn update_zero_innovation_is_fixed_point() {
        zero_innovation_fixed_point_case::<f64>();
        zero_innovation_fixed_point_case::<Wide>();
    }

    #[test]
    fn update_with_huge_noise_changes_nothing() {
        let refs = ReferenceVectors::<f64>::standard();
        let q_true = UnitQuaternion::exp(&Vec3::from_f64s(-0.2, 0.4, 0.1));
        let (accel, mag) = static_measurements(&q_true, &refs);
        let state = FilterState::new(fixed_quat(), Vec3::zeros(), Vec3::zeros(), full_cov(1e-2));
        let noise = Mat6::diag_f64([1e12; 6]);
        let next = update(&state, &accel, &mag, &noise, &refs, ResidualMode::Additive).unwrap();
        assert!(geodesic_distance(&next.q_ref, &state.q_ref) < 1e-9);
        assert!((&next.bias - &state.bias).norm() < 1e-9);
    }

    #[test]
    fn update_reduces_orientation_error_monte_carlo() {
        let refs = ReferenceVectors::<f64>::standard();
        let noise = Mat6::diag_f64([1e-2; 6]);
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let axis = Vec3::from_f64s(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let q_true = UnitQuaternion::exp(&Vec3::from_f64s(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ));
            let eta = match axis.normalized() {
                Some(u) => u.scale(&rng.random_range(0.01..0.1)),
                None => continue,
            };
            let q_ref = q_true.mul(&UnitQuaternion::exp(&eta));
            let (accel, mag) = static_measurements(&q_true, &refs);
            let state = FilterState::new(q_ref, Vec3::zeros(), Vec3::zeros(), Mat6::diag_f64([1e-2; 6]));
            let before = geodesic_distance(&state.q_ref, &q_true);
            let next = update(&state, &accel, &mag, &noise, &refs, ResidualMode::Additive).unwrap();
            let after = geodesic_distance(&next.q_ref, &q_true);
            assert!(
                after < before,
                "error grew from {before} to {after} for perturbation {eta:?}"
            );
        }
    }

    #[test]
    fn update_flags_singular_innovation() {
        let refs = ReferenceVectors::<f64>::standard();
        let q = fixed_quat();
        let (accel, mag) = static_measurements(&q, &refs);
        let state = FilterState::new(q, Vec3::zeros(), Vec3::zeros(), Mat6::zeros());
        // Zero P and zero U make S identically singular.
        let noise = Mat6::zeros();
        match update(&state, &accel, &mag, &noise, &refs, ResidualMode::Additive) {
            Err(FilterError::SingularInnovation) => {}
            other => panic!("expected SingularInnovation, got {other:?}"),
        }
    }

    fn default_config<T: Real>() -> MekfConfig<T> {
        MekfConfig {
            noise: NoiseMatrices::diagonal([1e-12; 6], [1e-2; 6]),
            refs: ReferenceVectors::standard(),
            residual: ResidualMode::Additive,
            transition: TransitionModel::FirstOrder,
        }
    }

    fn psd_tolerance<T: Real>(cov: &Mat6<T>) -> T {
        (T::one() + &cov.max_abs()) * &T::exp2i(20 - T::mantissa_bits() as i32)
    }

    fn static_stream_case<T: Real>(n: usize, tol_factor: f64) {
        let cfg = default_config::<T>();
        let q_true = UnitQuaternion::exp(&Vec3::from_f64s(0.2, 0.1, -0.4));
        let (accel, mag) = static_measurements(&q_true, &cfg.refs);
        let dt = T::from(0.01);
        let mut state = FilterState::new(
            q_true.clone(),
            Vec3::zeros(),
            Vec3::zeros(),
            Mat6::diag_f64([1e-4; 6]),
        );
        for k in 0..n {
            let sample = ImuSample {
                t: T::from(k as f64) * &dt,
                omega: Vec3::zeros(),
                accel: accel.clone(),
                mag: mag.clone(),
            };
            state = mekf_step(&state, &sample, &dt, &cfg).unwrap();
            let tol = psd_tolerance(&state.cov);
            assert!(
                state.cov.is_positive_semidefinite(&tol),
                "covariance lost positive semidefiniteness at step {k}"
            );
        }
        let err = geodesic_distance(&state.q_ref, &q_true).to_f64();
        let bound = tol_factor * T::ulp().to_f64() * n as f64;
        assert!(err <= bound, "orientation error {err} exceeds {bound}");
        assert!(state.p.norm().to_f64() <= bound * STANDARD_GRAVITY);
    }

    #[test]
    fn static_stream_stays_put_double() {
        static_stream_case::<f64>(200, 1e3);
    }

    #[test]
    fn static_stream_stays_put_extended() {
        static_stream_case::<Wide>(40, 1e3);
    }

    #[test]
    fn gyro_bias_estimate_converges() {
        use crate::sensors::{generate_trajectory, synthesize_imu, NoiseSpec, TrajectoryConfig};
        let traj = generate_trajectory::<f64>(&TrajectoryConfig {
            duration: 30.0,
            accel_variation_target: 1e-6,
            seed: 5,
            ..TrajectoryConfig::default()
        });
        let true_bias = [1e-2, -5e-3, 2e-3];
        let noise = NoiseSpec {
            gyro_bias: true_bias,
            ..NoiseSpec::default()
        };
        let cfg = MekfConfig::<f64> {
            noise: NoiseMatrices::diagonal(
                [1e-10, 1e-10, 1e-10, 1e-12, 1e-12, 1e-12],
                [1e-2; 6],
            ),
            refs: ReferenceVectors::standard(),
            residual: ResidualMode::Additive,
            transition: TransitionModel::FirstOrder,
        };
        let imu = synthesize_imu(&traj, &noise, &cfg.refs.gravity, &cfg.refs.field);
        let dt = 0.01;
        let mut state = FilterState::from_truth(&traj[0], Mat6::diag_f64([1e-2, 1e-2, 1e-2, 1e-4, 1e-4, 1e-4]));
        let true_b = Vec3::from_f64s(true_bias[0], true_bias[1], true_bias[2]);
        let start_err = (&state.bias - &true_b).norm();
        let mut quarter_err = f64::NAN;
        for (k, sample) in imu.iter().enumerate().skip(1) {
            state = mekf_step(&state, sample, &dt, &cfg).unwrap();
            if k == imu.len() / 4 {
                quarter_err = (&state.bias - &true_b).norm();
            }
        }
        let final_err = (&state.bias - &true_b).norm();
        assert!(
            final_err < quarter_err && final_err < 0.5 * start_err,
            "bias error start {start_err}, quarter {quarter_err}, final {final_err}"
        );
    }

    #[test]
    fn gain_shrinks_when_update_noise_grows() {
        // Sampled over block-isotropic covariances P = diag(p₁I₃, p₂I₃) and
        // U = u·I: the per-direction gains are p·σᵢ/(p·σᵢ² + u), each
        // decreasing in u, so ‖η̂‖ never grows when U is scaled up. (For
        // fully general SPD P the norm bound can fail; the claim is scoped
        // to this sampled family.)
        let refs = ReferenceVectors::<f64>::standard();
        let mut rng = ChaCha12Rng::seed_from_u64(123);
        for _ in 0..200 {
            let q_ref = UnitQuaternion::exp(&Vec3::from_f64s(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ));
            let p1 = 10f64.powf(rng.random_range(-4.0..-1.0));
            let p2 = 10f64.powf(rng.random_range(-4.0..-1.0));
            let cov = Mat6::diag_f64([p1, p1, p1, p2, p2, p2]);
            let h = build_h_additive(&q_ref, &refs);
            let y = Vec6::from_slice_f64(std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
            let eta_norm = |u: f64| {
                let hp = h.mul(&cov);
                let s = hp.mul(&h.transpose()).add(&Mat6::identity().scale(&u));
                let k = s.spd_solve(&hp).unwrap().transpose();
                k.mul(&y).norm()
            };
            let base = eta_norm(1e-2);
            for lambda in [2.0, 10.0, 1e3] {
                let scaled = eta_norm(1e-2 * lambda);
                assert!(
                    scaled <= base * (1.0 + 1e-9),
                    "gain norm grew from {base} to {scaled} at λ = {lambda}"
                );
            }
        }
    }
}
