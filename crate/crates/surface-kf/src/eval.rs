//! Experiment harness: drives any of the filter pipelines over synthetic or
//! loaded datasets, reports per-run error metrics, runs log-spaced parameter
//! sweeps with rank and slope statistics, and renders sweep tables as
//! deterministic SVG line charts suitable for byte-exact regression baselines.

use std::fmt::Write as _;
use std::path::PathBuf;

use thiserror::Error;

use crate::linalg::{Mat6, Vec3};
use crate::mekf::{
    mekf_step, FilterError, FilterState, MekfConfig, NoiseMatrices, ReferenceVectors,
    ResidualMode, TransitionModel,
};
use crate::odom::{odo_revmekf_step, OdoNoise, OdomError, OdomState};
use crate::revkf::{revmekf_step, SurfaceError, SurfaceModel};
use crate::rotcore::{geodesic_distance, UnitQuaternion};
use crate::scalar::Real;
use crate::sensors::{
    generate_trajectory, measure_accel_variation, synthesize_imu, ImuSample, NoiseSpec,
    OdometrySample, TrajectoryConfig, TruthSample,
};

/// Filter pipelines the harness can drive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FilterId {
    /// Baseline filter, additive residual rows.
    MekfAdditive,
    /// Baseline filter, multiplicative (projector) residual rows.
    MekfMultiplicative,
    /// Surface-constrained recovery on every step.
    Revmekf,
    /// Surface-constrained recovery behind the capture-region gate.
    RevmekfDetect,
    /// Wheel odometry prediction with a raw accelerometer attitude update.
    Odo,
    /// Wheel odometry with gated pressure-constrained recovery.
    OdoRev,
}

impl FilterId {
    pub const ALL: [FilterId; 6] = [
        FilterId::MekfAdditive,
        FilterId::MekfMultiplicative,
        FilterId::Revmekf,
        FilterId::RevmekfDetect,
        FilterId::Odo,
        FilterId::OdoRev,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FilterId::MekfAdditive => "mekf_additive",
            FilterId::MekfMultiplicative => "mekf_multiplicative",
            FilterId::Revmekf => "revmekf",
            FilterId::RevmekfDetect => "revmekf_detect",
            FilterId::Odo => "odo",
            FilterId::OdoRev => "odo_rev",
        }
    }

    pub fn parse(s: &str) -> Option<FilterId> {
        FilterId::ALL.iter().copied().find(|f| f.as_str() == s)
    }

    pub fn needs_odometry(&self) -> bool {
        matches!(self, FilterId::Odo | FilterId::OdoRev)
    }
}

/// One dataset: ground truth plus the sensor streams the filters consume.
/// Sample `k` of every stream refers to time `t_k`; the filters start from
/// truth sample 0 and process samples `1..n`.
#[derive(Clone, Debug)]
pub struct RunData<T> {
    pub truth: Vec<TruthSample<T>>,
    pub imu: Vec<ImuSample<T>>,
    /// Wheel rows, required by the odometry filters.
    pub odo: Option<Vec<OdometrySample<T>>>,
    pub dt: T,
}

/// Filter parameters for one harness run. Values are plain `f64`; the run
/// promotes them to the working precision.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub process_noise: [f64; 6],
    pub update_noise: [f64; 6],
    /// Initial error-state covariance diagonal.
    pub init_cov: [f64; 6],
    /// Capture-region gate width for the detection filters.
    pub gamma: f64,
    /// Per-wheel distance noise for the odometry filters.
    pub wheel_noise: [f64; 2],
    /// Half the wheel separation (m).
    pub d_w: f64,
    /// Surface normal, global frame.
    pub surface_normal: [f64; 3],
    /// Global gravity reference (m·s⁻²).
    pub gravity: [f64; 3],
    /// Global magnetic field direction.
    pub field: [f64; 3],
    /// Use the literal kinematic constraint target instead of the
    /// gravity-tangency form.
    pub literal_form: bool,
    /// When set, a per-step diagnostics CSV is written here.
    pub diagnostics: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            process_noise: [1e-12, 1e-12, 1e-12, 1e-16, 1e-16, 1e-16],
            update_noise: [1e-2; 6],
            init_cov: [1e-6, 1e-6, 1e-6, 1e-10, 1e-10, 1e-10],
            gamma: 2.0,
            wheel_noise: [1e-8, 1e-8],
            d_w: 0.1,
            surface_normal: [0.0, 0.0, 1.0],
            gravity: [0.0, 0.0, 9.81],
            field: [0.0, 1.0, 0.0],
            literal_form: false,
            diagnostics: None,
        }
    }
}

fn refs_from_config<T: Real>(config: &RunConfig) -> ReferenceVectors<T> {
    ReferenceVectors {
        gravity: Vec3::from_f64s(config.gravity[0], config.gravity[1], config.gravity[2]),
        field: Vec3::from_f64s(config.field[0], config.field[1], config.field[2]),
    }
}

/// Error metrics and correction statistics for one filter run. All series
/// have one entry per truth sample, entry 0 being the initialization error.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunReport {
    /// max over `position_errors` (m).
    pub max_position_error: f64,
    /// Orientation geodesic error at the last sample (rad).
    pub final_orientation_error: f64,
    /// Per-sample `‖p̂ − p‖` (m).
    pub position_errors: Vec<f64>,
    /// Per-sample orientation geodesic error (rad).
    pub orientation_errors: Vec<f64>,
    /// Mean step-to-step external acceleration change of the dataset
    /// (m·s⁻², a property of the data, not the filter).
    pub mean_accel_variation: f64,
    /// Fraction of steps whose recovery branch replaced the accelerometer.
    pub correction_rate: f64,
    /// Mean geodesic distance from prediction to the selected member over
    /// corrected steps; zero when nothing corrected.
    pub mean_correction_angle: f64,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset has no samples")]
    EmptyData,
    #[error("truth and sensor streams disagree in length")]
    LengthMismatch,
    #[error("filter {0} requires wheel odometry rows")]
    MissingOdometry(&'static str),
    #[error("step {step}: {source}")]
    FilterStep { step: usize, source: FilterError },
    #[error("step {step}: {source}")]
    OdoStep { step: usize, source: OdomError },
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error("sweep table has no rows")]
    EmptyTable,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn surface_from_config<T: Real>(config: &RunConfig) -> Result<SurfaceModel<T>, EvalError> {
    let [nx, ny, nz] = config.surface_normal;
    let mut surface = SurfaceModel::new(
        Vec3::from_f64s(nx, ny, nz),
        Vec3::zeros(),
        refs_from_config(config),
    )?;
    if config.literal_form {
        surface.form = crate::revkf::ConstraintForm::Literal;
    }
    Ok(surface)
}

/// Runs one filter over the dataset and reports error metrics against truth.
/// Deterministic: a fixed dataset and config always yield the same report.
pub fn run_filter<T: Real>(
    filter: FilterId,
    data: &RunData<T>,
    config: &RunConfig,
) -> Result<RunReport, EvalError> {
    if data.truth.is_empty() || data.imu.is_empty() {
        return Err(EvalError::EmptyData);
    }
    if data.truth.len() != data.imu.len() {
        return Err(EvalError::LengthMismatch);
    }
    let n = data.truth.len();
    let dt = data.dt.clone();
    let gamma = T::from(config.gamma);
    let init_cov = Mat6::diag_f64(config.init_cov);
    let noise = NoiseMatrices::diagonal(config.process_noise, config.update_noise);

    let mut pos_err: Vec<f64> = Vec::with_capacity(n);
    let mut ori_err: Vec<f64> = Vec::with_capacity(n);
    let mut corrected = 0usize;
    let mut steps = 0usize;
    let mut angle_sum = 0.0f64;
    let mut record = |p_hat: &Vec3<T>, q_hat: &UnitQuaternion<T>, truth: &TruthSample<T>| {
        pos_err.push((p_hat - &truth.p).norm().to_f64());
        ori_err.push(geodesic_distance(q_hat, &truth.q).to_f64());
    };

    match filter {
        FilterId::MekfAdditive | FilterId::MekfMultiplicative => {
            let cfg = MekfConfig {
                noise,
                refs: refs_from_config(config),
                residual: if filter == FilterId::MekfAdditive {
                    ResidualMode::Additive
                } else {
                    ResidualMode::Multiplicative
                },
                transition: TransitionModel::Exact,
            };
            let mut state = FilterState::from_truth(&data.truth[0], init_cov);
            record(&state.p, &state.q_ref, &data.truth[0]);
            for (k, sample) in data.imu.iter().enumerate().skip(1) {
                state = mekf_step(&state, sample, &dt, &cfg)
                    .map_err(|source| EvalError::FilterStep { step: k, source })?;
                record(&state.p, &state.q_ref, &data.truth[k]);
                steps += 1;
            }
        }
        FilterId::Revmekf | FilterId::RevmekfDetect => {
            let surface = surface_from_config::<T>(config)?;
            let gate = if filter == FilterId::RevmekfDetect {
                Some(&gamma)
            } else {
                None
            };
            let mut state = FilterState::from_truth(&data.truth[0], init_cov);
            record(&state.p, &state.q_ref, &data.truth[0]);
            for (k, sample) in data.imu.iter().enumerate().skip(1) {
                let (next, outcome) = revmekf_step(&state, sample, &dt, &surface, &noise, gate)
                    .map_err(|source| EvalError::FilterStep { step: k, source })?;
                state = next;
                if let Some(a) = outcome.correction_angle() {
                    corrected += 1;
                    angle_sum += a.to_f64();
                }
                record(&state.p, &state.q_ref, &data.truth[k]);
                steps += 1;
            }
        }
        FilterId::Odo | FilterId::OdoRev => {
            let odo = data
                .odo
                .as_ref()
                .ok_or(EvalError::MissingOdometry(filter.as_str()))?;
            if odo.len() != n {
                return Err(EvalError::LengthMismatch);
            }
            let surface = surface_from_config::<T>(config)?;
            let noise = OdoNoise::diagonal(config.wheel_noise, config.update_noise);
            let mut state = OdomState::new(
                data.truth[0].p.clone(),
                data.truth[0].q.log(),
                init_cov,
                T::from(config.d_w),
            );
            record(&state.p, &state.orientation(), &data.truth[0]);
            for (k, row) in odo.iter().enumerate().skip(1) {
                let row = if filter == FilterId::Odo {
                    // Baseline: wheels plus the raw attitude update only.
                    OdometrySample {
                        pressure: None,
                        ..row.clone()
                    }
                } else {
                    row.clone()
                };
                let (next, outcome) = odo_revmekf_step(
                    &state,
                    &row,
                    &data.imu[k].accel,
                    &surface,
                    &noise,
                    &dt,
                    Some(&gamma),
                )
                .map_err(|source| EvalError::OdoStep { step: k, source })?;
                state = next;
                if let Some(a) = outcome.correction_angle() {
                    corrected += 1;
                    angle_sum += a.to_f64();
                }
                record(&state.p, &state.orientation(), &data.truth[k]);
                steps += 1;
            }
        }
    }

    let a_ext: Vec<Vec3<T>> = data.truth.iter().map(|s| s.a_ext.clone()).collect();
    let report = RunReport {
        max_position_error: pos_err.iter().cloned().fold(0.0, f64::max),
        final_orientation_error: *ori_err.last().expect("nonempty"),
        mean_accel_variation: measure_accel_variation(&a_ext).to_f64(),
        correction_rate: corrected as f64 / steps.max(1) as f64,
        mean_correction_angle: if corrected > 0 {
            angle_sum / corrected as f64
        } else {
            0.0
        },
        position_errors: pos_err,
        orientation_errors: ori_err,
    };
    if let Some(path) = &config.diagnostics {
        write_diagnostics(path, data, &report)?;
    }
    Ok(report)
}

fn write_diagnostics<T: Real>(
    path: &std::path::Path,
    data: &RunData<T>,
    report: &RunReport,
) -> std::io::Result<()> {
    let mut out = String::from("step,t,position_error,orientation_error\n");
    for (k, (pe, oe)) in report
        .position_errors
        .iter()
        .zip(&report.orientation_errors)
        .enumerate()
    {
        let _ = writeln!(out, "{},{},{},{}", k, data.truth[k].t.to_f64(), pe, oe);
    }
    std::fs::write(path, out)
}

/// Configuration for a synthetic IMU dataset.
#[derive(Clone, Debug)]
pub struct ImuRunSpec {
    pub trajectory: TrajectoryConfig,
    pub noise: NoiseSpec,
    /// Global gravity reference (m·s⁻²).
    pub gravity: [f64; 3],
    /// Global magnetic field direction.
    pub field: [f64; 3],
}

impl Default for ImuRunSpec {
    fn default() -> Self {
        ImuRunSpec {
            trajectory: TrajectoryConfig::default(),
            noise: NoiseSpec::default(),
            gravity: [0.0, 0.0, 9.81],
            field: [0.0, 1.0, 0.0],
        }
    }
}

/// Generates a smooth random trajectory and its IMU stream.
pub fn generate_imu_run<T: Real>(spec: &ImuRunSpec) -> RunData<T> {
    let truth = generate_trajectory::<T>(&spec.trajectory);
    let [gx, gy, gz] = spec.gravity;
    let [bx, by, bz] = spec.field;
    let imu = synthesize_imu(
        &truth,
        &spec.noise,
        &Vec3::from_f64s(gx, gy, gz),
        &Vec3::from_f64s(bx, by, bz),
    );
    RunData {
        truth,
        imu,
        odo: None,
        dt: T::from(1.0 / spec.trajectory.rate),
    }
}

/// Configuration for a synthetic differential-drive run on a tilted plane.
/// The plane is tilted by `tilt` about the x axis, so its level lines run
/// along x and its normal is `(0, −sin tilt, cos tilt)`.
#[derive(Clone, Debug)]
pub struct OdoRunSpec {
    pub n: usize,
    pub dt: f64,
    /// Plane tilt (rad).
    pub tilt: f64,
    /// Forward speed (m·s⁻¹).
    pub speed: f64,
    /// In-plane heading rate (rad·s⁻¹). Zero keeps the level line, on which
    /// the planar wheel chart coincides with the global frame.
    pub turn_rate: f64,
    pub accel_noise_std: f64,
    pub pressure_noise_std: f64,
    /// Per-wheel distance noise (m, per step).
    pub wheel_slip_std: f64,
    /// Half the wheel separation (m).
    pub d_w: f64,
    pub seed: u64,
}

impl Default for OdoRunSpec {
    fn default() -> Self {
        OdoRunSpec {
            n: 2000,
            dt: 0.01,
            tilt: 0.25,
            speed: 0.2,
            turn_rate: 0.0,
            accel_noise_std: 0.0,
            pressure_noise_std: 0.0,
            wheel_slip_std: 0.0,
            d_w: 0.1,
            seed: 1,
        }
    }
}

/// Surface normal matching an [`OdoRunSpec`] tilt, for [`RunConfig`].
pub fn tilted_normal(tilt: f64) -> [f64; 3] {
    [0.0, -tilt.sin(), tilt.cos()]
}

/// Generates a wheel-odometry dataset on the tilted plane.
///
/// Truth positions are recorded in the planar wheel chart (x, y as in-plane
/// coordinates, z as global height), which is the state the wheel filter
/// estimates; along level lines (`turn_rate == 0`) the chart coincides with
/// the global frame. Orientation truth and the accelerometer stream follow
/// global-frame physics of the in-plane circular motion.
pub fn generate_odometry_run<T: Real>(spec: &OdoRunSpec) -> RunData<T> {
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::{Distribution, StandardNormal};

    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let mut gauss = |std: f64| -> f64 {
        let x: f64 = StandardNormal.sample(&mut rng);
        std * x
    };

    let refs: ReferenceVectors<f64> = ReferenceVectors::standard();
    let q_base = UnitQuaternion::<f64>::exp(&Vec3::new(spec.tilt, 0.0, 0.0));
    // Uphill in-plane direction; the level direction is x̂.
    let e2 = Vec3::new(0.0, spec.tilt.cos(), spec.tilt.sin());
    let w = spec.turn_rate;

    let mut truth = Vec::with_capacity(spec.n);
    let mut imu = Vec::with_capacity(spec.n);
    let mut odo = Vec::with_capacity(spec.n);
    for k in 0..spec.n {
        let t = k as f64 * spec.dt;
        let phi = w * t;
        // In-plane circle (straight line as the zero-rate limit).
        let (u, v2) = if w.abs() > 0.0 {
            let r = spec.speed / w;
            (r * phi.sin(), r * (1.0 - phi.cos()))
        } else {
            (spec.speed * t, 0.0)
        };
        let v_plane = [spec.speed * phi.cos(), spec.speed * phi.sin()];
        let a_plane = [-spec.speed * w * phi.sin(), spec.speed * w * phi.cos()];

        let q = q_base.mul(&UnitQuaternion::exp(&Vec3::new(0.0, 0.0, phi)));
        let p_chart = Vec3::new(u, v2, v2 * spec.tilt.sin());
        let v_world = &Vec3::new(v_plane[0], 0.0, 0.0) + &e2.scale(&v_plane[1]);
        let a_world = &Vec3::new(a_plane[0], 0.0, 0.0) + &e2.scale(&a_plane[1]);

        let accel = &q.inverse().rotate(&(&a_world + &refs.gravity))
            + &Vec3::new(
                gauss(spec.accel_noise_std),
                gauss(spec.accel_noise_std),
                gauss(spec.accel_noise_std),
            );
        let mag = q.inverse().rotate(&refs.field);
        let d = spec.speed * spec.dt;
        let dtheta = w * spec.dt;
        odo.push(OdometrySample {
            t,
            d_left: d + spec.d_w * dtheta + gauss(spec.wheel_slip_std),
            d_right: d - spec.d_w * dtheta + gauss(spec.wheel_slip_std),
            pressure: Some(p_chart.z + gauss(spec.pressure_noise_std)),
        });
        imu.push(ImuSample {
            t,
            omega: Vec3::new(0.0, 0.0, w),
            accel,
            mag,
        });
        truth.push(TruthSample {
            t,
            q,
            p: p_chart,
            v: v_world,
            a_ext: a_world,
            w: Vec3::new(0.0, 0.0, w),
        });
    }
    RunData {
        truth: truth.into_iter().map(|s| promote_truth(&s)).collect(),
        imu: imu.iter().map(promote_imu).collect(),
        odo: Some(odo.iter().map(promote_odo).collect()),
        dt: T::from(spec.dt),
    }
}

fn promote_truth<T: Real>(s: &TruthSample<f64>) -> TruthSample<T> {
    let v3 = |v: &Vec3<f64>| Vec3::<T>::from_f64s(v.x, v.y, v.z);
    let [qw, qx, qy, qz] = s.q.to_f64s();
    TruthSample {
        t: T::from(s.t),
        q: UnitQuaternion::from_f64s(qw, qx, qy, qz),
        p: v3(&s.p),
        v: v3(&s.v),
        a_ext: v3(&s.a_ext),
        w: v3(&s.w),
    }
}

fn promote_imu<T: Real>(s: &ImuSample<f64>) -> ImuSample<T> {
    let v3 = |v: &Vec3<f64>| Vec3::<T>::from_f64s(v.x, v.y, v.z);
    ImuSample {
        t: T::from(s.t),
        omega: v3(&s.omega),
        accel: v3(&s.accel),
        mag: v3(&s.mag),
    }
}

fn promote_odo<T: Real>(s: &OdometrySample<f64>) -> OdometrySample<T> {
    OdometrySample {
        t: T::from(s.t),
        d_left: T::from(s.d_left),
        d_right: T::from(s.d_right),
        pressure: s.pressure.map(T::from),
    }
}

/// Parameter axis of a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParameter {
    /// Trajectory external-acceleration variation target.
    AccelVariation,
    /// Uniform measurement-noise diagonal of the update.
    UpdateNoise,
    /// Gyro bias magnitude injected into the IMU stream.
    GyroBias,
    /// Accelerometer white-noise standard deviation.
    AccelNoise,
    /// Capture-region gate width.
    Gamma,
}

impl SweepParameter {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepParameter::AccelVariation => "accel_variation",
            SweepParameter::UpdateNoise => "update_noise",
            SweepParameter::GyroBias => "gyro_bias",
            SweepParameter::AccelNoise => "accel_noise",
            SweepParameter::Gamma => "gamma",
        }
    }

    pub fn parse(s: &str) -> Option<SweepParameter> {
        [
            SweepParameter::AccelVariation,
            SweepParameter::UpdateNoise,
            SweepParameter::GyroBias,
            SweepParameter::AccelNoise,
            SweepParameter::Gamma,
        ]
        .iter()
        .copied()
        .find(|p| p.as_str() == s)
    }
}

/// Log-spaced sweep grid specification.
#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    /// Inclusive positive bounds, `lo <= hi`.
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    pub trials: usize,
    pub seed_base: u64,
}

impl SweepSpec {
    /// Log-spaced grid over `[lo, hi]`, both ends included.
    pub fn grid(&self) -> Vec<f64> {
        assert!(self.lo > 0.0 && self.hi >= self.lo, "bounds must be positive and ordered");
        assert!(self.points >= 1);
        if self.points == 1 {
            return vec![self.lo];
        }
        let (l0, l1) = (self.lo.log10(), self.hi.log10());
        (0..self.points)
            .map(|i| {
                let f = i as f64 / (self.points - 1) as f64;
                10f64.powf(l0 + f * (l1 - l0))
            })
            .collect()
    }
}

/// One sweep measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub parameter: f64,
    /// Max position error of the run (m).
    pub error: f64,
    pub trial: usize,
    pub seed: u64,
}

/// Sweep results, rows sorted by parameter then trial.
#[derive(Clone, Debug)]
pub struct SweepTable {
    pub parameter: SweepParameter,
    pub filter: FilterId,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("parameter,error,trial,seed\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.parameter, r.error, r.trial, r.seed);
        }
        out
    }

    pub fn save_csv(&self, path: &std::path::Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv_string())
    }

    /// Mean error per grid point, sorted by parameter.
    pub fn mean_errors(&self) -> Vec<(f64, f64)> {
        let mut pts: Vec<(f64, f64, usize)> = Vec::new();
        for r in &self.rows {
            match pts.iter_mut().find(|(p, _, _)| *p == r.parameter) {
                Some((_, sum, cnt)) => {
                    *sum += r.error;
                    *cnt += 1;
                }
                None => pts.push((r.parameter, r.error, 1)),
            }
        }
        let mut out: Vec<(f64, f64)> = pts
            .into_iter()
            .map(|(p, sum, cnt)| (p, sum / cnt as f64))
            .collect();
        out.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite parameters"));
        out
    }

    /// Least-squares slope of `log10 error` against `log10 parameter` over
    /// rows with positive entries. NaN with fewer than two usable rows.
    pub fn log_log_slope(&self) -> f64 {
        let pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.parameter > 0.0 && r.error > 0.0)
            .map(|r| (r.parameter.log10(), r.error.log10()))
            .collect();
        if pts.len() < 2 {
            return f64::NAN;
        }
        let n = pts.len() as f64;
        let (sx, sy): (f64, f64) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
        let (mx, my) = (sx / n, sy / n);
        let mut num = 0.0;
        let mut den = 0.0;
        for (x, y) in &pts {
            num += (x - mx) * (y - my);
            den += (x - mx) * (x - mx);
        }
        if den == 0.0 {
            f64::NAN
        } else {
            num / den
        }
    }

    /// Spearman rank correlation between parameter and error over all rows.
    pub fn rank_correlation(&self) -> f64 {
        let xs: Vec<f64> = self.rows.iter().map(|r| r.parameter).collect();
        let ys: Vec<f64> = self.rows.iter().map(|r| r.error).collect();
        pearson(&ranks(&xs), &ranks(&ys))
    }
}

/// Fractional ranks (1-based, ties averaged).
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).expect("finite values"));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.len() != y.len() || x.len() < 2 {
        return f64::NAN;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    sxy / (sxx * syy).sqrt()
}

/// Base setup a sweep perturbs per grid point.
#[derive(Clone, Debug, Default)]
pub struct SweepContext {
    pub trajectory: TrajectoryConfig,
    pub noise: NoiseSpec,
    pub run: RunConfig,
}

/// Runs `filter` across the grid, `trials` fresh datasets per point with
/// deterministic per-(point, trial) seeds. The swept value overrides the
/// matching context field; everything else is held fixed.
pub fn sweep<T: Real>(
    spec: &SweepSpec,
    filter: FilterId,
    ctx: &SweepContext,
) -> Result<SweepTable, EvalError> {
    let mut rows = Vec::with_capacity(spec.points * spec.trials);
    for (pi, p) in spec.grid().into_iter().enumerate() {
        for trial in 0..spec.trials {
            let seed = spec
                .seed_base
                .wrapping_add(pi as u64 * 10_007)
                .wrapping_add(trial as u64 * 7_919);
            let mut c = ctx.clone();
            c.trajectory.seed = seed;
            c.noise.seed = seed.wrapping_add(0x5eed);
            match spec.parameter {
                SweepParameter::AccelVariation => c.trajectory.accel_variation_target = p,
                SweepParameter::UpdateNoise => c.run.update_noise = [p; 6],
                SweepParameter::GyroBias => {
                    let b = p / 3f64.sqrt();
                    c.noise.gyro_bias = [b, b, b];
                }
                SweepParameter::AccelNoise => c.noise.accel_noise_std = p,
                SweepParameter::Gamma => c.run.gamma = p,
            }
            let data = generate_imu_run::<T>(&ImuRunSpec {
                trajectory: c.trajectory.clone(),
                noise: c.noise.clone(),
                gravity: c.run.gravity,
                field: c.run.field,
            });
            let report = run_filter(filter, &data, &c.run)?;
            rows.push(SweepRow {
                parameter: p,
                error: report.max_position_error,
                trial,
                seed,
            });
        }
    }
    Ok(SweepTable {
        parameter: spec.parameter,
        filter,
        rows,
    })
}

/// Axis labels and scales for [`plot`].
#[derive(Clone, Debug)]
pub struct AxesSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
}

impl Default for AxesSpec {
    fn default() -> Self {
        AxesSpec {
            title: "parameter sweep".into(),
            x_label: "parameter".into(),
            y_label: "max position error (m)".into(),
            log_x: true,
            log_y: true,
        }
    }
}

const PLOT_X0: f64 = 70.0;
const PLOT_X1: f64 = 620.0;
const PLOT_Y0: f64 = 40.0;
const PLOT_Y1: f64 = 430.0;

fn axis_map(v: f64, lo: f64, hi: f64, out_lo: f64, out_hi: f64) -> f64 {
    if hi == lo {
        return (out_lo + out_hi) / 2.0;
    }
    out_lo + (v - lo) / (hi - lo) * (out_hi - out_lo)
}

fn scaled(v: f64, log: bool) -> f64 {
    if log {
        v.max(1e-300).log10()
    } else {
        v
    }
}

/// Renders the per-point mean errors as a fixed-size SVG line chart. The
/// output is a pure function of its inputs (no timestamps, no environment),
/// so renders are byte-identical and safe to diff against a baseline.
pub fn plot(table: &SweepTable, axes: &AxesSpec) -> Result<String, EvalError> {
    if table.rows.is_empty() {
        return Err(EvalError::EmptyTable);
    }
    let pts = table.mean_errors();
    let xs: Vec<f64> = pts.iter().map(|(p, _)| scaled(*p, axes.log_x)).collect();
    let ys: Vec<f64> = pts.iter().map(|(_, e)| scaled(*e, axes.log_y)).collect();
    let (x_lo, x_hi) = bounds(&xs);
    let (y_lo, y_hi) = bounds(&ys);

    let mut svg = String::new();
    svg.push_str("<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 640 480\">\n");
    svg.push_str("<rect width=\"640\" height=\"480\" fill=\"white\"/>\n");
    let _ = writeln!(
        svg,
        "<rect x=\"{PLOT_X0}\" y=\"{PLOT_Y0}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>",
        PLOT_X1 - PLOT_X0,
        PLOT_Y1 - PLOT_Y0
    );
    let _ = writeln!(
        svg,
        "<text x=\"345\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{} ({})</text>",
        xml_escape(&axes.title),
        table.filter.as_str()
    );
    let _ = writeln!(
        svg,
        "<text x=\"345\" y=\"468\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">{}</text>",
        xml_escape(&axes.x_label)
    );
    let _ = writeln!(
        svg,
        "<text x=\"16\" y=\"235\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 16 235)\">{}</text>",
        xml_escape(&axes.y_label)
    );
    // Corner tick labels carry the data range.
    let (p_lo, p_hi) = (pts.first().expect("nonempty").0, pts.last().expect("nonempty").0);
    let e_min = pts.iter().map(|(_, e)| *e).fold(f64::INFINITY, f64::min);
    let e_max = pts.iter().map(|(_, e)| *e).fold(f64::NEG_INFINITY, f64::max);
    let _ = writeln!(
        svg,
        "<text x=\"{PLOT_X0}\" y=\"448\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{:e}</text>",
        p_lo
    );
    let _ = writeln!(
        svg,
        "<text x=\"{PLOT_X1}\" y=\"448\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{:e}</text>",
        p_hi
    );
    let _ = writeln!(
        svg,
        "<text x=\"64\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{:e}</text>",
        PLOT_Y1, e_min
    );
    let _ = writeln!(
        svg,
        "<text x=\"64\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{:e}</text>",
        PLOT_Y0 + 4.0,
        e_max
    );

    let mut coords = Vec::with_capacity(pts.len());
    for (x, y) in xs.iter().zip(&ys) {
        let px = axis_map(*x, x_lo, x_hi, PLOT_X0, PLOT_X1);
        let py = axis_map(*y, y_lo, y_hi, PLOT_Y1, PLOT_Y0);
        coords.push((px, py));
    }
    let points: Vec<String> = coords
        .iter()
        .map(|(x, y)| format!("{:.2},{:.2}", x, y))
        .collect();
    let _ = writeln!(
        svg,
        "<polyline fill=\"none\" stroke=\"#336699\" stroke-width=\"1.5\" points=\"{}\"/>",
        points.join(" ")
    );
    for (x, y) in &coords {
        let _ = writeln!(svg, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#336699\"/>", x, y);
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn bounds(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
