//! Measurement model, synthetic trajectory generation, noise injection,
//! dead reckoning, and CSV dataset I/O.
//!
//! Sample convention: row `k` carries the body rate integrated over the step
//! ending at `t_k` (row 0 has none) and the accelerometer/magnetometer
//! readings taken at `t_k`. Ground truth integrates the same way, so an exact
//! filter can reproduce the truth stream exactly: `q_k = q_{k−1}·exp(w_k·dt)`,
//! `v_k = v_{k−1} + a_k·dt`, `p_k = p_{k−1} + v_k·dt` (semi-implicit Euler).

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::linalg::Vec3;
use crate::rotcore::UnitQuaternion;
use crate::scalar::Real;

/// One IMU time step.
#[derive(Clone, Debug)]
pub struct ImuSample<T> {
    pub t: T,
    /// Body angular rate over the step ending at `t` (rad·s⁻¹).
    pub omega: Vec3<T>,
    /// Specific force in the body frame at `t` (m·s⁻²).
    pub accel: Vec3<T>,
    /// Magnetic field direction in the body frame at `t`.
    pub mag: Vec3<T>,
}

/// One wheel-odometry time step.
#[derive(Clone, Debug)]
pub struct OdometrySample<T> {
    pub t: T,
    pub d_left: T,
    pub d_right: T,
    /// Depth-equivalent pressure reading (m), when the sensor is present.
    pub pressure: Option<T>,
}

/// Ground-truth state at one time step.
#[derive(Clone, Debug)]
pub struct TruthSample<T> {
    pub t: T,
    pub q: UnitQuaternion<T>,
    pub p: Vec3<T>,
    pub v: Vec3<T>,
    /// External (gravity-free) acceleration in the global frame.
    pub a_ext: Vec3<T>,
    /// Body rate over the step ending at `t`.
    pub w: Vec3<T>,
}

pub type GroundTruth<T> = Vec<TruthSample<T>>;

/// Sensor error model; values are doubles lifted exactly into the active
/// scalar so runs are identical across precisions.
#[derive(Clone, Debug)]
pub struct NoiseSpec {
    pub gyro_bias: [f64; 3],
    pub gyro_noise_std: f64,
    pub accel_noise_std: f64,
    pub mag_noise_std: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            gyro_bias: [0.0; 3],
            gyro_noise_std: 0.0,
            accel_noise_std: 0.0,
            mag_noise_std: 0.0,
            seed: 0,
        }
    }
}

/// Synthetic trajectory parameters.
#[derive(Clone, Debug)]
pub struct TrajectoryConfig {
    pub duration: f64,
    /// Sampling rate (Hz).
    pub rate: f64,
    /// Desired mean ‖a_ext(k) − a_ext(k−1)‖ per step (m·s⁻²).
    pub accel_variation_target: f64,
    pub seed: u64,
    /// External acceleration is projected onto the plane orthogonal to this
    /// normal so surface-constrained motion actually stays on the surface.
    pub surface_normal: [f64; 3],
    /// Scale of the band-limited angular rate (rad·s⁻¹).
    pub omega_scale: f64,
    /// Single EMA smoothing coefficient for both random processes.
    pub smoothing: f64,
    /// Scale of the random initial tangent velocity (m·s⁻¹).
    pub initial_speed: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            duration: 100.0,
            rate: 100.0,
            accel_variation_target: 1e-3,
            seed: 1,
            surface_normal: [0.0, 0.0, 1.0],
            omega_scale: 0.3,
            smoothing: 0.95,
            initial_speed: 0.1,
        }
    }
}

/// One gyro integration step: `q · exp(ω·dt)`.
pub fn integrate_gyro<T: Real>(q: &UnitQuaternion<T>, omega: &Vec3<T>, dt: &T) -> UnitQuaternion<T> {
    q.mul(&UnitQuaternion::exp(&omega.scale(dt)))
}

fn normal3(rng: &mut ChaCha12Rng) -> [f64; 3] {
    std::array::from_fn(|_| StandardNormal.sample(rng))
}

/// Mean step-to-step change `mean ‖A_{k+1} − A_k‖` of a vector stream.
pub fn measure_accel_variation<T: Real>(stream: &[Vec3<T>]) -> T {
    if stream.len() < 2 {
        return T::zero();
    }
    let mut acc = T::zero();
    for k in 1..stream.len() {
        acc = acc + (&stream[k] - &stream[k - 1]).norm();
    }
    acc / T::from((stream.len() - 1) as f64)
}

/// Generates a smooth random surface-constrained trajectory.
///
/// Both the angular rate and the external acceleration are EMA-smoothed white
/// noise; the acceleration is projected tangent to the surface plane and
/// rescaled so the measured mean per-step variation matches the target.
pub fn generate_trajectory<T: Real>(cfg: &TrajectoryConfig) -> GroundTruth<T> {
    assert!(cfg.rate > 0.0, "sampling rate must be positive");
    assert!(
        cfg.accel_variation_target.is_finite() && cfg.accel_variation_target >= 0.0,
        "acceleration variation target must be finite and non-negative"
    );
    let n = (cfg.duration * cfg.rate).round().max(1.0) as usize;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);

    let normal = Vec3::<f64>::from_f64s(
        cfg.surface_normal[0],
        cfg.surface_normal[1],
        cfg.surface_normal[2],
    )
    .normalized()
    .expect("surface normal must be nonzero");

    // Initial state draws come first so the step streams are aligned
    // regardless of configuration.
    let q0_vec = normal3(&mut rng).map(|x| x * 0.5);
    let dir = normal3(&mut rng);
    let dir = Vec3::from_f64s(dir[0], dir[1], dir[2]);
    // Tangent initial velocity: random direction projected onto the plane.
    let v0 = {
        let tangent = &dir - &normal.scale(&dir.dot(&normal));
        match tangent.normalized() {
            Some(t) => t.scale(&cfg.initial_speed),
            None => Vec3::zeros(),
        }
    };

    let beta = cfg.smoothing;
    let mut w_state = Vec3::<f64>::zeros();
    let mut a_state = Vec3::<f64>::zeros();
    let mut w_stream = Vec::with_capacity(n);
    let mut a_stream = Vec::with_capacity(n);
    for k in 0..n {
        let gw = normal3(&mut rng);
        let ga = normal3(&mut rng);
        w_state = &w_state.scale(&beta)
            + &Vec3::from_f64s(gw[0], gw[1], gw[2]).scale(&((1.0 - beta) * cfg.omega_scale));
        a_state = &a_state.scale(&beta)
            + &Vec3::from_f64s(ga[0], ga[1], ga[2]).scale(&(1.0 - beta));
        let a_tangent = &a_state - &normal.scale(&a_state.dot(&normal));
        w_stream.push(if k == 0 { Vec3::zeros() } else { w_state.clone() });
        a_stream.push(a_tangent);
    }

    let measured = measure_accel_variation(&a_stream);
    let scale = if measured > 0.0 && cfg.accel_variation_target > 0.0 {
        cfg.accel_variation_target / measured
    } else {
        0.0
    };
    for a in &mut a_stream {
        *a = a.scale(&scale);
    }

    // Integrate at the target precision; every f64 input lifts exactly.
    let dt = T::one() / T::from(cfg.rate);
    let mut q = UnitQuaternion::<T>::exp(&Vec3::from_f64s(q0_vec[0], q0_vec[1], q0_vec[2]));
    let mut p = Vec3::<T>::zeros();
    let mut v = Vec3::<T>::from_f64s(v0.x, v0.y, v0.z);
    let mut truth = Vec::with_capacity(n);
    truth.push(TruthSample {
        t: T::zero(),
        q: q.clone(),
        p: p.clone(),
        v: v.clone(),
        a_ext: Vec3::from_f64s(a_stream[0].x, a_stream[0].y, a_stream[0].z),
        w: Vec3::zeros(),
    });
    for (k, (wk, ak)) in w_stream.iter().zip(&a_stream).enumerate().skip(1) {
        let w_t = Vec3::<T>::from_f64s(wk.x, wk.y, wk.z);
        let a_t = Vec3::<T>::from_f64s(ak.x, ak.y, ak.z);
        q = integrate_gyro(&q, &w_t, &dt);
        v = &v + &a_t.scale(&dt);
        p = &p + &v.scale(&dt);
        truth.push(TruthSample {
            t: T::from(k as f64) * &dt,
            q: q.clone(),
            p: p.clone(),
            v: v.clone(),
            a_ext: a_t,
            w: w_t,
        });
    }
    truth
}

/// Synthesizes IMU readings from ground truth: gyro = rate + bias + noise,
/// accel = body-frame (g + a_ext) + noise, mag = body-frame b̂ + noise.
pub fn synthesize_imu<T: Real>(
    truth: &[TruthSample<T>],
    noise: &NoiseSpec,
    g: &Vec3<T>,
    b: &Vec3<T>,
) -> Vec<ImuSample<T>> {
    let mut rng = ChaCha12Rng::seed_from_u64(noise.seed);
    let bias = Vec3::<T>::from_f64s(noise.gyro_bias[0], noise.gyro_bias[1], noise.gyro_bias[2]);
    let b_hat = b.normalized().expect("magnetic reference must be nonzero");
    truth
        .iter()
        .map(|s| {
            let ng = normal3(&mut rng);
            let na = normal3(&mut rng);
            let nm = normal3(&mut rng);
            let q_inv = s.q.inverse();
            let body_force = q_inv.rotate(&(g + &s.a_ext));
            let body_mag = q_inv.rotate(&b_hat);
            let lift = |n: [f64; 3], std: f64| {
                Vec3::<T>::from_f64s(n[0] * std, n[1] * std, n[2] * std)
            };
            ImuSample {
                t: s.t.clone(),
                omega: &(&s.w + &bias) + &lift(ng, noise.gyro_noise_std),
                accel: &body_force + &lift(na, noise.accel_noise_std),
                mag: &body_mag + &lift(nm, noise.mag_noise_std),
            }
        })
        .collect()
}

/// Gravity-compensated double integration of body-frame acceleration.
///
/// `a_g = q·accel − g`, then `v += a_g·dt`, `p += v·dt`; row 0 supplies no
/// step. Streams must have equal length.
pub fn dead_reckon<T: Real>(
    q_stream: &[UnitQuaternion<T>],
    accel_stream: &[Vec3<T>],
    g: &Vec3<T>,
    dt: &T,
) -> Vec<Vec3<T>> {
    assert_eq!(q_stream.len(), accel_stream.len(), "stream length mismatch");
    let mut p = Vec3::<T>::zeros();
    let mut v = Vec3::<T>::zeros();
    let mut out = Vec::with_capacity(q_stream.len());
    out.push(p.clone());
    for k in 1..q_stream.len() {
        let a_g = &q_stream[k].rotate(&accel_stream[k]) - g;
        v = &v + &a_g.scale(dt);
        p = &p + &v.scale(dt);
        out.push(p.clone());
    }
    out
}

/// One CSV column: header name plus a factor converting file units to SI.
#[derive(Clone, Debug)]
pub struct ColumnSpec {
    pub name: String,
    pub scale: f64,
}

impl ColumnSpec {
    pub fn new(name: &str) -> Self {
        ColumnSpec {
            name: name.to_string(),
            scale: 1.0,
        }
    }

    pub fn scaled(name: &str, scale: f64) -> Self {
        ColumnSpec {
            name: name.to_string(),
            scale,
        }
    }
}

/// Column mapping for IMU files.
#[derive(Clone, Debug)]
pub struct ImuSchema {
    pub t: ColumnSpec,
    pub omega: [ColumnSpec; 3],
    pub accel: [ColumnSpec; 3],
    pub mag: [ColumnSpec; 3],
    /// Normalize magnetometer rows to unit length at load (real logs report
    /// field strength; the filters use direction only).
    pub normalize_mag: bool,
}

impl Default for ImuSchema {
    fn default() -> Self {
        ImuSchema {
            t: ColumnSpec::new("t"),
            omega: [
                ColumnSpec::new("wx"),
                ColumnSpec::new("wy"),
                ColumnSpec::new("wz"),
            ],
            accel: [
                ColumnSpec::new("ax"),
                ColumnSpec::new("ay"),
                ColumnSpec::new("az"),
            ],
            mag: [
                ColumnSpec::new("mx"),
                ColumnSpec::new("my"),
                ColumnSpec::new("mz"),
            ],
            normalize_mag: false,
        }
    }
}

/// Column mapping for wheel-odometry files.
#[derive(Clone, Debug)]
pub struct OdoSchema {
    pub t: ColumnSpec,
    pub d_left: ColumnSpec,
    pub d_right: ColumnSpec,
    pub pressure: Option<ColumnSpec>,
}

impl Default for OdoSchema {
    fn default() -> Self {
        OdoSchema {
            t: ColumnSpec::new("t"),
            d_left: ColumnSpec::new("d_left"),
            d_right: ColumnSpec::new("d_right"),
            pressure: Some(ColumnSpec::new("pressure")),
        }
    }
}

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("missing column '{0}'")]
    MissingColumn(String),
    #[error("line {line}: malformed row: {detail}")]
    MalformedRow { line: usize, detail: String },
    #[error("line {line}: non-monotone time")]
    NonMonotoneTime { line: usize },
}

fn io_err(path: &Path, source: std::io::Error) -> CsvError {
    CsvError::Io {
        path: path.display().to_string(),
        source,
    }
}

struct ColumnReader {
    index: usize,
    scale: f64,
}

impl ColumnReader {
    fn resolve(headers: &csv::StringRecord, spec: &ColumnSpec) -> Result<Self, CsvError> {
        let index = headers
            .iter()
            .position(|h| h.trim() == spec.name)
            .ok_or_else(|| CsvError::MissingColumn(spec.name.clone()))?;
        Ok(ColumnReader {
            index,
            scale: spec.scale,
        })
    }

    fn get<T: Real>(&self, record: &csv::StringRecord, line: usize) -> Result<T, CsvError> {
        let raw = record.get(self.index).ok_or(CsvError::MalformedRow {
            line,
            detail: "row shorter than header".into(),
        })?;
        let value = T::decode(raw).ok_or_else(|| CsvError::MalformedRow {
            line,
            detail: format!("cannot parse '{raw}' as a number"),
        })?;
        let value = if self.scale == 1.0 {
            value
        } else {
            value * T::from(self.scale)
        };
        if !value.is_finite() {
            return Err(CsvError::MalformedRow {
                line,
                detail: "non-finite value".into(),
            });
        }
        Ok(value)
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<BufReader<File>>, CsvError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file)))
}

fn record_line(record: &csv::StringRecord, fallback: usize) -> usize {
    record.position().map(|p| p.line() as usize).unwrap_or(fallback)
}

/// Loads an IMU stream, applying the schema's unit factors and enforcing
/// strictly increasing timestamps.
pub fn load_imu_csv<T: Real>(path: &Path, schema: &ImuSchema) -> Result<Vec<ImuSample<T>>, CsvError> {
    let mut reader = open_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| CsvError::MalformedRow {
            line: 1,
            detail: e.to_string(),
        })?
        .clone();
    let t = ColumnReader::resolve(&headers, &schema.t)?;
    let vec_cols = |specs: &[ColumnSpec; 3]| -> Result<Vec<ColumnReader>, CsvError> {
        specs.iter().map(|s| ColumnReader::resolve(&headers, s)).collect()
    };
    let omega = vec_cols(&schema.omega)?;
    let accel = vec_cols(&schema.accel)?;
    let mag = vec_cols(&schema.mag)?;

    let mut out: Vec<ImuSample<T>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| CsvError::MalformedRow {
            line,
            detail: e.to_string(),
        })?;
        let line = record_line(&record, line);
        let read3 = |cols: &[ColumnReader]| -> Result<Vec3<T>, CsvError> {
            Ok(Vec3::new(
                cols[0].get(&record, line)?,
                cols[1].get(&record, line)?,
                cols[2].get(&record, line)?,
            ))
        };
        let sample = ImuSample {
            t: t.get(&record, line)?,
            omega: read3(&omega)?,
            accel: read3(&accel)?,
            mag: {
                let m = read3(&mag)?;
                if schema.normalize_mag {
                    m.normalized().ok_or(CsvError::MalformedRow {
                        line,
                        detail: "zero magnetometer row cannot be normalized".into(),
                    })?
                } else {
                    m
                }
            },
        };
        if let Some(prev) = out.last() {
            if sample.t <= prev.t {
                return Err(CsvError::NonMonotoneTime { line });
            }
        }
        out.push(sample);
    }
    Ok(out)
}

/// Loads a wheel-odometry stream.
pub fn load_odo_csv<T: Real>(path: &Path, schema: &OdoSchema) -> Result<Vec<OdometrySample<T>>, CsvError> {
    let mut reader = open_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| CsvError::MalformedRow {
            line: 1,
            detail: e.to_string(),
        })?
        .clone();
    let t = ColumnReader::resolve(&headers, &schema.t)?;
    let d_left = ColumnReader::resolve(&headers, &schema.d_left)?;
    let d_right = ColumnReader::resolve(&headers, &schema.d_right)?;
    let pressure = schema
        .pressure
        .as_ref()
        .map(|s| ColumnReader::resolve(&headers, s))
        .transpose()?;

    let mut out: Vec<OdometrySample<T>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| CsvError::MalformedRow {
            line,
            detail: e.to_string(),
        })?;
        let line = record_line(&record, line);
        let sample = OdometrySample {
            t: t.get(&record, line)?,
            d_left: d_left.get(&record, line)?,
            d_right: d_right.get(&record, line)?,
            pressure: pressure.as_ref().map(|c| c.get(&record, line)).transpose()?,
        };
        if let Some(prev) = out.last() {
            if sample.t <= prev.t {
                return Err(CsvError::NonMonotoneTime { line });
            }
        }
        out.push(sample);
    }
    Ok(out)
}

fn open_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, CsvError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn write_row(
    w: &mut csv::Writer<BufWriter<File>>,
    path: &Path,
    fields: &[String],
) -> Result<(), CsvError> {
    w.write_record(fields)
        .map_err(|e| io_err(path, std::io::Error::other(e)))
}

/// Writes an IMU stream with the default column names.
pub fn save_imu_csv<T: Real>(path: &Path, samples: &[ImuSample<T>]) -> Result<(), CsvError> {
    let mut w = open_writer(path)?;
    write_row(
        &mut w,
        path,
        &["t", "wx", "wy", "wz", "ax", "ay", "az", "mx", "my", "mz"]
            .map(String::from),
    )?;
    for s in samples {
        let mut row = vec![s.t.encode()];
        for v in [&s.omega, &s.accel, &s.mag] {
            row.push(v.x.encode());
            row.push(v.y.encode());
            row.push(v.z.encode());
        }
        write_row(&mut w, path, &row)?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Writes a ground-truth stream with the default column names.
pub fn save_truth_csv<T: Real>(path: &Path, truth: &[TruthSample<T>]) -> Result<(), CsvError> {
    let mut w = open_writer(path)?;
    write_row(
        &mut w,
        path,
        &[
            "t", "qw", "qx", "qy", "qz", "px", "py", "pz", "vx", "vy", "vz", "ax", "ay", "az",
            "wx", "wy", "wz",
        ]
        .map(String::from),
    )?;
    for s in truth {
        let mut row = vec![
            s.t.encode(),
            s.q.w.encode(),
            s.q.x.encode(),
            s.q.y.encode(),
            s.q.z.encode(),
        ];
        for v in [&s.p, &s.v, &s.a_ext, &s.w] {
            row.push(v.x.encode());
            row.push(v.y.encode());
            row.push(v.z.encode());
        }
        write_row(&mut w, path, &row)?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Loads a ground-truth stream written by [`save_truth_csv`].
pub fn load_truth_csv<T: Real>(path: &Path) -> Result<GroundTruth<T>, CsvError> {
    let mut reader = open_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| CsvError::MalformedRow {
            line: 1,
            detail: e.to_string(),
        })?
        .clone();
    let names = [
        "t", "qw", "qx", "qy", "qz", "px", "py", "pz", "vx", "vy", "vz", "ax", "ay", "az", "wx",
        "wy", "wz",
    ];
    let cols = names
        .iter()
        .map(|n| ColumnReader::resolve(&headers, &ColumnSpec::new(n)))
        .collect::<Result<Vec<_>, _>>()?;

    let mut out: GroundTruth<T> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| CsvError::MalformedRow {
            line,
            detail: e.to_string(),
        })?;
        let line = record_line(&record, line);
        let f = |j: usize| cols[j].get::<T>(&record, line);
        // Struct literal, not `from_components`: the file holds already
        // normalized components and renormalizing would perturb the last ulp.
        let sample = TruthSample {
            t: f(0)?,
            q: UnitQuaternion {
                w: f(1)?,
                x: f(2)?,
                y: f(3)?,
                z: f(4)?,
            },
            p: Vec3::new(f(5)?, f(6)?, f(7)?),
            v: Vec3::new(f(8)?, f(9)?, f(10)?),
            a_ext: Vec3::new(f(11)?, f(12)?, f(13)?),
            w: Vec3::new(f(14)?, f(15)?, f(16)?),
        };
        if let Some(prev) = out.last() {
            if sample.t <= prev.t {
                return Err(CsvError::NonMonotoneTime { line });
            }
        }
        out.push(sample);
    }
    Ok(out)
}

/// Writes a wheel-odometry stream with the default column names.
pub fn save_odo_csv<T: Real>(path: &Path, samples: &[OdometrySample<T>]) -> Result<(), CsvError> {
    let mut w = open_writer(path)?;
    write_row(
        &mut w,
        path,
        &["t", "d_left", "d_right", "pressure"].map(String::from),
    )?;
    for s in samples {
        write_row(
            &mut w,
            path,
            &[
                s.t.encode(),
                s.d_left.encode(),
                s.d_right.encode(),
                s.pressure.as_ref().map(|p| p.encode()).unwrap_or_default(),
            ],
        )?;
    }
    w.flush().map_err(|e| io_err(path, e))
}
