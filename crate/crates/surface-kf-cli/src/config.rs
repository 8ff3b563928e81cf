//! Flat key-value experiment configuration.
//!
//! The format is line-based for diff-friendliness: `key = value` rows under
//! the most recent `[section]` header, with `#` comments and blank lines
//! ignored. Vector values are whitespace-separated numbers. Unknown sections
//! and keys are errors so typos surface at parse time. Sources stack in
//! order preset < config file < command-line flags; `canonical` renders the
//! resolved result so a content hash covers every effective value.

use surface_kf::eval::{FilterId, OdoRunSpec, RunConfig, SweepParameter, SweepSpec};
use surface_kf::sensors::{NoiseSpec, TrajectoryConfig};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: cannot read config: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("config line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("config line {line}: key '{key}': {detail}")]
    Value {
        line: usize,
        key: String,
        detail: String,
    },
    #[error("unknown preset '{0}' (known: fig1, fig2, odo-line)")]
    UnknownPreset(String),
    #[error("{0}")]
    Invalid(String),
}

/// Working scalar precision of a command.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    Double,
    /// Arbitrary-precision scalars with the given mantissa bits (>= 53).
    Extended(usize),
}

impl Precision {
    pub fn parse(s: &str) -> Result<Precision, String> {
        if s == "double" {
            return Ok(Precision::Double);
        }
        if s == "extended" {
            return Ok(Precision::Extended(surface_kf::wide::DEFAULT_PRECISION));
        }
        if let Some(bits) = s.strip_prefix("extended:") {
            let b: usize = bits
                .parse()
                .map_err(|_| format!("'{bits}' is not a bit count"))?;
            if b < 53 {
                return Err("extended precision must be at least 53 bits".into());
            }
            return Ok(Precision::Extended(b));
        }
        Err(format!("expected 'double' or 'extended:BITS', got '{s}'"))
    }

    pub fn as_string(&self) -> String {
        match self {
            Precision::Double => "double".into(),
            Precision::Extended(b) => format!("extended:{b}"),
        }
    }
}

/// Sweep section plus the filter it drives.
#[derive(Clone, Debug)]
pub struct SweepSettings {
    pub spec: SweepSpec,
    pub filter: FilterId,
}

/// Fully resolved experiment setup; every command is a pure function of one
/// of these (plus the output path).
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub precision: Precision,
    /// Filter selected for `run`; sweeps carry their own.
    pub filter: Option<FilterId>,
    pub trajectory: TrajectoryConfig,
    pub noise: NoiseSpec,
    pub run: RunConfig,
    /// Present when the dataset is a wheel-odometry run.
    pub odometry: Option<OdoRunSpec>,
    pub sweep: Option<SweepSettings>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            precision: Precision::Double,
            filter: None,
            trajectory: TrajectoryConfig::default(),
            noise: NoiseSpec::default(),
            run: RunConfig::default(),
            odometry: None,
            sweep: None,
        }
    }
}

/// One seed to reproduce a whole command: derived stream seeds are fixed
/// offsets so they stay distinct but fully determined.
pub fn apply_master_seed(cfg: &mut ExperimentConfig, seed: u64) {
    cfg.trajectory.seed = seed;
    cfg.noise.seed = seed.wrapping_add(1);
    if let Some(o) = &mut cfg.odometry {
        o.seed = seed.wrapping_add(2);
    }
    if let Some(s) = &mut cfg.sweep {
        s.spec.seed_base = seed;
    }
}

#[derive(Default)]
struct SweepBuilder {
    parameter: Option<SweepParameter>,
    lo: Option<f64>,
    hi: Option<f64>,
    points: Option<usize>,
    trials: Option<usize>,
    seed_base: Option<u64>,
    filter: Option<FilterId>,
    touched: bool,
}

/// Accumulates configuration from stacked sources, then validates.
pub struct ConfigBuilder {
    cfg: ExperimentConfig,
    sweep: SweepBuilder,
    master_seed: Option<u64>,
    surface_normal_explicit: bool,
}

impl Default for ConfigBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl ConfigBuilder {
    pub fn new() -> Self {
        ConfigBuilder {
            cfg: ExperimentConfig::default(),
            sweep: SweepBuilder::default(),
            master_seed: None,
            surface_normal_explicit: false,
        }
    }

    /// Parses one config source on top of the current state.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.split('#').next().unwrap_or("").trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(name) = trimmed.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or(ConfigError::Parse {
                    line,
                    detail: "unterminated section header".into(),
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or(ConfigError::Parse {
                line,
                detail: format!("expected 'key = value', got '{trimmed}'"),
            })?;
            self.apply_key(&section, key.trim(), value.trim(), line)?;
        }
        Ok(())
    }

    fn apply_key(
        &mut self,
        section: &str,
        key: &str,
        value: &str,
        line: usize,
    ) -> Result<(), ConfigError> {
        let err = |detail: String| ConfigError::Value {
            line,
            key: key.to_string(),
            detail,
        };
        let f = |v: &str| -> Result<f64, ConfigError> {
            v.parse::<f64>()
                .map_err(|_| err(format!("'{v}' is not a number")))
        };
        let u = |v: &str| -> Result<u64, ConfigError> {
            v.parse::<u64>()
                .map_err(|_| err(format!("'{v}' is not a non-negative integer")))
        };
        let n = |v: &str| -> Result<usize, ConfigError> {
            v.parse::<usize>()
                .map_err(|_| err(format!("'{v}' is not a non-negative integer")))
        };
        fn vec_n<const N: usize>(
            v: &str,
            err: &impl Fn(String) -> ConfigError,
        ) -> Result<[f64; N], ConfigError> {
            let parts: Vec<f64> = v
                .split_whitespace()
                .map(|p| p.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| err(format!("'{v}' is not a list of numbers")))?;
            parts
                .try_into()
                .map_err(|_| err(format!("expected {N} numbers")))
        }
        let filter_id = |v: &str| -> Result<FilterId, ConfigError> {
            FilterId::parse(v).ok_or_else(|| {
                err(format!(
                    "unknown filter '{v}' (known: {})",
                    FilterId::ALL.map(|f| f.as_str()).join(", ")
                ))
            })
        };

        match (section, key) {
            ("run", "precision") => self.cfg.precision = Precision::parse(value).map_err(err)?,
            ("run", "filter") => self.cfg.filter = Some(filter_id(value)?),
            ("run", "seed") => self.master_seed = Some(u(value)?),

            ("trajectory", "duration") => self.cfg.trajectory.duration = f(value)?,
            ("trajectory", "rate") => self.cfg.trajectory.rate = f(value)?,
            ("trajectory", "accel_variation_target") => {
                self.cfg.trajectory.accel_variation_target = f(value)?
            }
            ("trajectory", "seed") => self.cfg.trajectory.seed = u(value)?,
            ("trajectory", "surface_normal") => {
                self.cfg.trajectory.surface_normal = vec_n::<3>(value, &err)?
            }
            ("trajectory", "omega_scale") => self.cfg.trajectory.omega_scale = f(value)?,
            ("trajectory", "smoothing") => self.cfg.trajectory.smoothing = f(value)?,
            ("trajectory", "initial_speed") => self.cfg.trajectory.initial_speed = f(value)?,

            ("noise", "gyro_bias") => self.cfg.noise.gyro_bias = vec_n::<3>(value, &err)?,
            ("noise", "gyro_noise_std") => self.cfg.noise.gyro_noise_std = f(value)?,
            ("noise", "accel_noise_std") => self.cfg.noise.accel_noise_std = f(value)?,
            ("noise", "mag_noise_std") => self.cfg.noise.mag_noise_std = f(value)?,
            ("noise", "seed") => self.cfg.noise.seed = u(value)?,

            ("filter", "process_noise") => self.cfg.run.process_noise = vec_n::<6>(value, &err)?,
            ("filter", "update_noise") => self.cfg.run.update_noise = vec_n::<6>(value, &err)?,
            ("filter", "init_cov") => self.cfg.run.init_cov = vec_n::<6>(value, &err)?,
            ("filter", "gamma") => self.cfg.run.gamma = f(value)?,
            ("filter", "wheel_noise") => self.cfg.run.wheel_noise = vec_n::<2>(value, &err)?,
            ("filter", "d_w") => self.cfg.run.d_w = f(value)?,
            ("filter", "literal_form") => {
                self.cfg.run.literal_form = value
                    .parse::<bool>()
                    .map_err(|_| err(format!("'{value}' is not true/false")))?
            }
            ("filter", "residual") => {
                // Convenience toggle between the two baseline variants.
                let id = match value {
                    "additive" => FilterId::MekfAdditive,
                    "multiplicative" => FilterId::MekfMultiplicative,
                    _ => return Err(err(format!("'{value}' is not additive/multiplicative"))),
                };
                if matches!(
                    self.cfg.filter,
                    None | Some(FilterId::MekfAdditive) | Some(FilterId::MekfMultiplicative)
                ) {
                    self.cfg.filter = Some(id);
                }
            }

            ("surface", "normal") => {
                let v = vec_n::<3>(value, &err)?;
                self.cfg.run.surface_normal = v;
                self.cfg.trajectory.surface_normal = v;
                self.surface_normal_explicit = true;
            }
            ("surface", "gravity") => self.cfg.run.gravity = vec_n::<3>(value, &err)?,
            ("surface", "field") => self.cfg.run.field = vec_n::<3>(value, &err)?,

            ("odometry", _) => {
                let o = self.cfg.odometry.get_or_insert_with(OdoRunSpec::default);
                match key {
                    "n" => o.n = n(value)?,
                    "dt" => o.dt = f(value)?,
                    "tilt" => o.tilt = f(value)?,
                    "speed" => o.speed = f(value)?,
                    "turn_rate" => o.turn_rate = f(value)?,
                    "accel_noise_std" => o.accel_noise_std = f(value)?,
                    "pressure_noise_std" => o.pressure_noise_std = f(value)?,
                    "wheel_slip_std" => o.wheel_slip_std = f(value)?,
                    "d_w" => {
                        o.d_w = f(value)?;
                        self.cfg.run.d_w = o.d_w;
                    }
                    "seed" => o.seed = u(value)?,
                    _ => return Err(err("unknown key in [odometry]".into())),
                }
            }

            ("sweep", _) => {
                self.sweep.touched = true;
                match key {
                    "parameter" => {
                        self.sweep.parameter = Some(SweepParameter::parse(value).ok_or_else(
                            || err(format!("unknown sweep parameter '{value}'")),
                        )?)
                    }
                    "lo" => self.sweep.lo = Some(f(value)?),
                    "hi" => self.sweep.hi = Some(f(value)?),
                    "points" => self.sweep.points = Some(n(value)?),
                    "trials" => self.sweep.trials = Some(n(value)?),
                    "seed_base" => self.sweep.seed_base = Some(u(value)?),
                    "filter" => self.sweep.filter = Some(filter_id(value)?),
                    _ => return Err(err("unknown key in [sweep]".into())),
                }
            }

            _ => {
                return Err(ConfigError::Parse {
                    line,
                    detail: format!("unknown key '{key}' in section '[{section}]'"),
                })
            }
        }
        Ok(())
    }

    /// Validates and finishes resolution: master seed, sweep defaults, and
    /// the odometry surface normal (derived from the tilt unless set).
    pub fn finish(mut self) -> Result<ExperimentConfig, ConfigError> {
        if self.sweep.touched {
            let parameter = self
                .sweep
                .parameter
                .ok_or(ConfigError::Invalid("[sweep] needs 'parameter'".into()))?;
            let lo = self
                .sweep
                .lo
                .ok_or(ConfigError::Invalid("[sweep] needs 'lo'".into()))?;
            let hi = self
                .sweep
                .hi
                .ok_or(ConfigError::Invalid("[sweep] needs 'hi'".into()))?;
            let points = self.sweep.points.unwrap_or(10);
            if points == 0 || self.sweep.trials == Some(0) {
                return Err(ConfigError::Invalid(
                    "sweep grid is empty (points and trials must be positive)".into(),
                ));
            }
            if !(lo > 0.0 && hi >= lo) {
                return Err(ConfigError::Invalid(
                    "sweep bounds must satisfy 0 < lo <= hi".into(),
                ));
            }
            self.cfg.sweep = Some(SweepSettings {
                spec: SweepSpec {
                    parameter,
                    lo,
                    hi,
                    points,
                    trials: self.sweep.trials.unwrap_or(5),
                    seed_base: self.sweep.seed_base.unwrap_or(1),
                },
                filter: self.sweep.filter.unwrap_or(FilterId::MekfAdditive),
            });
        }
        if let Some(seed) = self.master_seed {
            apply_master_seed(&mut self.cfg, seed);
        }
        if let Some(o) = &self.cfg.odometry {
            if !self.surface_normal_explicit {
                let n = surface_kf::eval::tilted_normal(o.tilt);
                self.cfg.run.surface_normal = n;
                self.cfg.trajectory.surface_normal = n;
            }
        }
        Ok(self.cfg)
    }
}

/// Built-in experiment presets, expressed in the config format itself.
pub fn preset_text(name: &str) -> Option<&'static str> {
    match name {
        "fig1" | "fig1-preset" => Some(
            "# max position error of the baseline filter vs trajectory agitation\n\
             [sweep]\n\
             parameter = accel_variation\n\
             lo = 1e-10\n\
             hi = 1e-1\n\
             points = 10\n\
             trials = 5\n\
             seed_base = 101\n\
             filter = mekf_additive\n\
             [trajectory]\n\
             duration = 20\n",
        ),
        "fig2" | "fig2-preset" => Some(
            "# baseline error floor vs update-noise diagonal under gyro bias\n\
             [sweep]\n\
             parameter = update_noise\n\
             lo = 1e-10\n\
             hi = 1e-1\n\
             points = 10\n\
             trials = 5\n\
             seed_base = 202\n\
             filter = mekf_additive\n\
             [trajectory]\n\
             duration = 20\n\
             accel_variation_target = 1e-3\n\
             [noise]\n\
             gyro_bias = 5.77e-3 5.77e-3 5.77e-3\n",
        ),
        "odo-line" => Some(
            "# level-line differential-drive run with pressure aiding\n\
             [odometry]\n\
             n = 2000\n\
             dt = 0.01\n\
             tilt = 0.25\n\
             speed = 0.2\n\
             turn_rate = 0\n\
             seed = 1\n\
             [run]\n\
             filter = odo_rev\n",
        ),
        _ => None,
    }
}

fn fmt_list(v: &[f64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Renders the resolved configuration back into the config format with every
/// field in a fixed order; the manifest hashes these bytes.
pub fn canonical(cfg: &ExperimentConfig) -> String {
    let mut s = String::new();
    s.push_str("[run]\n");
    s.push_str(&format!("precision = {}\n", cfg.precision.as_string()));
    if let Some(f) = cfg.filter {
        s.push_str(&format!("filter = {}\n", f.as_str()));
    }
    let t = &cfg.trajectory;
    s.push_str("[trajectory]\n");
    s.push_str(&format!("duration = {}\n", t.duration));
    s.push_str(&format!("rate = {}\n", t.rate));
    s.push_str(&format!(
        "accel_variation_target = {}\n",
        t.accel_variation_target
    ));
    s.push_str(&format!("seed = {}\n", t.seed));
    s.push_str(&format!("surface_normal = {}\n", fmt_list(&t.surface_normal)));
    s.push_str(&format!("omega_scale = {}\n", t.omega_scale));
    s.push_str(&format!("smoothing = {}\n", t.smoothing));
    s.push_str(&format!("initial_speed = {}\n", t.initial_speed));
    let z = &cfg.noise;
    s.push_str("[noise]\n");
    s.push_str(&format!("gyro_bias = {}\n", fmt_list(&z.gyro_bias)));
    s.push_str(&format!("gyro_noise_std = {}\n", z.gyro_noise_std));
    s.push_str(&format!("accel_noise_std = {}\n", z.accel_noise_std));
    s.push_str(&format!("mag_noise_std = {}\n", z.mag_noise_std));
    s.push_str(&format!("seed = {}\n", z.seed));
    let r = &cfg.run;
    s.push_str("[filter]\n");
    s.push_str(&format!("process_noise = {}\n", fmt_list(&r.process_noise)));
    s.push_str(&format!("update_noise = {}\n", fmt_list(&r.update_noise)));
    s.push_str(&format!("init_cov = {}\n", fmt_list(&r.init_cov)));
    s.push_str(&format!("gamma = {}\n", r.gamma));
    s.push_str(&format!("wheel_noise = {}\n", fmt_list(&r.wheel_noise)));
    s.push_str(&format!("d_w = {}\n", r.d_w));
    s.push_str(&format!("literal_form = {}\n", r.literal_form));
    s.push_str("[surface]\n");
    s.push_str(&format!("normal = {}\n", fmt_list(&r.surface_normal)));
    s.push_str(&format!("gravity = {}\n", fmt_list(&r.gravity)));
    s.push_str(&format!("field = {}\n", fmt_list(&r.field)));
    if let Some(o) = &cfg.odometry {
        s.push_str("[odometry]\n");
        s.push_str(&format!("n = {}\n", o.n));
        s.push_str(&format!("dt = {}\n", o.dt));
        s.push_str(&format!("tilt = {}\n", o.tilt));
        s.push_str(&format!("speed = {}\n", o.speed));
        s.push_str(&format!("turn_rate = {}\n", o.turn_rate));
        s.push_str(&format!("accel_noise_std = {}\n", o.accel_noise_std));
        s.push_str(&format!("pressure_noise_std = {}\n", o.pressure_noise_std));
        s.push_str(&format!("wheel_slip_std = {}\n", o.wheel_slip_std));
        s.push_str(&format!("d_w = {}\n", o.d_w));
        s.push_str(&format!("seed = {}\n", o.seed));
    }
    if let Some(w) = &cfg.sweep {
        s.push_str("[sweep]\n");
        s.push_str(&format!("parameter = {}\n", w.spec.parameter.as_str()));
        s.push_str(&format!("lo = {}\n", w.spec.lo));
        s.push_str(&format!("hi = {}\n", w.spec.hi));
        s.push_str(&format!("points = {}\n", w.spec.points));
        s.push_str(&format!("trials = {}\n", w.spec.trials));
        s.push_str(&format!("seed_base = {}\n", w.spec.seed_base));
        s.push_str(&format!("filter = {}\n", w.filter.as_str()));
    }
    s
}
