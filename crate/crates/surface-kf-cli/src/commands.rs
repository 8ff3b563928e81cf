//! Command implementations. Each command resolves its configuration, runs at
//! the selected precision, writes its artifacts under the output directory,
//! and finishes with a manifest recording command, precision, seed, and a
//! hash of the resolved configuration so results are reproducible.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use surface_kf::eval::{
    generate_imu_run, generate_odometry_run, plot, run_filter, sweep, AxesSpec, EvalError,
    FilterId, ImuRunSpec, RunData, RunReport, SweepContext, SweepTable,
};
use surface_kf::scalar::Real;
use surface_kf::sensors::{
    load_imu_csv, load_odo_csv, load_truth_csv, save_imu_csv, save_odo_csv, save_truth_csv,
    CsvError, ImuSchema, OdoSchema,
};
use surface_kf::Wide;

use crate::config::{canonical, ConfigError, ExperimentConfig, Precision};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Csv(#[from] CsvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    /// 2 for usage/config problems, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Writes `config_resolved.txt` and `manifest.txt`; the hash covers the
/// resolved config bytes, so re-running with the same manifest inputs
/// reproduces every artifact.
fn write_manifest(
    out: &Path,
    command: &str,
    cfg: &ExperimentConfig,
    outputs: &[String],
) -> Result<(), CliError> {
    let resolved = canonical(cfg);
    std::fs::write(out.join("config_resolved.txt"), &resolved)?;
    let mut m = String::new();
    let _ = writeln!(m, "command = {command}");
    let _ = writeln!(m, "precision = {}", cfg.precision.as_string());
    let _ = writeln!(m, "seed = {}", cfg.trajectory.seed);
    let _ = writeln!(m, "config_sha256 = {}", sha256_hex(resolved.as_bytes()));
    let _ = writeln!(m, "output = config_resolved.txt");
    for o in outputs {
        let _ = writeln!(m, "output = {o}");
    }
    std::fs::write(out.join("manifest.txt"), m)?;
    Ok(())
}

/// Generates synthetic truth and sensor CSVs (wheel rows too when the config
/// has an `[odometry]` section).
pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    let outputs = match cfg.precision {
        Precision::Double => generate_typed::<f64>(cfg, out)?,
        Precision::Extended(bits) => {
            surface_kf::wide::set_precision(bits);
            generate_typed::<Wide>(cfg, out)?
        }
    };
    write_manifest(out, "generate", cfg, &outputs)
}

fn generate_typed<T: Real>(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<String>, CliError> {
    if let Some(spec) = &cfg.odometry {
        let data = generate_odometry_run::<T>(spec);
        save_truth_csv(&out.join("truth.csv"), &data.truth)?;
        save_imu_csv(&out.join("imu.csv"), &data.imu)?;
        save_odo_csv(
            &out.join("odo.csv"),
            data.odo.as_ref().expect("generator always fills wheel rows"),
        )?;
        Ok(vec!["truth.csv".into(), "imu.csv".into(), "odo.csv".into()])
    } else {
        let data = generate_imu_run::<T>(&ImuRunSpec {
            trajectory: cfg.trajectory.clone(),
            noise: cfg.noise.clone(),
            gravity: cfg.run.gravity,
            field: cfg.run.field,
        });
        save_truth_csv(&out.join("truth.csv"), &data.truth)?;
        save_imu_csv(&out.join("imu.csv"), &data.imu)?;
        Ok(vec!["truth.csv".into(), "imu.csv".into()])
    }
}

/// Runs the selected filter over a dataset directory written by `generate`
/// (or by an external adapter following the same schemas) and writes
/// `report.csv` plus per-step `diagnostics.csv`.
pub fn cmd_run(cfg: &ExperimentConfig, data_dir: &Path, out: &Path) -> Result<(), CliError> {
    let filter = cfg.filter.ok_or_else(|| {
        ConfigError::Invalid("no filter selected; pass --filter or set [run] filter".into())
    })?;
    std::fs::create_dir_all(out)?;
    let report = match cfg.precision {
        Precision::Double => run_typed::<f64>(cfg, filter, data_dir, out)?,
        Precision::Extended(bits) => {
            surface_kf::wide::set_precision(bits);
            run_typed::<Wide>(cfg, filter, data_dir, out)?
        }
    };
    let mut text = String::from("metric,value\n");
    let _ = writeln!(text, "samples,{}", report.position_errors.len());
    let _ = writeln!(text, "max_position_error,{}", report.max_position_error);
    let _ = writeln!(
        text,
        "final_orientation_error,{}",
        report.final_orientation_error
    );
    let _ = writeln!(text, "mean_accel_variation,{}", report.mean_accel_variation);
    let _ = writeln!(text, "correction_rate,{}", report.correction_rate);
    let _ = writeln!(
        text,
        "mean_correction_angle,{}",
        report.mean_correction_angle
    );
    std::fs::write(out.join("report.csv"), text)?;
    write_manifest(
        out,
        "run",
        cfg,
        &["report.csv".into(), "diagnostics.csv".into()],
    )
}

fn run_typed<T: Real>(
    cfg: &ExperimentConfig,
    filter: FilterId,
    data_dir: &Path,
    out: &Path,
) -> Result<RunReport, CliError> {
    let truth = load_truth_csv::<T>(&data_dir.join("truth.csv"))?;
    let imu = load_imu_csv::<T>(&data_dir.join("imu.csv"), &ImuSchema::default())?;
    let odo_path = data_dir.join("odo.csv");
    let odo = if odo_path.exists() {
        Some(load_odo_csv::<T>(&odo_path, &OdoSchema::default())?)
    } else {
        None
    };
    if truth.len() < 2 {
        return Err(CliError::Data(
            "dataset needs at least two samples to infer the time step".into(),
        ));
    }
    let dt = truth[1].t.clone() - &truth[0].t;
    let data = RunData {
        truth,
        imu,
        odo,
        dt,
    };
    let mut run_cfg = cfg.run.clone();
    run_cfg.diagnostics = Some(out.join("diagnostics.csv"));
    Ok(run_filter(filter, &data, &run_cfg)?)
}

/// Sweeps the configured parameter grid, writing the table, its chart, and
/// summary statistics.
pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let settings = cfg.sweep.as_ref().ok_or_else(|| {
        ConfigError::Invalid("sweep needs a [sweep] section or a preset".into())
    })?;
    std::fs::create_dir_all(out)?;
    let ctx = SweepContext {
        trajectory: cfg.trajectory.clone(),
        noise: cfg.noise.clone(),
        run: cfg.run.clone(),
    };
    let table: SweepTable = match cfg.precision {
        Precision::Double => sweep::<f64>(&settings.spec, settings.filter, &ctx)?,
        Precision::Extended(bits) => {
            surface_kf::wide::set_precision(bits);
            sweep::<Wide>(&settings.spec, settings.filter, &ctx)?
        }
    };
    let param = settings.spec.parameter.as_str();
    let table_name = format!("table_{param}.csv");
    table.save_csv(&out.join(&table_name))?;
    let chart_name = format!("chart_{param}.svg");
    let svg = plot(
        &table,
        &AxesSpec {
            title: format!("max position error vs {param}"),
            x_label: param.into(),
            ..AxesSpec::default()
        },
    )?;
    std::fs::write(out.join(&chart_name), svg)?;
    let stats = format!(
        "stat,value\nrank_correlation,{}\nlog_log_slope,{}\n",
        table.rank_correlation(),
        table.log_log_slope()
    );
    std::fs::write(out.join("stats.csv"), stats)?;
    write_manifest(
        out,
        "sweep",
        cfg,
        &[table_name, chart_name, "stats.csv".into()],
    )
}
