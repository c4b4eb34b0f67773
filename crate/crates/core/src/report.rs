//! Trajectory CSV, run summaries and certificates on disk.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::certify::{
    estimate_c1, feasibility_search, issue_certificate, Certificate, SearchOutcome,
};
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::sim::{
    delay_resolution, metrics, run_scenario, Counters, DelayResolution, Metrics, Observed,
    Trajectory, TrajectoryRow,
};

fn num(out: &mut String, v: f64) {
    // 12 significant digits
    let _ = write!(out, "{v:.11e}");
}

pub fn csv_line(row: &TrajectoryRow) -> String {
    let mut s = String::with_capacity(512);
    num(&mut s, row.t);
    for &v in row.x.iter().chain([row.x_r].iter()).chain(row.e.iter()) {
        s.push(',');
        num(&mut s, v);
    }
    for v in [
        row.e_u,
        row.e_a,
        row.u_raw,
        row.u_applied,
        row.g_u_tau,
        row.tau,
        row.tau_hat,
        row.nu,
    ] {
        s.push(',');
        num(&mut s, v);
    }
    let _ = write!(s, ",{},{}", row.gate, u8::from(row.clamp_flag));
    match row.lk {
        Some(lk) => {
            for v in [lk.v, lk.q1, lk.q2, lk.q3] {
                s.push(',');
                num(&mut s, v);
            }
        }
        None => s.push_str(",,,,"),
    }
    s
}

pub fn write_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{}", TrajectoryRow::header(traj.n).join(","))?;
    for row in traj.rows() {
        writeln!(w, "{}", csv_line(row))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateSummary {
    pub feasible: bool,
    pub sigma: f64,
    pub delta: f64,
    pub uub: Option<f64>,
    pub search_feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub config_sha256: String,
    pub dt: f64,
    pub t_end: f64,
    pub record_stride: usize,
    pub rows: usize,
    pub metrics: Metrics,
    pub counters: Counters,
    pub observed: Observed,
    /// `None` when the delay is disabled.
    pub delay_resolution: Option<DelayResolution>,
    pub certificate: CertificateSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub name: String,
    pub config_sha256: String,
    /// `max |N_1|` sampled along the reference.
    pub c1_estimate: f64,
    /// `max |u''|` from the simulated trace, when one was run.
    pub m_estimate: Option<f64>,
    pub certificate: Certificate,
    pub search: SearchOutcome,
}

pub fn certify_config(
    cfg: &ScenarioConfig,
    observed: Option<&Observed>,
) -> Result<CertificateReport> {
    let scenario = cfg.to_scenario()?;
    let c1_estimate = estimate_c1(
        &scenario.plant,
        &scenario.reference,
        cfg.sim.t_end,
        cfg.sim.dt,
    )?;
    let m_estimate = observed.map(|o| o.max_u_ddot);
    let params = cfg.analysis_params(
        scenario.estimate.tau_hat,
        c1_estimate,
        m_estimate.unwrap_or(0.0),
    );
    let certificate = issue_certificate(&cfg.gains, &params, &cfg.delay, scenario.plant.d_n())?;
    let search = feasibility_search(&cfg.gains, &params, &cfg.analysis.grid)?;
    Ok(CertificateReport {
        name: cfg.name.clone(),
        config_sha256: cfg.hash()?,
        c1_estimate,
        m_estimate,
        certificate,
        search,
    })
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub summary: Summary,
    pub certificate: CertificateReport,
}

/// Simulation, metrics and certificate for one config, without touching disk.
pub fn execute(cfg: &ScenarioConfig) -> Result<RunOutput> {
    let scenario = cfg.to_scenario()?;
    let trajectory = run_scenario(&scenario, &cfg.sim)?;
    let metrics = metrics(&trajectory, cfg.sim.settle_band)?;
    let certificate = certify_config(cfg, Some(&trajectory.observed))?;
    let delay_resolution = cfg
        .sim
        .enable_delay
        .then(|| delay_resolution(&scenario.delay, scenario.x_n_ceiling(&cfg.sim), cfg.sim.dt));
    let summary = Summary {
        name: cfg.name.clone(),
        config_sha256: certificate.config_sha256.clone(),
        dt: cfg.sim.dt,
        t_end: trajectory.t_end,
        record_stride: cfg.sim.record_stride,
        rows: trajectory.rows().len(),
        metrics,
        counters: trajectory.counters.clone(),
        observed: trajectory.observed.clone(),
        delay_resolution,
        certificate: CertificateSummary {
            feasible: certificate.certificate.feasible,
            sigma: certificate.certificate.sigma,
            delta: certificate.certificate.delta,
            uub: certificate.certificate.uub,
            search_feasible: certificate.search.is_feasible(),
        },
    };
    Ok(RunOutput {
        trajectory,
        summary,
        certificate,
    })
}

#[derive(Debug, Clone)]
pub struct WrittenFiles {
    pub trajectory: PathBuf,
    pub summary: PathBuf,
    pub certificate: PathBuf,
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Runs `cfg` and writes `<name>_trajectory.csv`, `<name>_summary.json` and
/// `<name>_certificate.json` into `out_dir`.
pub fn run_command(cfg: &ScenarioConfig, out_dir: &Path) -> Result<(RunOutput, WrittenFiles)> {
    cfg.validate()?;
    let out = execute(cfg)?;
    fs::create_dir_all(out_dir)?;
    let files = WrittenFiles {
        trajectory: out_dir.join(format!("{}_trajectory.csv", cfg.name)),
        summary: out_dir.join(format!("{}_summary.json", cfg.name)),
        certificate: out_dir.join(format!("{}_certificate.json", cfg.name)),
    };
    write_csv(&out.trajectory, &files.trajectory)?;
    write_json(&out.summary, &files.summary)?;
    write_json(&out.certificate, &files.certificate)?;
    Ok((out, files))
}
