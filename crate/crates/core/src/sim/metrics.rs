use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::error::{Error, Result};

/// Fraction of the horizon treated as the "ultimate" tail.
pub const ULTIMATE_TAIL: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Trapezoidal integral of `e_1^2` over the recorded grid.
    pub ise: f64,
    /// `max |e_1|` over the final 20% of the horizon.
    pub ultimate_band: f64,
    /// First time after which `|e_1|` stays inside `settle_band`.
    pub settling_time: Option<f64>,
    pub settle_band: f64,
}

pub fn metrics(traj: &Trajectory, settle_band: f64) -> Result<Metrics> {
    let rows = traj.rows();
    let (first, last) = match (rows.first(), rows.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::EmptyTrajectory),
    };
    let ise = rows
        .windows(2)
        .map(|w| 0.5 * (w[0].e1().powi(2) + w[1].e1().powi(2)) * (w[1].t - w[0].t))
        .sum();

    let tail_start = last.t - ULTIMATE_TAIL * (last.t - first.t);
    let ultimate_band = max_abs_e1(traj, tail_start, last.t);

    let settling_time = match rows.iter().rposition(|r| r.e1().abs() > settle_band) {
        None => Some(first.t),
        Some(i) if i + 1 < rows.len() => Some(rows[i + 1].t),
        Some(_) => None,
    };

    Ok(Metrics {
        ise,
        ultimate_band,
        settling_time,
        settle_band,
    })
}

/// `max |e_1|` over recorded rows with `from <= t <= to`.
pub fn max_abs_e1(traj: &Trajectory, from: f64, to: f64) -> f64 {
    traj.rows()
        .iter()
        .filter(|r| r.t >= from - 1e-9 && r.t <= to + 1e-9)
        .map(|r| r.e1().abs())
        .fold(0.0, f64::max)
}
