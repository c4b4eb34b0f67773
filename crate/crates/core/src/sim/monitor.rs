//! Lyapunov–Krasovskii functional evaluated along a simulated trajectory.
//!
//! ```text
//! Q1 = w1 int_{t-tau_hat}^{t} e_a^2
//! Q2 = w2 int_{t-tau}^{t} e_a^2
//! Q3 = w3 int_{t-L}^{t} int_{s}^{t} u'^2 dtheta ds,   L = tau_tilde_bar + tau_hat
//! V  = 1/2 sum e_i^2 + 1/2 e_a^2 + 1/2 e_u^2 + Q1 + Q2 + Q3
//! ```
//!
//! The double integral is folded into a single weighted one,
//! `int_{t-L}^{t} (theta - t + L) u'(theta)^2 dtheta`. Everything is
//! trapezoidal on the sample grid with linear interpolation at window edges.
//! The monitor is diagnostic only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LkWeights {
    pub omega1: f64,
    pub omega2: f64,
    pub omega3: f64,
}

impl Default for LkWeights {
    fn default() -> Self {
        Self {
            omega1: 0.1,
            omega2: 0.1,
            omega3: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorSample {
    pub t: f64,
    pub e_a: f64,
    pub u_dot: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LkValues {
    pub v: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

/// Instantaneous errors and delay at the evaluation time.
#[derive(Debug, Clone, Copy)]
pub struct MonitorPoint<'a> {
    pub t: f64,
    pub e: &'a [f64],
    pub e_u: f64,
    pub e_a: f64,
    pub tau: f64,
}

/// `samples` must be time-ordered and end at `at.t`. Windows reaching past
/// the oldest sample are an error unless that sample is the trajectory
/// origin, before which every signal is zero.
pub fn lyapunov_eval(
    samples: &[MonitorSample],
    at: &MonitorPoint<'_>,
    weights: &LkWeights,
    tau_hat: f64,
    tau_tilde_bar: f64,
    origin: f64,
) -> Result<LkValues> {
    let ea2 = |s: &MonitorSample| s.e_a * s.e_a;
    let ud2 = |s: &MonitorSample| s.u_dot * s.u_dot;
    let t = at.t;

    let q1 = weights.omega1 * window_integral(samples, t - tau_hat, t, origin, |_| 1.0, ea2)?;
    let q2 = weights.omega2 * window_integral(samples, t - at.tau, t, origin, |_| 1.0, ea2)?;
    let len = tau_tilde_bar + tau_hat;
    let q3 = weights.omega3
        * window_integral(samples, t - len, t, origin, |theta| theta - t + len, ud2)?;

    let quad: f64 = at.e.iter().map(|e| e * e).sum::<f64>() + at.e_a * at.e_a + at.e_u * at.e_u;
    Ok(LkValues {
        v: 0.5 * quad + q1 + q2 + q3,
        q1,
        q2,
        q3,
    })
}

fn window_integral(
    samples: &[MonitorSample],
    from: f64,
    to: f64,
    origin: f64,
    weight: impl Fn(f64) -> f64,
    value: impl Fn(&MonitorSample) -> f64,
) -> Result<f64> {
    let Some(first) = samples.first() else {
        return Ok(0.0);
    };
    if from >= to {
        return Ok(0.0);
    }
    let from = if from < first.t {
        if first.t > origin {
            return Err(Error::InsufficientWindow {
                at: to,
                need_from: from,
                have_from: first.t,
            });
        }
        first.t
    } else {
        from
    };

    let start = samples.partition_point(|s| s.t <= from);
    let mut acc = 0.0;
    let mut prev_t = from;
    let mut prev_f = if start == 0 {
        value(&samples[0])
    } else if start == samples.len() {
        value(&samples[start - 1])
    } else {
        let (a, b) = (&samples[start - 1], &samples[start]);
        let w = (from - a.t) / (b.t - a.t);
        value(a) + w * (value(b) - value(a))
    } * weight(from);
    for s in &samples[start..] {
        if s.t > to {
            break;
        }
        let f = value(s) * weight(s.t);
        acc += 0.5 * (prev_f + f) * (s.t - prev_t);
        prev_t = s.t;
        prev_f = f;
    }
    Ok(acc)
}
