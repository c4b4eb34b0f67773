//! Sufficient gain conditions, auxiliary constants and the ultimate bound on
//! the tracking error, plus a grid search over the free analysis constants.
//!
//! ```text
//! eps2 < 2
//! lambda > alpha/(2 eps1) + 1/(2 eps2)
//! omega3 > 4 tau_hat (alpha eps1/2 + k^2/(4 omega1))
//! tbar   < (k alpha/8 - omega1 - omega2 - alpha/2 - omega3 k tau_hat) / (omega3 k)
//!
//! sigma = min{1, 1 - eps2/2, lambda - (alpha/(2 eps1) + 1/(2 eps2)),
//!             omega3/(4 tau_hat) - (alpha eps1/2 + k^2/(4 omega1)), k alpha/8}
//! Delta = 1/2 min{sigma/2, omega3 k^2/(4 omega1), omega3 k^2/(4 omega2), 1/(4 (tbar + tau_hat))}
//! bound = sqrt((2 c1^2 + k alpha^2 tbar^2 m^2) / (k alpha Delta))
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::controller::ControllerGains;
use crate::error::{Error, Result};
use crate::model::{CascadeParams, DelayLaw};
use crate::signals::ReferenceTrajectory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisParams {
    pub eps1: f64,
    pub eps2: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub omega3: f64,
    pub phi2: f64,
    pub tau_hat: f64,
    pub tau_tilde_bar: f64,
    /// Estimate of `sup |N_1|`.
    pub c1: f64,
    /// Estimate of `sup |u''|`.
    pub m: f64,
    pub psi: f64,
}

impl AnalysisParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eps1", self.eps1),
            ("eps2", self.eps2),
            ("omega1", self.omega1),
            ("omega2", self.omega2),
            ("omega3", self.omega3),
            ("phi2", self.phi2),
            ("tau_hat", self.tau_hat),
            ("psi", self.psi),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, v, "must be finite and > 0"));
            }
        }
        for (name, v) in [
            ("tau_tilde_bar", self.tau_tilde_bar),
            ("c1", self.c1),
            ("m", self.m),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(name, v, "must be finite and >= 0"));
            }
        }
        Ok(())
    }

    /// `k alpha / (1 - phi2)`; negative whenever `phi2 > 1`, undefined at 1.
    pub fn omega2_definitional(&self, g: &ControllerGains) -> Option<f64> {
        let den = 1.0 - self.phi2;
        (den != 0.0).then(|| g.k * g.alpha / den)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Eps2BelowTwo,
    LambdaDominates,
    Omega3Dominates,
    TauTildeAdmissible,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::Eps2BelowTwo,
        Condition::LambdaDominates,
        Condition::Omega3Dominates,
        Condition::TauTildeAdmissible,
    ];
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Eps2BelowTwo => "eps2 < 2",
            Condition::LambdaDominates => "lambda > alpha/(2 eps1) + 1/(2 eps2)",
            Condition::Omega3Dominates => "omega3 > 4 tau_hat (alpha eps1/2 + k^2/(4 omega1))",
            Condition::TauTildeAdmissible => {
                "tau_tilde_bar < (k alpha/8 - omega1 - omega2 - alpha/2 - omega3 k tau_hat)/(omega3 k)"
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub condition: Condition,
    pub holds: bool,
    /// Value the constrained quantity is compared against.
    pub required: f64,
    pub actual: f64,
}

impl ConditionCheck {
    /// Scale-free violation in `(0, 1]`, zero when the condition holds.
    pub fn violation(&self) -> f64 {
        if self.holds {
            return 0.0;
        }
        let den = self.required.abs() + self.actual.abs();
        if den == 0.0 {
            1.0
        } else {
            ((self.required - self.actual).abs() / den).min(1.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub checks: Vec<ConditionCheck>,
    pub feasible: bool,
}

impl ConditionReport {
    pub fn holds(&self, c: Condition) -> bool {
        self.checks.iter().any(|k| k.condition == c && k.holds)
    }

    pub fn violated(&self) -> impl Iterator<Item = &ConditionCheck> {
        self.checks.iter().filter(|k| !k.holds)
    }
}

pub fn check_conditions(g: &ControllerGains, a: &AnalysisParams) -> Result<ConditionReport> {
    g.validate()?;
    a.validate()?;
    Ok(conditions_unchecked(g, a))
}

fn conditions_unchecked(g: &ControllerGains, a: &AnalysisParams) -> ConditionReport {
    let lambda_req = g.alpha / (2.0 * a.eps1) + 1.0 / (2.0 * a.eps2);
    let omega3_req = 4.0 * a.tau_hat * (g.alpha * a.eps1 / 2.0 + g.k * g.k / (4.0 * a.omega1));
    let tbar_req =
        (g.k * g.alpha / 8.0 - a.omega1 - a.omega2 - g.alpha / 2.0 - a.omega3 * g.k * a.tau_hat)
            / (a.omega3 * g.k);
    let checks = vec![
        ConditionCheck {
            condition: Condition::Eps2BelowTwo,
            holds: a.eps2 < 2.0,
            required: 2.0,
            actual: a.eps2,
        },
        ConditionCheck {
            condition: Condition::LambdaDominates,
            holds: g.lambda > lambda_req,
            required: lambda_req,
            actual: g.lambda,
        },
        ConditionCheck {
            condition: Condition::Omega3Dominates,
            holds: a.omega3 > omega3_req,
            required: omega3_req,
            actual: a.omega3,
        },
        ConditionCheck {
            condition: Condition::TauTildeAdmissible,
            holds: a.tau_tilde_bar < tbar_req,
            required: tbar_req,
            actual: a.tau_tilde_bar,
        },
    ];
    let feasible = checks.iter().all(|c| c.holds);
    ConditionReport { checks, feasible }
}

pub fn compute_sigma(g: &ControllerGains, a: &AnalysisParams) -> f64 {
    [
        1.0,
        1.0 - a.eps2 / 2.0,
        g.lambda - (g.alpha / (2.0 * a.eps1) + 1.0 / (2.0 * a.eps2)),
        a.omega3 / (4.0 * a.tau_hat) - (g.alpha * a.eps1 / 2.0 + g.k * g.k / (4.0 * a.omega1)),
        g.k * g.alpha / 8.0,
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min)
}

pub fn compute_delta(g: &ControllerGains, a: &AnalysisParams, sigma: f64) -> f64 {
    let k2 = g.k * g.k;
    0.5 * [
        sigma / 2.0,
        a.omega3 * k2 / (4.0 * a.omega1),
        a.omega3 * k2 / (4.0 * a.omega2),
        1.0 / (4.0 * (a.tau_tilde_bar + a.tau_hat)),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min)
}

pub fn compute_uub(g: &ControllerGains, a: &AnalysisParams, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::Infeasible(format!(
            "Delta = {delta} is not positive"
        )));
    }
    let num =
        2.0 * a.c1 * a.c1 + g.k * g.alpha * g.alpha * a.tau_tilde_bar * a.tau_tilde_bar * a.m * a.m;
    Ok((num / (g.k * g.alpha * delta)).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub gains: ControllerGains,
    pub params: AnalysisParams,
    pub sigma: f64,
    pub delta: f64,
    /// Present only when `Delta > 0`.
    pub uub: Option<f64>,
    pub conditions: ConditionReport,
    pub feasible: bool,
    pub omega2_definitional: Option<f64>,
    pub phi2_floor: f64,
}

/// Evaluates everything for one parameter set. The delay-rate bound
/// `phi2 > d_n k_d gamma phi1^(-k_d)` must hold or no certificate is issued.
pub fn issue_certificate(
    g: &ControllerGains,
    a: &AnalysisParams,
    law: &DelayLaw,
    d_n: f64,
) -> Result<Certificate> {
    let phi2_floor = law.phi2_floor(d_n);
    if !(a.phi2 > phi2_floor) {
        return Err(Error::param(
            "phi2",
            a.phi2,
            format!("requires phi2 > d_n*k_d*gamma*phi1^-k_d = {phi2_floor}"),
        ));
    }
    let conditions = check_conditions(g, a)?;
    let sigma = compute_sigma(g, a);
    let delta = compute_delta(g, a, sigma);
    let uub = compute_uub(g, a, delta).ok();
    Ok(Certificate {
        gains: *g,
        params: *a,
        sigma,
        delta,
        uub,
        feasible: conditions.feasible,
        conditions,
        omega2_definitional: a.omega2_definitional(g),
        phi2_floor,
    })
}

/// Logarithmic grid applied to each free constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    pub refine: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lo: 1e-3,
            hi: 1e3,
            points: 13,
            refine: true,
        }
    }
}

impl GridSpec {
    fn values(&self) -> Vec<f64> {
        let (l0, l1) = (self.lo.log10(), self.hi.log10());
        let last = (self.points - 1).max(1) as f64;
        (0..self.points)
            .map(|i| 10f64.powf(l0 + (l1 - l0) * i as f64 / last))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum SearchOutcome {
    Feasible {
        params: AnalysisParams,
        sigma: f64,
        delta: f64,
        evaluated: usize,
    },
    Infeasible {
        /// Conditions that failed at every grid point.
        violated_everywhere: Vec<Condition>,
        /// Point with the fewest and smallest violations.
        closest: AnalysisParams,
        violated_at_closest: Vec<ConditionCheck>,
        evaluated: usize,
    },
}

impl SearchOutcome {
    pub fn is_feasible(&self) -> bool {
        matches!(self, SearchOutcome::Feasible { .. })
    }
}

/// Searches `(eps1, eps2, omega1, omega3, tau_tilde_bar)` on a log grid for
/// the largest `Delta` with every gain condition satisfied. `tau_hat`,
/// `phi2`, `omega2`, `c1`, `m` and `psi` are taken from `base`. Ties go to the
/// lexicographically first grid index, so the result is deterministic.
/// The `eps2` axis only keeps grid values below 2.
pub fn feasibility_search(
    g: &ControllerGains,
    base: &AnalysisParams,
    grid: &GridSpec,
) -> Result<SearchOutcome> {
    g.validate()?;
    if !(base.tau_hat > 0.0) {
        return Err(Error::param(
            "tau_hat",
            base.tau_hat,
            "search needs tau_hat > 0",
        ));
    }
    if grid.points < 2 || !(grid.lo > 0.0 && grid.hi > grid.lo) {
        return Err(Error::param(
            "grid",
            grid.points as f64,
            "need >= 2 points on 0 < lo < hi",
        ));
    }
    base.validate()?;

    let vals = grid.values();
    // eps2 >= 2 fails the first condition outright
    let eps2_vals: Vec<f64> = vals.iter().copied().filter(|&v| v < 2.0).collect();
    if eps2_vals.is_empty() {
        return Err(Error::param(
            "grid",
            grid.lo,
            "no grid value below eps2 = 2",
        ));
    }
    let axes: [&[f64]; 5] = [&vals, &eps2_vals, &vals, &vals, &vals];
    let at = |idx: [f64; 5]| AnalysisParams {
        eps1: idx[0],
        eps2: idx[1],
        omega1: idx[2],
        omega3: idx[3],
        tau_tilde_bar: idx[4],
        ..*base
    };

    let mut evaluated = 0usize;
    let mut best: Option<([usize; 5], AnalysisParams, f64, f64)> = None;
    let mut ever_holds = [false; 4];
    let mut closest: Option<(usize, f64, AnalysisParams, Vec<ConditionCheck>)> = None;

    let mut idx = [0usize; 5];
    loop {
        let a = at([0, 1, 2, 3, 4].map(|k| axes[k][idx[k]]));
        let report = conditions_unchecked(g, &a);
        evaluated += 1;
        for (slot, c) in ever_holds.iter_mut().zip(&report.checks) {
            *slot |= c.holds;
        }
        if report.feasible {
            let sigma = compute_sigma(g, &a);
            let delta = compute_delta(g, &a, sigma);
            if best.as_ref().is_none_or(|b| delta > b.3) {
                best = Some((idx, a, sigma, delta));
            }
        } else if best.is_none() {
            let count = report.violated().count();
            let size: f64 = report.violated().map(|c| c.violation()).sum();
            let better = closest
                .as_ref()
                .is_none_or(|(c0, s0, _, _)| count < *c0 || (count == *c0 && size < *s0));
            if better {
                closest = Some((count, size, a, report.violated().copied().collect()));
            }
        }

        // odometer over the five axes, last axis fastest
        let mut axis = 5;
        loop {
            if axis == 0 {
                break;
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < axes[axis].len() {
                break;
            }
            idx[axis] = 0;
            if axis == 0 {
                axis = usize::MAX;
                break;
            }
        }
        if axis == usize::MAX {
            break;
        }
    }

    if let Some((bidx, mut a_best, mut s_best, mut d_best)) = best {
        if grid.refine {
            // geometric half-steps around the best cell
            let axis_candidates: Vec<Vec<f64>> = bidx
                .iter()
                .zip(axes)
                .map(|(&i, v)| {
                    let mut c = Vec::with_capacity(3);
                    if i > 0 {
                        c.push((v[i - 1] * v[i]).sqrt());
                    }
                    c.push(v[i]);
                    if i + 1 < v.len() {
                        c.push((v[i] * v[i + 1]).sqrt());
                    }
                    c
                })
                .collect();
            for &e1 in &axis_candidates[0] {
                for &e2 in &axis_candidates[1] {
                    for &w1 in &axis_candidates[2] {
                        for &w3 in &axis_candidates[3] {
                            for &tb in &axis_candidates[4] {
                                let a = at([e1, e2, w1, w3, tb]);
                                evaluated += 1;
                                if !conditions_unchecked(g, &a).feasible {
                                    continue;
                                }
                                let sigma = compute_sigma(g, &a);
                                let delta = compute_delta(g, &a, sigma);
                                if delta > d_best {
                                    a_best = a;
                                    s_best = sigma;
                                    d_best = delta;
                                }
                            }
                        }
                    }
                }
            }
        }
        debug_assert!(conditions_unchecked(g, &a_best).feasible);
        return Ok(SearchOutcome::Feasible {
            params: a_best,
            sigma: s_best,
            delta: d_best,
            evaluated,
        });
    }

    let (_, _, closest, violated_at_closest) = closest.expect("grid is non-empty");
    Ok(SearchOutcome::Infeasible {
        violated_everywhere: Condition::ALL
            .iter()
            .zip(ever_holds)
            .filter(|(_, held)| !held)
            .map(|(c, _)| *c)
            .collect(),
        closest,
        violated_at_closest,
        evaluated,
    })
}

/// `N_1(t) = -f'(x_r) + x_r^(n+1)` where `f(x) = -d_n x_n + F(x)` is
/// evaluated on the stacked reference `[x_r, x_r', .., x_r^(n-1)]`.
pub fn n1_value(plant: &CascadeParams, reference: &ReferenceTrajectory, t: f64) -> Result<f64> {
    let n = plant.n();
    let mut xr = Vec::with_capacity(n + 2);
    reference.eval_upto(t, n + 1, &mut xr)?;
    let f_dot_map = match plant.f_map() {
        None => 0.0,
        Some(map) => map
            .time_derivative(&xr[..n], 1)
            .ok_or_else(|| Error::MissingDerivative {
                map: format!("F ({})", map.label()),
                order: 1,
            })?,
    };
    let f_dot = -plant.d_n() * xr[n] + f_dot_map;
    Ok(-f_dot + xr[n + 1])
}

/// `max |N_1|` sampled on `[0, t_end]` with spacing `dt`.
pub fn estimate_c1(
    plant: &CascadeParams,
    reference: &ReferenceTrajectory,
    t_end: f64,
    dt: f64,
) -> Result<f64> {
    let steps = (t_end / dt).round() as usize;
    let mut best = 0.0f64;
    for i in 0..=steps {
        best = best.max(n1_value(plant, reference, i as f64 * dt)?.abs());
    }
    Ok(best)
}
