//! Fixed-step closed-loop simulation of the delayed, saturated cascade.
//!
//! The integrated state is `(x_1..x_n, nu)`. Each RK4 stage evaluates the
//! delay from the stage value of `x_n`, reads the applied input at the lagged
//! time from the history, saturates it and feeds the plant. After a step is
//! committed the control at the new time is computed and appended to the
//! history, so the history always lags the state by at most one step.

mod integrator;
mod metrics;
mod monitor;

use std::collections::VecDeque;

pub use integrator::{integrate_constant_input, rk4_step, DelaySystem, ScalarLag, StageInput};
pub use metrics::{max_abs_e1, metrics, Metrics, ULTIMATE_TAIL};
pub use monitor::{lyapunov_eval, LkValues, LkWeights, MonitorPoint, MonitorSample};

use serde::{Deserialize, Serialize};

use crate::controller::{
    control_output_with_nu, nu_rate, u_dot_model, ControlOutput, ControllerGains, ControllerState,
    DelayEstimate,
};
use crate::errcascade::{
    compute_coefficients, errors_from_e1_derivatives, CascadeCoefficients, ErrorFrame,
};
use crate::error::{Error, Result};
use crate::model::{
    eval_delay, eval_saturation, rhs_into, x1_derivative_chain, CascadeParams, DelayLaw,
    SaturationParams, StateVector,
};
use crate::signals::{InputHistory, ReferenceTrajectory, Side};

/// States may dip this far below zero from rounding before being clamped.
pub const POSITIVITY_TOL: f64 = 1e-9;
/// Default divergence tripwire on `|z|`.
pub const DEFAULT_PSI: f64 = 1e7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub enable_saturation: bool,
    pub enable_delay: bool,
    pub enable_controller: bool,
    pub record_stride: usize,
    pub monitor_enabled: bool,
    pub lk_weights: LkWeights,
    /// Bound on `|z|`; `None` disables the tripwire.
    pub psi: Option<f64>,
    pub settle_band: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            t_end: 100.0,
            enable_saturation: true,
            enable_delay: true,
            enable_controller: true,
            record_stride: 10,
            monitor_enabled: true,
            lk_weights: LkWeights::default(),
            psi: Some(DEFAULT_PSI),
            settle_band: 20.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::param("dt", self.dt, "step must be finite and > 0"));
        }
        if !(self.t_end > self.dt && self.t_end.is_finite()) {
            return Err(Error::param("t_end", self.t_end, "horizon must exceed dt"));
        }
        if self.record_stride == 0 {
            return Err(Error::param("record_stride", 0.0, "must be >= 1"));
        }
        if let Some(psi) = self.psi {
            if !(psi > 0.0) {
                return Err(Error::param("psi", psi, "must be > 0"));
            }
        }
        if !(self.settle_band >= 0.0) {
            return Err(Error::param(
                "settle_band",
                self.settle_band,
                "must be >= 0",
            ));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

/// Whether `dt` resolves the shortest delay the plant can produce.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayResolution {
    pub tau_min: f64,
    pub dt_limit: f64,
    pub resolved: bool,
}

/// `dt <= tau_min / 5` with `tau_min = gamma * x_n_ceiling^(-k_d)`.
pub fn delay_resolution(law: &DelayLaw, x_n_ceiling: f64, dt: f64) -> DelayResolution {
    let tau_min = law.gamma * x_n_ceiling.powf(-law.k_d);
    let dt_limit = tau_min / 5.0;
    DelayResolution {
        tau_min,
        dt_limit,
        resolved: dt <= dt_limit,
    }
}

/// Everything that defines a closed-loop run apart from numerics.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub plant: CascadeParams,
    pub saturation: SaturationParams,
    pub delay: DelayLaw,
    pub estimate: DelayEstimate,
    pub gains: ControllerGains,
    pub reference: ReferenceTrajectory,
    pub x0: Vec<f64>,
}

impl Scenario {
    pub fn validate(&self, cfg: &SimConfig) -> Result<()> {
        let n = self.plant.n();
        if self.x0.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.x0.len(),
            });
        }
        for &v in &self.x0 {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(
                    "x0",
                    v,
                    "initial states must be finite and >= 0",
                ));
            }
        }
        self.saturation.validate()?;
        self.delay.validate()?;
        self.gains.validate()?;
        self.reference.supports_plant_order(n)?;
        if cfg.enable_delay && !(self.x0[n - 1] > self.delay.phi1) {
            return Err(Error::param(
                "x0",
                self.x0[n - 1],
                format!("x_n(0) must exceed phi1 = {}", self.delay.phi1),
            ));
        }
        Ok(())
    }

    /// Upper bound on `x_n` used for the step-size check: with saturation the
    /// linear part settles at `beta / d_n`.
    pub fn x_n_ceiling(&self, cfg: &SimConfig) -> f64 {
        let x_n0 = *self.x0.last().expect("validated");
        let d_n = self.plant.d_n();
        if cfg.enable_saturation && d_n > 0.0 && self.plant.f_map().is_none() {
            x_n0.max(self.saturation.beta / d_n)
        } else {
            x_n0
        }
    }
}

/// Closed-loop signals at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopSignals {
    pub t: f64,
    pub x_r: f64,
    pub e: Vec<f64>,
    pub e_n_dot: f64,
    pub e_u: f64,
    pub e_a: f64,
    pub control: ControlOutput,
    pub g_u_tau: f64,
    pub tau: f64,
    pub nu_dot: f64,
    pub dx: Vec<f64>,
}

impl LoopSignals {
    pub fn frame(&self) -> ErrorFrame {
        ErrorFrame {
            t: self.t,
            e: self.e.clone(),
            e_u: self.e_u,
            e_a: self.e_a,
        }
    }
}

/// The augmented `(x, nu)` vector field.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    scenario: Scenario,
    config: SimConfig,
    coeffs: CascadeCoefficients,
    e_n_t0: f64,
}

impl ClosedLoop {
    pub fn new(scenario: Scenario, config: SimConfig) -> Result<Self> {
        scenario.validate(&config)?;
        config.validate()?;
        let coeffs = compute_coefficients(scenario.plant.n());
        let mut sys = Self {
            scenario,
            config,
            coeffs,
            e_n_t0: 0.0,
        };
        let x0 = sys.scenario.x0.clone();
        let e = sys.errors(0.0, &x0)?;
        sys.e_n_t0 = *e.last().expect("non-empty");
        Ok(sys)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn e_n_t0(&self) -> f64 {
        self.e_n_t0
    }

    fn errors(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        crate::errcascade::compute_errors(
            &self.coeffs,
            &self.scenario.plant,
            x,
            &self.scenario.reference,
            t,
        )
    }

    pub fn evaluate(
        &self,
        t: f64,
        x: &[f64],
        nu: f64,
        input: &StageInput<'_>,
    ) -> Result<LoopSignals> {
        let sc = &self.scenario;
        let cfg = &self.config;
        let n = sc.plant.n();

        let mut xr = Vec::with_capacity(n + 1);
        sc.reference.eval_upto(t, n, &mut xr)?;
        let mut e1d = Vec::with_capacity(n);
        for (j, &r) in xr.iter().take(n).enumerate() {
            e1d.push(r - x1_derivative_chain(&sc.plant, x, None, j)?);
        }
        let e = errors_from_e1_derivatives(&self.coeffs, &e1d);
        let e1 = e[0];
        let e_n = e[n - 1];

        let control = if cfg.enable_controller {
            control_output_with_nu(self.e_n_t0, nu, &sc.gains, e_n, e1)
        } else {
            ControlOutput {
                raw: 0.0,
                applied: 0.0,
                gate: 0,
                clamped: false,
            }
        };

        let (tau, delayed) = if cfg.enable_delay {
            let tau = eval_delay(&sc.delay, x[n - 1])?;
            (tau, input.at(t - tau))
        } else {
            (0.0, control.applied)
        };
        let g_u_tau = if cfg.enable_saturation {
            eval_saturation(&sc.saturation, delayed)
        } else {
            delayed
        };

        // e_n' needs x_1^(n), which carries the delayed input.
        let x1n = x1_derivative_chain(&sc.plant, x, Some(g_u_tau), n)?;
        let row = self.coeffs.row(n);
        let mut e_n_dot = 0.0;
        for j in 0..n {
            let x1_next = if j + 1 < n {
                xr[j + 1] - e1d[j + 1]
            } else {
                x1n
            };
            e_n_dot += row[j] as f64 * (xr[j + 1] - x1_next);
        }

        let e_u = input.at(t - sc.estimate.tau_hat) - control.applied;
        let g = &sc.gains;
        let e_a = e_n_dot + g.lambda * e_n + g.alpha * e_u;
        let nu_dot = if cfg.enable_controller {
            nu_rate(g, e_n, e_u)
        } else {
            0.0
        };

        let mut dx = vec![0.0; n];
        rhs_into(&sc.plant, x, g_u_tau, &mut dx)?;

        Ok(LoopSignals {
            t,
            x_r: xr[0],
            e,
            e_n_dot,
            e_u,
            e_a,
            control,
            g_u_tau,
            tau,
            nu_dot,
            dx,
        })
    }
}

impl DelaySystem for ClosedLoop {
    fn dim(&self) -> usize {
        self.scenario.plant.n() + 1
    }

    fn derivative(&self, t: f64, y: &[f64], input: &StageInput<'_>, dy: &mut [f64]) -> Result<()> {
        let n = self.scenario.plant.n();
        let s = self.evaluate(t, &y[..n], y[n], input)?;
        dy[..n].copy_from_slice(&s.dx);
        dy[n] = s.nu_dot;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub x: Vec<f64>,
    pub x_r: f64,
    pub e: Vec<f64>,
    pub e_u: f64,
    pub e_a: f64,
    pub u_raw: f64,
    pub u_applied: f64,
    pub g_u_tau: f64,
    pub tau: f64,
    pub tau_hat: f64,
    pub nu: f64,
    pub gate: u8,
    pub clamp_flag: bool,
    pub lk: Option<LkValues>,
}

impl TrajectoryRow {
    pub fn e1(&self) -> f64 {
        self.e[0]
    }

    pub fn header(n: usize) -> Vec<String> {
        let mut cols = vec!["t".to_string()];
        cols.extend((1..=n).map(|i| format!("x{i}")));
        cols.push("x_r".into());
        cols.extend((1..=n).map(|i| format!("e{i}")));
        cols.extend(
            [
                "e_u",
                "e_a",
                "u_raw",
                "u_applied",
                "g_u_tau",
                "tau",
                "tau_hat",
                "nu",
                "gate",
                "clamp_flag",
                "V",
                "Q1",
                "Q2",
                "Q3",
            ]
            .map(String::from),
        );
        cols
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub steps: usize,
    /// Gate transitions in either direction.
    pub switches: usize,
    /// Completed on-phases (gate 1 -> 0).
    pub on_off_cycles: usize,
    /// Committed steps where the raw command was clamped to zero.
    pub clamp_steps: usize,
    /// Committed steps where a state rounded below zero was reset.
    pub positivity_clamps: usize,
}

/// Quantities observed along the run that stand in for analysis constants.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Observed {
    pub min_state: f64,
    pub min_applied_u: f64,
    pub max_applied_u: f64,
    pub max_g_u_tau: f64,
    pub max_z_norm: f64,
    pub max_tau_tilde: f64,
    /// `max |u''|` between switches, from differences of the `u'` model.
    pub max_u_ddot: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub name: String,
    pub n: usize,
    pub dt: f64,
    pub record_stride: usize,
    pub t_end: f64,
    rows: Vec<TrajectoryRow>,
    pub counters: Counters,
    pub observed: Observed,
}

impl Trajectory {
    pub fn from_rows(name: impl Into<String>, n: usize, dt: f64, rows: Vec<TrajectoryRow>) -> Self {
        let t_end = rows.last().map_or(0.0, |r| r.t);
        Self {
            name: name.into(),
            n,
            dt,
            record_stride: 1,
            t_end,
            rows,
            counters: Counters::default(),
            observed: Observed::default(),
        }
    }

    pub fn rows(&self) -> &[TrajectoryRow] {
        &self.rows
    }

    pub fn x1(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(|r| r.x[0])
    }
}

/// Stepwise driver for one closed-loop run.
pub struct Simulation {
    sys: ClosedLoop,
    history: InputHistory,
    controller: ControllerState,
    state: StateVector,
    signals: LoopSignals,
    monitor: VecDeque<MonitorSample>,
    step: usize,
    counters: Counters,
    observed: Observed,
    lookback: f64,
}

impl Simulation {
    pub fn new(scenario: Scenario, config: SimConfig) -> Result<Self> {
        let sys = ClosedLoop::new(scenario, config)?;
        let x0 = sys.scenario.x0.clone();
        let mut history = InputHistory::new(0.0);
        let signals = sys.evaluate(0.0, &x0, 0.0, &StageInput::new(&history, Side::Left))?;
        history.append(0.0, signals.control.applied)?;
        let mut controller = ControllerState::init(sys.e_n_t0);
        let state = StateVector::new(x0, 0.0, 0.0);
        controller.sync(&state, &signals.control);

        let sc = &sys.scenario;
        let lookback = if sys.config.enable_delay {
            sc.delay.tau_max()
        } else {
            0.0
        } + sc.estimate.tau_hat
            + sc.estimate.tau_tilde_bar
            + 10.0 * sys.config.dt;

        let mut sim = Self {
            sys,
            history,
            controller,
            state,
            signals,
            monitor: VecDeque::new(),
            step: 0,
            counters: Counters::default(),
            observed: Observed {
                min_state: f64::INFINITY,
                min_applied_u: f64::INFINITY,
                ..Observed::default()
            },
            lookback,
        };
        sim.observe(None)?;
        Ok(sim)
    }

    pub fn state(&self) -> &StateVector {
        &self.state
    }

    pub fn signals(&self) -> &LoopSignals {
        &self.signals
    }

    pub fn history(&self) -> &InputHistory {
        &self.history
    }

    pub fn controller(&self) -> &ControllerState {
        &self.controller
    }

    pub fn system(&self) -> &ClosedLoop {
        &self.sys
    }

    pub fn time(&self) -> f64 {
        self.state.t
    }

    /// Advances one step of size `dt` and commits the new control sample.
    pub fn step(&mut self) -> Result<()> {
        let cfg = &self.sys.config;
        let n = self.sys.scenario.plant.n();
        let t = self.step as f64 * cfg.dt;
        let t_next = (self.step + 1) as f64 * cfg.dt;

        let mut y = self.state.x.clone();
        y.push(self.state.nu);
        let mut y = rk4_step(&self.sys, t, t_next, &y, &self.history)?;

        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                t: t_next,
                what: "state",
            });
        }
        let mut clamped_any = false;
        for (i, v) in y.iter_mut().take(n).enumerate() {
            if *v < 0.0 {
                if *v < -POSITIVITY_TOL {
                    return Err(Error::PositivityViolation {
                        t: t_next,
                        index: i + 1,
                        value: *v,
                    });
                }
                *v = 0.0;
                clamped_any = true;
            }
        }
        if clamped_any {
            self.counters.positivity_clamps += 1;
        }
        let nu = y.pop().expect("augmented state");
        let state = StateVector::new(y, nu, t_next);
        if cfg.enable_delay {
            state.check_floor(self.sys.scenario.delay.phi1)?;
        }

        let signals = self.sys.evaluate(
            t_next,
            &state.x,
            state.nu,
            &StageInput::new(&self.history, Side::Left),
        )?;
        if !signals.e_a.is_finite() || !signals.control.applied.is_finite() {
            return Err(Error::NonFinite {
                t: t_next,
                what: "control signal",
            });
        }
        self.history.append(t_next, signals.control.applied)?;

        let prev = std::mem::replace(&mut self.signals, signals);
        self.state = state;
        self.controller.sync(&self.state, &self.signals.control);
        self.step += 1;
        self.counters.steps += 1;
        self.observe(Some(&prev))?;

        let cut = t_next - self.lookback;
        self.history.prune_before(cut);
        while self.monitor.len() > 2 && self.monitor[1].t <= cut {
            self.monitor.pop_front();
        }
        Ok(())
    }

    fn observe(&mut self, prev: Option<&LoopSignals>) -> Result<()> {
        let s = &self.signals;
        let sc = &self.sys.scenario;
        let cfg = &self.sys.config;
        let u_dot = if cfg.enable_controller {
            u_dot_model(&sc.gains, s.e[0], s.e_a)
        } else {
            0.0
        };

        if let Some(p) = prev {
            if p.control.gate != s.control.gate {
                self.counters.switches += 1;
                if p.control.gate == 1 {
                    self.counters.on_off_cycles += 1;
                }
            }
            if let Some(last) = self.monitor.back() {
                let same_phase =
                    p.control.gate == s.control.gate && !p.control.clamped && !s.control.clamped;
                if same_phase {
                    let udd = (u_dot - last.u_dot) / (s.t - last.t);
                    self.observed.max_u_ddot = self.observed.max_u_ddot.max(udd.abs());
                }
            }
        }
        if s.control.clamped {
            self.counters.clamp_steps += 1;
        }

        let z = s.frame().z_norm();
        if let Some(psi) = cfg.psi {
            if z >= psi {
                return Err(Error::Divergence {
                    t: s.t,
                    norm: z,
                    psi,
                });
            }
        }
        let o = &mut self.observed;
        o.max_z_norm = o.max_z_norm.max(z);
        o.min_state = self.state.x.iter().copied().fold(o.min_state, f64::min);
        o.min_applied_u = o.min_applied_u.min(s.control.applied);
        o.max_applied_u = o.max_applied_u.max(s.control.applied);
        o.max_g_u_tau = o.max_g_u_tau.max(s.g_u_tau);
        o.max_tau_tilde = o.max_tau_tilde.max((s.tau - sc.estimate.tau_hat).abs());

        self.monitor.push_back(MonitorSample {
            t: s.t,
            e_a: s.e_a,
            u_dot,
        });
        Ok(())
    }

    /// Row for the current committed state, including the functional when
    /// the monitor is on.
    pub fn record(&mut self) -> Result<TrajectoryRow> {
        let s = &self.signals;
        let sc = &self.sys.scenario;
        let cfg = &self.sys.config;
        let lk = if cfg.monitor_enabled {
            let window = self.monitor.make_contiguous();
            let at = MonitorPoint {
                t: s.t,
                e: &s.e,
                e_u: s.e_u,
                e_a: s.e_a,
                tau: s.tau,
            };
            Some(lyapunov_eval(
                window,
                &at,
                &cfg.lk_weights,
                sc.estimate.tau_hat,
                sc.estimate.tau_tilde_bar,
                0.0,
            )?)
        } else {
            None
        };
        Ok(TrajectoryRow {
            t: s.t,
            x: self.state.x.clone(),
            x_r: s.x_r,
            e: s.e.clone(),
            e_u: s.e_u,
            e_a: s.e_a,
            u_raw: s.control.raw,
            u_applied: s.control.applied,
            g_u_tau: s.g_u_tau,
            tau: s.tau,
            tau_hat: sc.estimate.tau_hat,
            nu: self.state.nu,
            gate: s.control.gate,
            clamp_flag: s.control.clamped,
            lk,
        })
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn observed(&self) -> &Observed {
        &self.observed
    }
}

/// Full run from `t = 0` to `t_end`. Bit-for-bit deterministic.
pub fn run_scenario(scenario: &Scenario, config: &SimConfig) -> Result<Trajectory> {
    let mut sim = Simulation::new(scenario.clone(), config.clone())?;
    let steps = config.steps();
    let mut rows = Vec::with_capacity(steps / config.record_stride + 1);
    rows.push(sim.record()?);
    for i in 1..=steps {
        sim.step()?;
        if i % config.record_stride == 0 {
            rows.push(sim.record()?);
        }
    }
    Ok(Trajectory {
        name: scenario.name.clone(),
        n: scenario.plant.n(),
        dt: config.dt,
        record_stride: config.record_stride,
        t_end: steps as f64 * config.dt,
        rows,
        counters: sim.counters.clone(),
        observed: sim.observed.clone(),
    })
}
