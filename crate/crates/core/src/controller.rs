//! Gated switching tracking law.
//!
//! ```text
//! u   = gate(e_1) * (k (e_n - e_n(t0)) + nu)
//! nu' = k (lambda e_n + alpha e_u)
//! ```
//!
//! The gate turns the input off whenever the output is above the reference,
//! leaving the plant's own decay to bring it down.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::StateVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerGains {
    pub k: f64,
    pub lambda: f64,
    pub alpha: f64,
}

impl ControllerGains {
    pub fn new(k: f64, lambda: f64, alpha: f64) -> Result<Self> {
        let g = Self { k, lambda, alpha };
        g.validate()?;
        Ok(g)
    }

    /// Gains used for the coagulation case studies.
    pub fn coagulation() -> Self {
        Self {
            k: 0.15,
            lambda: 0.1,
            alpha: 5.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("k", self.k),
            ("lambda", self.lambda),
            ("alpha", self.alpha),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, v, "gain must be finite and > 0"));
            }
        }
        Ok(())
    }
}

/// Frozen power-law delay estimate `tau_hat = gamma_hat * x_n(0)^(-k_d_hat)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayEstimate {
    pub gamma_hat: f64,
    pub k_d_hat: f64,
    pub tau_hat: f64,
    pub tau_tilde_bar: f64,
}

impl DelayEstimate {
    pub fn new(gamma_hat: f64, k_d_hat: f64, x_n0: f64, tau_tilde_bar: f64) -> Result<Self> {
        if !(gamma_hat > 0.0) {
            return Err(Error::param("gamma_hat", gamma_hat, "must be > 0"));
        }
        if !(k_d_hat > 0.0) {
            return Err(Error::param("k_d_hat", k_d_hat, "must be > 0"));
        }
        if !(x_n0 > 0.0) {
            return Err(Error::param(
                "x_n(0)",
                x_n0,
                "must be > 0 to form the estimate",
            ));
        }
        if !(tau_tilde_bar >= 0.0) {
            return Err(Error::param("tau_tilde_bar", tau_tilde_bar, "must be >= 0"));
        }
        Ok(Self {
            gamma_hat,
            k_d_hat,
            tau_hat: gamma_hat * x_n0.powf(-k_d_hat),
            tau_tilde_bar,
        })
    }
}

/// `sgn((sgn(e_1) + 1) / 2)` with `sgn(0) = 0`, so the gate is open for
/// `e_1 >= 0`.
pub fn gate(e1: f64) -> u8 {
    let inner = (signum0(e1) + 1.0) / 2.0;
    signum0(inner) as u8
}

fn signum0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub raw: f64,
    pub applied: f64,
    pub gate: u8,
    /// Gate open but the raw command was negative and got clamped to zero.
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerState {
    pub nu: f64,
    pub e_n_t0: f64,
    pub gate: u8,
}

impl ControllerState {
    /// Captures `e_n(t0)`; the compensator starts at `nu(t0) = 0`.
    pub fn init(e_n_t0: f64) -> Self {
        Self {
            nu: 0.0,
            e_n_t0,
            gate: 0,
        }
    }

    pub fn sync(&mut self, state: &StateVector, out: &ControlOutput) {
        self.nu = state.nu;
        self.gate = out.gate;
    }
}

pub fn control_output(
    cs: &ControllerState,
    g: &ControllerGains,
    e_n: f64,
    e1: f64,
) -> ControlOutput {
    control_output_with_nu(cs.e_n_t0, cs.nu, g, e_n, e1)
}

/// Same law with `nu` passed explicitly (integration stages carry their own).
pub fn control_output_with_nu(
    e_n_t0: f64,
    nu: f64,
    g: &ControllerGains,
    e_n: f64,
    e1: f64,
) -> ControlOutput {
    let gate = gate(e1);
    let raw = if gate == 1 {
        g.k * (e_n - e_n_t0) + nu
    } else {
        0.0
    };
    let clamped = raw < 0.0;
    ControlOutput {
        raw,
        applied: if clamped { 0.0 } else { raw },
        gate,
        clamped,
    }
}

pub fn nu_rate(g: &ControllerGains, e_n: f64, e_u: f64) -> f64 {
    g.k * (g.lambda * e_n + g.alpha * e_u)
}

/// `u' = gate(e_1) k e_a`; the impulsive terms of the signum derivative
/// cancel identically.
pub fn u_dot_model(g: &ControllerGains, e1: f64, e_a: f64) -> f64 {
    gate(e1) as f64 * g.k * e_a
}
