//! Classical RK4 for systems whose right-hand side reads a recorded input
//! at delayed times.

use crate::error::Result;
use crate::signals::{InputHistory, Side};

/// Read access to the input record for one integration stage.
#[derive(Debug, Clone, Copy)]
pub struct StageInput<'a> {
    history: &'a InputHistory,
    side: Side,
}

impl<'a> StageInput<'a> {
    pub fn new(history: &'a InputHistory, side: Side) -> Self {
        Self { history, side }
    }

    pub fn at(&self, theta: f64) -> f64 {
        self.history.sample_from(theta, self.side)
    }
}

pub trait DelaySystem {
    fn dim(&self) -> usize;

    fn derivative(&self, t: f64, y: &[f64], input: &StageInput<'_>, dy: &mut [f64]) -> Result<()>;
}

/// One RK4 step from `t` to `t_next`.
///
/// The first stage sees the input as it is just after `t` and the last stage
/// as it is just before `t_next`, so a jump in the delayed input that falls
/// on a step boundary does not leak into the neighbouring step.
pub fn rk4_step<S: DelaySystem + ?Sized>(
    sys: &S,
    t: f64,
    t_next: f64,
    y: &[f64],
    history: &InputHistory,
) -> Result<Vec<f64>> {
    let n = sys.dim();
    debug_assert_eq!(y.len(), n);
    let h = t_next - t;
    let right = StageInput::new(history, Side::Right);
    let left = StageInput::new(history, Side::Left);

    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    sys.derivative(t, y, &right, &mut k1)?;
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    sys.derivative(t + 0.5 * h, &tmp, &right, &mut k2)?;
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    sys.derivative(t + 0.5 * h, &tmp, &right, &mut k3)?;
    for i in 0..n {
        tmp[i] = y[i] + h * k3[i];
    }
    sys.derivative(t_next, &tmp, &left, &mut k4)?;

    Ok((0..n)
        .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// `y' = -y + u(t - tau0)`, the constant-delay scalar fixture used to check
/// the integrator against the method of steps.
#[derive(Debug, Clone, Copy)]
pub struct ScalarLag {
    pub tau0: f64,
}

impl DelaySystem for ScalarLag {
    fn dim(&self) -> usize {
        1
    }

    fn derivative(&self, t: f64, y: &[f64], input: &StageInput<'_>, dy: &mut [f64]) -> Result<()> {
        dy[0] = -y[0] + input.at(t - self.tau0);
        Ok(())
    }
}

/// Integrates `sys` with a constant applied input `u` from `y0` at `t = 0`
/// to `t_end`, returning the final state.
pub fn integrate_constant_input<S: DelaySystem + ?Sized>(
    sys: &S,
    y0: &[f64],
    u: f64,
    dt: f64,
    t_end: f64,
) -> Result<Vec<f64>> {
    let steps = (t_end / dt).round() as usize;
    let mut history = InputHistory::new(0.0);
    history.append(0.0, u)?;
    let mut y = y0.to_vec();
    for i in 0..steps {
        let t = i as f64 * dt;
        let t_next = (i + 1) as f64 * dt;
        y = rk4_step(sys, t, t_next, &y, &history)?;
        history.append(t_next, u)?;
    }
    Ok(y)
}
