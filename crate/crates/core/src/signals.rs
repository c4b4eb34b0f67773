//! Applied-input history with delayed lookup, and reference trajectories
//! with closed-form derivatives.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which one-sided limit to take when a lookup lands exactly on the
/// start-of-history jump (the input is zero before `t_start`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Time-ordered record of the applied control `u(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputHistory {
    samples: VecDeque<(f64, f64)>,
    t_start: f64,
}

impl InputHistory {
    pub fn new(t_start: f64) -> Self {
        Self {
            samples: VecDeque::new(),
            t_start,
        }
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn last(&self) -> Option<(f64, f64)> {
        self.samples.back().copied()
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.samples.iter().copied()
    }

    pub fn append(&mut self, t: f64, u: f64) -> Result<()> {
        if !(u >= 0.0) {
            return Err(Error::NegativeInput { t, u });
        }
        if let Some((last, _)) = self.last() {
            if !(t > last) {
                return Err(Error::NonMonotoneTime { last, got: t });
            }
        }
        self.samples.push_back((t, u));
        Ok(())
    }

    /// Value of `u` at `t`: zero at or before the start of the record (or
    /// at non-positive time), linear interpolation inside, and the newest
    /// value held beyond the last sample.
    pub fn sample(&self, t: f64) -> f64 {
        self.sample_from(t, Side::Left)
    }

    pub fn sample_from(&self, t: f64, side: Side) -> f64 {
        let origin = self.t_start.max(0.0);
        let Some(&(t0, u0)) = self.samples.front() else {
            return 0.0;
        };
        if t < origin || (t == origin && side == Side::Left) {
            return 0.0;
        }
        if t <= t0 {
            return u0;
        }
        let (t_last, u_last) = *self.samples.back().expect("non-empty");
        if t >= t_last {
            return u_last;
        }
        // first index with time > t
        let hi = self.samples.partition_point(|&(ts, _)| ts <= t);
        let (ta, ua) = self.samples[hi - 1];
        let (tb, ub) = self.samples[hi];
        ua + (ub - ua) * (t - ta) / (tb - ta)
    }

    /// Drops samples that no lookup at or after `t_cut` can reach, keeping
    /// the one bracketing sample at or before `t_cut`.
    pub fn prune_before(&mut self, t_cut: f64) {
        while self.samples.len() > 2 && self.samples[1].0 <= t_cut {
            self.samples.pop_front();
        }
    }
}

/// A user-supplied reference signal with derivatives.
pub trait ReferenceSignal: Send + Sync {
    fn derivative(&self, t: f64, order: usize) -> f64;
    fn max_order(&self) -> usize;
}

#[derive(Clone)]
pub enum ReferenceKind {
    /// `amplitude * tanh^2(rate * t)`
    TanhSquared {
        amplitude: f64,
        rate: f64,
    },
    /// `amplitude * sin(rate * t) + offset`
    Sinusoid {
        amplitude: f64,
        rate: f64,
        offset: f64,
    },
    Custom(Arc<dyn ReferenceSignal>),
}

impl fmt::Debug for ReferenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReferenceKind::TanhSquared { amplitude, rate } => f
                .debug_struct("TanhSquared")
                .field("amplitude", amplitude)
                .field("rate", rate)
                .finish(),
            ReferenceKind::Sinusoid {
                amplitude,
                rate,
                offset,
            } => f
                .debug_struct("Sinusoid")
                .field("amplitude", amplitude)
                .field("rate", rate)
                .field("offset", offset)
                .finish(),
            ReferenceKind::Custom(_) => f.write_str("Custom"),
        }
    }
}

/// Serializable description of the built-in references.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSpec {
    TanhSquared {
        amplitude: f64,
        rate: f64,
    },
    Sinusoid {
        amplitude: f64,
        rate: f64,
        offset: f64,
    },
}

#[derive(Debug, Clone)]
pub struct ReferenceTrajectory {
    kind: ReferenceKind,
    max_order: usize,
    /// Coefficients (in powers of `tanh`) of each derivative of `tanh^2`.
    tanh_polys: Vec<Vec<f64>>,
}

/// Derivatives available for the built-in shapes.
pub const BUILTIN_MAX_ORDER: usize = 8;

impl ReferenceTrajectory {
    pub fn tanh_squared(amplitude: f64, rate: f64) -> Self {
        Self::from_kind(ReferenceKind::TanhSquared { amplitude, rate })
    }

    pub fn sinusoid(amplitude: f64, rate: f64, offset: f64) -> Self {
        Self::from_kind(ReferenceKind::Sinusoid {
            amplitude,
            rate,
            offset,
        })
    }

    pub fn custom(signal: Arc<dyn ReferenceSignal>) -> Self {
        Self::from_kind(ReferenceKind::Custom(signal))
    }

    pub fn from_spec(spec: &ReferenceSpec) -> Self {
        match *spec {
            ReferenceSpec::TanhSquared { amplitude, rate } => Self::tanh_squared(amplitude, rate),
            ReferenceSpec::Sinusoid {
                amplitude,
                rate,
                offset,
            } => Self::sinusoid(amplitude, rate, offset),
        }
    }

    fn from_kind(kind: ReferenceKind) -> Self {
        let max_order = match &kind {
            ReferenceKind::Custom(s) => s.max_order(),
            _ => BUILTIN_MAX_ORDER,
        };
        let tanh_polys = match &kind {
            ReferenceKind::TanhSquared { .. } => tanh_squared_polys(max_order),
            _ => Vec::new(),
        };
        Self {
            kind,
            max_order,
            tanh_polys,
        }
    }

    pub fn kind(&self) -> &ReferenceKind {
        &self.kind
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    /// Checks that derivatives up to `n + 1` exist for a plant of order `n`.
    pub fn supports_plant_order(&self, n: usize) -> Result<()> {
        if self.max_order > n {
            Ok(())
        } else {
            Err(Error::UnsupportedOrder {
                order: n + 1,
                max: self.max_order,
            })
        }
    }

    pub fn eval(&self, t: f64, order: usize) -> Result<f64> {
        if order > self.max_order {
            return Err(Error::UnsupportedOrder {
                order,
                max: self.max_order,
            });
        }
        Ok(match &self.kind {
            ReferenceKind::TanhSquared { amplitude, rate } => {
                let th = (rate * t).tanh();
                let poly = &self.tanh_polys[order];
                // Horner in tanh
                let p = poly.iter().rev().fold(0.0, |acc, &c| acc * th + c);
                amplitude * rate.powi(order as i32) * p
            }
            ReferenceKind::Sinusoid {
                amplitude,
                rate,
                offset,
            } => {
                let s = rate * t;
                let base = match order % 4 {
                    0 => s.sin(),
                    1 => s.cos(),
                    2 => -s.sin(),
                    _ => -s.cos(),
                };
                let v = amplitude * rate.powi(order as i32) * base;
                if order == 0 {
                    v + offset
                } else {
                    v
                }
            }
            ReferenceKind::Custom(s) => s.derivative(t, order),
        })
    }

    /// Value and derivatives `0..=order` in one call.
    pub fn eval_upto(&self, t: f64, order: usize, out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        for j in 0..=order {
            out.push(self.eval(t, j)?);
        }
        Ok(())
    }
}

/// Polynomials `P_j` with `d^j/ds^j tanh^2(s) = P_j(tanh s)`, using
/// `d/ds P(tanh s) = P'(tanh s) (1 - tanh^2 s)`.
fn tanh_squared_polys(max_order: usize) -> Vec<Vec<f64>> {
    let mut polys = vec![vec![0.0, 0.0, 1.0]];
    for _ in 0..max_order {
        let p = polys.last().expect("seeded");
        let dp: Vec<f64> = p
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, &c)| k as f64 * c)
            .collect();
        let mut next = vec![0.0; dp.len() + 2];
        for (k, &c) in dp.iter().enumerate() {
            next[k] += c;
            next[k + 2] -= c;
        }
        polys.push(next);
    }
    polys
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn append_orders_and_rejects() {
        let mut h = InputHistory::new(0.0);
        h.append(0.0, 5.0).unwrap();
        assert_eq!(h.len(), 1);
        h.append(0.01, 5.1).unwrap();
        assert_eq!(h.len(), 2);
        assert!(matches!(
            h.append(-1.0, 3.0),
            Err(Error::NonMonotoneTime { .. })
        ));
        assert!(matches!(
            h.append(0.01, 3.0),
            Err(Error::NonMonotoneTime { .. })
        ));
        assert!(matches!(
            h.append(1.0, -0.1),
            Err(Error::NegativeInput { .. })
        ));
        assert_eq!(h.len(), 2);
    }

    #[test]
    fn sample_semantics() {
        let mut h = InputHistory::new(0.0);
        h.append(0.0, 0.0).unwrap();
        h.append(1.0, 10.0).unwrap();
        assert_eq!(h.sample(-3.0), 0.0);
        assert!((h.sample(0.5) - 5.0).abs() < 1e-12);
        assert_eq!(h.sample(2.0), 10.0);
        assert_eq!(h.sample(1.0), 10.0);
        assert_eq!(InputHistory::new(0.0).sample(4.0), 0.0);
    }

    #[test]
    fn start_jump_is_one_sided() {
        let mut h = InputHistory::new(0.0);
        h.append(0.0, 1.0).unwrap();
        h.append(0.1, 1.0).unwrap();
        assert_eq!(h.sample_from(0.0, Side::Left), 0.0);
        assert_eq!(h.sample_from(0.0, Side::Right), 1.0);
        assert_eq!(h.sample_from(-1e-12, Side::Right), 0.0);
    }

    #[test]
    fn prune_keeps_bracketing_sample() {
        let mut h = InputHistory::new(0.0);
        for i in 0..100 {
            h.append(i as f64 * 0.1, i as f64).unwrap();
        }
        let before = h.sample(5.05);
        h.prune_before(5.0);
        assert!(h.len() < 100);
        assert_eq!(h.samples().next().unwrap().0, 5.0);
        assert_eq!(h.sample(5.05), before);
    }

    #[test]
    fn tanh_squared_values() {
        let r = ReferenceTrajectory::tanh_squared(200.0, 0.15);
        assert_eq!(r.eval(0.0, 0).unwrap(), 0.0);
        assert!((r.eval(500.0, 0).unwrap() - 200.0).abs() < 1e-9);
        assert_eq!(r.eval(0.0, 1).unwrap(), 0.0);
        // second derivative at zero: 2 A r^2
        assert!((r.eval(0.0, 2).unwrap() - 2.0 * 200.0 * 0.0225).abs() < 1e-12);
        assert!(matches!(
            r.eval(0.0, BUILTIN_MAX_ORDER + 1),
            Err(Error::UnsupportedOrder { .. })
        ));
    }

    #[test]
    fn tanh_polys_by_hand() {
        let p = tanh_squared_polys(2);
        // d/ds T^2 = 2T - 2T^3
        assert_eq!(p[1], vec![0.0, 2.0, 0.0, -2.0]);
        // d/ds (2T - 2T^3) = (2 - 6T^2)(1 - T^2) = 2 - 8T^2 + 6T^4
        assert_eq!(p[2], vec![2.0, 0.0, -8.0, 0.0, 6.0]);
    }

    #[test]
    fn sinusoid_values() {
        let r = ReferenceTrajectory::sinusoid(100.0, 0.15, 300.0);
        assert_eq!(r.eval(0.0, 0).unwrap(), 300.0);
        assert!((r.eval(0.0, 1).unwrap() - 15.0).abs() < 1e-12);
        assert!((r.eval(0.0, 2).unwrap()).abs() < 1e-12);
        assert!((r.eval(0.0, 3).unwrap() + 100.0 * 0.15f64.powi(3)).abs() < 1e-12);
    }

    #[test]
    fn derivatives_match_central_differences() {
        let refs = [
            ReferenceTrajectory::tanh_squared(200.0, 0.15),
            ReferenceTrajectory::sinusoid(100.0, 0.15, 300.0),
        ];
        let h = 1e-4;
        for r in &refs {
            for j in 1..=3 {
                for &t in &[0.3, 2.0, 7.5, 13.0, 40.0] {
                    let fd =
                        (r.eval(t + h, j - 1).unwrap() - r.eval(t - h, j - 1).unwrap()) / (2.0 * h);
                    let exact = r.eval(t, j).unwrap();
                    assert!(
                        (fd - exact).abs() < 1e-5,
                        "order {j} at t={t}: {fd} vs {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn derivatives_bounded_on_horizon() {
        let refs = [
            ReferenceTrajectory::tanh_squared(200.0, 0.15),
            ReferenceTrajectory::sinusoid(100.0, 0.15, 300.0),
        ];
        for r in &refs {
            assert!(r.supports_plant_order(3).is_ok());
            for j in 0..=r.max_order() {
                let m = (0..=2000)
                    .map(|i| r.eval(i as f64 * 0.1, j).unwrap().abs())
                    .fold(0.0, f64::max);
                assert!(m.is_finite() && m <= 400.0, "order {j} bound {m}");
            }
        }
    }

    struct Ramp;
    impl ReferenceSignal for Ramp {
        fn derivative(&self, t: f64, order: usize) -> f64 {
            match order {
                0 => t,
                1 => 1.0,
                _ => 0.0,
            }
        }
        fn max_order(&self) -> usize {
            2
        }
    }

    #[test]
    fn custom_reference_order_limit() {
        let r = ReferenceTrajectory::custom(Arc::new(Ramp));
        assert_eq!(r.eval(3.0, 0).unwrap(), 3.0);
        assert!(r.supports_plant_order(3).is_err());
        assert!(r.eval(0.0, 3).is_err());
    }

    proptest! {
        #[test]
        fn sample_reproduces_and_stays_between(
            steps in proptest::collection::vec((0.001f64..1.0, 0.0f64..100.0), 2..30),
            frac in 0.0f64..1.0,
        ) {
            let mut h = InputHistory::new(0.0);
            let mut t = 0.0;
            let mut pts = Vec::new();
            for (dt, u) in steps {
                h.append(t, u).unwrap();
                pts.push((t, u));
                t += dt;
            }
            for &(ts, us) in pts.iter().skip(1) {
                prop_assert!((h.sample(ts) - us).abs() < 1e-9);
            }
            for w in pts.windows(2).skip(1) {
                let tq = w[0].0 + frac * (w[1].0 - w[0].0);
                let v = h.sample(tq);
                prop_assert!(v >= w[0].1.min(w[1].1) - 1e-9 && v <= w[0].1.max(w[1].1) + 1e-9);
            }
        }
    }
}
