//! Positive cascade plant with logistic input saturation and a power-law
//! state-dependent input delay.
//!
//! The plant is
//!
//! ```text
//! x_i' = x_{i+1} - d_i x_i + H_i(x),        i = 1..n-1
//! x_n' = -d_n x_n + F(x) + g(u(t - tau(x_n)))
//! ```
//!
//! with `g` a logistic saturation and `tau = gamma * x_n^(-k_d)`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default strict positivity floor for `x_n`.
pub const DEFAULT_PHI1: f64 = 1e-3;

/// A non-negative map of the plant state together with its total time
/// derivatives along the flow.
///
/// `time_derivative(x, 0)` is the value itself. Implementations return `None`
/// for orders they do not supply.
pub trait StateMap: Send + Sync {
    fn time_derivative(&self, x: &[f64], order: usize) -> Option<f64>;

    fn value(&self, x: &[f64]) -> f64 {
        self.time_derivative(x, 0).unwrap_or(0.0)
    }

    fn label(&self) -> &str {
        "state map"
    }
}

/// Closure-backed [`StateMap`], mostly useful for tests and small fixtures.
pub struct FnMap<F> {
    label: String,
    max_order: usize,
    f: F,
}

impl<F> FnMap<F>
where
    F: Fn(&[f64], usize) -> f64 + Send + Sync,
{
    pub fn new(label: impl Into<String>, max_order: usize, f: F) -> Self {
        Self {
            label: label.into(),
            max_order,
            f,
        }
    }
}

impl<F> StateMap for FnMap<F>
where
    F: Fn(&[f64], usize) -> f64 + Send + Sync,
{
    fn time_derivative(&self, x: &[f64], order: usize) -> Option<f64> {
        (order <= self.max_order).then(|| (self.f)(x, order))
    }

    fn label(&self) -> &str {
        &self.label
    }
}

#[derive(Clone)]
pub struct CascadeParams {
    d: Vec<f64>,
    h_maps: Option<Vec<Arc<dyn StateMap>>>,
    f_map: Option<Arc<dyn StateMap>>,
}

impl fmt::Debug for CascadeParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CascadeParams")
            .field("d", &self.d)
            .field("h_maps", &self.h_maps.as_ref().map(|h| h.len()))
            .field("f_map", &self.f_map.is_some())
            .finish()
    }
}

impl CascadeParams {
    /// Linear cascade (no `H_i`, no `F`), which is the coagulation model.
    pub fn linear(d: Vec<f64>) -> Result<Self> {
        if d.len() < 2 {
            return Err(Error::param(
                "n",
                d.len() as f64,
                "cascade order must be at least 2",
            ));
        }
        for &di in &d {
            if !(di >= 0.0 && di.is_finite()) {
                return Err(Error::param("d", di, "decay rates must be finite and >= 0"));
            }
        }
        Ok(Self {
            d,
            h_maps: None,
            f_map: None,
        })
    }

    /// Trauma plasma sample parameters of the three-state coagulation model.
    pub fn coagulation() -> Self {
        Self::linear(vec![1.1311, 1.1362, 0.2727]).expect("valid constants")
    }

    /// Attach coupling maps `H_1..H_{n-1}`.
    pub fn with_h_maps(mut self, maps: Vec<Arc<dyn StateMap>>) -> Result<Self> {
        if maps.len() != self.n() - 1 {
            return Err(Error::DimensionMismatch {
                expected: self.n() - 1,
                got: maps.len(),
            });
        }
        self.h_maps = Some(maps);
        Ok(self)
    }

    pub fn with_f_map(mut self, map: Arc<dyn StateMap>) -> Self {
        self.f_map = Some(map);
        self
    }

    pub fn n(&self) -> usize {
        self.d.len()
    }

    pub fn decay(&self) -> &[f64] {
        &self.d
    }

    pub fn d_n(&self) -> f64 {
        self.d[self.n() - 1]
    }

    pub fn f_map(&self) -> Option<&Arc<dyn StateMap>> {
        self.f_map.as_ref()
    }

    fn h(&self, i: usize, x: &[f64], order: usize) -> Result<f64> {
        match &self.h_maps {
            None => Ok(0.0),
            Some(maps) => {
                maps[i]
                    .time_derivative(x, order)
                    .ok_or_else(|| Error::MissingDerivative {
                        map: format!("H_{} ({})", i + 1, maps[i].label()),
                        order,
                    })
            }
        }
    }

    fn f(&self, x: &[f64], order: usize) -> Result<f64> {
        match &self.f_map {
            None => Ok(0.0),
            Some(map) => map
                .time_derivative(x, order)
                .ok_or_else(|| Error::MissingDerivative {
                    map: format!("F ({})", map.label()),
                    order,
                }),
        }
    }

    /// Spot-check that `H_i` and `F` are non-negative on the given samples.
    pub fn maps_nonnegative_on<'a>(&self, samples: impl IntoIterator<Item = &'a [f64]>) -> bool {
        samples.into_iter().all(|x| {
            let h_ok = self.h_maps.iter().flatten().all(|m| m.value(x) >= 0.0);
            let f_ok = self.f_map.as_ref().is_none_or(|m| m.value(x) >= 0.0);
            h_ok && f_ok
        })
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// Logistic actuator saturation `g(u) = beta / (1 + exp(-k_s (u - eta)))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaturationParams {
    pub beta: f64,
    pub k_s: f64,
    pub eta: f64,
}

impl SaturationParams {
    pub fn new(beta: f64, k_s: f64, eta: f64) -> Result<Self> {
        let p = Self { beta, k_s, eta };
        p.validate()?;
        Ok(p)
    }

    pub fn coagulation() -> Self {
        Self {
            beta: 50.0,
            k_s: 0.0224,
            eta: 75.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        positive("beta", self.beta)?;
        positive("k_s", self.k_s)?;
        positive("eta", self.eta)?;
        if self.eta < self.beta {
            return Err(Error::param(
                "eta",
                self.eta,
                format!("requires eta >= beta ({})", self.beta),
            ));
        }
        Ok(())
    }
}

pub fn eval_saturation(p: &SaturationParams, u: f64) -> f64 {
    debug_assert!(
        u >= 0.0 || u.is_nan(),
        "saturation evaluated at negative input {u}"
    );
    p.beta / (1.0 + (-p.k_s * (u - p.eta)).exp())
}

/// Power-law input delay `tau = gamma * x_n^(-k_d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayLaw {
    pub gamma: f64,
    pub k_d: f64,
    pub phi1: f64,
    pub phi2: f64,
}

impl DelayLaw {
    pub fn coagulation() -> Self {
        Self {
            gamma: 4.48,
            k_d: 0.322,
            phi1: DEFAULT_PHI1,
            phi2: 4.0,
        }
    }

    /// Supremum of the delay over the admissible range `x_n > phi1`.
    pub fn tau_max(&self) -> f64 {
        self.gamma * self.phi1.powf(-self.k_d)
    }

    /// Lower bound on `phi2` required for the delay-rate bound to hold.
    pub fn phi2_floor(&self, d_n: f64) -> f64 {
        d_n * self.k_d * self.tau_max()
    }

    /// Checks the basic positivity invariants.
    pub fn validate(&self) -> Result<()> {
        positive("gamma", self.gamma)?;
        positive("k_d", self.k_d)?;
        positive("phi1", self.phi1)?;
        positive("phi2", self.phi2)?;
        Ok(())
    }

    /// Checks `phi2 > d_n k_d gamma phi1^(-k_d)`.
    pub fn validate_rate_bound(&self, d_n: f64) -> Result<()> {
        let floor = self.phi2_floor(d_n);
        if self.phi2 > floor {
            Ok(())
        } else {
            Err(Error::param(
                "phi2",
                self.phi2,
                format!("requires phi2 > d_n*k_d*gamma*phi1^-k_d = {floor}"),
            ))
        }
    }
}

pub fn eval_delay(law: &DelayLaw, x_n: f64) -> Result<f64> {
    if !(x_n > 0.0) {
        return Err(Error::DelayDomain { x_n });
    }
    Ok(law.gamma * x_n.powf(-law.k_d))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub x: Vec<f64>,
    pub nu: f64,
    pub t: f64,
}

impl StateVector {
    pub fn new(x: Vec<f64>, nu: f64, t: f64) -> Self {
        Self { x, nu, t }
    }

    pub fn x_n(&self) -> f64 {
        *self.x.last().expect("non-empty state")
    }

    pub fn is_nonnegative(&self) -> bool {
        self.x.iter().all(|&v| v >= 0.0)
    }

    /// Errors when `x_n <= phi1`.
    pub fn check_floor(&self, phi1: f64) -> Result<()> {
        let x_n = self.x_n();
        if x_n > phi1 {
            Ok(())
        } else {
            Err(Error::StateFloor {
                t: self.t,
                x_n,
                phi1,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetzlerReport {
    pub matrix: Vec<Vec<f64>>,
    pub is_metzler: bool,
}

impl fmt::Display for MetzlerReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in &self.matrix {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>9.4}")).collect();
            writeln!(f, "[{}]", cells.join(" "))?;
        }
        write!(f, "metzler: {}", self.is_metzler)
    }
}

/// Builds the bidiagonal system matrix (`-d_i` on the diagonal, `1` above it)
/// and checks that every off-diagonal entry is non-negative.
pub fn metzler_check(p: &CascadeParams) -> MetzlerReport {
    let n = p.n();
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        a[i][i] = -p.d[i];
        if i + 1 < n {
            a[i][i + 1] = 1.0;
        }
    }
    let is_metzler = a
        .iter()
        .enumerate()
        .all(|(i, row)| row.iter().enumerate().all(|(j, &v)| i == j || v >= 0.0));
    MetzlerReport {
        matrix: a,
        is_metzler,
    }
}

/// Plant vector field given the already-saturated delayed input.
pub fn rhs(p: &CascadeParams, x: &[f64], g_u_tau: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; p.n()];
    rhs_into(p, x, g_u_tau, &mut out)?;
    Ok(out)
}

pub fn rhs_into(p: &CascadeParams, x: &[f64], g_u_tau: f64, out: &mut [f64]) -> Result<()> {
    p.check_dim(x)?;
    let n = p.n();
    for i in 0..n - 1 {
        out[i] = x[i + 1] - p.d[i] * x[i] + p.h(i, x, 0)?;
    }
    out[n - 1] = -p.d[n - 1] * x[n - 1] + p.f(x, 0)? + g_u_tau;
    Ok(())
}

/// `j`-th time derivative of `x_1`, obtained by substituting the cascade
/// equations into each other.
///
/// Orders below `n` depend on the state only. Order `n` also needs the
/// saturated delayed input, passed as `g_u_tau`.
pub fn x1_derivative_chain(
    p: &CascadeParams,
    x: &[f64],
    g_u_tau: Option<f64>,
    order: usize,
) -> Result<f64> {
    p.check_dim(x)?;
    let n = p.n();
    if order > n {
        return Err(Error::UnsupportedOrder { order, max: n });
    }
    // table[i][j] = j-th derivative of x_{i+1}; row i only needs j <= order - i.
    let mut table: Vec<Vec<f64>> = (0..n).map(|i| vec![x[i]]).collect();
    for j in 1..=order {
        for i in 0..n {
            if i + j > order {
                continue;
            }
            let prev = table[i][j - 1];
            let next = if i + 1 < n {
                table[i + 1][j - 1] - p.d[i] * prev + p.h(i, x, j - 1)?
            } else {
                // The input enters x_n' unsmoothed; higher derivatives of
                // g(u_tau) are never needed for orders <= n.
                debug_assert_eq!(j, 1);
                let g = g_u_tau.ok_or_else(|| Error::MissingDerivative {
                    map: "saturated delayed input g(u_tau)".into(),
                    order: 0,
                })?;
                -p.d[i] * prev + p.f(x, 0)? + g
            };
            table[i].push(next);
        }
    }
    Ok(table[0][order])
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, v, "must be finite and > 0"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const X0: [f64; 3] = [500.0, 50.0, 5.0];

    #[test]
    fn saturation_midpoint_and_ceiling() {
        let s = SaturationParams::coagulation();
        assert!((eval_saturation(&s, 75.0) - 25.0).abs() < 1e-12);
        assert!(eval_saturation(&s, 1e6) > 49.999);
        // 50 / (1 + e^1.68) evaluated independently
        let oracle = 50.0 / (1.0 + 1.68f64.exp());
        assert!((eval_saturation(&s, 0.0) - oracle).abs() < 1e-12);
        assert!((eval_saturation(&s, 0.0) - 7.855).abs() < 1e-3);
    }

    #[test]
    fn saturation_matches_tanh_form() {
        let s = SaturationParams::coagulation();
        for u in [0.0, 10.0, 75.0, 140.0, 800.0] {
            let tanh_form = s.beta / 2.0 + s.beta / 2.0 * (s.k_s / 2.0 * (u - s.eta)).tanh();
            assert!((eval_saturation(&s, u) - tanh_form).abs() < 1e-12);
        }
    }

    #[test]
    fn saturation_rejects_eta_below_beta() {
        assert!(SaturationParams::new(50.0, 0.02, 40.0).is_err());
        assert!(SaturationParams::new(50.0, 0.0, 75.0).is_err());
        assert!(SaturationParams::new(50.0, 0.0224, 75.0).is_ok());
    }

    #[test]
    fn delay_values() {
        let law = DelayLaw::coagulation();
        assert!((eval_delay(&law, 1.0).unwrap() - 4.48).abs() < 1e-12);
        let oracle = 4.48 * (-(0.322f64) * 5f64.ln()).exp();
        assert!((eval_delay(&law, 5.0).unwrap() - oracle).abs() < 1e-12);
        assert!((eval_delay(&law, 5.0).unwrap() - 2.668).abs() < 1e-3);
        let fast = DelayLaw {
            gamma: 0.0448,
            ..law
        };
        assert!((eval_delay(&fast, 5.0).unwrap() - 0.02668).abs() < 1e-5);
        assert_eq!(eval_delay(&law, 0.0), Err(Error::DelayDomain { x_n: 0.0 }));
        assert!(eval_delay(&law, -1.0).is_err());
    }

    #[test]
    fn delay_bounded_by_floor_value() {
        let law = DelayLaw::coagulation();
        let sup = law.tau_max();
        for x in [law.phi1 * 1.0001, 0.01, 1.0, 1e4] {
            assert!(eval_delay(&law, x).unwrap() < sup);
        }
    }

    #[test]
    fn rate_bound_guard() {
        let law = DelayLaw::coagulation();
        let floor = law.phi2_floor(0.2727);
        assert!((floor - 0.2727 * 0.322 * 4.48 * 1e-3f64.powf(-0.322)).abs() < 1e-12);
        assert!(law.validate_rate_bound(0.2727).is_ok());
        let tight = DelayLaw { phi2: floor, ..law };
        assert!(tight.validate_rate_bound(0.2727).is_err());
    }

    #[test]
    fn metzler_structure() {
        let r = metzler_check(&CascadeParams::coagulation());
        assert!(r.is_metzler);
        assert_eq!(r.matrix[0], vec![-1.1311, 1.0, 0.0]);
        let r = metzler_check(&CascadeParams::linear(vec![0.0, 0.0]).unwrap());
        assert!(r.is_metzler);
        let r = metzler_check(&CascadeParams::linear(vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        assert!(r.is_metzler);
        assert_eq!(r.matrix[3], vec![0.0, 0.0, 0.0, -4.0]);
        assert_eq!(r.matrix[1], vec![0.0, -2.0, 1.0, 0.0]);
        assert!(r.to_string().lines().count() == 5);
    }

    #[test]
    fn cascade_rejects_bad_params() {
        assert!(CascadeParams::linear(vec![1.0]).is_err());
        assert!(CascadeParams::linear(vec![1.0, -0.5]).is_err());
        let p = CascadeParams::coagulation();
        assert_eq!(
            rhs(&p, &[1.0, 2.0], 0.0),
            Err(Error::DimensionMismatch {
                expected: 3,
                got: 2
            })
        );
    }

    #[test]
    fn rhs_coagulation_values() {
        let p = CascadeParams::coagulation();
        let dx = rhs(&p, &X0, 0.0).unwrap();
        let expected = [50.0 - 1.1311 * 500.0, 5.0 - 1.1362 * 50.0, -0.2727 * 5.0];
        for (a, b) in dx.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((dx[0] + 515.55).abs() < 1e-9);
        assert!((dx[1] + 51.81).abs() < 1e-9);
        assert!((dx[2] + 1.3635).abs() < 1e-9);

        assert_eq!(rhs(&p, &[0.0; 3], 0.0).unwrap(), vec![0.0; 3]);
        let dx = rhs(&p, &[0.0, 0.0, 1.0], 10.0).unwrap();
        assert_eq!(dx[0], 0.0);
        assert_eq!(dx[1], 1.0);
        assert!((dx[2] - (10.0 - 0.2727)).abs() < 1e-12);
    }

    #[test]
    fn derivative_chain_coagulation() {
        let p = CascadeParams::coagulation();
        let d1 = x1_derivative_chain(&p, &X0, None, 1).unwrap();
        assert!((d1 + 515.55).abs() < 1e-9);
        let d2 = x1_derivative_chain(&p, &X0, None, 2).unwrap();
        let oracle = (5.0 - 1.1362 * 50.0) - 1.1311 * (50.0 - 1.1311 * 500.0);
        assert!((d2 - oracle).abs() < 1e-9);
        assert!((d2 - 531.33).abs() < 0.01);
        for j in 0..=3 {
            assert_eq!(
                x1_derivative_chain(&p, &[0.0; 3], Some(0.0), j).unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn derivative_chain_top_order_needs_input() {
        let p = CascadeParams::coagulation();
        assert!(matches!(
            x1_derivative_chain(&p, &X0, None, 3),
            Err(Error::MissingDerivative { .. })
        ));
        assert_eq!(
            x1_derivative_chain(&p, &X0, Some(0.0), 4),
            Err(Error::UnsupportedOrder { order: 4, max: 3 })
        );
        // x1''' = x3' - (d1+d2) x2' ... expanded by hand with g = 10
        let (d1, d2, d3) = (1.1311, 1.1362, 0.2727);
        let [a, b, c] = X0;
        let x1d1 = b - d1 * a;
        let x2d1 = c - d2 * b;
        let x3d1 = -d3 * c + 10.0;
        let x2d2 = x3d1 - d2 * x2d1;
        let x1d2 = x2d1 - d1 * x1d1;
        let x1d3 = x2d2 - d1 * x1d2;
        let got = x1_derivative_chain(&p, &X0, Some(10.0), 3).unwrap();
        assert!((got - x1d3).abs() < 1e-9);
    }

    #[test]
    fn derivative_chain_with_coupling_maps() {
        // H_1(x) = c * x_3 with derivatives supplied along the unforced flow;
        // only the value and first derivative are needed for x1''.
        let c = 0.5;
        let h1: Arc<dyn StateMap> = Arc::new(FnMap::new("c*x3", 1, move |x: &[f64], k| match k {
            0 => c * x[2],
            _ => c * (-0.2727 * x[2]),
        }));
        let h2: Arc<dyn StateMap> = Arc::new(FnMap::new("zero", 0, |_: &[f64], _| 0.0));
        let p = CascadeParams::coagulation()
            .with_h_maps(vec![h1, h2])
            .unwrap();
        let x = [2.0, 3.0, 4.0];
        let d1 = x1_derivative_chain(&p, &x, None, 1).unwrap();
        assert!((d1 - (3.0 - 1.1311 * 2.0 + c * 4.0)).abs() < 1e-12);
        let x2d1 = 4.0 - 1.1362 * 3.0;
        let d2 = x1_derivative_chain(&p, &x, None, 2).unwrap();
        assert!((d2 - (x2d1 - 1.1311 * d1 + c * (-0.2727 * 4.0))).abs() < 1e-12);
        // x1''' needs H_1'' which is not supplied
        assert!(matches!(
            x1_derivative_chain(&p, &x, Some(1.0), 3),
            Err(Error::MissingDerivative { .. })
        ));
        let samples: Vec<Vec<f64>> = vec![vec![1.0, 1.0, 1.0], vec![0.0, 5.0, 9.0]];
        assert!(p.maps_nonnegative_on(samples.iter().map(|v| v.as_slice())));
    }

    #[test]
    fn state_floor_check() {
        let s = StateVector::new(vec![1.0, 1.0, 5e-4], 0.0, 2.0);
        assert!(matches!(
            s.check_floor(DEFAULT_PHI1),
            Err(Error::StateFloor { .. })
        ));
        let s = StateVector::new(vec![1.0, 1.0, 5.0], 0.0, 0.0);
        assert!(s.check_floor(DEFAULT_PHI1).is_ok());
        assert!(s.is_nonnegative());
    }

    proptest! {
        #[test]
        fn flow_points_into_orthant(
            x in proptest::collection::vec(0.0f64..1e3, 3),
            zero_mask in proptest::collection::vec(any::<bool>(), 3),
            g in 0.0f64..100.0,
        ) {
            let p = CascadeParams::coagulation();
            let x: Vec<f64> = x.iter().zip(&zero_mask).map(|(&v, &z)| if z { 0.0 } else { v }).collect();
            let dx = rhs(&p, &x, g).unwrap();
            for i in 0..3 {
                if x[i] == 0.0 {
                    prop_assert!(dx[i] >= 0.0);
                }
                prop_assert!(dx[i] >= -p.decay()[i] * x[i]);
            }
        }

        #[test]
        fn saturation_is_bounded_and_monotone(mut us in proptest::collection::vec(0.0f64..2000.0, 2..20)) {
            let s = SaturationParams::coagulation();
            us.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut last = 0.0;
            for u in us {
                let g = eval_saturation(&s, u);
                prop_assert!(g > 0.0 && g <= s.beta);
                prop_assert!(g >= last);
                last = g;
            }
        }

        #[test]
        fn delay_strictly_decreasing(a in 1e-3f64..1e3, b in 1e-3f64..1e3) {
            prop_assume!(a < b);
            let law = DelayLaw::coagulation();
            prop_assert!(eval_delay(&law, a).unwrap() > eval_delay(&law, b).unwrap());
        }
    }
}
