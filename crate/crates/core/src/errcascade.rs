//! Filtered tracking-error cascade.
//!
//! `e_1 = x_r - x_1`, `e_2 = e_1' + e_1`, `e_k = e_{k-1}' + e_{k-1} + e_{k-2}`.
//! Each `e_i` is a fixed integer combination of the derivatives of `e_1`,
//! `e_i = sum_j a_{i,j} e_1^(j)`, so the whole cascade is evaluated from the
//! plant's derivative chain without differentiating sampled signals.

use crate::controller::ControllerGains;
use crate::error::Result;
use crate::model::{x1_derivative_chain, CascadeParams};
use crate::signals::{InputHistory, ReferenceTrajectory};

/// Lower-triangular table `a_{i,j}`, `1 <= i <= n`, `0 <= j < i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CascadeCoefficients {
    n: usize,
    rows: Vec<Vec<u64>>,
}

impl CascadeCoefficients {
    pub fn n(&self) -> usize {
        self.n
    }

    /// `a_{i,j}` with 1-based `i`. Out-of-table entries read as zero.
    pub fn get(&self, i: usize, j: usize) -> u64 {
        if i == 0 || i > self.n || j >= i {
            return 0;
        }
        self.rows[i - 1][j]
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.rows[i - 1]
    }
}

/// Fibonacci number via Binet's formula, rounded to the nearest integer.
pub fn binet(i: usize) -> u64 {
    let s5 = 5f64.sqrt();
    let phi = (1.0 + s5) / 2.0;
    let psi = (1.0 - s5) / 2.0;
    ((phi.powi(i as i32) - psi.powi(i as i32)) / s5).round() as u64
}

pub fn compute_coefficients(n: usize) -> CascadeCoefficients {
    assert!(n >= 1, "cascade order must be positive");
    let mut rows: Vec<Vec<u64>> = Vec::with_capacity(n);
    for i in 1..=n {
        let mut row = vec![0u64; i];
        row[0] = binet(i);
        row[i - 1] = 1;
        rows.push(row);
        for j in 1..i.saturating_sub(1) {
            let mut acc = 0u64;
            for p in 1..i {
                // a_{i-p-j+1,0} vanishes for non-positive row index, which
                // also covers every term whose second factor would lie past
                // row i
                let Some(r) = (i + 1).checked_sub(p + j).filter(|&r| r >= 1) else {
                    continue;
                };
                let left = rows[r - 1][0];
                let c = p + j - 1;
                let right = if c == 0 || j > c {
                    0
                } else {
                    rows[c - 1][j - 1]
                };
                acc += left * right;
            }
            rows[i - 1][j] = acc;
        }
    }
    CascadeCoefficients { n, rows }
}

/// `e_i = sum_j a_{i,j} e_1^(j)` for `i = 1..=n`, given `e_1^(j)` for
/// `j = 0..n-1`.
pub fn errors_from_e1_derivatives(coeffs: &CascadeCoefficients, e1: &[f64]) -> Vec<f64> {
    (1..=coeffs.n())
        .map(|i| {
            coeffs
                .row(i)
                .iter()
                .zip(e1)
                .map(|(&a, &d)| a as f64 * d)
                .sum()
        })
        .collect()
}

/// Tracking errors `e_1..e_n` at a plant state and time.
pub fn compute_errors(
    coeffs: &CascadeCoefficients,
    plant: &CascadeParams,
    x: &[f64],
    reference: &ReferenceTrajectory,
    t: f64,
) -> Result<Vec<f64>> {
    let n = coeffs.n();
    let mut e1 = Vec::with_capacity(n);
    for j in 0..n {
        e1.push(reference.eval(t, j)? - x1_derivative_chain(plant, x, None, j)?);
    }
    Ok(errors_from_e1_derivatives(coeffs, &e1))
}

/// `e_u = u(t - tau_hat) - u(t)`, the telescoped form of
/// `-integral_{t - tau_hat}^{t} u'(s) ds`.
pub fn compute_e_u(history: &InputHistory, t: f64, tau_hat: f64) -> f64 {
    debug_assert!(tau_hat > 0.0);
    history.sample(t - tau_hat) - history.sample(t)
}

pub fn compute_e_a(e_n_dot: f64, e_n: f64, e_u: f64, gains: &ControllerGains) -> f64 {
    e_n_dot + gains.lambda * e_n + gains.alpha * e_u
}

/// All error signals at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorFrame {
    pub t: f64,
    pub e: Vec<f64>,
    pub e_u: f64,
    pub e_a: f64,
}

impl ErrorFrame {
    pub fn e1(&self) -> f64 {
        self.e[0]
    }

    pub fn e_n(&self) -> f64 {
        *self.e.last().expect("non-empty cascade")
    }

    /// Stacked `[e_1, .., e_n, e_u, e_a]`.
    pub fn z(&self) -> Vec<f64> {
        let mut z = self.e.clone();
        z.push(self.e_u);
        z.push(self.e_a);
        z
    }

    pub fn z_norm(&self) -> f64 {
        self.z().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Expands the recursive definitions symbolically: each error is a
    /// polynomial in the derivative operator applied to `e_1`.
    fn brute_force(n: usize) -> Vec<Vec<i64>> {
        fn deriv(p: &[i64]) -> Vec<i64> {
            let mut out = vec![0];
            out.extend_from_slice(p);
            out
        }
        fn add(a: &[i64], b: &[i64]) -> Vec<i64> {
            let len = a.len().max(b.len());
            (0..len)
                .map(|k| a.get(k).copied().unwrap_or(0) + b.get(k).copied().unwrap_or(0))
                .collect()
        }
        let mut es: Vec<Vec<i64>> = vec![vec![1]];
        if n >= 2 {
            let e1 = es[0].clone();
            es.push(add(&deriv(&e1), &e1));
        }
        for k in 3..=n {
            let prev = &es[k - 2];
            let prev2 = &es[k - 3];
            let next = add(&add(&deriv(prev), prev), prev2);
            es.push(next);
        }
        es
    }

    #[test]
    fn coefficient_tables_small_orders() {
        let c = compute_coefficients(2);
        assert_eq!((c.get(2, 0), c.get(2, 1)), (1, 1));
        let c = compute_coefficients(3);
        assert_eq!(c.row(3), &[2, 2, 1]);
        let c = compute_coefficients(4);
        assert_eq!(c.row(4), &[3, 5, 3, 1]);
        assert_eq!(c.get(0, 0), 0);
        assert_eq!(c.get(2, 5), 0);
    }

    #[test]
    fn coefficients_match_symbolic_expansion() {
        for n in 1..=6 {
            let c = compute_coefficients(n);
            let oracle = brute_force(n);
            for i in 1..=n {
                let row: Vec<i64> = c.row(i).iter().map(|&v| v as i64).collect();
                assert_eq!(row, oracle[i - 1], "row {i} of n={n}");
            }
        }
    }

    #[test]
    fn binet_matches_integer_recurrence() {
        let (mut a, mut b) = (1u64, 1u64);
        for i in 1..=20 {
            assert_eq!(binet(i), a, "F_{i}");
            (a, b) = (b, a + b);
        }
        let c = compute_coefficients(20);
        assert_eq!(c.get(20, 0), 6765);
        assert!(c.row(20).iter().all(|&v| v >= 1));
    }

    #[test]
    fn coagulation_initial_errors() {
        let p = CascadeParams::coagulation();
        let r = ReferenceTrajectory::tanh_squared(200.0, 0.15);
        let c = compute_coefficients(3);
        let e = compute_errors(&c, &p, &[500.0, 50.0, 5.0], &r, 0.0).unwrap();
        assert!((e[0] + 500.0).abs() < 1e-12);
        // e1' = 0 - (50 - 1.1311*500) = 515.55
        assert!((e[1] - 15.55).abs() < 1e-9);
    }

    #[test]
    fn perfect_tracking_gives_zero_errors() {
        let c = compute_coefficients(4);
        assert!(errors_from_e1_derivatives(&c, &[0.0; 4])
            .iter()
            .all(|&e| e == 0.0));
        let c3 = compute_coefficients(3);
        let e = errors_from_e1_derivatives(&c3, &[1.0, 0.0, 0.0]);
        assert_eq!(e[2], 2.0);
    }

    #[test]
    fn e_u_telescopes() {
        let mut h = InputHistory::new(0.0);
        for i in 0..=100 {
            h.append(i as f64 * 0.1, 4.0).unwrap();
        }
        assert_eq!(compute_e_u(&h, 8.0, 2.0), 0.0);

        let mut h = InputHistory::new(0.0);
        for i in 0..=100 {
            let t = i as f64 * 0.1;
            h.append(t, if t < 5.0 { 0.0 } else { 10.0 }).unwrap();
        }
        assert_eq!(compute_e_u(&h, 8.0, 4.0), -10.0);

        let mut h = InputHistory::new(0.0);
        for i in 0..=100 {
            let t = i as f64 * 0.1;
            h.append(t, t).unwrap();
        }
        assert!((compute_e_u(&h, 7.0, 2.0) + 2.0).abs() < 1e-12);
    }

    #[test]
    fn e_a_substitution() {
        let g = ControllerGains::new(0.15, 0.1, 5.0).unwrap();
        assert_eq!(compute_e_a(0.0, 0.0, 0.0, &g), 0.0);
        assert!((compute_e_a(1.0, 2.0, 3.0, &g) - 16.2).abs() < 1e-12);
        assert!(compute_e_a(-0.1 * 7.0, 7.0, 0.0, &g).abs() < 1e-15);
    }

    #[test]
    fn frame_stacking() {
        let f = ErrorFrame {
            t: 0.0,
            e: vec![3.0, 0.0, 0.0],
            e_u: 0.0,
            e_a: 4.0,
        };
        assert_eq!(f.z(), vec![3.0, 0.0, 0.0, 0.0, 4.0]);
        assert_eq!(f.z_norm(), 5.0);
        assert_eq!(f.e_n(), 0.0);
    }
}
