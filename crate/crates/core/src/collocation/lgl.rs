//! Legendre-Gauss-Lobatto nodes, quadrature weights and differentiation matrix.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct LglRule<T> {
    /// Nodes on `[-1, 1]`, strictly increasing, endpoints included.
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
    /// `n x n`, row-major: `(D f)_i = sum_j D[i][j] f_j` approximates `f'(x_i)`.
    pub diff: Vec<T>,
    /// Barycentric interpolation weights.
    pub bary: Vec<T>,
}

/// Legendre polynomials `P_{deg-1}(x)` and `P_deg(x)` by the three-term recurrence.
fn legendre_pair<T: Scalar>(deg: usize, x: T) -> (T, T) {
    let mut prev = T::one();
    let mut cur = x;
    if deg == 0 {
        return (T::zero(), T::one());
    }
    for k in 2..=deg {
        let kf = T::lit(k as f64);
        let next = ((kf + kf - T::one()) * x * cur - (kf - T::one()) * prev) / kf;
        prev = cur;
        cur = next;
    }
    (prev, cur)
}

/// Rule with `n >= 2` nodes: `+-1` and the roots of `P'_{n-1}`.
pub fn lgl_rule<T: Scalar>(n: usize) -> Result<LglRule<T>> {
    if n < 2 {
        return Err(Error::Parameter(format!("an LGL rule needs at least 2 nodes, got {n}")));
    }
    let deg = n - 1;
    let degf = T::lit(deg as f64);
    // Newton iteration on (1 - x^2) P'_deg from Chebyshev-Lobatto guesses.
    let mut x: Vec<T> = (0..n)
        .map(|j| (T::PI() * T::lit(j as f64) / degf).cos())
        .collect();
    let tol = T::epsilon() * T::lit(4.0);
    for _ in 0..200 {
        let mut change = T::zero();
        for xi in x.iter_mut() {
            let (pm1, p) = legendre_pair(deg, *xi);
            let dx = (*xi * p - pm1) / ((degf + T::one()) * p);
            *xi = *xi - dx;
            change = change.max(dx.abs());
        }
        if change <= tol {
            break;
        }
    }
    x.reverse();
    x[0] = -T::one();
    x[n - 1] = T::one();
    if n % 2 == 1 {
        x[n / 2] = T::zero();
    }
    let norm = T::lit(2.0) / (degf * (degf + T::one()));
    let weights: Vec<T> = x
        .iter()
        .map(|&xi| {
            let (_, p) = legendre_pair(deg, xi);
            norm / (p * p)
        })
        .collect();
    let bary: Vec<T> = (0..n)
        .map(|j| {
            let prod = (0..n).filter(|&k| k != j).fold(T::one(), |acc, k| acc * (x[j] - x[k]));
            T::one() / prod
        })
        .collect();
    let mut diff = vec![T::zero(); n * n];
    for i in 0..n {
        let mut row_sum = T::zero();
        for j in 0..n {
            if i != j {
                let d = (bary[j] / bary[i]) / (x[i] - x[j]);
                diff[i * n + j] = d;
                row_sum = row_sum + d;
            }
        }
        diff[i * n + i] = -row_sum;
    }
    Ok(LglRule {
        nodes: x,
        weights,
        diff,
        bary,
    })
}

impl<T: Scalar> LglRule<T> {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn d(&self, i: usize, j: usize) -> T {
        self.diff[i * self.len() + j]
    }

    /// Applies the differentiation matrix to node samples.
    pub fn differentiate(&self, samples: &[T]) -> Vec<T> {
        let n = self.len();
        (0..n)
            .map(|i| (0..n).fold(T::zero(), |acc, j| acc + self.diff[i * n + j] * samples[j]))
            .collect()
    }

    pub fn integrate(&self, samples: &[T]) -> T {
        self.weights.iter().zip(samples).fold(T::zero(), |acc, (&w, &f)| acc + w * f)
    }

    /// Barycentric Lagrange interpolation of node samples at `t` in `[-1, 1]`.
    pub fn interpolate(&self, samples: &[T], t: T) -> T {
        let mut num = T::zero();
        let mut den = T::zero();
        for ((&xj, &bj), &fj) in self.nodes.iter().zip(&self.bary).zip(samples) {
            let dt = t - xj;
            if dt == T::zero() {
                return fj;
            }
            let c = bj / dt;
            num = num + c * fj;
            den = den + c;
        }
        num / den
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn closed_forms() {
        let r = lgl_rule::<f64>(2).unwrap();
        assert_close(&r.nodes, &[-1.0, 1.0], 1e-14);
        assert_close(&r.weights, &[1.0, 1.0], 1e-14);
        let r = lgl_rule::<f64>(3).unwrap();
        assert_close(&r.nodes, &[-1.0, 0.0, 1.0], 1e-14);
        assert_close(&r.weights, &[1.0 / 3.0, 4.0 / 3.0, 1.0 / 3.0], 1e-14);
        let r = lgl_rule::<f64>(4).unwrap();
        let a = (0.2f64).sqrt();
        assert_close(&r.nodes, &[-1.0, -a, a, 1.0], 1e-14);
        assert_close(&r.weights, &[1.0 / 6.0, 5.0 / 6.0, 5.0 / 6.0, 1.0 / 6.0], 1e-14);
        let r = lgl_rule::<f64>(5).unwrap();
        let b = (3.0f64 / 7.0).sqrt();
        assert_close(&r.nodes, &[-1.0, -b, 0.0, b, 1.0], 1e-14);
        assert_close(
            &r.weights,
            &[0.1, 49.0 / 90.0, 32.0 / 45.0, 49.0 / 90.0, 0.1],
            1e-14,
        );
    }

    #[test]
    fn rejects_single_node() {
        assert!(lgl_rule::<f64>(1).is_err());
    }

    #[test]
    fn two_node_differentiation() {
        let r = lgl_rule::<f64>(2).unwrap();
        assert_close(&r.diff, &[-0.5, 0.5, -0.5, 0.5], 1e-15);
    }

    #[test]
    fn interpolation_hits_nodes_and_polynomials() {
        let r = lgl_rule::<f64>(6).unwrap();
        let f = |t: f64| 1.0 - 2.0 * t + 0.5 * t.powi(4) - t.powi(5);
        let samples: Vec<f64> = r.nodes.iter().map(|&t| f(t)).collect();
        assert_eq!(r.interpolate(&samples, r.nodes[2]), samples[2]);
        for k in 0..=20 {
            let t = -1.0 + 0.1 * k as f64;
            assert!((r.interpolate(&samples, t) - f(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn single_precision_rule() {
        let r = lgl_rule::<f32>(5).unwrap();
        assert!((r.nodes[1] + (3.0f32 / 7.0).sqrt()).abs() < 1e-6);
        assert!((r.weights.iter().sum::<f32>() - 2.0).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn structure(n in 2usize..=24) {
            let r = lgl_rule::<f64>(n).unwrap();
            prop_assert_eq!(r.nodes[0], -1.0);
            prop_assert_eq!(r.nodes[n - 1], 1.0);
            prop_assert!(r.nodes.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(r.weights.iter().all(|&w| w > 0.0));
            prop_assert!((r.weights.iter().sum::<f64>() - 2.0).abs() < 1e-12);
        }

        #[test]
        fn quadrature_exact(n in 2usize..=16) {
            let r = lgl_rule::<f64>(n).unwrap();
            for k in 0..=(2 * n - 3) {
                let samples: Vec<f64> = r.nodes.iter().map(|&t| t.powi(k as i32)).collect();
                let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
                prop_assert!((r.integrate(&samples) - exact).abs() < 1e-10, "n={} k={}", n, k);
            }
        }

        #[test]
        fn differentiation_exact(n in 2usize..=16) {
            let r = lgl_rule::<f64>(n).unwrap();
            for k in 0..n {
                let samples: Vec<f64> = r.nodes.iter().map(|&t| t.powi(k as i32)).collect();
                let d = r.differentiate(&samples);
                for (&t, &di) in r.nodes.iter().zip(&d) {
                    let exact = if k == 0 { 0.0 } else { k as f64 * t.powi(k as i32 - 1) };
                    prop_assert!((di - exact).abs() < 1e-10, "n={} k={} t={}", n, k, t);
                }
            }
        }
    }
}
