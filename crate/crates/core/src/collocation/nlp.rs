//! Augmented Lagrangian (PHR) outer loop over an L-BFGS inner minimizer.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sparse Jacobian entry `(row, col, value)`.
pub type Triplet = (usize, usize, f64);

#[derive(Clone, Debug, Default)]
pub struct ConstraintEval {
    /// Equalities `c(x) = 0`.
    pub eq: Vec<f64>,
    /// Inequalities `g(x) <= 0`.
    pub ineq: Vec<f64>,
    pub jac_eq: Vec<Triplet>,
    pub jac_ineq: Vec<Triplet>,
}

impl ConstraintEval {
    pub fn max_violation(&self) -> f64 {
        let e = self.eq.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        self.ineq.iter().fold(e, |m, g| m.max(*g))
    }
}

pub trait Nlp {
    fn num_vars(&self) -> usize;
    /// Objective value and dense gradient.
    fn objective(&self, x: &[f64]) -> (f64, Vec<f64>);
    fn constraints(&self, x: &[f64]) -> ConstraintEval;
    /// Second derivatives of `f + w_eq . c + w_ineq . g`, listing both
    /// triangles of the symmetric matrix.
    fn lagrangian_hessian(&self, x: &[f64], w_eq: &[f64], w_ineq: &[f64]) -> Vec<Triplet>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerMethod {
    /// Damped Newton on the exact augmented-Lagrangian Hessian.
    Newton,
    Lbfgs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub opt_tol: f64,
    pub feas_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub initial_penalty: f64,
    pub max_penalty: f64,
    pub lbfgs_memory: usize,
    pub inner: InnerMethod,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            opt_tol: 1e-6,
            feas_tol: 1e-6,
            max_outer: 60,
            max_inner: 500,
            initial_penalty: 10.0,
            max_penalty: 1e8,
            lbfgs_memory: 20,
            inner: InnerMethod::Newton,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NlpResult {
    pub x: Vec<f64>,
    pub objective: f64,
    pub max_violation: f64,
    /// Infinity norm of the Lagrangian gradient.
    pub stationarity: f64,
    pub converged: bool,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub eq_multipliers: Vec<f64>,
    pub ineq_multipliers: Vec<f64>,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_jt(grad: &mut [f64], jac: &[Triplet], weights: &[f64]) {
    for &(r, c, v) in jac {
        grad[c] += v * weights[r];
    }
}

struct AugLag<'a, P: Nlp> {
    problem: &'a P,
    lambda: Vec<f64>,
    nu: Vec<f64>,
    mu: f64,
}

impl<P: Nlp> AugLag<'_, P> {
    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (f, mut g) = self.problem.objective(x);
        let c = self.problem.constraints(x);
        let mut value = f;
        let we: Vec<f64> = c.eq.iter().zip(&self.lambda).map(|(c, l)| l + self.mu * c).collect();
        for (ci, li) in c.eq.iter().zip(&self.lambda) {
            value += li * ci + 0.5 * self.mu * ci * ci;
        }
        let wi: Vec<f64> = c.ineq.iter().zip(&self.nu).map(|(g, n)| (n + self.mu * g).max(0.0)).collect();
        for (w, n) in wi.iter().zip(&self.nu) {
            value += (w * w - n * n) / (2.0 * self.mu);
        }
        add_jt(&mut g, &c.jac_eq, &we);
        add_jt(&mut g, &c.jac_ineq, &wi);
        if !value.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite augmented Lagrangian".into()));
        }
        Ok((value, g))
    }

    /// Generalized Hessian of the augmented Lagrangian (dense, row-major).
    fn hessian(&self, x: &[f64]) -> Vec<f64> {
        let n = self.problem.num_vars();
        let c = self.problem.constraints(x);
        let we: Vec<f64> = c.eq.iter().zip(&self.lambda).map(|(c, l)| l + self.mu * c).collect();
        let wi: Vec<f64> = c.ineq.iter().zip(&self.nu).map(|(g, n)| (n + self.mu * g).max(0.0)).collect();
        let mut h = vec![0.0; n * n];
        for (r, col, v) in self.problem.lagrangian_hessian(x, &we, &wi) {
            h[r * n + col] += v;
        }
        let active: Vec<bool> = wi.iter().map(|w| *w > 0.0).collect();
        let mut add_gauss_newton = |jac: &[Triplet], rows: usize, keep: &dyn Fn(usize) -> bool| {
            let mut by_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rows];
            for &(r, col, v) in jac {
                if keep(r) {
                    by_row[r].push((col, v));
                }
            }
            for row in &by_row {
                for &(a, va) in row {
                    for &(b, vb) in row {
                        h[a * n + b] += self.mu * va * vb;
                    }
                }
            }
        };
        add_gauss_newton(&c.jac_eq, c.eq.len(), &|_| true);
        add_gauss_newton(&c.jac_ineq, c.ineq.len(), &|r| active[r]);
        h
    }
}

/// Newton iterations with Levenberg-style diagonal shifts until the shifted
/// Hessian factors, and Armijo backtracking.
fn newton<P: Nlp>(al: &AugLag<'_, P>, x: &mut [f64], tol: f64, max_iter: usize) -> Result<usize> {
    let n = x.len();
    let (mut f, mut g) = al.value_grad(x)?;
    for iter in 0..max_iter {
        if inf_norm(&g) <= tol {
            return Ok(iter);
        }
        let h = al.hessian(x);
        let scale = (0..n).map(|i| h[i * n + i].abs()).fold(1e-12, f64::max);
        let mut shift = 0.0;
        let dir = loop {
            let mut m = nalgebra::DMatrix::from_row_slice(n, n, &h);
            for i in 0..n {
                m[(i, i)] += shift;
            }
            if let Some(chol) = m.cholesky() {
                let rhs = nalgebra::DVector::from_iterator(n, g.iter().map(|v| -v));
                break chol.solve(&rhs);
            }
            shift = if shift == 0.0 { 1e-10 * scale } else { shift * 10.0 };
            if !shift.is_finite() || shift > 1e10 * scale {
                return Err(Error::Numerical("augmented Lagrangian Hessian cannot be regularized".into()));
            }
        };
        let slope: f64 = dir.iter().zip(&g).map(|(d, gi)| d * gi).sum();
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xt: Vec<f64> = x.iter().zip(dir.iter()).map(|(xi, di)| xi + step * di).collect();
            if let Ok((ft, gt)) = al.value_grad(&xt) {
                // near the solution the decrease drops below roundoff in f
                let flat = ft <= f + 1e-13 * f.abs().max(1.0) && inf_norm(&gt) < 0.5 * inf_norm(&g);
                if ft <= f + 1e-4 * step * slope || flat {
                    accepted = Some((xt, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xt, ft, gt)) = accepted else {
            return Ok(iter);
        };
        x.copy_from_slice(&xt);
        f = ft;
        g = gt;
    }
    Ok(max_iter)
}

/// Strong Wolfe line search (bracketing + zoom with cubic interpolation).
fn line_search<F>(eval: &mut F, x: &[f64], f0: f64, g0: &[f64], dir: &[f64], step0: f64) -> Result<Option<(f64, f64, Vec<f64>)>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let d0 = dot(g0, dir);
    if d0 >= 0.0 {
        return Ok(None);
    }
    let mut at = |a: f64| -> Result<(f64, f64, Vec<f64>)> {
        let xt: Vec<f64> = x.iter().zip(dir).map(|(xi, di)| xi + a * di).collect();
        let (f, g) = eval(&xt)?;
        Ok((f, dot(&g, dir), g))
    };
    let cubic = |a0: f64, f0: f64, d0: f64, a1: f64, f1: f64, d1: f64| {
        let d1_ = d0 + d1 - 3.0 * (f0 - f1) / (a0 - a1);
        let disc = d1_ * d1_ - d0 * d1;
        let (lo, hi) = (a0.min(a1), a0.max(a1));
        if disc >= 0.0 {
            let d2 = (a1 - a0).signum() * disc.sqrt();
            let a = a1 - (a1 - a0) * (d1 + d2 - d1_) / (d1 - d0 + 2.0 * d2);
            if a.is_finite() && a > lo + 0.1 * (hi - lo) && a < hi - 0.1 * (hi - lo) {
                return a;
            }
        }
        0.5 * (lo + hi)
    };
    let (mut a_prev, mut f_prev, mut d_prev) = (0.0, f0, d0);
    let mut a = step0;
    for i in 0..40 {
        let (fa, da, ga) = at(a)?;
        let (mut lo, mut hi) = if fa > f0 + C1 * a * d0 || (i > 0 && fa >= f_prev) {
            ((a_prev, f_prev, d_prev), (a, fa, da))
        } else if da.abs() <= -C2 * d0 {
            return Ok(Some((a, fa, ga)));
        } else if da >= 0.0 {
            ((a, fa, da), (a_prev, f_prev, d_prev))
        } else {
            a_prev = a;
            f_prev = fa;
            d_prev = da;
            a *= 2.0;
            continue;
        };
        for _ in 0..60 {
            let aj = cubic(lo.0, lo.1, lo.2, hi.0, hi.1, hi.2);
            let (fj, dj, gj) = at(aj)?;
            if fj > f0 + C1 * aj * d0 || fj >= lo.1 {
                hi = (aj, fj, dj);
            } else {
                if dj.abs() <= -C2 * d0 {
                    return Ok(Some((aj, fj, gj)));
                }
                if dj * (hi.0 - lo.0) >= 0.0 {
                    hi = lo;
                }
                lo = (aj, fj, dj);
            }
            if (hi.0 - lo.0).abs() < 1e-16 * lo.0.abs().max(1.0) {
                break;
            }
        }
        // accept the best sufficient-decrease point found
        let (f_lo, g_lo) = eval(&x.iter().zip(dir).map(|(xi, di)| xi + lo.0 * di).collect::<Vec<_>>())?;
        return Ok((lo.0 > 0.0 && f_lo < f0).then_some((lo.0, f_lo, g_lo)));
    }
    Ok(None)
}

/// Minimizes `eval` from `x` until the gradient infinity norm drops below `tol`.
/// Returns the iteration count.
pub fn lbfgs<F>(eval: &mut F, x: &mut [f64], tol: f64, max_iter: usize, memory: usize) -> Result<usize>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (mut f, mut g) = eval(x)?;
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(memory);
    for iter in 0..max_iter {
        if inf_norm(&g) <= tol {
            return Ok(iter);
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = hist.back().map_or(1.0 / inf_norm(&g).max(1.0), |(s, y, _)| dot(s, y) / dot(y, y));
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut found = line_search(eval, x, f, &g, &dir, 1.0)?;
        if found.is_none() && !hist.is_empty() {
            // restart along steepest descent
            hist.clear();
            dir = g.iter().map(|v| -v / inf_norm(&g).max(1.0)).collect();
            found = line_search(eval, x, f, &g, &dir, 1.0)?;
        }
        let Some((a, f_new, g_new)) = found else {
            return Ok(iter);
        };
        let s: Vec<f64> = dir.iter().map(|d| a * d).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        x.iter_mut().zip(&s).for_each(|(xi, si)| *xi += si);
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if hist.len() == memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        f = f_new;
        g = g_new;
    }
    Ok(max_iter)
}

/// Solves `min f(x)` subject to the problem's constraints.
pub fn solve_nlp<P: Nlp>(problem: &P, x0: &[f64], settings: &SolverSettings) -> Result<NlpResult> {
    if x0.len() != problem.num_vars() {
        return Err(Error::Shape(format!("guess has {} entries, problem has {}", x0.len(), problem.num_vars())));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite initial guess".into()));
    }
    let c0 = problem.constraints(x0);
    let mut al = AugLag {
        problem,
        lambda: vec![0.0; c0.eq.len()],
        nu: vec![0.0; c0.ineq.len()],
        mu: settings.initial_penalty,
    };
    let mut x = x0.to_vec();
    let mut prev_violation = c0.max_violation();
    let mut inner_tol = 1e-2f64.max(settings.opt_tol);
    let mut inner_total = 0;
    let mut result = None;
    for outer in 1..=settings.max_outer {
        inner_total += match settings.inner {
            InnerMethod::Newton => newton(&al, &mut x, inner_tol, settings.max_inner)?,
            InnerMethod::Lbfgs => {
                let mut eval = |x: &[f64]| al.value_grad(x);
                lbfgs(&mut eval, &mut x, inner_tol, settings.max_inner, settings.lbfgs_memory)?
            }
        };
        let c = problem.constraints(&x);
        for (l, ci) in al.lambda.iter_mut().zip(&c.eq) {
            *l += al.mu * ci;
        }
        for (n, gi) in al.nu.iter_mut().zip(&c.ineq) {
            *n = (*n + al.mu * gi).max(0.0);
        }
        let (f, mut grad) = problem.objective(&x);
        add_jt(&mut grad, &c.jac_eq, &al.lambda);
        add_jt(&mut grad, &c.jac_ineq, &al.nu);
        let stationarity = inf_norm(&grad);
        let violation = c.max_violation();
        let converged = violation <= settings.feas_tol && stationarity <= settings.opt_tol;
        result = Some(NlpResult {
            x: x.clone(),
            objective: f,
            max_violation: violation,
            stationarity,
            converged,
            outer_iterations: outer,
            inner_iterations: inner_total,
            eq_multipliers: al.lambda.clone(),
            ineq_multipliers: al.nu.clone(),
        });
        if converged {
            break;
        }
        if violation > 0.25 * prev_violation && violation > settings.feas_tol {
            al.mu = (al.mu * 10.0).min(settings.max_penalty);
        }
        prev_violation = violation;
        inner_tol = (inner_tol * 0.1).max(0.1 * settings.opt_tol);
    }
    Ok(result.expect("at least one outer iteration"))
}

/// Largest relative discrepancy between the analytic objective gradient and
/// constraint Jacobians and central differences with step `h`.
pub fn derivative_check<P: Nlp>(problem: &P, x: &[f64], h: f64) -> f64 {
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
    let n = problem.num_vars();
    let (_, grad) = problem.objective(x);
    let c = problem.constraints(x);
    let dense = |jac: &[Triplet], rows: usize| {
        let mut m = vec![0.0; rows * n];
        for &(r, col, v) in jac {
            m[r * n + col] += v;
        }
        m
    };
    let je = dense(&c.jac_eq, c.eq.len());
    let ji = dense(&c.jac_ineq, c.ineq.len());
    let mut worst = 0.0f64;
    let mut xp = x.to_vec();
    for j in 0..n {
        xp[j] = x[j] + h;
        let (fp, cp) = (problem.objective(&xp).0, problem.constraints(&xp));
        xp[j] = x[j] - h;
        let (fm, cm) = (problem.objective(&xp).0, problem.constraints(&xp));
        xp[j] = x[j];
        worst = worst.max(rel(grad[j], (fp - fm) / (2.0 * h)));
        for r in 0..c.eq.len() {
            worst = worst.max(rel(je[r * n + j], (cp.eq[r] - cm.eq[r]) / (2.0 * h)));
        }
        for r in 0..c.ineq.len() {
            worst = worst.max(rel(ji[r * n + j], (cp.ineq[r] - cm.ineq[r]) / (2.0 * h)));
        }
    }
    worst
}

/// Largest relative discrepancy between `lagrangian_hessian` and central
/// differences of the weighted gradient `grad f + J_eq' w_eq + J_ineq' w_ineq`.
pub fn hessian_check<P: Nlp>(problem: &P, x: &[f64], w_eq: &[f64], w_ineq: &[f64], h: f64) -> f64 {
    let n = problem.num_vars();
    let weighted = |x: &[f64]| {
        let (_, mut g) = problem.objective(x);
        let c = problem.constraints(x);
        add_jt(&mut g, &c.jac_eq, w_eq);
        add_jt(&mut g, &c.jac_ineq, w_ineq);
        g
    };
    let mut dense = vec![0.0; n * n];
    for (r, c, v) in problem.lagrangian_hessian(x, w_eq, w_ineq) {
        dense[r * n + c] += v;
    }
    let mut worst = 0.0f64;
    let mut xp = x.to_vec();
    for j in 0..n {
        xp[j] = x[j] + h;
        let gp = weighted(&xp);
        xp[j] = x[j] - h;
        let gm = weighted(&xp);
        xp[j] = x[j];
        for i in 0..n {
            let fd = (gp[i] - gm[i]) / (2.0 * h);
            let a = dense[i * n + j];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lbfgs_minimizes_rosenbrock() {
        let mut eval = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            Ok((f, vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]))
        };
        let mut x = vec![-1.2, 1.0];
        lbfgs(&mut eval, &mut x, 1e-10, 1000, 10).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-8 && (x[1] - 1.0).abs() < 1e-8, "{x:?}");
    }

    /// min x + y  s.t.  x^2 + y^2 = 2,  y >= -0.5
    struct Circle;

    impl Nlp for Circle {
        fn num_vars(&self) -> usize {
            2
        }
        fn objective(&self, x: &[f64]) -> (f64, Vec<f64>) {
            (x[0] + x[1], vec![1.0, 1.0])
        }
        fn constraints(&self, x: &[f64]) -> ConstraintEval {
            ConstraintEval {
                eq: vec![x[0] * x[0] + x[1] * x[1] - 2.0],
                ineq: vec![-0.5 - x[1]],
                jac_eq: vec![(0, 0, 2.0 * x[0]), (0, 1, 2.0 * x[1])],
                jac_ineq: vec![(0, 1, -1.0)],
            }
        }
        fn lagrangian_hessian(&self, _x: &[f64], w_eq: &[f64], _w_ineq: &[f64]) -> Vec<Triplet> {
            vec![(0, 0, 2.0 * w_eq[0]), (1, 1, 2.0 * w_eq[0])]
        }
    }

    #[test]
    fn augmented_lagrangian_finds_constrained_optimum() {
        // (+sqrt(1.75), -0.5) is also a local minimum; start in the other basin
        let r = solve_nlp(&Circle, &[-1.0, 0.5], &SolverSettings::default()).unwrap();
        assert!(r.converged, "{r:?}");
        // active inequality: y = -0.5, x = -sqrt(1.75)
        assert!((r.x[1] + 0.5).abs() < 1e-6, "{r:?}");
        assert!((r.x[0] + 1.75f64.sqrt()).abs() < 1e-6, "{r:?}");
        assert!(r.ineq_multipliers[0] > 0.0);
    }

    #[test]
    fn circle_derivatives_match_differences() {
        assert!(derivative_check(&Circle, &[0.3, -1.1], 1e-4) < 1e-8);
    }

    #[test]
    fn lbfgs_inner_also_solves() {
        let settings = SolverSettings {
            inner: InnerMethod::Lbfgs,
            max_inner: 5000,
            ..SolverSettings::default()
        };
        let r = solve_nlp(&Circle, &[1.0, 0.0], &settings).unwrap();
        assert!(r.converged, "{r:?}");
        assert!((r.x[1] + 0.5).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(matches!(solve_nlp(&Circle, &[1.0], &SolverSettings::default()), Err(Error::Shape(_))));
    }
}
