use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::lgl::{lgl_rule, LglRule};
use super::nlp::{solve_nlp, ConstraintEval, Nlp, NlpResult, SolverSettings, Triplet};
use super::oracle::{geometric_oracle, OraclePath};
use crate::error::{Error, Result};
use crate::geom::Point2;
use crate::io::fmt_sig;

const STATES: usize = 4;
const CONTROLS: usize = 2;
const NODE_VARS: usize = STATES + CONTROLS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeedMode {
    /// `|V| = speed` at every node.
    Equality,
    /// `|V| <= speed`; minimum time is otherwise unbounded below.
    Capped,
}

/// Minimum-time transfer around a circular zone with double-integrator dynamics
/// `P' = V`, `V' = U`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcpDefinition {
    pub start: Point2<f64>,
    pub dest: Point2<f64>,
    pub zone_center: Point2<f64>,
    pub zone_radius: f64,
    pub speed: f64,
    pub speed_mode: SpeedMode,
}

impl OcpDefinition {
    pub fn validate(&self) -> Result<()> {
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            return Err(Error::Config(format!("speed must be positive, got {}", self.speed)));
        }
        if !(self.zone_radius >= 0.0 && self.zone_radius.is_finite()) {
            return Err(Error::Config(format!("zone radius must be non-negative, got {}", self.zone_radius)));
        }
        if self.start.dist(self.dest) == 0.0 {
            return Err(Error::Config("start and destination coincide".into()));
        }
        for (name, p) in [("start", self.start), ("destination", self.dest)] {
            if !p.is_finite() || p.dist(self.zone_center) <= self.zone_radius {
                return Err(Error::Config(format!("{name} lies inside the zone")));
            }
        }
        Ok(())
    }

    pub fn oracle(&self) -> Result<OraclePath> {
        geometric_oracle(self.start, self.dest, self.zone_center, self.zone_radius, self.speed)
    }
}

/// Nondimensionalization: positions relative to the zone center in units of
/// `length`, velocities in units of `speed`, times in `length / speed`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub length: f64,
    pub speed: f64,
}

impl Scaling {
    pub fn time(&self) -> f64 {
        self.length / self.speed
    }

    pub fn accel(&self) -> f64 {
        self.speed * self.speed / self.length
    }
}

#[derive(Clone, Debug)]
pub struct CollocationProblem {
    pub ocp: OcpDefinition,
    pub intervals: usize,
    pub rule: LglRule<f64>,
    pub scaling: Scaling,
    /// Scaled bounds on the final time.
    pub tf_bounds: (f64, f64),
    start: Point2<f64>,
    dest: Point2<f64>,
    radius: f64,
}

pub fn transcribe(ocp: &OcpDefinition, intervals: usize, nodes: usize) -> Result<CollocationProblem> {
    ocp.validate()?;
    if intervals == 0 {
        return Err(Error::Parameter("need at least one interval".into()));
    }
    let rule = lgl_rule::<f64>(nodes)?;
    let oracle = ocp.oracle()?;
    let length = if ocp.zone_radius > 0.0 { ocp.zone_radius } else { ocp.start.dist(ocp.dest) };
    let scaling = Scaling { length, speed: ocp.speed };
    let to_scaled = |p: Point2<f64>| p.sub(ocp.zone_center).scale(1.0 / length);
    Ok(CollocationProblem {
        intervals,
        rule,
        tf_bounds: (0.1 / scaling.time(), 4.0 * oracle.t_min / scaling.time()),
        start: to_scaled(ocp.start),
        dest: to_scaled(ocp.dest),
        radius: ocp.zone_radius / length,
        scaling,
        ocp: ocp.clone(),
    })
}

impl CollocationProblem {
    pub fn nodes(&self) -> usize {
        self.rule.len()
    }

    /// Index of component `c` (px, py, vx, vy, ux, uy) at node `k` of interval `i`.
    pub fn var(&self, i: usize, k: usize, c: usize) -> usize {
        (i * self.nodes() + k) * NODE_VARS + c
    }

    pub fn tf_index(&self) -> usize {
        self.intervals * self.nodes() * NODE_VARS
    }

    pub fn num_defects(&self) -> usize {
        self.intervals * self.nodes() * STATES
    }

    pub fn num_continuity(&self) -> usize {
        (self.intervals - 1) * STATES
    }

    /// Nodes after removing the duplicates shared across interval boundaries.
    pub fn unique_nodes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.nodes();
        (0..self.intervals).flat_map(move |i| (usize::from(i > 0)..n).map(move |k| (i, k)))
    }

    /// Scaled time of node `k` in interval `i` for scaled final time `tf`.
    pub fn node_time(&self, i: usize, k: usize, tf: f64) -> f64 {
        let h = tf / self.intervals as f64;
        h * (i as f64 + 0.5 * (self.rule.nodes[k] + 1.0))
    }

    /// Oracle-path guess: positions by arc length, velocity along the tangent,
    /// controls by differentiating the velocity samples, `t_f = 1.05 t_min`.
    pub fn initial_guess(&self, oracle: &OraclePath) -> Vec<f64> {
        let n = self.nodes();
        let tf = 1.05 * oracle.t_min / self.scaling.time();
        let h = tf / self.intervals as f64;
        let mut x = vec![0.0; self.num_vars()];
        for i in 0..self.intervals {
            let mut vel = [vec![0.0; n], vec![0.0; n]];
            for k in 0..n {
                let frac = self.node_time(i, k, tf) / tf;
                let (p, u) = oracle.sample(frac * oracle.length);
                let p = p.sub(self.ocp.zone_center).scale(1.0 / self.scaling.length);
                x[self.var(i, k, 0)] = p.x;
                x[self.var(i, k, 1)] = p.y;
                x[self.var(i, k, 2)] = u.x;
                x[self.var(i, k, 3)] = u.y;
                vel[0][k] = u.x;
                vel[1][k] = u.y;
            }
            for (c, v) in vel.iter().enumerate() {
                for (k, dv) in self.rule.differentiate(v).into_iter().enumerate() {
                    x[self.var(i, k, 4 + c)] = dv * 2.0 / h;
                }
            }
        }
        // exact boundary values
        x[self.var(0, 0, 0)] = self.start.x;
        x[self.var(0, 0, 1)] = self.start.y;
        x[self.var(self.intervals - 1, n - 1, 0)] = self.dest.x;
        x[self.var(self.intervals - 1, n - 1, 1)] = self.dest.y;
        x[self.tf_index()] = tf;
        x
    }
}

impl Nlp for CollocationProblem {
    fn num_vars(&self) -> usize {
        self.tf_index() + 1
    }

    fn objective(&self, _x: &[f64]) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; self.num_vars()];
        g[self.tf_index()] = 1.0;
        (_x[self.tf_index()], g)
    }

    fn constraints(&self, x: &[f64]) -> ConstraintEval {
        let n = self.nodes();
        let ni = self.intervals;
        let tf_i = self.tf_index();
        let tf = x[tf_i];
        let half_h = 0.5 / ni as f64;
        let mut eq = Vec::new();
        let mut jac_eq: Vec<Triplet> = Vec::new();
        // collocation defects: D S - (h/2) f
        for i in 0..ni {
            for k in 0..n {
                for c in 0..STATES {
                    let row = eq.len();
                    let mut r = 0.0;
                    for j in 0..n {
                        let d = self.rule.d(k, j);
                        r += d * x[self.var(i, j, c)];
                        jac_eq.push((row, self.var(i, j, c), d));
                    }
                    let f = x[self.var(i, k, c + 2)];
                    r -= half_h * tf * f;
                    jac_eq.push((row, self.var(i, k, c + 2), -half_h * tf));
                    jac_eq.push((row, tf_i, -half_h * f));
                    eq.push(r);
                }
            }
        }
        for i in 0..ni.saturating_sub(1) {
            for c in 0..STATES {
                let row = eq.len();
                eq.push(x[self.var(i, n - 1, c)] - x[self.var(i + 1, 0, c)]);
                jac_eq.push((row, self.var(i, n - 1, c), 1.0));
                jac_eq.push((row, self.var(i + 1, 0, c), -1.0));
            }
        }
        for (node, target) in [((0, 0), self.start), ((ni - 1, n - 1), self.dest)] {
            for (c, v) in [(0, target.x), (1, target.y)] {
                let row = eq.len();
                let idx = self.var(node.0, node.1, c);
                eq.push(x[idx] - v);
                jac_eq.push((row, idx, 1.0));
            }
        }
        let mut ineq = Vec::new();
        let mut jac_ineq: Vec<Triplet> = Vec::new();
        for (i, k) in self.unique_nodes() {
            let (vx, vy) = (self.var(i, k, 2), self.var(i, k, 3));
            let (row, target, jac) = match self.ocp.speed_mode {
                SpeedMode::Equality => (eq.len(), &mut eq, &mut jac_eq),
                SpeedMode::Capped => (ineq.len(), &mut ineq, &mut jac_ineq),
            };
            target.push(x[vx] * x[vx] + x[vy] * x[vy] - 1.0);
            jac.push((row, vx, 2.0 * x[vx]));
            jac.push((row, vy, 2.0 * x[vy]));
        }
        if self.radius > 0.0 {
            for (i, k) in self.unique_nodes() {
                let (px, py) = (self.var(i, k, 0), self.var(i, k, 1));
                let row = ineq.len();
                ineq.push(self.radius * self.radius - x[px] * x[px] - x[py] * x[py]);
                jac_ineq.push((row, px, -2.0 * x[px]));
                jac_ineq.push((row, py, -2.0 * x[py]));
            }
        }
        let row = ineq.len();
        ineq.push(self.tf_bounds.0 - tf);
        jac_ineq.push((row, tf_i, -1.0));
        ineq.push(tf - self.tf_bounds.1);
        jac_ineq.push((row + 1, tf_i, 1.0));
        ConstraintEval { eq, ineq, jac_eq, jac_ineq }
    }

    fn lagrangian_hessian(&self, _x: &[f64], w_eq: &[f64], w_ineq: &[f64]) -> Vec<Triplet> {
        let n = self.nodes();
        let tf_i = self.tf_index();
        let half_h = 0.5 / self.intervals as f64;
        let mut h = Vec::new();
        let mut row = 0;
        for i in 0..self.intervals {
            for k in 0..n {
                for c in 0..STATES {
                    let f = self.var(i, k, c + 2);
                    h.push((f, tf_i, -half_h * w_eq[row]));
                    h.push((tf_i, f, -half_h * w_eq[row]));
                    row += 1;
                }
            }
        }
        let speed_rows = self.num_continuity() + 4 + row;
        let mut diag = |weights: &[f64], first: usize, comps: [usize; 2], curvature: f64| {
            for (j, (i, k)) in self.unique_nodes().enumerate() {
                for c in comps {
                    let v = self.var(i, k, c);
                    h.push((v, v, curvature * weights[first + j]));
                }
            }
        };
        match self.ocp.speed_mode {
            SpeedMode::Equality => diag(w_eq, speed_rows, [2, 3], 2.0),
            SpeedMode::Capped => diag(w_ineq, 0, [2, 3], 2.0),
        }
        if self.radius > 0.0 {
            let first = match self.ocp.speed_mode {
                SpeedMode::Equality => 0,
                SpeedMode::Capped => self.unique_nodes().count(),
            };
            diag(w_ineq, first, [0, 1], -2.0);
        }
        h
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollocationSettings {
    pub intervals: usize,
    pub nodes: usize,
    pub solver: SolverSettings,
}

impl Default for CollocationSettings {
    fn default() -> Self {
        Self {
            intervals: 6,
            nodes: 8,
            solver: SolverSettings::default(),
        }
    }
}

/// Node-level solution in physical units.
#[derive(Clone, Debug, PartialEq)]
pub struct NlpSolution {
    pub intervals: usize,
    pub nodes_per_interval: usize,
    pub times: Vec<f64>,
    /// `[px, py, vx, vy]` per node, all intervals concatenated.
    pub states: Vec<[f64; 4]>,
    /// `[ux, uy]` per node.
    pub controls: Vec<[f64; 2]>,
    pub t_f: f64,
    pub objective: f64,
    /// Largest constraint residual in scaled units.
    pub max_violation: f64,
    pub stationarity: f64,
    pub converged: bool,
    pub iterations: usize,
    pub inner_iterations: usize,
    pub wall_time_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionSummary {
    pub t_f: f64,
    pub converged: bool,
    pub max_violation: f64,
    pub stationarity: f64,
    pub wall_time_ms: f64,
    pub iterations: usize,
    pub inner_iterations: usize,
    pub intervals: usize,
    pub nodes: usize,
    pub oracle_t_min: f64,
}

impl NlpSolution {
    pub const CSV_HEADER: &'static str = "node,t,px,py,vx,vy,ux,uy";

    fn from_result(problem: &CollocationProblem, r: &NlpResult, wall_time_ms: f64) -> Self {
        let s = problem.scaling;
        let c = problem.ocp.zone_center;
        let tf = r.x[problem.tf_index()];
        let n = problem.nodes();
        let mut sol = NlpSolution {
            intervals: problem.intervals,
            nodes_per_interval: n,
            times: Vec::new(),
            states: Vec::new(),
            controls: Vec::new(),
            t_f: tf * s.time(),
            objective: r.objective * s.time(),
            max_violation: r.max_violation,
            stationarity: r.stationarity,
            converged: r.converged,
            iterations: r.outer_iterations,
            inner_iterations: r.inner_iterations,
            wall_time_ms,
        };
        for i in 0..problem.intervals {
            for k in 0..n {
                let v = |j| r.x[problem.var(i, k, j)];
                sol.times.push(problem.node_time(i, k, tf) * s.time());
                sol.states.push([
                    c.x + v(0) * s.length,
                    c.y + v(1) * s.length,
                    v(2) * s.speed,
                    v(3) * s.speed,
                ]);
                sol.controls.push([v(4) * s.accel(), v(5) * s.accel()]);
            }
        }
        sol
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for (k, ((t, s), u)) in self.times.iter().zip(&self.states).zip(&self.controls).enumerate() {
            let f: Vec<String> = [*t, s[0], s[1], s[2], s[3], u[0], u[1]].iter().map(|v| fmt_sig(*v, 12)).collect();
            out.push_str(&format!("{k},{}\n", f.join(",")));
        }
        out
    }

    pub fn summary(&self, oracle_t_min: f64) -> SolutionSummary {
        SolutionSummary {
            t_f: self.t_f,
            converged: self.converged,
            max_violation: self.max_violation,
            stationarity: self.stationarity,
            wall_time_ms: self.wall_time_ms,
            iterations: self.iterations,
            inner_iterations: self.inner_iterations,
            intervals: self.intervals,
            nodes: self.nodes_per_interval,
            oracle_t_min,
        }
    }

    /// Positions interpolated at `factor` times the node resolution.
    pub fn densify(&self, rule: &LglRule<f64>, factor: usize) -> Vec<Point2<f64>> {
        let n = self.nodes_per_interval;
        let m = factor * n;
        let mut out = Vec::with_capacity(self.intervals * m);
        for i in 0..self.intervals {
            let px: Vec<f64> = (0..n).map(|k| self.states[i * n + k][0]).collect();
            let py: Vec<f64> = (0..n).map(|k| self.states[i * n + k][1]).collect();
            for j in 0..m {
                let tau = -1.0 + 2.0 * j as f64 / (m - 1) as f64;
                out.push(Point2::new(rule.interpolate(&px, tau), rule.interpolate(&py, tau)));
            }
        }
        out
    }

    /// Deepest penetration into the zone along the densified path (0 if clear).
    pub fn zone_intrusion(&self, ocp: &OcpDefinition, rule: &LglRule<f64>, factor: usize) -> f64 {
        self.densify(rule, factor)
            .iter()
            .map(|p| (ocp.zone_radius - p.dist(ocp.zone_center)).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// Transcribes, initializes from the geometric oracle, and solves.
pub fn solve_ocp(ocp: &OcpDefinition, settings: &CollocationSettings) -> Result<(NlpSolution, OraclePath)> {
    let problem = transcribe(ocp, settings.intervals, settings.nodes)?;
    let oracle = ocp.oracle()?;
    let guess = problem.initial_guess(&oracle);
    solve(&problem, &guess, &settings.solver).map(|s| (s, oracle))
}

pub fn solve(problem: &CollocationProblem, guess: &[f64], settings: &SolverSettings) -> Result<NlpSolution> {
    if guess.len() != problem.num_vars() {
        return Err(Error::Shape(format!("guess has {} entries, expected {}", guess.len(), problem.num_vars())));
    }
    if !(guess[problem.tf_index()] > 0.0) {
        return Err(Error::Parameter("final time guess must be positive".into()));
    }
    let clock = Instant::now();
    let r = solve_nlp(problem, guess, settings)?;
    Ok(NlpSolution::from_result(problem, &r, clock.elapsed().as_secs_f64() * 1e3))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn scenario_ocp() -> OcpDefinition {
        OcpDefinition {
            start: Point2::new(400.0, 400.0),
            dest: Point2::new(-200.0, -400.0),
            zone_center: Point2::new(0.0, 0.0),
            zone_radius: 240.0,
            speed: 200.0,
            speed_mode: SpeedMode::Equality,
        }
    }

    #[test]
    fn layout_counts() {
        let p = transcribe(&scenario_ocp(), 6, 8).unwrap();
        assert_eq!(p.num_vars(), 289);
        assert_eq!(p.num_continuity(), 20);
        let c = p.constraints(&vec![0.5; 289]);
        let unique = 6 * 7 + 1;
        assert_eq!(c.eq.len(), p.num_defects() + 20 + 4 + unique);
        assert_eq!(c.ineq.len(), unique + 2);
    }

    #[test]
    fn constants_have_zero_defect_without_motion() {
        let p = transcribe(&scenario_ocp(), 3, 5).unwrap();
        let mut x = vec![0.0; p.num_vars()];
        for i in 0..3 {
            for k in 0..5 {
                x[p.var(i, k, 0)] = 1.7;
                x[p.var(i, k, 1)] = -0.3;
            }
        }
        x[p.tf_index()] = 2.0;
        let c = p.constraints(&x);
        assert!(c.eq[..p.num_defects()].iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn linear_motion_has_zero_defect() {
        // one interval of scaled duration 2: px(t) = t - 1 with vx = 1
        let p = transcribe(&scenario_ocp(), 1, 6).unwrap();
        let mut x = vec![0.0; p.num_vars()];
        for k in 0..6 {
            x[p.var(0, k, 0)] = p.rule.nodes[k];
            x[p.var(0, k, 2)] = 1.0;
        }
        x[p.tf_index()] = 2.0;
        let c = p.constraints(&x);
        assert!(c.eq[..p.num_defects()].iter().all(|d| d.abs() < 1e-10));
    }

    #[test]
    fn guess_meets_boundary_and_zone() {
        let ocp = scenario_ocp();
        let p = transcribe(&ocp, 6, 8).unwrap();
        let g = p.initial_guess(&ocp.oracle().unwrap());
        let c = p.constraints(&g);
        let nb = p.num_defects() + p.num_continuity();
        assert!(c.eq[nb..nb + 4].iter().all(|v| v.abs() < 1e-12));
        let zone = &c.ineq[..c.ineq.len() - 2];
        assert!(zone.iter().all(|&v| v <= 1e-12));
        assert!(c.max_violation().is_finite());
    }

    #[test]
    fn rejects_degenerate_geometry() {
        let mut ocp = scenario_ocp();
        ocp.start = Point2::new(0.0, 100.0);
        assert!(transcribe(&ocp, 6, 8).is_err());
        assert!(transcribe(&scenario_ocp(), 0, 8).is_err());
        assert!(transcribe(&scenario_ocp(), 6, 1).is_err());
    }
}
