//! Sequential quadratic programming for small box-bounded problems with
//! inequality constraints `c(x) ≥ 0`.
//!
//! Variables are mapped to the unit box. Each iteration solves an elastic QP
//! built from a damped-BFGS Hessian and
//! forward-difference derivatives, then globalizes with an ℓ1 merit function
//! and a watchdog line search: one full step may be taken without merit
//! decrease, and is kept only if the following step restores sufficient
//! decrease relative to the point before it. When neither the step nor a
//! retry from the identity Hessian makes progress, compass polls on the
//! merit function move the iterate across jumps the differenced model cannot
//! see (Coulomb friction makes the force objective piecewise smooth).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::qp;

/// Objective value substituted when a point cannot be evaluated.
pub const SENTINEL: f64 = 1e12;

pub trait Problem: Sync {
    /// Evaluation state frozen while differencing (e.g. the argmax of a
    /// nonsmooth max).
    type Context: Clone + Send + Sync;

    fn lower(&self) -> DVector<f64>;
    fn upper(&self) -> DVector<f64>;
    fn constraint_count(&self) -> usize;
    /// `None` when nothing at all can be evaluated at `x`.
    fn evaluate(
        &self,
        x: &DVector<f64>,
        context: Option<&Self::Context>,
    ) -> Option<Evaluation<Self::Context>>;
}

#[derive(Debug, Clone)]
pub struct Evaluation<C> {
    pub objective: f64,
    pub constraints: DVector<f64>,
    pub context: C,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SqpOptions {
    pub max_iterations: usize,
    /// On constraint values after the safety margin is subtracted.
    pub feasibility_tolerance: f64,
    /// On `|∇f·d| + Σ λ|c|` in objective units, relative to `1 + |f|`.
    pub optimality_tolerance: f64,
    /// Infinity norm of the QP step in unit-box variables.
    pub step_tolerance: f64,
    /// Forward-difference step in unit-box variables.
    pub fd_step: f64,
    /// Constraints are solved as `c(x) ≥ margin` so that converged points
    /// are strictly feasible.
    pub constraint_margin: f64,
    pub initial_penalty: f64,
    /// Weight on the elastic slack of the QP subproblem; also caps the merit
    /// penalty at twice this value.
    pub elastic_penalty: f64,
    pub max_backtracks: usize,
    pub watchdog: bool,
}

impl Default for SqpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 150,
            feasibility_tolerance: 1e-6,
            optimality_tolerance: 1e-6,
            step_tolerance: 1e-9,
            fd_step: 1e-6,
            constraint_margin: 1e-5,
            initial_penalty: 10.0,
            elastic_penalty: 1e4,
            max_backtracks: 30,
            watchdog: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Converged,
    Infeasible,
    #[serde(rename = "max-iter")]
    MaxIter,
}

/// One accepted iterate. Merit values are comparable between consecutive
/// records with the same penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub iteration: usize,
    pub objective: f64,
    pub max_violation: f64,
    pub step_norm: f64,
    pub merit: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone)]
pub struct SqpResult<C> {
    pub x: DVector<f64>,
    pub objective: f64,
    pub constraints: DVector<f64>,
    pub context: Option<C>,
    pub status: Status,
    pub message: String,
    pub iterations: Vec<IterateRecord>,
    pub evaluations: usize,
}

#[derive(Clone)]
struct Point<C> {
    z: DVector<f64>,
    /// Scaled objective.
    f: f64,
    /// Constraints minus the safety margin.
    c: DVector<f64>,
    raw_objective: f64,
    raw_constraints: DVector<f64>,
    context: Option<C>,
}

impl<C> Point<C> {
    fn violation_l1(&self) -> f64 {
        self.c.iter().map(|v| (-v).max(0.0)).sum()
    }

    fn max_violation(&self) -> f64 {
        self.c.iter().fold(0.0f64, |m, v| m.max(-v))
    }

    fn merit(&self, penalty: f64) -> f64 {
        self.f + penalty * self.violation_l1()
    }
}

struct Linearization {
    g: DVector<f64>,
    j: DMatrix<f64>,
}

impl Linearization {
    fn lagrangian_gradient(&self, lambda: &DVector<f64>) -> DVector<f64> {
        &self.g - self.j.transpose() * lambda
    }
}

struct Step {
    d: DVector<f64>,
    lambda: DVector<f64>,
}

struct Solver<'a, P: Problem> {
    problem: &'a P,
    opts: &'a SqpOptions,
    lower: DVector<f64>,
    width: DVector<f64>,
    scale: f64,
    fallback: DVector<f64>,
    evaluations: usize,
}

impl<P: Problem> Solver<'_, P> {
    fn to_problem(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.lower + self.width.component_mul(z)
    }

    fn point(&mut self, z: DVector<f64>, context: Option<&P::Context>) -> Point<P::Context> {
        self.evaluations += 1;
        match self.problem.evaluate(&self.to_problem(&z), context) {
            Some(e) => {
                let c = e.constraints.add_scalar(-self.opts.constraint_margin);
                self.fallback = e.constraints.clone();
                Point {
                    z,
                    f: e.objective / self.scale,
                    c,
                    raw_objective: e.objective,
                    raw_constraints: e.constraints,
                    context: Some(e.context),
                }
            }
            None => Point {
                z,
                f: SENTINEL / self.scale,
                c: self.fallback.add_scalar(-self.opts.constraint_margin),
                raw_objective: SENTINEL,
                raw_constraints: self.fallback.clone(),
                context: None,
            },
        }
    }

    fn linearize(&mut self, p: &Point<P::Context>) -> Linearization {
        let n = p.z.len();
        let h = self.opts.fd_step;
        let columns: Vec<Option<(f64, DVector<f64>)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut z = p.z.clone();
                let step = if z[i] + h <= 1.0 { h } else { -h };
                z[i] += step;
                let e = self
                    .problem
                    .evaluate(&self.to_problem(&z), p.context.as_ref())?;
                let df = (e.objective / self.scale - p.f) / step;
                let dc = (e.constraints.add_scalar(-self.opts.constraint_margin) - &p.c) / step;
                Some((df, dc))
            })
            .collect();
        self.evaluations += n;
        let mut g = DVector::zeros(n);
        let mut j = DMatrix::zeros(p.c.len(), n);
        for (i, col) in columns.into_iter().enumerate() {
            if let Some((df, dc)) = col {
                if df.is_finite() && dc.iter().all(|v| v.is_finite()) {
                    g[i] = df;
                    j.set_column(i, &dc);
                }
            }
        }
        Linearization { g, j }
    }

    /// QP subproblem. Violated rows are relaxed by one shared slack `t`,
    /// each in proportion to its current violation, so `t` equal to the
    /// largest violation reproduces `d = 0` and satisfied rows stay hard.
    fn qp_step(
        &self,
        p: &Point<P::Context>,
        lin: &Linearization,
        b: &DMatrix<f64>,
        rho: f64,
    ) -> Option<Step> {
        let n = p.z.len();
        let m = p.c.len();
        let nv = n + 1;
        let mut h = DMatrix::zeros(nv, nv);
        h.view_mut((0, 0), (n, n)).copy_from(b);
        h[(n, n)] = 1e-6;
        let mut g = DVector::zeros(nv);
        g.rows_mut(0, n).copy_from(&lin.g);
        g[n] = rho;

        let rows = m + 1 + 2 * n;
        let worst = p.max_violation();
        let mut a = DMatrix::zeros(rows, nv);
        let mut rhs = DVector::zeros(rows);
        for k in 0..m {
            a.view_mut((k, 0), (1, n)).copy_from(&lin.j.row(k));
            if p.c[k] < 0.0 {
                a[(k, n)] = -p.c[k] / worst;
            }
            rhs[k] = -p.c[k];
        }
        a[(m, n)] = 1.0;
        for i in 0..n {
            a[(m + 1 + 2 * i, i)] = 1.0;
            rhs[m + 1 + 2 * i] = -p.z[i];
            a[(m + 2 + 2 * i, i)] = -1.0;
            rhs[m + 2 + 2 * i] = p.z[i] - 1.0;
        }
        let sol = qp::solve(&h, &g, &a, &rhs).ok()?;
        Some(Step {
            d: sol.x.rows(0, n).into_owned(),
            lambda: sol.multipliers.rows(0, m).into_owned(),
        })
    }

    fn directional_derivative(
        &self,
        p: &Point<P::Context>,
        lin: &Linearization,
        d: &DVector<f64>,
        mu: f64,
    ) -> f64 {
        let predicted = &p.c + &lin.j * d;
        let model_violation: f64 = predicted.iter().map(|v| (-v).max(0.0)).sum();
        lin.g.dot(d) + mu * (model_violation - p.violation_l1())
    }

    fn trial(&mut self, z: &DVector<f64>, d: &DVector<f64>, alpha: f64) -> Point<P::Context> {
        let t = (z + d * alpha).map(|v| v.clamp(0.0, 1.0));
        self.point(t, None)
    }

    /// Backtracking along `d` from `p` until the merit drops below
    /// `reference + σ α slope`.
    fn backtrack(
        &mut self,
        p: &Point<P::Context>,
        d: &DVector<f64>,
        reference: f64,
        slope: f64,
        mu: f64,
        start: f64,
    ) -> Option<Point<P::Context>> {
        let mut alpha = start;
        for _ in 0..=self.opts.max_backtracks {
            let t = self.trial(&p.z, d, alpha);
            if t.merit(mu) <= reference + ARMIJO * alpha * slope {
                return Some(t);
            }
            alpha *= 0.5;
        }
        None
    }

    /// Compass search on the merit function: poll `±δ` along each unit-box
    /// coordinate, halving `δ` until a poll point gives sufficient decrease.
    /// Used when the SQP direction fails, typically on a jump of the
    /// objective where the differenced model is meaningless.
    fn compass(&mut self, p: &Point<P::Context>, mu: f64) -> Option<Point<P::Context>> {
        let merit0 = p.merit(mu);
        let mut delta = COMPASS_START;
        while delta >= COMPASS_END {
            let polls: Vec<DVector<f64>> = (0..p.z.len())
                .flat_map(|i| [delta, -delta].map(|s| (i, s)))
                .filter_map(|(i, s)| {
                    let v = p.z[i] + s;
                    (0.0..=1.0).contains(&v).then(|| {
                        let mut z = p.z.clone();
                        z[i] = v;
                        z
                    })
                })
                .collect();
            for z in polls {
                let t = self.point(z, None);
                if t.context.is_some() && t.merit(mu) < merit0 - ARMIJO * delta * delta {
                    return Some(t);
                }
            }
            delta *= 0.5;
        }
        None
    }
}

const ARMIJO: f64 = 1e-4;
const COMPASS_START: f64 = 0.05;
const COMPASS_END: f64 = 1e-7;

/// Powell-damped BFGS update.
fn bfgs(b: &DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64> {
    let bs = b * s;
    let sbs = s.dot(&bs);
    if !(sbs > 1e-300) {
        return b.clone();
    }
    let sy = s.dot(y);
    let theta = if sy >= 0.2 * sbs {
        1.0
    } else {
        0.8 * sbs / (sbs - sy)
    };
    let r = y * theta + &bs * (1.0 - theta);
    let sr = s.dot(&r);
    if !(sr > 1e-300) || !r.iter().all(|v| v.is_finite()) {
        return b.clone();
    }
    let updated = b - &bs * bs.transpose() / sbs + &r * r.transpose() / sr;
    let sym = (&updated + updated.transpose()) * 0.5;
    if sym.clone().cholesky().is_some() {
        sym
    } else {
        b.clone()
    }
}

/// Forward-difference derivatives of the raw objective and constraints with
/// respect to unit-box variables at `x`, with the evaluation context frozen
/// exactly as the solver does.
pub fn unit_box_gradient<P: Problem>(
    problem: &P,
    x: &DVector<f64>,
    opts: &SqpOptions,
) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let lower = problem.lower();
    let width = problem.upper() - &lower;
    let z = (x - &lower).component_div(&width);
    let mut solver = Solver {
        problem,
        opts,
        lower,
        width,
        scale: 1.0,
        fallback: DVector::zeros(problem.constraint_count()),
        evaluations: 0,
    };
    let p = solver.point(z, None);
    p.context.as_ref()?;
    let lin = solver.linearize(&p);
    Some((lin.g, lin.j))
}

pub fn minimize<P: Problem>(
    problem: &P,
    x0: &DVector<f64>,
    opts: &SqpOptions,
) -> SqpResult<P::Context> {
    let lower = problem.lower();
    let width = problem.upper() - &lower;
    let z0 = (x0 - &lower)
        .component_div(&width)
        .map(|v| v.clamp(0.0, 1.0));
    let m = problem.constraint_count();
    let (lower_x, width_x) = (lower.clone(), width.clone());
    let mut solver = Solver {
        problem,
        opts,
        lower,
        width,
        scale: 1.0,
        fallback: DVector::from_element(m, -1.0),
        evaluations: 0,
    };

    let mut p = solver.point(z0, None);
    solver.scale = if p.context.is_some() && p.raw_objective.abs() < 0.5 * SENTINEL {
        p.raw_objective.abs().max(1.0)
    } else {
        1.0
    };
    p.f = p.raw_objective / solver.scale;

    let n = p.z.len();
    let mut b = DMatrix::identity(n, n);
    let mut mu = opts.initial_penalty;
    let mut lin = solver.linearize(&p);
    let mut log = vec![IterateRecord {
        iteration: 0,
        objective: p.raw_objective,
        max_violation: p.max_violation(),
        step_norm: 0.0,
        merit: p.merit(mu),
        penalty: mu,
    }];
    let mut watchdog_armed = opts.watchdog;
    let mut reset_tried = false;

    let finish = |p: Point<P::Context>,
                  status: Status,
                  message: &str,
                  log: Vec<IterateRecord>,
                  evaluations| {
        let x = &lower_x + width_x.component_mul(&p.z);
        SqpResult {
            x,
            objective: p.raw_objective,
            constraints: p.raw_constraints,
            context: p.context,
            status,
            message: message.to_string(),
            iterations: log,
            evaluations,
        }
    };

    for iteration in 1..=opts.max_iterations {
        let rho = opts.elastic_penalty;
        let step = match solver.qp_step(&p, &lin, &b, rho) {
            Some(s) => s,
            None => {
                b = DMatrix::identity(n, n);
                match solver.qp_step(&p, &lin, &b, rho) {
                    Some(s) => s,
                    None => {
                        let ev = solver.evaluations;
                        return finish(p, Status::MaxIter, "QP subproblem failed", log, ev);
                    }
                }
            }
        };

        let max_violation = p.max_violation();
        let complementarity: f64 = step
            .lambda
            .iter()
            .zip(p.c.iter())
            .map(|(l, c)| l * c.abs())
            .sum();
        let kkt = lin.g.dot(&step.d).abs() + complementarity;
        let step_norm = step.d.amax();
        // Measured on the raw objective so the test does not depend on the
        // scale taken from the starting point.
        if max_violation <= opts.feasibility_tolerance
            && (kkt * solver.scale <= opts.optimality_tolerance * (1.0 + p.raw_objective.abs())
                || step_norm <= opts.step_tolerance)
        {
            let ev = solver.evaluations;
            return finish(p, Status::Converged, "KKT conditions satisfied", log, ev);
        }
        if max_violation > opts.feasibility_tolerance && step_norm <= opts.step_tolerance {
            let ev = solver.evaluations;
            return finish(
                p,
                Status::Infeasible,
                "stationary point of the constraint violation",
                log,
                ev,
            );
        }

        let lambda_max = step.lambda.amax();
        if mu < 1.1 * lambda_max {
            mu = (2.0 * lambda_max).min(2.0 * rho);
        }
        let mut slope = solver.directional_derivative(&p, &lin, &step.d, mu);
        if !(slope < 0.0) {
            slope = -step.d.dot(&(&b * &step.d)).max(1e-300);
        }
        let merit0 = p.merit(mu);

        let full = solver.trial(&p.z, &step.d, 1.0);
        let mut accepted: Option<(Point<P::Context>, Linearization, DMatrix<f64>)> = None;
        if full.merit(mu) <= merit0 + ARMIJO * slope {
            let lin_new = solver.linearize(&full);
            let y =
                lin_new.lagrangian_gradient(&step.lambda) - lin.lagrangian_gradient(&step.lambda);
            let b_new = bfgs(&b, &(&full.z - &p.z), &y);
            accepted = Some((full, lin_new, b_new));
            watchdog_armed = opts.watchdog;
        } else if watchdog_armed && full.context.is_some() {
            watchdog_armed = false;
            let lin1 = solver.linearize(&full);
            let y1 = lin1.lagrangian_gradient(&step.lambda) - lin.lagrangian_gradient(&step.lambda);
            let b1 = bfgs(&b, &(&full.z - &p.z), &y1);
            if let Some(step1) = solver.qp_step(&full, &lin1, &b1, rho) {
                let slope1 = solver
                    .directional_derivative(&full, &lin1, &step1.d, mu)
                    .min(0.0);
                let target = merit0 + ARMIJO * slope;
                if let Some(p2) = solver.backtrack(&full, &step1.d, target, slope1, mu, 1.0) {
                    let lin2 = solver.linearize(&p2);
                    let y2 = lin2.lagrangian_gradient(&step1.lambda)
                        - lin1.lagrangian_gradient(&step1.lambda);
                    let b2 = bfgs(&b1, &(&p2.z - &full.z), &y2);
                    accepted = Some((p2, lin2, b2));
                }
            }
        }
        if accepted.is_none() {
            if let Some(t) = solver.backtrack(&p, &step.d, merit0, slope, mu, 0.5) {
                let lin_new = solver.linearize(&t);
                let y = lin_new.lagrangian_gradient(&step.lambda)
                    - lin.lagrangian_gradient(&step.lambda);
                let b_new = bfgs(&b, &(&t.z - &p.z), &y);
                accepted = Some((t, lin_new, b_new));
            }
        }
        if accepted.is_none() && (reset_tried || b == DMatrix::identity(n, n)) {
            if let Some(t) = solver.compass(&p, mu) {
                let lin_new = solver.linearize(&t);
                accepted = Some((t, lin_new, DMatrix::identity(n, n)));
            }
        }

        match accepted {
            Some((next, lin_next, b_next)) => {
                let moved = (&next.z - &p.z).amax();
                p = next;
                lin = lin_next;
                b = b_next;
                reset_tried = false;
                log.push(IterateRecord {
                    iteration,
                    objective: p.raw_objective,
                    max_violation: p.max_violation(),
                    step_norm: moved,
                    merit: p.merit(mu),
                    penalty: mu,
                });
            }
            None if !reset_tried && b != DMatrix::identity(n, n) => {
                // The quasi-Newton model may point across a jump of the
                // objective; retry once from the identity.
                b = DMatrix::identity(n, n);
                reset_tried = true;
            }
            None => {
                let status = if p.max_violation() <= opts.feasibility_tolerance {
                    Status::MaxIter
                } else {
                    Status::Infeasible
                };
                let ev = solver.evaluations;
                return finish(
                    p,
                    status,
                    "no descent from line search or compass polls",
                    log,
                    ev,
                );
            }
        }
    }
    let ev = solver.evaluations;
    finish(p, Status::MaxIter, "iteration limit", log, ev)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic;

    impl Problem for Quadratic {
        type Context = ();
        fn lower(&self) -> DVector<f64> {
            DVector::from_element(1, -10.0)
        }
        fn upper(&self) -> DVector<f64> {
            DVector::from_element(1, 10.0)
        }
        fn constraint_count(&self) -> usize {
            1
        }
        fn evaluate(&self, x: &DVector<f64>, _: Option<&()>) -> Option<Evaluation<()>> {
            Some(Evaluation {
                objective: (x[0] - 1.0).powi(2),
                constraints: DVector::from_element(1, x[0] - 2.0),
                context: (),
            })
        }
    }

    #[test]
    fn bound_constrained_quadratic() {
        let opts = SqpOptions {
            constraint_margin: 0.0,
            ..Default::default()
        };
        let r = minimize(&Quadratic, &DVector::from_element(1, 0.0), &opts);
        assert_eq!(r.status, Status::Converged, "{}", r.message);
        assert!((r.x[0] - 2.0).abs() < 1e-6, "{}", r.x[0]);
    }

    #[test]
    fn margin_keeps_the_solution_strictly_inside() {
        let r = minimize(
            &Quadratic,
            &DVector::from_element(1, 0.0),
            &SqpOptions::default(),
        );
        assert_eq!(r.status, Status::Converged);
        assert!(r.constraints[0] > 0.0);
    }

    #[test]
    fn damped_update_stays_positive_definite() {
        let b = DMatrix::identity(2, 2);
        let s = DVector::from_vec(vec![1.0, 0.0]);
        let y = DVector::from_vec(vec![-3.0, 1.0]);
        assert!(bfgs(&b, &s, &y).cholesky().is_some());
    }
}
