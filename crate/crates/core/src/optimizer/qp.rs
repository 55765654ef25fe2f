//! Dense strictly convex quadratic programs by the Goldfarb–Idnani dual
//! active-set method.
//!
//! minimize ½ xᵀHx + gᵀx subject to A x ≥ b, with H positive definite. The
//! problems met here have at most a handful of variables and up to a few
//! thousand rows, so the active-set algebra is redone densely each step.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One multiplier per row of `A`, zero for inactive rows.
    pub multipliers: DVector<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum QpError {
    #[error("Hessian is not positive definite")]
    NotConvex,
    #[error("constraints are inconsistent")]
    Infeasible,
    #[error("active-set iteration limit reached")]
    IterationLimit,
}

struct ActiveSet<'a> {
    hinv: &'a DMatrix<f64>,
    a: &'a DMatrix<f64>,
    rows: Vec<usize>,
    u: Vec<f64>,
}

impl ActiveSet<'_> {
    /// Primal step direction `z` and dual direction `r` for adding row `p`.
    fn directions(&self, p: usize) -> (DVector<f64>, DVector<f64>) {
        let np = self.a.row(p).transpose();
        let hn = self.hinv * &np;
        if self.rows.is_empty() {
            return (hn, DVector::zeros(0));
        }
        let n = DMatrix::from_columns(
            &self
                .rows
                .iter()
                .map(|&j| self.a.row(j).transpose())
                .collect::<Vec<_>>(),
        );
        let hn_active = self.hinv * &n;
        let m = n.transpose() * &hn_active;
        let rhs = n.transpose() * &hn;
        let r = m
            .clone()
            .lu()
            .solve(&rhs)
            .unwrap_or_else(|| m.pseudo_inverse(1e-14).unwrap() * rhs);
        (hn - hn_active * &r, r)
    }

    fn drop(&mut self, k: usize) {
        self.rows.remove(k);
        self.u.remove(k);
    }
}

pub fn solve(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<QpSolution, QpError> {
    let n = g.len();
    let m = b.len();
    let hinv = h.clone().cholesky().ok_or(QpError::NotConvex)?.inverse();
    let mut x = -(&hinv * g);
    let mut set = ActiveSet {
        hinv: &hinv,
        a,
        rows: Vec::new(),
        u: Vec::new(),
    };
    let row_norms: Vec<f64> = (0..m)
        .map(|j| a.row(j).norm().max(f64::MIN_POSITIVE))
        .collect();
    let limit = 50 * (m + n) + 100;
    let mut iterations = 0;

    loop {
        let slack = a * &x - b;
        let scale = 1.0 + x.amax();
        let violated = (0..m)
            .filter(|j| !set.rows.contains(j))
            .map(|j| (j, slack[j] / row_norms[j]))
            .filter(|&(j, s)| s < -1e-12 * (scale + b[j].abs() / row_norms[j]))
            .min_by(|l, r| l.1.total_cmp(&r.1));
        let Some((p, _)) = violated else { break };

        let mut u_p = 0.0;
        loop {
            iterations += 1;
            if iterations > limit {
                return Err(QpError::IterationLimit);
            }
            let (z, r) = set.directions(p);
            let np = a.row(p).transpose();
            let curvature = z.dot(&np);
            let s_p = np.dot(&x) - b[p];

            let mut partial: Option<(usize, f64)> = None;
            for (k, (&rk, &uk)) in r.iter().zip(&set.u).enumerate() {
                if rk > 0.0 {
                    let t = uk / rk;
                    if partial.is_none_or(|(_, best)| t < best) {
                        partial = Some((k, t));
                    }
                }
            }
            let full = (curvature > 1e-14 * row_norms[p] * row_norms[p]).then(|| -s_p / curvature);

            match (partial, full) {
                (None, None) => return Err(QpError::Infeasible),
                (Some((k, t1)), None) => {
                    for (u, rk) in set.u.iter_mut().zip(r.iter()) {
                        *u -= t1 * rk;
                    }
                    u_p += t1;
                    set.drop(k);
                }
                (partial, Some(t2)) => {
                    let t = partial.map_or(t2, |(_, t1)| t1.min(t2));
                    x += &z * t;
                    for (u, rk) in set.u.iter_mut().zip(r.iter()) {
                        *u -= t * rk;
                    }
                    u_p += t;
                    match partial {
                        Some((k, t1)) if t1 < t2 => set.drop(k),
                        _ => {
                            set.rows.push(p);
                            set.u.push(u_p);
                            break;
                        }
                    }
                }
            }
        }
    }

    let mut multipliers = DVector::zeros(m);
    for (&j, &u) in set.rows.iter().zip(&set.u) {
        multipliers[j] = u.max(0.0);
    }
    Ok(QpSolution {
        x,
        multipliers,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn unconstrained_minimum() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        let g = DVector::from_vec(vec![-2.0, -4.0]);
        let s = solve(&h, &g, &DMatrix::zeros(0, 2), &DVector::zeros(0)).unwrap();
        assert_relative_eq!(s.x, DVector::from_vec(vec![1.0, 1.0]), epsilon = 1e-14);
    }

    #[test]
    fn single_active_bound() {
        // min (x - 1)^2 s.t. x >= 2
        let h = DMatrix::from_element(1, 1, 2.0);
        let g = DVector::from_element(1, -2.0);
        let s = solve(
            &h,
            &g,
            &DMatrix::from_element(1, 1, 1.0),
            &DVector::from_element(1, 2.0),
        )
        .unwrap();
        assert_relative_eq!(s.x[0], 2.0, epsilon = 1e-14);
        assert_relative_eq!(s.multipliers[0], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn textbook_problem() {
        // min x1² + x2² - 2x1 - 5x2 s.t. -x1 + 2x2 <= 2, x1 + 2x2 <= 6, x1 - 2x2 <= 2, x >= 0.
        // Optimum (1.4, 1.7) with the first row active.
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2.0]));
        let g = DVector::from_vec(vec![-2.0, -5.0]);
        let a = DMatrix::from_row_slice(
            5,
            2,
            &[1.0, -2.0, -1.0, -2.0, -1.0, 2.0, 1.0, 0.0, 0.0, 1.0],
        );
        let b = DVector::from_vec(vec![-2.0, -6.0, -2.0, 0.0, 0.0]);
        let s = solve(&h, &g, &a, &b).unwrap();
        assert_relative_eq!(s.x, DVector::from_vec(vec![1.4, 1.7]), epsilon = 1e-12);
        assert_relative_eq!(s.multipliers[0], 0.8, epsilon = 1e-12);
        assert_eq!(s.multipliers.iter().filter(|u| **u > 0.0).count(), 1);
    }

    #[test]
    fn redundant_rows_are_tolerated() {
        let h = DMatrix::identity(2, 2);
        let g = DVector::zeros(2);
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 0.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 1.0]);
        let s = solve(&h, &g, &a, &b).unwrap();
        assert_relative_eq!(s.x, DVector::from_vec(vec![1.0, 0.0]), epsilon = 1e-12);
    }

    #[test]
    fn inconsistent_rows() {
        let h = DMatrix::identity(1, 1);
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let b = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(
            solve(&h, &DVector::zeros(1), &a, &b),
            Err(QpError::Infeasible)
        );
    }

    #[test]
    fn indefinite_hessian_rejected() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert_eq!(
            solve(
                &h,
                &DVector::zeros(2),
                &DMatrix::zeros(0, 2),
                &DVector::zeros(0)
            ),
            Err(QpError::NotConvex)
        );
    }
}
