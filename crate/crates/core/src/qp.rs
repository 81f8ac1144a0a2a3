//! Small dense quadratic programs for the safety filter.
//!
//! Everything reduces to a least-distance problem
//!
//! ```text
//! minimize ½‖y − y₀‖²   subject to   nᵢ·y + bᵢ ≥ 0
//! ```
//!
//! solved exactly by a dual active-set method (Goldfarb–Idnani with an
//! identity Hessian). The method starts from the unconstrained minimizer and
//! adds violated constraints one at a time, so infeasibility shows up as a
//! violated constraint whose normal lies in the cone of the active normals.

use nalgebra::{DMatrix, DVector, Vector3};
use thiserror::Error;

use crate::safety::CbfRow;

const MAX_ITERATIONS: usize = 200;
/// Relative slack below which a constraint counts as violated.
const FEAS_TOL: f64 = 1e-12;
/// Relative size below which a step direction counts as zero.
const DEGENERATE_TOL: f64 = 1e-12;

/// Weight on distance-to-request in the least-violation fallback.
pub const FALLBACK_REGULARIZATION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("constraint set is empty (violated constraint {0} cannot be satisfied)")]
    Infeasible(usize),
    #[error("active-set iteration limit reached")]
    IterationLimit,
    #[error("non-finite problem data")]
    NonFinite,
}

/// Result of a least-distance solve.
#[derive(Debug, Clone, PartialEq)]
pub struct LdpSolution {
    pub y: DVector<f64>,
    /// Active constraint indices in the order they were added.
    pub active: Vec<usize>,
    /// Multipliers aligned with `active`.
    pub multipliers: Vec<f64>,
    pub iterations: usize,
}

fn violation_tol(normal_norm: f64, b: f64, y_norm: f64) -> f64 {
    FEAS_TOL * (1.0 + b.abs() + normal_norm * y_norm)
}

/// Exact minimizer of `½‖y − y0‖²` over `{y : normals·y + offsets ≥ 0}`.
///
/// `normals` holds one constraint per row. Among equally violated
/// constraints the lowest index enters first.
pub fn solve_ldp(
    target: &DVector<f64>,
    normals: &DMatrix<f64>,
    offsets: &DVector<f64>,
) -> Result<LdpSolution, QpError> {
    let dim = target.len();
    let m = normals.nrows();
    assert_eq!(normals.ncols(), dim);
    assert_eq!(offsets.len(), m);
    if !(target.iter().all(|v| v.is_finite())
        && normals.iter().all(|v| v.is_finite())
        && offsets.iter().all(|v| v.is_finite()))
    {
        return Err(QpError::NonFinite);
    }

    let norms: Vec<f64> = (0..m).map(|i| normals.row(i).norm()).collect();
    let mut y = target.clone();
    let mut active: Vec<usize> = Vec::new();
    let mut lambda: Vec<f64> = Vec::new();
    let mut iterations = 0;

    // zero-normal rows with negative offset can never be met
    if let Some(i) = (0..m).find(|&i| norms[i] == 0.0 && offsets[i] < -violation_tol(0.0, offsets[i], 0.0)) {
        return Err(QpError::Infeasible(i));
    }

    loop {
        // most violated constraint, measured as distance to its hyperplane
        let y_norm = y.norm();
        let mut entering = None;
        let mut worst = 0.0;
        for i in 0..m {
            if active.contains(&i) || norms[i] == 0.0 {
                continue;
            }
            let slack = normals.row(i).dot(&y.transpose()) + offsets[i];
            if slack < -violation_tol(norms[i], offsets[i], y_norm) {
                let depth = -slack / norms[i];
                if depth > worst {
                    worst = depth;
                    entering = Some(i);
                }
            }
        }
        let Some(p) = entering else {
            return Ok(LdpSolution {
                y,
                active,
                multipliers: lambda,
                iterations,
            });
        };

        let n_p: DVector<f64> = normals.row(p).transpose();
        let mut lambda_p = 0.0;
        loop {
            iterations += 1;
            if iterations > MAX_ITERATIONS {
                return Err(QpError::IterationLimit);
            }

            let (z, r) = project(normals, &active, &n_p);

            // largest dual step keeping active multipliers non-negative
            let mut t_dual = f64::INFINITY;
            let mut blocking = None;
            for (k, (&lam, &rk)) in lambda.iter().zip(r.iter()).enumerate() {
                if rk > DEGENERATE_TOL * norms[p] * norms[active[k]] {
                    let t = lam / rk;
                    let better = t < t_dual || (t == t_dual && blocking.is_some_and(|b: usize| active[k] < active[b]));
                    if better {
                        t_dual = t;
                        blocking = Some(k);
                    }
                }
            }

            let zz = z.norm_squared();
            if zz <= DEGENERATE_TOL * norms[p] * norms[p] {
                // n_p lies in the span of the active normals
                let Some(k) = blocking else {
                    return Err(QpError::Infeasible(p));
                };
                for (lam, rk) in lambda.iter_mut().zip(r.iter()) {
                    *lam -= t_dual * rk;
                }
                lambda_p += t_dual;
                active.remove(k);
                lambda.remove(k);
                continue;
            }

            let slack_p = n_p.dot(&y) + offsets[p];
            let t_primal = -slack_p / zz;
            let t = t_primal.min(t_dual);
            y.axpy(t, &z, 1.0);
            for (lam, rk) in lambda.iter_mut().zip(r.iter()) {
                *lam -= t * rk;
            }
            lambda_p += t;

            if t_primal <= t_dual {
                active.push(p);
                lambda.push(lambda_p);
                break;
            }
            let k = blocking.expect("finite dual step has a blocking constraint");
            active.remove(k);
            lambda.remove(k);
        }
    }
}

/// Splits `n` into its component orthogonal to the active normals (`z`) and
/// the coordinates of its projection onto them (`r`).
fn project(normals: &DMatrix<f64>, active: &[usize], n: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    if active.is_empty() {
        return (n.clone(), DVector::zeros(0));
    }
    let na = DMatrix::from_fn(normals.ncols(), active.len(), |row, col| normals[(active[col], row)]);
    let gram = na.transpose() * &na;
    let rhs = na.transpose() * n;
    let r = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram
            .pseudo_inverse(1e-14)
            .map(|pinv| pinv * &rhs)
            .unwrap_or_else(|_| DVector::zeros(active.len())),
    };
    let z = n - &na * &r;
    (z, r)
}

/// Solution of the filter QP in control coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u: Vector3<f64>,
    /// Active constraints: `0..rows.len()` are barrier rows, followed by the
    /// upper box faces for x, y, z and then the lower faces.
    pub active_set: Vec<usize>,
    pub multipliers: Vec<f64>,
}

impl QpSolution {
    /// Active barrier rows only.
    pub fn active_rows(&self, n_rows: usize) -> Vec<usize> {
        let mut a: Vec<usize> = self.active_set.iter().copied().filter(|&i| i < n_rows).collect();
        a.sort_unstable();
        a
    }
}

/// Constraint matrix for `rows` plus the box `|u_j| ≤ u_max`, with extra
/// zero columns for slack variables when `slack_columns` is set.
fn assemble(rows: &[CbfRow], u_max: f64, slack_columns: bool) -> (DMatrix<f64>, DVector<f64>) {
    let n = rows.len();
    let dim = 3 + if slack_columns { n } else { 0 };
    let mut normals = DMatrix::zeros(n + 6, dim);
    let mut offsets = DVector::zeros(n + 6);
    for (i, row) in rows.iter().enumerate() {
        for j in 0..3 {
            normals[(i, j)] = row.c[j];
        }
        if slack_columns {
            normals[(i, 3 + i)] = 1.0;
        }
        offsets[i] = row.b;
    }
    for j in 0..3 {
        // u_max − u_j ≥ 0
        normals[(n + j, j)] = -1.0;
        offsets[n + j] = u_max;
        // u_j + u_max ≥ 0
        normals[(n + 3 + j, j)] = 1.0;
        offsets[n + 3 + j] = u_max;
    }
    (normals, offsets)
}

/// `argmin ½‖u − u_des‖²` subject to every row and the actuation box.
pub fn solve_qp(u_des: &Vector3<f64>, rows: &[CbfRow], u_max: f64) -> Result<QpSolution, QpError> {
    let (normals, offsets) = assemble(rows, u_max, false);
    let target = DVector::from_column_slice(u_des.as_slice());
    let sol = solve_ldp(&target, &normals, &offsets)?;
    Ok(QpSolution {
        u: Vector3::new(sol.y[0], sol.y[1], sol.y[2]),
        active_set: sol.active,
        multipliers: sol.multipliers,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FallbackSolution {
    pub u: Vector3<f64>,
    /// `max(0, −(c·u + b))` per row at the returned control.
    pub slack_used: Vec<f64>,
}

/// Least-violation control: minimizes
/// `Σ max(0, −(cᵢ·u + bᵢ))² + ε‖u − u_des‖²` over the box.
///
/// Posed as a QP in `(u, s)` with `cᵢ·u + bᵢ + sᵢ ≥ 0`, which is always
/// feasible, and rescaled to unit Hessian for [`solve_ldp`].
pub fn infeasible_fallback(u_des: &Vector3<f64>, rows: &[CbfRow], u_max: f64) -> FallbackSolution {
    let n = rows.len();
    let (mut normals, offsets) = assemble(rows, u_max, true);

    // objective ε‖u−u_des‖² + ‖s‖² = ½(2ε‖u−u_des‖² + 2‖s‖²); substitute y = √w·x
    let w_u = (2.0 * FALLBACK_REGULARIZATION).sqrt();
    let w_s = 2f64.sqrt();
    for mut col in normals.column_iter_mut().take(3) {
        col /= w_u;
    }
    for mut col in normals.column_iter_mut().skip(3) {
        col /= w_s;
    }
    let mut target = DVector::zeros(3 + n);
    for j in 0..3 {
        target[j] = w_u * u_des[j];
    }

    let u = match solve_ldp(&target, &normals, &offsets) {
        Ok(sol) => Vector3::new(sol.y[0], sol.y[1], sol.y[2]) / w_u,
        // unreachable for finite data since slack makes every row satisfiable
        Err(_) => u_des.map(|f| if f.is_finite() { f.clamp(-u_max, u_max) } else { 0.0 }),
    };
    let u = u.map(|f| f.clamp(-u_max, u_max));
    let slack_used = rows.iter().map(|r| (-r.slack(&u)).max(0.0)).collect();
    FallbackSolution { u, slack_used }
}

/// Largest violation of the KKT conditions of the filter QP at `u`, given
/// the active set and multipliers reported by [`solve_qp`].
pub fn kkt_residual(u_des: &Vector3<f64>, rows: &[CbfRow], u_max: f64, sol: &QpSolution) -> f64 {
    let (normals, offsets) = assemble(rows, u_max, false);
    let y = DVector::from_column_slice(sol.u.as_slice());
    let mut stationarity = &y - DVector::from_column_slice(u_des.as_slice());
    let mut worst: f64 = 0.0;
    for (&i, &lam) in sol.active_set.iter().zip(&sol.multipliers) {
        let n_i: DVector<f64> = normals.row(i).transpose();
        stationarity -= n_i * lam;
        worst = worst.max(-lam);
        worst = worst.max((normals.row(i).dot(&y.transpose()) + offsets[i]).abs());
    }
    worst = worst.max(stationarity.amax());
    for i in 0..normals.nrows() {
        worst = worst.max(-(normals.row(i).dot(&y.transpose()) + offsets[i]));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(c: [f64; 3], b: f64) -> CbfRow {
        CbfRow::new(Vector3::from(c), b)
    }

    #[test]
    fn no_rows_clamps_to_box() {
        let s = solve_qp(&Vector3::new(2.0, -0.5, -3.0), &[], 1.0).unwrap();
        assert_eq!(s.u, Vector3::new(1.0, -0.5, -1.0));
    }

    #[test]
    fn halfspace_projection() {
        let s = solve_qp(&Vector3::zeros(), &[row([1.0, 0.0, 0.0], -0.5)], 1.0).unwrap();
        assert!((s.u - Vector3::new(0.5, 0.0, 0.0)).norm() < 1e-15);
        assert_eq!(s.active_rows(1), vec![0]);
    }

    #[test]
    fn oblique_halfspace() {
        // u_x + u_y ≥ 1 from the origin projects to (0.5, 0.5, 0)
        let s = solve_qp(&Vector3::zeros(), &[row([1.0, 1.0, 0.0], -1.0)], 1.0).unwrap();
        assert!((s.u - Vector3::new(0.5, 0.5, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn contradictory_parallel_rows_are_infeasible() {
        let rows = [row([1.0, 0.0, 0.0], -0.5), row([-1.0, 0.0, 0.0], -0.5)];
        assert!(matches!(
            solve_qp(&Vector3::zeros(), &rows, 1.0),
            Err(QpError::Infeasible(_))
        ));
    }

    #[test]
    fn row_beyond_box_is_infeasible() {
        let rows = [row([1.0, 0.0, 0.0], -2.0)];
        assert!(matches!(
            solve_qp(&Vector3::zeros(), &rows, 1.0),
            Err(QpError::Infeasible(_))
        ));
    }

    #[test]
    fn satisfied_request_is_untouched() {
        let u = Vector3::new(0.3, -0.2, 0.9);
        let s = solve_qp(&u, &[row([1.0, 0.0, 0.0], 0.0), row([0.0, 1.0, 1.0], 1.0)], 1.0).unwrap();
        assert_eq!(s.u, u);
        assert!(s.active_set.is_empty());
    }

    #[test]
    fn corner_with_degenerate_rows() {
        // three rows meeting at (0.5, 0.5, 0) plus a redundant duplicate
        let rows = [
            row([1.0, 0.0, 0.0], -0.5),
            row([0.0, 1.0, 0.0], -0.5),
            row([1.0, 1.0, 0.0], -1.0),
            row([1.0, 0.0, 0.0], -0.5),
        ];
        let s = solve_qp(&Vector3::new(0.0, 0.0, 0.2), &rows, 1.0).unwrap();
        assert!((s.u - Vector3::new(0.5, 0.5, 0.2)).norm() < 1e-12);
        assert!(kkt_residual(&Vector3::new(0.0, 0.0, 0.2), &rows, 1.0, &s) < 1e-12);
    }

    #[test]
    fn kkt_holds_on_mixed_problem() {
        let u_des = Vector3::new(0.9, -0.8, 0.4);
        let rows = [
            row([-0.3, 0.1, 0.0], 0.05),
            row([0.0, 0.5, -0.2], 0.1),
            row([0.2, 0.2, 0.2], -0.05),
        ];
        let s = solve_qp(&u_des, &rows, 1.0).unwrap();
        assert!(kkt_residual(&u_des, &rows, 1.0, &s) < 1e-10);
    }

    #[test]
    fn fallback_without_rows_clamps() {
        let f = infeasible_fallback(&Vector3::new(1.5, -0.2, -9.0), &[], 1.0);
        assert!((f.u - Vector3::new(1.0, -0.2, -1.0)).norm() < 1e-12);
        assert!(f.slack_used.is_empty());
    }

    #[test]
    fn fallback_matches_qp_on_feasible_problem() {
        let u_des = Vector3::new(0.0, 0.4, -0.3);
        let rows = [row([1.0, 0.0, 0.0], -0.5), row([0.0, -1.0, 0.0], 0.1)];
        let qp = solve_qp(&u_des, &rows, 1.0).unwrap();
        let fb = infeasible_fallback(&u_des, &rows, 1.0);
        assert!((qp.u - fb.u).amax() < 1e-6, "{} vs {}", qp.u, fb.u);
    }

    /// Penalty objective evaluated directly; grid oracle for the fallback.
    fn penalty(u: &Vector3<f64>, u_des: &Vector3<f64>, rows: &[CbfRow]) -> f64 {
        rows.iter().map(|r| (-r.slack(u)).max(0.0).powi(2)).sum::<f64>()
            + FALLBACK_REGULARIZATION * (u - u_des).norm_squared()
    }

    #[test]
    fn fallback_picks_least_violating_corner() {
        let u_des = Vector3::new(-0.2, 0.3, 0.1);
        let rows = [
            row([1.0, 0.0, 0.0], -2.0),
            row([0.0, 1.0, 0.0], -2.0),
            row([0.0, 0.0, -1.0], -2.0),
            row([-1.0, 0.0, 0.0], -1.5),
        ];
        assert!(solve_qp(&u_des, &rows, 1.0).is_err());
        let f = infeasible_fallback(&u_des, &rows, 1.0);

        let mut best = (f64::INFINITY, Vector3::zeros());
        for i in 0..21 {
            for j in 0..21 {
                for k in 0..21 {
                    let u = Vector3::new(i as f64, j as f64, k as f64) * 0.1 - Vector3::repeat(1.0);
                    let v = penalty(&u, &u_des, &rows);
                    if v < best.0 {
                        best = (v, u);
                    }
                }
            }
        }
        assert!((f.u - best.1).amax() < 0.05 + 1e-9, "{} vs {}", f.u, best.1);
        assert!(penalty(&f.u, &u_des, &rows) <= best.0 + 1e-12);
        assert!((f.u - Vector3::new(0.25, 1.0, -1.0)).amax() < 1e-6);
        assert!(f.slack_used.iter().all(|s| *s > 0.0));
    }
}
