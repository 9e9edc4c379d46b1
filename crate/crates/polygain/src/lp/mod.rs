//! Dense linear programming backend.
//!
//! Every certificate condition in this crate is posed as a linear program
//! with equality rows, inequality rows and per-variable bounds. The solver
//! is a bounded-variable revised simplex with an explicit basis inverse:
//! deterministic, dependency-light and accurate enough for the
//! certificate-sized problems produced by the gain machinery (hundreds to a
//! few thousand variables).

mod simplex;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// A linear program in the form
///
/// ```text
/// minimize    c . x
/// subject to  A_eq x  = b_eq
///             A_in x <= b_in
///             lower <= x <= upper   (entries may be +-infinity)
/// ```
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub c: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl LinearProgram {
    /// A program over `n` variables with no rows and free bounds.
    pub fn new(n: usize) -> Self {
        LinearProgram {
            c: DVector::zeros(n),
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    fn validate(&self) -> Result<(), LpError> {
        let n = self.c.len();
        if self.a_eq.ncols() != n && self.a_eq.nrows() > 0 {
            return Err(LpError::DimensionMismatch(format!(
                "a_eq has {} columns, objective has {} entries",
                self.a_eq.ncols(),
                n
            )));
        }
        if self.a_in.ncols() != n && self.a_in.nrows() > 0 {
            return Err(LpError::DimensionMismatch(format!(
                "a_in has {} columns, objective has {} entries",
                self.a_in.ncols(),
                n
            )));
        }
        if self.a_eq.nrows() != self.b_eq.len() {
            return Err(LpError::DimensionMismatch(format!(
                "a_eq has {} rows, b_eq has {} entries",
                self.a_eq.nrows(),
                self.b_eq.len()
            )));
        }
        if self.a_in.nrows() != self.b_in.len() {
            return Err(LpError::DimensionMismatch(format!(
                "a_in has {} rows, b_in has {} entries",
                self.a_in.nrows(),
                self.b_in.len()
            )));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(LpError::DimensionMismatch(format!(
                "bounds have {}/{} entries, objective has {}",
                self.lower.len(),
                self.upper.len(),
                n
            )));
        }
        let finite = |v: &DVector<f64>| v.iter().all(|x| x.is_finite());
        if !finite(&self.c) || !finite(&self.b_eq) || !finite(&self.b_in) {
            return Err(LpError::NonFinite);
        }
        if self.a_eq.iter().any(|x| !x.is_finite()) || self.a_in.iter().any(|x| !x.is_finite()) {
            return Err(LpError::NonFinite);
        }
        for j in 0..n {
            if self.lower[j].is_nan() || self.upper[j].is_nan() {
                return Err(LpError::NonFinite);
            }
            if self.lower[j] == f64::INFINITY || self.upper[j] == f64::NEG_INFINITY {
                return Err(LpError::NonFinite);
            }
        }
        Ok(())
    }
}

/// Status of a solved linear program. Exactly one of the three holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Solution of a linear program.
///
/// For `Optimal` outcomes `x`, `y` and `value` are present and satisfy the
/// KKT residual bounds of [`SolverOptions`]. `y` holds one multiplier per
/// equality row followed by one per inequality row, with the sign convention
/// that the reduced costs `c - a_eq' y_eq - a_in' y_in` are dual feasible
/// for the bound constraints (so for `min 1.p : Vp = x, p >= 0` the equality
/// multipliers solve the dual `max h.x : V'h <= 1` directly).
#[derive(Debug, Clone)]
pub struct LpOutcome {
    pub status: LpStatus,
    pub x: Option<DVector<f64>>,
    pub y: Option<DVector<f64>>,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PivotRule {
    /// Dantzig pricing, falling back to Bland's rule after a stall.
    DantzigBland,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Bound on primal residuals of reported optima.
    pub feas_tol: f64,
    /// Bound on the primal/dual objective gap of reported optima.
    pub gap_tol: f64,
    /// Hard cap on simplex pivots across both phases.
    pub max_pivots: usize,
    pub pivot_rule: PivotRule,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            feas_tol: 1e-9,
            gap_tol: 1e-8,
            max_pivots: 200_000,
            pivot_rule: PivotRule::DantzigBland,
        }
    }
}

#[derive(Debug, Error)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("linear program contains NaN or misordered infinite data")]
    NonFinite,
    #[error("simplex pivot limit exceeded")]
    IterationLimit,
    #[error("numerical failure in simplex: {0}")]
    Numerical(String),
}

/// Solve a linear program. Deterministic: identical inputs produce
/// bit-identical outcomes.
pub fn solve_lp(lp: &LinearProgram, opts: &SolverOptions) -> Result<LpOutcome, LpError> {
    lp.validate()?;
    if opts.feas_tol <= 0.0 || opts.gap_tol <= 0.0 {
        return Err(LpError::Numerical("tolerances must be positive".into()));
    }
    simplex::solve(lp, opts)
}

/// Residuals of a candidate point against a linear program.
#[derive(Debug, Clone)]
pub struct ResidualReport {
    pub max_eq_residual: f64,
    pub max_in_violation: f64,
    pub max_bound_violation: f64,
    pub feasible: bool,
}

/// Exact residuals of `x` against the constraints of `lp`; `feasible` iff
/// all residuals are within `tol`.
pub fn check_point(lp: &LinearProgram, x: &DVector<f64>, tol: f64) -> Result<ResidualReport, LpError> {
    if x.len() != lp.num_vars() {
        return Err(LpError::DimensionMismatch(format!(
            "point has {} entries, program has {} variables",
            x.len(),
            lp.num_vars()
        )));
    }
    let mut max_eq = 0.0f64;
    if lp.a_eq.nrows() > 0 {
        let r = &lp.a_eq * x - &lp.b_eq;
        max_eq = r.iter().fold(0.0, |m, v| m.max(v.abs()));
    }
    let mut max_in = 0.0f64;
    if lp.a_in.nrows() > 0 {
        let r = &lp.a_in * x - &lp.b_in;
        max_in = r.iter().fold(0.0, |m, v| m.max(*v));
        max_in = max_in.max(0.0);
    }
    let mut max_bound = 0.0f64;
    for j in 0..x.len() {
        max_bound = max_bound.max(lp.lower[j] - x[j]).max(x[j] - lp.upper[j]);
    }
    max_bound = max_bound.max(0.0);
    Ok(ResidualReport {
        max_eq_residual: max_eq,
        max_in_violation: max_in,
        max_bound_violation: max_bound,
        feasible: max_eq <= tol && max_in <= tol && max_bound <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve(lp: &LinearProgram) -> LpOutcome {
        solve_lp(lp, &SolverOptions::default()).unwrap()
    }

    #[test]
    fn single_active_bound() {
        // minimize x s.t. x >= 1
        let mut lp = LinearProgram::new(1);
        lp.c[0] = 1.0;
        lp.lower[0] = 1.0;
        let out = solve(&lp);
        assert_eq!(out.status, LpStatus::Optimal);
        assert!((out.x.unwrap()[0] - 1.0).abs() < 1e-12);
        assert!((out.value.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn simplex_edge_optimum() {
        // minimize -x-y s.t. x+y <= 1, x >= 0, y >= 0
        let mut lp = LinearProgram::new(2);
        lp.c = DVector::from_vec(vec![-1.0, -1.0]);
        lp.a_in = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        lp.b_in = DVector::from_vec(vec![1.0]);
        lp.lower = DVector::zeros(2);
        let out = solve(&lp);
        assert_eq!(out.status, LpStatus::Optimal);
        assert!((out.value.unwrap() + 1.0).abs() < 1e-10);
    }

    #[test]
    fn contradictory_bounds() {
        // minimize 0 s.t. x <= -1, x >= 0
        let mut lp = LinearProgram::new(1);
        lp.a_in = DMatrix::from_row_slice(1, 1, &[1.0]);
        lp.b_in = DVector::from_vec(vec![-1.0]);
        lp.lower[0] = 0.0;
        let out = solve(&lp);
        assert_eq!(out.status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_ray() {
        // minimize -x s.t. x >= 0
        let mut lp = LinearProgram::new(1);
        lp.c[0] = -1.0;
        lp.lower[0] = 0.0;
        let out = solve(&lp);
        assert_eq!(out.status, LpStatus::Unbounded);
    }

    #[test]
    fn equality_with_duals() {
        // minimize 1.p s.t. [1 -1] p = 0.5, p >= 0 (gauge of 0.5 on V=[1,-1])
        let mut lp = LinearProgram::new(2);
        lp.c = DVector::from_vec(vec![1.0, 1.0]);
        lp.a_eq = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        lp.b_eq = DVector::from_vec(vec![0.5]);
        lp.lower = DVector::zeros(2);
        let out = solve(&lp);
        assert_eq!(out.status, LpStatus::Optimal);
        assert!((out.value.unwrap() - 0.5).abs() < 1e-10);
        // dual: max 0.5 h s.t. h <= 1, -h <= 1 -> h = 1
        let y = out.y.unwrap();
        assert!((y[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn check_point_reports() {
        let mut lp = LinearProgram::new(1);
        lp.lower[0] = 1.0;
        let ok = check_point(&lp, &DVector::from_vec(vec![1.0]), 1e-8).unwrap();
        assert!(ok.feasible);
        assert_eq!(ok.max_bound_violation, 0.0);
        let close = check_point(&lp, &DVector::from_vec(vec![0.999999999]), 1e-8).unwrap();
        assert!(close.feasible);
        let bad = check_point(&lp, &DVector::from_vec(vec![0.9]), 1e-8).unwrap();
        assert!(!bad.feasible);
        assert!((bad.max_bound_violation - 0.1).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_structured() {
        let mut lp = LinearProgram::new(2);
        lp.a_eq = DMatrix::zeros(1, 3);
        lp.b_eq = DVector::zeros(1);
        match solve_lp(&lp, &SolverOptions::default()) {
            Err(LpError::DimensionMismatch(_)) => {}
            other => panic!("expected dimension mismatch, got {other:?}"),
        }
    }

    #[test]
    fn fixed_variables_respected() {
        // minimize -x - y with x fixed to 2, y <= 3
        let mut lp = LinearProgram::new(2);
        lp.c = DVector::from_vec(vec![-1.0, -1.0]);
        lp.lower[0] = 2.0;
        lp.upper[0] = 2.0;
        lp.upper[1] = 3.0;
        let out = solve(&lp);
        assert_eq!(out.status, LpStatus::Optimal);
        let x = out.x.unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12);
        assert!((x[1] - 3.0).abs() < 1e-12);
    }
}
