//! Bounded-variable revised simplex with an explicit basis inverse.
//!
//! The program is embedded as `min c.x  s.t.  A x = b, l <= x <= u` where
//! inequality rows receive slack variables. Phase 1 starts from a basis of
//! signed auxiliary columns and minimizes their sum; Phase 2 keeps the
//! auxiliaries pinned at zero. Pricing is Dantzig with a switch to Bland's
//! rule after a run of degenerate pivots; the basis inverse is refactorized
//! periodically from a fresh LU.

use nalgebra::{DMatrix, DVector};

use super::{LinearProgram, LpError, LpOutcome, LpStatus, SolverOptions};

const PIVOT_TOL: f64 = 1e-9;
const DUAL_TOL: f64 = 1e-9;
const RATIO_TIE: f64 = 1e-9;
const DEGEN_STALL: usize = 60;
const REFACTOR_EVERY: usize = 120;

/// Row-major dense matrix; rows are contiguous so the eta updates and the
/// dual back-solves stay cache-friendly.
struct RowMat {
    data: Vec<f64>,
    cols: usize,
}

impl RowMat {
    fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        RowMat { data, cols: n }
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum VarState {
    Basic(usize),
    AtLower,
    AtUpper,
    /// Free variable resting at zero.
    AtZero,
}

struct Tableau<'a> {
    /// Structural + slack columns, column-major.
    a: DMatrix<f64>,
    b: DVector<f64>,
    /// Phase-2 objective over structural + slack variables.
    cost: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Signs of the auxiliary columns (one per row).
    aux_sign: Vec<f64>,
    /// `aux_fixed[i]` once Phase 1 pins auxiliary `i` to zero.
    aux_fixed: Vec<bool>,
    n_cols: usize,
    n_rows: usize,
    opts: &'a SolverOptions,

    state: Vec<VarState>,
    x: Vec<f64>,
    basis: Vec<usize>,
    binv: RowMat,
    pivots: usize,
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

impl<'a> Tableau<'a> {
    /// Total number of columns including auxiliaries.
    fn total(&self) -> usize {
        self.n_cols + self.n_rows
    }

    fn col_dot(&self, j: usize, v: &[f64]) -> f64 {
        if j < self.n_cols {
            let col = &self.a.as_slice()[j * self.n_rows..(j + 1) * self.n_rows];
            let mut s = 0.0;
            for (a, b) in col.iter().zip(v) {
                s += a * b;
            }
            s
        } else {
            self.aux_sign[j - self.n_cols] * v[j - self.n_cols]
        }
    }

    fn bounds_of(&self, j: usize) -> (f64, f64) {
        if j < self.n_cols {
            (self.lower[j], self.upper[j])
        } else if self.aux_fixed[j - self.n_cols] {
            (0.0, 0.0)
        } else {
            (0.0, f64::INFINITY)
        }
    }

    fn cost_of(&self, j: usize, phase1: bool) -> f64 {
        if phase1 {
            if j < self.n_cols {
                0.0
            } else {
                1.0
            }
        } else if j < self.n_cols {
            self.cost[j]
        } else {
            0.0
        }
    }

    /// Multipliers `y = c_B' B^-1`.
    fn duals(&self, phase1: bool) -> Vec<f64> {
        let m = self.n_rows;
        let mut y = vec![0.0; m];
        for i in 0..m {
            let cb = self.cost_of(self.basis[i], phase1);
            if cb != 0.0 {
                let row = self.binv.row(i);
                for (yj, rj) in y.iter_mut().zip(row) {
                    *yj += cb * rj;
                }
            }
        }
        y
    }

    /// `w = B^-1 a_j`.
    fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.n_rows;
        let mut w = vec![0.0; m];
        if j < self.n_cols {
            let col = &self.a.as_slice()[j * m..(j + 1) * m];
            for i in 0..m {
                let row = self.binv.row(i);
                let mut s = 0.0;
                for (r, c) in row.iter().zip(col) {
                    s += r * c;
                }
                w[i] = s;
            }
        } else {
            let r = j - self.n_cols;
            let s = self.aux_sign[r];
            for i in 0..m {
                w[i] = s * self.binv.row(i)[r];
            }
        }
        w
    }

    /// Rebuild the basis inverse from scratch and recompute basic values.
    fn refactorize(&mut self) -> Result<(), LpError> {
        let m = self.n_rows;
        if m == 0 {
            return Ok(());
        }
        let mut bmat = DMatrix::zeros(m, m);
        for (i, &j) in self.basis.iter().enumerate() {
            if j < self.n_cols {
                bmat.set_column(i, &self.a.column(j));
            } else {
                bmat[(j - self.n_cols, i)] = self.aux_sign[j - self.n_cols];
            }
        }
        let inv = bmat
            .lu()
            .try_inverse()
            .ok_or_else(|| LpError::Numerical("singular basis during refactorization".into()))?;
        for i in 0..m {
            let dst = &mut self.binv.data[i * m..(i + 1) * m];
            for j in 0..m {
                dst[j] = inv[(i, j)];
            }
        }
        self.recompute_basics();
        Ok(())
    }

    /// Recompute basic variable values from the nonbasic assignment.
    fn recompute_basics(&mut self) {
        let m = self.n_rows;
        let mut r = vec![0.0; m];
        for i in 0..m {
            r[i] = self.b[i];
        }
        for j in 0..self.total() {
            if let VarState::Basic(_) = self.state[j] {
                continue;
            }
            let xj = self.x[j];
            if xj != 0.0 {
                if j < self.n_cols {
                    let col = &self.a.as_slice()[j * m..(j + 1) * m];
                    for i in 0..m {
                        r[i] -= col[i] * xj;
                    }
                } else {
                    r[j - self.n_cols] -= self.aux_sign[j - self.n_cols] * xj;
                }
            }
        }
        for i in 0..m {
            let row = self.binv.row(i);
            let mut s = 0.0;
            for (a, b) in row.iter().zip(&r) {
                s += a * b;
            }
            let j = self.basis[i];
            self.x[j] = s;
        }
    }

    fn objective(&self, phase1: bool) -> f64 {
        let mut v = 0.0;
        for j in 0..self.total() {
            let c = self.cost_of(j, phase1);
            if c != 0.0 {
                v += c * self.x[j];
            }
        }
        v
    }

    /// Run the simplex iteration until the current phase objective is
    /// optimal or a ray is found.
    fn run_phase(&mut self, phase1: bool) -> Result<PhaseEnd, LpError> {
        let mut degen_run = 0usize;
        let mut bland = false;
        let mut last_obj = self.objective(phase1);

        loop {
            if self.pivots >= self.opts.max_pivots {
                return Err(LpError::IterationLimit);
            }
            let y = self.duals(phase1);

            // pricing
            let mut entering: Option<(usize, f64, f64)> = None; // (j, direction, score)
            for j in 0..self.total() {
                match self.state[j] {
                    VarState::Basic(_) => continue,
                    VarState::AtLower => {
                        let (lo, up) = self.bounds_of(j);
                        if up - lo <= 0.0 {
                            continue;
                        }
                        let d = self.cost_of(j, phase1) - self.col_dot(j, &y);
                        if d < -DUAL_TOL {
                            let score = -d;
                            if bland {
                                entering = Some((j, 1.0, score));
                                break;
                            }
                            if entering.as_ref().map_or(true, |e| score > e.2) {
                                entering = Some((j, 1.0, score));
                            }
                        }
                    }
                    VarState::AtUpper => {
                        let (lo, up) = self.bounds_of(j);
                        if up - lo <= 0.0 {
                            continue;
                        }
                        let d = self.cost_of(j, phase1) - self.col_dot(j, &y);
                        if d > DUAL_TOL {
                            let score = d;
                            if bland {
                                entering = Some((j, -1.0, score));
                                break;
                            }
                            if entering.as_ref().map_or(true, |e| score > e.2) {
                                entering = Some((j, -1.0, score));
                            }
                        }
                    }
                    VarState::AtZero => {
                        let d = self.cost_of(j, phase1) - self.col_dot(j, &y);
                        if d.abs() > DUAL_TOL {
                            let score = d.abs();
                            let dir = if d < 0.0 { 1.0 } else { -1.0 };
                            if bland {
                                entering = Some((j, dir, score));
                                break;
                            }
                            if entering.as_ref().map_or(true, |e| score > e.2) {
                                entering = Some((j, dir, score));
                            }
                        }
                    }
                }
            }
            let Some((q, dir, _)) = entering else {
                return Ok(PhaseEnd::Optimal);
            };

            let w = self.ftran(q);

            // ratio test: step t >= 0 moves x_q by dir*t and x_B by -dir*t*w
            let (lo_q, up_q) = self.bounds_of(q);
            let own_limit = if up_q - lo_q == f64::INFINITY {
                f64::INFINITY
            } else {
                up_q - lo_q
            };
            let mut t_best = f64::INFINITY;
            let mut leave: Option<(usize, bool)> = None; // (row, hits_lower)
            for (i, &wi) in w.iter().enumerate() {
                let delta = dir * wi;
                if delta.abs() <= PIVOT_TOL {
                    continue;
                }
                let jb = self.basis[i];
                let (lo_b, up_b) = self.bounds_of(jb);
                let xb = self.x[jb];
                let (t_i, hits_lower) = if delta > 0.0 {
                    if lo_b == f64::NEG_INFINITY {
                        continue;
                    }
                    (((xb - lo_b) / delta).max(0.0), true)
                } else {
                    if up_b == f64::INFINITY {
                        continue;
                    }
                    (((xb - up_b) / delta).max(0.0), false)
                };
                let better = if bland {
                    t_i < t_best - RATIO_TIE
                        || (t_i <= t_best + RATIO_TIE
                            && leave.map_or(true, |(r, _)| self.basis[i] < self.basis[r]))
                } else {
                    t_i < t_best - RATIO_TIE
                        || (t_i <= t_best + RATIO_TIE
                            && leave.map_or(true, |(r, _)| wi.abs() > w[r].abs()))
                };
                if better {
                    t_best = t_best.min(t_i);
                    leave = Some((i, hits_lower));
                }
            }

            let t = t_best.min(own_limit);
            if t == f64::INFINITY {
                return if phase1 {
                    Err(LpError::Numerical("unbounded phase-1 ray".into()))
                } else {
                    Ok(PhaseEnd::Unbounded)
                };
            }

            self.pivots += 1;
            if t <= RATIO_TIE {
                degen_run += 1;
            } else {
                degen_run = 0;
            }

            if own_limit <= t_best {
                // bound flip: the entering variable runs to its other bound
                let step = dir * own_limit;
                for (i, &wi) in w.iter().enumerate() {
                    if wi != 0.0 {
                        let jb = self.basis[i];
                        self.x[jb] -= step * wi;
                    }
                }
                self.x[q] += step;
                self.state[q] = if dir > 0.0 { VarState::AtUpper } else { VarState::AtLower };
            } else {
                let (r, hits_lower) = leave.expect("finite ratio without leaving row");
                let wr = w[r];
                if wr.abs() <= PIVOT_TOL {
                    return Err(LpError::Numerical("pivot element below tolerance".into()));
                }
                let step = dir * t;
                for (i, &wi) in w.iter().enumerate() {
                    if i != r && wi != 0.0 {
                        let jb = self.basis[i];
                        self.x[jb] -= step * wi;
                    }
                }
                let jl = self.basis[r];
                let (lo_b, up_b) = self.bounds_of(jl);
                self.x[jl] = if hits_lower { lo_b } else { up_b };
                self.state[jl] = if hits_lower {
                    if lo_b == f64::NEG_INFINITY {
                        VarState::AtZero
                    } else {
                        VarState::AtLower
                    }
                } else {
                    VarState::AtUpper
                };
                self.x[q] += step;
                self.state[q] = VarState::Basic(r);
                self.basis[r] = q;

                // eta update of the explicit inverse
                let m = self.n_rows;
                let inv_wr = 1.0 / wr;
                {
                    let row_r = &mut self.binv.data[r * m..(r + 1) * m];
                    for v in row_r.iter_mut() {
                        *v *= inv_wr;
                    }
                }
                let row_r_copy: Vec<f64> = self.binv.row(r).to_vec();
                for i in 0..m {
                    if i == r {
                        continue;
                    }
                    let wi = w[i];
                    if wi != 0.0 {
                        let row_i = &mut self.binv.data[i * m..(i + 1) * m];
                        for (v, rr) in row_i.iter_mut().zip(&row_r_copy) {
                            *v -= wi * rr;
                        }
                    }
                }
            }

            if self.pivots % REFACTOR_EVERY == 0 {
                self.refactorize()?;
            }

            if degen_run > DEGEN_STALL {
                bland = true;
            }
            if bland {
                let obj = self.objective(phase1);
                if obj < last_obj - 1e-12 {
                    bland = false;
                    degen_run = 0;
                    last_obj = obj;
                }
            } else {
                let obj = self.objective(phase1);
                if obj < last_obj - 1e-12 {
                    last_obj = obj;
                }
            }
        }
    }
}

/// Geometric-mean equilibration, factors rounded to powers of two so that
/// scaling is exactly invertible.
fn equilibrate(a: &mut DMatrix<f64>, passes: usize) -> (Vec<f64>, Vec<f64>) {
    let (m, n) = (a.nrows(), a.ncols());
    let mut row_scale = vec![1.0f64; m];
    let mut col_scale = vec![1.0f64; n];
    let pow2 = |x: f64| -> f64 {
        if x <= 0.0 || !x.is_finite() {
            1.0
        } else {
            (2.0f64).powi(x.log2().round() as i32)
        }
    };
    for _ in 0..passes {
        for i in 0..m {
            let mut hi = 0.0f64;
            let mut lo = f64::INFINITY;
            for j in 0..n {
                let v = a[(i, j)].abs();
                if v > 0.0 {
                    hi = hi.max(v);
                    lo = lo.min(v);
                }
            }
            if hi > 0.0 {
                let s = pow2(1.0 / (hi * lo).sqrt());
                if s != 1.0 {
                    for j in 0..n {
                        a[(i, j)] *= s;
                    }
                    row_scale[i] *= s;
                }
            }
        }
        for j in 0..n {
            let mut hi = 0.0f64;
            let mut lo = f64::INFINITY;
            for i in 0..m {
                let v = a[(i, j)].abs();
                if v > 0.0 {
                    hi = hi.max(v);
                    lo = lo.min(v);
                }
            }
            if hi > 0.0 {
                let s = pow2(1.0 / (hi * lo).sqrt());
                if s != 1.0 {
                    for i in 0..m {
                        a[(i, j)] *= s;
                    }
                    col_scale[j] *= s;
                }
            }
        }
    }
    (row_scale, col_scale)
}

pub(super) fn solve(lp: &LinearProgram, opts: &SolverOptions) -> Result<LpOutcome, LpError> {
    let n = lp.num_vars();
    let me = lp.a_eq.nrows();
    let mi = lp.a_in.nrows();
    let m = me + mi;
    let n_cols = n + mi;

    // assemble [A_eq 0; A_in I] with slack bounds [0, inf)
    let mut a = DMatrix::zeros(m, n_cols);
    if me > 0 {
        a.view_mut((0, 0), (me, n)).copy_from(&lp.a_eq);
    }
    if mi > 0 {
        a.view_mut((me, 0), (mi, n)).copy_from(&lp.a_in);
        for i in 0..mi {
            a[(me + i, n + i)] = 1.0;
        }
    }
    let mut b = DVector::zeros(m);
    for i in 0..me {
        b[i] = lp.b_eq[i];
    }
    for i in 0..mi {
        b[me + i] = lp.b_in[i];
    }

    let (row_scale, col_scale) = equilibrate(&mut a, 2);
    for i in 0..m {
        b[i] *= row_scale[i];
    }
    let mut lower = vec![0.0f64; n_cols];
    let mut upper = vec![0.0f64; n_cols];
    let mut cost = vec![0.0f64; n_cols];
    for j in 0..n_cols {
        let (lo, up, c) = if j < n {
            (lp.lower[j], lp.upper[j], lp.c[j])
        } else {
            (0.0, f64::INFINITY, 0.0)
        };
        lower[j] = if lo == f64::NEG_INFINITY { lo } else { lo / col_scale[j] };
        upper[j] = if up == f64::INFINITY { up } else { up / col_scale[j] };
        cost[j] = c * col_scale[j];
        if lower[j] > upper[j] {
            // contradictory bounds are an immediate infeasibility
            return Ok(LpOutcome {
                status: LpStatus::Infeasible,
                x: None,
                y: None,
                value: None,
            });
        }
    }

    // nonbasic assignment and the auxiliary basis
    let mut state = vec![VarState::AtZero; n_cols + m];
    let mut x = vec![0.0f64; n_cols + m];
    for j in 0..n_cols {
        if lower[j].is_finite() {
            state[j] = VarState::AtLower;
            x[j] = lower[j];
        } else if upper[j].is_finite() {
            state[j] = VarState::AtUpper;
            x[j] = upper[j];
        } else {
            state[j] = VarState::AtZero;
            x[j] = 0.0;
        }
    }
    let mut resid = b.clone();
    for j in 0..n_cols {
        if x[j] != 0.0 {
            for i in 0..m {
                resid[i] -= a[(i, j)] * x[j];
            }
        }
    }
    let mut aux_sign = vec![1.0f64; m];
    let mut basis = Vec::with_capacity(m);
    for i in 0..m {
        aux_sign[i] = if resid[i] < 0.0 { -1.0 } else { 1.0 };
        let j = n_cols + i;
        basis.push(j);
        state[j] = VarState::Basic(i);
        x[j] = resid[i].abs();
    }

    let mut tab = Tableau {
        a,
        b,
        cost,
        lower,
        upper,
        aux_sign,
        aux_fixed: vec![false; m],
        n_cols,
        n_rows: m,
        opts,
        state,
        x,
        basis,
        binv: RowMat::identity(m),
        pivots: 0,
    };
    // auxiliary columns are +-e_i, so the initial inverse is diag(sign)
    for i in 0..m {
        tab.binv.data[i * m + i] = tab.aux_sign[i];
    }

    // Phase 1
    let b_norm = tab.b.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    let phase1_needed = tab.x[n_cols..].iter().any(|v| *v > 0.0);
    if phase1_needed {
        match tab.run_phase(true)? {
            PhaseEnd::Optimal => {}
            PhaseEnd::Unbounded => {
                return Err(LpError::Numerical("phase-1 reported a ray".into()));
            }
        }
        tab.refactorize()?;
        let infeas = tab.objective(true);
        if infeas > opts.feas_tol.max(1e-9 * (1.0 + b_norm)) {
            return Ok(LpOutcome {
                status: LpStatus::Infeasible,
                x: None,
                y: None,
                value: None,
            });
        }
    }
    for i in 0..m {
        tab.aux_fixed[i] = true;
        let j = n_cols + i;
        if !matches!(tab.state[j], VarState::Basic(_)) {
            tab.state[j] = VarState::AtLower;
            tab.x[j] = 0.0;
        }
    }

    // Phase 2
    let end = tab.run_phase(false)?;
    tab.refactorize()?;
    if let PhaseEnd::Unbounded = end {
        return Ok(LpOutcome {
            status: LpStatus::Unbounded,
            x: None,
            y: None,
            value: None,
        });
    }

    // unscale
    let mut x_out = DVector::zeros(n);
    for j in 0..n {
        x_out[j] = tab.x[j] * col_scale[j];
    }
    let y_scaled = tab.duals(false);
    let mut y_out = DVector::zeros(m);
    for i in 0..m {
        y_out[i] = y_scaled[i] * row_scale[i];
    }
    let value = lp.c.dot(&x_out);

    // duality-gap self check on the scaled internal problem
    let mut dual_obj = 0.0;
    for i in 0..m {
        dual_obj += y_scaled[i] * tab.b[i];
    }
    for j in 0..tab.n_cols {
        match tab.state[j] {
            VarState::Basic(_) | VarState::AtZero => {}
            VarState::AtLower | VarState::AtUpper => {
                let d = tab.cost_of(j, false) - tab.col_dot(j, &y_scaled);
                if d != 0.0 {
                    dual_obj += d * tab.x[j];
                }
            }
        }
    }
    let primal_obj = tab.objective(false);
    let scale = 1.0 + primal_obj.abs().max(dual_obj.abs());
    if (primal_obj - dual_obj).abs() > opts.gap_tol * scale {
        return Err(LpError::Numerical(format!(
            "duality gap {:.3e} exceeds tolerance",
            (primal_obj - dual_obj).abs()
        )));
    }

    Ok(LpOutcome {
        status: LpStatus::Optimal,
        x: Some(x_out),
        y: Some(y_out),
        value: Some(value),
    })
}
