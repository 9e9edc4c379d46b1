//! The polyhedral modification step.
//!
//! Around a fixed certificate the whole constraint system is linearized in
//! the perturbations (delta-eta, delta-V, delta-P, delta-M_i, and delta-K
//! for synthesis). The resulting LP minimizes the first-order change of
//! `log(eta_w / eta_z)` subject to the perturbed constraints and an
//! infinity-norm step bound on `delta V` (and `delta K`); the decay variant
//! used for bootstrapping swaps the objective for `-delta beta` and drops
//! the output rows.

use nalgebra::{DMatrix, DVector};

use super::GainError;
use crate::lp::{solve_lp, LinearProgram, LpStatus, SolverOptions};
use crate::model::{ConstraintKind, KConstraint};
use crate::polytope::VRep;

/// Synthesis extension: actuation/measurement maps, the current gain and
/// its linear constraints.
pub(crate) struct SynthBlock<'a> {
    pub b_u: &'a DMatrix<f64>,
    pub c_y: &'a DMatrix<f64>,
    pub k: &'a DMatrix<f64>,
    pub constraints: &'a [KConstraint],
}

pub(crate) enum ModKind<'a> {
    /// Linearized gain problem at `(eta_w, P, eta_z, M)`.
    Gain {
        eta_w: f64,
        eta_z: f64,
        p_mat: &'a DMatrix<f64>,
        z_hat: &'a DVector<f64>,
        z_grad: &'a [DVector<f64>],
        b: &'a DMatrix<f64>,
        eta_z_floor: f64,
    },
    /// Linearized decay problem at `beta`; keeps `1'M_i <= -beta 1'` rows.
    Decay { beta: f64 },
}

pub(crate) struct ModProblem<'a> {
    pub v: &'a VRep,
    /// Effective vertex matrices (closed loop at the current gain for
    /// synthesis).
    pub a_eff: &'a [DMatrix<f64>],
    pub m_list: &'a [DMatrix<f64>],
    pub symmetric: bool,
    pub eps: f64,
    pub kind: ModKind<'a>,
    pub synth: Option<SynthBlock<'a>>,
}

pub(crate) struct ModStep {
    pub delta_v: DMatrix<f64>,
    pub delta_k: Option<DMatrix<f64>>,
    pub objective: f64,
}

/// First-order extremality guard for one vertex: the gauge of `V_j` over
/// the other columns, its optimal weights and the dual support. A step
/// `delta V` changes the margin by `h.(dV_j) - h.(dV p)` (envelope), and
/// the modification LP keeps the predicted margin above the redundancy
/// threshold so the outer loop's reject rule rarely fires.
struct VertexMargin {
    vertex: usize,
    margin: f64,
    weights: DVector<f64>,
    support: DVector<f64>,
}

/// Predicted-margin floor, comfortably inside the redundancy tolerance.
const MARGIN_TARGET: f64 = 1.0 - 2e-8;

fn vertex_margins(v: &VRep) -> Result<Vec<VertexMargin>, GainError> {
    let n = v.dim();
    let m = v.num_vertices();
    let mut out = Vec::with_capacity(m);
    for j in 0..m {
        let mut lp = LinearProgram::new(m - 1);
        lp.c = DVector::from_element(m - 1, 1.0);
        let mut a = DMatrix::zeros(n, m - 1);
        let mut col = 0;
        for l in 0..m {
            if l != j {
                a.set_column(col, &v.matrix().column(l));
                col += 1;
            }
        }
        lp.a_eq = a;
        lp.b_eq = v.vertex(j);
        lp.lower = DVector::zeros(m - 1);
        let solved = solve_lp(&lp, &SolverOptions::default())?;
        match solved.status {
            LpStatus::Optimal => {
                let packed = solved.x.unwrap();
                let mut weights = DVector::zeros(m);
                let mut col = 0;
                for l in 0..m {
                    if l != j {
                        weights[l] = packed[col];
                        col += 1;
                    }
                }
                out.push(VertexMargin {
                    vertex: j,
                    margin: solved.value.unwrap(),
                    weights,
                    support: solved.y.unwrap(),
                });
            }
            // a vertex outside the cone of the others can never become
            // redundant; no guard needed
            LpStatus::Infeasible | LpStatus::Unbounded => {}
        }
    }
    Ok(out)
}

/// Guard bounds that keep degenerate null directions of the LP from
/// wandering; never active on meaningful solutions.
const FREE_GUARD: f64 = 1e9;

pub(crate) fn modification_lp(prob: &ModProblem) -> Result<ModStep, GainError> {
    let v = prob.v.matrix();
    let n = prob.v.dim();
    let m = prob.v.num_vertices();
    let k_verts = prob.a_eff.len();
    let mv = if prob.symmetric { m / 2 } else { m };
    let (n_w2, head) = match &prob.kind {
        ModKind::Gain { b, .. } => (2 * b.ncols(), 2),
        ModKind::Decay { .. } => (0, 1),
    };
    let (nu, ny) = prob
        .synth
        .as_ref()
        .map(|s| (s.b_u.ncols(), s.c_y.nrows()))
        .unwrap_or((0, 0));

    let dv0 = head;
    let dp0 = dv0 + n * mv;
    let dm0 = dp0 + m * n_w2;
    let dk0 = dm0 + k_verts * m * m;
    let n_vars = dk0 + nu * ny;

    // row counts
    let input_rows = match &prob.kind {
        ModKind::Gain { .. } => n * n_w2 + n_w2,
        ModKind::Decay { .. } => 0,
    };
    let state_eq_rows = k_verts * n * m;
    let state_sum_rows = match &prob.kind {
        ModKind::Gain { .. } => k_verts * m,
        ModKind::Decay { .. } => 0,
    };
    let margins = vertex_margins(prob.v)?;
    let mut eq_rows = input_rows + state_eq_rows + state_sum_rows;
    let mut in_rows = match &prob.kind {
        ModKind::Decay { .. } => k_verts * m,
        _ => 0,
    };
    in_rows += margins.len();
    if let Some(s) = &prob.synth {
        for c in s.constraints {
            let cells = c.gamma_l.ncols() * c.gamma_r.ncols();
            match c.kind {
                ConstraintKind::LessEq => in_rows += cells,
                ConstraintKind::EqZero => eq_rows += cells,
            }
        }
    }

    let mut lp = LinearProgram::new(n_vars);
    lp.a_eq = DMatrix::zeros(eq_rows, n_vars);
    lp.b_eq = DVector::zeros(eq_rows);
    lp.a_in = DMatrix::zeros(in_rows, n_vars);
    lp.b_in = DVector::zeros(in_rows);

    // bounds and objective
    match &prob.kind {
        ModKind::Gain {
            eta_w,
            eta_z,
            p_mat,
            eta_z_floor,
            ..
        } => {
            lp.c[0] = 1.0 / eta_w.max(1e-12);
            lp.c[1] = -1.0 / eta_z;
            lp.lower[0] = -FREE_GUARD;
            lp.upper[0] = FREE_GUARD;
            lp.lower[1] = eta_z_floor - eta_z;
            lp.upper[1] = FREE_GUARD;
            for c in 0..n_w2 {
                for l in 0..m {
                    lp.lower[dp0 + c * m + l] = -p_mat[(l, c)].max(0.0);
                    lp.upper[dp0 + c * m + l] = FREE_GUARD;
                }
            }
        }
        ModKind::Decay { .. } => {
            lp.c[0] = -1.0;
            lp.lower[0] = -FREE_GUARD;
            lp.upper[0] = FREE_GUARD;
        }
    }
    for idx in dv0..dp0 {
        lp.lower[idx] = -prob.eps;
        lp.upper[idx] = prob.eps;
    }
    for (i, m_i) in prob.m_list.iter().enumerate() {
        for j in 0..m {
            for l in 0..m {
                let idx = dm0 + i * m * m + j * m + l;
                if l == j {
                    lp.lower[idx] = -FREE_GUARD;
                    lp.upper[idx] = FREE_GUARD;
                } else {
                    lp.lower[idx] = -m_i[(l, j)].max(0.0);
                    lp.upper[idx] = FREE_GUARD;
                }
            }
        }
    }
    for idx in dk0..n_vars {
        lp.lower[idx] = -prob.eps;
        lp.upper[idx] = prob.eps;
    }

    // delta-V variable lookup honoring the symmetric structure [dW, -dW]
    let dv_var = |r: usize, c: usize| -> (usize, f64) {
        if prob.symmetric && c >= mv {
            (dv0 + (c - mv) * n + r, -1.0)
        } else {
            (dv0 + c * n + r, 1.0)
        }
    };

    let mut eq_row = 0usize;
    let mut in_row = 0usize;

    if let ModKind::Gain { p_mat, .. } = &prob.kind {
        // 0 = dV P + V dP
        for c in 0..n_w2 {
            for r in 0..n {
                for l in 0..m {
                    let (var, sign) = dv_var(r, l);
                    lp.a_eq[(eq_row, var)] += sign * p_mat[(l, c)];
                    lp.a_eq[(eq_row, dp0 + c * m + l)] += v[(r, l)];
                }
                eq_row += 1;
            }
        }
        // d_eta_w 1' = 1' dP
        for c in 0..n_w2 {
            for l in 0..m {
                lp.a_eq[(eq_row, dp0 + c * m + l)] += 1.0;
            }
            lp.a_eq[(eq_row, 0)] -= 1.0;
            eq_row += 1;
        }
    }

    // A_i dV (+ B_u dK C_y V) = dV M_i + V dM_i
    let cyv = prob.synth.as_ref().map(|s| s.c_y * v);
    for (i, a) in prob.a_eff.iter().enumerate() {
        let m_i = &prob.m_list[i];
        for j in 0..m {
            for r in 0..n {
                for l in 0..n {
                    let (var, sign) = dv_var(l, j);
                    lp.a_eq[(eq_row, var)] += sign * a[(r, l)];
                }
                for l in 0..m {
                    let (var2, sign2) = dv_var(r, l);
                    lp.a_eq[(eq_row, var2)] -= sign2 * m_i[(l, j)];
                    lp.a_eq[(eq_row, dm0 + i * m * m + j * m + l)] -= v[(r, l)];
                }
                if let (Some(s), Some(cyv)) = (&prob.synth, &cyv) {
                    for u in 0..nu {
                        for y in 0..ny {
                            lp.a_eq[(eq_row, dk0 + y * nu + u)] += s.b_u[(r, u)] * cyv[(y, j)];
                        }
                    }
                }
                eq_row += 1;
            }
        }
    }

    match &prob.kind {
        ModKind::Gain {
            eta_z,
            z_hat,
            z_grad,
            ..
        } => {
            // -(d_eta_z z_hat_j + eta_z dz_hat_j) = 1' dM_i[:, j]
            for i in 0..k_verts {
                for j in 0..m {
                    for l in 0..m {
                        lp.a_eq[(eq_row, dm0 + i * m * m + j * m + l)] += 1.0;
                    }
                    lp.a_eq[(eq_row, 1)] += z_hat[j];
                    for r in 0..n {
                        let (var, sign) = dv_var(r, j);
                        lp.a_eq[(eq_row, var)] += sign * eta_z * z_grad[j][r];
                    }
                    eq_row += 1;
                }
            }
        }
        ModKind::Decay { beta } => {
            // 1'(M_i + dM_i)[:, j] <= -(beta + d_beta)
            for (i, m_i) in prob.m_list.iter().enumerate() {
                for j in 0..m {
                    for l in 0..m {
                        lp.a_in[(in_row, dm0 + i * m * m + j * m + l)] += 1.0;
                    }
                    lp.a_in[(in_row, 0)] += 1.0;
                    let colsum: f64 = m_i.column(j).sum();
                    lp.b_in[in_row] = -beta - colsum;
                    in_row += 1;
                }
            }
        }
    }

    // extremality guards: predicted gauge of V_j over the other columns
    // stays above the redundancy threshold
    for g in &margins {
        let j = g.vertex;
        for r in 0..n {
            let (var, sign) = dv_var(r, j);
            lp.a_in[(in_row, var)] -= sign * g.support[r];
        }
        for l in 0..m {
            if l != j && g.weights[l] != 0.0 {
                for r in 0..n {
                    let (var, sign) = dv_var(r, l);
                    lp.a_in[(in_row, var)] += sign * g.weights[l] * g.support[r];
                }
            }
        }
        lp.b_in[in_row] = g.margin - MARGIN_TARGET;
        in_row += 1;
    }

    if let Some(s) = &prob.synth {
        for c in s.constraints {
            let image = c.image(s.k);
            for a_col in 0..c.gamma_l.ncols() {
                for b_col in 0..c.gamma_r.ncols() {
                    match c.kind {
                        ConstraintKind::LessEq => {
                            for u in 0..nu {
                                for y in 0..ny {
                                    lp.a_in[(in_row, dk0 + y * nu + u)] +=
                                        c.gamma_l[(u, a_col)] * c.gamma_r[(y, b_col)];
                                }
                            }
                            lp.b_in[in_row] = c.bound - image[(a_col, b_col)];
                            in_row += 1;
                        }
                        ConstraintKind::EqZero => {
                            for u in 0..nu {
                                for y in 0..ny {
                                    lp.a_eq[(eq_row, dk0 + y * nu + u)] +=
                                        c.gamma_l[(u, a_col)] * c.gamma_r[(y, b_col)];
                                }
                            }
                            lp.b_eq[eq_row] = -image[(a_col, b_col)];
                            eq_row += 1;
                        }
                    }
                }
            }
        }
    }
    debug_assert_eq!(eq_row, eq_rows);
    debug_assert_eq!(in_row, in_rows);

    let out = solve_lp(&lp, &SolverOptions::default())?;
    let sol = match out.status {
        LpStatus::Optimal => out.x.unwrap(),
        LpStatus::Infeasible => {
            return Err(GainError::ModificationFailed("linearized step infeasible".into()))
        }
        LpStatus::Unbounded => {
            return Err(GainError::ModificationFailed("linearized step unbounded".into()))
        }
    };

    // clamp away ratio-test drift so the step bound holds exactly
    let clamp = |x: f64| x.clamp(-prob.eps, prob.eps);
    let mut delta_v = DMatrix::zeros(n, m);
    for c in 0..m {
        for r in 0..n {
            let (var, sign) = dv_var(r, c);
            delta_v[(r, c)] = sign * clamp(sol[var]);
        }
    }
    let delta_k = prob.synth.as_ref().map(|_| {
        DMatrix::from_fn(nu, ny, |u, y| clamp(sol[dk0 + y * nu + u]))
    });
    Ok(ModStep {
        delta_v,
        delta_k,
        objective: out.value.unwrap(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gain::estimate::{estimate_input_level, estimate_state_level, z_hat, z_hat_gradients};
    use nalgebra::dmatrix;

    #[test]
    fn scalar_optimum_has_no_descent_direction() {
        let v = VRep::new(DMatrix::from_column_slice(1, 2, &[1.0, -1.0])).unwrap();
        let a = vec![dmatrix![-1.0]];
        let b = dmatrix![1.0];
        let c = dmatrix![1.0];
        let (eta_w, p) = estimate_input_level(&v, &b).unwrap();
        let (eta_z, m_list) = estimate_state_level(&v, &a, &c, 1e-9).unwrap();
        let zh = z_hat(&c, &v);
        let zg = z_hat_gradients(&c, &v);
        let step = modification_lp(&ModProblem {
            v: &v,
            a_eff: &a,
            m_list: &m_list,
            symmetric: true,
            eps: 0.1,
            kind: ModKind::Gain {
                eta_w,
                eta_z,
                p_mat: &p,
                z_hat: &zh,
                z_grad: &zg,
                b: &b,
                eta_z_floor: 1e-9,
            },
            synth: None,
        })
        .unwrap();
        assert!(step.objective.abs() < 1e-8, "objective {}", step.objective);
        assert!(step.delta_v.abs().max() <= 0.1 + 1e-12);
    }

    #[test]
    fn step_bound_is_respected() {
        // shear dynamics admit no certificate at arbitrary hexagons, so
        // bootstrap a feasible polyhedron first
        let a = vec![dmatrix![-1.0, 4.0; 0.0, -1.0]];
        let opts = crate::gain::AlgoOptions {
            m: 8,
            restarts: 3,
            ..crate::gain::AlgoOptions::default()
        };
        let v = crate::gain::bootstrap_storage(&a, 8, &opts).unwrap();
        let b = dmatrix![1.0; 0.0];
        let c = dmatrix![0.0, 1.0];
        let (eta_w, p) = estimate_input_level(&v, &b).unwrap();
        let (eta_z, m_list) = estimate_state_level(&v, &a, &c, 1e-9).unwrap();
        let zh = z_hat(&c, &v);
        let zg = z_hat_gradients(&c, &v);
        for eps in [0.2, 0.05, 0.01] {
            let step = modification_lp(&ModProblem {
                v: &v,
                a_eff: &a,
                m_list: &m_list,
                symmetric: true,
                eps,
                kind: ModKind::Gain {
                    eta_w,
                    eta_z,
                    p_mat: &p,
                    z_hat: &zh,
                    z_grad: &zg,
                    b: &b,
                    eta_z_floor: 1e-9,
                },
                synth: None,
            })
            .unwrap();
            assert!(step.delta_v.abs().max() <= eps + 1e-12);
            assert!(step.objective <= 1e-9);
            // symmetric structure is preserved
            for j in 0..4 {
                for r in 0..2 {
                    let s = step.delta_v[(r, j)] + step.delta_v[(r, j + 4)];
                    assert!(s.abs() < 1e-12);
                }
            }
        }
    }
}
