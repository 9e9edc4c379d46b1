//! Gain estimation at a fixed polyhedron.
//!
//! With the storage candidate `V` fixed, the certificate program splits
//! into an input-level block over `(eta_w, P)` and a state-level block over
//! `(eta_z, M_i)`, and both decompose further: every column of `[B, -B]` is
//! a gauge evaluation, and every column of every `M_i` is a small
//! minimum-column-sum program. The shared levels are recovered afterwards
//! by padding with a strictly interior null combination of the vertices,
//! which preserves every constraint exactly.

use nalgebra::{DMatrix, DVector};

use super::GainError;
use crate::lp::{solve_lp, LinearProgram, LpStatus, SolverOptions};
use crate::polytope::{gauge_eval, interior_point, InteriorPoint, VRep};

/// Sign with the convention sgn(0) = 0.
pub(crate) fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Output weights `z_hat_j = |C V_j|_1`.
pub(crate) fn z_hat(c: &DMatrix<f64>, v: &VRep) -> DVector<f64> {
    let cv = c * v.matrix();
    DVector::from_fn(v.num_vertices(), |j, _| {
        cv.column(j).iter().map(|x| x.abs()).sum()
    })
}

/// Gradient of `z_hat_j` with respect to the j-th vertex: `C' sgn(C V_j)`.
pub(crate) fn z_hat_gradients(c: &DMatrix<f64>, v: &VRep) -> Vec<DVector<f64>> {
    let cv = c * v.matrix();
    (0..v.num_vertices())
        .map(|j| {
            let signs = DVector::from_fn(c.nrows(), |r, _| sgn(cv[(r, j)]));
            c.transpose() * signs
        })
        .collect()
}

/// Strictly interior weights hitting the origin, needed to pad column sums.
pub(crate) fn interior_weights(v: &VRep) -> Result<InteriorPoint, GainError> {
    match interior_point(v)? {
        Some(ip) if ip.margin > crate::polytope::CSET_TOL => Ok(ip),
        _ => Err(GainError::NotCset),
    }
}

/// Optimal `(eta_w, P)` of: minimize `eta_w` subject to `P >= 0`,
/// `[B, -B] = V P`, every column of `P` summing to `eta_w`.
pub fn estimate_input_level(v: &VRep, b: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>), GainError> {
    let ip = interior_weights(v)?;
    input_level_with_interior(v, b, &ip)
}

pub(crate) fn input_level_with_interior(
    v: &VRep,
    b: &DMatrix<f64>,
    ip: &InteriorPoint,
) -> Result<(f64, DMatrix<f64>), GainError> {
    if b.nrows() != v.dim() {
        return Err(GainError::Dimension(format!(
            "B has {} rows, polyhedron dimension is {}",
            b.nrows(),
            v.dim()
        )));
    }
    let m = v.num_vertices();
    let n_w = b.ncols();
    let mut weights: Vec<DVector<f64>> = Vec::with_capacity(2 * n_w);
    let mut gauges = Vec::with_capacity(2 * n_w);
    for s in 0..2 {
        for j in 0..n_w {
            let col = if s == 0 {
                b.column(j).into_owned()
            } else {
                -b.column(j).into_owned()
            };
            let g = gauge_eval(v, &col)?;
            gauges.push(g.value);
            weights.push(g.weights);
        }
    }
    let eta_w = gauges.iter().fold(0.0f64, |m, g| m.max(*g));
    let mut p = DMatrix::zeros(m, 2 * n_w);
    for (c, w) in weights.iter().enumerate() {
        let pad = (eta_w - gauges[c]).max(0.0);
        for l in 0..m {
            p[(l, c)] = w[l].max(0.0) + pad * ip.weights[l];
        }
    }
    Ok((eta_w, p))
}

/// Per-column minimum-column-sum program: one column of one `M_i`.
/// `min 1.q  s.t.  V q = rhs,  q_l >= 0 for l != j` (diagonal free).
///
/// A second stage re-centers the column inside its optimal face
/// (maximizing the smallest off-diagonal entry); the level is unchanged
/// but the linearized modification step gets the loosest possible bounds
/// around the iterate, which avoids a class of spurious local optima.
fn min_colsum(v: &VRep, rhs: &DVector<f64>, j: usize) -> Result<Option<ColSolution>, GainError> {
    let m = v.num_vertices();
    let mut lp = LinearProgram::new(m);
    lp.c = DVector::from_element(m, 1.0);
    lp.a_eq = v.matrix().clone();
    lp.b_eq = rhs.clone();
    for l in 0..m {
        lp.lower[l] = if l == j { f64::NEG_INFINITY } else { 0.0 };
    }
    let out = solve_lp(&lp, &SolverOptions::default())?;
    let value = match out.status {
        LpStatus::Optimal => out.value.unwrap(),
        // infeasible columns and the unbounded ray that a redundant vertex
        // opens are both handled by the caller's revert path
        LpStatus::Infeasible | LpStatus::Unbounded => return Ok(None),
    };

    // stage 2: resample the optimal face under a hashed objective so the
    // linearization point varies between iterates
    let n = v.dim();
    let mut reroll = LinearProgram::new(m);
    let mix = hash_bits(rhs, j);
    for l in 0..m {
        reroll.c[l] = unit_from_hash(mix.wrapping_add(l as u64));
    }
    let mut a = DMatrix::zeros(n + 1, m);
    a.view_mut((0, 0), (n, m)).copy_from(v.matrix());
    for l in 0..m {
        a[(n, l)] = 1.0;
    }
    reroll.a_eq = a;
    reroll.b_eq = DVector::zeros(n + 1);
    reroll.b_eq.rows_mut(0, n).copy_from(rhs);
    reroll.b_eq[n] = value;
    for l in 0..m {
        reroll.lower[l] = if l == j { f64::NEG_INFINITY } else { 0.0 };
    }
    let rolled = solve_lp(&reroll, &SolverOptions::default())?;
    match rolled.status {
        LpStatus::Optimal => Ok(Some(ColSolution {
            value,
            q: rolled.x.unwrap(),
        })),
        _ => Ok(Some(ColSolution {
            value,
            q: out.x.unwrap(),
        })),
    }
}

/// FNV-style mix of the program data; keeps the face resampling
/// deterministic without threading a generator through the call tree.
fn hash_bits(rhs: &DVector<f64>, j: usize) -> u64 {
    let mut h = 0xcbf29ce484222325u64 ^ (j as u64);
    for x in rhs.iter() {
        h ^= x.to_bits();
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn unit_from_hash(h: u64) -> f64 {
    let mut x = h;
    x ^= x >> 33;
    x = x.wrapping_mul(0xff51afd7ed558ccd);
    x ^= x >> 33;
    (x >> 11) as f64 / (1u64 << 53) as f64
}

pub(crate) struct ColSolution {
    pub value: f64,
    pub q: DVector<f64>,
}

/// All per-column solutions of the state-level block, before the shared
/// decay level is extracted.
pub(crate) struct StateInner {
    pub z_hat: DVector<f64>,
    pub cols: Vec<Vec<ColSolution>>,
    pub interior: InteriorPoint,
}

pub(crate) enum StateLevelOutcome {
    /// Shared level `eta_z` achieved by every vertex and column.
    Decaying(f64),
    /// `C V = 0`: the column sums can be pinned to zero for any level, so
    /// the bound degenerates to gamma = 0.
    ZeroOutput,
    /// Some column cannot reach the floor: no decaying certificate at `V`.
    Infeasible,
}

impl StateInner {
    pub fn eta_level(&self, eta_z_floor: f64) -> StateLevelOutcome {
        let z_scale = self.z_hat.iter().fold(0.0f64, |m, z| m.max(*z));
        let z_zero = 1e-14 * (1.0 + z_scale);
        const COLSUM_SLACK: f64 = 1e-9;
        let mut eta = f64::INFINITY;
        let mut any_positive = false;
        for per_vertex in &self.cols {
            for (j, col) in per_vertex.iter().enumerate() {
                let zj = self.z_hat[j];
                if zj <= z_zero {
                    if col.value > COLSUM_SLACK {
                        return StateLevelOutcome::Infeasible;
                    }
                } else {
                    any_positive = true;
                    eta = eta.min(-col.value / zj);
                }
            }
        }
        if !any_positive {
            return StateLevelOutcome::ZeroOutput;
        }
        if eta < eta_z_floor {
            StateLevelOutcome::Infeasible
        } else {
            StateLevelOutcome::Decaying(eta)
        }
    }

    /// Assemble the multiplier matrices at level `eta_z`, padding each
    /// column sum up to exactly `-eta_z z_hat_j` with the interior weights.
    pub fn lift(&self, eta_z: f64) -> Vec<DMatrix<f64>> {
        let m = self.z_hat.len();
        self.cols
            .iter()
            .map(|per_vertex| {
                DMatrix::from_fn(m, m, |l, j| {
                    let col = &per_vertex[j];
                    let pad = (-eta_z * self.z_hat[j] - col.value).max(0.0);
                    let base = if l == j { col.q[l] } else { col.q[l].max(0.0) };
                    base + pad * self.interior.weights[l]
                })
            })
            .collect()
    }
}

pub(crate) fn state_inner(
    v: &VRep,
    a_list: &[DMatrix<f64>],
    c: &DMatrix<f64>,
    interior: InteriorPoint,
) -> Result<Option<StateInner>, GainError> {
    let m = v.num_vertices();
    let zh = z_hat(c, v);
    let mut cols = Vec::with_capacity(a_list.len());
    for a in a_list {
        let av = a * v.matrix();
        let mut per_vertex = Vec::with_capacity(m);
        for j in 0..m {
            match min_colsum(v, &av.column(j).into_owned(), j)? {
                Some(sol) => per_vertex.push(sol),
                None => return Ok(None),
            }
        }
        cols.push(per_vertex);
    }
    Ok(Some(StateInner {
        z_hat: zh,
        cols,
        interior,
    }))
}

/// Optimal `(eta_z, M_list)` of: maximize `eta_z` subject to, for every
/// vertex `i`: `offdiag(M_i) >= 0`, `A_i V = V M_i`, column sums of `M_i`
/// equal to `-eta_z z_hat`. Strict positivity is realized as
/// `eta_z >= eta_z_floor`.
pub fn estimate_state_level(
    v: &VRep,
    a_list: &[DMatrix<f64>],
    c: &DMatrix<f64>,
    eta_z_floor: f64,
) -> Result<(f64, Vec<DMatrix<f64>>), GainError> {
    let ip = interior_weights(v)?;
    let inner = state_inner(v, a_list, c, ip)?.ok_or(GainError::StateInfeasible)?;
    match inner.eta_level(eta_z_floor) {
        StateLevelOutcome::Decaying(eta) => {
            let m_list = inner.lift(eta);
            Ok((eta, m_list))
        }
        StateLevelOutcome::ZeroOutput => Err(GainError::UnboundedStateLevel),
        StateLevelOutcome::Infeasible => Err(GainError::StateInfeasible),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn scalar_v() -> VRep {
        VRep::new(DMatrix::from_column_slice(1, 2, &[1.0, -1.0])).unwrap()
    }

    #[test]
    fn scalar_input_level_is_identity() {
        let (eta_w, p) = estimate_input_level(&scalar_v(), &dmatrix![1.0]).unwrap();
        assert!((eta_w - 1.0).abs() < 1e-9);
        // [B, -B] = [1, -1] = V P with column sums eta_w: P = I
        assert!((p[(0, 0)] - 1.0).abs() < 1e-9);
        assert!((p[(1, 1)] - 1.0).abs() < 1e-9);
        assert!(p[(0, 1)].abs() < 1e-9);
        assert!(p[(1, 0)].abs() < 1e-9);
    }

    #[test]
    fn zero_input_matrix_gives_zero_level() {
        let (eta_w, p) = estimate_input_level(&scalar_v(), &dmatrix![0.0]).unwrap();
        assert_eq!(eta_w, 0.0);
        assert!(p.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn cross_polytope_input_level() {
        let v = VRep::new(DMatrix::from_column_slice(
            2,
            4,
            &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0],
        ))
        .unwrap();
        let (eta_w, _) = estimate_input_level(&v, &dmatrix![1.0; 0.0]).unwrap();
        assert!((eta_w - 1.0).abs() < 1e-9);
    }

    #[test]
    fn scalar_state_level() {
        let v = scalar_v();
        let (eta_z, m_list) =
            estimate_state_level(&v, &[dmatrix![-1.0]], &dmatrix![1.0], 1e-9).unwrap();
        assert!((eta_z - 1.0).abs() < 1e-9);
        let m = &m_list[0];
        // A V = V M with column sums -eta_z: M = -I
        assert!((m[(0, 0)] + 1.0).abs() < 1e-8);
        assert!((m[(1, 1)] + 1.0).abs() < 1e-8);
        assert!(m[(0, 1)].abs() < 1e-8);
        assert!(m[(1, 0)].abs() < 1e-8);
    }

    #[test]
    fn scalar_state_level_scales_with_decay() {
        let (eta_z, _) =
            estimate_state_level(&scalar_v(), &[dmatrix![-2.0]], &dmatrix![1.0], 1e-9).unwrap();
        assert!((eta_z - 2.0).abs() < 1e-9);
    }

    #[test]
    fn unstable_state_level_is_infeasible() {
        let r = estimate_state_level(&scalar_v(), &[dmatrix![1.0]], &dmatrix![1.0], 1e-9);
        assert!(matches!(r, Err(GainError::StateInfeasible)));
    }

    #[test]
    fn zero_output_map_is_the_sentinel() {
        let r = estimate_state_level(&scalar_v(), &[dmatrix![-1.0]], &dmatrix![0.0], 1e-9);
        assert!(matches!(r, Err(GainError::UnboundedStateLevel)));
    }

    #[test]
    fn lifted_multipliers_satisfy_constraints() {
        // two-vertex inclusion on a 2-D hexagon-ish set
        let v = crate::polytope::random_cset(2, 6, 11, true).unwrap();
        let a1 = dmatrix![-1.0, 0.3; -0.2, -0.8];
        let a2 = dmatrix![-0.9, 0.0; 0.1, -1.2];
        let c = dmatrix![1.0, 1.0];
        let (eta_z, m_list) =
            estimate_state_level(&v, &[a1.clone(), a2.clone()], &c, 1e-9).unwrap();
        assert!(eta_z > 0.0);
        let zh = z_hat(&c, &v);
        for (a, m) in [(a1, &m_list[0]), (a2, &m_list[1])] {
            let resid = (a * v.matrix() - v.matrix() * m).abs().max();
            assert!(resid < 1e-8, "equality residual {resid}");
            for j in 0..6 {
                let colsum: f64 = m.column(j).sum();
                assert!((colsum + eta_z * zh[j]).abs() < 1e-8);
                for l in 0..6 {
                    if l != j {
                        assert!(m[(l, j)] >= -1e-10);
                    }
                }
            }
        }
    }
}
