//! Polyhedral C-set calculus.
//!
//! A C-set is a compact convex set with the origin strictly inside; its
//! gauge (Minkowski functional) is the storage-function candidate used by
//! the gain certificates. V-rep sets are convex hulls of matrix columns,
//! H-rep sets are intersections `{x : Hx <= 1}`. The two stay on their own
//! side of the adjoint throughout the crate; no conversion is ever needed.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use thiserror::Error;

use crate::lp::{solve_lp, LinearProgram, LpError, LpStatus, SolverOptions};

/// Margin below which the interior LP declares "not a C-set".
pub const CSET_TOL: f64 = 1e-9;
/// Default tolerance for the redundant-vertex test.
pub const REDUNDANCY_TOL: f64 = 1e-7;

const RANDOM_CSET_RETRIES: usize = 100;

/// Vertex representation: the columns of `v` span the candidate set.
#[derive(Debug, Clone, PartialEq)]
pub struct VRep {
    v: DMatrix<f64>,
}

/// Half-space representation of `{x : Hx <= 1}`; rows of `h` are the
/// half-space normals.
#[derive(Debug, Clone, PartialEq)]
pub struct HRep {
    h: DMatrix<f64>,
}

#[derive(Debug, Error)]
pub enum PolytopeError {
    #[error("vertex matrix must have at least dim+1 finite columns, got {cols} for dim {dim}")]
    BadShape { dim: usize, cols: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("gauge program infeasible: vertex matrix is not a C-set")]
    CorruptVRep,
    #[error("directional derivative is undefined at x = 0")]
    ZeroBasePoint,
    #[error("symmetric mode needs an even vertex count m >= 2n, got m = {m} for n = {n}")]
    BadSymmetricShape { n: usize, m: usize },
    #[error("random C-set sampling exhausted {0} retries")]
    RetryCapExhausted(usize),
    #[error(transparent)]
    Lp(#[from] LpError),
}

impl VRep {
    pub fn new(v: DMatrix<f64>) -> Result<Self, PolytopeError> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(PolytopeError::NonFinite);
        }
        if v.ncols() < v.nrows() + 1 {
            return Err(PolytopeError::BadShape {
                dim: v.nrows(),
                cols: v.ncols(),
            });
        }
        Ok(VRep { v })
    }

    /// Construct without the m >= n+1 shape check (used when probing
    /// degenerate hulls through `is_cset`).
    pub fn from_matrix_unchecked(v: DMatrix<f64>) -> Self {
        VRep { v }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn dim(&self) -> usize {
        self.v.nrows()
    }

    pub fn num_vertices(&self) -> usize {
        self.v.ncols()
    }

    pub fn vertex(&self, j: usize) -> DVector<f64> {
        self.v.column(j).into_owned()
    }

    /// The transposed matrix, i.e. the H-rep this V-rep maps to under the
    /// adjoint correspondence.
    pub fn to_hrep_transpose(&self) -> HRep {
        HRep {
            h: self.v.transpose(),
        }
    }
}

impl HRep {
    pub fn new(h: DMatrix<f64>) -> Result<Self, PolytopeError> {
        if h.iter().any(|x| !x.is_finite()) {
            return Err(PolytopeError::NonFinite);
        }
        Ok(HRep { h })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn dim(&self) -> usize {
        self.h.ncols()
    }

    pub fn num_halfspaces(&self) -> usize {
        self.h.nrows()
    }

    pub fn to_vrep_transpose(&self) -> VRep {
        VRep {
            v: self.h.transpose(),
        }
    }

    /// `{x : Hx <= 1}` is a C-set iff it is bounded (the origin is always
    /// strictly inside); boundedness holds iff the rows of `H` positively
    /// span, i.e. iff the transposed V-rep is a C-set.
    pub fn is_cset(&self) -> Result<bool, PolytopeError> {
        is_cset(&self.to_vrep_transpose())
    }
}

fn solver_opts() -> SolverOptions {
    SolverOptions::default()
}

/// Result of a gauge evaluation: the optimal value together with primal
/// weights (`x = V p`) and the dual support vector (`h . x = value`,
/// `h'V <= 1`).
#[derive(Debug, Clone)]
pub struct GaugeEval {
    pub value: f64,
    pub weights: DVector<f64>,
    pub support: DVector<f64>,
}

/// Gauge of `x` with respect to the V-rep set:
/// `min { 1.p : x = Vp, p >= 0 }`, equal to `max { h.x : h'V <= 1 }`.
pub fn gauge_eval(poly: &VRep, x: &DVector<f64>) -> Result<GaugeEval, PolytopeError> {
    let n = poly.dim();
    let m = poly.num_vertices();
    assert_eq!(x.len(), n, "gauge point dimension mismatch");
    let mut lp = LinearProgram::new(m);
    lp.c = DVector::from_element(m, 1.0);
    lp.a_eq = poly.v.clone();
    lp.b_eq = x.clone();
    lp.lower = DVector::zeros(m);
    let out = solve_lp(&lp, &solver_opts())?;
    match out.status {
        LpStatus::Optimal => Ok(GaugeEval {
            value: out.value.unwrap(),
            weights: out.x.unwrap(),
            support: out.y.unwrap(),
        }),
        LpStatus::Infeasible | LpStatus::Unbounded => Err(PolytopeError::CorruptVRep),
    }
}

/// One optimizer of the dual gauge program at `x`: satisfies
/// `h . x = gauge(x)` and `h'V <= 1` componentwise.
pub fn subdifferential_witness(
    poly: &VRep,
    x: &DVector<f64>,
) -> Result<DVector<f64>, PolytopeError> {
    Ok(gauge_eval(poly, x)?.support)
}

/// Directional derivative of the gauge at `x` in direction `z`:
/// `max { h.z : h.x = gauge(x), h'V <= 1 }`.
pub fn directional_derivative(
    poly: &VRep,
    x: &DVector<f64>,
    z: &DVector<f64>,
) -> Result<f64, PolytopeError> {
    let n = poly.dim();
    let m = poly.num_vertices();
    assert_eq!(x.len(), n, "base point dimension mismatch");
    assert_eq!(z.len(), n, "direction dimension mismatch");
    if x.iter().all(|v| *v == 0.0) {
        return Err(PolytopeError::ZeroBasePoint);
    }
    let psi = gauge_eval(poly, x)?.value;
    // maximize h.z over the subdifferential; free variables, one equality
    // row h.x = psi and m inequality rows h'V <= 1
    let mut lp = LinearProgram::new(n);
    lp.c = -z.clone();
    lp.a_eq = DMatrix::from_fn(1, n, |_, j| x[j]);
    lp.b_eq = DVector::from_element(1, psi);
    lp.a_in = poly.v.transpose();
    lp.b_in = DVector::from_element(m, 1.0);
    let out = solve_lp(&lp, &solver_opts())?;
    match out.status {
        LpStatus::Optimal => Ok(-out.value.unwrap()),
        _ => Err(PolytopeError::CorruptVRep),
    }
}

/// Strictly interior convex combination of the columns hitting the origin:
/// `V p = 0`, `1.p = 1`, maximizing the componentwise margin `p >= r`.
#[derive(Debug, Clone)]
pub struct InteriorPoint {
    pub margin: f64,
    pub weights: DVector<f64>,
}

/// Maximum-margin certificate that the origin lies strictly inside the
/// hull; `None` when the origin is not even in the affine hull.
pub fn interior_point(poly: &VRep) -> Result<Option<InteriorPoint>, PolytopeError> {
    let n = poly.dim();
    let m = poly.num_vertices();
    // substitute p = q + r 1 with q >= 0: max r s.t. Vq + r(V1) = 0,
    // 1.q + m r = 1
    let mut lp = LinearProgram::new(m + 1);
    lp.c[m] = -1.0;
    let mut a = DMatrix::zeros(n + 1, m + 1);
    a.view_mut((0, 0), (n, m)).copy_from(&poly.v);
    let v1 = &poly.v * DVector::from_element(m, 1.0);
    for i in 0..n {
        a[(i, m)] = v1[i];
    }
    for j in 0..m {
        a[(n, j)] = 1.0;
    }
    a[(n, m)] = m as f64;
    lp.a_eq = a;
    lp.b_eq = DVector::zeros(n + 1);
    lp.b_eq[n] = 1.0;
    for j in 0..m {
        lp.lower[j] = 0.0;
    }
    let out = solve_lp(&lp, &solver_opts())?;
    match out.status {
        LpStatus::Optimal => {
            let sol = out.x.unwrap();
            let r = sol[m];
            let weights = DVector::from_fn(m, |j, _| sol[j] + r);
            Ok(Some(InteriorPoint { margin: r, weights }))
        }
        LpStatus::Infeasible => Ok(None),
        LpStatus::Unbounded => Err(PolytopeError::Lp(LpError::Numerical(
            "interior margin program reported a ray".into(),
        ))),
    }
}

fn rank(v: &DMatrix<f64>) -> usize {
    let svd = v.clone().svd(false, false);
    let smax = svd.singular_values.iter().fold(0.0f64, |m, s| m.max(*s));
    if smax == 0.0 {
        return 0;
    }
    let tol = smax * 1e-12 * (v.nrows().max(v.ncols()) as f64);
    svd.singular_values.iter().filter(|s| **s > tol).count()
}

/// True iff the origin is strictly inside the convex hull of the columns.
pub fn is_cset(poly: &VRep) -> Result<bool, PolytopeError> {
    if rank(&poly.v) < poly.dim() {
        return Ok(false);
    }
    match interior_point(poly)? {
        Some(ip) => Ok(ip.margin > CSET_TOL),
        None => Ok(false),
    }
}

/// Indices of columns whose gauge over all columns is below `1 - tol`;
/// a vertex exactly on the boundary is kept.
pub fn redundant_vertices(poly: &VRep, tol: f64) -> Result<Vec<usize>, PolytopeError> {
    let mut out = Vec::new();
    for j in 0..poly.num_vertices() {
        let g = gauge_eval(poly, &poly.vertex(j))?;
        if g.value < 1.0 - tol {
            out.push(j);
        }
    }
    Ok(out)
}

/// Deterministic uniform draw in [0, 1) from 53 random bits.
fn unit_uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// Standard normal via Box-Muller; only the cosine branch is used so the
/// stream stays simple and reproducible.
pub(crate) fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = 1.0 - unit_uniform(rng);
    let u2 = unit_uniform(rng);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Seeded Gaussian matrix, used for perturbing user-supplied gains.
pub(crate) fn standard_normal_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| standard_normal(&mut rng))
}

/// Random C-set with columns on the unit sphere. In symmetric mode the
/// result is `[W, -W]` with `m/2` independent columns; resamples until
/// `is_cset` holds, up to a retry cap.
pub fn random_cset(n: usize, m: usize, seed: u64, symmetric: bool) -> Result<VRep, PolytopeError> {
    if symmetric && (m % 2 != 0 || m < 2 * n) {
        return Err(PolytopeError::BadSymmetricShape { n, m });
    }
    if !symmetric && m < n + 1 {
        return Err(PolytopeError::BadShape { dim: n, cols: m });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..RANDOM_CSET_RETRIES {
        let cols = if symmetric { m / 2 } else { m };
        let mut v = DMatrix::zeros(n, m);
        for j in 0..cols {
            let mut col = DVector::from_fn(n, |_, _| standard_normal(&mut rng));
            let norm = col.norm();
            if norm < 1e-9 {
                continue;
            }
            col /= norm;
            for i in 0..n {
                v[(i, j)] = col[i];
                if symmetric {
                    v[(i, j + cols)] = -col[i];
                }
            }
        }
        let cand = VRep { v };
        if is_cset(&cand)? {
            return Ok(cand);
        }
    }
    Err(PolytopeError::RetryCapExhausted(RANDOM_CSET_RETRIES))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cross_polytope() -> VRep {
        VRep::new(DMatrix::from_column_slice(
            2,
            4,
            &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0],
        ))
        .unwrap()
    }

    fn square() -> VRep {
        VRep::new(DMatrix::from_column_slice(
            2,
            4,
            &[1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0, 1.0],
        ))
        .unwrap()
    }

    #[test]
    fn gauge_is_one_norm_on_cross_polytope() {
        let p = cross_polytope();
        let g = gauge_eval(&p, &DVector::from_vec(vec![0.3, -0.4])).unwrap();
        assert!((g.value - 0.7).abs() < 1e-9);
    }

    #[test]
    fn gauge_is_max_norm_on_square() {
        let p = square();
        let g = gauge_eval(&p, &DVector::from_vec(vec![0.5, -0.25])).unwrap();
        assert!((g.value - 0.5).abs() < 1e-9);
    }

    #[test]
    fn subdifferential_witness_on_axis() {
        let p = cross_polytope();
        let h = subdifferential_witness(&p, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert!((h[0] - 1.0).abs() < 1e-9);
        assert!(h[1].abs() <= 1.0 + 1e-9);
    }

    #[test]
    fn subdifferential_unique_gradient_in_open_orthant() {
        let p = cross_polytope();
        let h = subdifferential_witness(&p, &DVector::from_vec(vec![0.5, 0.5])).unwrap();
        assert!((h[0] - 1.0).abs() < 1e-8);
        assert!((h[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn directional_derivative_examples() {
        let p = cross_polytope();
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let up = directional_derivative(&p, &x, &DVector::from_vec(vec![0.0, 1.0])).unwrap();
        assert!((up - 1.0).abs() < 1e-9);
        let back = directional_derivative(&p, &x, &DVector::from_vec(vec![-1.0, 0.0])).unwrap();
        assert!((back + 1.0).abs() < 1e-9);
    }

    #[test]
    fn directional_derivative_rejects_origin() {
        let p = cross_polytope();
        let r = directional_derivative(&p, &DVector::zeros(2), &DVector::from_vec(vec![1.0, 0.0]));
        assert!(matches!(r, Err(PolytopeError::ZeroBasePoint)));
    }

    #[test]
    fn cset_checks() {
        assert!(is_cset(&cross_polytope()).unwrap());
        // hull of {e1, e2} misses the origin
        let missing =
            VRep::from_matrix_unchecked(DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        assert!(!is_cset(&missing).unwrap());
        // hull of {e1, -e1} in 2-D is a segment with empty interior
        let segment =
            VRep::from_matrix_unchecked(DMatrix::from_column_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]));
        assert!(!is_cset(&segment).unwrap());
    }

    #[test]
    fn redundancy_detects_interior_column() {
        let mut v = cross_polytope().matrix().clone().insert_column(4, 0.0);
        v[(0, 4)] = 0.2;
        v[(1, 4)] = 0.2;
        let p = VRep::new(v).unwrap();
        assert_eq!(redundant_vertices(&p, REDUNDANCY_TOL).unwrap(), vec![4]);
        assert!(redundant_vertices(&cross_polytope(), REDUNDANCY_TOL)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn edge_midpoint_is_kept() {
        // midpoint of an edge has gauge exactly one, so it must not be
        // reported as redundant
        let mut v = square().matrix().clone().insert_column(4, 0.0);
        v[(0, 4)] = 1.0;
        v[(1, 4)] = 0.0;
        let p = VRep::new(v).unwrap();
        let g = gauge_eval(&p, &p.vertex(4)).unwrap();
        assert!((g.value - 1.0).abs() < 1e-9);
        assert!(redundant_vertices(&p, REDUNDANCY_TOL).unwrap().is_empty());
    }

    #[test]
    fn random_cset_shapes_and_determinism() {
        let a = random_cset(2, 4, 7, true).unwrap();
        assert_eq!(a.dim(), 2);
        assert_eq!(a.num_vertices(), 4);
        for j in 0..2 {
            assert!((a.vertex(j).norm() - 1.0).abs() < 1e-12);
            let neg = a.vertex(j + 2) + a.vertex(j);
            assert!(neg.norm() < 1e-15);
        }
        let b = random_cset(2, 4, 7, true).unwrap();
        assert_eq!(a.matrix(), b.matrix());
        for seed in 0..5 {
            let c = random_cset(3, 8, seed, true).unwrap();
            assert!(is_cset(&c).unwrap());
        }
    }

    #[test]
    fn random_cset_rejects_bad_symmetric_shape() {
        assert!(matches!(
            random_cset(2, 3, 0, true),
            Err(PolytopeError::BadSymmetricShape { .. })
        ));
    }
}
