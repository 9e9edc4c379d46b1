//! Model containers for polytopic linear differential inclusions.
//!
//! An `LdiModel` holds the vertex matrices of `conv{A_1..A_k}` together
//! with the disturbance input map `B` and performance output map `C` of
//!
//! ```text
//! dx/dt in conv{A_i} x + B w,    z = C x.
//! ```
//!
//! The controlled variant adds an actuation map `B_u`, a measurement map
//! `C_y` and linear constraints on the static feedback gain `K`.

use nalgebra::DMatrix;
use thiserror::Error;

/// Which induced signal norm a gain bound refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainNorm {
    L1,
    Linf,
}

impl std::fmt::Display for GainNorm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GainNorm::L1 => write!(f, "l1"),
            GainNorm::Linf => write!(f, "linf"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model needs at least one vertex matrix")]
    NoVertices,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix data contains non-finite entries")]
    NonFinite,
    #[error("parameter box has {0} directions; refusing to enumerate more than 20")]
    TooManyDirections(usize),
    #[error("direction {0} has an empty interval")]
    EmptyInterval(usize),
    #[error("gain violates constraint {index} with residual {residual:.3e}")]
    ConstraintViolated { index: usize, residual: f64 },
}

/// Polytopic LDI `dx/dt in conv{A_i} x + B w`, `z = C x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LdiModel {
    pub a_list: Vec<DMatrix<f64>>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl LdiModel {
    pub fn new(
        a_list: Vec<DMatrix<f64>>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
    ) -> Result<Self, ModelError> {
        let model = LdiModel { a_list, b, c };
        model.validate()?;
        Ok(model)
    }

    pub fn n(&self) -> usize {
        self.b.nrows()
    }

    pub fn n_w(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_z(&self) -> usize {
        self.c.nrows()
    }

    pub fn num_vertices(&self) -> usize {
        self.a_list.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.a_list.is_empty() {
            return Err(ModelError::NoVertices);
        }
        let n = self.b.nrows();
        for (i, a) in self.a_list.iter().enumerate() {
            if a.nrows() != n || a.ncols() != n {
                return Err(ModelError::DimensionMismatch(format!(
                    "vertex {} is {}x{}, expected {}x{}",
                    i,
                    a.nrows(),
                    a.ncols(),
                    n,
                    n
                )));
            }
            if a.iter().any(|x| !x.is_finite()) {
                return Err(ModelError::NonFinite);
            }
        }
        if self.c.ncols() != n {
            return Err(ModelError::DimensionMismatch(format!(
                "C has {} columns, state dimension is {}",
                self.c.ncols(),
                n
            )));
        }
        if self.b.iter().any(|x| !x.is_finite()) || self.c.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        Ok(())
    }

    /// The adjoint system `{A_i', C', B'}`: L1 certificates of a model map
    /// to Linf certificates of its adjoint and vice versa.
    pub fn adjoint(&self) -> LdiModel {
        LdiModel {
            a_list: self.a_list.iter().map(|a| a.transpose()).collect(),
            b: self.c.transpose(),
            c: self.b.transpose(),
        }
    }
}

/// Kind of a linear gain constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    /// `Gl' K Gr <= g` entrywise.
    LessEq,
    /// `Gl' K Gr = 0` entrywise.
    EqZero,
}

/// Linear constraint on a static gain `K`: `Gl' K Gr <= g` or `Gl' K Gr = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct KConstraint {
    pub gamma_l: DMatrix<f64>,
    pub gamma_r: DMatrix<f64>,
    pub bound: f64,
    pub kind: ConstraintKind,
}

impl KConstraint {
    /// `Gl' K Gr` for a conformal `K`.
    pub fn image(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        self.gamma_l.transpose() * k * &self.gamma_r
    }

    /// Largest violation of the constraint by `K`.
    pub fn residual(&self, k: &DMatrix<f64>) -> f64 {
        let img = self.image(k);
        match self.kind {
            ConstraintKind::LessEq => img.iter().fold(0.0f64, |m, v| m.max(v - self.bound)),
            ConstraintKind::EqZero => img.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        }
    }
}

/// LDI with controlled inputs `u = K y` available for synthesis.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlledLdiModel {
    pub base: LdiModel,
    pub b_u: DMatrix<f64>,
    pub c_y: DMatrix<f64>,
    pub k_constraints: Vec<KConstraint>,
}

impl ControlledLdiModel {
    pub fn new(
        base: LdiModel,
        b_u: DMatrix<f64>,
        c_y: DMatrix<f64>,
        k_constraints: Vec<KConstraint>,
    ) -> Result<Self, ModelError> {
        let model = ControlledLdiModel {
            base,
            b_u,
            c_y,
            k_constraints,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn n_u(&self) -> usize {
        self.b_u.ncols()
    }

    pub fn n_y(&self) -> usize {
        self.c_y.nrows()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.base.validate()?;
        let n = self.base.n();
        if self.b_u.nrows() != n {
            return Err(ModelError::DimensionMismatch(format!(
                "B_u has {} rows, state dimension is {}",
                self.b_u.nrows(),
                n
            )));
        }
        if self.c_y.ncols() != n {
            return Err(ModelError::DimensionMismatch(format!(
                "C_y has {} columns, state dimension is {}",
                self.c_y.ncols(),
                n
            )));
        }
        if self.b_u.iter().any(|x| !x.is_finite()) || self.c_y.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        for (i, c) in self.k_constraints.iter().enumerate() {
            if c.gamma_l.nrows() != self.n_u() || c.gamma_r.nrows() != self.n_y() {
                return Err(ModelError::DimensionMismatch(format!(
                    "constraint {} selectors are not conformal with a {}x{} gain",
                    i,
                    self.n_u(),
                    self.n_y()
                )));
            }
            if c.gamma_l.iter().any(|x| !x.is_finite())
                || c.gamma_r.iter().any(|x| !x.is_finite())
                || !c.bound.is_finite()
            {
                return Err(ModelError::NonFinite);
            }
        }
        Ok(())
    }

    /// Adjoint of the controlled model; a gain `K` for the original
    /// corresponds to `K'` for the adjoint, with selector roles swapped.
    pub fn adjoint(&self) -> ControlledLdiModel {
        ControlledLdiModel {
            base: self.base.adjoint(),
            b_u: self.c_y.transpose(),
            c_y: self.b_u.transpose(),
            k_constraints: self
                .k_constraints
                .iter()
                .map(|c| KConstraint {
                    gamma_l: c.gamma_r.clone(),
                    gamma_r: c.gamma_l.clone(),
                    bound: c.bound,
                    kind: c.kind,
                })
                .collect(),
        }
    }

    /// Closed loop `A_i + B_u K C_y` with `B`, `C` unchanged. `K` must
    /// satisfy every gain constraint.
    pub fn closed_loop(&self, k: &DMatrix<f64>) -> Result<LdiModel, ModelError> {
        const K_CONSTRAINT_TOL: f64 = 1e-7;
        if k.nrows() != self.n_u() || k.ncols() != self.n_y() {
            return Err(ModelError::DimensionMismatch(format!(
                "gain is {}x{}, expected {}x{}",
                k.nrows(),
                k.ncols(),
                self.n_u(),
                self.n_y()
            )));
        }
        for (index, c) in self.k_constraints.iter().enumerate() {
            let residual = c.residual(k);
            if residual > K_CONSTRAINT_TOL {
                return Err(ModelError::ConstraintViolated { index, residual });
            }
        }
        let bkc = &self.b_u * k * &self.c_y;
        Ok(LdiModel {
            a_list: self.a_list().iter().map(|a| a + &bkc).collect(),
            b: self.base.b.clone(),
            c: self.base.c.clone(),
        })
    }

    fn a_list(&self) -> &[DMatrix<f64>] {
        &self.base.a_list
    }
}

/// Corner matrices `A0 + sum_i theta_i D_i` over all corners `theta` of the
/// interval box. Exact duplicates (from zero-width intervals) are removed.
pub fn vertices_from_affine_box(
    a0: &DMatrix<f64>,
    directions: &[(DMatrix<f64>, (f64, f64))],
) -> Result<Vec<DMatrix<f64>>, ModelError> {
    let d = directions.len();
    if d > 20 {
        return Err(ModelError::TooManyDirections(d));
    }
    for (i, (dir, (lo, hi))) in directions.iter().enumerate() {
        if lo > hi || !lo.is_finite() || !hi.is_finite() {
            return Err(ModelError::EmptyInterval(i));
        }
        if dir.nrows() != a0.nrows() || dir.ncols() != a0.ncols() {
            return Err(ModelError::DimensionMismatch(format!(
                "direction {} is {}x{}, expected {}x{}",
                i,
                dir.nrows(),
                dir.ncols(),
                a0.nrows(),
                a0.ncols()
            )));
        }
    }
    let mut out: Vec<DMatrix<f64>> = Vec::with_capacity(1 << d);
    for corner in 0u32..(1u32 << d) {
        let mut a = a0.clone();
        for (i, (dir, (lo, hi))) in directions.iter().enumerate() {
            let theta = if corner & (1 << i) != 0 { *hi } else { *lo };
            a += dir * theta;
        }
        if !out.iter().any(|seen| seen == &a) {
            out.push(a);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn scalar_model() -> LdiModel {
        LdiModel::new(
            vec![dmatrix![-1.0]],
            dmatrix![1.0],
            dmatrix![1.0],
        )
        .unwrap()
    }

    #[test]
    fn adjoint_is_involution() {
        let m = LdiModel::new(
            vec![dmatrix![-1.0, 2.0; 0.0, -3.0], dmatrix![-2.0, 1.0; 1.0, -4.0]],
            dmatrix![1.0; 0.5],
            dmatrix![1.0, 0.0],
        )
        .unwrap();
        assert_eq!(m.adjoint().adjoint(), m);
    }

    #[test]
    fn scalar_model_is_self_adjoint() {
        let m = scalar_model();
        assert_eq!(m.adjoint(), m);
    }

    #[test]
    fn adjoint_swaps_roles() {
        let m = LdiModel::new(
            vec![dmatrix![-10.0, 1.0; -0.02, -2.0]],
            dmatrix![0.0; 1.0],
            dmatrix![1.0, 0.0],
        )
        .unwrap();
        let adj = m.adjoint();
        assert_eq!(adj.a_list[0], m.a_list[0].transpose());
        assert_eq!(adj.b, m.c.transpose());
        assert_eq!(adj.c, m.b.transpose());
        assert_eq!(adj.n_w(), m.n_z());
        assert_eq!(adj.n_z(), m.n_w());
    }

    #[test]
    fn box_corner_count_and_reconstruction() {
        let a0 = dmatrix![0.0, 1.0; -1.0, 0.0];
        let d1 = dmatrix![1.0, 0.0; 0.0, 0.0];
        let d2 = dmatrix![0.0, 0.0; 0.0, 1.0];
        let d3 = dmatrix![0.0, 1.0; 0.0, 0.0];
        let dirs = vec![
            (d1.clone(), (-1.0, 1.0)),
            (d2.clone(), (0.5, 2.0)),
            (d3.clone(), (0.0, 0.25)),
        ];
        let verts = vertices_from_affine_box(&a0, &dirs).unwrap();
        assert_eq!(verts.len(), 8);
        for v in &verts {
            // every corner matrix reconstructs from some corner assignment
            let found = (0..8).any(|corner| {
                let mut a = a0.clone();
                for (i, (dir, (lo, hi))) in dirs.iter().enumerate() {
                    let theta = if corner & (1 << i) != 0 { *hi } else { *lo };
                    a += dir * theta;
                }
                &a == v
            });
            assert!(found);
        }
    }

    #[test]
    fn box_with_no_directions_is_nominal() {
        let a0 = dmatrix![-1.0, 0.0; 0.0, -2.0];
        let verts = vertices_from_affine_box(&a0, &[]).unwrap();
        assert_eq!(verts, vec![a0]);
    }

    #[test]
    fn degenerate_interval_deduplicates() {
        let a0 = dmatrix![-1.0];
        let verts =
            vertices_from_affine_box(&a0, &[(dmatrix![1.0], (0.5, 0.5))]).unwrap();
        assert_eq!(verts.len(), 1);
        assert_eq!(verts[0], dmatrix![-0.5]);
    }

    #[test]
    fn closed_loop_with_zero_gain_is_base() {
        let base = LdiModel::new(
            vec![dmatrix![-1.0, 0.0; 0.0, -2.0]],
            dmatrix![1.0; 0.0],
            dmatrix![1.0, 0.0],
        )
        .unwrap();
        let ctrl = ControlledLdiModel::new(
            base.clone(),
            dmatrix![0.0; 1.0],
            dmatrix![1.0, 0.0],
            vec![],
        )
        .unwrap();
        let cl = ctrl.closed_loop(&dmatrix![0.0]).unwrap();
        assert_eq!(cl, base);
    }

    #[test]
    fn closed_loop_rejects_constraint_violation() {
        let base = LdiModel::new(
            vec![dmatrix![-1.0, 0.0; 0.0, -2.0]],
            dmatrix![1.0; 0.0],
            dmatrix![1.0, 0.0],
        )
        .unwrap();
        // forbid entry (0, 1) of the 1x2 gain
        let constraint = KConstraint {
            gamma_l: dmatrix![1.0],
            gamma_r: dmatrix![0.0; 1.0],
            bound: 0.0,
            kind: ConstraintKind::EqZero,
        };
        let ctrl = ControlledLdiModel::new(
            base,
            dmatrix![0.0; 1.0],
            dmatrix![1.0, 0.0; 0.0, 1.0],
            vec![constraint],
        )
        .unwrap();
        match ctrl.closed_loop(&dmatrix![1.0, 2.0]) {
            Err(ModelError::ConstraintViolated { index: 0, .. }) => {}
            other => panic!("expected constraint violation, got {other:?}"),
        }
    }
}
