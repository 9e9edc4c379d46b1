//! Independent certificate verification.
//!
//! Re-checks every constraint of the gain conditions directly from the
//! certificate data: the C-set property of the polyhedron, the input and
//! state (or state and output) blocks, positivity of the levels, and
//! consistency of the reported bound with the level ratio. No solver state
//! is reused; the only LP involved is the interior-margin C-set check.

use nalgebra::{DMatrix, DVector};

use super::estimate::z_hat;
use super::{CertPoly, GainCertificate};
use crate::model::{GainNorm, LdiModel};
use crate::polytope::is_cset;

/// One constraint family with its worst residual.
#[derive(Debug, Clone)]
pub struct FamilyResidual {
    pub family: &'static str,
    pub residual: f64,
    pub pass: bool,
}

/// Verification report: `pass` iff every family holds within tolerance.
#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub pass: bool,
    pub families: Vec<FamilyResidual>,
}

impl VerifyReport {
    pub fn first_failure(&self) -> Option<&FamilyResidual> {
        self.families.iter().find(|f| !f.pass)
    }
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

fn min_entry(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(f64::INFINITY, |acc, v| acc.min(*v))
}

fn offdiag_min(m: &DMatrix<f64>) -> f64 {
    let mut worst = f64::INFINITY;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if i != j {
                worst = worst.min(m[(i, j)]);
            }
        }
    }
    worst
}

/// Check every certificate constraint against `model` within `tol`.
///
/// Residuals are reported raw; each family passes when its residual stays
/// below `tol` scaled by the magnitude of the data entering that
/// constraint, so verification is meaningful for aggressive designs where
/// the multipliers carry large entries. For synthesis certificates pass
/// the closed-loop model; the stored gain is informational here.
pub fn verify_certificate(model: &LdiModel, cert: &GainCertificate, tol: f64) -> VerifyReport {
    let mut families = Vec::new();
    let mut push = |family: &'static str, residual: f64, limit: f64| {
        families.push(FamilyResidual {
            family,
            residual,
            pass: residual <= limit,
        });
    };

    let k = model.a_list.len();
    let shape_ok;
    match (&cert.poly, cert.norm) {
        (CertPoly::V(v), GainNorm::L1) => {
            shape_ok = v.dim() == model.n()
                && cert.p.nrows() == v.num_vertices()
                && cert.p.ncols() == 2 * model.n_w()
                && cert.m_list.len() == k
                && cert
                    .m_list
                    .iter()
                    .all(|m| m.nrows() == v.num_vertices() && m.ncols() == v.num_vertices());
            if shape_ok {
                let cset = is_cset(v).unwrap_or(false);
                push("cset", if cset { 0.0 } else { 1.0 }, 0.5);

                // input block: P >= 0, [B, -B] = V P, eta_w 1' = 1'P
                let vm = v.matrix();
                let mut b2 = DMatrix::zeros(model.n(), 2 * model.n_w());
                b2.view_mut((0, 0), (model.n(), model.n_w()))
                    .copy_from(&model.b);
                b2.view_mut((0, model.n_w()), (model.n(), model.n_w()))
                    .copy_from(&(-model.b.clone()));
                let p_scale = 1.0 + max_abs(&cert.p);
                push("input_nonneg", (-min_entry(&cert.p)).max(0.0), tol * p_scale);
                let input_scale = 1.0 + max_abs(&b2).max(max_abs(&(vm * &cert.p)));
                push("input_eq", max_abs(&(vm * &cert.p - b2)), tol * input_scale);
                let colsums = DVector::from_fn(cert.p.ncols(), |c, _| cert.p.column(c).sum());
                let sum_res = colsums
                    .iter()
                    .fold(0.0f64, |m, s| m.max((s - cert.eta_w).abs()));
                push("input_level", sum_res, tol * (1.0 + cert.eta_w.abs()));

                // state block per vertex
                let zh = z_hat(&model.c, v);
                let mut eq_res = 0.0f64;
                let mut sum_res = 0.0f64;
                let mut off_res = 0.0f64;
                let mut eq_scale = 1.0f64;
                let mut sum_scale = 1.0f64;
                let mut m_scale = 1.0f64;
                for (a, m_i) in model.a_list.iter().zip(&cert.m_list) {
                    let av = a * vm;
                    let vm_i = vm * m_i;
                    eq_res = eq_res.max(max_abs(&(&av - &vm_i)));
                    eq_scale = eq_scale.max(max_abs(&av)).max(max_abs(&vm_i));
                    for j in 0..m_i.ncols() {
                        let colsum: f64 = m_i.column(j).sum();
                        let target = cert.eta_z * zh[j];
                        sum_res = sum_res.max((colsum + target).abs());
                        sum_scale = sum_scale.max(colsum.abs()).max(target.abs());
                    }
                    off_res = off_res.max((-offdiag_min(m_i)).max(0.0));
                    m_scale = m_scale.max(max_abs(m_i));
                }
                push("state_eq", eq_res, tol * eq_scale);
                push("state_level", sum_res, tol * sum_scale);
                push("state_offdiag", off_res, tol * m_scale);

                push("eta_positive", {
                    let mut r: f64 = 0.0;
                    if !(cert.eta_z > 0.0) {
                        r = 1.0;
                    }
                    r = r.max(-cert.eta_w);
                    r.max(0.0)
                }, tol);

                let z_scale = zh.iter().fold(0.0f64, |m, z| m.max(*z));
                let expected = if z_scale <= 1e-12 * (1.0 + model.c.norm()) {
                    0.0
                } else {
                    cert.eta_w / cert.eta_z
                };
                push(
                    "gamma_consistency",
                    (cert.gamma - expected).abs() / expected.abs().max(1.0),
                    tol,
                );
            }
        }
        (CertPoly::H(h), GainNorm::Linf) => {
            shape_ok = h.dim() == model.n()
                && cert.p.nrows() == 2 * model.n_z()
                && cert.p.ncols() == h.num_halfspaces()
                && cert.m_list.len() == k
                && cert
                    .m_list
                    .iter()
                    .all(|m| m.nrows() == h.num_halfspaces() && m.ncols() == h.num_halfspaces());
            if shape_ok {
                let cset = h.is_cset().unwrap_or(false);
                push("cset", if cset { 0.0 } else { 1.0 }, 0.5);

                let hm = h.matrix();
                // w_hat_j = |B'(H^j)'|_1
                let hb = hm * &model.b;
                let wh = DVector::from_fn(h.num_halfspaces(), |j, _| {
                    hb.row(j).iter().map(|x| x.abs()).sum()
                });

                // state block: H A_i = M_i H, -eta_w w_hat = M_i 1
                let mut eq_res = 0.0f64;
                let mut sum_res = 0.0f64;
                let mut off_res = 0.0f64;
                let mut eq_scale = 1.0f64;
                let mut sum_scale = 1.0f64;
                let mut m_scale = 1.0f64;
                for (a, m_i) in model.a_list.iter().zip(&cert.m_list) {
                    let ha = hm * a;
                    let mh = m_i * hm;
                    eq_res = eq_res.max(max_abs(&(&ha - &mh)));
                    eq_scale = eq_scale.max(max_abs(&ha)).max(max_abs(&mh));
                    for i in 0..m_i.nrows() {
                        let rowsum: f64 = m_i.row(i).sum();
                        let target: f64 = cert.eta_w * wh[i];
                        let r: f64 = rowsum + target;
                        sum_res = sum_res.max(r.abs());
                        sum_scale = sum_scale.max(rowsum.abs()).max(target.abs());
                    }
                    off_res = off_res.max((-offdiag_min(m_i)).max(0.0));
                    m_scale = m_scale.max(max_abs(m_i));
                }
                push("state_eq", eq_res, tol * eq_scale);
                push("state_level", sum_res, tol * sum_scale);
                push("state_offdiag", off_res, tol * m_scale);

                // output block: P >= 0, [C; -C] = P H, eta_z 1 = P 1
                let mut c2 = DMatrix::zeros(2 * model.n_z(), model.n());
                c2.view_mut((0, 0), (model.n_z(), model.n()))
                    .copy_from(&model.c);
                c2.view_mut((model.n_z(), 0), (model.n_z(), model.n()))
                    .copy_from(&(-model.c.clone()));
                let p_scale = 1.0 + max_abs(&cert.p);
                push("output_nonneg", (-min_entry(&cert.p)).max(0.0), tol * p_scale);
                let out_scale = 1.0 + max_abs(&c2).max(max_abs(&(&cert.p * hm)));
                push("output_eq", max_abs(&(&cert.p * hm - c2)), tol * out_scale);
                let rowsums = DVector::from_fn(cert.p.nrows(), |r, _| cert.p.row(r).sum());
                let level_res = rowsums
                    .iter()
                    .fold(0.0f64, |m, s| m.max((s - cert.eta_z).abs()));
                push("output_level", level_res, tol * (1.0 + cert.eta_z.abs()));

                push("eta_positive", {
                    let mut r: f64 = 0.0;
                    if !(cert.eta_w > 0.0) {
                        r = 1.0;
                    }
                    r = r.max(-cert.eta_z);
                    r.max(0.0)
                }, tol);

                let w_scale = wh.iter().fold(0.0f64, |m, z| m.max(*z));
                let expected = if w_scale <= 1e-12 * (1.0 + model.b.norm()) {
                    0.0
                } else {
                    cert.eta_z / cert.eta_w
                };
                push(
                    "gamma_consistency",
                    (cert.gamma - expected).abs() / expected.abs().max(1.0),
                    tol,
                );
            }
        }
        _ => {
            shape_ok = false;
        }
    }
    if !shape_ok {
        families.push(FamilyResidual {
            family: "shape",
            residual: 1.0,
            pass: false,
        });
    }
    VerifyReport {
        pass: families.iter().all(|f| f.pass),
        families,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LdiModel;
    use crate::polytope::VRep;
    use nalgebra::dmatrix;

    fn scalar_cert() -> (LdiModel, GainCertificate) {
        let model = LdiModel::new(vec![dmatrix![-1.0]], dmatrix![1.0], dmatrix![1.0]).unwrap();
        let v = VRep::new(DMatrix::from_column_slice(1, 2, &[1.0, -1.0])).unwrap();
        let cert = GainCertificate {
            norm: GainNorm::L1,
            eta_w: 1.0,
            eta_z: 1.0,
            gamma: 1.0,
            poly: CertPoly::V(v),
            p: DMatrix::identity(2, 2),
            m_list: vec![-DMatrix::identity(2, 2)],
            k: None,
        };
        (model, cert)
    }

    #[test]
    fn hand_built_scalar_certificate_passes() {
        let (model, cert) = scalar_cert();
        let report = verify_certificate(&model, &cert, 1e-7);
        assert!(report.pass, "families: {:?}", report.families);
    }

    #[test]
    fn inflated_eta_z_fails_state_level() {
        let (model, mut cert) = scalar_cert();
        cert.eta_z = 1.1;
        cert.gamma = 1.0 / 1.1;
        let report = verify_certificate(&model, &cert, 1e-7);
        assert!(!report.pass);
        let fail = report.first_failure().unwrap();
        assert_eq!(fail.family, "state_level");
        assert!((fail.residual - 0.1).abs() < 1e-12);
    }

    #[test]
    fn tampered_gamma_fails_consistency() {
        let (model, mut cert) = scalar_cert();
        cert.gamma = 0.5;
        let report = verify_certificate(&model, &cert, 1e-7);
        assert!(!report.pass);
        assert!(report
            .families
            .iter()
            .any(|f| f.family == "gamma_consistency" && !f.pass));
    }
}
