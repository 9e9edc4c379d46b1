//! Certified incremental gain bounds for polytopic inclusions.
//!
//! `analyze_l1` alternates gain estimation and polyhedral modification from
//! a bootstrapped storage candidate, keeping the best verified certificate
//! over independent restarts. `analyze_linf` runs the same machinery on the
//! adjoint system and transposes the result. Every returned certificate is
//! re-verified by [`verify_certificate`] before it leaves this module.

mod bootstrap;
mod driver;
pub(crate) mod estimate;
pub(crate) mod modify;
mod verify;

pub use bootstrap::bootstrap_storage;
pub use estimate::{estimate_input_level, estimate_state_level};
pub use verify::{verify_certificate, FamilyResidual, VerifyReport};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::lp::LpError;
use crate::model::{GainNorm, LdiModel, ModelError};
use crate::polytope::{HRep, PolytopeError, VRep, REDUNDANCY_TOL};
pub(crate) use bootstrap::bootstrap_run;
pub(crate) use driver::{alternating_loop, EstimateOutcome, LoopCfg, Scored};
use estimate::{input_level_with_interior, interior_weights, state_inner, z_hat_gradients, StateLevelOutcome};
use modify::{modification_lp, ModKind, ModProblem};

/// Supplied-rate bound certificate for one norm.
///
/// For L1 the polyhedron is the V-rep storage level set; for Linf it is
/// the H-rep invariant set. `gamma = eta_w / eta_z` for L1 and
/// `eta_z / eta_w` for Linf; `k` is present on synthesis outputs.
#[derive(Debug, Clone)]
pub struct GainCertificate {
    pub norm: GainNorm,
    pub eta_w: f64,
    pub eta_z: f64,
    pub gamma: f64,
    pub poly: CertPoly,
    pub p: DMatrix<f64>,
    pub m_list: Vec<DMatrix<f64>>,
    pub k: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub enum CertPoly {
    V(VRep),
    H(HRep),
}

impl CertPoly {
    pub fn as_vrep(&self) -> Option<&VRep> {
        match self {
            CertPoly::V(v) => Some(v),
            CertPoly::H(_) => None,
        }
    }

    pub fn as_hrep(&self) -> Option<&HRep> {
        match self {
            CertPoly::H(h) => Some(h),
            CertPoly::V(_) => None,
        }
    }
}

/// Knobs of the alternating algorithm.
#[derive(Debug, Clone)]
pub struct AlgoOptions {
    /// Polyhedral complexity: vertex count (L1) or half-space count (Linf).
    pub m: usize,
    /// Initial step size of the modification LP.
    pub eps0: f64,
    /// Stop once the step size falls below this.
    pub eps_min: f64,
    /// Independent restarts; the best verified certificate wins.
    pub restarts: usize,
    pub seed: u64,
    /// Cap on outer iterations per restart.
    pub max_outer_iters: usize,
    /// Constrain the polyhedron to [W, -W] when the shape allows it.
    pub symmetric: bool,
    /// Verification tolerance.
    pub tol: f64,
    /// Numerical floor standing in for strict positivity of eta_z.
    pub eta_z_floor: f64,
    /// Worker threads for restarts; results are merge-order deterministic
    /// regardless.
    pub jobs: usize,
}

impl Default for AlgoOptions {
    fn default() -> Self {
        AlgoOptions {
            m: 4,
            eps0: 0.2,
            eps_min: 1e-4,
            restarts: 10,
            seed: 0,
            max_outer_iters: 500,
            symmetric: true,
            tol: 1e-7,
            eta_z_floor: 1e-9,
            jobs: 1,
        }
    }
}

impl AlgoOptions {
    fn validate(&self, n: usize) -> Result<(), GainError> {
        if self.m < n + 1 {
            return Err(GainError::BadOptions(format!(
                "complexity m = {} is below n + 1 = {}",
                self.m,
                n + 1
            )));
        }
        if !(self.eps0 > self.eps_min && self.eps_min > 0.0) {
            return Err(GainError::BadOptions(
                "need eps0 > eps_min > 0".into(),
            ));
        }
        if self.restarts == 0 {
            return Err(GainError::BadOptions("need at least one restart".into()));
        }
        if !(self.tol > 0.0 && self.eta_z_floor > 0.0) {
            return Err(GainError::BadOptions("tolerances must be positive".into()));
        }
        Ok(())
    }
}

pub(crate) fn effective_symmetric(opts: &AlgoOptions, n: usize) -> bool {
    opts.symmetric && opts.m % 2 == 0 && opts.m >= 2 * n
}

#[derive(Debug, Error)]
pub enum GainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("polyhedron is not a C-set")]
    NotCset,
    #[error("no decaying certificate at this polyhedron")]
    StateInfeasible,
    #[error("state level is unbounded (output map vanishes on the polyhedron)")]
    UnboundedStateLevel,
    #[error("bootstrap failed: complexity m = {m} too low or LDI not polyhedrally contractive at this m ({detail})")]
    BootstrapFailed { m: usize, detail: String },
    #[error("modification step failed: {0}")]
    ModificationFailed(String),
    #[error("no certificate produced")]
    NoCertificate,
    #[error("certificate failed verification: family {family} residual {residual:.3e}")]
    VerificationFailed { family: String, residual: f64 },
    #[error("invalid options: {0}")]
    BadOptions(String),
}

/// Everything the modification step needs about an accepted iterate.
#[derive(Clone)]
pub(crate) struct CertParts {
    pub eta_w: f64,
    pub p_mat: DMatrix<f64>,
    pub eta_z: f64,
    pub m_list: Vec<DMatrix<f64>>,
    pub z_hat: DVector<f64>,
    pub gamma: f64,
}

/// Gain estimation for a fixed polyhedron; `Reject` signals an iterate
/// with no decaying certificate.
pub(crate) fn gain_estimate(
    v: &VRep,
    model: &LdiModel,
    opts: &AlgoOptions,
) -> Result<EstimateOutcome<CertParts>, GainError> {
    let ip = match interior_weights(v) {
        Ok(ip) => ip,
        Err(GainError::NotCset) => return Ok(EstimateOutcome::Reject),
        Err(e) => return Err(e),
    };
    let (eta_w, p_mat) = input_level_with_interior(v, &model.b, &ip)?;
    let Some(inner) = state_inner(v, &model.a_list, &model.c, ip)? else {
        return Ok(EstimateOutcome::Reject);
    };
    let parts = match inner.eta_level(opts.eta_z_floor) {
        StateLevelOutcome::Decaying(eta_z) => {
            let m_list = inner.lift(eta_z);
            let gamma = eta_w / eta_z;
            CertParts {
                eta_w,
                p_mat,
                eta_z,
                m_list,
                z_hat: inner.z_hat,
                gamma,
            }
        }
        StateLevelOutcome::ZeroOutput => {
            // output map vanishes: pin column sums to zero at level one
            let m_list = inner.lift(1.0);
            CertParts {
                eta_w,
                p_mat,
                eta_z: 1.0,
                m_list,
                z_hat: inner.z_hat,
                gamma: 0.0,
            }
        }
        StateLevelOutcome::Infeasible => return Ok(EstimateOutcome::Reject),
    };
    Ok(EstimateOutcome::Ready(Scored {
        score: parts.gamma,
        payload: parts,
    }))
}

fn build_l1_certificate(v: &VRep, parts: &CertParts) -> GainCertificate {
    GainCertificate {
        norm: GainNorm::L1,
        eta_w: parts.eta_w,
        eta_z: parts.eta_z,
        gamma: parts.gamma,
        poly: CertPoly::V(v.clone()),
        p: parts.p_mat.clone(),
        m_list: parts.m_list.clone(),
        k: None,
    }
}

/// Combined estimation at a fixed `V`: input and state levels plus the
/// verified certificate. `gamma = eta_w / eta_z` (zero when the output map
/// vanishes on the polyhedron).
pub fn estimate_gain(
    v: &VRep,
    model: &LdiModel,
    opts: &AlgoOptions,
) -> Result<GainCertificate, GainError> {
    model.validate()?;
    match gain_estimate(v, model, opts)? {
        EstimateOutcome::Ready(s) => {
            let cert = build_l1_certificate(v, &s.payload);
            let report = verify_certificate(model, &cert, opts.tol);
            if let Some(fail) = report.first_failure() {
                return Err(GainError::VerificationFailed {
                    family: fail.family.to_string(),
                    residual: fail.residual,
                });
            }
            Ok(cert)
        }
        EstimateOutcome::Reject => Err(GainError::StateInfeasible),
    }
}

/// One linearized reshaping step at a verified L1 certificate; returns the
/// vertex perturbation `delta V` with `max |delta V| <= eps`.
pub fn modification_step(
    v: &VRep,
    model: &LdiModel,
    cert: &GainCertificate,
    eps: f64,
    opts: &AlgoOptions,
) -> Result<DMatrix<f64>, GainError> {
    let parts = CertParts {
        eta_w: cert.eta_w,
        p_mat: cert.p.clone(),
        eta_z: cert.eta_z,
        m_list: cert.m_list.clone(),
        z_hat: estimate::z_hat(&model.c, v),
        gamma: cert.gamma,
    };
    gain_modify(v, model, &parts, eps, effective_symmetric(opts, model.n()), opts.eta_z_floor)
}

fn gain_modify(
    v: &VRep,
    model: &LdiModel,
    parts: &CertParts,
    eps: f64,
    symmetric: bool,
    eta_z_floor: f64,
) -> Result<DMatrix<f64>, GainError> {
    let z_grad = z_hat_gradients(&model.c, v);
    let step = modification_lp(&ModProblem {
        v,
        a_eff: &model.a_list,
        m_list: &parts.m_list,
        symmetric,
        eps,
        kind: ModKind::Gain {
            eta_w: parts.eta_w,
            eta_z: parts.eta_z,
            p_mat: &parts.p_mat,
            z_hat: &parts.z_hat,
            z_grad: &z_grad,
            b: &model.b,
            eta_z_floor,
        },
        synth: None,
    })?;
    Ok(step.delta_v)
}

/// Outcome of one restart, exposed for diagnostics and property tests.
#[derive(Debug, Clone)]
pub struct RunDiagnostics {
    pub cert: GainCertificate,
    /// Accepted gamma values in order; non-increasing within the run.
    pub trace: Vec<f64>,
    /// The iteration cap stopped this run before the step-size schedule.
    pub hit_iteration_cap: bool,
}

/// One full L1 run (bootstrap + alternating loop) from one seed.
pub fn analyze_l1_single(
    model: &LdiModel,
    opts: &AlgoOptions,
    seed: u64,
) -> Result<RunDiagnostics, GainError> {
    model.validate()?;
    opts.validate(model.n())?;
    let symmetric = effective_symmetric(opts, model.n());
    let boot = bootstrap::bootstrap_once(&model.a_list, opts.m, opts, seed, symmetric)?;
    finish_l1_run(model, opts, symmetric, boot.v)
}

fn finish_l1_run(
    model: &LdiModel,
    opts: &AlgoOptions,
    symmetric: bool,
    v0: VRep,
) -> Result<RunDiagnostics, GainError> {
    let cfg = LoopCfg {
        eps0: opts.eps0,
        eps_min: opts.eps_min,
        max_iters: opts.max_outer_iters,
        redundancy_tol: REDUNDANCY_TOL,
    };
    let mut estimate = |v: &VRep| gain_estimate(v, model, opts);
    let mut modify = |v: &VRep, parts: &CertParts, eps: f64| {
        gain_modify(v, model, parts, eps, symmetric, opts.eta_z_floor)
    };
    let mut stop = |score: f64| score <= 0.0;
    let out = alternating_loop(v0, &cfg, &mut estimate, &mut modify, &mut stop)?;
    let cert = build_l1_certificate(&out.v, &out.payload);
    let report = verify_certificate(model, &cert, opts.tol);
    if let Some(fail) = report.first_failure() {
        return Err(GainError::VerificationFailed {
            family: fail.family.to_string(),
            residual: fail.residual,
        });
    }
    Ok(RunDiagnostics {
        cert,
        trace: out.trace,
        hit_iteration_cap: out.hit_cap,
    })
}

/// Run `restarts` independent seeded jobs and keep the indexed results.
pub(crate) fn run_restarts<T: Send>(
    restarts: usize,
    jobs: usize,
    f: impl Fn(usize) -> T + Sync,
) -> Vec<T> {
    if jobs <= 1 || restarts <= 1 {
        return (0..restarts).map(f).collect();
    }
    use std::sync::atomic::{AtomicUsize, Ordering};
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<T>> = (0..restarts).map(|_| None).collect();
    std::thread::scope(|scope| {
        let workers: Vec<_> = (0..jobs.min(restarts))
            .map(|_| {
                scope.spawn(|| {
                    let mut local = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::SeqCst);
                        if i >= restarts {
                            break;
                        }
                        local.push((i, f(i)));
                    }
                    local
                })
            })
            .collect();
        for w in workers {
            for (i, value) in w.join().expect("restart worker panicked") {
                slots[i] = Some(value);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("missing restart")).collect()
}

/// Pick the minimum-gamma run; ties break toward the lowest seed index.
pub(crate) fn select_best(
    runs: Vec<Result<RunDiagnostics, GainError>>,
) -> Result<RunDiagnostics, GainError> {
    let mut best: Option<RunDiagnostics> = None;
    let mut first_err: Option<GainError> = None;
    for run in runs {
        match run {
            Ok(diag) => {
                let better = best
                    .as_ref()
                    .map_or(true, |b| diag.cert.gamma < b.cert.gamma);
                if better {
                    best = Some(diag);
                }
            }
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    match best {
        Some(b) => Ok(b),
        None => Err(first_err.unwrap_or(GainError::NoCertificate)),
    }
}

/// Upper bound on the incremental L1 gain: the best verified certificate
/// over independent restarts of the alternating algorithm.
pub fn analyze_l1(model: &LdiModel, opts: &AlgoOptions) -> Result<GainCertificate, GainError> {
    model.validate()?;
    opts.validate(model.n())?;
    let runs = run_restarts(opts.restarts, opts.jobs, |r| {
        analyze_l1_single(model, opts, opts.seed.wrapping_add(r as u64))
    });
    let best = select_best(runs)?;
    if best.hit_iteration_cap {
        eprintln!(
            "polygain: iteration cap {} reached; returning best verified certificate",
            opts.max_outer_iters
        );
    }
    Ok(best.cert)
}

/// Transpose an L1 certificate of the adjoint system into an Linf
/// certificate of the original (levels swap roles, the polyhedron and the
/// multipliers transpose).
pub(crate) fn linf_from_adjoint_l1(cert: GainCertificate) -> GainCertificate {
    let v = match &cert.poly {
        CertPoly::V(v) => v,
        CertPoly::H(_) => unreachable!("adjoint L1 certificate carries a V-rep"),
    };
    GainCertificate {
        norm: GainNorm::Linf,
        eta_w: cert.eta_z,
        eta_z: cert.eta_w,
        gamma: cert.gamma,
        poly: CertPoly::H(v.to_hrep_transpose()),
        p: cert.p.transpose(),
        m_list: cert.m_list.iter().map(|m| m.transpose()).collect(),
        k: None,
    }
}

/// Upper bound on the incremental Linf gain: runs the L1 algorithm on the
/// adjoint system and transposes the certificate.
pub fn analyze_linf(model: &LdiModel, opts: &AlgoOptions) -> Result<GainCertificate, GainError> {
    let adjoint = model.adjoint();
    let l1 = analyze_l1(&adjoint, opts)?;
    Ok(linf_from_adjoint_l1(l1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn scalar_model() -> LdiModel {
        LdiModel::new(vec![dmatrix![-1.0]], dmatrix![1.0], dmatrix![1.0]).unwrap()
    }

    fn quick_opts(m: usize) -> AlgoOptions {
        AlgoOptions {
            m,
            restarts: 2,
            max_outer_iters: 60,
            ..AlgoOptions::default()
        }
    }

    #[test]
    fn scalar_l1_gain_is_one() {
        let cert = analyze_l1(&scalar_model(), &quick_opts(2)).unwrap();
        assert!((cert.gamma - 1.0).abs() < 1e-6, "gamma = {}", cert.gamma);
        assert_eq!(cert.norm, GainNorm::L1);
    }

    #[test]
    fn scalar_linf_matches_l1() {
        let cert = analyze_linf(&scalar_model(), &quick_opts(2)).unwrap();
        assert!((cert.gamma - 1.0).abs() < 1e-6);
        assert_eq!(cert.norm, GainNorm::Linf);
        assert!(cert.poly.as_hrep().is_some());
    }

    #[test]
    fn faster_decay_halves_the_gain() {
        let model = LdiModel::new(vec![dmatrix![-2.0]], dmatrix![1.0], dmatrix![1.0]).unwrap();
        let cert = analyze_l1(&model, &quick_opts(2)).unwrap();
        assert!((cert.gamma - 0.5).abs() < 1e-6, "gamma = {}", cert.gamma);
    }

    #[test]
    fn zero_output_map_gives_zero_gain() {
        let model = LdiModel::new(vec![dmatrix![-1.0]], dmatrix![1.0], dmatrix![0.0]).unwrap();
        let cert = analyze_l1(&model, &quick_opts(2)).unwrap();
        assert_eq!(cert.gamma, 0.0);
        let report = verify_certificate(&model, &cert, 1e-7);
        assert!(report.pass, "{:?}", report.families);
    }

    #[test]
    fn estimate_gain_on_fixed_polyhedron() {
        let v = VRep::new(DMatrix::from_column_slice(1, 2, &[1.0, -1.0])).unwrap();
        let cert = estimate_gain(&v, &scalar_model(), &quick_opts(2)).unwrap();
        assert!((cert.gamma - 1.0).abs() < 1e-9);
        assert!((cert.eta_w - 1.0).abs() < 1e-9);
        assert!((cert.eta_z - 1.0).abs() < 1e-9);
    }

    #[test]
    fn scale_invariance_of_estimate() {
        let model = LdiModel::new(
            vec![dmatrix![-1.0, 0.5; 0.0, -2.0]],
            dmatrix![1.0; 1.0],
            dmatrix![1.0, 0.0],
        )
        .unwrap();
        let opts = quick_opts(4);
        let v = crate::polytope::random_cset(2, 4, 9, true).unwrap();
        let v2 = VRep::new(v.matrix() * 2.0).unwrap();
        let c1 = estimate_gain(&v, &model, &opts).unwrap();
        let c2 = estimate_gain(&v2, &model, &opts).unwrap();
        assert!(
            (c1.gamma - c2.gamma).abs() <= 1e-9 * c1.gamma.max(1.0),
            "{} vs {}",
            c1.gamma,
            c2.gamma
        );
    }

    #[test]
    fn monotone_trace_and_verified_result() {
        let model = LdiModel::new(
            vec![dmatrix![-1.0, 4.0; 0.0, -1.0]],
            dmatrix![1.0; 0.0],
            dmatrix![0.0, 1.0],
        )
        .unwrap();
        let diag = analyze_l1_single(&model, &quick_opts(6), 1).unwrap();
        assert!(!diag.trace.is_empty());
        for w in diag.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        let report = verify_certificate(&model, &diag.cert, 1e-7);
        assert!(report.pass);
    }

    #[test]
    fn adjoint_equivalence_is_exact() {
        let model = LdiModel::new(
            vec![dmatrix![-1.0, 0.3; -0.1, -0.7], dmatrix![-0.8, 0.2; 0.0, -1.1]],
            dmatrix![1.0; 0.5],
            dmatrix![1.0, 1.0],
        )
        .unwrap();
        let opts = AlgoOptions {
            m: 4,
            restarts: 1,
            max_outer_iters: 40,
            ..AlgoOptions::default()
        };
        let linf = analyze_linf(&model, &opts).unwrap();
        let l1_adj = analyze_l1(&model.adjoint(), &opts).unwrap();
        assert_eq!(linf.eta_w, l1_adj.eta_z);
        assert_eq!(linf.eta_z, l1_adj.eta_w);
        assert_eq!(linf.gamma, l1_adj.gamma);
        let h = linf.poly.as_hrep().unwrap();
        let v = l1_adj.poly.as_vrep().unwrap();
        assert_eq!(h.matrix(), &v.matrix().transpose());
        for (mh, mv) in linf.m_list.iter().zip(&l1_adj.m_list) {
            assert_eq!(mh, &mv.transpose());
        }
    }
}
