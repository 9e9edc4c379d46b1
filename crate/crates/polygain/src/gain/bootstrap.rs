//! Decay bootstrapping: find a polyhedral incremental Lyapunov function
//! for the internal dynamics before any gain is estimated.
//!
//! Runs the same alternating scheme as the gain loop with the objective
//! swapped for decay maximization: the fixed-V step maximizes `beta`
//! subject to `offdiag(M_i) >= 0`, `A_i V = V M_i`, `1'M_i <= -beta 1'`,
//! and the modification step is the linearized program with objective
//! `-delta beta` and the output rows dropped. The loop stops at the first
//! accepted iterate with `beta > 0`, which guarantees feasibility of the
//! gain estimation step.

use nalgebra::DMatrix;

use super::driver::{alternating_loop, EstimateOutcome, LoopCfg, LoopResult, Scored};
use super::estimate::state_inner;
use super::modify::{modification_lp, ModKind, ModProblem};
use super::{AlgoOptions, GainError};
use crate::oracle::spectral_abscissa;
use crate::polytope::{interior_point, random_cset, VRep, CSET_TOL, REDUNDANCY_TOL};

#[derive(Clone)]
pub(crate) struct DecayPayload {
    pub beta: f64,
    pub m_list: Vec<DMatrix<f64>>,
}

/// Smallest decay rate counted as strictly contractive, scaled to the
/// dynamics so slow systems are not rejected.
pub(crate) fn beta_floor(a_list: &[DMatrix<f64>]) -> f64 {
    let scale = a_list.iter().map(|a| a.norm()).fold(0.0f64, f64::max);
    1e-9 * (1.0 + scale)
}

/// Fixed-V decay level: maximize `beta` with `1'M_i <= -beta 1'`. The
/// per-column minimum column sums give the level directly.
pub(crate) fn decay_estimate(
    v: &VRep,
    a_list: &[DMatrix<f64>],
) -> Result<EstimateOutcome<DecayPayload>, GainError> {
    let Some(ip) = interior_point(v)? else {
        return Ok(EstimateOutcome::Reject);
    };
    if ip.margin <= CSET_TOL {
        return Ok(EstimateOutcome::Reject);
    }
    // reuse the state-level columns with an empty output map: the decay
    // program is that block without the z rows
    let zero_c = DMatrix::zeros(0, v.dim());
    let Some(inner) = state_inner(v, a_list, &zero_c, ip)? else {
        return Ok(EstimateOutcome::Reject);
    };
    let mut beta = f64::INFINITY;
    for per_vertex in &inner.cols {
        for col in per_vertex {
            beta = beta.min(-col.value);
        }
    }
    let m = v.num_vertices();
    let m_list: Vec<DMatrix<f64>> = inner
        .cols
        .iter()
        .map(|per_vertex| {
            DMatrix::from_fn(m, m, |l, j| {
                let q = &per_vertex[j].q;
                if l == j {
                    q[l]
                } else {
                    q[l].max(0.0)
                }
            })
        })
        .collect();
    Ok(EstimateOutcome::Ready(Scored {
        score: -beta,
        payload: DecayPayload { beta, m_list },
    }))
}

/// One bootstrap run from one random start.
pub(crate) fn bootstrap_once(
    a_list: &[DMatrix<f64>],
    m: usize,
    opts: &AlgoOptions,
    seed: u64,
    symmetric: bool,
) -> Result<LoopResult<DecayPayload>, GainError> {
    bootstrap_run(a_list, m, opts, seed, symmetric, false)
}

pub(crate) fn bootstrap_run(
    a_list: &[DMatrix<f64>],
    m: usize,
    opts: &AlgoOptions,
    seed: u64,
    symmetric: bool,
    stop_early: bool,
) -> Result<LoopResult<DecayPayload>, GainError> {
    let n = a_list[0].nrows();
    let v0 = random_cset(n, m, seed, symmetric)?;
    let floor = beta_floor(a_list);
    let cfg = LoopCfg {
        eps0: opts.eps0,
        eps_min: opts.eps_min,
        max_iters: opts.max_outer_iters,
        redundancy_tol: REDUNDANCY_TOL,
    };
    let mut estimate = |v: &VRep| decay_estimate(v, a_list);
    let mut modify = |v: &VRep, payload: &DecayPayload, eps: f64| {
        let step = modification_lp(&ModProblem {
            v,
            a_eff: a_list,
            m_list: &payload.m_list,
            symmetric,
            eps,
            kind: ModKind::Decay {
                beta: payload.beta,
            },
            synth: None,
        })?;
        Ok(step.delta_v)
    };
    let mut stop = |score: f64| stop_early && -score > floor;
    let out = alternating_loop(v0, &cfg, &mut estimate, &mut modify, &mut stop)?;
    if out.payload.beta > floor {
        Ok(out)
    } else {
        Err(GainError::BootstrapFailed {
            m,
            detail: format!("best decay rate {:.3e} is not positive", out.payload.beta),
        })
    }
}

/// Candidate storage polyhedron for the internal dynamics: a C-set `V`
/// admitting `M_i` with `offdiag(M_i) >= 0`, `A_i V = V M_i` and all
/// column sums below `-beta` for some `beta > 0`. Tries `opts.restarts`
/// seeds in order and returns the first success.
pub fn bootstrap_storage(
    a_list: &[DMatrix<f64>],
    m: usize,
    opts: &AlgoOptions,
) -> Result<VRep, GainError> {
    if a_list.is_empty() {
        return Err(GainError::NoCertificate);
    }
    let n = a_list[0].nrows();
    if m < n + 1 {
        return Err(GainError::BadOptions(format!(
            "complexity m = {m} is below n + 1 = {}",
            n + 1
        )));
    }
    // a non-Hurwitz vertex rules out any contractive polyhedron
    for (i, a) in a_list.iter().enumerate() {
        let abscissa = spectral_abscissa(a);
        if !(abscissa < 0.0) {
            return Err(GainError::BootstrapFailed {
                m,
                detail: format!(
                    "vertex {i} is not Hurwitz (spectral abscissa {abscissa:.3e})"
                ),
            });
        }
    }
    let symmetric = super::effective_symmetric(opts, n);
    let mut last_err = None;
    for r in 0..opts.restarts.max(1) {
        let seed = opts.seed.wrapping_add(r as u64);
        match bootstrap_once(a_list, m, opts, seed, symmetric) {
            Ok(out) => return Ok(out.v),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or(GainError::BootstrapFailed {
        m,
        detail: "no restart produced a contractive polyhedron".into(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gain::AlgoOptions;
    use nalgebra::dmatrix;

    #[test]
    fn identity_decay_succeeds_immediately() {
        let opts = AlgoOptions {
            m: 4,
            restarts: 1,
            ..AlgoOptions::default()
        };
        let a = vec![dmatrix![-1.0, 0.0; 0.0, -1.0]];
        let v = bootstrap_storage(&a, 4, &opts).unwrap();
        // -V = V(-I) certifies decay rate one on any C-set
        let out = decay_estimate(&v, &a).unwrap();
        match out {
            EstimateOutcome::Ready(s) => assert!((s.payload.beta - 1.0).abs() < 1e-7),
            EstimateOutcome::Reject => panic!("decay estimate rejected a C-set"),
        }
    }

    #[test]
    fn oscillatory_dynamics_need_more_sides() {
        // decay/rotation ratio 0.5: an octagon certifies (0.5 > tan(pi/8))
        // but a square cannot (0.5 < tan(pi/4)), so m > 2n is required
        let a = vec![dmatrix![-0.5, 1.0; -1.0, -0.5]];
        let opts = AlgoOptions {
            m: 8,
            restarts: 3,
            ..AlgoOptions::default()
        };
        let v = bootstrap_storage(&a, 8, &opts).unwrap();
        let out = decay_estimate(&v, &a).unwrap();
        match out {
            EstimateOutcome::Ready(s) => {
                assert!(s.payload.beta > 0.0, "beta = {}", s.payload.beta)
            }
            EstimateOutcome::Reject => panic!("decay estimate rejected the bootstrap output"),
        }
        let square = AlgoOptions {
            m: 4,
            restarts: 3,
            ..AlgoOptions::default()
        };
        assert!(matches!(
            bootstrap_storage(&a, 4, &square),
            Err(GainError::BootstrapFailed { .. })
        ));
    }

    #[test]
    fn unstable_dynamics_error_out() {
        let opts = AlgoOptions {
            m: 2,
            restarts: 1,
            ..AlgoOptions::default()
        };
        match bootstrap_storage(&[dmatrix![1.0]], 2, &opts) {
            Err(GainError::BootstrapFailed { detail, .. }) => {
                assert!(detail.contains("Hurwitz"), "{detail}");
            }
            other => panic!("expected bootstrap failure, got {other:?}"),
        }
    }
}
