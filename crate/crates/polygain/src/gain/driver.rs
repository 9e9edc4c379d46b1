//! The alternating estimate/modify loop shared by gain analysis, decay
//! bootstrapping and synthesis.
//!
//! One iteration estimates the score at the current polyhedron, accepts or
//! reverts, adapts the step size, and applies a modification step. The step
//! size follows the `eps0 / N` schedule on accepted iterations and halves
//! on rejections (a worse score or a redundant vertex); the loop stops once
//! the step size falls below `eps_min` or the iteration cap is hit.

use nalgebra::DMatrix;

use super::GainError;
use crate::polytope::{redundant_vertices, VRep};

pub(crate) struct LoopCfg {
    pub eps0: f64,
    pub eps_min: f64,
    pub max_iters: usize,
    pub redundancy_tol: f64,
}

pub(crate) struct Scored<T> {
    /// Minimized across iterations (gamma, or -beta for the decay loop).
    pub score: f64,
    pub payload: T,
}

/// Estimation result: `Reject` marks an iterate with no feasible
/// certificate, which the loop treats like a worse score.
pub(crate) enum EstimateOutcome<T> {
    Ready(Scored<T>),
    Reject,
}

pub(crate) struct LoopResult<T> {
    pub v: VRep,
    pub payload: T,
    pub score: f64,
    /// Scores of accepted iterations, non-increasing by construction.
    pub trace: Vec<f64>,
    /// True when the iteration cap stopped the loop before the step-size
    /// schedule did.
    pub hit_cap: bool,
}

pub(crate) fn alternating_loop<T>(
    v0: VRep,
    cfg: &LoopCfg,
    estimate: &mut dyn FnMut(&VRep) -> Result<EstimateOutcome<T>, GainError>,
    modify: &mut dyn FnMut(&VRep, &T, f64) -> Result<DMatrix<f64>, GainError>,
    stop_when: &mut dyn FnMut(f64) -> bool,
) -> Result<LoopResult<T>, GainError> {
    let mut v = v0;
    let mut eps = cfg.eps0;
    let mut sched = 1u64;
    let mut best: Option<(VRep, Scored<T>)> = None;
    let mut last_step: Option<DMatrix<f64>> = None;
    let mut trace = Vec::new();
    let mut hit_cap = true;

    for _ in 0..cfg.max_iters {
        let outcome = estimate(&v)?;
        // the redundancy check is skipped before anything was accepted so a
        // degenerate start cannot wedge the loop with nothing to return
        let redundant = if best.is_some() {
            redundant_vertices(&v, cfg.redundancy_tol)
                .map(|r| !r.is_empty())
                .unwrap_or(true)
        } else {
            false
        };
        let trace_on = std::env::var_os("POLYGAIN_TRACE").is_some();
        let accepted = match outcome {
            EstimateOutcome::Ready(s) => {
                let worse = best
                    .as_ref()
                    .map_or(false, |(_, b)| s.score > b.score);
                if worse || redundant {
                    None
                } else {
                    Some(s)
                }
            }
            EstimateOutcome::Reject => None,
        };
        if trace_on {
            let s = match &accepted { Some(s) => format!("{:.6}", s.score), None => "reject".into() };
            eprintln!("iter: score={s} redundant={redundant} eps={eps:.3e} n={sched}");
        }
        match accepted {
            Some(s) => {
                trace.push(s.score);
                best = Some((v.clone(), s));
                eps = cfg.eps0 / sched as f64;
                sched += 1;
                last_step = None;
            }
            None => {
                if let Some(step) = last_step.take() {
                    v = VRep::from_matrix_unchecked(v.matrix() - step);
                }
                eps *= 0.5;
            }
        }
        if eps < cfg.eps_min {
            hit_cap = false;
            break;
        }
        let Some((_, scored)) = best.as_ref() else {
            continue;
        };
        if stop_when(scored.score) {
            hit_cap = false;
            break;
        }
        match modify(&v, &scored.payload, eps) {
            Ok(delta) => {
                v = VRep::from_matrix_unchecked(v.matrix() + &delta);
                last_step = Some(delta);
            }
            Err(_) => {
                // a failed linearization is treated like a rejected step
                last_step = None;
                eps *= 0.5;
                if eps < cfg.eps_min {
                    hit_cap = false;
                    break;
                }
            }
        }
    }

    match best {
        Some((v, scored)) => Ok(LoopResult {
            v,
            payload: scored.payload,
            score: scored.score,
            trace,
            hit_cap,
        }),
        None => Err(GainError::NoCertificate),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn unit_square() -> VRep {
        VRep::new(DMatrix::from_column_slice(
            2,
            4,
            &[1.0, 1.0, -1.0, 1.0, -1.0, -1.0, 1.0, -1.0],
        ))
        .unwrap()
    }

    #[test]
    fn accepted_scores_are_non_increasing() {
        // synthetic estimate: score is the max column norm; modification
        // shrinks V, which the estimate rewards
        let cfg = LoopCfg {
            eps0: 0.2,
            eps_min: 1e-3,
            max_iters: 200,
            redundancy_tol: 1e-7,
        };
        let mut estimate = |v: &VRep| {
            let score = (0..v.num_vertices())
                .map(|j| v.vertex(j).norm())
                .fold(0.0f64, f64::max);
            Ok(EstimateOutcome::Ready(Scored { score, payload: () }))
        };
        let mut modify = |v: &VRep, _: &(), eps: f64| {
            Ok(v.matrix().map(|x| -x.signum() * eps.min(0.05)))
        };
        let mut never = |_: f64| false;
        let out = alternating_loop(unit_square(), &cfg, &mut estimate, &mut modify, &mut never)
            .unwrap();
        assert!(!out.trace.is_empty());
        for w in out.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert!(out.score <= 2.0f64.sqrt());
    }

    #[test]
    fn early_stop_hands_back_first_accepted() {
        let cfg = LoopCfg {
            eps0: 0.2,
            eps_min: 1e-4,
            max_iters: 50,
            redundancy_tol: 1e-7,
        };
        let mut calls = 0usize;
        let mut estimate = |_: &VRep| {
            calls += 1;
            Ok(EstimateOutcome::Ready(Scored {
                score: -1.0,
                payload: (),
            }))
        };
        let mut modify =
            |_: &VRep, _: &(), _: f64| -> Result<DMatrix<f64>, GainError> { panic!("not reached") };
        let mut stop = |score: f64| score < 0.0;
        let out =
            alternating_loop(unit_square(), &cfg, &mut estimate, &mut modify, &mut stop).unwrap();
        assert_eq!(out.score, -1.0);
        assert!(!out.hit_cap);
    }

    #[test]
    fn all_rejections_error_out_quickly() {
        let cfg = LoopCfg {
            eps0: 0.2,
            eps_min: 1e-4,
            max_iters: 500,
            redundancy_tol: 1e-7,
        };
        let mut iterations = 0usize;
        let mut estimate = |_: &VRep| {
            iterations += 1;
            Ok(EstimateOutcome::<()>::Reject)
        };
        let mut modify =
            |_: &VRep, _: &(), _: f64| -> Result<DMatrix<f64>, GainError> { panic!("not reached") };
        let mut never = |_: f64| false;
        let out = alternating_loop(unit_square(), &cfg, &mut estimate, &mut modify, &mut never);
        assert!(matches!(out, Err(GainError::NoCertificate)));
        assert!(iterations < 20, "halving should end the loop, took {iterations}");
    }
}
