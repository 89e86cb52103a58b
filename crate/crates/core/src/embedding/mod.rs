//! Mixed-monotone embedding systems.
//!
//! A decomposition function `d(x, xh, u, uh, w, wh)` of an open-loop system
//! `x_dot = f(x, u, w)` satisfies
//!
//! 1. `d(x, x, u, u, w, w) = f(x, u, w)`;
//! 2. `d_i` is non-decreasing in `x_j` (`j != i`) and non-increasing in `xh`;
//! 3. `d_i` is non-decreasing in `(u, w)` and non-increasing in `(uh, wh)`.
//!
//! The embedding system runs `d` forward on the lower corner and the swapped
//! `d` on the upper corner of a box; a single trajectory of it bounds every
//! trajectory that starts inside the box.

mod closed_loop;
mod decomposition;
mod lti;

use nalgebra::DMatrix;
use thiserror::Error;

pub use closed_loop::{ClosedLoopEmbedding, ControlCoupling};
pub use decomposition::{
    build_tight_decomposition, GenericSystem, IntervalExtension, LinearSystem, TightDecomposition,
    VectorField,
};
pub use lti::DiscreteLtiEmbedding;

use crate::interval::{EmbeddingState, IntervalError, IntervalVector, PairOrder};
use crate::nn::NetworkError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbeddingError {
    #[error(transparent)]
    Interval(#[from] IntervalError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("arguments have mixed ordering")]
    MixedOrder,
    #[error("embedding state lost its ordering in component {component} (lo {lo} > hi {hi})")]
    Unordered { component: usize, lo: f64, hi: f64 },
    #[error("control cache is for interval {cached}, requested {requested}")]
    StaleCache { cached: usize, requested: usize },
    #[error("control cache not populated")]
    NoCache,
    #[error("no neural-network bounds available for this partition")]
    NoBounds,
    #[error("decomposition: {0}")]
    Decomposition(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
}

/// An open-loop plant together with a decomposition function.
pub trait OpenLoopSystem: Send + Sync {
    fn name(&self) -> &str {
        "custom"
    }
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn disturbance_dim(&self) -> usize;
    fn field(&self, x: &[f64], u: &[f64], w: &[f64]) -> Vec<f64>;
    #[allow(clippy::too_many_arguments)]
    fn decompose(
        &self,
        x: &[f64],
        xh: &[f64],
        u: &[f64],
        uh: &[f64],
        w: &[f64],
        wh: &[f64],
    ) -> Result<Vec<f64>, EmbeddingError>;
}

/// Open-loop embedding field `(d(x_lo, x_hi, u_lo, u_hi, w_lo, w_hi), d(x_hi, x_lo, u_hi, u_lo, w_hi, w_lo))`.
pub fn open_embedding_field(
    sys: &dyn OpenLoopSystem,
    state: &EmbeddingState,
    u: (&[f64], &[f64]),
    w: (&[f64], &[f64]),
) -> Result<Vec<f64>, EmbeddingError> {
    state.order().ok_or(EmbeddingError::MixedOrder)?;
    let mut out = sys.decompose(&state.x_lo, &state.x_hi, u.0, u.1, w.0, w.1)?;
    out.extend(sys.decompose(&state.x_hi, &state.x_lo, u.1, u.0, w.1, w.0)?);
    Ok(out)
}

/// One step of frozen embedding dynamics for a single partition.
pub trait EmbeddingStepper: Send + Sync {
    fn step(&self, state: &EmbeddingState) -> Result<EmbeddingState, EmbeddingError>;
}

/// Fails if an ordered state has become crossed.
pub(crate) fn check_order(
    prev: Option<PairOrder>,
    next: &EmbeddingState,
) -> Result<(), EmbeddingError> {
    match prev {
        Some(PairOrder::Lower) | Some(PairOrder::Degenerate) => {
            for (k, (&l, &h)) in next.x_lo.iter().zip(&next.x_hi).enumerate() {
                if !(l <= h) {
                    return Err(EmbeddingError::Unordered {
                        component: k,
                        lo: l,
                        hi: h,
                    });
                }
            }
            Ok(())
        }
        Some(PairOrder::Upper) => {
            for (k, (&l, &h)) in next.x_lo.iter().zip(&next.x_hi).enumerate() {
                if !(h <= l) {
                    return Err(EmbeddingError::Unordered {
                        component: k,
                        lo: h,
                        hi: l,
                    });
                }
            }
            Ok(())
        }
        None => Err(EmbeddingError::MixedOrder),
    }
}

/// Iterates `stepper` from `start` and returns the boxes after each step.
pub fn integrate(
    stepper: &dyn EmbeddingStepper,
    start: &IntervalVector,
    steps: usize,
) -> Result<Vec<IntervalVector>, EmbeddingError> {
    let mut state = EmbeddingState::from_box(start);
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        state = stepper.step(&state)?;
        out.push(state.to_box()?);
    }
    Ok(out)
}

/// Finite-difference Jacobian of `g` at `z` (central differences, relative step).
pub fn finite_difference_jacobian<G>(
    g: G,
    z: &[f64],
    rel_step: f64,
) -> Result<DMatrix<f64>, EmbeddingError>
where
    G: Fn(&[f64]) -> Result<Vec<f64>, EmbeddingError>,
{
    let base = g(z)?;
    let mut jac = DMatrix::zeros(base.len(), z.len());
    let mut zp = z.to_vec();
    for k in 0..z.len() {
        let h = rel_step * z[k].abs().max(1.0);
        zp[k] = z[k] + h;
        let fp = g(&zp)?;
        zp[k] = z[k] - h;
        let fm = g(&zp)?;
        zp[k] = z[k];
        for r in 0..base.len() {
            jac[(r, k)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_open_embedding() {
        let sys = LinearSystem::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 1.0),
        );
        let st = EmbeddingState::new(vec![-1.0], vec![1.0]).unwrap();
        let e = open_embedding_field(&sys, &st, (&[-0.1], &[0.1]), (&[], &[])).unwrap();
        assert!((e[0] - 0.9).abs() < 1e-15 && (e[1] + 0.9).abs() < 1e-15);
    }

    #[test]
    fn degenerate_open_embedding_matches_field() {
        let sys = LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -0.5]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        );
        let x = [0.3, -1.2];
        let st = EmbeddingState::new(x.to_vec(), x.to_vec()).unwrap();
        let e = open_embedding_field(&sys, &st, (&[0.7], &[0.7]), (&[], &[])).unwrap();
        let f = sys.field(&x, &[0.7], &[]);
        assert_eq!(&e[..2], &f[..]);
        assert_eq!(&e[2..], &f[..]);
    }

    #[test]
    fn finite_differences_of_linear_map() {
        let j = finite_difference_jacobian(
            |z| Ok(vec![2.0 * z[0] - z[1], 3.0 * z[1]]),
            &[1.0, -4.0],
            1e-6,
        )
        .unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, 0.0, 3.0]);
        assert!((j - want).abs().max() < 1e-8);
    }
}
