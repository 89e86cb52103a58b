use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{check_order, EmbeddingError, EmbeddingStepper};
use crate::interval::{EmbeddingState, PairOrder};
use crate::nn::InclusionFunction;

/// Discrete-time embedding for `x+ = A x + B N(x)` using the linear bounds of
/// `N` directly:
///
/// ```text
/// M_lo = A + B^+ C_lo + B^- C_hi,   M_hi = A + B^+ C_hi + B^- C_lo
/// x_lo+ = M_lo^+ x_lo + M_lo^- x_hi + B^+ d_lo + B^- d_hi
/// x_hi+ = M_hi^- x_lo + M_hi^+ x_hi + B^- d_lo + B^+ d_hi
/// ```
#[derive(Debug, Clone)]
pub struct DiscreteLtiEmbedding {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    b_pos: DMatrix<f64>,
    b_neg: DMatrix<f64>,
    bounds: Option<Arc<InclusionFunction>>,
    m_lo_pos: DMatrix<f64>,
    m_lo_neg: DMatrix<f64>,
    m_hi_pos: DMatrix<f64>,
    m_hi_neg: DMatrix<f64>,
    off_lo: DVector<f64>,
    off_hi: DVector<f64>,
}

impl DiscreteLtiEmbedding {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Self {
        let n = a.nrows();
        Self {
            b_pos: b.map(|v| v.max(0.0)),
            b_neg: b.map(|v| v.min(0.0)),
            a,
            b,
            bounds: None,
            m_lo_pos: DMatrix::zeros(n, n),
            m_lo_neg: DMatrix::zeros(n, n),
            m_hi_pos: DMatrix::zeros(n, n),
            m_hi_neg: DMatrix::zeros(n, n),
            off_lo: DVector::zeros(n),
            off_hi: DVector::zeros(n),
        }
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Installs a new linear-bound tuple and recomputes `M_lo`, `M_hi`.
    pub fn set_bounds(&mut self, bounds: Arc<InclusionFunction>) -> Result<(), EmbeddingError> {
        let lb = bounds.bounds();
        if lb.input_dim() != self.a.nrows() || lb.output_dim() != self.b.ncols() {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.b.ncols(),
                actual: lb.output_dim(),
            });
        }
        let m_lo = &self.a + &self.b_pos * &lb.c_lo + &self.b_neg * &lb.c_hi;
        let m_hi = &self.a + &self.b_pos * &lb.c_hi + &self.b_neg * &lb.c_lo;
        self.m_lo_pos = m_lo.map(|v| v.max(0.0));
        self.m_lo_neg = m_lo.map(|v| v.min(0.0));
        self.m_hi_pos = m_hi.map(|v| v.max(0.0));
        self.m_hi_neg = m_hi.map(|v| v.min(0.0));
        self.off_lo = &self.b_pos * &lb.d_lo + &self.b_neg * &lb.d_hi;
        self.off_hi = &self.b_neg * &lb.d_lo + &self.b_pos * &lb.d_hi;
        self.bounds = Some(bounds);
        Ok(())
    }

    pub fn bounds(&self) -> Option<&Arc<InclusionFunction>> {
        self.bounds.as_ref()
    }

    /// `M_lo` and `M_hi` for the installed tuple.
    pub fn closed_loop_matrices(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        (
            &self.m_lo_pos + &self.m_lo_neg,
            &self.m_hi_pos + &self.m_hi_neg,
        )
    }

    /// One step of the embedding map. The state must be lower-ordered and
    /// lie inside the domain of the installed bounds.
    pub fn lti_step(&self, state: &EmbeddingState) -> Result<EmbeddingState, EmbeddingError> {
        let order = state.order().ok_or(EmbeddingError::MixedOrder)?;
        if order == PairOrder::Upper {
            return Err(EmbeddingError::MixedOrder);
        }
        let inc = self.bounds.as_ref().ok_or(EmbeddingError::NoBounds)?;
        // validity of the linear bounds requires the box inside their domain
        inc.eval(&state.x_lo, &state.x_hi)?;
        let xl = DVector::from_column_slice(&state.x_lo);
        let xh = DVector::from_column_slice(&state.x_hi);
        let lo = &self.m_lo_pos * &xl + &self.m_lo_neg * &xh + &self.off_lo;
        let hi = &self.m_hi_neg * &xl + &self.m_hi_pos * &xh + &self.off_hi;
        let next = EmbeddingState {
            x_lo: lo.iter().copied().collect(),
            x_hi: hi.iter().copied().collect(),
        };
        check_order(Some(order), &next)?;
        Ok(next)
    }
}

impl EmbeddingStepper for DiscreteLtiEmbedding {
    fn step(&self, state: &EmbeddingState) -> Result<EmbeddingState, EmbeddingError> {
        self.lti_step(state)
    }
}
