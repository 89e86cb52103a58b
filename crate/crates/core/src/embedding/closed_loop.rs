use std::sync::Arc;

use super::{check_order, EmbeddingError, EmbeddingStepper, OpenLoopSystem};
use crate::interval::{face_replace, EmbeddingState, IntervalVector, PairOrder};
use crate::nn::{crown_bounds, make_inclusion, InclusionFunction, MlpNetwork};

/// How the frozen controller bounds enter the closed-loop decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ControlCoupling {
    /// Component `i` uses controller bounds over the face of the box at the
    /// control instant where `x_i` sits at its lower (upper) endpoint.
    ///
    /// Tight, but it ties the held control to where a trajectory *was* at the
    /// control instant. A trajectory that overtakes the moving face during the
    /// interval can carry a control outside the face bounds, so long hold
    /// periods with strong feedback may under-approximate (see the
    /// `face_coupling_misses_overtaking_trajectories` test).
    #[default]
    Faces,
    /// One control interval `[u_lo, u_hi]` from the whole box at the control
    /// instant is shared by every component. Sound under zero-order hold for
    /// any hold period, at the cost of much wider boxes.
    FullBox,
}

#[derive(Debug, Clone)]
struct ControlCache {
    interval: usize,
    // per state component i: bounds used by the lower half (eta) and upper half (nu)
    eta_lo: Vec<Vec<f64>>,
    eta_hi: Vec<Vec<f64>>,
    nu_lo: Vec<Vec<f64>>,
    nu_hi: Vec<Vec<f64>>,
}

/// Closed-loop embedding for one partition and one control interval.
///
/// The controller is held constant over `[t_{j-1}, t_j]`; its bounds are
/// evaluated once per interval from the partition's box at `t_{j-1}` and
/// cached.
#[derive(Clone)]
pub struct ClosedLoopEmbedding {
    sys: Arc<dyn OpenLoopSystem>,
    net: Arc<MlpNetwork>,
    inclusion: Option<Arc<InclusionFunction>>,
    w_lo: Vec<f64>,
    w_hi: Vec<f64>,
    dt: f64,
    coupling: ControlCoupling,
    cache: Option<ControlCache>,
    crown_calls: u64,
}

impl ClosedLoopEmbedding {
    pub fn new(
        sys: Arc<dyn OpenLoopSystem>,
        net: Arc<MlpNetwork>,
        disturbance: &IntervalVector,
        dt: f64,
    ) -> Self {
        Self {
            sys,
            net,
            inclusion: None,
            w_lo: disturbance.lo().to_vec(),
            w_hi: disturbance.hi().to_vec(),
            dt,
            coupling: ControlCoupling::default(),
            cache: None,
            crown_calls: 0,
        }
    }

    pub fn with_coupling(mut self, coupling: ControlCoupling) -> Self {
        self.coupling = coupling;
        self
    }

    /// Adopts bounds computed elsewhere (typically by an ancestor partition).
    pub fn with_inclusion(mut self, inclusion: Arc<InclusionFunction>) -> Self {
        self.inclusion = Some(inclusion);
        self.cache = None;
        self
    }

    pub fn inclusion(&self) -> Option<&Arc<InclusionFunction>> {
        self.inclusion.as_ref()
    }

    pub fn system(&self) -> &Arc<dyn OpenLoopSystem> {
        &self.sys
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of CROWN computations this embedding has performed.
    pub fn crown_calls(&self) -> u64 {
        self.crown_calls
    }

    pub fn cached_interval(&self) -> Option<usize> {
        self.cache.as_ref().map(|c| c.interval)
    }

    /// Starts control interval `j` from `box_at_tj`.
    ///
    /// With `reverify`, fresh linear bounds are computed on `box_at_tj`.
    /// Otherwise the held bounds are reused and must cover `box_at_tj`.
    pub fn refresh_control(
        &mut self,
        box_at_tj: &IntervalVector,
        j: usize,
        reverify: bool,
    ) -> Result<(), EmbeddingError> {
        if box_at_tj.dim() != self.sys.state_dim() {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.sys.state_dim(),
                actual: box_at_tj.dim(),
            });
        }
        if reverify {
            let lb = crown_bounds(&self.net, box_at_tj)?;
            self.inclusion = Some(Arc::new(make_inclusion(lb)));
            self.crown_calls += 1;
        }
        let inc = self.inclusion.as_ref().ok_or(EmbeddingError::NoBounds)?;
        let n = box_at_tj.dim();
        let (lo, hi) = (box_at_tj.lo(), box_at_tj.hi());
        let cache = match self.coupling {
            ControlCoupling::FullBox => {
                let (u_lo, u_hi) = inc.eval(lo, hi)?;
                ControlCache {
                    interval: j,
                    eta_lo: vec![u_lo.clone(); n],
                    eta_hi: vec![u_hi.clone(); n],
                    nu_lo: vec![u_lo; n],
                    nu_hi: vec![u_hi; n],
                }
            }
            ControlCoupling::Faces => {
                let mut c = ControlCache {
                    interval: j,
                    eta_lo: vec![],
                    eta_hi: vec![],
                    nu_lo: vec![],
                    nu_hi: vec![],
                };
                for i in 0..n {
                    // face x_i = lo_i
                    let upper = face_replace(hi, lo, i)?;
                    let (a, b) = inc.eval(lo, &upper)?;
                    c.eta_lo.push(a);
                    c.eta_hi.push(b);
                    // face x_i = hi_i
                    let lower = face_replace(lo, hi, i)?;
                    let (a, b) = inc.eval(&lower, hi)?;
                    c.nu_lo.push(a);
                    c.nu_hi.push(b);
                }
                c
            }
        };
        self.cache = Some(cache);
        Ok(())
    }

    /// Closed-loop embedding field on `state` during control interval `j`.
    pub fn closed_decomposition(
        &self,
        state: &EmbeddingState,
        j: usize,
    ) -> Result<Vec<f64>, EmbeddingError> {
        let cache = self.cache.as_ref().ok_or(EmbeddingError::NoCache)?;
        if cache.interval != j {
            return Err(EmbeddingError::StaleCache {
                cached: cache.interval,
                requested: j,
            });
        }
        let order = state.order().ok_or(EmbeddingError::MixedOrder)?;
        if order == PairOrder::Upper {
            // E(a, b) with b <= a is E(b, a) with halves exchanged
            let mut out = self.closed_decomposition(&state.swapped(), j)?;
            let n = state.dim();
            out.rotate_left(n);
            return Ok(out);
        }
        let n = state.dim();
        let (x_lo, x_hi) = (&state.x_lo, &state.x_hi);
        let (w_lo, w_hi) = (&self.w_lo[..], &self.w_hi[..]);
        let mut out = vec![0.0; 2 * n];
        match self.coupling {
            ControlCoupling::FullBox => {
                let lower = self.sys.decompose(
                    x_lo,
                    x_hi,
                    &cache.eta_lo[0],
                    &cache.eta_hi[0],
                    w_lo,
                    w_hi,
                )?;
                let upper =
                    self.sys
                        .decompose(x_hi, x_lo, &cache.nu_hi[0], &cache.nu_lo[0], w_hi, w_lo)?;
                out[..n].copy_from_slice(&lower);
                out[n..].copy_from_slice(&upper);
            }
            ControlCoupling::Faces => {
                for i in 0..n {
                    out[i] = self.sys.decompose(
                        x_lo,
                        x_hi,
                        &cache.eta_lo[i],
                        &cache.eta_hi[i],
                        w_lo,
                        w_hi,
                    )?[i];
                    out[n + i] = self.sys.decompose(
                        x_hi,
                        x_lo,
                        &cache.nu_hi[i],
                        &cache.nu_lo[i],
                        w_hi,
                        w_lo,
                    )?[i];
                }
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::Decomposition(
                "non-finite embedding field".into(),
            ));
        }
        Ok(out)
    }

    /// One explicit Euler step within the cached control interval.
    pub fn euler_step(&self, state: &EmbeddingState) -> Result<EmbeddingState, EmbeddingError> {
        let j = self.cached_interval().ok_or(EmbeddingError::NoCache)?;
        let n = state.dim();
        let e = self.closed_decomposition(state, j)?;
        let next = EmbeddingState {
            x_lo: state
                .x_lo
                .iter()
                .zip(&e[..n])
                .map(|(x, d)| x + self.dt * d)
                .collect(),
            x_hi: state
                .x_hi
                .iter()
                .zip(&e[n..])
                .map(|(x, d)| x + self.dt * d)
                .collect(),
        };
        check_order(state.order(), &next)?;
        Ok(next)
    }
}

impl EmbeddingStepper for ClosedLoopEmbedding {
    fn step(&self, state: &EmbeddingState) -> Result<EmbeddingState, EmbeddingError> {
        self.euler_step(state)
    }
}
