//! Backward linear relaxation of a feed-forward network over a box.
//!
//! Produces affine envelopes `C_lo x + d_lo <= N(x) <= C_hi x + d_hi` valid on
//! the input box. Pre-activation ranges come from a forward interval pass.

use nalgebra::{DMatrix, DVector};

use super::ibp::preactivation_bounds;
use super::network::{Activation, MlpNetwork};
use super::{LinearBounds, NetworkError};
use crate::interval::IntervalVector;

/// Affine lower and upper envelopes of one scalar activation on `[l, u]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronRelaxation {
    pub lower_slope: f64,
    pub lower_intercept: f64,
    pub upper_slope: f64,
    pub upper_intercept: f64,
}

impl NeuronRelaxation {
    const IDENTITY: Self = Self {
        lower_slope: 1.0,
        lower_intercept: 0.0,
        upper_slope: 1.0,
        upper_intercept: 0.0,
    };
    const ZERO: Self = Self {
        lower_slope: 0.0,
        lower_intercept: 0.0,
        upper_slope: 0.0,
        upper_intercept: 0.0,
    };
}

/// ReLU relaxation with the adaptive lower slope (`1` when `u >= |l|`, else `0`).
pub fn relu_relaxation(l: f64, u: f64) -> NeuronRelaxation {
    if l >= 0.0 {
        NeuronRelaxation::IDENTITY
    } else if u <= 0.0 {
        NeuronRelaxation::ZERO
    } else {
        let s = u / (u - l);
        let alpha = if u >= -l { 1.0 } else { 0.0 };
        NeuronRelaxation {
            lower_slope: alpha,
            lower_intercept: 0.0,
            upper_slope: s,
            upper_intercept: -l * s,
        }
    }
}

/// tanh relaxation: chord/tangent on the convex (`u <= 0`) and concave
/// (`l >= 0`) branches, parallel lines with the smaller endpoint slope otherwise.
pub fn tanh_relaxation(l: f64, u: f64) -> NeuronRelaxation {
    let dtanh = |z: f64| 1.0 - z.tanh().powi(2);
    if u - l < 1e-12 {
        let s = dtanh(l);
        return NeuronRelaxation {
            lower_slope: s,
            lower_intercept: l.tanh() - s * l,
            upper_slope: s,
            upper_intercept: u.tanh() - s * u,
        };
    }
    let chord = (u.tanh() - l.tanh()) / (u - l);
    let m = 0.5 * (l + u);
    let tangent = dtanh(m);
    if u <= 0.0 {
        NeuronRelaxation {
            lower_slope: tangent,
            lower_intercept: m.tanh() - tangent * m,
            upper_slope: chord,
            upper_intercept: l.tanh() - chord * l,
        }
    } else if l >= 0.0 {
        NeuronRelaxation {
            lower_slope: chord,
            lower_intercept: l.tanh() - chord * l,
            upper_slope: tangent,
            upper_intercept: m.tanh() - tangent * m,
        }
    } else {
        // tanh(z) - s z is non-decreasing on [l, u] for s <= min slope
        let s = dtanh(l).min(dtanh(u));
        NeuronRelaxation {
            lower_slope: s,
            lower_intercept: l.tanh() - s * l,
            upper_slope: s,
            upper_intercept: u.tanh() - s * u,
        }
    }
}

fn relaxation(act: Activation, l: f64, u: f64) -> NeuronRelaxation {
    match act {
        Activation::Relu => relu_relaxation(l, u),
        Activation::Tanh => tanh_relaxation(l, u),
        Activation::Identity => NeuronRelaxation::IDENTITY,
    }
}

/// Linear bounds of `net` over `input`.
pub fn crown_bounds(
    net: &MlpNetwork,
    input: &IntervalVector,
) -> Result<LinearBounds, NetworkError> {
    if input.dim() != net.input_dim() {
        return Err(NetworkError::DimensionMismatch {
            expected: net.input_dim(),
            actual: input.dim(),
        });
    }
    let pre = preactivation_bounds(net, input);
    let p = net.output_dim();

    let mut lam_hi = DMatrix::<f64>::identity(p, p);
    let mut lam_lo = DMatrix::<f64>::identity(p, p);
    let mut bias_hi = DVector::<f64>::zeros(p);
    let mut bias_lo = DVector::<f64>::zeros(p);

    for (layer, (zl, zu)) in net.layers().iter().zip(&pre).rev() {
        if layer.activation != Activation::Identity {
            let relax: Vec<NeuronRelaxation> = zl
                .iter()
                .zip(zu)
                .map(|(&l, &u)| relaxation(layer.activation, l, u))
                .collect();
            for r in 0..p {
                for (j, rx) in relax.iter().enumerate() {
                    let a = lam_hi[(r, j)];
                    if a >= 0.0 {
                        bias_hi[r] += a * rx.upper_intercept;
                        lam_hi[(r, j)] = a * rx.upper_slope;
                    } else {
                        bias_hi[r] += a * rx.lower_intercept;
                        lam_hi[(r, j)] = a * rx.lower_slope;
                    }
                    let b = lam_lo[(r, j)];
                    if b >= 0.0 {
                        bias_lo[r] += b * rx.lower_intercept;
                        lam_lo[(r, j)] = b * rx.lower_slope;
                    } else {
                        bias_lo[r] += b * rx.upper_intercept;
                        lam_lo[(r, j)] = b * rx.upper_slope;
                    }
                }
            }
        }
        bias_hi += &lam_hi * &layer.bias;
        bias_lo += &lam_lo * &layer.bias;
        lam_hi = &lam_hi * &layer.weight;
        lam_lo = &lam_lo * &layer.weight;
    }

    LinearBounds::new(lam_lo, bias_lo, lam_hi, bias_hi, input.clone())
}
