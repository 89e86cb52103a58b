//! Interval bound propagation.

use nalgebra::DMatrix;

use super::network::{Activation, MlpNetwork};
use super::NetworkError;
use crate::interval::IntervalVector;

/// Interval image of `W [lo, hi] + b` using the signed split of `W`.
pub(crate) fn affine_interval(
    w: &DMatrix<f64>,
    b: &[f64],
    lo: &[f64],
    hi: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut out_lo = b.to_vec();
    let mut out_hi = b.to_vec();
    for r in 0..w.nrows() {
        let (mut a, mut c) = (0.0, 0.0);
        for k in 0..w.ncols() {
            let v = w[(r, k)];
            if v >= 0.0 {
                a += v * lo[k];
                c += v * hi[k];
            } else {
                a += v * hi[k];
                c += v * lo[k];
            }
        }
        out_lo[r] += a;
        out_hi[r] += c;
    }
    (out_lo, out_hi)
}

/// Pre-activation ranges `[l, u]` of every layer, in order.
pub(crate) fn preactivation_bounds(
    net: &MlpNetwork,
    input: &IntervalVector,
) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut lo = input.lo().to_vec();
    let mut hi = input.hi().to_vec();
    let mut out = Vec::with_capacity(net.layers().len());
    for layer in net.layers() {
        let (zl, zu) = affine_interval(&layer.weight, layer.bias.as_slice(), &lo, &hi);
        // monotone activations map endpoints to endpoints
        lo = zl.iter().map(|&v| layer.activation.apply(v)).collect();
        hi = zu.iter().map(|&v| layer.activation.apply(v)).collect();
        out.push((zl, zu));
    }
    out
}

/// Output box of the network over `input` by layer-wise interval propagation.
pub fn ibp_bounds(
    net: &MlpNetwork,
    input: &IntervalVector,
) -> Result<IntervalVector, NetworkError> {
    if input.dim() != net.input_dim() {
        return Err(NetworkError::DimensionMismatch {
            expected: net.input_dim(),
            actual: input.dim(),
        });
    }
    let pre = preactivation_bounds(net, input);
    let (l, u) = pre.last().expect("network has layers");
    // final layer is identity
    debug_assert_eq!(
        net.layers().last().map(|l| l.activation),
        Some(Activation::Identity)
    );
    IntervalVector::new(l.clone(), u.clone()).map_err(|e| NetworkError::Numeric(e.to_string()))
}
