//! Neural-network controllers and their interval inclusion functions.
//!
//! Two verifiers are provided:
//!
//! - [`ibp_bounds`]: layer-wise interval propagation. Cheap and coarse.
//! - [`crown_bounds`]: backward linear relaxation giving affine envelopes
//!   ([`LinearBounds`]) that hold over a whole box. An [`InclusionFunction`]
//!   then evaluates those envelopes on any sub-box in closed form.

mod crown;
mod ibp;
mod network;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use crown::{crown_bounds, relu_relaxation, tanh_relaxation, NeuronRelaxation};
pub use ibp::ibp_bounds;
pub use network::{Activation, Layer, MlpNetwork};

use crate::interval::{matrix_norm_inf, pair_order, IntervalVector, PairOrder};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("network file: {0}")]
    Io(String),
    #[error("network JSON: {0}")]
    Parse(String),
    #[error("layer {layer}: {reason}")]
    Shape { layer: usize, reason: String },
    #[error("final layer must use the identity activation")]
    FinalActivation,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("query box {query} not contained in bound domain {domain}")]
    NotContained { query: String, domain: String },
    #[error("query pair has mixed ordering")]
    MixedOrder,
    #[error("numeric failure: {0}")]
    Numeric(String),
}

/// Affine envelopes `C_lo x + d_lo <= N(x) <= C_hi x + d_hi`, valid for `x` in `domain`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBounds {
    pub c_lo: DMatrix<f64>,
    pub d_lo: DVector<f64>,
    pub c_hi: DMatrix<f64>,
    pub d_hi: DVector<f64>,
    pub domain: IntervalVector,
}

impl LinearBounds {
    pub fn new(
        c_lo: DMatrix<f64>,
        d_lo: DVector<f64>,
        c_hi: DMatrix<f64>,
        d_hi: DVector<f64>,
        domain: IntervalVector,
    ) -> Result<Self, NetworkError> {
        let (p, n) = c_lo.shape();
        if c_hi.shape() != (p, n) || d_lo.len() != p || d_hi.len() != p {
            return Err(NetworkError::Shape {
                layer: 0,
                reason: "inconsistent linear bound shapes".into(),
            });
        }
        if n != domain.dim() {
            return Err(NetworkError::DimensionMismatch {
                expected: n,
                actual: domain.dim(),
            });
        }
        if c_lo
            .iter()
            .chain(c_hi.iter())
            .chain(d_lo.iter())
            .chain(d_hi.iter())
            .any(|v| !v.is_finite())
        {
            return Err(NetworkError::Numeric("non-finite linear bound".into()));
        }
        Ok(Self {
            c_lo,
            d_lo,
            c_hi,
            d_hi,
            domain,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.c_lo.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c_lo.nrows()
    }

    /// Lower and upper envelope values at a point.
    pub fn envelopes_at(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let x = DVector::from_column_slice(x);
        let lo = &self.c_lo * &x + &self.d_lo;
        let hi = &self.c_hi * &x + &self.d_hi;
        (lo.iter().copied().collect(), hi.iter().copied().collect())
    }
}

fn pos(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|v| v.max(0.0))
}

fn neg(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|v| v.min(0.0))
}

/// Closed-form inclusion function built from [`LinearBounds`].
///
/// For `x_lo <= x_hi` inside the bound domain:
///
/// ```text
/// u_lo = [C_lo]^+ x_lo + [C_lo]^- x_hi + d_lo
/// u_hi = [C_hi]^+ x_hi + [C_hi]^- x_lo + d_hi
/// ```
///
/// The same formula is evaluated verbatim on reversed pairs.
#[derive(Debug, Clone)]
pub struct InclusionFunction {
    bounds: LinearBounds,
    c_lo_pos: DMatrix<f64>,
    c_lo_neg: DMatrix<f64>,
    c_hi_pos: DMatrix<f64>,
    c_hi_neg: DMatrix<f64>,
}

const DOMAIN_SLACK: f64 = 1e-12;

impl InclusionFunction {
    pub fn bounds(&self) -> &LinearBounds {
        &self.bounds
    }

    pub fn domain(&self) -> &IntervalVector {
        &self.bounds.domain
    }

    pub fn input_dim(&self) -> usize {
        self.bounds.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.bounds.output_dim()
    }

    fn check_domain(&self, a: &[f64], b: &[f64]) -> Result<(), NetworkError> {
        let n = self.input_dim();
        if a.len() != n || b.len() != n {
            return Err(NetworkError::DimensionMismatch {
                expected: n,
                actual: a.len().min(b.len()),
            });
        }
        let order = pair_order(a, b).ok_or(NetworkError::MixedOrder)?;
        let (lo, hi) = if order == PairOrder::Upper {
            (b, a)
        } else {
            (a, b)
        };
        let dom = &self.bounds.domain;
        let inside = (0..n).all(|i| {
            let tol_lo = DOMAIN_SLACK * (1.0 + dom.lo()[i].abs());
            let tol_hi = DOMAIN_SLACK * (1.0 + dom.hi()[i].abs());
            lo[i] >= dom.lo()[i] - tol_lo && hi[i] <= dom.hi()[i] + tol_hi
        });
        if inside {
            Ok(())
        } else {
            Err(NetworkError::NotContained {
                query: format!("{lo:?} .. {hi:?}"),
                domain: dom.to_string(),
            })
        }
    }

    /// Evaluates the inclusion on the pair `(x_lo, x_hi)`; see the type docs.
    pub fn eval(&self, x_lo: &[f64], x_hi: &[f64]) -> Result<(Vec<f64>, Vec<f64>), NetworkError> {
        self.check_domain(x_lo, x_hi)?;
        let xl = DVector::from_column_slice(x_lo);
        let xh = DVector::from_column_slice(x_hi);
        let u_lo = &self.c_lo_pos * &xl + &self.c_lo_neg * &xh + &self.bounds.d_lo;
        let u_hi = &self.c_hi_pos * &xh + &self.c_hi_neg * &xl + &self.bounds.d_hi;
        let (mut u_lo, mut u_hi): (Vec<f64>, Vec<f64>) = (
            u_lo.iter().copied().collect(),
            u_hi.iter().copied().collect(),
        );
        // exact bounds can cross by an ulp on degenerate inputs
        let lower = x_lo.iter().zip(x_hi).all(|(a, b)| a <= b);
        for (a, b) in u_lo.iter_mut().zip(u_hi.iter_mut()) {
            if (*a > *b) == lower {
                std::mem::swap(a, b);
            }
        }
        Ok((u_lo, u_hi))
    }

    /// Output interval over a box.
    pub fn eval_box(&self, b: &IntervalVector) -> Result<IntervalVector, NetworkError> {
        let (lo, hi) = self.eval(b.lo(), b.hi())?;
        IntervalVector::new(lo, hi).map_err(|e| NetworkError::Numeric(e.to_string()))
    }

    /// Jacobian of `(u_lo, u_hi)` with respect to `(x_lo, x_hi)`: `[[C_lo^+, C_lo^-], [C_hi^-, C_hi^+]]`.
    pub fn jacobian(&self) -> DMatrix<f64> {
        let (p, n) = self.bounds.c_lo.shape();
        let mut j = DMatrix::zeros(2 * p, 2 * n);
        j.view_mut((0, 0), (p, n)).copy_from(&self.c_lo_pos);
        j.view_mut((0, n), (p, n)).copy_from(&self.c_lo_neg);
        j.view_mut((p, 0), (p, n)).copy_from(&self.c_hi_neg);
        j.view_mut((p, n), (p, n)).copy_from(&self.c_hi_pos);
        j
    }

    /// `||jacobian||_inf`, which equals `max(||C_lo||_inf, ||C_hi||_inf)`.
    pub fn lipschitz_inf(&self) -> f64 {
        matrix_norm_inf(&self.bounds.c_lo).max(matrix_norm_inf(&self.bounds.c_hi))
    }
}

/// Wraps linear bounds into an inclusion function.
pub fn make_inclusion(bounds: LinearBounds) -> InclusionFunction {
    InclusionFunction {
        c_lo_pos: pos(&bounds.c_lo),
        c_lo_neg: neg(&bounds.c_lo),
        c_hi_pos: pos(&bounds.c_hi),
        c_hi_neg: neg(&bounds.c_hi),
        bounds,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bx(lo: &[f64], hi: &[f64]) -> IntervalVector {
        IntervalVector::new(lo.to_vec(), hi.to_vec()).unwrap()
    }

    fn scalar(act: Activation) -> MlpNetwork {
        MlpNetwork::new(
            1,
            vec![
                Layer::new(DMatrix::from_element(1, 1, 1.0), DVector::zeros(1), act),
                Layer::new(
                    DMatrix::from_element(1, 1, 1.0),
                    DVector::zeros(1),
                    Activation::Identity,
                ),
            ],
        )
        .unwrap()
    }

    #[test]
    fn ibp_single_affine_layer_is_exact() {
        let net = MlpNetwork::new(
            1,
            vec![Layer::new(
                DMatrix::from_element(1, 1, 2.0),
                DVector::from_element(1, 1.0),
                Activation::Identity,
            )],
        )
        .unwrap();
        assert_eq!(
            ibp_bounds(&net, &bx(&[0.0], &[1.0])).unwrap(),
            bx(&[1.0], &[3.0])
        );
    }

    #[test]
    fn ibp_dead_relu() {
        let net = scalar(Activation::Relu);
        assert_eq!(
            ibp_bounds(&net, &bx(&[-2.0], &[-1.0])).unwrap(),
            bx(&[0.0], &[0.0])
        );
    }

    #[test]
    fn ibp_rejects_wrong_dimension() {
        let net = scalar(Activation::Relu);
        assert!(matches!(
            ibp_bounds(&net, &bx(&[0.0, 0.0], &[1.0, 1.0])),
            Err(NetworkError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn crown_affine_network_is_exact() {
        let w = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 0.0, 3.0, -1.0]);
        let b = DVector::from_vec(vec![0.25, -1.0]);
        let net = MlpNetwork::new(
            3,
            vec![Layer::new(w.clone(), b.clone(), Activation::Identity)],
        )
        .unwrap();
        let lb = crown_bounds(&net, &bx(&[-1.0, 0.0, 2.0], &[1.0, 1.0, 3.0])).unwrap();
        assert_eq!(lb.c_lo, w);
        assert_eq!(lb.c_hi, w);
        assert_eq!(lb.d_lo, b);
        assert_eq!(lb.d_hi, b);
    }

    #[test]
    fn crown_relu_triangle_relaxation() {
        let net = scalar(Activation::Relu);
        let lb = crown_bounds(&net, &bx(&[-1.0], &[1.0])).unwrap();
        assert_eq!(lb.c_hi[(0, 0)], 0.5);
        assert_eq!(lb.d_hi[0], 0.5);
        assert_eq!(lb.c_lo[(0, 0)], 1.0);
        assert_eq!(lb.d_lo[0], 0.0);
        for k in 0..=200 {
            let x = -1.0 + k as f64 / 100.0;
            let (lo, hi) = lb.envelopes_at(&[x]);
            let y = x.max(0.0);
            assert!(lo[0] <= y + 1e-15 && y <= hi[0] + 1e-15);
        }
    }

    #[test]
    fn crown_relu_stable_neuron_is_identity() {
        let lb = crown_bounds(&scalar(Activation::Relu), &bx(&[1.0], &[2.0])).unwrap();
        assert_eq!(
            (lb.c_lo[(0, 0)], lb.d_lo[0], lb.c_hi[(0, 0)], lb.d_hi[0]),
            (1.0, 0.0, 1.0, 0.0)
        );
    }

    #[test]
    fn relu_alpha_prefers_zero_when_negative_side_dominates() {
        let r = relu_relaxation(-3.0, 1.0);
        assert_eq!(r.lower_slope, 0.0);
        assert_eq!(r.upper_slope, 0.25);
        assert_eq!(r.upper_intercept, 0.75);
    }

    #[test]
    fn tanh_relaxations_are_sound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let l: f64 = rng.gen_range(-4.0..4.0);
            let u = l + rng.gen_range(0.0..4.0);
            let r = tanh_relaxation(l, u);
            for k in 0..=50 {
                let z = l + (u - l) * k as f64 / 50.0;
                assert!(
                    r.lower_slope * z + r.lower_intercept <= z.tanh() + 1e-12,
                    "lower at {z} on [{l},{u}]"
                );
                assert!(
                    z.tanh() <= r.upper_slope * z + r.upper_intercept + 1e-12,
                    "upper at {z} on [{l},{u}]"
                );
            }
        }
    }

    #[test]
    fn inclusion_positive_part_selection() {
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let lb = LinearBounds::new(
            c.clone(),
            DVector::from_element(1, -0.5),
            c,
            DVector::from_element(1, 0.5),
            bx(&[0.0, 0.0], &[1.0, 1.0]),
        )
        .unwrap();
        let inc = make_inclusion(lb);
        let (lo, hi) = inc.eval(&[0.2, 0.1], &[0.4, 0.3]).unwrap();
        assert!((lo[0] - (0.2 + 0.2 - 0.5)).abs() < 1e-15);
        assert!((hi[0] - (0.4 + 0.6 + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn inclusion_rejects_query_outside_domain() {
        let net = scalar(Activation::Relu);
        let inc = make_inclusion(crown_bounds(&net, &bx(&[0.0], &[1.0])).unwrap());
        assert!(matches!(
            inc.eval(&[0.5], &[1.5]),
            Err(NetworkError::NotContained { .. })
        ));
        // reversed pairs are checked on their sorted extent
        assert!(inc.eval(&[0.9], &[0.1]).is_ok());
    }

    #[test]
    fn inclusion_degenerate_query_contains_value() {
        let net = scalar(Activation::Relu);
        let inc = make_inclusion(crown_bounds(&net, &bx(&[-1.0], &[1.0])).unwrap());
        for z in [-1.0, -0.3, 0.0, 0.6, 1.0] {
            let (lo, hi) = inc.eval(&[z], &[z]).unwrap();
            let y = net.evaluate(&[z])[0];
            assert!(lo[0] <= y && y <= hi[0]);
        }
    }

    #[test]
    fn lipschitz_matches_jacobian_norm() {
        let lb = LinearBounds::new(
            DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 0.5]),
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[0.0, 4.0, -1.0, 1.0]),
            DVector::zeros(2),
            bx(&[0.0, 0.0], &[1.0, 1.0]),
        )
        .unwrap();
        let inc = make_inclusion(lb);
        assert_eq!(inc.lipschitz_inf(), matrix_norm_inf(&inc.jacobian()));
        assert_eq!(inc.lipschitz_inf(), 4.0);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let text = r#"{"input_dim": 2, "layers": [
            {"weights": [[1, 0], [0, 1], [1, 1]], "bias": [0, 0, -1], "activation": "relu"},
            {"weights": [[1, -1, 2]], "bias": [0.5], "activation": "identity"}]}"#;
        let net = MlpNetwork::from_json(text).unwrap();
        assert_eq!((net.input_dim(), net.output_dim()), (2, 1));
        assert_eq!(MlpNetwork::from_json(&net.to_json()).unwrap(), net);
        assert_eq!(net.evaluate(&[1.0, 2.0]), vec![1.0 - 2.0 + 4.0 + 0.5]);

        let bad_chain = r#"{"input_dim": 3, "layers": [{"weights": [[1, 0]], "bias": [0], "activation": "identity"}]}"#;
        assert!(matches!(
            MlpNetwork::from_json(bad_chain),
            Err(NetworkError::Shape { layer: 0, .. })
        ));
        let bad_final = r#"{"input_dim": 1, "layers": [{"weights": [[1]], "bias": [0], "activation": "relu"}]}"#;
        assert_eq!(
            MlpNetwork::from_json(bad_final),
            Err(NetworkError::FinalActivation)
        );
        let bad_act = r#"{"input_dim": 1, "layers": [{"weights": [[1]], "bias": [0], "activation": "gelu"}]}"#;
        assert!(matches!(
            MlpNetwork::from_json(bad_act),
            Err(NetworkError::Parse(_))
        ));
    }
}
