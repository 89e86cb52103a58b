//! Decomposition functions built from interval extensions, plus generic and
//! linear open-loop systems.

use std::sync::Arc;

use nalgebra::DMatrix;

use super::{EmbeddingError, OpenLoopSystem};
use crate::interval::{pair_order, Interval, PairOrder};

/// Interval enclosure of component `i` of a vector field over a box of
/// states, inputs and disturbances.
pub trait IntervalExtension: Send + Sync {
    fn extend(&self, i: usize, x: &[Interval], u: &[Interval], w: &[Interval]) -> Interval;
}

impl<F> IntervalExtension for F
where
    F: Fn(usize, &[Interval], &[Interval], &[Interval]) -> Interval + Send + Sync,
{
    fn extend(&self, i: usize, x: &[Interval], u: &[Interval], w: &[Interval]) -> Interval {
        self(i, x, u, w)
    }
}

/// Pointwise vector field `(x, u, w) -> x_dot`.
pub type VectorField = dyn Fn(&[f64], &[f64], &[f64]) -> Vec<f64> + Send + Sync;

/// Order class of the concatenated argument pairs `((x, u, w), (xh, uh, wh))`.
pub(crate) fn argument_order(
    x: &[f64],
    xh: &[f64],
    u: &[f64],
    uh: &[f64],
    w: &[f64],
    wh: &[f64],
) -> Result<PairOrder, EmbeddingError> {
    let mut order = PairOrder::Degenerate;
    for (a, b) in [(x, xh), (u, uh), (w, wh)] {
        let o = pair_order(a, b).ok_or(EmbeddingError::MixedOrder)?;
        order = match (order, o) {
            (PairOrder::Degenerate, o) | (o, PairOrder::Degenerate) => o,
            (p, q) if p == q => p,
            _ => return Err(EmbeddingError::MixedOrder),
        };
    }
    Ok(order)
}

fn span(a: &[f64], b: &[f64]) -> Vec<Interval> {
    a.iter()
        .zip(b)
        .map(|(&p, &q)| Interval::spanning(p, q))
        .collect()
}

/// Decomposition obtained from an interval extension by pinning coordinate
/// `i` of the state and taking the lower (upper) end of the enclosure for
/// lower- (upper-) ordered arguments.
///
/// Fully degenerate arguments fall back to the pointwise field so that
/// `d(x, x, u, u, w, w) = f(x, u, w)` holds exactly.
pub struct TightDecomposition<E> {
    field: Arc<VectorField>,
    extension: E,
}

/// Builds the tight decomposition of `field` from `extension`.
pub fn build_tight_decomposition<E: IntervalExtension>(
    field: Arc<VectorField>,
    extension: E,
) -> TightDecomposition<E> {
    TightDecomposition { field, extension }
}

impl<E: IntervalExtension> TightDecomposition<E> {
    pub fn eval(
        &self,
        x: &[f64],
        xh: &[f64],
        u: &[f64],
        uh: &[f64],
        w: &[f64],
        wh: &[f64],
    ) -> Result<Vec<f64>, EmbeddingError> {
        let order = argument_order(x, xh, u, uh, w, wh)?;
        if order == PairOrder::Degenerate {
            return Ok((self.field)(x, u, w));
        }
        let mut xs = span(x, xh);
        let us = span(u, uh);
        let ws = span(w, wh);
        let mut out = Vec::with_capacity(x.len());
        for i in 0..x.len() {
            let saved = xs[i];
            xs[i] = Interval::point(x[i]);
            let r = self.extension.extend(i, &xs, &us, &ws);
            xs[i] = saved;
            if !(r.lo <= r.hi) {
                return Err(EmbeddingError::Decomposition(format!(
                    "interval extension returned invalid enclosure {r} for component {i}"
                )));
            }
            out.push(if order == PairOrder::Lower {
                r.lo
            } else {
                r.hi
            });
        }
        Ok(out)
    }
}

type DecompositionFn = dyn Fn(&[f64], &[f64], &[f64], &[f64], &[f64], &[f64]) -> Result<Vec<f64>, EmbeddingError>
    + Send
    + Sync;

/// A user-registered open-loop system: a vector field plus either a
/// decomposition function or an interval extension.
pub struct GenericSystem {
    name: String,
    dims: (usize, usize, usize),
    field: Arc<VectorField>,
    decomposition: Box<DecompositionFn>,
}

impl GenericSystem {
    pub fn with_decomposition<D>(
        name: impl Into<String>,
        dims: (usize, usize, usize),
        field: Arc<VectorField>,
        decomposition: D,
    ) -> Self
    where
        D: Fn(&[f64], &[f64], &[f64], &[f64], &[f64], &[f64]) -> Result<Vec<f64>, EmbeddingError>
            + Send
            + Sync
            + 'static,
    {
        Self {
            name: name.into(),
            dims,
            field,
            decomposition: Box::new(decomposition),
        }
    }

    pub fn with_extension<E>(
        name: impl Into<String>,
        dims: (usize, usize, usize),
        field: Arc<VectorField>,
        extension: E,
    ) -> Self
    where
        E: IntervalExtension + 'static,
    {
        let tight = build_tight_decomposition(field.clone(), extension);
        Self::with_decomposition(name, dims, field, move |x, xh, u, uh, w, wh| {
            tight.eval(x, xh, u, uh, w, wh)
        })
    }
}

impl OpenLoopSystem for GenericSystem {
    fn name(&self) -> &str {
        &self.name
    }
    fn state_dim(&self) -> usize {
        self.dims.0
    }
    fn input_dim(&self) -> usize {
        self.dims.1
    }
    fn disturbance_dim(&self) -> usize {
        self.dims.2
    }
    fn field(&self, x: &[f64], u: &[f64], w: &[f64]) -> Vec<f64> {
        (self.field)(x, u, w)
    }
    fn decompose(
        &self,
        x: &[f64],
        xh: &[f64],
        u: &[f64],
        uh: &[f64],
        w: &[f64],
        wh: &[f64],
    ) -> Result<Vec<f64>, EmbeddingError> {
        (self.decomposition)(x, xh, u, uh, w, wh)
    }
}

/// `f(x, u, w) = A x + B u + E w` with the closed-form sign-split decomposition
///
/// ```text
/// d_i = A_ii x_i + sum_{j != i} ([A_ij]^+ x_j + [A_ij]^- xh_j) + [B]^+ u + [B]^- uh + [E]^+ w + [E]^- wh
/// ```
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub e: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Self {
        let n = a.nrows();
        Self {
            a,
            b,
            e: DMatrix::zeros(n, 0),
        }
    }

    pub fn with_disturbance(mut self, e: DMatrix<f64>) -> Self {
        self.e = e;
        self
    }
}

fn split_row(m: &DMatrix<f64>, i: usize, lo: &[f64], hi: &[f64], skip: Option<usize>) -> f64 {
    (0..m.ncols())
        .filter(|&j| Some(j) != skip)
        .map(|j| {
            let v = m[(i, j)];
            if v >= 0.0 {
                v * lo[j]
            } else {
                v * hi[j]
            }
        })
        .sum()
}

impl OpenLoopSystem for LinearSystem {
    fn name(&self) -> &str {
        "linear"
    }
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    fn disturbance_dim(&self) -> usize {
        self.e.ncols()
    }
    fn field(&self, x: &[f64], u: &[f64], w: &[f64]) -> Vec<f64> {
        (0..self.state_dim())
            .map(|i| {
                (0..x.len()).map(|j| self.a[(i, j)] * x[j]).sum::<f64>()
                    + (0..u.len()).map(|j| self.b[(i, j)] * u[j]).sum::<f64>()
                    + (0..w.len()).map(|j| self.e[(i, j)] * w[j]).sum::<f64>()
            })
            .collect()
    }
    fn decompose(
        &self,
        x: &[f64],
        xh: &[f64],
        u: &[f64],
        uh: &[f64],
        w: &[f64],
        wh: &[f64],
    ) -> Result<Vec<f64>, EmbeddingError> {
        // the same formula serves both orderings
        argument_order(x, xh, u, uh, w, wh)?;
        Ok((0..self.state_dim())
            .map(|i| {
                self.a[(i, i)] * x[i]
                    + split_row(&self.a, i, x, xh, Some(i))
                    + split_row(&self.b, i, u, uh, None)
                    + split_row(&self.e, i, w, wh, None)
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_pinned_at_lower_endpoint() {
        let field: Arc<VectorField> = Arc::new(|x: &[f64], _: &[f64], _: &[f64]| vec![x[0] * x[0]]);
        let ext = |_: usize, x: &[Interval], _: &[Interval], _: &[Interval]| {
            let s = x[0] * x[0];
            // tighter square: non-negative
            let lo = if x[0].contains(0.0) {
                0.0
            } else {
                s.lo.max(0.0)
            };
            Interval::new(lo, s.hi)
        };
        let d = build_tight_decomposition(field, ext);
        assert_eq!(
            d.eval(&[-1.0], &[2.0], &[], &[], &[], &[]).unwrap(),
            vec![1.0]
        );
        assert_eq!(
            d.eval(&[2.0], &[-1.0], &[], &[], &[], &[]).unwrap(),
            vec![4.0]
        );
        assert_eq!(
            d.eval(&[0.5], &[0.5], &[], &[], &[], &[]).unwrap(),
            vec![0.25]
        );
    }

    #[test]
    fn affine_extension_recovers_sign_split() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, -3.0, 0.5]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, -2.0]);
        let lin = LinearSystem::new(a.clone(), b.clone());
        let (a2, b2) = (a.clone(), b.clone());
        let field: Arc<VectorField> = {
            let lin = lin.clone();
            Arc::new(move |x: &[f64], u: &[f64], w: &[f64]| lin.field(x, u, w))
        };
        let ext = move |i: usize, x: &[Interval], u: &[Interval], _: &[Interval]| {
            let mut acc = Interval::point(0.0);
            for j in 0..2 {
                acc = acc + x[j].scale(a2[(i, j)]);
            }
            acc + u[0].scale(b2[(i, 0)])
        };
        let generic = GenericSystem::with_extension("affine", (2, 1, 0), field, ext);
        let xs = [
            ([0.0, 1.0], [0.5, 2.0], [-1.0], [1.0]),
            ([1.0, 3.0], [-2.0, 0.0], [2.0], [0.5]),
        ];
        for (x, xh, u, uh) in xs {
            let got = generic.decompose(&x, &xh, &u, &uh, &[], &[]).unwrap();
            let want = lin.decompose(&x, &xh, &u, &uh, &[], &[]).unwrap();
            for k in 0..2 {
                assert!((got[k] - want[k]).abs() < 1e-12, "{got:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn mixed_arguments_are_rejected() {
        let lin = LinearSystem::new(DMatrix::identity(2, 2), DMatrix::zeros(2, 1));
        assert_eq!(
            lin.decompose(&[0.0, 1.0], &[1.0, 0.0], &[0.0], &[0.0], &[], &[]),
            Err(EmbeddingError::MixedOrder)
        );
        assert_eq!(
            lin.decompose(&[0.0, 0.0], &[1.0, 1.0], &[1.0], &[0.0], &[], &[]),
            Err(EmbeddingError::MixedOrder)
        );
    }

    #[test]
    fn crossed_extension_is_an_error() {
        let field: Arc<VectorField> = Arc::new(|x: &[f64], _: &[f64], _: &[f64]| x.to_vec());
        let d = build_tight_decomposition(
            field,
            |_: usize, _: &[Interval], _: &[Interval], _: &[Interval]| Interval {
                lo: 1.0,
                hi: 0.0,
            },
        );
        assert!(matches!(
            d.eval(&[0.0], &[1.0], &[], &[], &[], &[]),
            Err(EmbeddingError::Decomposition(_))
        ));
    }
}
