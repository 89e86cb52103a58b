//! Contraction diagnostics for closed-loop embeddings.
//!
//! All suprema are taken over finite sample sets and are therefore estimates
//! (lower bounds of the true suprema), not certificates.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{
    finite_difference_jacobian, open_embedding_field, EmbeddingError, OpenLoopSystem,
};
use crate::interval::{matrix_measure_inf, matrix_norm_inf, EmbeddingState, IntervalVector};
use crate::nn::{crown_bounds, make_inclusion, InclusionFunction, MlpNetwork};

/// Relative finite-difference step.
pub const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContractionError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("region is empty")]
    EmptyRegion,
    #[error("region box is too thin along axis {axis} (width {width}) for finite differences")]
    Thin { axis: usize, width: f64 },
    #[error("sample count must be positive")]
    NoSamples,
}

/// How sample pairs `(z_lo, z_hi)` are placed in each region box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", content = "size", rename_all = "kebab-case")]
pub enum SampleMethod {
    /// The cells of a uniform grid with this many cells per axis.
    Grid(usize),
    /// This many Halton points in the `2n`-dimensional pair space.
    Sample(usize),
    /// Both of the above.
    GridAndSample(usize, usize),
}

impl Default for SampleMethod {
    fn default() -> Self {
        SampleMethod::GridAndSample(5, 64)
    }
}

/// One box of `Omega_t` together with network bounds valid on it.
#[derive(Clone)]
pub struct RegionPiece {
    pub bx: IntervalVector,
    pub inclusion: Arc<InclusionFunction>,
}

impl RegionPiece {
    pub fn new(
        bx: IntervalVector,
        inclusion: Arc<InclusionFunction>,
    ) -> Result<Self, ContractionError> {
        inclusion
            .eval(bx.lo(), bx.hi())
            .map_err(EmbeddingError::from)?;
        Ok(Self { bx, inclusion })
    }

    /// Piece with fresh linear bounds computed on `bx`.
    pub fn verified(net: &MlpNetwork, bx: IntervalVector) -> Result<Self, ContractionError> {
        let inc = crown_bounds(net, &bx).map_err(EmbeddingError::from)?;
        Ok(Self {
            bx,
            inclusion: Arc::new(make_inclusion(inc)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionEstimate {
    /// Estimated contraction rate of the closed-loop embedding.
    pub c_x: f64,
    /// Estimated open-loop rate `c_x^o`.
    pub c_x_o: f64,
    pub l_u_o: f64,
    pub l_w_o: f64,
    /// Sampled operator norm of the network inclusion's Jacobian.
    pub lip_inf: f64,
    pub method: SampleMethod,
    pub sample_count: usize,
}

fn halton(index: usize, base: usize) -> f64 {
    let (mut f, mut r, mut i) = (1.0, 0.0, index);
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

fn primes(k: usize) -> Vec<usize> {
    let mut out = vec![];
    let mut c = 2;
    while out.len() < k {
        if out.iter().all(|p| c % p != 0) {
            out.push(c);
        }
        c += 1;
    }
    out
}

fn step_for(v: f64) -> f64 {
    FD_STEP * v.abs().max(1.0)
}

/// Ordered sample pairs inside `bx`, kept `gap` away from the box faces and
/// at least `gap` apart in every coordinate.
fn sample_pairs(
    bx: &IntervalVector,
    method: SampleMethod,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>, ContractionError> {
    let n = bx.dim();
    let gaps: Vec<f64> = (0..n)
        .map(|i| 10.0 * step_for(bx.lo()[i].abs().max(bx.hi()[i].abs())))
        .collect();
    for i in 0..n {
        if bx.width(i) < 4.0 * gaps[i] {
            return Err(ContractionError::Thin {
                axis: i,
                width: bx.width(i),
            });
        }
    }
    // inner box leaves room for central differences at the faces
    let inner_lo: Vec<f64> = (0..n).map(|i| bx.lo()[i] + gaps[i]).collect();
    let inner_w: Vec<f64> = (0..n).map(|i| bx.width(i) - 2.0 * gaps[i]).collect();
    let make = |a: &[f64], b: &[f64]| {
        let mut lo = vec![0.0; n];
        let mut hi = vec![0.0; n];
        for i in 0..n {
            let (p, q) = (a[i].min(b[i]), a[i].max(b[i]));
            let (mut l, mut h) = (inner_lo[i] + p * inner_w[i], inner_lo[i] + q * inner_w[i]);
            if h - l < gaps[i] {
                let c = (0.5 * (l + h)).clamp(
                    inner_lo[i] + 0.5 * gaps[i],
                    inner_lo[i] + inner_w[i] - 0.5 * gaps[i],
                );
                l = c - 0.5 * gaps[i];
                h = c + 0.5 * gaps[i];
            }
            lo[i] = l;
            hi[i] = h;
        }
        (lo, hi)
    };
    match method {
        SampleMethod::Sample(0) | SampleMethod::Grid(0) => Err(ContractionError::NoSamples),
        SampleMethod::GridAndSample(g, k) => {
            let mut out = sample_pairs(bx, SampleMethod::Grid(g))?;
            out.extend(sample_pairs(bx, SampleMethod::Sample(k))?);
            Ok(out)
        }
        SampleMethod::Sample(count) => {
            let ps = primes(2 * n);
            Ok((1..=count)
                .map(|k| {
                    let a: Vec<f64> = (0..n).map(|i| halton(k, ps[i])).collect();
                    let b: Vec<f64> = (0..n).map(|i| halton(k, ps[n + i])).collect();
                    make(&a, &b)
                })
                .collect())
        }
        SampleMethod::Grid(g) => {
            let total = g.checked_pow(n as u32).ok_or(ContractionError::NoSamples)?;
            Ok((0..total)
                .map(|mut k| {
                    let mut a = vec![0.0; n];
                    let mut b = vec![0.0; n];
                    for i in 0..n {
                        let c = k % g;
                        k /= g;
                        a[i] = c as f64 / g as f64;
                        b[i] = (c + 1) as f64 / g as f64;
                    }
                    make(&a, &b)
                })
                .collect())
        }
    }
}

/// Widens a degenerate or nearly degenerate pair so that central
/// differences keep it ordered.
fn spread(lo: &[f64], hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut l = lo.to_vec();
    let mut h = hi.to_vec();
    for i in 0..l.len() {
        let need = 4.0 * step_for(l[i].abs().max(h[i].abs()));
        if h[i] - l[i] < need {
            let c = 0.5 * (l[i] + h[i]);
            l[i] = c - 0.5 * need;
            h[i] = c + 0.5 * need;
        }
    }
    (l, h)
}

/// Closed-loop embedding field with continuously applied bounds:
/// `E^o(z_lo, z_hi, N_lo(z_lo, z_hi), N_hi(z_lo, z_hi), w_lo, w_hi)`.
pub fn closed_loop_field(
    sys: &dyn OpenLoopSystem,
    inclusion: &InclusionFunction,
    w: &IntervalVector,
    z_lo: &[f64],
    z_hi: &[f64],
) -> Result<Vec<f64>, EmbeddingError> {
    let (u_lo, u_hi) = inclusion.eval(z_lo, z_hi)?;
    let st = EmbeddingState {
        x_lo: z_lo.to_vec(),
        x_hi: z_hi.to_vec(),
    };
    open_embedding_field(sys, &st, (&u_lo, &u_hi), (w.lo(), w.hi()))
}

#[derive(Debug, Clone, Copy, Default)]
struct PointEstimate {
    c_x: f64,
    c_x_o: f64,
    l_u: f64,
    l_w: f64,
    lip: f64,
}

fn estimate_at(
    sys: &dyn OpenLoopSystem,
    inc: &InclusionFunction,
    w: &IntervalVector,
    z_lo: &[f64],
    z_hi: &[f64],
) -> Result<PointEstimate, ContractionError> {
    let n = z_lo.len();
    let p = inc.output_dim();
    let q = w.dim();
    let z: Vec<f64> = z_lo.iter().chain(z_hi).copied().collect();
    let jc = finite_difference_jacobian(
        |v| closed_loop_field(sys, inc, w, &v[..n], &v[n..]),
        &z,
        FD_STEP,
    )?;
    let (u_lo, u_hi) = inc.eval(z_lo, z_hi).map_err(EmbeddingError::from)?;
    let (u_lo, u_hi) = spread(&u_lo, &u_hi);
    let (w_lo, w_hi) = spread(w.lo(), w.hi());
    let eo = |x: &[f64], u: &[f64], ww: &[f64]| {
        let st = EmbeddingState {
            x_lo: x[..n].to_vec(),
            x_hi: x[n..].to_vec(),
        };
        open_embedding_field(sys, &st, (&u[..p], &u[p..]), (&ww[..q], &ww[q..]))
    };
    let u: Vec<f64> = u_lo.iter().chain(&u_hi).copied().collect();
    let ww: Vec<f64> = w_lo.iter().chain(&w_hi).copied().collect();
    let jx = finite_difference_jacobian(|v| eo(v, &u, &ww), &z, FD_STEP)?;
    let ju = finite_difference_jacobian(|v| eo(&z, v, &ww), &u, FD_STEP)?;
    let jw = if q == 0 {
        DMatrix::zeros(2 * n, 0)
    } else {
        finite_difference_jacobian(|v| eo(&z, &u, v), &ww, FD_STEP)?
    };
    let jn = finite_difference_jacobian(
        |v| {
            let (a, b) = inc.eval(&v[..n], &v[n..])?;
            Ok(a.into_iter().chain(b).collect())
        },
        &z,
        FD_STEP,
    )?;
    Ok(PointEstimate {
        c_x: matrix_measure_inf(&jc),
        c_x_o: matrix_measure_inf(&jx),
        l_u: matrix_norm_inf(&ju),
        l_w: if q == 0 { 0.0 } else { matrix_norm_inf(&jw) },
        lip: matrix_norm_inf(&jn),
    })
}

/// All estimates for both bounds on one common sample set.
pub fn estimate_contraction(
    sys: &dyn OpenLoopSystem,
    disturbance: &IntervalVector,
    region: &[RegionPiece],
    method: SampleMethod,
) -> Result<ContractionEstimate, ContractionError> {
    if region.is_empty() {
        return Err(ContractionError::EmptyRegion);
    }
    let mut best: Option<PointEstimate> = None;
    let mut count = 0;
    for piece in region {
        piece
            .inclusion
            .eval(piece.bx.lo(), piece.bx.hi())
            .map_err(EmbeddingError::from)?;
        for (lo, hi) in sample_pairs(&piece.bx, method)? {
            let e = estimate_at(sys, &piece.inclusion, disturbance, &lo, &hi)?;
            count += 1;
            best = Some(match best {
                None => e,
                Some(b) => PointEstimate {
                    c_x: b.c_x.max(e.c_x),
                    c_x_o: b.c_x_o.max(e.c_x_o),
                    l_u: b.l_u.max(e.l_u),
                    l_w: b.l_w.max(e.l_w),
                    lip: b.lip.max(e.lip),
                },
            });
        }
    }
    let b = best.ok_or(ContractionError::EmptyRegion)?;
    Ok(ContractionEstimate {
        c_x: b.c_x,
        c_x_o: b.c_x_o,
        l_u_o: b.l_u,
        l_w_o: b.l_w,
        lip_inf: b.lip,
        method,
        sample_count: count,
    })
}

/// Estimated closed-loop contraction rate `c_x` over `region`.
pub fn estimate_cx(
    sys: &dyn OpenLoopSystem,
    disturbance: &IntervalVector,
    region: &[RegionPiece],
    method: SampleMethod,
) -> Result<f64, ContractionError> {
    estimate_contraction(sys, disturbance, region, method).map(|e| e.c_x)
}

/// Estimated `(l_u^o, l_w^o, Lip_inf)` over `region`.
pub fn estimate_lipschitz(
    sys: &dyn OpenLoopSystem,
    disturbance: &IntervalVector,
    region: &[RegionPiece],
    method: SampleMethod,
) -> Result<(f64, f64, f64), ContractionError> {
    estimate_contraction(sys, disturbance, region, method).map(|e| (e.l_u_o, e.l_w_o, e.lip_inf))
}

/// `(e^{ct} - 1) / c`, continuous at `c = 0`.
pub fn growth_factor(c: f64, t: f64) -> f64 {
    if c == 0.0 {
        t
    } else {
        (c * t).exp_m1() / c
    }
}

/// Right-hand side of the accuracy bound
/// `e^{c t} r0 + l_u (e^{c t} - 1)/c * nn + l_w (e^{c t} - 1)/c * w`.
pub fn theorem1_bound(
    est: &ContractionEstimate,
    t: f64,
    init_err: f64,
    nn_err_sup: f64,
    w_err_sup: f64,
) -> f64 {
    let e = (est.c_x * t).exp().max(0.0);
    let g = growth_factor(est.c_x, t);
    e * init_err + est.l_u_o * g * nn_err_sup + est.l_w_o * g * w_err_sup
}

/// Composite upper bound `c_x^o + l_u^o Lip_inf` on the closed-loop rate.
pub fn theorem2_bound(c_x_o: f64, l_u_o: f64, lip_inf: f64) -> f64 {
    c_x_o + l_u_o * lip_inf
}

/// Sampled `sup_z ||(N_lo(z, z), N_hi(z, z)) - (N(z), N(z))||_inf` over `bx`.
pub fn inclusion_gap(
    net: &MlpNetwork,
    inclusion: &InclusionFunction,
    bx: &IntervalVector,
    samples: usize,
) -> Result<f64, ContractionError> {
    let n = bx.dim();
    let ps = primes(n);
    let mut sup: f64 = 0.0;
    for k in 0..=samples {
        let z: Vec<f64> = (0..n)
            .map(|i| {
                if k == 0 {
                    bx.midpoint()[i]
                } else {
                    bx.lo()[i] + halton(k, ps[i]) * bx.width(i)
                }
            })
            .collect();
        let (lo, hi) = inclusion.eval(&z, &z).map_err(EmbeddingError::from)?;
        let y = net.evaluate(&z);
        for o in 0..y.len() {
            sup = sup.max((lo[o] - y[o]).abs()).max((hi[o] - y[o]).abs());
        }
    }
    Ok(sup)
}
