#![allow(dead_code)]

use std::sync::Arc;

use mmpart::embedding::{
    ClosedLoopEmbedding, ControlCoupling, GenericSystem, LinearSystem, OpenLoopSystem, VectorField,
};
use mmpart::interval::{Interval, IntervalVector, ToleranceVector};
use mmpart::models::{DoubleIntegrator, VehicleSystem};
use mmpart::nn::{Activation, Layer, MlpNetwork};
use mmpart::partition::{compute_reachable_set, AlgorithmParams, ContinuousFactory};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-scale..scale))
}

/// Random MLP with 1 to 3 layers of width at most 16; hidden activations
/// drawn from `hidden`.
pub fn random_network(
    rng: &mut ChaCha8Rng,
    input: usize,
    output: usize,
    hidden: &[Activation],
) -> MlpNetwork {
    let depth = rng.gen_range(1..=3);
    let mut widths = vec![input];
    for _ in 1..depth {
        widths.push(rng.gen_range(1..=16));
    }
    widths.push(output);
    let layers = widths
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let act = if k + 1 == depth {
                Activation::Identity
            } else {
                hidden[rng.gen_range(0..hidden.len())]
            };
            Layer::new(
                matrix(rng, w[1], w[0], 1.5),
                DVector::from_fn(w[1], |_, _| rng.gen_range(-1.0..1.0)),
                act,
            )
        })
        .collect();
    MlpNetwork::new(input, layers).unwrap()
}

pub fn affine_network(rng: &mut ChaCha8Rng, input: usize, output: usize) -> MlpNetwork {
    let layers = vec![
        Layer::new(
            matrix(rng, 4, input, 1.0),
            DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0)),
            Activation::Identity,
        ),
        Layer::new(
            matrix(rng, output, 4, 1.0),
            DVector::from_fn(output, |_, _| rng.gen_range(-1.0..1.0)),
            Activation::Identity,
        ),
    ];
    MlpNetwork::new(input, layers).unwrap()
}

pub fn linear_controller(k: &DMatrix<f64>, c: &[f64]) -> MlpNetwork {
    MlpNetwork::new(
        k.ncols(),
        vec![Layer::new(
            k.clone(),
            DVector::from_column_slice(c),
            Activation::Identity,
        )],
    )
    .unwrap()
}

pub fn random_box(rng: &mut ChaCha8Rng, n: usize, spread: f64, max_width: f64) -> IntervalVector {
    let lo: Vec<f64> = (0..n).map(|_| rng.gen_range(-spread..spread)).collect();
    let hi = lo
        .iter()
        .map(|l| l + rng.gen_range(0.0..max_width))
        .collect();
    IntervalVector::new(lo, hi).unwrap()
}

pub fn point_in(rng: &mut ChaCha8Rng, b: &IntervalVector) -> Vec<f64> {
    (0..b.dim())
        .map(|i| {
            if b.width(i) > 0.0 {
                rng.gen_range(b.lo()[i]..=b.hi()[i])
            } else {
                b.lo()[i]
            }
        })
        .collect()
}

/// Sample points including all vertices of `b` (for small dimensions).
pub fn points_with_vertices(
    rng: &mut ChaCha8Rng,
    b: &IntervalVector,
    count: usize,
) -> Vec<Vec<f64>> {
    let n = b.dim();
    let mut out: Vec<Vec<f64>> = if n <= 6 {
        (0..1usize << n)
            .map(|m| {
                (0..n)
                    .map(|i| {
                        if m >> i & 1 == 1 {
                            b.hi()[i]
                        } else {
                            b.lo()[i]
                        }
                    })
                    .collect()
            })
            .collect()
    } else {
        vec![]
    };
    while out.len() < count {
        out.push(point_in(rng, b));
    }
    out
}

fn split(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    (m.map(|v| v.max(0.0)), m.map(|v| v.min(0.0)))
}

/// Width of the embedding box after `steps` Euler steps of `x' = Ax + Bu`
/// with `u = Kx + c` held at its interval hull over `bx`.
pub fn oracle_widths(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: &DMatrix<f64>,
    c: &DVector<f64>,
    bx: &IntervalVector,
    dt: f64,
    steps: usize,
) -> Vec<f64> {
    let n = a.nrows();
    let (lo, hi) = (
        DVector::from_column_slice(bx.lo()),
        DVector::from_column_slice(bx.hi()),
    );
    let (kp, kn) = split(k);
    let u_lo = &kp * &lo + &kn * &hi + c;
    let u_hi = &kp * &hi + &kn * &lo + c;
    let (bp, bn) = split(b);
    let drift_lo = &bp * &u_lo + &bn * &u_hi;
    let drift_hi = &bp * &u_hi + &bn * &u_lo;
    // diagonal and cooperative off-diagonal entries act on the same bound
    let mut same = DMatrix::zeros(n, n);
    let mut cross = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j || a[(i, j)] >= 0.0 {
                same[(i, j)] = a[(i, j)];
            } else {
                cross[(i, j)] = a[(i, j)];
            }
        }
    }
    let mut m = DMatrix::identity(2 * n, 2 * n);
    for (r, c, blk) in [(0, 0, &same), (0, n, &cross), (n, 0, &cross), (n, n, &same)] {
        let mut v = m.view_mut((r, c), (n, n));
        v += blk * dt;
    }
    let mut drift = DVector::zeros(2 * n);
    drift.rows_mut(0, n).copy_from(&(&drift_lo * dt));
    drift.rows_mut(n, n).copy_from(&(&drift_hi * dt));
    let mut z = DVector::zeros(2 * n);
    z.rows_mut(0, n).copy_from(&lo);
    z.rows_mut(n, n).copy_from(&hi);
    for _ in 0..steps {
        z = &m * z + &drift;
    }
    (0..n).map(|i| z[n + i] - z[i]).collect()
}

pub struct LinearCase {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub c: DVector<f64>,
    pub bx: IntervalVector,
    pub eps: Vec<f64>,
}

pub fn linear_case(r: &mut ChaCha8Rng, n: usize) -> LinearCase {
    LinearCase {
        a: matrix(r, n, n, 1.5),
        b: matrix(r, n, 1, 1.0),
        k: matrix(r, 1, n, 1.0),
        c: DVector::from_element(1, r.gen_range(-0.5..0.5)),
        bx: random_box(r, n, 1.0, 1.0),
        eps: (0..n).map(|_| r.gen_range(0.2..2.0)).collect(),
    }
}

pub struct GammaOneTrial {
    pub weighted: f64,
    pub predicted: bool,
    pub split: bool,
    /// An unsplit box must follow the oracle exactly.
    pub unsplit_matches: bool,
}

/// One random linear loop checked against the oracle with `gamma = 1` and
/// `D_p = 1`; `None` when the oracle lands too close to the threshold.
pub fn gamma_one_trial(r: &mut ChaCha8Rng, n: usize) -> Option<GammaOneTrial> {
    let (period, dt, steps) = (0.5, 0.05, 10);
    let case = linear_case(r, n);
    let net = Arc::new(linear_controller(&case.k, case.c.as_slice()));
    let w = oracle_widths(&case.a, &case.b, &case.k, &case.c, &case.bx, dt, steps);
    let weighted = w
        .iter()
        .zip(&case.eps)
        .map(|(w, e)| w / e)
        .fold(0.0, f64::max);
    if (weighted - 1.0).abs() < 1e-6 {
        return None;
    }
    let params = AlgorithmParams::evenly_spaced(
        ToleranceVector::new(case.eps.clone()).unwrap(),
        0.0,
        period,
        period,
        dt,
    )
    .unwrap()
    .with_gamma(1.0)
    .with_depths(1, 0);
    let sys: Arc<dyn OpenLoopSystem> = Arc::new(LinearSystem::new(case.a.clone(), case.b.clone()));
    let emb = ClosedLoopEmbedding::new(sys, net.clone(), &IntervalVector::point(&[]).unwrap(), dt)
        .with_coupling(ControlCoupling::FullBox);
    let tube = compute_reachable_set(&case.bx, &params, &ContinuousFactory::new(emb, net)).unwrap();
    let split = tube.stats[0].subdivisions > 0;
    let unsplit_matches = split || {
        let last = &tube.boxes[steps][0].bx;
        (0..n).all(|i| (last.width(i) - w[i]).abs() < 1e-9 * (1.0 + w[i]))
    };
    Some(GammaOneTrial {
        weighted,
        predicted: weighted > 1.0,
        split: split && tube.stats[0].leaves == 1 << n,
        unsplit_matches,
    })
}

pub const TOL: f64 = 1e-9;

pub fn pendulum() -> GenericSystem {
    let field: Arc<VectorField> = Arc::new(|x: &[f64], u: &[f64], w: &[f64]| {
        vec![x[1], -x[0].sin() - 0.3 * x[1] + u[0] + w[0]]
    });
    let ext = |i: usize, x: &[Interval], u: &[Interval], w: &[Interval]| match i {
        0 => x[1],
        _ => -x[0].sin() - x[1].scale(0.3) + u[0] + w[0],
    };
    GenericSystem::with_extension("pendulum", (2, 1, 1), field, ext)
}

pub fn systems(r: &mut ChaCha8Rng) -> Vec<(String, Arc<dyn OpenLoopSystem>)> {
    let a = matrix(r, 3, 3, 2.0);
    let b = matrix(r, 3, 2, 1.0);
    let e = matrix(r, 3, 1, 1.0);
    vec![
        ("vehicle".into(), Arc::new(VehicleSystem::default())),
        (
            "vehicle-asym".into(),
            Arc::new(VehicleSystem::new(0.7, 1.6)),
        ),
        (
            "linear".into(),
            Arc::new(LinearSystem::new(a, b).with_disturbance(e)),
        ),
        (
            "double-integrator".into(),
            Arc::new(DoubleIntegrator::default().as_linear()),
        ),
        ("pendulum".into(), Arc::new(pendulum())),
    ]
}

pub fn sample_vec(r: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(-scale..scale)).collect()
}

#[derive(Debug, Clone, Copy)]
pub enum Nesting {
    /// `x <= y <= yh <= xh`
    Lower,
    /// `yh <= xh <= x <= y`
    Upper,
    /// `x <= xh` and `yh <= y`, with `yh <= x` on axis `i`
    Across,
}

/// Tuples with `x <= y`, `yh <= xh` and `y_i = x_i`.
pub fn nested(
    r: &mut ChaCha8Rng,
    n: usize,
    i: usize,
    how: Nesting,
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let (mut x, mut xh, mut y, mut yh) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for j in 0..n {
        let mut v: Vec<f64> = (0..4).map(|_| r.gen_range(-1.5..1.5)).collect();
        v.sort_by(f64::total_cmp);
        // (x, y, yh, xh)
        let (a, b, c, d) = match (how, j == i) {
            (Nesting::Lower, false) => (v[0], v[1], v[2], v[3]),
            (Nesting::Lower, true) => (v[0], v[0], v[2], v[3]),
            (Nesting::Upper, false) => (v[2], v[3], v[0], v[1]),
            (Nesting::Upper, true) => (v[2], v[2], v[0], v[1]),
            (Nesting::Across, false) => (v[0], v[3], v[1], v[2]),
            (Nesting::Across, true) => (v[1], v[1], v[0], v[2]),
        };
        x[j] = a;
        y[j] = b;
        yh[j] = c;
        xh[j] = d;
    }
    (x, xh, y, yh)
}

pub fn ordered_pair(r: &mut ChaCha8Rng, n: usize, scale: f64) -> (Vec<f64>, Vec<f64>) {
    (0..n)
        .map(|_| {
            let (a, b) = (r.gen_range(-scale..scale), r.gen_range(-scale..scale));
            (a.min(b), a.max(b))
        })
        .unzip()
}

pub fn close_le(a: f64, b: f64) -> bool {
    a <= b + TOL * (1.0 + b.abs())
}

/// Mixed-monotonicity axioms on one random draw:
///
/// 1. `d(x, x, u, u, w, w) = f(x, u, w)`;
/// 2. `d_i` is nondecreasing in `x` (with `x_i` fixed) and nonincreasing in `xh`;
/// 3. `d_i` is nondecreasing in `(u, w)` and nonincreasing in `(uh, wh)`.
pub fn check_system(
    name: &str,
    sys: &dyn OpenLoopSystem,
    r: &mut ChaCha8Rng,
) -> Result<(), String> {
    let (n, p, q) = (sys.state_dim(), sys.input_dim(), sys.disturbance_dim());
    // i: consistency with the vector field
    let x = sample_vec(r, n, 3.0);
    let u = sample_vec(r, p, 1.0);
    let w = sample_vec(r, q, 1.0);
    let d = sys.decompose(&x, &x, &u, &u, &w, &w).unwrap();
    let f = sys.field(&x, &u, &w);
    for k in 0..n {
        if (d[k] - f[k]).abs() > TOL * (1.0 + f[k].abs()) {
            return Err(format!("{name}: d_{k} = {} but f_{k} = {}", d[k], f[k]));
        }
    }
    // ii: monotone in the state arguments
    let i = r.gen_range(0..n);
    let how = [Nesting::Lower, Nesting::Upper, Nesting::Across][r.gen_range(0..3)];
    let (x, xh, y, yh) = nested(r, n, i, how);
    let (u_lo, u_hi) = ordered_pair(r, p, 1.5);
    let (w_lo, w_hi) = ordered_pair(r, q, 1.5);
    let (ua, ub, wa, wb) = match how {
        Nesting::Lower => (u_lo.clone(), u_hi.clone(), w_lo.clone(), w_hi.clone()),
        Nesting::Upper => (u_hi.clone(), u_lo.clone(), w_hi.clone(), w_lo.clone()),
        // a lower and an upper tuple can only share degenerate inputs
        Nesting::Across => (u_lo.clone(), u_lo.clone(), w_lo.clone(), w_lo.clone()),
    };
    let lhs = sys.decompose(&x, &xh, &ua, &ub, &wa, &wb).unwrap()[i];
    let rhs = sys.decompose(&y, &yh, &ua, &ub, &wa, &wb).unwrap()[i];
    if !close_le(lhs, rhs) {
        return Err(format!("{name} ii ({how:?}, axis {i}): {lhs} > {rhs}"));
    }
    // iii: monotone in the input and disturbance arguments
    let (xl, xu) = ordered_pair(r, n, 2.0);
    let nest = |lo: &[f64], hi: &[f64], r: &mut ChaCha8Rng| -> (Vec<f64>, Vec<f64>) {
        lo.iter()
            .zip(hi)
            .map(|(&a, &b)| {
                let s = r.gen_range(a..=b);
                (s, r.gen_range(s..=b))
            })
            .unzip()
    };
    let (v_lo, v_hi) = nest(&u_lo, &u_hi, r);
    let (z_lo, z_hi) = nest(&w_lo, &w_hi, r);
    let outer = sys.decompose(&xl, &xu, &u_lo, &u_hi, &w_lo, &w_hi).unwrap()[i];
    let inner = sys.decompose(&xl, &xu, &v_lo, &v_hi, &z_lo, &z_hi).unwrap()[i];
    if !close_le(outer, inner) {
        return Err(format!("{name} iii lower: {outer} > {inner}"));
    }
    let outer = sys.decompose(&xu, &xl, &u_hi, &u_lo, &w_hi, &w_lo).unwrap()[i];
    let inner = sys.decompose(&xu, &xl, &v_hi, &v_lo, &z_hi, &z_lo).unwrap()[i];
    if !close_le(inner, outer) {
        return Err(format!("{name} iii upper: {inner} > {outer}"));
    }
    Ok(())
}
