//! Interval arithmetic, order relations, norms and box manipulation.
//!
//! Everything downstream works on axis-aligned boxes `[lo, hi]` in `R^n`.
//! Two kinds of "pairs of vectors" show up:
//!
//! - [`IntervalVector`] is a proper box: `lo <= hi` componentwise, all entries
//!   finite.
//! - [`EmbeddingState`] is a point `(x_lo, x_hi)` of the doubled state space.
//!   It may be ordered either way (`x_lo <= x_hi` or `x_hi <= x_lo`), because
//!   decomposition functions are evaluated with swapped arguments for the upper
//!   half of an embedding system. Mixed orderings are rejected.
//!
//! Arithmetic is plain `f64` without outward rounding.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntervalError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("non-finite bound in component {index}")]
    NonFinite { index: usize },
    #[error("crossed bounds in component {index}: lo {lo} > hi {hi}")]
    Crossed { index: usize, lo: f64, hi: f64 },
    #[error("pair is neither lower- nor upper-ordered (mixed ordering)")]
    MixedOrder,
    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("empty list of boxes")]
    Empty,
    #[error("tolerance entry {index} is negative or NaN: {value}")]
    BadTolerance { index: usize, value: f64 },
}

/// Closed scalar interval `[lo, hi]`.
///
/// Used by interval extensions of vector fields. Endpoints may be equal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    /// Builds `[lo, hi]`. Panics in debug builds if `lo > hi`.
    #[inline]
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(
            lo <= hi || lo.is_nan() || hi.is_nan(),
            "crossed interval [{lo}, {hi}]"
        );
        Self { lo, hi }
    }

    #[inline]
    pub fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    /// Smallest interval containing both endpoints, whatever their order.
    #[inline]
    pub fn spanning(a: f64, b: f64) -> Self {
        if a <= b {
            Self { lo: a, hi: b }
        } else {
            Self { lo: b, hi: a }
        }
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    #[inline]
    pub fn mid(&self) -> f64 {
        self.lo + 0.5 * (self.hi - self.lo)
    }

    #[inline]
    pub fn is_valid(&self) -> bool {
        self.lo <= self.hi
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    #[inline]
    pub fn hull(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }

    /// Image under a non-decreasing function.
    #[inline]
    pub fn map_increasing(&self, f: impl Fn(f64) -> f64) -> Interval {
        Interval {
            lo: f(self.lo),
            hi: f(self.hi),
        }
    }

    pub fn sin(&self) -> Interval {
        // sin(x) = cos(x - pi/2)
        self.shifted_cos(-std::f64::consts::FRAC_PI_2)
    }

    pub fn cos(&self) -> Interval {
        self.shifted_cos(0.0)
    }

    // Range of cos(x + shift) over self. Extrema of cos sit at multiples of pi.
    fn shifted_cos(&self, shift: f64) -> Interval {
        use std::f64::consts::PI;
        let a = self.lo + shift;
        let b = self.hi + shift;
        if b - a >= 2.0 * PI {
            return Interval::new(-1.0, 1.0);
        }
        let (ca, cb) = (a.cos(), b.cos());
        let mut lo = ca.min(cb);
        let mut hi = ca.max(cb);
        // smallest k with k*pi >= a
        let mut k = (a / PI).ceil();
        while k * PI <= b {
            if (k as i64).rem_euclid(2) == 0 {
                hi = 1.0;
            } else {
                lo = -1.0;
            }
            k += 1.0;
        }
        Interval::new(lo, hi)
    }

    /// `atan` is increasing on the whole line.
    pub fn atan(&self) -> Interval {
        self.map_increasing(f64::atan)
    }

    /// `tan` restricted to `(-pi/2, pi/2)`, where it is increasing.
    pub fn tan(&self) -> Interval {
        debug_assert!(
            self.lo > -std::f64::consts::FRAC_PI_2 && self.hi < std::f64::consts::FRAC_PI_2
        );
        self.map_increasing(f64::tan)
    }

    pub fn scale(&self, c: f64) -> Interval {
        if c >= 0.0 {
            Interval {
                lo: c * self.lo,
                hi: c * self.hi,
            }
        } else {
            Interval {
                lo: c * self.hi,
                hi: c * self.lo,
            }
        }
    }
}

impl Add for Interval {
    type Output = Interval;
    #[inline]
    fn add(self, rhs: Interval) -> Interval {
        Interval {
            lo: self.lo + rhs.lo,
            hi: self.hi + rhs.hi,
        }
    }
}

impl Sub for Interval {
    type Output = Interval;
    #[inline]
    fn sub(self, rhs: Interval) -> Interval {
        Interval {
            lo: self.lo - rhs.hi,
            hi: self.hi - rhs.lo,
        }
    }
}

impl Neg for Interval {
    type Output = Interval;
    #[inline]
    fn neg(self) -> Interval {
        Interval {
            lo: -self.hi,
            hi: -self.lo,
        }
    }
}

impl Mul for Interval {
    type Output = Interval;
    fn mul(self, rhs: Interval) -> Interval {
        let p = [
            self.lo * rhs.lo,
            self.lo * rhs.hi,
            self.hi * rhs.lo,
            self.hi * rhs.hi,
        ];
        let lo = p.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Interval { lo, hi }
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// Axis-aligned box `[lo, hi]` in `R^n` with finite entries and `lo <= hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct IntervalVector {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl TryFrom<RawBox> for IntervalVector {
    type Error = IntervalError;
    fn try_from(raw: RawBox) -> Result<Self, Self::Error> {
        IntervalVector::new(raw.lo, raw.hi)
    }
}

impl From<IntervalVector> for RawBox {
    fn from(b: IntervalVector) -> Self {
        RawBox { lo: b.lo, hi: b.hi }
    }
}

impl IntervalVector {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, IntervalError> {
        if lo.len() != hi.len() {
            return Err(IntervalError::DimensionMismatch {
                expected: lo.len(),
                actual: hi.len(),
            });
        }
        for (index, (&l, &h)) in lo.iter().zip(&hi).enumerate() {
            if !l.is_finite() || !h.is_finite() {
                return Err(IntervalError::NonFinite { index });
            }
            if l > h {
                return Err(IntervalError::Crossed {
                    index,
                    lo: l,
                    hi: h,
                });
            }
        }
        Ok(Self { lo, hi })
    }

    /// Degenerate box `[x, x]`.
    pub fn point(x: &[f64]) -> Result<Self, IntervalError> {
        Self::new(x.to_vec(), x.to_vec())
    }

    pub fn from_intervals(items: &[Interval]) -> Result<Self, IntervalError> {
        Self::new(
            items.iter().map(|i| i.lo).collect(),
            items.iter().map(|i| i.hi).collect(),
        )
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    #[inline]
    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    #[inline]
    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    #[inline]
    pub fn component(&self, i: usize) -> Interval {
        Interval {
            lo: self.lo[i],
            hi: self.hi[i],
        }
    }

    pub fn intervals(&self) -> Vec<Interval> {
        (0..self.dim()).map(|i| self.component(i)).collect()
    }

    #[inline]
    pub fn width(&self, i: usize) -> f64 {
        self.hi[i] - self.lo[i]
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).collect()
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| l + (h - l) / 2.0)
            .collect()
    }

    /// Membership with an absolute slack on every face.
    pub fn contains_point(&self, x: &[f64], slack: f64) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&v, (&l, &h))| v >= l - slack && v <= h + slack)
    }

    /// Largest face violation of `x` (non-positive when `x` is inside).
    pub fn violation(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&v, (&l, &h))| (l - v).max(v - h))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains_box(&self, other: &IntervalVector, slack: f64) -> bool {
        other.dim() == self.dim()
            && (0..self.dim())
                .all(|i| other.lo[i] >= self.lo[i] - slack && other.hi[i] <= self.hi[i] + slack)
    }

    /// Product of widths over the selected coordinates.
    pub fn volume(&self, coords: &[usize]) -> f64 {
        coords.iter().map(|&i| self.width(i)).product()
    }

    pub fn hull_with(&self, other: &IntervalVector) -> IntervalVector {
        IntervalVector {
            lo: self
                .lo
                .iter()
                .zip(&other.lo)
                .map(|(a, b)| a.min(*b))
                .collect(),
            hi: self
                .hi
                .iter()
                .zip(&other.hi)
                .map(|(a, b)| a.max(*b))
                .collect(),
        }
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.lo, self.hi)
    }
}

impl fmt::Display for IntervalVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.dim() {
            if i > 0 {
                write!(f, " x ")?;
            }
            write!(f, "{}", self.component(i))?;
        }
        Ok(())
    }
}

/// Order class of a pair in the doubled space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairOrder {
    /// `x_lo == x_hi`.
    Degenerate,
    /// `x_lo <= x_hi`, not all equal.
    Lower,
    /// `x_hi <= x_lo`, not all equal.
    Upper,
}

/// Classifies `(a, b)`; `None` if the pair is mixed (neither `a <= b` nor `b <= a`).
pub fn pair_order(a: &[f64], b: &[f64]) -> Option<PairOrder> {
    let mut le = true;
    let mut ge = true;
    for (x, y) in a.iter().zip(b) {
        if x < y {
            ge = false;
        } else if x > y {
            le = false;
        } else if x.is_nan() || y.is_nan() {
            return None;
        }
    }
    match (le, ge) {
        (true, true) => Some(PairOrder::Degenerate),
        (true, false) => Some(PairOrder::Lower),
        (false, true) => Some(PairOrder::Upper),
        (false, false) => None,
    }
}

/// A point `(x_lo, x_hi)` of the embedding space `R^{2n}` restricted to `T^{2n}`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingState {
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
}

impl EmbeddingState {
    pub fn new(x_lo: Vec<f64>, x_hi: Vec<f64>) -> Result<Self, IntervalError> {
        if x_lo.len() != x_hi.len() {
            return Err(IntervalError::DimensionMismatch {
                expected: x_lo.len(),
                actual: x_hi.len(),
            });
        }
        pair_order(&x_lo, &x_hi).ok_or(IntervalError::MixedOrder)?;
        Ok(Self { x_lo, x_hi })
    }

    pub fn from_box(b: &IntervalVector) -> Self {
        Self {
            x_lo: b.lo.clone(),
            x_hi: b.hi.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.x_lo.len()
    }

    pub fn order(&self) -> Option<PairOrder> {
        pair_order(&self.x_lo, &self.x_hi)
    }

    /// Swapped pair `(x_hi, x_lo)`.
    pub fn swapped(&self) -> Self {
        Self {
            x_lo: self.x_hi.clone(),
            x_hi: self.x_lo.clone(),
        }
    }

    /// Converts an ordered state back into a box.
    pub fn to_box(&self) -> Result<IntervalVector, IntervalError> {
        IntervalVector::new(self.x_lo.clone(), self.x_hi.clone())
    }
}

/// Per-axis width tolerances `eps_i` in `[0, inf]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToleranceVector {
    eps: Vec<f64>,
}

impl ToleranceVector {
    pub fn new(eps: Vec<f64>) -> Result<Self, IntervalError> {
        for (index, &value) in eps.iter().enumerate() {
            if value.is_nan() || value < 0.0 {
                return Err(IntervalError::BadTolerance { index, value });
            }
        }
        Ok(Self { eps })
    }

    pub fn uniform(n: usize, value: f64) -> Result<Self, IntervalError> {
        Self::new(vec![value; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.eps
    }

    pub fn dim(&self) -> usize {
        self.eps.len()
    }

    pub fn has_zero(&self) -> bool {
        self.eps.contains(&0.0)
    }
}

/// `max_i |x_i| / eps_i`.
///
/// An infinite `eps_i` masks the component. A zero `eps_i` contributes `0`
/// when `x_i == 0` and `+inf` otherwise.
pub fn weighted_inf_norm(x: &[f64], eps: &ToleranceVector) -> f64 {
    debug_assert_eq!(x.len(), eps.dim());
    x.iter()
        .zip(eps.as_slice())
        .map(|(&v, &e)| {
            let a = v.abs();
            if e.is_infinite() || a == 0.0 {
                0.0
            } else if e == 0.0 {
                f64::INFINITY
            } else {
                a / e
            }
        })
        .fold(0.0, f64::max)
}

/// Weighted maximum width `||hi - lo||_{inf,eps}` of a box.
pub fn weighted_width(b: &IntervalVector, eps: &ToleranceVector) -> f64 {
    weighted_inf_norm(&b.widths(), eps)
}

/// The l-infinity matrix measure `max_i { A_ii + sum_{j != i} |A_ij| }`.
pub fn matrix_measure_inf(a: &DMatrix<f64>) -> f64 {
    assert_eq!(a.nrows(), a.ncols(), "matrix measure needs a square matrix");
    (0..a.nrows())
        .map(|i| {
            let off: f64 = (0..a.ncols())
                .filter(|&j| j != i)
                .map(|j| a[(i, j)].abs())
                .sum();
            a[(i, i)] + off
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Induced l-infinity norm (max absolute row sum). Works for rectangular matrices.
pub fn matrix_norm_inf(a: &DMatrix<f64>) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Bisects every axis at its midpoint and returns the `2^n` sub-boxes.
///
/// Sub-box `k` takes the upper half of axis `a` when bit `n - 1 - a` of `k` is
/// set, so the first axis varies slowest.
pub fn uniform_divide(b: &IntervalVector) -> Vec<IntervalVector> {
    let n = b.dim();
    let mid = b.midpoint();
    (0..1usize << n)
        .map(|k| {
            let mut lo = Vec::with_capacity(n);
            let mut hi = Vec::with_capacity(n);
            for a in 0..n {
                if (k >> (n - 1 - a)) & 1 == 1 {
                    lo.push(mid[a]);
                    hi.push(b.hi[a]);
                } else {
                    lo.push(b.lo[a]);
                    hi.push(mid[a]);
                }
            }
            IntervalVector { lo, hi }
        })
        .collect()
}

/// `x` with component `i` replaced by `xhat[i]`.
pub fn face_replace(x: &[f64], xhat: &[f64], i: usize) -> Result<Vec<f64>, IntervalError> {
    if x.len() != xhat.len() {
        return Err(IntervalError::DimensionMismatch {
            expected: x.len(),
            actual: xhat.len(),
        });
    }
    if i >= x.len() {
        return Err(IntervalError::IndexOutOfRange {
            index: i,
            dim: x.len(),
        });
    }
    let mut out = x.to_vec();
    out[i] = xhat[i];
    Ok(out)
}

/// Tightest box containing every input box.
pub fn interval_hull<'a, I>(boxes: I) -> Result<IntervalVector, IntervalError>
where
    I: IntoIterator<Item = &'a IntervalVector>,
{
    let mut it = boxes.into_iter();
    let first = it.next().ok_or(IntervalError::Empty)?.clone();
    it.try_fold(first, |acc, b| {
        if b.dim() != acc.dim() {
            return Err(IntervalError::DimensionMismatch {
                expected: acc.dim(),
                actual: b.dim(),
            });
        }
        Ok(acc.hull_with(b))
    })
}
