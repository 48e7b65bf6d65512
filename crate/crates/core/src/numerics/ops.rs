//! Value-level vector kernels shared by the graph ops and the probes.

use alloc::vec::Vec;

use super::{NumericsError, Real};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

pub fn norm<T: Real>(x: &[T]) -> T {
    dot(x, x).sqrt()
}

/// `x / ||x||`. Zero (or non-finite) norms are rejected.
pub fn l2_normalize<T: Real>(x: &[T]) -> Result<Vec<T>, NumericsError> {
    let n = norm(x);
    if n <= T::zero() || !n.is_finite() {
        return Err(NumericsError::ZeroNorm);
    }
    Ok(x.iter().map(|&v| v / n).collect())
}

/// Softmax of `x / temperature` with max-subtraction.
pub fn row_softmax<T: Real>(x: &[T], temperature: T) -> Result<Vec<T>, NumericsError> {
    if temperature.is_nan() || temperature <= T::zero() {
        return Err(NumericsError::Temperature(temperature.as_f64()));
    }
    let mut out: Vec<T> = x.iter().map(|&v| v / temperature).collect();
    softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn softmax_in_place<T: Real>(x: &mut [T]) {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

/// `log(sum(exp(x)))` with max-subtraction.
pub fn log_sum_exp<T: Real>(x: &[T]) -> T {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = x.iter().map(|&v| (v - max).exp()).sum();
    max + s.ln()
}

/// Mean and reciprocal standard deviation (population variance) of one row.
pub(crate) fn moments<T: Real>(x: &[T], eps: T) -> (T, T) {
    let n = T::lit(x.len() as f64);
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (mean, T::one() / (var + eps).sqrt())
}

/// `gain * (x - mean) / sqrt(var + eps) + bias` over one vector.
pub fn layer_norm<T: Real>(x: &[T], gain: &[T], bias: &[T], eps: T) -> Result<Vec<T>, NumericsError> {
    if gain.len() != x.len() || bias.len() != x.len() {
        return Err(NumericsError::Mismatch {
            op: "layer_norm",
            left: alloc::vec![x.len()],
            right: alloc::vec![gain.len(), bias.len()],
        });
    }
    let (mean, rstd) = moments(x, eps);
    Ok(x.iter()
        .zip(gain.iter().zip(bias))
        .map(|(&v, (&g, &b))| (v - mean) * rstd * g + b)
        .collect())
}

/// Tanh approximation of the Gaussian error linear unit.
#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let inner = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    T::lit(0.5) * x * (T::one() + tanh(inner))
}

/// `tanh` from one exponential of a non-positive argument; the absolute
/// error stays within a few ulps of 1, which is all GELU needs, and it is
/// several times cheaper than the libm routine.
#[inline]
fn tanh<T: Real>(u: T) -> T {
    let e = (T::lit(-2.0) * u.abs()).exp();
    let t = (T::one() - e) / (T::one() + e);
    if u < T::zero() {
        -t
    } else {
        t
    }
}

#[inline]
pub fn gelu_grad<T: Real>(x: T) -> T {
    let inner = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    let th = tanh(inner);
    let dinner = T::lit(GELU_C) * (T::one() + T::lit(3.0 * GELU_A) * x * x);
    T::lit(0.5) * (T::one() + th) + T::lit(0.5) * x * (T::one() - th * th) * dinner
}
