//! Dense inner loops. Eight independent accumulators let the compiler
//! vectorize the reductions without reassociating floating point sums.

use super::Real;

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail = tail + *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * *xi;
    }
}

/// `w[m,k] · x[k]`
pub fn matvec<T: Real>(w: &[T], x: &[T], rows: usize, out: &mut [T]) {
    let k = x.len();
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        *o = dot(&w[r * k..(r + 1) * k], x);
    }
}

/// `x[k] · w[k,n]`
pub fn vecmat<T: Real>(x: &[T], w: &[T], n: usize, out: &mut [T]) {
    out.iter_mut().for_each(|o| *o = T::zero());
    for (p, &xp) in x.iter().enumerate() {
        if xp != T::zero() {
            axpy(xp, &w[p * n..(p + 1) * n], out);
        }
    }
}

pub fn sum_f64<T: Real>(x: &[T]) -> f64 {
    x.iter().map(|v| v.f64()).sum()
}

/// Softmax of one row, normalized in f64.
pub fn softmax_into<T: Real>(x: &[T], out: &mut [T]) {
    let max = x.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut total = 0f64;
    for (o, &v) in out.iter_mut().zip(x) {
        let e = (v - max).exp();
        total += e.f64();
        *o = e;
    }
    let inv = T::of(1.0 / total);
    out.iter_mut().for_each(|o| *o = *o * inv);
}

/// `log Σ exp(x)` in f64.
pub fn log_sum_exp<T: Real>(x: &[T]) -> f64 {
    let max = x.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
    max + x.iter().map(|v| (v.f64() - max).exp()).sum::<f64>().ln()
}

pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}
