//! Slice kernels shared by the tape and the incremental decoder.
//!
//! Both paths must produce the same arithmetic, so every reduction here runs
//! in a fixed index order.

use super::Real;

/// `out[n,m] = a[n,k] · b[k,m]`.
pub fn matmul<T: Real>(a: &[T], b: &[T], n: usize, k: usize, m: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    debug_assert_eq!(out.len(), n * m);
    out.iter_mut().for_each(|v| *v = T::zero());
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            let b_row = &b[p * m..(p + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[n,m] += a[k,n]ᵀ · b[k,m]`.
pub fn matmul_at_acc<T: Real>(a: &[T], b: &[T], k: usize, n: usize, m: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), k * n);
    debug_assert_eq!(b.len(), k * m);
    debug_assert_eq!(out.len(), n * m);
    for p in 0..k {
        let b_row = &b[p * m..(p + 1) * m];
        for (i, &av) in a[p * n..(p + 1) * n].iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let out_row = &mut out[i * m..(i + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// Transposes `a[n,m]` into `out[m,n]`.
pub fn transpose<T: Real>(a: &[T], n: usize, m: usize, out: &mut [T]) {
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = a[i * m + j];
        }
    }
}

/// Numerically stable softmax of one row, in place.
pub fn softmax_row<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Layer normalisation of one row with population variance. Returns
/// `1/sqrt(var + eps)` and writes the normalised values into `xhat`.
pub fn layer_norm_row<T: Real>(x: &[T], gain: &[T], bias: &[T], eps: T, xhat: &mut [T], out: &mut [T]) -> T {
    let d = T::of(x.len() as f64);
    let mean = x.iter().copied().sum::<T>() / d;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / d;
    let rstd = T::one() / (var + eps).sqrt();
    for j in 0..x.len() {
        xhat[j] = (x[j] - mean) * rstd;
        out[j] = xhat[j] * gain[j] + bias[j];
    }
    rstd
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// tanh approximation of GELU.
pub fn gelu<T: Real>(x: T) -> T {
    let c = T::of(GELU_C);
    let k = T::of(GELU_K);
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

pub fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::of(GELU_C);
    let k = T::of(GELU_K);
    let half = T::of(0.5);
    let three = T::of(3.0);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * k * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let eye = [1.0, 0.0, 0.0, 1.0];
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut out = [0.0; 6];
        matmul(&eye, &a, 2, 2, 3, &mut out);
        assert_eq!(out, a);
    }

    #[test]
    fn transposed_accumulate_matches_explicit() {
        // a[k=2,n=3], b[k=2,m=2]
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, -1.0, 2.0, 0.5];
        let mut at = [0.0; 6];
        transpose(&a, 2, 3, &mut at);
        let mut expect = [0.0; 6];
        matmul(&at, &b, 3, 2, 2, &mut expect);
        let mut got = [0.0; 6];
        matmul_at_acc(&a, &b, 2, 3, 2, &mut got);
        assert_eq!(got, expect);
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0f64), 0.0);
        // tanh-approximation value at 1.0
        assert!((gelu(1.0f64) - 0.841_191_990_608_276_8).abs() < 1e-12);
    }
}
