use alloc::vec::Vec;

use super::{Real, Tensor};

/// Central-difference gradient of a scalar function, one coordinate at a
/// time: `(f(x + eps·e_i) - f(x - eps·e_i)) / 2eps`.
pub fn finite_diff_grad<T, F>(mut f: F, x: &Tensor<T>, eps: T) -> Tensor<T>
where
    T: Real,
    F: FnMut(&Tensor<T>) -> T,
{
    let two = T::of(2.0);
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        out.push((plus - minus) / (two * eps));
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}
