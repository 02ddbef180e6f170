use super::{Element, Tensor};

/// Central-difference gradient of a scalar function:
/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every element `i`.
pub fn finite_difference_grad<T: Element>(mut f: impl FnMut(&Tensor<T>) -> T, x: &Tensor<T>, h: T) -> Tensor<T> {
    let two_h = h + h;
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.push((up - down) / two_h);
    }
    Tensor::from_parts(x.shape().to_vec(), grad)
}

/// Largest elementwise relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn max_relative_error<T: Element>(analytic: &Tensor<T>, numeric: &Tensor<T>, floor: T) -> T {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(T::zero(), T::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_unit_gradient() {
        let x = Tensor::<f64>::from_fn(&[5], |i| i as f64 * 1.3).unwrap();
        let g = finite_difference_grad(|t| t.sum(), &x, 1e-5);
        assert!(g.data().iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn square_sum_gradient() {
        let x = Tensor::<f64>::new(vec![2], vec![1.0, 2.0]).unwrap();
        let g = finite_difference_grad(|t| t.data().iter().map(|v| v * v).sum(), &x, 1e-5);
        assert!((g.data()[0] - 2.0).abs() < 1e-8);
        assert!((g.data()[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn deterministic_bitwise() {
        let x = Tensor::<f64>::from_fn(&[4], |i| (i as f64).sin()).unwrap();
        let f = |t: &Tensor<f64>| t.data().iter().map(|v| v.exp() * v).sum::<f64>();
        let a = finite_difference_grad(f, &x, 1e-6);
        let b = finite_difference_grad(f, &x, 1e-6);
        assert_eq!(a.data(), b.data());
    }
}
