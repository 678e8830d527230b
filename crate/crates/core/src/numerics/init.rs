use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::Tensor;

/// Fan-in and fan-out of a weight tensor.
///
/// Rank-2 tensors are `[out, in]`; rank-4 convolution kernels are
/// `[out, in, kh, kw]` with the receptive field folded into both fans;
/// vectors count their length on both sides.
pub fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (*n, *n),
        [out, inp] => (*inp, *out),
        [out, inp, rest @ ..] => {
            let rf: usize = rest.iter().product();
            (inp * rf, out * rf)
        }
        [] => (1, 1),
    }
}

/// Xavier (Glorot) uniform initialization on `±sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_init(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    xavier_init_with(shape, &mut rng)
}

pub fn xavier_init_with<R: rand::Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    let (fan_in, fan_out) = fans(shape);
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("positive shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_tensor() {
        assert_eq!(xavier_init(&[7, 5], 11), xavier_init(&[7, 5], 11));
        assert_ne!(xavier_init(&[7, 5], 11), xavier_init(&[7, 5], 12));
    }

    #[test]
    fn square_300_is_bounded_by_a_tenth() {
        let t = xavier_init(&[300, 300], 3);
        assert!(t.data().iter().all(|v| v.abs() <= 0.1));
        assert!(t.data().iter().any(|v| v.abs() > 0.09));
    }

    #[test]
    fn mean_is_near_zero() {
        let t = xavier_init(&[300, 300], 5);
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        // uniform on ±b has variance b²/3
        let sigma = (0.1f64 * 0.1 / 3.0).sqrt() / n.sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean} outside 3σ = {}", 3.0 * sigma);
    }

    #[test]
    fn conv_fans_include_receptive_field() {
        assert_eq!(fans(&[32, 3, 3, 3]), (27, 288));
    }
}
