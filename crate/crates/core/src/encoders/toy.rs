use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::Modality;
use crate::numerics::Tensor2;

/// Deterministic stand-in features: `count` unit vectors derived from a hash
/// of `(seed, modality, index, surface)`.
pub fn toy_encode(surface: &str, modality: Modality, dim: usize, seed: u64, count: usize) -> Tensor2 {
    let mut data = Vec::with_capacity(dim * count);
    for index in 0..count {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update([modality.code()]);
        h.update((index as u64).to_le_bytes());
        h.update(surface.as_bytes());
        let digest: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        let v = unit_gaussian(&mut rng, dim);
        data.extend(v);
    }
    Tensor2::new(count, dim, data).expect("finite toy vectors")
}

pub(crate) fn unit_gaussian<R: rand::Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let a = toy_encode("weed", Modality::Image, 16, 3, 4);
        let b = toy_encode("weed", Modality::Image, 16, 3, 4);
        assert_eq!(a, b);
        assert_eq!(a.shape(), (4, 16));
    }

    #[test]
    fn distinct_inputs_distinct_vectors() {
        let a = toy_encode("weed", Modality::Image, 16, 3, 1);
        assert_ne!(a, toy_encode("coke", Modality::Image, 16, 3, 1));
        assert_ne!(a, toy_encode("weed", Modality::Speech, 16, 3, 1));
        assert_ne!(a, toy_encode("weed", Modality::Image, 16, 4, 1));
        let multi = toy_encode("weed", Modality::Image, 16, 3, 2);
        assert_ne!(multi.row(0), multi.row(1));
    }

    #[test]
    fn unit_norm() {
        let a = toy_encode("nine", Modality::Speech, 33, 0, 5);
        for r in 0..a.rows() {
            let n: f64 = a.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }
}
