//! Seeded inputs shared by the benchmarks.

use fmrigan_core::nets::ArchConfig;
use fmrigan_core::rng;
use fmrigan_core::seqvol::{Label, VolumeSequence};
use fmrigan_core::tensor::Tensor;
use rand::Rng;

/// Uniform [-1, 1) tensor of the given shape.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng::seeded(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(-1.0..1.0)).collect())
}

/// Uniform [-1, 1) sequence with the dimensions of `arch`.
pub fn random_sequence(arch: &ArchConfig, label: Label, seed: u64) -> VolumeSequence {
    let t = random_tensor(&arch.input_dims, seed);
    let data = t.data().iter().map(|&v| v as f32).collect();
    VolumeSequence::new(format!("bench-{seed}"), arch.input_dims, data)
        .expect("valid dims")
        .with_label(label)
}

/// `n` points in `dim` dimensions split between two Gaussian blobs 20
/// units apart.
pub fn two_clusters(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::seeded(seed);
    (0..n)
        .map(|i| {
            let offset = if i % 2 == 0 { 0.0 } else { 20.0 };
            (0..dim)
                .map(|d| r.sample::<f64, _>(rand_distr::StandardNormal) + if d == 0 { offset } else { 0.0 })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_deterministic() {
        assert_eq!(random_tensor(&[2, 3], 1), random_tensor(&[2, 3], 1));
        let arch = ArchConfig::tiny(fmrigan_core::nets::TemporalKind::Lstm);
        assert_eq!(random_sequence(&arch, Label::Asd, 4).dims, arch.input_dims);
        assert_eq!(two_clusters(10, 3, 0).len(), 10);
    }
}
