use serde::{Deserialize, Serialize};

use super::volume::VolumeSequence;

/// Affine map `normalized = (x - offset) / scale`, clamped to [-1, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub offset: f64,
    pub scale: f64,
}

impl NormParams {
    pub fn apply(&self, x: f64) -> f64 {
        ((x - self.offset) / self.scale).clamp(-1.0, 1.0)
    }

    pub fn invert(&self, y: f64) -> f64 {
        y * self.scale + self.offset
    }
}

/// Linear-interpolated percentile of sorted data, `q` in [0, 100].
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Maps the 1st..99th percentile range of all voxel values onto [-1, 1].
/// A sequence whose percentiles coincide maps to all zeros.
pub fn normalize_sequence(seq: &VolumeSequence) -> (VolumeSequence, NormParams) {
    let mut sorted: Vec<f64> = seq.data.iter().map(|&v| v as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let lo = percentile_sorted(&sorted, 1.0);
    let hi = percentile_sorted(&sorted, 99.0);
    let params = if hi > lo {
        NormParams {
            offset: 0.5 * (lo + hi),
            scale: 0.5 * (hi - lo),
        }
    } else {
        NormParams {
            offset: lo,
            scale: 1.0,
        }
    };
    let mut out = seq.clone();
    if hi > lo {
        out.data.iter_mut().for_each(|v| *v = params.apply(*v as f64) as f32);
    } else {
        out.data.iter_mut().for_each(|v| *v = 0.0);
    }
    (out, params)
}

pub fn denormalize_sequence(seq: &VolumeSequence, params: NormParams) -> VolumeSequence {
    let mut out = seq.clone();
    out.data
        .iter_mut()
        .for_each(|v| *v = params.invert(*v as f64) as f32);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqvol::phantom::{make_phantom, PhantomSpec};

    #[test]
    fn constant_maps_to_zero() {
        let seq = VolumeSequence::new("c", [2, 2, 2, 2], vec![5.0; 16]).unwrap();
        let (n, p) = normalize_sequence(&seq);
        assert!(n.data.iter().all(|&v| v == 0.0));
        assert_eq!(p, NormParams { offset: 5.0, scale: 1.0 });
    }

    #[test]
    fn symmetric_pair_is_unchanged_up_to_clamping() {
        let seq = VolumeSequence::new("p", [1, 1, 1, 2], vec![-1.0, 1.0]).unwrap();
        let (n, p) = normalize_sequence(&seq);
        assert_eq!(n.data, vec![-1.0, 1.0]);
        assert!(p.offset.abs() < 1e-12);
    }

    #[test]
    fn inverse_recovers_unclamped_phantom_voxels() {
        let mut spec = PhantomSpec::desk();
        spec.n_subjects_per_class = 1;
        spec.noise_sigma = 0.3;
        let (seqs, _, _) = make_phantom(&spec).unwrap();
        let (n, p) = normalize_sequence(&seqs[0]);
        assert!(n.data.iter().all(|v| (-1.0..=1.0).contains(v)));
        let back = denormalize_sequence(&n, p);
        let (mut checked, mut clamped) = (0, 0);
        for ((&orig, &rec), &y) in seqs[0].data.iter().zip(&back.data).zip(&n.data) {
            if y.abs() >= 1.0 {
                clamped += 1;
                continue;
            }
            checked += 1;
            let rel = ((orig - rec) as f64).abs() / (orig as f64).abs().max(1.0);
            assert!(rel < 1e-5, "orig {orig} rec {rec}");
        }
        assert!(checked > 0);
        // about 2% of voxels sit beyond the 1st/99th percentiles
        assert!(clamped as f64 <= 0.03 * seqs[0].data.len() as f64);
    }

    proptest::proptest! {
        #[test]
        fn output_in_unit_interval(values in proptest::collection::vec(-1e4f32..1e4, 1..200)) {
            let n = values.len();
            let seq = VolumeSequence::new("r", [1, 1, 1, n], values).unwrap();
            let (out, _) = normalize_sequence(&seq);
            proptest::prop_assert!(out.data.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }
}
