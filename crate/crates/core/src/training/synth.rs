use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nets::{AlphaGan, Embedding};
use crate::rng;
use crate::seqvol::{Label, VolumeSequence};

/// `n` i.i.d. standard-normal codes of length `z_dim`.
pub fn sample_prior(n: usize, z_dim: usize, seed: u64) -> Result<Vec<Embedding>> {
    if n == 0 {
        return Err(Error::Validation("sample_prior needs n >= 1".into()));
    }
    let mut r = rng::seeded(seed);
    Ok((0..n)
        .map(|_| Embedding::new((0..z_dim).map(|_| r.sample(StandardNormal)).collect()))
        .collect())
}

/// `n_per_class` sequences `G(z, class)` per class, ids `synth-<class>-NNN`.
pub fn synthesize_dataset(model: &AlphaGan, n_per_class: usize, seed: u64) -> Result<Vec<VolumeSequence>> {
    let mut out = Vec::with_capacity(2 * n_per_class);
    if n_per_class == 0 {
        return Ok(out);
    }
    for label in Label::ALL {
        let codes = sample_prior(n_per_class, model.config.z_dim, rng::mix(seed, label.index() as u64))?;
        for (i, z) in codes.iter().enumerate() {
            let mut seq = model.generate(z, label)?;
            seq.subject_id = format!("synth-{}-{i:03}", label.to_string().to_lowercase());
            out.push(seq);
        }
    }
    Ok(out)
}
