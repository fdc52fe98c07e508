//! Training-set augmentation arms and the downstream classification
//! experiment that compares them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::classifier::{train_classifier, ClassifierConfig};
use super::metrics::{classification_metrics, ClassifierReport};
use crate::error::{Error, Result};
use crate::nets::{AlphaGan, TemporalKind};
use crate::rng;
use crate::seqvol::{Label, VolumeSequence};
use crate::training::synthesize_dataset;

/// Originals followed by `copies` noisy replicas of every sequence, each
/// voxel perturbed by i.i.d. N(0, sigma^2).
pub fn augment_gaussian(dataset: &[VolumeSequence], sigma: f64, copies: usize, seed: u64) -> Result<Vec<VolumeSequence>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Validation(format!("augmentation sigma must be >= 0, got {sigma}")));
    }
    let mut out = dataset.to_vec();
    for c in 0..copies {
        let mut r = rng::stream(seed, c as u64);
        for seq in dataset {
            let mut noisy = seq.clone();
            noisy.subject_id = format!("{}-noise{c}", seq.subject_id);
            for v in &mut noisy.data {
                *v = (*v as f64 + sigma * r.sample::<f64, _>(StandardNormal)) as f32;
            }
            out.push(noisy);
        }
    }
    Ok(out)
}

/// One way of enlarging the training set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AugmentArm {
    None,
    Gaussian,
    Synthetic(TemporalKind),
}

impl fmt::Display for AugmentArm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AugmentArm::None => f.write_str("none"),
            AugmentArm::Gaussian => f.write_str("gaussian"),
            AugmentArm::Synthetic(k) => f.write_str(k.slug()),
        }
    }
}

impl FromStr for AugmentArm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(AugmentArm::None),
            "gaussian" => Ok(AugmentArm::Gaussian),
            other => other
                .parse::<TemporalKind>()
                .map(AugmentArm::Synthetic)
                .map_err(|_| Error::Config(format!("unknown augmentation arm {s:?}"))),
        }
    }
}

impl Serialize for AugmentArm {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for AugmentArm {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub arms: Vec<AugmentArm>,
    /// Training-set size after augmentation; `None` keeps the real size.
    pub target_size: Option<usize>,
    pub gaussian_sigma: f64,
    pub classifier: ClassifierConfig,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            arms: vec![AugmentArm::None, AugmentArm::Gaussian],
            target_size: None,
            gaussian_sigma: 0.1,
            classifier: ClassifierConfig::default(),
            seed: 0,
        }
    }
}

/// Real sets shared by every arm.
pub struct ExperimentData<'a> {
    pub train: &'a [VolumeSequence],
    pub val: &'a [VolumeSequence],
    pub test: &'a [VolumeSequence],
}

/// Training set of `target` sequences for `arm`, or `None` when the arm has
/// no generator.
pub fn build_training_set(
    arm: AugmentArm,
    train: &[VolumeSequence],
    target: usize,
    generators: &BTreeMap<TemporalKind, AlphaGan>,
    sigma: f64,
    seed: u64,
) -> Result<Option<Vec<VolumeSequence>>> {
    let extra = target.saturating_sub(train.len());
    let mut out = train.to_vec();
    match arm {
        AugmentArm::None => {}
        AugmentArm::Gaussian => {
            if extra > 0 {
                let copies = extra.div_ceil(train.len());
                let noisy = augment_gaussian(train, sigma, copies, rng::mix(seed, 0x6A55))?;
                out.extend(noisy.into_iter().skip(train.len()).take(extra));
            }
        }
        AugmentArm::Synthetic(kind) => {
            let Some(model) = generators.get(&kind) else {
                return Ok(None);
            };
            if extra > 0 {
                let per_class = extra.div_ceil(2);
                let synth = synthesize_dataset(model, per_class, rng::mix(seed, 0x5E7))?;
                let (asd, hc): (Vec<_>, Vec<_>) = synth.into_iter().partition(|s| s.label == Some(Label::Asd));
                // alternate classes so any prefix stays balanced
                let interleaved = asd.into_iter().zip(hc).flat_map(|(a, h)| [a, h]);
                out.extend(interleaved.take(extra));
            }
        }
    }
    Ok(Some(out))
}

/// Trains one fresh classifier per arm with a shared seed and scores each
/// on the real test set. Arms without a generator are skipped with a
/// warning.
pub fn augmentation_experiment(
    data: &ExperimentData<'_>,
    generators: &BTreeMap<TemporalKind, AlphaGan>,
    cfg: &ExperimentConfig,
) -> Result<Vec<ClassifierReport>> {
    let target = cfg.target_size.unwrap_or(data.train.len());
    if target < data.train.len() {
        return Err(Error::Validation(format!(
            "target_size {target} is smaller than the training set ({})",
            data.train.len()
        )));
    }
    if data.test.is_empty() {
        return Err(Error::Validation("augmentation experiment needs a non-empty test set".into()));
    }
    let test_labels = data
        .test
        .iter()
        .map(|s| s.label.ok_or_else(|| Error::Validation(format!("test sequence {} has no label", s.subject_id))))
        .collect::<Result<Vec<Label>>>()?;
    let mut reports = Vec::new();
    for &arm in &cfg.arms {
        let Some(train) = build_training_set(arm, data.train, target, generators, cfg.gaussian_sigma, cfg.seed)? else {
            log::warn!("skipping augmentation arm {arm}: no trained generator");
            continue;
        };
        let clf = train_classifier(&train, data.val, &cfg.classifier, cfg.seed)?;
        let scores = clf.predict(data.test)?;
        reports.push(classification_metrics(&arm.to_string(), &test_labels, &scores, cfg.classifier.threshold)?);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::ArchConfig;

    fn toy(n: usize) -> Vec<VolumeSequence> {
        (0..n)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Asd } else { Label::Hc };
                let data = (0..4 * 512).map(|k| ((k + i) % 7) as f32 / 7.0).collect();
                VolumeSequence::new(format!("s{i}"), [4, 8, 8, 8], data).unwrap().with_label(label)
            })
            .collect()
    }

    #[test]
    fn zero_sigma_copies_exactly() {
        let d = toy(3);
        let out = augment_gaussian(&d, 0.0, 2, 1).unwrap();
        assert_eq!(out.len(), 9);
        for (i, s) in out.iter().enumerate() {
            assert_eq!(s.data, d[i % 3].data);
            assert_eq!(s.label, d[i % 3].label);
        }
    }

    #[test]
    fn noise_std_matches_sigma() {
        let d = toy(50);
        let out = augment_gaussian(&d, 0.1, 1, 7).unwrap();
        let diffs: Vec<f64> = d
            .iter()
            .zip(&out[50..])
            .flat_map(|(a, b)| a.data.iter().zip(&b.data).map(|(x, y)| (*y - *x) as f64))
            .collect();
        assert!(diffs.len() >= 100_000);
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let sd = (diffs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((sd - 0.1).abs() < 0.002, "{sd}");
        assert_eq!(out, augment_gaussian(&d, 0.1, 1, 7).unwrap());
    }

    #[test]
    fn arms_parse_and_print() {
        for s in ["none", "gaussian", "conv1d", "lstm", "bilstm", "attn_pe", "attn_nope"] {
            assert_eq!(s.parse::<AugmentArm>().unwrap().to_string(), s);
        }
        assert!("gan".parse::<AugmentArm>().is_err());
    }

    #[test]
    fn training_sets_reach_target_and_balance() {
        let d = toy(4);
        let mut gens = BTreeMap::new();
        gens.insert(TemporalKind::Lstm, AlphaGan::new(ArchConfig::tiny(TemporalKind::Lstm), 0).unwrap());
        let none = build_training_set(AugmentArm::None, &d, 10, &gens, 0.1, 0).unwrap().unwrap();
        assert_eq!(none, d);
        let g = build_training_set(AugmentArm::Gaussian, &d, 11, &gens, 0.1, 0).unwrap().unwrap();
        assert_eq!(g.len(), 11);
        let s = build_training_set(AugmentArm::Synthetic(TemporalKind::Lstm), &d, 10, &gens, 0.1, 0).unwrap().unwrap();
        assert_eq!(s.len(), 10);
        let asd = s[4..].iter().filter(|x| x.label == Some(Label::Asd)).count();
        assert_eq!(asd, 3);
        assert!(build_training_set(AugmentArm::Synthetic(TemporalKind::Conv1d), &d, 10, &gens, 0.1, 0).unwrap().is_none());
    }

    #[test]
    fn none_arm_equals_baseline_training() {
        let d = toy(6);
        let cfg = ExperimentConfig {
            arms: vec![AugmentArm::None, AugmentArm::Synthetic(TemporalKind::Bilstm)],
            classifier: ClassifierConfig { pool_factor: 2, epochs: 3, ..Default::default() },
            ..Default::default()
        };
        let data = ExperimentData { train: &d, val: &d[..2], test: &d[2..] };
        let reports = augmentation_experiment(&data, &BTreeMap::new(), &cfg).unwrap();
        assert_eq!(reports.len(), 1);
        let clf = train_classifier(&d, &d[..2], &cfg.classifier, cfg.seed).unwrap();
        let labels: Vec<Label> = d[2..].iter().map(|s| s.label.unwrap()).collect();
        let base = classification_metrics("none", &labels, &clf.predict(&d[2..]).unwrap(), 0.5).unwrap();
        assert_eq!(reports[0], base);
    }
}
