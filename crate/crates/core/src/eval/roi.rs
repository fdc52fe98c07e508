//! Region-of-interest condition contrasts: BIO versus SCRAM z-scores and
//! t-tests.

use serde::{Deserialize, Serialize};

use super::stats::{two_sample_ttest, VarianceModel};
use crate::error::{Error, Result};
use crate::seqvol::{Condition, Parcellation, StimulusSchedule, VolumeSequence};

/// Per-frame mean over the voxels of `region_id`.
pub fn roi_mean_series(seq: &VolumeSequence, parcellation: &Parcellation, region_id: i32) -> Result<Vec<f64>> {
    if seq.spatial_dims() != parcellation.dims {
        return Err(Error::Validation(format!(
            "sequence {} has spatial dims {:?}, parcellation has {:?}",
            seq.subject_id,
            seq.spatial_dims(),
            parcellation.dims
        )));
    }
    let voxels = parcellation.voxels(region_id);
    if voxels.is_empty() {
        let name = parcellation
            .region_names
            .get(&region_id)
            .map(String::as_str)
            .unwrap_or("<unnamed>");
        return Err(Error::Validation(format!("region {region_id} ({name}) has no voxels")));
    }
    Ok((0..seq.frames())
        .map(|t| {
            let frame = seq.frame(t);
            voxels.iter().map(|&v| frame[v] as f64).sum::<f64>() / voxels.len() as f64
        })
        .collect())
}

/// `(x - mean) / std` with the population standard deviation; a constant
/// series maps to zeros.
pub fn zscore_series(series: &[f64]) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(Error::Validation(format!("z-score needs at least 2 frames, got {}", series.len())));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd <= f64::EPSILON * mean.abs().max(1.0) {
        return Ok(vec![0.0; series.len()]);
    }
    Ok(series.iter().map(|x| (x - mean) / sd).collect())
}

/// Whether the t-test compares pooled frames or per-subject means.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingUnit {
    #[default]
    Frames,
    Subjects,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TTestOptions {
    pub variance: VarianceModel,
    pub unit: SamplingUnit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionContrast {
    pub region: String,
    pub mean_z_bio: f64,
    pub mean_z_scram: f64,
    pub t_statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub n_bio_frames: usize,
    pub n_scram_frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastReport {
    pub rows: Vec<RegionContrast>,
}

/// Resolves a region given by name or by numeric id.
pub fn resolve_region(parcellation: &Parcellation, region: &str) -> Result<i32> {
    if let Some(id) = parcellation.region_id(region) {
        return Ok(id);
    }
    match region.parse::<i32>() {
        Ok(id) if id != 0 && parcellation.labels.contains(&id) => Ok(id),
        _ => Err(Error::Validation(format!("unknown region {region:?}"))),
    }
}

/// z-scored ROI values of each subject grouped by condition.
struct RegionSamples {
    bio: Vec<Vec<f64>>,
    scram: Vec<Vec<f64>>,
}

fn region_samples(
    dataset: &[VolumeSequence],
    schedule: &StimulusSchedule,
    parcellation: &Parcellation,
    region_id: i32,
) -> Result<RegionSamples> {
    let bio_frames = schedule.shifted_frames(Condition::Bio);
    let scram_frames = schedule.shifted_frames(Condition::Scram);
    let mut out = RegionSamples { bio: Vec::new(), scram: Vec::new() };
    for seq in dataset {
        if seq.frames() != schedule.len() {
            return Err(Error::Validation(format!(
                "sequence {} has {} frames, schedule has {}",
                seq.subject_id,
                seq.frames(),
                schedule.len()
            )));
        }
        let z = zscore_series(&roi_mean_series(seq, parcellation, region_id)?)?;
        out.bio.push(bio_frames.iter().map(|&f| z[f]).collect());
        out.scram.push(scram_frames.iter().map(|&f| z[f]).collect());
    }
    Ok(out)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn contrast(
    dataset: &[VolumeSequence],
    schedule: &StimulusSchedule,
    parcellation: &Parcellation,
    regions: &[String],
    test: Option<TTestOptions>,
) -> Result<ContrastReport> {
    if dataset.is_empty() {
        return Err(Error::Validation("contrast needs at least one sequence".into()));
    }
    schedule.require_contrast(1)?;
    let mut rows = Vec::with_capacity(regions.len());
    for region in regions {
        let id = resolve_region(parcellation, region)?;
        let s = region_samples(dataset, schedule, parcellation, id)?;
        let subj_bio: Vec<f64> = s.bio.iter().map(|v| mean(v)).collect();
        let subj_scram: Vec<f64> = s.scram.iter().map(|v| mean(v)).collect();
        let pooled_bio: Vec<f64> = s.bio.concat();
        let pooled_scram: Vec<f64> = s.scram.concat();
        let (t_statistic, p_value) = match test {
            None => (None, None),
            Some(opts) => {
                let (a, b) = match opts.unit {
                    SamplingUnit::Frames => (&pooled_bio, &pooled_scram),
                    SamplingUnit::Subjects => (&subj_bio, &subj_scram),
                };
                let r = two_sample_ttest(a, b, opts.variance)?;
                (Some(r.t), Some(r.p))
            }
        };
        rows.push(RegionContrast {
            region: region.clone(),
            mean_z_bio: mean(&subj_bio),
            mean_z_scram: mean(&subj_scram),
            t_statistic,
            p_value,
            n_bio_frames: pooled_bio.len(),
            n_scram_frames: pooled_scram.len(),
        });
    }
    Ok(ContrastReport { rows })
}

/// Across-subject means of the per-subject average z over BIO and over
/// SCRAM frames (lag-shifted; REST frames excluded).
pub fn condition_mean_z(
    dataset: &[VolumeSequence],
    schedule: &StimulusSchedule,
    parcellation: &Parcellation,
    regions: &[String],
) -> Result<ContrastReport> {
    contrast(dataset, schedule, parcellation, regions, None)
}

/// Condition means plus an unpaired two-tailed BIO-versus-SCRAM t-test.
pub fn bio_scram_ttest(
    dataset: &[VolumeSequence],
    schedule: &StimulusSchedule,
    parcellation: &Parcellation,
    regions: &[String],
    opts: TTestOptions,
) -> Result<ContrastReport> {
    contrast(dataset, schedule, parcellation, regions, Some(opts))
}

impl ContrastReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "region",
            "mean_z_bio",
            "mean_z_scram",
            "t_statistic",
            "p_value",
            "n_bio_frames",
            "n_scram_frames",
        ])
        .expect("in-memory write");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.region.clone(),
                r.mean_z_bio.to_string(),
                r.mean_z_scram.to_string(),
                opt(r.t_statistic),
                opt(r.p_value),
                r.n_bio_frames.to_string(),
                r.n_scram_frames.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqvol::{make_phantom, ClassAmplitude, PhantomSpec};
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn two_voxel_parc() -> Parcellation {
        let mut labels = vec![0; 8];
        labels[0] = 1;
        labels[5] = 1;
        labels[3] = 2;
        Parcellation::new([2, 2, 2], labels, BTreeMap::from([(1, "a".into()), (2, "b".into())])).unwrap()
    }

    #[test]
    fn mean_of_two_voxels() {
        let mut s = VolumeSequence::zeros("s", [3, 2, 2, 2]);
        for t in 0..3 {
            s.data[t * 8] = 1.0;
            s.data[t * 8 + 5] = 3.0;
            s.data[t * 8 + 3] = t as f32;
        }
        let p = two_voxel_parc();
        assert_eq!(roi_mean_series(&s, &p, 1).unwrap(), vec![2.0; 3]);
        assert_eq!(roi_mean_series(&s, &p, 2).unwrap(), vec![0.0, 1.0, 2.0]);
        let err = roi_mean_series(&s, &p, 7).unwrap_err().to_string();
        assert!(err.contains("region 7"), "{err}");
    }

    #[test]
    fn zscore_examples() {
        assert_eq!(zscore_series(&[1.0, 3.0, 1.0, 3.0]).unwrap(), vec![-1.0, 1.0, -1.0, 1.0]);
        assert_eq!(zscore_series(&[4.0; 5]).unwrap(), vec![0.0; 5]);
        assert!(zscore_series(&[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn zscore_moments(x in prop::collection::vec(-100.0f64..100.0, 2..60)) {
            let z = zscore_series(&x).unwrap();
            let n = z.len() as f64;
            let m = z.iter().sum::<f64>() / n;
            let sd = (z.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!(m.abs() < 1e-10);
            prop_assert!((sd - 1.0).abs() < 1e-10 || z.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn direct_condition_averaging() {
        let sched = StimulusSchedule::new(vec![Condition::Scram, Condition::Bio, Condition::Scram, Condition::Bio], 0).unwrap();
        let mut s = VolumeSequence::zeros("s", [4, 2, 2, 2]);
        for (t, v) in [1.0f32, 3.0, 1.0, 3.0].iter().enumerate() {
            s.data[t * 8] = *v;
            s.data[t * 8 + 5] = *v;
        }
        let r = condition_mean_z(&[s], &sched, &two_voxel_parc(), &["a".into()]).unwrap();
        assert_eq!((r.rows[0].mean_z_scram, r.rows[0].mean_z_bio), (-1.0, 1.0));
        assert_eq!(r.rows[0].t_statistic, None);
    }

    #[test]
    fn z_budget_sums_to_zero() {
        let spec = PhantomSpec { n_subjects_per_class: 1, ..PhantomSpec::desk() };
        let (subs, _, parc) = make_phantom(&spec).unwrap();
        let mut conds = vec![Condition::Bio; 6];
        conds.extend([Condition::Rest; 6]);
        conds.extend([Condition::Scram; 12]);
        let sched = StimulusSchedule::new(conds, 2).unwrap();
        let z = zscore_series(&roi_mean_series(&subs[0], &parc, 1).unwrap()).unwrap();
        let shifted = sched.shifted();
        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        for (f, c) in shifted.iter().enumerate() {
            *sums.entry(format!("{c:?}")).or_default() += z[f];
        }
        assert!(sums.values().sum::<f64>().abs() < 1e-8);
    }

    #[test]
    fn noise_free_phantom_signs() {
        let mut spec = PhantomSpec { noise_sigma: 0.0, n_subjects_per_class: 2, ..PhantomSpec::desk() };
        spec.rois[2].amplitude_by_class = ClassAmplitude::same(0.0);
        let (subs, sched, parc) = make_phantom(&spec).unwrap();
        let regions = vec!["roi_bio".to_string(), "roi_scram".to_string()];
        let r = bio_scram_ttest(&subs, &sched, &parc, &regions, TTestOptions::default()).unwrap();
        assert!(r.rows[0].mean_z_bio > 0.0 && r.rows[0].mean_z_scram < 0.0);
        assert!(r.rows[1].mean_z_bio < 0.0 && r.rows[1].mean_z_scram > 0.0);
        assert!(r.rows[0].p_value.unwrap() < 1e-6);
        let csv = r.to_csv();
        assert!(csv.starts_with("region,mean_z_bio,mean_z_scram,t_statistic,p_value"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn subject_level_unit_counts_subjects() {
        let spec = PhantomSpec { n_subjects_per_class: 2, ..PhantomSpec::desk() };
        let (subs, sched, parc) = make_phantom(&spec).unwrap();
        let opts = TTestOptions { unit: SamplingUnit::Subjects, variance: VarianceModel::Welch };
        let r = bio_scram_ttest(&subs, &sched, &parc, &["roi_bio".into()], opts).unwrap();
        assert!(r.rows[0].p_value.unwrap() < 0.01);
        assert!(resolve_region(&parc, "nope").is_err());
        assert_eq!(resolve_region(&parc, "2").unwrap(), 2);
    }
}
