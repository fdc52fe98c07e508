//! Ground-truth phantom generator: block-design ROI activations on a
//! spatially smoothed Gaussian noise background.

use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::schedule::{build_block_schedule, Condition, StimulusSchedule};
use super::volume::{Label, Parcellation, VolumeSequence};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassAmplitude {
    #[serde(rename = "ASD")]
    pub asd: f64,
    #[serde(rename = "HC")]
    pub hc: f64,
}

impl ClassAmplitude {
    pub fn same(v: f64) -> Self {
        ClassAmplitude { asd: v, hc: v }
    }

    pub fn get(&self, label: Label) -> f64 {
        match label {
            Label::Asd => self.asd,
            Label::Hc => self.hc,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiSpec {
    pub name: String,
    /// Voxel coordinates `[d, h, w]` of the sphere center.
    pub center: [usize; 3],
    pub radius: f64,
    pub active: Condition,
    pub amplitude_by_class: ClassAmplitude,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub block_len: usize,
    pub order: Vec<Condition>,
    #[serde(default)]
    pub lag_frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    /// `[T, D, H, W]`
    pub dims: [usize; 4],
    pub n_subjects_per_class: usize,
    pub rois: Vec<RoiSpec>,
    pub baseline: f64,
    pub noise_sigma: f64,
    /// Full width at half maximum of the spatial noise smoothing, in voxels.
    pub spatial_smooth_fwhm: f64,
    pub schedule: ScheduleSpec,
    pub seed: u64,
}

impl PhantomSpec {
    /// Desk-scale phantom: 24 frames of 16^3, 8 subjects per class, one
    /// BIO-locked ROI, one SCRAM-locked ROI and one null ROI.
    pub fn desk() -> Self {
        PhantomSpec {
            dims: [24, 16, 16, 16],
            n_subjects_per_class: 8,
            rois: vec![
                RoiSpec {
                    name: "roi_bio".into(),
                    center: [5, 5, 8],
                    radius: 2.5,
                    active: Condition::Bio,
                    amplitude_by_class: ClassAmplitude { asd: 1.0, hc: 0.6 },
                },
                RoiSpec {
                    name: "roi_scram".into(),
                    center: [10, 10, 8],
                    radius: 2.5,
                    active: Condition::Scram,
                    amplitude_by_class: ClassAmplitude { asd: 0.6, hc: 1.0 },
                },
                RoiSpec {
                    name: "roi_null".into(),
                    center: [8, 4, 3],
                    radius: 2.0,
                    active: Condition::Bio,
                    amplitude_by_class: ClassAmplitude::same(0.0),
                },
            ],
            baseline: 0.0,
            noise_sigma: 0.1,
            spatial_smooth_fwhm: 1.5,
            schedule: ScheduleSpec {
                block_len: 4,
                order: vec![Condition::Bio, Condition::Scram],
                lag_frames: 0,
            },
            seed: 7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [t, d, h, w] = self.dims;
        if t < 1 || d < 1 || h < 1 || w < 1 {
            return Err(Error::Validation(format!("phantom dims must be >= 1, got {:?}", self.dims)));
        }
        if self.n_subjects_per_class < 1 {
            return Err(Error::Validation("n_subjects_per_class must be >= 1".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Validation("noise_sigma must be finite and >= 0".into()));
        }
        if !(self.spatial_smooth_fwhm >= 0.0 && self.spatial_smooth_fwhm.is_finite()) {
            return Err(Error::Validation("spatial_smooth_fwhm must be finite and >= 0".into()));
        }
        if !self.baseline.is_finite() {
            return Err(Error::Validation("baseline must be finite".into()));
        }
        let grid = [d, h, w];
        for roi in &self.rois {
            if !(roi.radius >= 0.0 && roi.radius.is_finite()) {
                return Err(Error::Validation(format!("ROI {}: radius must be >= 0", roi.name)));
            }
            if !(roi.amplitude_by_class.asd.is_finite() && roi.amplitude_by_class.hc.is_finite()) {
                return Err(Error::Validation(format!("ROI {}: amplitudes must be finite", roi.name)));
            }
            let reach = roi.radius.floor() as usize;
            for axis in 0..3 {
                let c = roi.center[axis];
                if c < reach || c + reach >= grid[axis] {
                    return Err(Error::Validation(format!(
                        "ROI {} (center {:?}, radius {}) extends outside the {d}x{h}x{w} grid",
                        roi.name, roi.center, roi.radius
                    )));
                }
            }
        }
        let mut names: Vec<&str> = self.rois.iter().map(|r| r.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|p| p[0] == p[1]) {
            return Err(Error::Validation("ROI names must be unique".into()));
        }
        Ok(())
    }

    pub fn build_schedule(&self) -> Result<StimulusSchedule> {
        build_block_schedule(
            self.dims[0],
            self.schedule.block_len,
            &self.schedule.order,
            self.schedule.lag_frames,
        )
    }

    /// ROI spheres rasterized as a label volume; ROI `i` gets id `i + 1`.
    pub fn parcellation(&self) -> Result<Parcellation> {
        let [_, d, h, w] = self.dims;
        let mut labels = vec![0i32; d * h * w];
        let mut names = BTreeMap::new();
        for (i, roi) in self.rois.iter().enumerate() {
            let id = i as i32 + 1;
            let r2 = roi.radius * roi.radius;
            let mut any = false;
            for z in 0..d {
                for y in 0..h {
                    for x in 0..w {
                        let dz = z as f64 - roi.center[0] as f64;
                        let dy = y as f64 - roi.center[1] as f64;
                        let dx = x as f64 - roi.center[2] as f64;
                        if dz * dz + dy * dy + dx * dx <= r2 {
                            let slot = &mut labels[(z * h + y) * w + x];
                            if *slot != 0 {
                                return Err(Error::Validation(format!(
                                    "ROI {} overlaps ROI {}",
                                    roi.name,
                                    self.rois[*slot as usize - 1].name
                                )));
                            }
                            *slot = id;
                            any = true;
                        }
                    }
                }
            }
            debug_assert!(any);
            names.insert(id, roi.name.clone());
        }
        Parcellation::new([d, h, w], labels, names)
    }
}

/// Widths of `n` successive box filters approximating a Gaussian of the
/// given standard deviation.
fn box_widths(sigma: f64, n: usize) -> Vec<usize> {
    let ideal = (12.0 * sigma * sigma / n as f64 + 1.0).sqrt();
    let mut lower = ideal.floor() as i64;
    if lower % 2 == 0 {
        lower -= 1;
    }
    let lower = lower.max(1);
    let upper = lower + 2;
    let m = ((12.0 * sigma * sigma - (n as i64 * lower * lower) as f64 - (4 * n as i64 * lower) as f64
        - 3.0 * n as f64)
        / (-4.0 * lower as f64 - 4.0))
        .round()
        .clamp(0.0, n as f64) as usize;
    (0..n)
        .map(|i| if i < m { lower as usize } else { upper as usize })
        .collect()
}

/// Sum of squared weights of the composite 1D kernel, i.e. the variance
/// gain of white noise through one axis of the blur.
fn kernel_energy(widths: &[usize]) -> f64 {
    let mut kernel = vec![1.0];
    for &w in widths {
        let mut next = vec![0.0; kernel.len() + w - 1];
        for (i, k) in kernel.iter().enumerate() {
            for j in 0..w {
                next[i + j] += k / w as f64;
            }
        }
        kernel = next;
    }
    kernel.iter().map(|k| k * k).sum()
}

fn box_blur_axis(field: &mut [f64], dims: [usize; 3], axis: usize, width: usize) {
    if width <= 1 {
        return;
    }
    let r = (width / 2) as isize;
    let strides = [dims[1] * dims[2], dims[2], 1];
    let len = dims[axis];
    let stride = strides[axis];
    let mut line = vec![0.0; len];
    let others: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
    for i in 0..dims[others[0]] {
        for j in 0..dims[others[1]] {
            let base = i * strides[others[0]] + j * strides[others[1]];
            for (k, v) in line.iter_mut().enumerate() {
                *v = field[base + k * stride];
            }
            for k in 0..len as isize {
                let lo = (k - r).max(0) as usize;
                let hi = ((k + r) as usize).min(len - 1);
                let s: f64 = line[lo..=hi].iter().sum();
                field[base + k as usize * stride] = s / (hi - lo + 1) as f64;
            }
        }
    }
}

/// Separable Gaussian smoothing of a `[D, H, W]` field approximated by three
/// box blurs per axis. Windows are truncated at the volume boundary.
pub fn smooth3d(field: &mut [f64], dims: [usize; 3], fwhm: f64) {
    if fwhm <= 0.0 {
        return;
    }
    let sigma = fwhm / (8.0 * 2f64.ln()).sqrt();
    for w in box_widths(sigma, 3) {
        for axis in 0..3 {
            box_blur_axis(field, dims, axis, w);
        }
    }
}

/// Smoothed white-noise generator with uniform marginal variance: noise is
/// drawn on a grid padded by the blur's reach, smoothed, then cropped, so no
/// output voxel sees a truncated window.
struct NoiseField {
    dims: [usize; 3],
    padded: [usize; 3],
    pad: usize,
    fwhm: f64,
    gain: f64,
    buf: Vec<f64>,
}

impl NoiseField {
    fn new(dims: [usize; 3], fwhm: f64, sigma: f64) -> Self {
        let (pad, energy) = if fwhm > 0.0 {
            let widths = box_widths(fwhm / (8.0 * 2f64.ln()).sqrt(), 3);
            (widths.iter().map(|w| w / 2).sum(), kernel_energy(&widths))
        } else {
            (0, 1.0)
        };
        let padded = dims.map(|d| d + 2 * pad);
        NoiseField {
            dims,
            padded,
            pad,
            fwhm,
            gain: sigma / energy.powf(1.5),
            buf: vec![0.0; padded.iter().product()],
        }
    }

    /// Adds `baseline + noise` into `out` (length D*H*W).
    fn fill(&mut self, rng: &mut rng::Rng, baseline: f64, out: &mut [f64]) {
        for v in self.buf.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        smooth3d(&mut self.buf, self.padded, self.fwhm);
        let [d, h, w] = self.dims;
        let [_, ph, pw] = self.padded;
        let p = self.pad;
        for z in 0..d {
            for y in 0..h {
                let src = ((z + p) * ph + y + p) * pw + p;
                let dst = (z * h + y) * w;
                for x in 0..w {
                    out[dst + x] = baseline + self.gain * self.buf[src + x];
                }
            }
        }
    }
}

/// Generates `2 * n_subjects_per_class` labelled sequences (ASD first), the
/// shared stimulus schedule, and a parcellation of exactly the ROI spheres.
pub fn make_phantom(spec: &PhantomSpec) -> Result<(Vec<VolumeSequence>, StimulusSchedule, Parcellation)> {
    spec.validate()?;
    let schedule = spec.build_schedule()?;
    let parcellation = spec.parcellation()?;
    let [t, d, h, w] = spec.dims;
    let vol = d * h * w;
    let roi_voxels: Vec<Vec<usize>> = (0..spec.rois.len())
        .map(|i| parcellation.voxels(i as i32 + 1))
        .collect();

    let mut subjects = Vec::with_capacity(2 * spec.n_subjects_per_class);
    for (class_idx, label) in Label::ALL.into_iter().enumerate() {
        for s in 0..spec.n_subjects_per_class {
            let subject_index = (class_idx * spec.n_subjects_per_class + s) as u64;
            let mut rng = rng::stream(spec.seed, subject_index);
            let mut data = Vec::with_capacity(t * vol);
            let mut field = vec![0.0f64; vol];
            let mut noise = NoiseField::new([d, h, w], spec.spatial_smooth_fwhm, spec.noise_sigma);
            for frame in 0..t {
                if spec.noise_sigma > 0.0 {
                    noise.fill(&mut rng, spec.baseline, &mut field);
                } else {
                    field.iter_mut().for_each(|v| *v = spec.baseline);
                }
                // stimulus-locked activity, constructed without hemodynamic lag
                let cond = schedule.conditions[frame];
                for (roi, voxels) in spec.rois.iter().zip(&roi_voxels) {
                    if roi.active == cond {
                        let amp = roi.amplitude_by_class.get(label);
                        for &v in voxels {
                            field[v] += amp;
                        }
                    }
                }
                data.extend(field.iter().map(|&v| v as f32));
            }
            let id = format!("phantom-{}-{s:03}", label.to_string().to_lowercase());
            let mut seq = VolumeSequence::new(id, spec.dims, data)?;
            seq.label = Some(label);
            subjects.push(seq);
        }
    }
    Ok((subjects, schedule, parcellation))
}
