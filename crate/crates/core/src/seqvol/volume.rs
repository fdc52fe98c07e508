use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagnostic class of a subject.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "ASD")]
    Asd,
    #[serde(rename = "HC")]
    Hc,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Asd, Label::Hc];

    /// One-hot position used by the generator and classifier.
    pub fn index(self) -> usize {
        match self {
            Label::Asd => 0,
            Label::Hc => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Asd),
            1 => Some(Label::Hc),
            _ => None,
        }
    }

    /// 1.0 for the positive class (ASD), 0.0 otherwise.
    pub fn target(self) -> f64 {
        match self {
            Label::Asd => 1.0,
            Label::Hc => 0.0,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Asd => "ASD",
            Label::Hc => "HC",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "ASD" => Ok(Label::Asd),
            "HC" => Ok(Label::Hc),
            other => Err(Error::Validation(format!("unknown label {other:?} (expected ASD or HC)"))),
        }
    }
}

/// Axis lengths `[T, D, H, W]` of a volume sequence.
pub type Dims4 = [usize; 4];

/// One subject's 4D signal, stored frame-major with W varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeSequence {
    pub dims: Dims4,
    pub data: Vec<f32>,
    pub voxel_size_mm: [f64; 3],
    pub frame_interval_s: f64,
    pub label: Option<Label>,
    pub subject_id: String,
}

impl VolumeSequence {
    pub fn new(subject_id: impl Into<String>, dims: Dims4, data: Vec<f32>) -> Result<Self> {
        let seq = VolumeSequence {
            dims,
            data,
            voxel_size_mm: [3.2; 3],
            frame_interval_s: 2.0,
            label: None,
            subject_id: subject_id.into(),
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn zeros(subject_id: impl Into<String>, dims: Dims4) -> Self {
        VolumeSequence {
            dims,
            data: vec![0.0; dims.iter().product()],
            voxel_size_mm: [3.2; 3],
            frame_interval_s: 2.0,
            label: None,
            subject_id: subject_id.into(),
        }
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }

    pub fn frames(&self) -> usize {
        self.dims[0]
    }

    pub fn frame_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
    }

    pub fn spatial_dims(&self) -> [usize; 3] {
        [self.dims[1], self.dims[2], self.dims[3]]
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn validate(&self) -> Result<()> {
        let [t, d, h, w] = self.dims;
        if t < 1 {
            return Err(Error::Validation(format!("{}: T must be >= 1", self.subject_id)));
        }
        if d < 1 || h < 1 || w < 1 {
            return Err(Error::Validation(format!(
                "{}: spatial dims must be >= 1, got {d}x{h}x{w}",
                self.subject_id
            )));
        }
        let expected = t * d * h * w;
        if self.data.len() != expected {
            return Err(Error::Validation(format!(
                "{}: data length {} does not match dims {:?} ({expected})",
                self.subject_id,
                self.data.len(),
                self.dims
            )));
        }
        if !self.voxel_size_mm.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::Validation(format!("{}: voxel size must be positive", self.subject_id)));
        }
        if !(self.frame_interval_s.is_finite() && self.frame_interval_s > 0.0) {
            return Err(Error::Validation(format!(
                "{}: frame interval must be positive",
                self.subject_id
            )));
        }
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "{}: non-finite value at flat index {i}",
                self.subject_id
            )));
        }
        Ok(())
    }
}

/// Integer label volume `[D, H, W]`; 0 is background.
#[derive(Clone, Debug, PartialEq)]
pub struct Parcellation {
    pub dims: [usize; 3],
    pub labels: Vec<i32>,
    pub region_names: BTreeMap<i32, String>,
}

impl Parcellation {
    pub fn new(dims: [usize; 3], labels: Vec<i32>, region_names: BTreeMap<i32, String>) -> Result<Self> {
        let p = Parcellation {
            dims,
            labels,
            region_names,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let n: usize = self.dims.iter().product();
        if n == 0 || self.labels.len() != n {
            return Err(Error::Validation(format!(
                "parcellation has {} labels for dims {:?}",
                self.labels.len(),
                self.dims
            )));
        }
        if let Some(v) = self.labels.iter().find(|&&v| v < 0) {
            return Err(Error::Validation(format!("negative region id {v}")));
        }
        for &id in self.region_names.keys() {
            if id <= 0 {
                return Err(Error::Validation(format!("region id {id} must be positive")));
            }
            if !self.labels.contains(&id) {
                return Err(Error::Validation(format!("region {id} has no voxels")));
            }
        }
        Ok(())
    }

    /// Flat voxel indices of a region.
    pub fn voxels(&self, region_id: i32) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == region_id).then_some(i))
            .collect()
    }

    pub fn region_id(&self, name: &str) -> Option<i32> {
        self.region_names
            .iter()
            .find_map(|(&id, n)| (n == name).then_some(id))
    }
}
