//! Run configuration: profile presets, JSON loading with `--set` overrides
//! and cross-field validation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fmrigan_core::eval::{AugmentArm, ClassifierConfig, TTestOptions, TsneParams};
use fmrigan_core::nets::{ArchConfig, TemporalKind};
use fmrigan_core::seqvol::{PhantomSpec, RoiSpec, ScheduleSpec};
use fmrigan_core::training::TrainConfig;
use fmrigan_core::Error;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Desk,
    Paper,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::Config(format!(
                "profile: unknown profile {other:?} (expected \"desk\" or \"paper\")"
            ))),
        }
    }
}

/// Fallback locations for inputs not given on the command line.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data_dir: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub schedule: Option<PathBuf>,
    pub parcellation: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub synthetic_dir: Option<PathBuf>,
    /// Generator checkpoint stem per temporal kind slug.
    pub generators: BTreeMap<String, PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub ratios: [f64; 3],
    /// Explicit partition sizes; overrides `ratios`.
    pub sizes: Option<[usize; 3]>,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ratios: [0.7, 0.15, 0.15],
            sizes: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Region names or ids for the contrast tables; empty selects every
    /// phantom ROI.
    pub regions: Vec<String>,
    pub ttest: TTestOptions,
    pub pca_dims: usize,
    pub tsne: TsneParams,
    pub classifier: ClassifierConfig,
    pub arms: Vec<AugmentArm>,
    pub target_size: Option<usize>,
    pub gaussian_sigma: f64,
    pub n_synthetic_per_class: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            regions: Vec::new(),
            ttest: TTestOptions::default(),
            pca_dims: 100,
            tsne: TsneParams {
                perplexity: 5.0,
                ..TsneParams::default()
            },
            classifier: ClassifierConfig::default(),
            arms: vec![
                AugmentArm::None,
                AugmentArm::Gaussian,
                AugmentArm::Synthetic(TemporalKind::Conv1d),
            ],
            target_size: None,
            gaussian_sigma: 0.1,
            n_synthetic_per_class: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    /// Seed of generation and of the classification experiment.
    pub seed: u64,
    /// Map every loaded sequence onto [-1, 1] before training and
    /// classification.
    pub normalize: bool,
    pub paths: Paths,
    pub phantom: PhantomSpec,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub split: SplitConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::preset(Profile::Desk)
    }
}

impl RunConfig {
    pub fn preset(profile: Profile) -> Self {
        match profile {
            Profile::Desk => RunConfig {
                profile,
                seed: 0,
                normalize: true,
                paths: Paths::default(),
                eval: EvalConfig::default(),
                phantom: PhantomSpec::desk(),
                arch: ArchConfig::desk(),
                train: TrainConfig::desk(),
                split: SplitConfig::default(),
            },
            Profile::Paper => RunConfig {
                profile,
                seed: 0,
                normalize: true,
                paths: Paths::default(),
                eval: EvalConfig {
                    tsne: TsneParams::default(),
                    target_size: Some(792),
                    n_synthetic_per_class: 100,
                    ..EvalConfig::default()
                },
                phantom: paper_phantom(),
                arch: ArchConfig::paper(),
                train: TrainConfig::paper(),
                split: SplitConfig::default(),
            },
        }
    }

    /// Cross-field checks. Errors name the offending field path.
    pub fn validate(&self) -> Result<(), Error> {
        let at = |path: &str, e: Error| Error::Config(format!("{path}: {}", strip_kind(&e)));
        self.phantom.validate().map_err(|e| at("phantom", e))?;
        self.phantom
            .build_schedule()
            .map_err(|e| at("phantom.schedule", e))?;
        self.phantom
            .parcellation()
            .map_err(|e| at("phantom.rois", e))?;
        self.arch.plan().map_err(|e| at("arch", e))?;
        if self.phantom.dims != self.arch.input_dims {
            return Err(Error::Config(format!(
                "phantom.dims {:?} conflicts with arch.input_dims {:?}",
                self.phantom.dims, self.arch.input_dims
            )));
        }
        self.train.validate()?;
        if let Some(sizes) = self.split.sizes {
            if sizes.iter().sum::<usize>() != self.phantom_subjects() {
                log::warn!(
                    "split.sizes {sizes:?} do not add up to the {} phantom subjects",
                    self.phantom_subjects()
                );
            }
        } else if (self.split.ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
            || self.split.ratios.iter().any(|r| *r < 0.0)
        {
            return Err(Error::Config(format!(
                "split.ratios must be non-negative and sum to 1, got {:?}",
                self.split.ratios
            )));
        }
        for (i, region) in self.eval.regions.iter().enumerate() {
            let known = self
                .phantom
                .rois
                .iter()
                .any(|r: &RoiSpec| &r.name == region)
                || region
                    .parse::<usize>()
                    .is_ok_and(|id| (1..=self.phantom.rois.len()).contains(&id));
            if !known {
                return Err(Error::Config(format!(
                    "eval.regions[{i}]: unknown region {region:?}"
                )));
            }
        }
        if self.eval.tsne.out_dim != 3 {
            return Err(Error::Config(format!(
                "eval.tsne.out_dim must be 3, got {}",
                self.eval.tsne.out_dim
            )));
        }
        let n_embed = self.phantom_subjects() + 2 * self.eval.n_synthetic_per_class;
        self.eval
            .tsne
            .check(n_embed)
            .map_err(|e| at("eval.tsne.perplexity", e))?;
        if self.eval.pca_dims == 0 {
            return Err(Error::Config("eval.pca_dims must be >= 1".into()));
        }
        self.eval
            .classifier
            .trace(self.arch.spatial())
            .map_err(|e| at("eval.classifier", e))?;
        if !(self.eval.gaussian_sigma >= 0.0 && self.eval.gaussian_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "eval.gaussian_sigma must be >= 0, got {}",
                self.eval.gaussian_sigma
            )));
        }
        for key in self.paths.generators.keys() {
            key.parse::<TemporalKind>().map_err(|_| {
                Error::Config(format!("paths.generators.{key}: unknown temporal kind"))
            })?;
        }
        Ok(())
    }

    fn phantom_subjects(&self) -> usize {
        2 * self.phantom.n_subjects_per_class
    }

    /// Seeds that determine the outputs, for the manifest.
    pub fn seeds(&self) -> BTreeMap<&'static str, u64> {
        BTreeMap::from([
            ("seed", self.seed),
            ("phantom", self.phantom.seed),
            ("split", self.split.seed),
            ("train", self.train.seed),
            ("tsne", self.eval.tsne.seed),
        ])
    }
}

fn strip_kind(e: &Error) -> String {
    match e {
        Error::Config(m) | Error::Validation(m) | Error::Format(m) => m.clone(),
        other => other.to_string(),
    }
}

/// Desk ROI layout scaled to 146 frames of 91x109x91.
fn paper_phantom() -> PhantomSpec {
    let desk = PhantomSpec::desk();
    let dims = ArchConfig::paper().input_dims;
    let scale = [
        dims[1] as f64 / 16.0,
        dims[2] as f64 / 16.0,
        dims[3] as f64 / 16.0,
    ];
    let rois = desk
        .rois
        .iter()
        .map(|r| RoiSpec {
            center: [0, 1, 2].map(|a| (r.center[a] as f64 * scale[a]).round() as usize),
            radius: r.radius * scale[0],
            ..r.clone()
        })
        .collect();
    PhantomSpec {
        dims,
        n_subjects_per_class: 59,
        rois,
        spatial_smooth_fwhm: desk.spatial_smooth_fwhm * scale[0],
        schedule: ScheduleSpec {
            block_len: 12,
            ..desk.schedule
        },
        ..desk
    }
}

/// A `--set a.b=c` override. The value is parsed as JSON when possible and
/// taken as a string otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct Override {
    pub path: Vec<String>,
    pub value: Value,
}

impl FromStr for Override {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (key, raw) = s
            .split_once('=')
            .ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))?;
        let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
        if path.iter().any(String::is_empty) {
            return Err(format!("malformed key {key:?}"));
        }
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        Ok(Override { path, value })
    }
}

impl fmt::Display for Override {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.path.join("."), self.value)
    }
}

fn apply_override(root: &mut Value, ov: &Override) -> Result<(), Error> {
    let mut node = root;
    for (depth, key) in ov.path.iter().enumerate() {
        let last = depth + 1 == ov.path.len();
        let here = ov.path[..=depth].join(".");
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(key.clone(), ov.value.clone());
                    return Ok(());
                }
                map.entry(key.clone())
                    .or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let i: usize = key
                    .parse()
                    .map_err(|_| Error::Config(format!("{here}: expected an array index")))?;
                let len = items.len();
                let slot = items.get_mut(i).ok_or_else(|| {
                    Error::Config(format!("{here}: index out of range for array of {len}"))
                })?;
                if last {
                    *slot = ov.value.clone();
                    return Ok(());
                }
                slot
            }
            _ => {
                return Err(Error::Config(format!(
                    "{here}: cannot descend into a scalar"
                )))
            }
        };
    }
    Ok(())
}

/// Objects merge key by key; anything else in `over` replaces `base`.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses a config document, fills profile defaults, applies overrides and
/// validates the result.
pub fn resolve(text: Option<&str>, overrides: &[Override]) -> Result<RunConfig, Error> {
    let mut user = match text {
        None => Value::Object(Default::default()),
        Some(t) if t.trim().is_empty() => return Err(Error::Config("config file is empty".into())),
        Some(t) => serde_json::from_str(t)
            .map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?,
    };
    if !user.is_object() {
        return Err(Error::Config("config must be a JSON object".into()));
    }
    let profile = |v: &Value| -> Result<Profile, Error> {
        match v.get("profile") {
            None => Ok(Profile::Desk),
            Some(Value::String(s)) => s.parse(),
            Some(other) => Err(Error::Config(format!(
                "profile: expected a string, got {other}"
            ))),
        }
    };
    for ov in overrides
        .iter()
        .filter(|o| o.path.len() == 1 && o.path[0] == "profile")
    {
        apply_override(&mut user, ov)?;
    }
    let mut merged =
        serde_json::to_value(RunConfig::preset(profile(&user)?)).expect("config serializes");
    merge(&mut merged, user);
    for ov in overrides {
        apply_override(&mut merged, ov)?;
    }
    let mut cfg: RunConfig = serde_path_to_error::deserialize(merged).map_err(|e| {
        let path = e.path().to_string();
        Error::Config(format!("{path}: {}", e.into_inner()))
    })?;
    if cfg.eval.regions.is_empty() {
        cfg.eval.regions = cfg.phantom.rois.iter().map(|r| r.name.clone()).collect();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load(path: Option<&Path>, overrides: &[Override]) -> Result<RunConfig, Error> {
    let text = match path {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        None => None,
    };
    resolve(text.as_deref(), overrides)
}
