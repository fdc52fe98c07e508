//! Training snapshots: `<stem>.json` header (architecture, stage, step,
//! array names and shapes) and `<stem>.f32` payload holding every parameter
//! array followed by the Adam moments `m`, `v` of each optimized array.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use crate::error::{Error, Result};
use crate::nets::{AlphaGan, ArchConfig, ModelParams};
use crate::seqvol::io::{check_payload_len, check_version, f32_from_le_bytes, f32_to_le_bytes, read_file, sidecar, write_file, FORMAT_VERSION};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Gan,
}

/// Adam state keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimState {
    pub arrays: BTreeMap<String, AdamState>,
}

impl OptimState {
    pub fn entry(&mut self, name: &str, shape: &[usize]) -> &mut AdamState {
        self.arrays
            .entry(name.to_string())
            .or_insert_with(|| AdamState::new(shape))
    }
}

/// Model, optimizer state and progress of one training stage.
#[derive(Clone, Debug)]
pub struct Session {
    pub model: AlphaGan,
    pub optim: OptimState,
    pub stage: Stage,
    /// Completed optimization steps within `stage`.
    pub step: usize,
}

impl Session {
    pub fn new(model: AlphaGan) -> Self {
        Session {
            model,
            optim: OptimState::default(),
            stage: Stage::Pretrain,
            step: 0,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct OptimEntry {
    name: String,
    t: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    arch: ArchConfig,
    stage: Stage,
    step: usize,
    arrays: Vec<ArrayEntry>,
    optimizer: Vec<OptimEntry>,
}

fn push_f32(out: &mut Vec<f32>, t: &Tensor) {
    out.extend(t.data().iter().map(|&v| v as f32));
}

pub fn save_checkpoint(session: &Session, stem: &Path) -> Result<()> {
    let mut payload = Vec::new();
    let mut arrays = Vec::new();
    for (name, t) in session.model.params.iter() {
        arrays.push(ArrayEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
        });
        push_f32(&mut payload, t);
    }
    let mut optimizer = Vec::new();
    for (name, s) in &session.optim.arrays {
        optimizer.push(OptimEntry { name: name.clone(), t: s.t });
        push_f32(&mut payload, &s.m);
        push_f32(&mut payload, &s.v);
    }
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        arch: session.model.config.clone(),
        stage: session.stage,
        step: session.step,
        arrays,
        optimizer,
    };
    write_file(&sidecar(stem, "json"), &serde_json::to_vec_pretty(&header).expect("header serializes"))?;
    write_file(&sidecar(stem, "f32"), &f32_to_le_bytes(&payload))
}

/// Restores a session. With `expected` set, the stored arrays must match
/// that architecture; the error names the first mismatched array.
pub fn load_checkpoint(stem: &Path, expected: Option<&ArchConfig>) -> Result<Session> {
    let hpath = sidecar(stem, "json");
    let header: CheckpointHeader = serde_json::from_slice(&read_file(&hpath)?)
        .map_err(|e| Error::Format(format!("{}: {e}", hpath.display())))?;
    check_version(header.format_version)?;

    let ppath = sidecar(stem, "f32");
    let bytes = read_file(&ppath)?;
    let param_len: usize = header.arrays.iter().map(|a| a.shape.iter().product::<usize>()).sum();
    let mut shapes = BTreeMap::new();
    for a in &header.arrays {
        shapes.insert(a.name.clone(), a.shape.clone());
    }
    let mut optim_len = 0;
    for o in &header.optimizer {
        let shape = shapes
            .get(&o.name)
            .ok_or_else(|| Error::Format(format!("{}: optimizer state for unknown array {}", hpath.display(), o.name)))?;
        optim_len += 2 * shape.iter().product::<usize>();
    }
    check_payload_len(&ppath, 4 * (param_len + optim_len), bytes.len())?;
    let values = f32_from_le_bytes(&bytes);

    let mut cursor = 0;
    let mut take = |shape: &[usize]| {
        let n: usize = shape.iter().product();
        let t = Tensor::from_f32(shape.to_vec(), &values[cursor..cursor + n]);
        cursor += n;
        t
    };
    let mut arrays = BTreeMap::new();
    for a in &header.arrays {
        arrays.insert(a.name.clone(), take(&a.shape));
    }
    let mut optim = OptimState::default();
    for o in &header.optimizer {
        let shape = &shapes[&o.name];
        let m = take(shape);
        let v = take(shape);
        optim.arrays.insert(o.name.clone(), AdamState { m, v, t: o.t });
    }

    let params = ModelParams::from_arrays(arrays);
    let arch = match expected {
        Some(cfg) => {
            params.check_against(cfg)?;
            cfg.clone()
        }
        None => header.arch,
    };
    Ok(Session {
        model: AlphaGan::from_params(arch, params)?,
        optim,
        stage: header.stage,
        step: header.step,
    })
}
