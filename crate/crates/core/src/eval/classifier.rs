//! Downstream ASD/HC classifier: spatial average pooling, a small per-frame
//! 3D conv stack, temporal mean, MLP and a sigmoid output.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::metrics::CE_EPS;
use crate::error::{Error, Result};
use crate::nets::{sequence_tensor, ConvLayer};
use crate::rng;
use crate::seqvol::{Label, VolumeSequence};
use crate::tensor::{ConvGeom, Tape, Tensor, Var};
use crate::training::{adam_step, AdamParams, AdamState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub pool_factor: usize,
    pub conv: Vec<ConvLayer>,
    /// Zero padding of every classifier convolution.
    pub conv_pad: usize,
    pub mlp_hidden: usize,
    pub leaky_slope: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub threshold: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            pool_factor: 4,
            conv: vec![ConvLayer::new(3, 2, 4), ConvLayer::new(3, 2, 8)],
            conv_pad: 1,
            mlp_hidden: 32,
            leaky_slope: 0.2,
            epochs: 100,
            batch_size: 4,
            lr: 3e-3,
            threshold: 0.5,
        }
    }
}

impl ClassifierConfig {
    /// Spatial extent after pooling and each convolution.
    pub fn trace(&self, spatial: [usize; 3]) -> Result<Vec<[usize; 3]>> {
        if self.pool_factor == 0 || self.conv.is_empty() || self.mlp_hidden == 0 {
            return Err(Error::Config(
                "classifier needs pool_factor >= 1, at least one conv layer and mlp_hidden >= 1".into(),
            ));
        }
        if !(self.lr > 0.0) || self.batch_size == 0 {
            return Err(Error::Config("classifier.lr must be > 0 and batch_size >= 1".into()));
        }
        let mut dims = spatial.map(|l| l / self.pool_factor);
        if dims.contains(&0) {
            return Err(Error::Config(format!(
                "classifier.pool_factor {} exceeds the volume {spatial:?}",
                self.pool_factor
            )));
        }
        let mut out = vec![dims];
        for (i, layer) in self.conv.iter().enumerate() {
            if layer.kernel == 0 || layer.stride == 0 || layer.channels == 0 {
                return Err(Error::Config(format!("classifier.conv[{i}] has a zero field")));
            }
            for d in &mut dims {
                let padded = *d + 2 * self.conv_pad;
                if padded < layer.kernel {
                    return Err(Error::Config(format!(
                        "classifier.conv[{i}] kernel {} does not fit extent {d} with pad {}",
                        layer.kernel, self.conv_pad
                    )));
                }
                *d = (padded - layer.kernel) / layer.stride + 1;
            }
            out.push(dims);
        }
        Ok(out)
    }

    fn features(&self, spatial: [usize; 3]) -> Result<usize> {
        let last = *self.trace(spatial)?.last().expect("non-empty trace");
        Ok(last.iter().product::<usize>() * self.conv.last().expect("conv layer").channels)
    }
}

#[derive(Clone, Debug)]
pub struct Classifier {
    pub config: ClassifierConfig,
    pub input_dims: [usize; 4],
    pub params: BTreeMap<String, Tensor>,
    /// Epoch (1-based) whose parameters were kept; 0 means the initialization.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
}

struct Prepared {
    x: Tensor,
    target: f64,
}

fn pool(x: Tensor, factor: usize) -> Tensor {
    let mut tape = Tape::new();
    let v = tape.leaf(x);
    let p = tape.avg_pool3d(v, factor);
    tape.value(p).clone()
}

fn prepare(data: &[VolumeSequence], dims: [usize; 4], cfg: &ClassifierConfig, require_label: bool) -> Result<Vec<Prepared>> {
    data.iter()
        .map(|seq| {
            if seq.dims != dims {
                return Err(Error::Validation(format!(
                    "sequence {} has dims {:?}, classifier expects {dims:?}",
                    seq.subject_id, seq.dims
                )));
            }
            let target = match seq.label {
                Some(l) => l.target(),
                None if require_label => {
                    return Err(Error::Validation(format!("sequence {} has no label", seq.subject_id)))
                }
                None => 0.0,
            };
            Ok(Prepared { x: pool(sequence_tensor(seq), cfg.pool_factor), target })
        })
        .collect()
}

fn init(cfg: &ClassifierConfig, features: usize, seed: u64) -> BTreeMap<String, Tensor> {
    let mut r = rng::seeded(seed);
    let mut params = BTreeMap::new();
    let mut weight = |name: String, shape: Vec<usize>, fan_in: usize, params: &mut BTreeMap<String, Tensor>| {
        let a = (6.0 / fan_in as f64).sqrt();
        let n = shape.iter().product();
        params.insert(name, Tensor::new(shape, (0..n).map(|_| r.gen_range(-a..a) as f32 as f64).collect()));
    };
    let mut cin = 1;
    for (i, l) in cfg.conv.iter().enumerate() {
        let k3 = l.kernel.pow(3);
        weight(format!("clf.conv{i}.w"), vec![l.channels, cin, l.kernel, l.kernel, l.kernel], cin * k3, &mut params);
        params.insert(format!("clf.conv{i}.b"), Tensor::zeros(&[l.channels]));
        cin = l.channels;
    }
    weight("clf.fc0.w".into(), vec![features, cfg.mlp_hidden], features, &mut params);
    params.insert("clf.fc0.b".into(), Tensor::zeros(&[cfg.mlp_hidden]));
    weight("clf.out.w".into(), vec![cfg.mlp_hidden, 1], cfg.mlp_hidden, &mut params);
    params.insert("clf.out.b".into(), Tensor::zeros(&[1]));
    params
}

/// Probability of ASD for one pooled input `[T, 1, d, h, w]`.
fn forward(tape: &mut Tape, vars: &BTreeMap<String, Var>, cfg: &ClassifierConfig, x: Var) -> Var {
    let mut h = x;
    for (i, l) in cfg.conv.iter().enumerate() {
        let g = ConvGeom::new(l.kernel, l.stride, cfg.conv_pad);
        h = tape.conv3d(h, vars[&format!("clf.conv{i}.w")], vars[&format!("clf.conv{i}.b")], g);
        h = tape.leaky_relu(h, cfg.leaky_slope);
    }
    let frames = tape.shape(h)[0];
    let width: usize = tape.shape(h)[1..].iter().product();
    let flat = tape.reshape(h, &[frames, width]);
    let pooled = tape.mean_rows(flat);
    let hidden = tape.matmul(pooled, vars["clf.fc0.w"]);
    let hidden = tape.add_row_bias(hidden, vars["clf.fc0.b"]);
    let hidden = tape.leaky_relu(hidden, cfg.leaky_slope);
    let logit = tape.matmul(hidden, vars["clf.out.w"]);
    let logit = tape.add_row_bias(logit, vars["clf.out.b"]);
    tape.sigmoid(logit)
}

fn bce(tape: &mut Tape, p: Var, target: f64) -> Var {
    let lp = tape.ln_clamped(p, CE_EPS);
    let q = tape.one_minus(p);
    let lq = tape.ln_clamped(q, CE_EPS);
    let a = tape.scale(lp, -target);
    let b = tape.scale(lq, -(1.0 - target));
    let s = tape.add(a, b);
    tape.sum(s)
}

fn bind(tape: &mut Tape, params: &BTreeMap<String, Tensor>) -> BTreeMap<String, Var> {
    params.iter().map(|(n, t)| (n.clone(), tape.leaf(t.clone()))).collect()
}

fn predict_prepared(params: &BTreeMap<String, Tensor>, cfg: &ClassifierConfig, data: &[Prepared]) -> Vec<f64> {
    data.iter()
        .map(|ex| {
            let mut tape = Tape::new();
            let vars = bind(&mut tape, params);
            let x = tape.leaf(ex.x.clone());
            let p = forward(&mut tape, &vars, cfg, x);
            tape.value(p).item()
        })
        .collect()
}

fn mean_ce(scores: &[f64], data: &[Prepared]) -> f64 {
    let targets: Vec<f64> = data.iter().map(|e| e.target).collect();
    super::metrics::cross_entropy(&targets, scores)
}

/// Trains with Adam on binary cross-entropy and returns the parameters of
/// the epoch with the lowest validation loss.
pub fn train_classifier(train: &[VolumeSequence], val: &[VolumeSequence], cfg: &ClassifierConfig, seed: u64) -> Result<Classifier> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Validation(format!(
            "classifier needs non-empty train and validation sets (got {} and {})",
            train.len(),
            val.len()
        )));
    }
    let dims = train[0].dims;
    let features = cfg.features([dims[1], dims[2], dims[3]])?;
    let train_x = prepare(train, dims, cfg, true)?;
    let val_x = prepare(val, dims, cfg, true)?;

    let mut params = init(cfg, features, seed);
    let mut states: BTreeMap<String, AdamState> =
        params.iter().map(|(n, t)| (n.clone(), AdamState::new(t.shape()))).collect();
    let hp = AdamParams { lr: cfg.lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 };

    let mut best = (mean_ce(&predict_prepared(&params, cfg, &val_x), &val_x), 0usize, params.clone());
    let mut train_losses = Vec::with_capacity(cfg.epochs);
    let mut val_losses = Vec::with_capacity(cfg.epochs);
    let order_seed = rng::mix(seed, 0xC1A5);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_x.len()).collect();
        order.shuffle(&mut rng::stream(order_seed, epoch as u64));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let vars = bind(&mut tape, &params);
            let mut terms = Vec::with_capacity(batch.len());
            for &i in batch {
                let x = tape.leaf(train_x[i].x.clone());
                let p = forward(&mut tape, &vars, cfg, x);
                terms.push(bce(&mut tape, p, train_x[i].target));
            }
            let mut loss = terms[0];
            for &t in &terms[1..] {
                loss = tape.add(loss, t);
            }
            let loss = tape.scale(loss, 1.0 / batch.len() as f64);
            epoch_loss += tape.value(loss).item() * batch.len() as f64;
            let mut grads = tape.backward(loss);
            for (name, v) in &vars {
                let g = grads.take(*v).unwrap_or_else(|| Tensor::zeros(tape.shape(*v)));
                if !g.all_finite() {
                    return Err(Error::NonFinite(format!("classifier gradient of {name} is not finite")));
                }
                adam_step(params.get_mut(name).expect("known array"), &g, states.get_mut(name).expect("state"), hp);
            }
        }
        train_losses.push(epoch_loss / train_x.len() as f64);
        let val_loss = mean_ce(&predict_prepared(&params, cfg, &val_x), &val_x);
        val_losses.push(val_loss);
        log::debug!("classifier epoch {} train {:.4} val {:.4}", epoch + 1, train_losses[epoch], val_loss);
        if val_loss < best.0 {
            best = (val_loss, epoch + 1, params.clone());
        }
    }
    Ok(Classifier {
        config: cfg.clone(),
        input_dims: dims,
        params: best.2,
        best_epoch: best.1,
        best_val_loss: best.0,
        train_losses,
        val_losses,
    })
}

impl Classifier {
    /// Probability of ASD for each sequence; labels are not required.
    pub fn predict(&self, data: &[VolumeSequence]) -> Result<Vec<f64>> {
        let prepared = prepare(data, self.input_dims, &self.config, false)?;
        Ok(predict_prepared(&self.params, &self.config, &prepared))
    }

    pub fn predict_labels(&self, data: &[VolumeSequence]) -> Result<Vec<Label>> {
        Ok(self
            .predict(data)?
            .into_iter()
            .map(|p| if p >= self.config.threshold { Label::Asd } else { Label::Hc })
            .collect())
    }
}
