//! Forward graphs of the encoder, generator, discriminator and code
//! discriminator, and the temporal aggregation stages they share.

use super::config::{ArchConfig, ConvLayer, ShapePlan, TemporalKind, TemporalPlan};
use super::params::{init_params, Bound, Component, ModelParams};
use crate::error::{Error, Result};
use crate::seqvol::{Label, VolumeSequence};
use crate::tensor::{Tape, Tensor, Var};

/// Latent code produced by the encoder or drawn from the prior.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub z: Vec<f64>,
}

impl Embedding {
    pub fn new(z: Vec<f64>) -> Self {
        Embedding { z }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, self.z.len()], self.z.clone())
    }
}

/// Sinusoidal encoding indexed by frame number, `[T, F]`.
pub fn sinusoidal_encoding(frames: usize, width: usize) -> Tensor {
    let mut data = vec![0.0; frames * width];
    for t in 0..frames {
        for j in 0..width {
            let rate = 1.0 / 10000f64.powf((2 * (j / 2)) as f64 / width as f64);
            let angle = t as f64 * rate;
            data[t * width + j] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![frames, width], data)
}

/// Converts a sequence into a `[T, 1, D, H, W]` tensor.
pub fn sequence_tensor(seq: &VolumeSequence) -> Tensor {
    let [t, d, h, w] = seq.dims;
    Tensor::new(vec![t, 1, d, h, w], seq.data.iter().map(|&v| v as f64).collect())
}

/// Graph builder over one tape with a set of bound parameters.
pub struct Graph<'a> {
    pub config: &'a ArchConfig,
    pub plan: &'a ShapePlan,
    pub vars: &'a Bound,
}

impl<'a> Graph<'a> {
    fn linear(&self, tape: &mut Tape, x: Var, prefix: &str) -> Var {
        let w = self.vars.var(&format!("{prefix}.w"));
        let b = self.vars.var(&format!("{prefix}.b"));
        let y = tape.matmul(x, w);
        tape.add_row_bias(y, b)
    }

    fn mlp_logit(&self, tape: &mut Tape, x: Var, prefix: &str, hidden: &[usize]) -> Var {
        let mut h = x;
        for i in 0..hidden.len() {
            let y = self.linear(tape, h, &format!("{prefix}.fc{i}"));
            h = tape.leaky_relu(y, self.config.leaky_slope);
        }
        self.linear(tape, h, &format!("{prefix}.out"))
    }

    /// Shared-weight per-frame conv stack: `[T, 1, D, H, W]` -> `[T, F]`.
    fn frame_features(&self, tape: &mut Tape, x: Var, prefix: &str, layers: &[ConvLayer]) -> Var {
        let mut h = x;
        for (i, layer) in layers.iter().enumerate() {
            let w = self.vars.var(&format!("{prefix}.conv{i}.w"));
            let b = self.vars.var(&format!("{prefix}.conv{i}.b"));
            let y = tape.conv3d(h, w, b, layer.geom());
            h = tape.leaky_relu(y, self.config.leaky_slope);
        }
        let t = tape.shape(h)[0];
        let f = tape.value(h).len() / t;
        tape.reshape(h, &[t, f])
    }

    /// One LSTM layer over `x: [T, in]`. Returns the hidden state of every
    /// step in time order and the final state.
    fn lstm_layer(&self, tape: &mut Tape, x: Var, prefix: &str, reverse: bool) -> (Vec<Var>, Var) {
        let w_ih = self.vars.var(&format!("{prefix}.w_ih"));
        let w_hh = self.vars.var(&format!("{prefix}.w_hh"));
        let b = self.vars.var(&format!("{prefix}.b"));
        let hidden = tape.shape(w_hh)[0];
        let t_len = tape.shape(x)[0];
        let xw = tape.matmul(x, w_ih);
        let gates_x = tape.add_row_bias(xw, b);

        let mut state: Option<(Var, Var)> = None;
        let mut outputs = vec![None; t_len];
        let order: Vec<usize> = if reverse {
            (0..t_len).rev().collect()
        } else {
            (0..t_len).collect()
        };
        for t in order {
            let gx = tape.row(gates_x, t);
            let gates = match state {
                Some((h, _)) => {
                    let gh = tape.matmul(h, w_hh);
                    tape.add(gx, gh)
                }
                None => gx,
            };
            let i_pre = tape.slice_cols(gates, 0, hidden);
            let f_pre = tape.slice_cols(gates, hidden, hidden);
            let g_pre = tape.slice_cols(gates, 2 * hidden, hidden);
            let o_pre = tape.slice_cols(gates, 3 * hidden, hidden);
            let i = tape.sigmoid(i_pre);
            let g = tape.tanh(g_pre);
            let o = tape.sigmoid(o_pre);
            let ig = tape.mul(i, g);
            let c = match state {
                Some((_, c_prev)) => {
                    let f = tape.sigmoid(f_pre);
                    let fc = tape.mul(f, c_prev);
                    tape.add(fc, ig)
                }
                None => ig,
            };
            let tc = tape.tanh(c);
            let h = tape.mul(o, tc);
            outputs[t] = Some(h);
            state = Some((h, c));
        }
        let outputs: Vec<Var> = outputs.into_iter().map(|v| v.expect("every step visited")).collect();
        (outputs, state.expect("T >= 1").0)
    }

    /// Stacked (bi)LSTM. Returns the per-step output sequence `[T, F]` and
    /// the final-state vector `[1, F]`.
    fn recurrent(&self, tape: &mut Tape, x: Var, prefix: &str, bidirectional: bool) -> (Var, Var) {
        let mut seq = x;
        let mut last = x;
        for l in 0..self.config.temporal.lstm_layers {
            if bidirectional {
                let (fwd, fwd_last) = self.lstm_layer(tape, seq, &format!("{prefix}.lstm{l}.fwd"), false);
                let (bwd, bwd_last) = self.lstm_layer(tape, seq, &format!("{prefix}.lstm{l}.bwd"), true);
                let f = tape.stack_rows(&fwd);
                let b = tape.stack_rows(&bwd);
                seq = tape.concat_cols(&[f, b]);
                last = tape.concat_cols(&[fwd_last, bwd_last]);
            } else {
                let (hs, h_last) = self.lstm_layer(tape, seq, &format!("{prefix}.lstm{l}"), false);
                seq = tape.stack_rows(&hs);
                last = h_last;
            }
        }
        (seq, last)
    }

    /// Single dot-product self-attention layer with a residual connection.
    fn attention(&self, tape: &mut Tape, x: Var, prefix: &str, positional: bool) -> Var {
        let (t, f) = (tape.shape(x)[0], tape.shape(x)[1]);
        let input = if positional {
            let pe = tape.leaf(sinusoidal_encoding(t, f));
            tape.add(x, pe)
        } else {
            x
        };
        let heads = self.config.temporal.attn_heads;
        let dh = f / heads;
        let q = tape.matmul(input, self.vars.var(&format!("{prefix}.attn.wq")));
        let k = tape.matmul(input, self.vars.var(&format!("{prefix}.attn.wk")));
        let v = tape.matmul(input, self.vars.var(&format!("{prefix}.attn.wv")));
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice_cols(q, h * dh, dh);
            let kh = tape.slice_cols(k, h * dh, dh);
            let vh = tape.slice_cols(v, h * dh, dh);
            let kt = tape.transpose(kh);
            let scores = tape.matmul(qh, kt);
            let scaled = tape.scale(scores, 1.0 / (dh as f64).sqrt());
            let attn = tape.softmax_rows(scaled);
            outs.push(tape.matmul(attn, vh));
        }
        let heads_out = if heads == 1 { outs[0] } else { tape.concat_cols(&outs) };
        let proj = tape.matmul(heads_out, self.vars.var(&format!("{prefix}.attn.wo")));
        tape.add(input, proj)
    }

    /// Collapses frame features `[T, F]` into one row vector `[1, A]`.
    pub fn temporal_aggregate(&self, tape: &mut Tape, x: Var, prefix: &str, kind: TemporalKind, plan: &TemporalPlan) -> Var {
        match kind {
            TemporalKind::Conv1d => {
                let TemporalPlan::Conv { lens, .. } = plan else {
                    unreachable!("conv1d stage needs a conv plan")
                };
                let g = self.config.conv1d_geom();
                let mut h = x;
                for i in 0..lens.len() - 1 {
                    let w = self.vars.var(&format!("{prefix}.conv{i}.w"));
                    let b = self.vars.var(&format!("{prefix}.conv{i}.b"));
                    let y = tape.conv1d(h, w, b, g);
                    h = tape.leaky_relu(y, self.config.leaky_slope);
                }
                let n = tape.value(h).len();
                tape.reshape(h, &[1, n])
            }
            TemporalKind::Lstm | TemporalKind::Bilstm => {
                self.recurrent(tape, x, prefix, kind == TemporalKind::Bilstm).1
            }
            TemporalKind::AttnPe | TemporalKind::AttnNope => {
                let y = self.attention(tape, x, prefix, kind == TemporalKind::AttnPe);
                tape.mean_rows(y)
            }
        }
    }

    pub fn encoder(&self, tape: &mut Tape, x: Var) -> Var {
        let feats = self.frame_features(tape, x, "enc", &self.config.encoder_conv);
        let agg = self.temporal_aggregate(tape, feats, "enc.temporal", self.config.temporal_kind, &self.plan.enc_temporal);
        self.linear(tape, agg, "enc.fc")
    }

    /// `z: [1, z_dim]`, `onehot: [1, n_classes]` -> `[T, 1, D, H, W]` in [-1, 1].
    pub fn generator(&self, tape: &mut Tape, z: Var, onehot: Var) -> Var {
        let cfg = self.config;
        let slope = cfg.leaky_slope;
        let f = self.plan.encoder.features();
        let t = cfg.frames();
        let input = tape.concat_cols(&[z, onehot]);
        let seed_lin = self.linear(tape, input, "gen.fc");
        let seed = tape.leaky_relu(seed_lin, slope);

        let frames = match (cfg.temporal_kind, &self.plan.enc_temporal) {
            (TemporalKind::Conv1d, TemporalPlan::Conv { lens, channels, .. }) => {
                let g = cfg.conv1d_geom();
                let mut h = tape.reshape(seed, &[*lens.last().unwrap(), *channels]);
                for i in (0..lens.len() - 1).rev() {
                    let w = self.vars.var(&format!("gen.temporal.tconv{i}.w"));
                    let b = self.vars.var(&format!("gen.temporal.tconv{i}.b"));
                    let y = tape.conv_transpose1d(h, w, b, g, self.plan.gen_temporal_out_pads[i]);
                    h = tape.leaky_relu(y, slope);
                }
                h
            }
            (TemporalKind::Lstm | TemporalKind::Bilstm, _) => {
                let x = tape.reshape(seed, &[t, f]);
                self.recurrent(tape, x, "gen.temporal", cfg.temporal_kind == TemporalKind::Bilstm).0
            }
            (TemporalKind::AttnPe | TemporalKind::AttnNope, _) => {
                let x = tape.reshape(seed, &[t, f]);
                self.attention(tape, x, "gen.temporal", cfg.temporal_kind == TemporalKind::AttnPe)
            }
            (kind, plan) => unreachable!("{kind:?} with {plan:?}"),
        };

        let [d, h, w] = self.plan.encoder.last_dims();
        let mut x = tape.reshape(frames, &[t, self.plan.encoder.last_channels(), d, h, w]);
        for i in (0..cfg.encoder_conv.len()).rev() {
            let layer = cfg.encoder_conv[i];
            let wv = self.vars.var(&format!("gen.deconv{i}.w"));
            let bv = self.vars.var(&format!("gen.deconv{i}.b"));
            let y = tape.conv_transpose3d(x, wv, bv, layer.geom(), self.plan.gen_out_pads[i]);
            x = if i == 0 { tape.tanh(y) } else { tape.leaky_relu(y, slope) };
        }
        x
    }

    /// Probability `[1, 1]` that `x` is real.
    pub fn discriminator(&self, tape: &mut Tape, x: Var) -> Var {
        let feats = self.frame_features(tape, x, "disc", &self.config.disc_conv);
        let agg = self.temporal_aggregate(tape, feats, "disc.temporal", self.config.disc_kind(), &self.plan.disc_temporal);
        let logit = self.mlp_logit(tape, agg, "disc.mlp", &self.config.disc_mlp);
        tape.sigmoid(logit)
    }

    /// Probability `[1, 1]` that `z` came from the encoder.
    pub fn code_discriminator(&self, tape: &mut Tape, z: Var) -> Var {
        let logit = self.mlp_logit(tape, z, "code.mlp", &self.config.code_mlp);
        tape.sigmoid(logit)
    }
}

pub fn onehot(label: Label, n_classes: usize) -> Tensor {
    let mut v = vec![0.0; n_classes];
    v[label.index()] = 1.0;
    Tensor::new(vec![1, n_classes], v)
}

/// Encoder, generator, discriminator and code discriminator with their
/// architecture.
#[derive(Clone, Debug)]
pub struct AlphaGan {
    pub config: ArchConfig,
    pub plan: ShapePlan,
    pub params: ModelParams,
}

impl AlphaGan {
    pub fn new(config: ArchConfig, seed: u64) -> Result<Self> {
        let plan = config.plan()?;
        let params = init_params(&config, seed)?;
        Ok(AlphaGan { config, plan, params })
    }

    pub fn from_params(config: ArchConfig, params: ModelParams) -> Result<Self> {
        let plan = config.plan()?;
        params.check_against(&config)?;
        Ok(AlphaGan { config, plan, params })
    }

    pub fn graph<'a>(&'a self, vars: &'a Bound) -> Graph<'a> {
        Graph {
            config: &self.config,
            plan: &self.plan,
            vars,
        }
    }

    pub fn check_input(&self, seq: &VolumeSequence) -> Result<()> {
        if seq.dims != self.config.input_dims {
            return Err(Error::Config(format!(
                "sequence {} has dims {:?}, model expects {:?}",
                seq.subject_id, seq.dims, self.config.input_dims
            )));
        }
        Ok(())
    }

    fn check_z(&self, z: &Embedding) -> Result<()> {
        if z.z.len() != self.config.z_dim {
            return Err(Error::Validation(format!(
                "embedding has length {}, expected z_dim {}",
                z.z.len(),
                self.config.z_dim
            )));
        }
        Ok(())
    }

    pub fn encode(&self, seq: &VolumeSequence) -> Result<Embedding> {
        self.check_input(seq)?;
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, &[Component::Encoder]);
        let x = tape.leaf(sequence_tensor(seq));
        let z = self.graph(&vars).encoder(&mut tape, x);
        Ok(Embedding::new(tape.value(z).data().to_vec()))
    }

    pub fn generate(&self, z: &Embedding, label: Label) -> Result<VolumeSequence> {
        self.check_z(z)?;
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, &[Component::Generator]);
        let zv = tape.leaf(z.to_tensor());
        let oh = tape.leaf(onehot(label, self.config.n_classes));
        let x = self.graph(&vars).generator(&mut tape, zv, oh);
        let data = tape.value(x).data().iter().map(|&v| v as f32).collect();
        let mut seq = VolumeSequence::zeros("generated", self.config.input_dims);
        seq.data = data;
        seq.label = Some(label);
        Ok(seq)
    }

    pub fn discriminate(&self, seq: &VolumeSequence) -> Result<f64> {
        self.check_input(seq)?;
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, &[Component::Discriminator]);
        let x = tape.leaf(sequence_tensor(seq));
        let p = self.graph(&vars).discriminator(&mut tape, x);
        Ok(tape.value(p).item())
    }

    pub fn code_discriminate(&self, z: &Embedding) -> Result<f64> {
        self.check_z(z)?;
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, &[Component::CodeDiscriminator]);
        let zv = tape.leaf(z.to_tensor());
        let p = self.graph(&vars).code_discriminator(&mut tape, zv);
        Ok(tape.value(p).item())
    }

    /// Runs the encoder's temporal stage alone on frame features `[T, F]`.
    pub fn temporal_aggregate(&self, features: &Tensor) -> Result<Vec<f64>> {
        let f = self.plan.encoder.features();
        if features.shape() != [self.config.frames(), f] {
            return Err(Error::Config(format!(
                "features have shape {:?}, expected [{}, {f}]",
                features.shape(),
                self.config.frames()
            )));
        }
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, &[Component::Encoder]);
        let x = tape.leaf(features.clone());
        let y = self
            .graph(&vars)
            .temporal_aggregate(&mut tape, x, "enc.temporal", self.config.temporal_kind, &self.plan.enc_temporal);
        Ok(tape.value(y).data().to_vec())
    }
}
