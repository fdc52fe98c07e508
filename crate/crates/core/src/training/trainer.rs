//! Autoencoder pretraining and the three-step adversarial loop.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::adam::{adam_step, AdamParams};
use super::checkpoint::{save_checkpoint, OptimState, Session, Stage};
use super::config::TrainConfig;
use super::history::{StepRecord, TrainHistory};
use super::losses::{DiscOutputs, LOG_EPS};
use crate::error::{Error, Result};
use crate::nets::{onehot, sequence_tensor, AlphaGan, Component, ModelParams};
use crate::rng;
use crate::seqvol::{Label, VolumeSequence};
use crate::tensor::{Grads, Tape, Tensor, Var};

const SALT_PRETRAIN_ORDER: u64 = 0x5052_4554;
const SALT_GAN_ORDER: u64 = 0x4741_4e4f;
const SALT_GAN_NOISE: u64 = 0x4741_4e5a;

/// Where and how often to write checkpoints during a stage.
#[derive(Clone, Debug, Default)]
pub struct CheckpointPlan {
    pub dir: Option<PathBuf>,
}

impl CheckpointPlan {
    pub fn none() -> Self {
        CheckpointPlan { dir: None }
    }

    pub fn in_dir(dir: impl Into<PathBuf>) -> Self {
        CheckpointPlan { dir: Some(dir.into()) }
    }

    pub fn stem(dir: &Path, step: usize) -> PathBuf {
        dir.join(format!("ckpt_{step}"))
    }
}

struct Example {
    x: Tensor,
    label: Label,
}

fn prepare(model: &AlphaGan, data: &[VolumeSequence]) -> Result<Vec<Example>> {
    if data.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    data.iter()
        .map(|seq| {
            model.check_input(seq)?;
            let label = seq
                .label
                .ok_or_else(|| Error::Validation(format!("sequence {} has no label", seq.subject_id)))?;
            Ok(Example { x: sequence_tensor(seq), label })
        })
        .collect()
}

/// Number of optimization steps in a stage of `epochs` over `n` examples.
pub fn stage_steps(n: usize, epochs: usize, cfg: &TrainConfig) -> usize {
    let per_epoch = n.div_ceil(cfg.batch_size);
    let total = epochs * per_epoch;
    cfg.max_steps.map_or(total, |m| m.min(total))
}

/// Example indices of batch `step`: epochs are seeded shuffles of the data.
fn batch_indices(n: usize, step: usize, batch: usize, seed: u64) -> Vec<usize> {
    let per_epoch = n.div_ceil(batch);
    let (epoch, pos) = (step / per_epoch, step % per_epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, epoch as u64));
    order[pos * batch..((pos + 1) * batch).min(n)].to_vec()
}

fn apply_updates(
    params: &mut ModelParams,
    optim: &mut OptimState,
    grads: BTreeMap<String, Tensor>,
    hp: AdamParams,
) -> Result<()> {
    for (name, g) in grads {
        if !g.all_finite() {
            return Err(Error::NonFinite(format!("gradient of {name} is not finite")));
        }
        let p = params.get_mut(&name).expect("gradient for a known array");
        let state = optim.entry(&name, p.shape());
        adam_step(p, &g, state, hp);
        if !p.all_finite() {
            return Err(Error::NonFinite(format!("parameter {name} became non-finite")));
        }
    }
    Ok(())
}

fn collect_grads(
    vars: &crate::nets::Bound,
    tape: &Tape,
    grads: &mut Grads,
    components: &[Component],
) -> BTreeMap<String, Tensor> {
    components
        .iter()
        .flat_map(|&c| vars.grads(tape, grads, c))
        .collect()
}

fn adam(cfg: &TrainConfig, lr: f64) -> AdamParams {
    AdamParams {
        lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.eps,
    }
}

fn divergence(session: &Session, step: usize, detail: &str, last_ckpt: &Option<PathBuf>) -> Error {
    let norms = session.model.params.norms();
    let ckpt = last_ckpt
        .as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_else(|| "none written".into());
    Error::NonFinite(format!(
        "training diverged at step {step}: {detail}; parameter norms {norms:?}; last good checkpoint: {ckpt}"
    ))
}

fn maybe_checkpoint(session: &Session, cfg: &TrainConfig, plan: &CheckpointPlan, last: &mut Option<PathBuf>) -> Result<()> {
    if let Some(dir) = &plan.dir {
        if cfg.checkpoint_every > 0 && session.step % cfg.checkpoint_every == 0 {
            let stem = CheckpointPlan::stem(dir, session.step);
            save_checkpoint(session, &stem)?;
            *last = Some(stem);
        }
    }
    Ok(())
}

fn run_stage<F>(
    session: &mut Session,
    total: usize,
    cfg: &TrainConfig,
    plan: &CheckpointPlan,
    mut step_fn: F,
) -> Result<TrainHistory>
where
    F: FnMut(&mut Session, usize) -> Result<StepRecord>,
{
    let started = Instant::now();
    let mut history = TrainHistory::default();
    let mut last_ckpt = None;
    while session.step < total {
        let step = session.step;
        let mut record = match step_fn(session, step) {
            Ok(r) => r,
            Err(Error::NonFinite(detail)) => return Err(divergence(session, step + 1, &detail, &last_ckpt)),
            Err(e) => return Err(e),
        };
        if !record.all_finite() {
            let detail = format!(
                "loss_eg {} loss_d {:?} loss_c {:?} mae {}",
                record.loss_eg, record.loss_d, record.loss_c, record.mae
            );
            return Err(divergence(session, step + 1, &detail, &last_ckpt));
        }
        session.step += 1;
        record.step = session.step;
        record.seconds = started.elapsed().as_secs_f64();
        log::debug!("{:?} step {} loss_eg {:.5} mae {:.5}", session.stage, record.step, record.loss_eg, record.mae);
        history.records.push(record);
        maybe_checkpoint(session, cfg, plan, &mut last_ckpt)?;
    }
    Ok(history)
}

/// Trains encoder and generator on `MSE(x, G(E(x), label))` with the true
/// label. Resumes from `session.step`.
pub fn pretrain_autoencoder(
    session: &mut Session,
    data: &[VolumeSequence],
    cfg: &TrainConfig,
    plan: &CheckpointPlan,
) -> Result<TrainHistory> {
    cfg.validate_allowing_frozen()?;
    if session.stage != Stage::Pretrain {
        return Err(Error::Config("session is past pretraining; start from a pretraining checkpoint".into()));
    }
    let examples = prepare(&session.model, data)?;
    let total = stage_steps(examples.len(), cfg.pretrain_epochs, cfg);
    let order_seed = rng::mix(cfg.seed, SALT_PRETRAIN_ORDER);
    let hp = adam(cfg, cfg.pretrain_lr());
    let n_classes = session.model.config.n_classes;

    run_stage(session, total, cfg, plan, |session, step| {
        let batch = batch_indices(examples.len(), step, cfg.batch_size, order_seed);
        let mut tape = Tape::new();
        let comps = [Component::Encoder, Component::Generator];
        let vars = session.model.params.bind(&mut tape, &comps);
        let g = session.model.graph(&vars);
        let mut mses = Vec::new();
        let mut mae = 0.0;
        for &i in &batch {
            let ex = &examples[i];
            let x = tape.leaf(ex.x.clone());
            let oh = tape.leaf(onehot(ex.label, n_classes));
            let z = g.encoder(&mut tape, x);
            let xr = g.generator(&mut tape, z, oh);
            let diff = tape.sub(xr, x);
            let sq = tape.square(diff);
            mses.push(tape.mean(sq));
            let d = tape.value(diff);
            mae += d.data().iter().map(|v| v.abs()).sum::<f64>() / d.len() as f64;
        }
        let loss = mean_of(&mut tape, &mses);
        let mse = tape.value(loss).item();
        if !mse.is_finite() {
            return Err(Error::NonFinite(format!("reconstruction loss {mse}")));
        }
        let mut grads = tape.backward(loss);
        let grads = collect_grads(&vars, &tape, &mut grads, &comps);
        apply_updates(&mut session.model.params, &mut session.optim, grads, hp)?;
        Ok(StepRecord {
            step,
            loss_eg: mse,
            loss_d: None,
            loss_c: None,
            mae: mae / batch.len() as f64,
            seconds: 0.0,
            outputs: None,
        })
    })
}

/// Mean over `data` of `MSE(x, G(E(x), label))`.
pub fn reconstruction_mse(model: &AlphaGan, data: &[VolumeSequence]) -> Result<f64> {
    let examples = prepare(model, data)?;
    let mut total = 0.0;
    for (seq, ex) in data.iter().zip(&examples) {
        let rec = model.generate(&model.encode(seq)?, ex.label)?;
        let se: f64 = rec.data.iter().zip(&seq.data).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
        total += se / seq.data.len() as f64;
    }
    Ok(total / data.len() as f64)
}

fn mean_of(tape: &mut Tape, terms: &[Var]) -> Var {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t);
    }
    tape.scale(acc, 1.0 / terms.len() as f64)
}

/// Scalar `ln p` of a single probability `[1, 1]`.
fn ln_p(tape: &mut Tape, p: Var) -> Var {
    let l = tape.ln_clamped(p, LOG_EPS);
    tape.sum(l)
}

fn ln_one_minus(tape: &mut Tape, p: Var) -> Var {
    let q = tape.one_minus(p);
    ln_p(tape, q)
}

/// Noise and fake labels shared by the three sub-steps of one step.
struct StepDraws {
    z_rand: Vec<Tensor>,
    fake_labels: Vec<Label>,
}

fn draw_step(seed: u64, step: usize, batch: usize, z_dim: usize) -> StepDraws {
    let mut r = rng::stream(seed, step as u64);
    let mut z_rand = Vec::with_capacity(batch);
    let mut fake_labels = Vec::with_capacity(batch);
    for _ in 0..batch {
        let z: Vec<f64> = (0..z_dim).map(|_| r.sample(StandardNormal)).collect();
        z_rand.push(Tensor::new(vec![1, z_dim], z));
        fake_labels.push(if r.gen_bool(0.5) { Label::Asd } else { Label::Hc });
    }
    StepDraws { z_rand, fake_labels }
}

/// Three sequential updates per batch: encoder and generator on `loss_eg`,
/// then the discriminator on `loss_d`, then the code discriminator on
/// `loss_c`. A session still in pretraining switches to the adversarial
/// stage with fresh optimizer state.
pub fn train_alpha_gan(
    session: &mut Session,
    data: &[VolumeSequence],
    cfg: &TrainConfig,
    plan: &CheckpointPlan,
) -> Result<TrainHistory> {
    cfg.validate_allowing_frozen()?;
    let examples = prepare(&session.model, data)?;
    if session.stage == Stage::Pretrain {
        session.stage = Stage::Gan;
        session.step = 0;
        session.optim = OptimState::default();
    }
    let total = stage_steps(examples.len(), cfg.gan_epochs, cfg);
    let order_seed = rng::mix(cfg.seed, SALT_GAN_ORDER);
    let noise_seed = rng::mix(cfg.seed, SALT_GAN_NOISE);
    let n_classes = session.model.config.n_classes;
    let z_dim = session.model.config.z_dim;

    run_stage(session, total, cfg, plan, |session, step| {
        let batch = batch_indices(examples.len(), step, cfg.batch_size, order_seed);
        let draws = draw_step(noise_seed, step, batch.len(), z_dim);
        let nb = batch.len() as f64;

        // (1) encoder + generator
        let (loss_eg, mae) = {
            let mut tape = Tape::new();
            let vars = session.model.params.bind(&mut tape, &Component::ALL);
            let g = session.model.graph(&vars);
            let mut terms = Vec::new();
            let mut mae_terms = Vec::new();
            for (k, &i) in batch.iter().enumerate() {
                let ex = &examples[i];
                let x = tape.leaf(ex.x.clone());
                let oh = tape.leaf(onehot(ex.label, n_classes));
                let z_real = g.encoder(&mut tape, x);
                let xr = g.generator(&mut tape, z_real, oh);
                let zr = tape.leaf(draws.z_rand[k].clone());
                let ohf = tape.leaf(onehot(draws.fake_labels[k], n_classes));
                let xf = g.generator(&mut tape, zr, ohf);
                let d_recon = g.discriminator(&mut tape, xr);
                let d_fake = g.discriminator(&mut tape, xf);
                let c_real = g.code_discriminator(&mut tape, z_real);
                let diff = tape.sub(xr, x);
                let ad = tape.abs(diff);
                let m = tape.mean(ad);
                mae_terms.push(m);
                let a = ln_p(&mut tape, d_recon);
                let b = ln_p(&mut tape, d_fake);
                let c = ln_one_minus(&mut tape, c_real);
                let ab = tape.add(a, b);
                let abc = tape.add(ab, c);
                let weighted = tape.scale(m, cfg.lambda);
                terms.push(tape.sub(weighted, abc));
            }
            let loss = mean_of(&mut tape, &terms);
            let mae_v = mae_terms.iter().map(|&m| tape.value(m).item()).sum::<f64>() / nb;
            let loss_v = tape.value(loss).item();
            if !loss_v.is_finite() {
                return Err(Error::NonFinite(format!("loss_eg {loss_v}")));
            }
            let comps = [Component::Encoder, Component::Generator];
            let mut grads = tape.backward(loss);
            let grads = collect_grads(&vars, &tape, &mut grads, &comps);
            apply_updates(&mut session.model.params, &mut session.optim, grads, adam(cfg, cfg.lr_eg))?;
            (loss_v, mae_v)
        };

        // encoder and generator outputs after update (1), held constant below
        let mut z_real = Vec::new();
        let mut x_rec = Vec::new();
        let mut x_fake = Vec::new();
        {
            let mut tape = Tape::new();
            let vars = session
                .model
                .params
                .bind(&mut tape, &[Component::Encoder, Component::Generator]);
            let g = session.model.graph(&vars);
            for (k, &i) in batch.iter().enumerate() {
                let ex = &examples[i];
                let x = tape.leaf(ex.x.clone());
                let oh = tape.leaf(onehot(ex.label, n_classes));
                let z = g.encoder(&mut tape, x);
                let xr = g.generator(&mut tape, z, oh);
                let zr = tape.leaf(draws.z_rand[k].clone());
                let ohf = tape.leaf(onehot(draws.fake_labels[k], n_classes));
                let xf = g.generator(&mut tape, zr, ohf);
                z_real.push(tape.value(z).clone());
                x_rec.push(tape.value(xr).clone());
                x_fake.push(tape.value(xf).clone());
            }
        }

        // (2) discriminator
        let (loss_d, d_probs) = {
            let mut tape = Tape::new();
            let vars = session.model.params.bind(&mut tape, &[Component::Discriminator]);
            let g = session.model.graph(&vars);
            let mut terms = Vec::new();
            let mut probs = [0.0; 3];
            for (k, &i) in batch.iter().enumerate() {
                let x = tape.leaf(examples[i].x.clone());
                let xr = tape.leaf(x_rec[k].clone());
                let xf = tape.leaf(x_fake[k].clone());
                let d_real = g.discriminator(&mut tape, x);
                let d_recon = g.discriminator(&mut tape, xr);
                let d_fake = g.discriminator(&mut tape, xf);
                for (slot, v) in [d_real, d_recon, d_fake].into_iter().enumerate() {
                    probs[slot] += tape.value(v).item() / nb;
                }
                let a = ln_p(&mut tape, d_real);
                let b = ln_one_minus(&mut tape, d_recon);
                let c = ln_one_minus(&mut tape, d_fake);
                let ab = tape.add(a, b);
                let abc = tape.add(ab, c);
                terms.push(tape.scale(abc, -1.0));
            }
            let loss = mean_of(&mut tape, &terms);
            let loss_v = tape.value(loss).item();
            if !loss_v.is_finite() {
                return Err(Error::NonFinite(format!("loss_d {loss_v}")));
            }
            let mut grads = tape.backward(loss);
            let grads = collect_grads(&vars, &tape, &mut grads, &[Component::Discriminator]);
            apply_updates(&mut session.model.params, &mut session.optim, grads, adam(cfg, cfg.lr_d))?;
            (loss_v, probs)
        };

        // (3) code discriminator
        let (loss_c, c_probs) = {
            let mut tape = Tape::new();
            let vars = session.model.params.bind(&mut tape, &[Component::CodeDiscriminator]);
            let g = session.model.graph(&vars);
            let mut terms = Vec::new();
            let mut probs = [0.0; 2];
            for k in 0..batch.len() {
                let zr = tape.leaf(z_real[k].clone());
                let zn = tape.leaf(draws.z_rand[k].clone());
                let c_real = g.code_discriminator(&mut tape, zr);
                let c_rand = g.code_discriminator(&mut tape, zn);
                probs[0] += tape.value(c_real).item() / nb;
                probs[1] += tape.value(c_rand).item() / nb;
                let a = ln_p(&mut tape, c_real);
                let b = ln_one_minus(&mut tape, c_rand);
                let ab = tape.add(a, b);
                terms.push(tape.scale(ab, -1.0));
            }
            let loss = mean_of(&mut tape, &terms);
            let loss_v = tape.value(loss).item();
            if !loss_v.is_finite() {
                return Err(Error::NonFinite(format!("loss_c {loss_v}")));
            }
            let mut grads = tape.backward(loss);
            let grads = collect_grads(&vars, &tape, &mut grads, &[Component::CodeDiscriminator]);
            apply_updates(&mut session.model.params, &mut session.optim, grads, adam(cfg, cfg.lr_c))?;
            (loss_v, probs)
        };

        Ok(StepRecord {
            step,
            loss_eg,
            loss_d: Some(loss_d),
            loss_c: Some(loss_c),
            mae,
            seconds: 0.0,
            outputs: Some(DiscOutputs {
                d_real: d_probs[0],
                d_recon: d_probs[1],
                d_fake: d_probs[2],
                c_real: c_probs[0],
                c_rand: c_probs[1],
            }),
        })
    })
}
