//! Central finite-difference checks of network gradients.

use rand::Rng as _;

use super::config::ArchConfig;
use super::model::{onehot, sequence_tensor, AlphaGan};
use super::params::Component;
use crate::error::Result;
use crate::rng;
use crate::seqvol::{Label, VolumeSequence};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckEntry {
    /// `|a - n| / max(|a|, |n|, floor)`.
    pub fn rel_error(&self, floor: f64) -> f64 {
        let d = (self.analytic - self.numeric).abs();
        d / self.analytic.abs().max(self.numeric.abs()).max(floor)
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub component: Component,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self, floor: f64) -> f64 {
        self.entries.iter().map(|e| e.rel_error(floor)).fold(0.0, f64::max)
    }
}

struct Probe {
    x: Tensor,
    z: Tensor,
    label: Tensor,
    proj_x: Tensor,
    proj_z: Tensor,
}

impl Probe {
    fn new(config: &ArchConfig, seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        let mut uniform = |shape: &[usize]| {
            let n = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(-1.0..1.0)).collect())
        };
        let seq = VolumeSequence::zeros("probe", config.input_dims);
        let xs = sequence_tensor(&seq).shape().to_vec();
        Probe {
            x: uniform(&xs),
            z: uniform(&[1, config.z_dim]),
            label: onehot(Label::Asd, config.n_classes),
            proj_x: uniform(&xs),
            proj_z: uniform(&[1, config.z_dim]),
        }
    }
}

/// Scalar objective depending only on `component`'s parameters.
fn objective(model: &AlphaGan, probe: &Probe, component: Component, tape: &mut Tape) -> (Var, crate::nets::Bound) {
    let vars = model.params.bind(tape, &[component]);
    let g = model.graph(&vars);
    let out = match component {
        Component::Encoder => {
            let x = tape.leaf(probe.x.clone());
            let z = g.encoder(tape, x);
            let p = tape.leaf(probe.proj_z.clone());
            tape.mul(z, p)
        }
        Component::Generator => {
            let z = tape.leaf(probe.z.clone());
            let l = tape.leaf(probe.label.clone());
            let y = g.generator(tape, z, l);
            let p = tape.leaf(probe.proj_x.clone());
            tape.mul(y, p)
        }
        Component::Discriminator => {
            let x = tape.leaf(probe.x.clone());
            let d = g.discriminator(tape, x);
            tape.ln_clamped(d, 1e-12)
        }
        Component::CodeDiscriminator => {
            let z = tape.leaf(probe.z.clone());
            let c = g.code_discriminator(tape, z);
            tape.ln_clamped(c, 1e-12)
        }
    };
    let loss = tape.sum(out);
    (loss, vars)
}

fn evaluate(model: &AlphaGan, probe: &Probe, component: Component) -> f64 {
    let mut tape = Tape::new();
    let (loss, _) = objective(model, probe, component, &mut tape);
    tape.value(loss).item()
}

/// Compares backprop against central differences with step `h` on
/// `per_array` random entries of every array of `component`.
pub fn check_component(model: &AlphaGan, component: Component, per_array: usize, h: f64, seed: u64) -> Result<GradCheckReport> {
    let probe = Probe::new(&model.config, seed);
    let mut tape = Tape::new();
    let (loss, vars) = objective(model, &probe, component, &mut tape);
    let mut grads = tape.backward(loss);
    let analytic = vars.grads(&tape, &mut grads, component);

    let mut pick = rng::stream(seed, 1);
    let mut work = model.clone();
    let mut entries = Vec::new();
    for (name, g) in &analytic {
        let n = g.len();
        for _ in 0..per_array.min(n) {
            let index = pick.gen_range(0..n);
            let orig = work.params.get(name).expect("bound array").data()[index];
            work.params.get_mut(name).unwrap().data_mut()[index] = orig + h;
            let up = evaluate(&work, &probe, component);
            work.params.get_mut(name).unwrap().data_mut()[index] = orig - h;
            let down = evaluate(&work, &probe, component);
            work.params.get_mut(name).unwrap().data_mut()[index] = orig;
            entries.push(GradCheckEntry {
                param: name.clone(),
                index,
                analytic: g.data()[index],
                numeric: (up - down) / (2.0 * h),
            });
        }
    }
    Ok(GradCheckReport { component, entries })
}

/// Runs [`check_component`] for all four components.
pub fn check_all(model: &AlphaGan, per_array: usize, h: f64, seed: u64) -> Result<Vec<GradCheckReport>> {
    Component::ALL
        .iter()
        .map(|&c| check_component(model, c, per_array, h, seed))
        .collect()
}
