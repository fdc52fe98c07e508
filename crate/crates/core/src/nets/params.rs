use std::collections::BTreeMap;

use rand::Rng;

use super::config::{ArchConfig, ShapePlan, TemporalKind, TemporalPlan};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Grads, Tape, Tensor, Var};

/// The four trainable networks of the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Component {
    Encoder,
    Generator,
    Discriminator,
    CodeDiscriminator,
}

impl Component {
    pub const ALL: [Component; 4] = [
        Component::Encoder,
        Component::Generator,
        Component::Discriminator,
        Component::CodeDiscriminator,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            Component::Encoder => "enc.",
            Component::Generator => "gen.",
            Component::Discriminator => "disc.",
            Component::CodeDiscriminator => "code.",
        }
    }

    pub fn of(name: &str) -> Option<Component> {
        Component::ALL.into_iter().find(|c| name.starts_with(c.prefix()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// Zero for biases, which are initialized to zero.
    pub fan_in: usize,
}

/// Named trainable arrays for all four networks.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    arrays: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub fn from_arrays(arrays: BTreeMap<String, Tensor>) -> Self {
        ModelParams { arrays }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.arrays.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.arrays.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.arrays.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.arrays.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.arrays.keys()
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn component_names(&self, c: Component) -> Vec<String> {
        self.arrays
            .keys()
            .filter(|n| n.starts_with(c.prefix()))
            .cloned()
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.arrays.values().all(Tensor::all_finite)
    }

    /// L2 norm per component, for divergence diagnostics.
    pub fn norms(&self) -> BTreeMap<&'static str, f64> {
        let mut out = BTreeMap::new();
        for c in Component::ALL {
            let ss: f64 = self
                .arrays
                .iter()
                .filter(|(n, _)| n.starts_with(c.prefix()))
                .map(|(_, t)| t.sum_sq())
                .sum();
            out.insert(c.prefix().trim_end_matches('.'), ss.sqrt());
        }
        out
    }

    /// Checks names and shapes against the registry implied by `config`.
    pub fn check_against(&self, config: &ArchConfig) -> Result<()> {
        let specs = param_specs(config)?;
        for spec in &specs {
            match self.arrays.get(&spec.name) {
                None => return Err(Error::Validation(format!("missing parameter array {}", spec.name))),
                Some(t) if t.shape() != spec.shape.as_slice() => {
                    return Err(Error::Validation(format!(
                        "parameter array {} has shape {:?}, config expects {:?}",
                        spec.name,
                        t.shape(),
                        spec.shape
                    )))
                }
                _ => {}
            }
        }
        if self.arrays.len() != specs.len() {
            let extra = self
                .arrays
                .keys()
                .find(|k| !specs.iter().any(|s| &s.name == *k))
                .cloned()
                .unwrap_or_default();
            return Err(Error::Validation(format!("unexpected parameter array {extra}")));
        }
        Ok(())
    }

    /// Pushes every array of `components` onto `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape, components: &[Component]) -> Bound {
        let mut vars = BTreeMap::new();
        for (name, t) in &self.arrays {
            if Component::of(name).is_some_and(|c| components.contains(&c)) {
                vars.insert(name.clone(), tape.leaf(t.clone()));
            }
        }
        Bound { vars }
    }
}

/// Parameter arrays bound to leaves of one tape.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} is not bound on this tape"))
    }

    /// Gradients of the bound arrays belonging to `component`; arrays that
    /// received no gradient get zeros.
    pub fn grads(&self, tape: &Tape, grads: &mut Grads, component: Component) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .filter(|(n, _)| n.starts_with(component.prefix()))
            .map(|(n, &v)| {
                let g = grads
                    .take(v)
                    .unwrap_or_else(|| Tensor::zeros(tape.shape(v)));
                (n.clone(), g)
            })
            .collect()
    }
}

struct SpecBuilder {
    specs: Vec<ParamSpec>,
}

impl SpecBuilder {
    fn weight(&mut self, name: String, shape: Vec<usize>, fan_in: usize) {
        self.specs.push(ParamSpec {
            name,
            shape,
            fan_in: fan_in.max(1),
        });
    }

    fn bias(&mut self, name: String, len: usize) {
        self.specs.push(ParamSpec {
            name,
            shape: vec![len],
            fan_in: 0,
        });
    }

    fn linear(&mut self, prefix: &str, input: usize, output: usize) {
        self.weight(format!("{prefix}.w"), vec![input, output], input);
        self.bias(format!("{prefix}.b"), output);
    }

    fn lstm(&mut self, prefix: &str, input: usize, hidden: usize) {
        self.weight(format!("{prefix}.w_ih"), vec![input, 4 * hidden], input);
        self.weight(format!("{prefix}.w_hh"), vec![hidden, 4 * hidden], hidden);
        self.bias(format!("{prefix}.b"), 4 * hidden);
    }

    fn mlp(&mut self, prefix: &str, input: usize, hidden: &[usize]) {
        let mut width = input;
        for (i, &h) in hidden.iter().enumerate() {
            self.linear(&format!("{prefix}.fc{i}"), width, h);
            width = h;
        }
        self.linear(&format!("{prefix}.out"), width, 1);
    }

    /// Temporal stage parameters. `inverse` selects the generator's
    /// sequence-to-sequence counterpart.
    fn temporal(&mut self, prefix: &str, cfg: &ArchConfig, kind: TemporalKind, plan: &TemporalPlan, features: usize, inverse: bool) {
        match (kind, plan) {
            (TemporalKind::Conv1d, TemporalPlan::Conv { lens, channels, .. }) => {
                let k = cfg.temporal.conv1d_kernel;
                for i in 0..lens.len() - 1 {
                    let cin = if i == 0 { features } else { *channels };
                    if inverse {
                        // inverse of encoder temporal conv i: channels -> cin
                        self.weight(format!("{prefix}.tconv{i}.w"), vec![*channels, cin, k], *channels * k / cfg.temporal.conv1d_stride);
                        self.bias(format!("{prefix}.tconv{i}.b"), cin);
                    } else {
                        self.weight(format!("{prefix}.conv{i}.w"), vec![*channels, cin, k], cin * k);
                        self.bias(format!("{prefix}.conv{i}.b"), *channels);
                    }
                }
            }
            (TemporalKind::Lstm, _) => {
                for l in 0..cfg.temporal.lstm_layers {
                    self.lstm(&format!("{prefix}.lstm{l}"), features, features);
                }
            }
            (TemporalKind::Bilstm, _) => {
                let half = features / 2;
                for l in 0..cfg.temporal.lstm_layers {
                    self.lstm(&format!("{prefix}.lstm{l}.fwd"), features, half);
                    self.lstm(&format!("{prefix}.lstm{l}.bwd"), features, half);
                }
            }
            (TemporalKind::AttnPe | TemporalKind::AttnNope, _) => {
                for m in ["wq", "wk", "wv", "wo"] {
                    self.weight(format!("{prefix}.attn.{m}"), vec![features, features], features);
                }
            }
            (TemporalKind::Conv1d, other) => unreachable!("conv1d stage with plan {other:?}"),
        }
    }
}

/// Registry of every trainable array implied by `config`, in a fixed order.
pub fn param_specs(config: &ArchConfig) -> Result<Vec<ParamSpec>> {
    let plan: ShapePlan = config.plan()?;
    let mut b = SpecBuilder { specs: Vec::new() };

    // encoder
    let mut cin = 1;
    for (i, layer) in config.encoder_conv.iter().enumerate() {
        let k3 = layer.kernel.pow(3);
        b.weight(format!("enc.conv{i}.w"), vec![layer.channels, cin, layer.kernel, layer.kernel, layer.kernel], cin * k3);
        b.bias(format!("enc.conv{i}.b"), layer.channels);
        cin = layer.channels;
    }
    let f_enc = plan.encoder.features();
    b.temporal("enc.temporal", config, config.temporal_kind, &plan.enc_temporal, f_enc, false);
    b.linear("enc.fc", plan.enc_temporal.output(), config.z_dim);

    // generator: [z | one-hot] -> pre-aggregation shape -> inverse temporal -> deconvs
    let gen_in = config.z_dim + config.n_classes;
    let seed_width = match &plan.enc_temporal {
        TemporalPlan::Conv { .. } => plan.enc_temporal.output(),
        _ => config.frames() * f_enc,
    };
    b.linear("gen.fc", gen_in, seed_width);
    b.temporal("gen.temporal", config, config.temporal_kind, &plan.enc_temporal, f_enc, true);
    for (i, layer) in config.encoder_conv.iter().enumerate().rev() {
        let cout = if i == 0 { 1 } else { config.encoder_conv[i - 1].channels };
        let k3 = layer.kernel.pow(3);
        // each output voxel of a transposed conv sees about k^3 / s^3 taps per channel
        let fan_in = layer.channels * k3 / layer.stride.pow(3);
        b.weight(format!("gen.deconv{i}.w"), vec![layer.channels, cout, layer.kernel, layer.kernel, layer.kernel], fan_in);
        b.bias(format!("gen.deconv{i}.b"), cout);
    }

    // discriminator
    let mut cin = 1;
    for (i, layer) in config.disc_conv.iter().enumerate() {
        let k3 = layer.kernel.pow(3);
        b.weight(format!("disc.conv{i}.w"), vec![layer.channels, cin, layer.kernel, layer.kernel, layer.kernel], cin * k3);
        b.bias(format!("disc.conv{i}.b"), layer.channels);
        cin = layer.channels;
    }
    let f_disc = plan.discriminator.features();
    b.temporal("disc.temporal", config, config.disc_kind(), &plan.disc_temporal, f_disc, false);
    b.mlp("disc.mlp", plan.disc_temporal.output(), &config.disc_mlp);

    // code discriminator
    b.mlp("code.mlp", config.z_dim, &config.code_mlp);

    Ok(b.specs)
}

/// Weights ~ U(-a, a) with a = sqrt(6 / fan_in), so Var = 2 / fan_in; biases
/// zero. Deterministic in `seed`.
pub fn init_params(config: &ArchConfig, seed: u64) -> Result<ModelParams> {
    let mut rng = rng::seeded(seed);
    let mut arrays = BTreeMap::new();
    for spec in param_specs(config)? {
        let n: usize = spec.shape.iter().product();
        let data = if spec.fan_in == 0 {
            vec![0.0; n]
        } else {
            let a = (6.0 / spec.fan_in as f64).sqrt();
            // stored at f32 precision like every trained parameter
            (0..n).map(|_| rng.gen_range(-a..a) as f32 as f64).collect()
        };
        arrays.insert(spec.name, Tensor::new(spec.shape, data));
    }
    Ok(ModelParams { arrays })
}
