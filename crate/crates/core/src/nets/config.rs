use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{conv_transpose_len, ConvGeom};

/// How per-frame feature vectors `[T, F]` are combined over time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TemporalKind {
    Conv1d,
    Lstm,
    Bilstm,
    AttnPe,
    AttnNope,
}

impl TemporalKind {
    pub const ALL: [TemporalKind; 5] = [
        TemporalKind::Conv1d,
        TemporalKind::Lstm,
        TemporalKind::Bilstm,
        TemporalKind::AttnPe,
        TemporalKind::AttnNope,
    ];

    /// Lower-case name used for CLI arms and file names.
    pub fn slug(self) -> &'static str {
        match self {
            TemporalKind::Conv1d => "conv1d",
            TemporalKind::Lstm => "lstm",
            TemporalKind::Bilstm => "bilstm",
            TemporalKind::AttnPe => "attn_pe",
            TemporalKind::AttnNope => "attn_nope",
        }
    }
}

impl fmt::Display for TemporalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for TemporalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        TemporalKind::ALL
            .into_iter()
            .find(|k| k.slug() == norm)
            .ok_or_else(|| Error::Config(format!("unknown temporal kind {s:?}")))
    }
}

/// One 3D convolution layer: cubic kernel, isotropic stride, output channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayer {
    pub kernel: usize,
    pub stride: usize,
    pub channels: usize,
}

impl ConvLayer {
    pub const fn new(kernel: usize, stride: usize, channels: usize) -> Self {
        ConvLayer {
            kernel,
            stride,
            channels,
        }
    }

    /// Padding rule for all network convolutions: `floor((k - s) / 2)`.
    pub fn pad(&self) -> usize {
        (self.kernel - self.stride) / 2
    }

    pub fn geom(&self) -> ConvGeom {
        ConvGeom::new(self.kernel, self.stride, self.pad())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemporalConfig {
    pub conv1d_layers: usize,
    pub conv1d_kernel: usize,
    pub conv1d_stride: usize,
    /// Channels of the temporal convolutions; defaults to the frame feature
    /// width.
    pub conv1d_channels: Option<usize>,
    pub lstm_layers: usize,
    pub attn_heads: usize,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        TemporalConfig {
            conv1d_layers: 2,
            conv1d_kernel: 8,
            conv1d_stride: 4,
            conv1d_channels: None,
            lstm_layers: 2,
            attn_heads: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    /// `[T, D, H, W]`
    pub input_dims: [usize; 4],
    pub encoder_conv: Vec<ConvLayer>,
    pub disc_conv: Vec<ConvLayer>,
    pub z_dim: usize,
    pub temporal_kind: TemporalKind,
    /// Temporal stage of the discriminator; `None` reuses `temporal_kind`.
    pub disc_temporal_kind: Option<TemporalKind>,
    pub temporal: TemporalConfig,
    pub disc_mlp: Vec<usize>,
    pub code_mlp: Vec<usize>,
    pub n_classes: usize,
    pub leaky_slope: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig::desk()
    }
}

impl ArchConfig {
    /// 24 frames of 16^3 with channels (2, 4, 8, 8) and z_dim 2.
    pub fn desk() -> Self {
        ArchConfig {
            input_dims: [24, 16, 16, 16],
            encoder_conv: vec![
                ConvLayer::new(4, 2, 2),
                ConvLayer::new(4, 2, 4),
                ConvLayer::new(4, 2, 8),
                ConvLayer::new(1, 1, 8),
            ],
            disc_conv: vec![ConvLayer::new(4, 2, 2), ConvLayer::new(4, 2, 4), ConvLayer::new(4, 2, 8)],
            z_dim: 2,
            temporal_kind: TemporalKind::Conv1d,
            disc_temporal_kind: None,
            temporal: TemporalConfig::default(),
            disc_mlp: vec![32],
            code_mlp: vec![64, 32],
            n_classes: 2,
            leaky_slope: 0.2,
        }
    }

    /// Full-resolution layout: 146 frames of 91x109x91.
    pub fn paper() -> Self {
        ArchConfig {
            input_dims: [146, 91, 109, 91],
            encoder_conv: vec![
                ConvLayer::new(16, 2, 4),
                ConvLayer::new(8, 2, 8),
                ConvLayer::new(4, 2, 16),
                ConvLayer::new(2, 1, 24),
            ],
            disc_conv: vec![ConvLayer::new(8, 4, 4), ConvLayer::new(4, 2, 8), ConvLayer::new(4, 1, 16)],
            z_dim: 864,
            temporal_kind: TemporalKind::Conv1d,
            disc_temporal_kind: None,
            temporal: TemporalConfig::default(),
            disc_mlp: vec![256],
            code_mlp: vec![750, 750],
            n_classes: 2,
            leaky_slope: 0.2,
        }
    }

    /// Smallest layout used for finite-difference checks: 4 frames of 8^3,
    /// z_dim 8.
    pub fn tiny(kind: TemporalKind) -> Self {
        ArchConfig {
            input_dims: [4, 8, 8, 8],
            encoder_conv: vec![ConvLayer::new(4, 2, 2), ConvLayer::new(4, 2, 4), ConvLayer::new(2, 2, 4)],
            disc_conv: vec![ConvLayer::new(4, 2, 2), ConvLayer::new(4, 2, 4), ConvLayer::new(2, 2, 4)],
            z_dim: 8,
            temporal_kind: kind,
            disc_temporal_kind: None,
            temporal: TemporalConfig {
                conv1d_layers: 2,
                conv1d_kernel: 2,
                conv1d_stride: 2,
                conv1d_channels: None,
                lstm_layers: 2,
                attn_heads: 2,
            },
            disc_mlp: vec![6],
            code_mlp: vec![6],
            n_classes: 2,
            leaky_slope: 0.2,
        }
    }

    pub fn with_kind(mut self, kind: TemporalKind) -> Self {
        self.temporal_kind = kind;
        self
    }

    pub fn disc_kind(&self) -> TemporalKind {
        self.disc_temporal_kind.unwrap_or(self.temporal_kind)
    }

    pub fn frames(&self) -> usize {
        self.input_dims[0]
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.input_dims[1], self.input_dims[2], self.input_dims[3]]
    }

    /// Validates every field and traces all layer shapes.
    pub fn plan(&self) -> Result<ShapePlan> {
        if self.input_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("input_dims must be >= 1, got {:?}", self.input_dims)));
        }
        if self.z_dim == 0 {
            return Err(Error::Config("z_dim must be >= 1".into()));
        }
        if self.n_classes != 2 {
            return Err(Error::Config(format!("n_classes must be 2, got {}", self.n_classes)));
        }
        if self.encoder_conv.is_empty() || self.disc_conv.is_empty() {
            return Err(Error::Config("encoder_conv and disc_conv need at least one layer".into()));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(Error::Config("leaky_slope must be >= 0".into()));
        }
        let encoder = trace_conv_stack("encoder_conv", self.spatial(), &self.encoder_conv)?;
        let discriminator = trace_conv_stack("disc_conv", self.spatial(), &self.disc_conv)?;

        let enc_features = encoder.features();
        let disc_features = discriminator.features();
        let enc_temporal = self.trace_temporal("encoder", self.temporal_kind, enc_features)?;
        let disc_temporal = self.trace_temporal("discriminator", self.disc_kind(), disc_features)?;

        let mut gen_out_pads = Vec::with_capacity(self.encoder_conv.len());
        for (i, layer) in self.encoder_conv.iter().enumerate() {
            let (input, output) = (encoder.dims[i], encoder.dims[i + 1]);
            let mut pads = [0; 3];
            for axis in 0..3 {
                pads[axis] = transpose_out_pad(
                    &format!("generator layer {i} (inverse of encoder_conv[{i}]) axis {axis}"),
                    output[axis],
                    input[axis],
                    layer.geom(),
                )?;
            }
            gen_out_pads.push(pads);
        }
        let gen_temporal_out_pads = match &enc_temporal {
            TemporalPlan::Conv { lens, .. } => {
                let g = self.conv1d_geom();
                (0..lens.len() - 1)
                    .map(|i| {
                        transpose_out_pad(&format!("generator temporal conv {i}"), lens[i + 1], lens[i], g)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            _ => Vec::new(),
        };

        Ok(ShapePlan {
            encoder,
            discriminator,
            enc_temporal,
            disc_temporal,
            gen_out_pads,
            gen_temporal_out_pads,
        })
    }

    pub fn conv1d_geom(&self) -> ConvGeom {
        let k = self.temporal.conv1d_kernel;
        let s = self.temporal.conv1d_stride;
        ConvGeom::new(k, s, k.saturating_sub(s) / 2)
    }

    fn trace_temporal(&self, who: &str, kind: TemporalKind, features: usize) -> Result<TemporalPlan> {
        let t = self.frames();
        let tc = &self.temporal;
        Ok(match kind {
            TemporalKind::Conv1d => {
                if tc.conv1d_layers == 0 {
                    return Err(Error::Config("temporal.conv1d_layers must be >= 1".into()));
                }
                if tc.conv1d_stride == 0 || tc.conv1d_kernel < tc.conv1d_stride {
                    return Err(Error::Config(format!(
                        "temporal conv kernel {} must be >= stride {} >= 1",
                        tc.conv1d_kernel, tc.conv1d_stride
                    )));
                }
                let channels = tc.conv1d_channels.unwrap_or(features);
                let g = self.conv1d_geom();
                let mut lens = vec![t];
                for i in 0..tc.conv1d_layers {
                    let prev = *lens.last().unwrap();
                    let next = conv_output_shape(prev, g.kernel, g.stride, g.pad).map_err(|_| {
                        Error::Config(format!(
                            "{who} temporal conv layer {i}: {prev} frames are shorter than the receptive field \
                             (kernel {}, stride {}, pad {})",
                            g.kernel, g.stride, g.pad
                        ))
                    })?;
                    lens.push(next);
                }
                TemporalPlan::Conv {
                    output: lens.last().unwrap() * channels,
                    lens,
                    channels,
                }
            }
            TemporalKind::Lstm | TemporalKind::Bilstm => {
                if tc.lstm_layers == 0 {
                    return Err(Error::Config("temporal.lstm_layers must be >= 1".into()));
                }
                if kind == TemporalKind::Bilstm && features % 2 != 0 {
                    return Err(Error::Config(format!(
                        "{who}: BILSTM needs an even feature width, got {features}"
                    )));
                }
                TemporalPlan::Recurrent { output: features }
            }
            TemporalKind::AttnPe | TemporalKind::AttnNope => {
                if tc.attn_heads == 0 || features % tc.attn_heads != 0 {
                    return Err(Error::Config(format!(
                        "{who}: feature width {features} is not divisible by {} attention heads",
                        tc.attn_heads
                    )));
                }
                TemporalPlan::Attention { output: features }
            }
        })
    }
}

/// Spatial shapes through a stack of 3D convolutions; `dims[0]` is the input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvTrace {
    pub dims: Vec<[usize; 3]>,
    pub channels: Vec<usize>,
}

impl ConvTrace {
    /// Flattened per-frame feature width after the last layer.
    pub fn features(&self) -> usize {
        let last = self.dims.last().unwrap();
        last.iter().product::<usize>() * self.channels.last().unwrap()
    }

    pub fn last_dims(&self) -> [usize; 3] {
        *self.dims.last().unwrap()
    }

    pub fn last_channels(&self) -> usize {
        *self.channels.last().unwrap()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TemporalPlan {
    /// `lens[0]` is T; `lens[i + 1]` the length after temporal conv `i`.
    Conv { lens: Vec<usize>, channels: usize, output: usize },
    Recurrent { output: usize },
    Attention { output: usize },
}

impl TemporalPlan {
    pub fn output(&self) -> usize {
        match self {
            TemporalPlan::Conv { output, .. }
            | TemporalPlan::Recurrent { output }
            | TemporalPlan::Attention { output } => *output,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapePlan {
    pub encoder: ConvTrace,
    pub discriminator: ConvTrace,
    pub enc_temporal: TemporalPlan,
    pub disc_temporal: TemporalPlan,
    /// Per-axis output padding of each generator transposed conv, indexed
    /// like the encoder layer it inverts.
    pub gen_out_pads: Vec<[usize; 3]>,
    pub gen_temporal_out_pads: Vec<usize>,
}

/// `floor((in_len + 2 pad - kernel) / stride) + 1`, rejecting non-positive
/// lengths.
pub fn conv_output_shape(in_len: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if in_len == 0 || kernel == 0 || stride == 0 {
        return Err(Error::Config(format!(
            "invalid convolution (in {in_len}, kernel {kernel}, stride {stride})"
        )));
    }
    let span = in_len as i64 + 2 * pad as i64 - kernel as i64;
    let out = span.div_euclid(stride as i64) + 1;
    if span < 0 || out <= 0 {
        return Err(Error::Config(format!(
            "convolution output length {out} <= 0 (in {in_len}, kernel {kernel}, stride {stride}, pad {pad})"
        )));
    }
    Ok(out as usize)
}

fn trace_conv_stack(field: &str, input: [usize; 3], layers: &[ConvLayer]) -> Result<ConvTrace> {
    let mut dims = vec![input];
    let mut channels = vec![1];
    for (i, layer) in layers.iter().enumerate() {
        if layer.stride == 0 || layer.kernel < layer.stride || layer.channels == 0 {
            return Err(Error::Config(format!(
                "{field}[{i}]: need kernel >= stride >= 1 and channels >= 1, got {layer:?}"
            )));
        }
        let prev = *dims.last().unwrap();
        let mut next = [0; 3];
        for axis in 0..3 {
            next[axis] = conv_output_shape(prev[axis], layer.kernel, layer.stride, layer.pad())
                .map_err(|e| Error::Config(format!("{field}[{i}] axis {axis}: {e}")))?;
        }
        dims.push(next);
        channels.push(layer.channels);
    }
    Ok(ConvTrace { dims, channels })
}

/// Output padding that makes a transposed conv map `from` back to `to`.
fn transpose_out_pad(what: &str, from: usize, to: usize, g: ConvGeom) -> Result<usize> {
    let base = conv_transpose_len(from, g, 0).unwrap_or(0);
    if to < base || to - base >= g.stride.max(1) {
        return Err(Error::Config(format!(
            "{what}: transposed conv cannot map length {from} back to {to} (kernel {}, stride {}, pad {})",
            g.kernel, g.stride, g.pad
        )));
    }
    Ok(to - base)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_shape_formula() {
        assert_eq!(conv_output_shape(91, 16, 2, 7).unwrap(), 45);
        for n in 1..20 {
            assert_eq!(conv_output_shape(n, 1, 1, 0).unwrap(), n);
        }
        assert_eq!(conv_output_shape(32, 8, 4, 0).unwrap(), 7);
        assert_eq!(conv_output_shape(7, 8, 4, 4).unwrap(), 2);
        assert!(conv_output_shape(7, 8, 4, 0).is_err());
    }

    #[test]
    fn paper_encoder_shape_trace() {
        // floor((n + 2p - k) / s) + 1 applied per layer with p = floor((k - s) / 2)
        let plan = ArchConfig::paper().plan().unwrap();
        assert_eq!(
            plan.encoder.dims,
            vec![[91, 109, 91], [45, 54, 45], [22, 27, 22], [11, 13, 11], [10, 12, 10]]
        );
        assert_eq!(plan.encoder.features(), 24 * 10 * 12 * 10);
        assert_eq!(plan.gen_out_pads, vec![[1, 1, 1], [1, 0, 1], [0, 1, 0], [0, 0, 0]]);
        // discriminator: k8 s4 p2, k4 s2 p1, k4 s1 p1
        assert_eq!(plan.discriminator.dims, vec![[91, 109, 91], [22, 27, 22], [11, 13, 11], [10, 12, 10]]);
        // 146 frames: k8 s4 p2 twice
        match plan.enc_temporal {
            TemporalPlan::Conv { ref lens, .. } => assert_eq!(lens, &vec![146, 36, 9]),
            ref other => panic!("{other:?}"),
        }
    }

    #[test]
    fn desk_profile_is_valid() {
        let plan = ArchConfig::desk().plan().unwrap();
        assert_eq!(plan.encoder.dims.last(), Some(&[2, 2, 2]));
        assert_eq!(plan.encoder.features(), 64);
        match plan.enc_temporal {
            TemporalPlan::Conv { ref lens, .. } => assert_eq!(lens, &vec![24, 6, 1]),
            ref other => panic!("{other:?}"),
        }
        for kind in TemporalKind::ALL {
            ArchConfig::desk().with_kind(kind).plan().unwrap();
            ArchConfig::tiny(kind).plan().unwrap();
        }
    }

    #[test]
    fn short_sequence_rejected_for_conv1d() {
        let mut cfg = ArchConfig::desk();
        cfg.input_dims[0] = 6;
        let err = cfg.plan().unwrap_err().to_string();
        assert!(err.contains("receptive field"), "{err}");
        // recurrent and attention stages accept any length
        cfg.temporal_kind = TemporalKind::Lstm;
        cfg.plan().unwrap();
    }

    #[test]
    fn invalid_layers_name_the_field() {
        let mut cfg = ArchConfig::desk();
        cfg.encoder_conv[1] = ConvLayer::new(2, 4, 4);
        let err = cfg.plan().unwrap_err().to_string();
        assert!(err.contains("encoder_conv[1]"), "{err}");
        let mut cfg = ArchConfig::desk();
        cfg.disc_conv.push(ConvLayer::new(4, 4, 4));
        let err = cfg.plan().unwrap_err().to_string();
        assert!(err.contains("disc_conv[3]"), "{err}");
    }

    #[test]
    fn bilstm_needs_even_width() {
        let mut cfg = ArchConfig::tiny(TemporalKind::Bilstm);
        cfg.encoder_conv[2].channels = 3;
        assert!(cfg.plan().is_err());
    }

    #[test]
    fn kind_names() {
        assert_eq!("ATTN_PE".parse::<TemporalKind>().unwrap(), TemporalKind::AttnPe);
        assert_eq!("attn-nope".parse::<TemporalKind>().unwrap(), TemporalKind::AttnNope);
        assert_eq!(serde_json::to_string(&TemporalKind::Bilstm).unwrap(), "\"BILSTM\"");
        assert!("gru".parse::<TemporalKind>().is_err());
    }
}
