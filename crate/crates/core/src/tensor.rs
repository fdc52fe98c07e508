//! Dense row-major tensors and a reverse-mode autodiff tape.
//!
//! All arithmetic is `f64`. Parameters are kept f32-representable by the
//! optimizer so that checkpoints stay bit-exact, but gradients are always
//! computed at full precision.

use std::fmt;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 8 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match data length {}",
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_f32(shape: Vec<usize>, data: &[f32]) -> Self {
        Tensor::new(shape, data.iter().map(|&v| v as f64).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape.to_vec();
        self
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Geometry of a cubic-kernel convolution along one or three axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        ConvGeom { kernel, stride, pad }
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MatMul(Var, Var),
    Transpose(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Abs(Var),
    Square(Var),
    LnClamped(Var, f64),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    Reshape(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Row(Var, usize),
    StackRows(Vec<Var>),
    SoftmaxRows(Var),
    Conv3d(Var, Var, Var, ConvGeom),
    ConvT3d(Var, Var, Var, ConvGeom),
    Conv1d(Var, Var, Var, ConvGeom),
    ConvT1d(Var, Var, Var, ConvGeom),
    AvgPool3d(Var, usize),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records operations for a single forward pass so gradients can be
/// propagated back to the leaves.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node of a tape.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

/// Valid (strided index, kernel tap, dense index) triples for one axis,
/// where `dense = strided * stride + tap - pad`.
fn axis_taps(strided_len: usize, dense_len: usize, g: ConvGeom) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::with_capacity(strided_len * g.kernel);
    for a in 0..strided_len {
        for k in 0..g.kernel {
            let b = (a * g.stride + k) as isize - g.pad as isize;
            if b >= 0 && (b as usize) < dense_len {
                out.push((a, k, b as usize));
            }
        }
    }
    out
}

/// Output length of a transposed convolution with `out_pad` extra trailing
/// positions.
pub fn conv_transpose_len(in_len: usize, g: ConvGeom, out_pad: usize) -> Option<usize> {
    let full = (in_len as isize - 1) * g.stride as isize + g.kernel as isize + out_pad as isize
        - 2 * g.pad as isize;
    (full > 0).then_some(full as usize)
}

fn conv_len(in_len: usize, g: ConvGeom) -> Option<usize> {
    let span = in_len as isize + 2 * g.pad as isize - g.kernel as isize;
    (span >= 0).then(|| span as usize / g.stride + 1)
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let x = self.value(a);
        let value = Tensor::new(x.shape.clone(), x.data.iter().map(|&v| f(v)).collect());
        self.push(value, op)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape, y.shape, "elementwise op on mismatched shapes");
        let data = x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect();
        let value = Tensor::new(x.shape.clone(), data);
        self.push(value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |p, q| p * q, Op::Mul(a, b))
    }

    /// `a[n, m] + bias[m]` broadcast over rows.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Var {
        let (x, b) = (self.value(a), self.value(bias));
        assert_eq!(x.shape.len(), 2);
        let m = x.shape[1];
        assert_eq!(b.len(), m, "bias length");
        let mut data = x.data.clone();
        for row in data.chunks_mut(m) {
            for (v, bb) in row.iter_mut().zip(&b.data) {
                *v += bb;
            }
        }
        let value = Tensor::new(x.shape.clone(), data);
        self.push(value, Op::AddRowBias(a, bias))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |v| v * c, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |v| v + c, Op::AddConst(a))
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_const(neg, 1.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert!(x.shape.len() == 2 && y.shape.len() == 2);
        let (n, k, m) = (x.shape[0], x.shape[1], y.shape[1]);
        assert_eq!(k, y.shape[0], "matmul inner dims {:?} x {:?}", x.shape, y.shape);
        let value = Tensor::new(vec![n, m], matmul_raw(&x.data, &y.data, n, k, m));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let x = self.value(a);
        assert_eq!(x.shape.len(), 2);
        let (n, m) = (x.shape[0], x.shape[1]);
        let value = Tensor::new(vec![m, n], transpose_raw(&x.data, n, m));
        self.push(value, Op::Transpose(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.map(a, |v| if v > 0.0 { v } else { slope * v }, Op::LeakyRelu(a, slope))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.map(a, f64::abs, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, |v| v * v, Op::Square(a))
    }

    /// `ln(clamp(a, eps, 1 - eps))`; the gradient is zero where clamped.
    pub fn ln_clamped(&mut self, a: Var, eps: f64) -> Var {
        self.map(a, |v| v.clamp(eps, 1.0 - eps).ln(), Op::LnClamped(a, eps))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = x.data.iter().sum::<f64>() / x.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Mean over the first axis of a `[n, m]` tensor, giving `[1, m]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (n, m) = (x.shape[0], x.shape[1]);
        let mut out = vec![0.0; m];
        for row in x.data.chunks(m) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= n as f64);
        self.push(Tensor::new(vec![1, m], out), Op::MeanRows(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let value = self.value(a).clone().reshaped(shape);
        self.push(value, Op::Reshape(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        let (n, m) = (x.shape[0], x.shape[1]);
        assert!(start + len <= m);
        let mut data = Vec::with_capacity(n * len);
        for row in x.data.chunks(m) {
            data.extend_from_slice(&row[start..start + len]);
        }
        self.push(Tensor::new(vec![n, len], data), Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let n = self.shape(parts[0])[0];
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                assert_eq!(self.shape(p)[0], n, "concat_cols row mismatch");
                self.shape(p)[1]
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for r in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data[r * w..(r + 1) * w]);
            }
        }
        self.push(Tensor::new(vec![n, total], data), Op::ConcatCols(parts.to_vec()))
    }

    /// Row `i` of a `[n, m]` tensor as `[1, m]`.
    pub fn row(&mut self, a: Var, i: usize) -> Var {
        let x = self.value(a);
        let m = x.shape[1];
        let data = x.data[i * m..(i + 1) * m].to_vec();
        self.push(Tensor::new(vec![1, m], data), Op::Row(a, i))
    }

    /// Stacks `[1, m]` rows into `[n, m]`.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        let m = self.shape(rows[0])[1];
        let mut data = Vec::with_capacity(rows.len() * m);
        for &r in rows {
            assert_eq!(self.shape(r), &[1, m][..], "stack_rows expects [1, m] rows");
            data.extend_from_slice(&self.value(r).data);
        }
        self.push(Tensor::new(vec![rows.len(), m], data), Op::StackRows(rows.to_vec()))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let m = x.shape[1];
        let mut data = x.data.clone();
        for row in data.chunks_mut(m) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let value = Tensor::new(x.shape.clone(), data);
        self.push(value, Op::SoftmaxRows(a))
    }

    /// 3D convolution. `x: [N, Cin, D, H, W]`, `w: [Cout, Cin, k, k, k]`,
    /// `b: [Cout]`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Var, g: ConvGeom) -> Var {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        assert_eq!(xs.len(), 5);
        assert_eq!(ws[1], xs[1], "conv3d channel mismatch");
        let (n, cin, cout, k) = (xs[0], xs[1], ws[0], g.kernel);
        let ins = [xs[2], xs[3], xs[4]];
        let outs = ins.map(|l| conv_len(l, g).expect("conv3d output length"));
        let taps = [0, 1, 2].map(|i| axis_taps(outs[i], ins[i], g));
        let (ivol, ovol, kvol) = (ins.iter().product::<usize>(), outs.iter().product::<usize>(), k * k * k);
        let (xv, wv, bv) = (&self.value(x).data, &self.value(w).data, &self.value(b).data);
        let mut out = vec![0.0; n * cout * ovol];
        for bn in 0..n {
            for co in 0..cout {
                let ob = (bn * cout + co) * ovol;
                out[ob..ob + ovol].iter_mut().for_each(|v| *v = bv[co]);
            }
            for &(od, kd, id) in &taps[0] {
                for &(oh, kh, ih) in &taps[1] {
                    for &(ow, kw, iw) in &taps[2] {
                        let o = (od * outs[1] + oh) * outs[2] + ow;
                        let i = (id * ins[1] + ih) * ins[2] + iw;
                        let kk = (kd * k + kh) * k + kw;
                        for co in 0..cout {
                            let mut acc = 0.0;
                            for ci in 0..cin {
                                acc += wv[(co * cin + ci) * kvol + kk] * xv[(bn * cin + ci) * ivol + i];
                            }
                            out[(bn * cout + co) * ovol + o] += acc;
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![n, cout, outs[0], outs[1], outs[2]], out);
        self.push(value, Op::Conv3d(x, w, b, g))
    }

    /// Transposed 3D convolution. `x: [N, Cin, D, H, W]`,
    /// `w: [Cin, Cout, k, k, k]`, `b: [Cout]`.
    pub fn conv_transpose3d(&mut self, x: Var, w: Var, b: Var, g: ConvGeom, out_pad: [usize; 3]) -> Var {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        assert_eq!(xs.len(), 5);
        assert_eq!(ws[0], xs[1], "conv_transpose3d channel mismatch");
        let (n, cin, cout, k) = (xs[0], xs[1], ws[1], g.kernel);
        let ins = [xs[2], xs[3], xs[4]];
        let outs = [0, 1, 2].map(|i| conv_transpose_len(ins[i], g, out_pad[i]).expect("transposed output length"));
        let taps = [0, 1, 2].map(|i| axis_taps(ins[i], outs[i], g));
        let (ivol, ovol, kvol) = (ins.iter().product::<usize>(), outs.iter().product::<usize>(), k * k * k);
        let (xv, wv, bv) = (&self.value(x).data, &self.value(w).data, &self.value(b).data);
        let mut out = vec![0.0; n * cout * ovol];
        for bn in 0..n {
            for co in 0..cout {
                let ob = (bn * cout + co) * ovol;
                out[ob..ob + ovol].iter_mut().for_each(|v| *v = bv[co]);
            }
            for &(id, kd, od) in &taps[0] {
                for &(ih, kh, oh) in &taps[1] {
                    for &(iw, kw, ow) in &taps[2] {
                        let o = (od * outs[1] + oh) * outs[2] + ow;
                        let i = (id * ins[1] + ih) * ins[2] + iw;
                        let kk = (kd * k + kh) * k + kw;
                        for co in 0..cout {
                            let mut acc = 0.0;
                            for ci in 0..cin {
                                acc += wv[(ci * cout + co) * kvol + kk] * xv[(bn * cin + ci) * ivol + i];
                            }
                            out[(bn * cout + co) * ovol + o] += acc;
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![n, cout, outs[0], outs[1], outs[2]], out);
        self.push(value, Op::ConvT3d(x, w, b, g))
    }

    /// 1D convolution along rows. `x: [L, Cin]`, `w: [Cout, Cin, k]`,
    /// `b: [Cout]`; output `[Lout, Cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, g: ConvGeom) -> Var {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let (len, cin, cout, k) = (xs[0], xs[1], ws[0], g.kernel);
        assert_eq!(ws[1], cin, "conv1d channel mismatch");
        let olen = conv_len(len, g).expect("conv1d output length");
        let (xv, wv, bv) = (&self.value(x).data, &self.value(w).data, &self.value(b).data);
        let mut out = vec![0.0; olen * cout];
        for o in 0..olen {
            out[o * cout..(o + 1) * cout].copy_from_slice(bv);
        }
        for (o, kk, i) in axis_taps(olen, len, g) {
            for co in 0..cout {
                let mut acc = 0.0;
                for ci in 0..cin {
                    acc += wv[(co * cin + ci) * k + kk] * xv[i * cin + ci];
                }
                out[o * cout + co] += acc;
            }
        }
        self.push(Tensor::new(vec![olen, cout], out), Op::Conv1d(x, w, b, g))
    }

    /// Transposed 1D convolution. `x: [L, Cin]`, `w: [Cin, Cout, k]`.
    pub fn conv_transpose1d(&mut self, x: Var, w: Var, b: Var, g: ConvGeom, out_pad: usize) -> Var {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let (len, cin, cout, k) = (xs[0], xs[1], ws[1], g.kernel);
        assert_eq!(ws[0], cin, "conv_transpose1d channel mismatch");
        let olen = conv_transpose_len(len, g, out_pad).expect("transposed output length");
        let (xv, wv, bv) = (&self.value(x).data, &self.value(w).data, &self.value(b).data);
        let mut out = vec![0.0; olen * cout];
        for o in 0..olen {
            out[o * cout..(o + 1) * cout].copy_from_slice(bv);
        }
        for (i, kk, o) in axis_taps(len, olen, g) {
            for co in 0..cout {
                let mut acc = 0.0;
                for ci in 0..cin {
                    acc += wv[(ci * cout + co) * k + kk] * xv[i * cin + ci];
                }
                out[o * cout + co] += acc;
            }
        }
        self.push(Tensor::new(vec![olen, cout], out), Op::ConvT1d(x, w, b, g))
    }

    /// Non-overlapping average pooling over the three spatial axes of
    /// `[N, C, D, H, W]`; trailing voxels that do not fill a window are
    /// dropped.
    pub fn avg_pool3d(&mut self, x: Var, factor: usize) -> Var {
        let xs = self.shape(x).to_vec();
        let (nc, ins) = (xs[0] * xs[1], [xs[2], xs[3], xs[4]]);
        let outs = ins.map(|l| l / factor);
        assert!(outs.iter().all(|&l| l > 0), "pool factor {factor} larger than volume {ins:?}");
        let (ivol, ovol) = (ins.iter().product::<usize>(), outs.iter().product::<usize>());
        let norm = 1.0 / (factor * factor * factor) as f64;
        let xv = &self.value(x).data;
        let mut out = vec![0.0; nc * ovol];
        for c in 0..nc {
            for d in 0..outs[0] * factor {
                for h in 0..outs[1] * factor {
                    for w in 0..outs[2] * factor {
                        let o = ((d / factor) * outs[1] + h / factor) * outs[2] + w / factor;
                        out[c * ovol + o] += norm * xv[c * ivol + (d * ins[1] + h) * ins[2] + w];
                    }
                }
            }
        }
        let value = Tensor::new(vec![xs[0], xs[1], outs[0], outs[1], outs[2]], out);
        self.push(value, Op::AvgPool3d(x, factor))
    }

    /// Reverse-mode sweep from a scalar output.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).len(), 1, "backward() needs a scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(&self.value(loss).shape, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &gout, &mut grads);
            grads[idx] = Some(gout);
        }
        Grads { grads }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let acc = |grads: &mut [Option<Tensor>], v: Var, t: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot => *slot = Some(t),
        };
        let like = |v: Var, data: Vec<f64>| Tensor::new(self.value(v).shape.clone(), data);
        let elementwise = |v: Var, f: &dyn Fn(usize) -> f64| {
            like(v, (0..g.len()).map(|i| g.data[i] * f(i)).collect())
        };

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, like(*b, g.data.iter().map(|v| -v).collect()));
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                acc(grads, *a, elementwise(*a, &|i| y.data[i]));
                acc(grads, *b, elementwise(*b, &|i| x.data[i]));
            }
            Op::AddRowBias(a, bias) => {
                let m = self.value(*bias).len();
                let mut gb = vec![0.0; m];
                for row in g.data.chunks(m) {
                    for (o, v) in gb.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                acc(grads, *a, g.clone());
                acc(grads, *bias, like(*bias, gb));
            }
            Op::Scale(a, c) => acc(grads, *a, elementwise(*a, &|_| *c)),
            Op::AddConst(a) | Op::Reshape(a) => {
                acc(grads, *a, like(*a, g.data.clone()));
            }
            Op::MatMul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (n, k, m) = (x.shape[0], x.shape[1], y.shape[1]);
                let yt = transpose_raw(&y.data, k, m);
                let xt = transpose_raw(&x.data, n, k);
                acc(grads, *a, like(*a, matmul_raw(&g.data, &yt, n, m, k)));
                acc(grads, *b, like(*b, matmul_raw(&xt, &g.data, k, n, m)));
            }
            Op::Transpose(a) => {
                let s = &self.value(*a).shape;
                acc(grads, *a, like(*a, transpose_raw(&g.data, s[1], s[0])));
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a);
                acc(grads, *a, elementwise(*a, &|i| if x.data[i] > 0.0 { 1.0 } else { *slope }));
            }
            Op::Tanh(a) => {
                let y = &node.value;
                acc(grads, *a, elementwise(*a, &|i| 1.0 - y.data[i] * y.data[i]));
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                acc(grads, *a, elementwise(*a, &|i| y.data[i] * (1.0 - y.data[i])));
            }
            Op::Abs(a) => {
                let x = self.value(*a);
                acc(grads, *a, elementwise(*a, &|i| x.data[i].signum() * (x.data[i] != 0.0) as u8 as f64));
            }
            Op::Square(a) => {
                let x = self.value(*a);
                acc(grads, *a, elementwise(*a, &|i| 2.0 * x.data[i]));
            }
            Op::LnClamped(a, eps) => {
                let x = self.value(*a);
                acc(
                    grads,
                    *a,
                    elementwise(*a, &|i| {
                        let v = x.data[i];
                        if v < *eps || v > 1.0 - eps {
                            0.0
                        } else {
                            1.0 / v
                        }
                    }),
                );
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                acc(grads, *a, like(*a, vec![g.data[0]; n]));
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                acc(grads, *a, like(*a, vec![g.data[0] / n as f64; n]));
            }
            Op::MeanRows(a) => {
                let s = &self.value(*a).shape;
                let (n, m) = (s[0], s[1]);
                let mut data = Vec::with_capacity(n * m);
                for _ in 0..n {
                    data.extend(g.data.iter().map(|v| v / n as f64));
                }
                acc(grads, *a, like(*a, data));
            }
            Op::SliceCols(a, start) => {
                let s = &self.value(*a).shape;
                let (n, m) = (s[0], s[1]);
                let len = g.shape[1];
                let mut data = vec![0.0; n * m];
                for r in 0..n {
                    data[r * m + start..r * m + start + len].copy_from_slice(&g.data[r * len..(r + 1) * len]);
                }
                acc(grads, *a, like(*a, data));
            }
            Op::ConcatCols(parts) => {
                let n = g.shape[0];
                let total = g.shape[1];
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).shape[1];
                    let mut data = Vec::with_capacity(n * w);
                    for r in 0..n {
                        data.extend_from_slice(&g.data[r * total + off..r * total + off + w]);
                    }
                    acc(grads, p, like(p, data));
                    off += w;
                }
            }
            Op::Row(a, i) => {
                let s = &self.value(*a).shape;
                let m = s[1];
                let mut data = vec![0.0; s[0] * m];
                data[i * m..(i + 1) * m].copy_from_slice(&g.data);
                acc(grads, *a, like(*a, data));
            }
            Op::StackRows(rows) => {
                let m = g.shape[1];
                for (r, &v) in rows.iter().enumerate() {
                    acc(grads, v, like(v, g.data[r * m..(r + 1) * m].to_vec()));
                }
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let m = y.shape[1];
                let mut data = vec![0.0; y.len()];
                for r in 0..y.shape[0] {
                    let ys = &y.data[r * m..(r + 1) * m];
                    let gs = &g.data[r * m..(r + 1) * m];
                    let dot: f64 = ys.iter().zip(gs).map(|(p, q)| p * q).sum();
                    for j in 0..m {
                        data[r * m + j] = ys[j] * (gs[j] - dot);
                    }
                }
                acc(grads, *a, like(*a, data));
            }
            Op::Conv3d(x, w, b, geom) => {
                let (gx, gw, gb) = self.conv3d_backward(*x, *w, g, *geom, false);
                acc(grads, *x, gx);
                acc(grads, *w, gw);
                acc(grads, *b, gb);
            }
            Op::ConvT3d(x, w, b, geom) => {
                let (gx, gw, gb) = self.conv3d_backward(*x, *w, g, *geom, true);
                acc(grads, *x, gx);
                acc(grads, *w, gw);
                acc(grads, *b, gb);
            }
            Op::Conv1d(x, w, b, geom) => {
                let (gx, gw, gb) = self.conv1d_backward(*x, *w, g, *geom, false);
                acc(grads, *x, gx);
                acc(grads, *w, gw);
                acc(grads, *b, gb);
            }
            Op::ConvT1d(x, w, b, geom) => {
                let (gx, gw, gb) = self.conv1d_backward(*x, *w, g, *geom, true);
                acc(grads, *x, gx);
                acc(grads, *w, gw);
                acc(grads, *b, gb);
            }
            Op::AvgPool3d(x, factor) => {
                let xs = self.value(*x).shape.clone();
                let ins = [xs[2], xs[3], xs[4]];
                let outs = [g.shape[2], g.shape[3], g.shape[4]];
                let (ivol, ovol) = (ins.iter().product::<usize>(), outs.iter().product::<usize>());
                let f = *factor;
                let norm = 1.0 / (f * f * f) as f64;
                let mut data = vec![0.0; xs[0] * xs[1] * ivol];
                for c in 0..xs[0] * xs[1] {
                    for d in 0..outs[0] * f {
                        for h in 0..outs[1] * f {
                            for w in 0..outs[2] * f {
                                let o = ((d / f) * outs[1] + h / f) * outs[2] + w / f;
                                data[c * ivol + (d * ins[1] + h) * ins[2] + w] = norm * g.data[c * ovol + o];
                            }
                        }
                    }
                }
                acc(grads, *x, like(*x, data));
            }
        }
    }

    fn conv3d_backward(
        &self,
        x: Var,
        w: Var,
        g: &Tensor,
        geom: ConvGeom,
        transposed: bool,
    ) -> (Tensor, Tensor, Tensor) {
        let (xt, wt) = (self.value(x), self.value(w));
        let (n, cin) = (xt.shape[0], xt.shape[1]);
        let cout = g.shape[1];
        let k = geom.kernel;
        let ins = [xt.shape[2], xt.shape[3], xt.shape[4]];
        let outs = [g.shape[2], g.shape[3], g.shape[4]];
        // For a plain conv the output is the strided side; for a
        // transposed conv it is the input.
        let taps = [0, 1, 2].map(|i| {
            if transposed {
                axis_taps(ins[i], outs[i], geom)
            } else {
                axis_taps(outs[i], ins[i], geom)
            }
        });
        let (sdims, ddims) = if transposed { (ins, outs) } else { (outs, ins) };
        let (ivol, ovol, kvol) = (ins.iter().product::<usize>(), outs.iter().product::<usize>(), k * k * k);
        let mut gx = vec![0.0; xt.len()];
        let mut gw = vec![0.0; wt.len()];
        let mut gb = vec![0.0; cout];
        for bn in 0..n {
            for (co, gbv) in gb.iter_mut().enumerate() {
                let ob = (bn * cout + co) * ovol;
                *gbv += g.data[ob..ob + ovol].iter().sum::<f64>();
            }
            for &(ad, kd, bd) in &taps[0] {
                for &(ah, kh, bh) in &taps[1] {
                    for &(aw, kw, bw) in &taps[2] {
                        let strided = (ad * sdims[1] + ah) * sdims[2] + aw;
                        let dense = (bd * ddims[1] + bh) * ddims[2] + bw;
                        let (o, i) = if transposed { (dense, strided) } else { (strided, dense) };
                        let kk = (kd * k + kh) * k + kw;
                        for co in 0..cout {
                            let go = g.data[(bn * cout + co) * ovol + o];
                            if go == 0.0 {
                                continue;
                            }
                            for ci in 0..cin {
                                let widx = if transposed {
                                    (ci * cout + co) * kvol + kk
                                } else {
                                    (co * cin + ci) * kvol + kk
                                };
                                let xidx = (bn * cin + ci) * ivol + i;
                                gw[widx] += go * xt.data[xidx];
                                gx[xidx] += go * wt.data[widx];
                            }
                        }
                    }
                }
            }
        }
        (
            Tensor::new(xt.shape.clone(), gx),
            Tensor::new(wt.shape.clone(), gw),
            Tensor::new(vec![cout], gb),
        )
    }

    fn conv1d_backward(
        &self,
        x: Var,
        w: Var,
        g: &Tensor,
        geom: ConvGeom,
        transposed: bool,
    ) -> (Tensor, Tensor, Tensor) {
        let (xt, wt) = (self.value(x), self.value(w));
        let (len, cin) = (xt.shape[0], xt.shape[1]);
        let (olen, cout) = (g.shape[0], g.shape[1]);
        let k = geom.kernel;
        let taps = if transposed {
            axis_taps(len, olen, geom)
        } else {
            axis_taps(olen, len, geom)
        };
        let mut gx = vec![0.0; xt.len()];
        let mut gw = vec![0.0; wt.len()];
        let mut gb = vec![0.0; cout];
        for row in g.data.chunks(cout) {
            for (o, v) in gb.iter_mut().zip(row) {
                *o += v;
            }
        }
        for (a, kk, b) in taps {
            let (o, i) = if transposed { (b, a) } else { (a, b) };
            for co in 0..cout {
                let go = g.data[o * cout + co];
                for ci in 0..cin {
                    let widx = if transposed {
                        (ci * cout + co) * k + kk
                    } else {
                        (co * cin + ci) * k + kk
                    };
                    gw[widx] += go * xt.data[i * cin + ci];
                    gx[i * cin + ci] += go * wt.data[widx];
                }
            }
        }
        (
            Tensor::new(xt.shape.clone(), gx),
            Tensor::new(wt.shape.clone(), gw),
            Tensor::new(vec![cout], gb),
        )
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = a[i * m + j];
        }
    }
    out
}
