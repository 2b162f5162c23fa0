use super::kernels::{col2im, gemm, im2col, ConvGeom};
use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(String),
    MatMul(Var, Var),
    Conv2d { x: Var, k: Var, geom: ConvGeom },
    ConvTranspose2d { x: Var, k: Var, geom: ConvGeom },
    AddBias(Var, Var),
    Relu(Var),
    Prelu(Var, Var),
    Sigmoid(Var),
    Reshape(Var),
    Mean(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    SoftmaxCe { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
    Mse(Var, Var),
    Huber { pred: Var, target: Var, delta: f64 },
    NormalizePower { x: Var, symbols: usize, norms: Vec<f64> },
    ChannelMean(Var),
    ScaleChannels(Var, Var),
    ConcatCols(Var, Var),
    Gather { x: Var, idx: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of primitive applications for one forward pass.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    check_finite: bool,
}

/// Gradients of a scalar root with respect to every node that needs one.
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, t: Tensor) {
    match &mut grads[v.0] {
        Some(g) => g.add_assign(&t),
        slot @ None => *slot = Some(t),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn stride_ok(prim: &'static str, stride: usize) -> Result<()> {
    if matches!(stride, 1 | 2 | 4) {
        Ok(())
    } else {
        Err(Error::shape(prim, format!("stride {stride} not in {{1,2,4}}")))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Tape that rejects any non-finite value produced by a primitive.
    pub fn with_finite_checks() -> Self {
        Self { nodes: Vec::new(), check_finite: true }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Differentiable input (gradients are tracked).
    pub fn var(&mut self, t: Tensor) -> Var {
        self.push_raw(t, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_raw(t, Op::Leaf, false)
    }

    /// Record the current value of a named parameter.
    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<Var> {
        let value = params
            .value(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter `{name}`")))?
            .clone();
        Ok(self.push_raw(value, Op::Param(name.to_string()), true))
    }

    /// Names of parameter nodes with the node handles they were recorded as.
    pub fn param_nodes(&self) -> impl Iterator<Item = (&str, Var)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match &n.op {
            Op::Param(name) => Some((name.as_str(), Var(i))),
            _ => None,
        })
    }

    fn push_raw(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, prim: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite(prim));
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push_raw(value, op, needs_grad))
    }

    fn same_shape(&self, prim: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(prim, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn rank_at_least(&self, prim: &'static str, v: Var, rank: usize) -> Result<()> {
        if self.shape(v).len() < rank {
            return Err(Error::shape(
                prim,
                format!("expected rank >= {rank}, got {:?}", self.shape(v)),
            ));
        }
        Ok(())
    }

    /// `[m,k] × [k,n] → [m,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} × {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, 0.0, &mut out);
        self.push("matmul", Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), &[a, b])
    }

    /// Zero-padded 2-D convolution. `x: [N,C,H,W]`, `kernel: [O,C,kh,kw]`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        stride_ok("conv2d", stride)?;
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(kernel).to_vec());
        if sx.len() != 4 || sk.len() != 4 || sx[1] != sk[1] {
            return Err(Error::shape("conv2d", format!("input {sx:?}, kernel {sk:?}")));
        }
        let (n, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let (o, kh, kw) = (sk[0], sk[2], sk[3]);
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape("conv2d", format!("kernel {kh}x{kw} larger than padded input {h}x{w}")));
        }
        let geom = ConvGeom {
            channels: c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            out_h: (h + 2 * pad - kh) / stride + 1,
            out_w: (w + 2 * pad - kw) / stride + 1,
        };
        let (rows, ncol) = (geom.col_rows(), geom.col_cols());
        let mut cols = vec![0.0; rows * ncol];
        let mut out = vec![0.0; n * o * ncol];
        let xd = self.value(x).data();
        let kd = self.value(kernel).data();
        for (img, dst) in xd.chunks(c * h * w).zip(out.chunks_mut(o * ncol)) {
            im2col(img, &geom, &mut cols);
            gemm(o, rows, ncol, kd, false, &cols, false, 0.0, dst);
        }
        let t = Tensor::from_parts(vec![n, o, geom.out_h, geom.out_w], out);
        self.push("conv2d", t, Op::Conv2d { x, k: kernel, geom }, &[x, kernel])
    }

    /// Transposed convolution. `x: [N,Cin,H,W]`, `kernel: [Cin,Cout,kh,kw]`;
    /// output side is `(H−1)·stride − 2·pad + kh + out_pad`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        kernel: Var,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Result<Var> {
        stride_ok("conv_transpose2d", stride)?;
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(kernel).to_vec());
        if sx.len() != 4 || sk.len() != 4 || sx[1] != sk[0] || out_pad >= stride {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("input {sx:?}, kernel {sk:?}, out_pad {out_pad}"),
            ));
        }
        let (n, cin, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let (cout, kh, kw) = (sk[1], sk[2], sk[3]);
        let full_h = (h - 1) * stride + kh + out_pad;
        let full_w = (w - 1) * stride + kw + out_pad;
        if full_h <= 2 * pad || full_w <= 2 * pad {
            return Err(Error::shape("conv_transpose2d", format!("padding {pad} consumes output")));
        }
        // Geometry of the adjoint convolution: its "input" is our output.
        let geom = ConvGeom {
            channels: cout,
            h: full_h - 2 * pad,
            w: full_w - 2 * pad,
            kh,
            kw,
            stride,
            pad,
            out_h: h,
            out_w: w,
        };
        let (rows, ncol) = (geom.col_rows(), geom.col_cols());
        let img_len = cout * geom.h * geom.w;
        let mut cols = vec![0.0; rows * ncol];
        let mut out = vec![0.0; n * img_len];
        let xd = self.value(x).data();
        let kd = self.value(kernel).data();
        for (src, img) in xd.chunks(cin * h * w).zip(out.chunks_mut(img_len)) {
            gemm(rows, cin, ncol, kd, true, src, false, 0.0, &mut cols);
            col2im(&cols, &geom, img);
        }
        let t = Tensor::from_parts(vec![n, cout, geom.h, geom.w], out);
        self.push("conv_transpose2d", t, Op::ConvTranspose2d { x, k: kernel, geom }, &[x, kernel])
    }

    /// Adds `bias[c]` along axis 1.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.rank_at_least("add_bias", x, 2)?;
        let c = self.shape(x)[1];
        if self.shape(bias) != [c] {
            return Err(Error::shape("add_bias", format!("bias {:?} for input {:?}", self.shape(bias), self.shape(x))));
        }
        let xv = self.value(x);
        let inner = xv.row_len() / c;
        let b = self.value(bias).data();
        let mut out = xv.data().to_vec();
        for (i, v) in out.iter_mut().enumerate() {
            *v += b[(i / inner) % c];
        }
        let t = Tensor::from_parts(xv.shape().to_vec(), out);
        self.push("add_bias", t, Op::AddBias(x, bias), &[x, bias])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let out = xv.data().iter().map(|&v| v.max(0.0)).collect();
        let t = Tensor::from_parts(xv.shape().to_vec(), out);
        self.push("relu", t, Op::Relu(x), &[x])
    }

    /// Parametric ReLU with one learnable slope per axis-1 channel.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        self.rank_at_least("prelu", x, 2)?;
        let c = self.shape(x)[1];
        if self.shape(slope) != [c] {
            return Err(Error::shape("prelu", format!("slope {:?} for input {:?}", self.shape(slope), self.shape(x))));
        }
        let xv = self.value(x);
        let inner = xv.row_len() / c;
        let a = self.value(slope).data();
        let out = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| if v > 0.0 { v } else { a[(i / inner) % c] * v })
            .collect();
        let t = Tensor::from_parts(xv.shape().to_vec(), out);
        self.push("prelu", t, Op::Prelu(x, slope), &[x, slope])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let out = xv.data().iter().map(|&v| sigmoid(v)).collect();
        let t = Tensor::from_parts(xv.shape().to_vec(), out);
        self.push("sigmoid", t, Op::Sigmoid(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape.to_vec())?;
        self.push("reshape", t, Op::Reshape(x), &[x])
    }

    /// `[N, ...] → [N, prod(...)]`
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let shape = [v.batch(), v.row_len()];
        self.reshape(x, &shape)
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let m = v.sum() / v.len() as f64;
        self.push("mean", Tensor::scalar(m), Op::Mean(x), &[x])
    }

    fn zip_with(&mut self, prim: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(prim, a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let out = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::from_parts(av.shape().to_vec(), out);
        self.push(prim, t, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        let xv = self.value(x);
        let out = xv.data().iter().map(|&v| v * k).collect();
        let t = Tensor::from_parts(xv.shape().to_vec(), out);
        self.push("scale", t, Op::Scale(x, k), &[x])
    }

    /// Mean softmax cross-entropy of `[N,C]` logits against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("logits {s:?} with {} labels", labels.len()),
            ));
        }
        let c = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::shape("softmax_cross_entropy", format!("label {bad} >= {c} classes")));
        }
        let lv = self.value(logits);
        let mut probs = Vec::with_capacity(lv.len());
        let mut loss = 0.0;
        for (row, &label) in lv.data().chunks(c).zip(labels) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + z.ln();
            loss += lse - row[label];
            probs.extend(row.iter().map(|&v| (v - max).exp() / z));
        }
        let n = labels.len() as f64;
        let op = Op::SoftmaxCe { logits, labels: labels.to_vec(), probs };
        self.push("softmax_cross_entropy", Tensor::scalar(loss / n), op, &[logits])
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let m = av.data().iter().zip(bv.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / av.len() as f64;
        self.push("mse", Tensor::scalar(m), Op::Mse(a, b), &[a, b])
    }

    /// Mean Huber loss with threshold `delta`.
    pub fn huber(&mut self, pred: Var, target: Var, delta: f64) -> Result<Var> {
        self.same_shape("huber", pred, target)?;
        if delta <= 0.0 {
            return Err(Error::invalid(format!("huber delta {delta} must be positive")));
        }
        let (pv, tv) = (self.value(pred), self.value(target));
        let total: f64 = pv
            .data()
            .iter()
            .zip(tv.data())
            .map(|(p, t)| {
                let d = p - t;
                if d.abs() <= delta {
                    0.5 * d * d
                } else {
                    delta * (d.abs() - 0.5 * delta)
                }
            })
            .sum();
        let m = total / pv.len() as f64;
        self.push("huber", Tensor::scalar(m), Op::Huber { pred, target, delta }, &[pred, target])
    }

    /// Scales each row of `[N, 2s]` so that its `s` complex symbols have unit
    /// average power.
    pub fn normalize_power(&mut self, x: Var, symbols: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || s[1] != 2 * symbols || symbols == 0 {
            return Err(Error::shape("normalize_power", format!("{s:?} for {symbols} symbols")));
        }
        let xv = self.value(x);
        let gain = (symbols as f64).sqrt();
        let mut norms = Vec::with_capacity(xv.batch());
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.data().chunks(2 * symbols) {
            let r = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if r == 0.0 {
                return Err(Error::ZeroPower);
            }
            norms.push(r);
            out.extend(row.iter().map(|v| v * gain / r));
        }
        let t = Tensor::from_parts(xv.shape().to_vec(), out);
        self.push("normalize_power", t, Op::NormalizePower { x, symbols, norms }, &[x])
    }

    /// Mean over every axis after the first two: `[N,C,...] → [N,C]`.
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        self.rank_at_least("channel_mean", x, 2)?;
        let xv = self.value(x);
        let (n, c) = (xv.shape()[0], xv.shape()[1]);
        let inner = xv.row_len() / c;
        let out = xv.data().chunks(inner).map(|ch| ch.iter().sum::<f64>() / inner as f64).collect();
        self.push("channel_mean", Tensor::from_parts(vec![n, c], out), Op::ChannelMean(x), &[x])
    }

    /// `x[n,c,...] · gate[n,c]`
    pub fn scale_channels(&mut self, x: Var, gate: Var) -> Result<Var> {
        self.rank_at_least("scale_channels", x, 2)?;
        let (sx, sg) = (self.shape(x), self.shape(gate));
        if sg != &sx[..2] {
            return Err(Error::shape("scale_channels", format!("gate {sg:?} for input {sx:?}")));
        }
        let xv = self.value(x);
        let inner = xv.row_len() / sx[1];
        let g = self.value(gate).data();
        let out = xv.data().iter().enumerate().map(|(i, &v)| v * g[i / inner]).collect();
        let t = Tensor::from_parts(xv.shape().to_vec(), out);
        self.push("scale_channels", t, Op::ScaleChannels(x, gate), &[x, gate])
    }

    /// `[N,F1] ++ [N,F2] → [N,F1+F2]`
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(Error::shape("concat_cols", format!("{sa:?} ++ {sb:?}")));
        }
        let (n, fa, fb) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(n * (fa + fb));
        for i in 0..n {
            out.extend_from_slice(av.row(i));
            out.extend_from_slice(bv.row(i));
        }
        self.push("concat_cols", Tensor::from_parts(vec![n, fa + fb], out), Op::ConcatCols(a, b), &[a, b])
    }

    /// Picks `x[n, idx[n]]` from `[N,A]`.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || s[0] != idx.len() || idx.iter().any(|&i| i >= s[1]) {
            return Err(Error::shape("gather", format!("{s:?} with indices {idx:?}")));
        }
        let xv = self.value(x);
        let out = idx.iter().enumerate().map(|(n, &i)| xv.row(n)[i]).collect();
        let op = Op::Gather { x, idx: idx.to_vec() };
        self.push("gather", Tensor::from_parts(vec![idx.len()], out), op, &[x])
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Grads> {
        let rv = &self.nodes[root.0].value;
        if !rv.is_scalar() {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(rv.shape(), 1.0));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Grads { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let gd = g.data();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.wants(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, gd, false, bv.data(), true, 0.0, &mut da);
                    accumulate(grads, *a, Tensor::from_parts(vec![m, k], da));
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, av.data(), true, gd, false, 0.0, &mut db);
                    accumulate(grads, *b, Tensor::from_parts(vec![k, n], db));
                }
            }
            Op::Conv2d { x, k, geom } => {
                let (xv, kv) = (self.value(*x), self.value(*k));
                let o = kv.shape()[0];
                let (rows, ncol) = (geom.col_rows(), geom.col_cols());
                let img_len = geom.channels * geom.h * geom.w;
                let mut cols = vec![0.0; rows * ncol];
                let mut dk = vec![0.0; kv.len()];
                let mut dx = self.wants(*x).then(|| vec![0.0; xv.len()]);
                for (n, gn) in gd.chunks(o * ncol).enumerate() {
                    if self.wants(*k) {
                        im2col(&xv.data()[n * img_len..(n + 1) * img_len], geom, &mut cols);
                        gemm(o, ncol, rows, gn, false, &cols, true, 1.0, &mut dk);
                    }
                    if let Some(dx) = dx.as_mut() {
                        gemm(rows, o, ncol, kv.data(), true, gn, false, 0.0, &mut cols);
                        col2im(&cols, geom, &mut dx[n * img_len..(n + 1) * img_len]);
                    }
                }
                if self.wants(*k) {
                    accumulate(grads, *k, Tensor::from_parts(kv.shape().to_vec(), dk));
                }
                if let Some(dx) = dx {
                    accumulate(grads, *x, Tensor::from_parts(xv.shape().to_vec(), dx));
                }
            }
            Op::ConvTranspose2d { x, k, geom } => {
                let (xv, kv) = (self.value(*x), self.value(*k));
                let cin = kv.shape()[0];
                let (rows, ncol) = (geom.col_rows(), geom.col_cols());
                let img_len = geom.channels * geom.h * geom.w;
                let mut cols = vec![0.0; rows * ncol];
                let mut dk = vec![0.0; kv.len()];
                let mut dx = vec![0.0; xv.len()];
                for (n, gn) in gd.chunks(img_len).enumerate() {
                    im2col(gn, geom, &mut cols);
                    let xs = &xv.data()[n * cin * ncol..(n + 1) * cin * ncol];
                    if self.wants(*k) {
                        gemm(cin, ncol, rows, xs, false, &cols, true, 1.0, &mut dk);
                    }
                    if self.wants(*x) {
                        gemm(cin, rows, ncol, kv.data(), false, &cols, false, 0.0, &mut dx[n * cin * ncol..(n + 1) * cin * ncol]);
                    }
                }
                if self.wants(*k) {
                    accumulate(grads, *k, Tensor::from_parts(kv.shape().to_vec(), dk));
                }
                if self.wants(*x) {
                    accumulate(grads, *x, Tensor::from_parts(xv.shape().to_vec(), dx));
                }
            }
            Op::AddBias(x, b) => {
                if self.wants(*b) {
                    let c = y.shape()[1];
                    let inner = y.row_len() / c;
                    let mut db = vec![0.0; c];
                    for (i, &v) in gd.iter().enumerate() {
                        db[(i / inner) % c] += v;
                    }
                    accumulate(grads, *b, Tensor::from_vec(db));
                }
                if self.wants(*x) {
                    accumulate(grads, *x, g.clone());
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let dx = xv.data().iter().zip(gd).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect();
                accumulate(grads, *x, Tensor::from_parts(xv.shape().to_vec(), dx));
            }
            Op::Prelu(x, slope) => {
                let xv = self.value(*x);
                let a = self.value(*slope).data();
                let c = a.len();
                let inner = xv.row_len() / c;
                if self.wants(*slope) {
                    let mut da = vec![0.0; c];
                    for (i, (&v, &g)) in xv.data().iter().zip(gd).enumerate() {
                        if v <= 0.0 {
                            da[(i / inner) % c] += g * v;
                        }
                    }
                    accumulate(grads, *slope, Tensor::from_vec(da));
                }
                if self.wants(*x) {
                    let dx = xv
                        .data()
                        .iter()
                        .zip(gd)
                        .enumerate()
                        .map(|(i, (&v, &g))| if v > 0.0 { g } else { a[(i / inner) % c] * g })
                        .collect();
                    accumulate(grads, *x, Tensor::from_parts(xv.shape().to_vec(), dx));
                }
            }
            Op::Sigmoid(x) => {
                let dx = y.data().iter().zip(gd).map(|(&s, &g)| g * s * (1.0 - s)).collect();
                accumulate(grads, *x, Tensor::from_parts(y.shape().to_vec(), dx));
            }
            Op::Reshape(x) => {
                let shape = self.shape(*x).to_vec();
                accumulate(grads, *x, Tensor::from_parts(shape, gd.to_vec()));
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                accumulate(grads, *x, Tensor::full(xv.shape(), gd[0] / xv.len() as f64));
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.wants(*v) {
                        accumulate(grads, *v, g.clone());
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    let neg = gd.iter().map(|v| -v).collect();
                    accumulate(grads, *b, Tensor::from_parts(g.shape().to_vec(), neg));
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(a, b), (b, a)] {
                    if self.wants(*v) {
                        let o = self.value(*other).data();
                        let d = gd.iter().zip(o).map(|(g, o)| g * o).collect();
                        accumulate(grads, *v, Tensor::from_parts(g.shape().to_vec(), d));
                    }
                }
            }
            Op::Scale(x, k) => {
                let d = gd.iter().map(|v| v * k).collect();
                accumulate(grads, *x, Tensor::from_parts(g.shape().to_vec(), d));
            }
            Op::SoftmaxCe { logits, labels, probs } => {
                let c = self.shape(*logits)[1];
                let scale = gd[0] / labels.len() as f64;
                let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (n, &l) in labels.iter().enumerate() {
                    d[n * c + l] -= scale;
                }
                accumulate(grads, *logits, Tensor::from_parts(self.shape(*logits).to_vec(), d));
            }
            Op::Mse(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let k = 2.0 * gd[0] / av.len() as f64;
                let da: Vec<f64> = av.data().iter().zip(bv.data()).map(|(x, y)| k * (x - y)).collect();
                if self.wants(*b) {
                    let db = da.iter().map(|v| -v).collect();
                    accumulate(grads, *b, Tensor::from_parts(av.shape().to_vec(), db));
                }
                if self.wants(*a) {
                    accumulate(grads, *a, Tensor::from_parts(av.shape().to_vec(), da));
                }
            }
            Op::Huber { pred, target, delta } => {
                let (pv, tv) = (self.value(*pred), self.value(*target));
                let k = gd[0] / pv.len() as f64;
                let dp: Vec<f64> = pv
                    .data()
                    .iter()
                    .zip(tv.data())
                    .map(|(p, t)| k * (p - t).clamp(-delta, *delta))
                    .collect();
                if self.wants(*target) {
                    let dt = dp.iter().map(|v| -v).collect();
                    accumulate(grads, *target, Tensor::from_parts(pv.shape().to_vec(), dt));
                }
                if self.wants(*pred) {
                    accumulate(grads, *pred, Tensor::from_parts(pv.shape().to_vec(), dp));
                }
            }
            Op::NormalizePower { x, symbols, norms } => {
                let gain = (*symbols as f64).sqrt();
                let s = *symbols as f64;
                let width = 2 * symbols;
                let mut dx = Vec::with_capacity(y.len());
                for ((yr, gr), r) in y.data().chunks(width).zip(gd.chunks(width)).zip(norms) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    let k = gain / r;
                    dx.extend(yr.iter().zip(gr).map(|(yv, gv)| k * (gv - yv * dot / s)));
                }
                accumulate(grads, *x, Tensor::from_parts(y.shape().to_vec(), dx));
            }
            Op::ChannelMean(x) => {
                let xv = self.value(*x);
                let inner = xv.row_len() / xv.shape()[1];
                let dx = (0..xv.len()).map(|i| gd[i / inner] / inner as f64).collect();
                accumulate(grads, *x, Tensor::from_parts(xv.shape().to_vec(), dx));
            }
            Op::ScaleChannels(x, gate) => {
                let xv = self.value(*x);
                let gv = self.value(*gate);
                let inner = xv.row_len() / xv.shape()[1];
                if self.wants(*gate) {
                    let mut dg = vec![0.0; gv.len()];
                    for (i, (&v, &g)) in xv.data().iter().zip(gd).enumerate() {
                        dg[i / inner] += v * g;
                    }
                    accumulate(grads, *gate, Tensor::from_parts(gv.shape().to_vec(), dg));
                }
                if self.wants(*x) {
                    let dx = gd.iter().enumerate().map(|(i, &g)| g * gv.data()[i / inner]).collect();
                    accumulate(grads, *x, Tensor::from_parts(xv.shape().to_vec(), dx));
                }
            }
            Op::ConcatCols(a, b) => {
                let fa = self.shape(*a)[1];
                let fb = self.shape(*b)[1];
                let n = y.shape()[0];
                let mut da = Vec::with_capacity(n * fa);
                let mut db = Vec::with_capacity(n * fb);
                for row in gd.chunks(fa + fb) {
                    da.extend_from_slice(&row[..fa]);
                    db.extend_from_slice(&row[fa..]);
                }
                if self.wants(*a) {
                    accumulate(grads, *a, Tensor::from_parts(vec![n, fa], da));
                }
                if self.wants(*b) {
                    accumulate(grads, *b, Tensor::from_parts(vec![n, fb], db));
                }
            }
            Op::Gather { x, idx } => {
                let xv = self.value(*x);
                let a = xv.shape()[1];
                let mut dx = vec![0.0; xv.len()];
                for (n, &i) in idx.iter().enumerate() {
                    dx[n * a + i] += gd[n];
                }
                accumulate(grads, *x, Tensor::from_parts(xv.shape().to_vec(), dx));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::scalar(0.0));
        let y = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5]);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.25]);
    }

    #[test]
    fn prelu_applies_slope_to_negatives() {
        let mut tape = Tape::new();
        let x = tape.var(t(&[1, 2], &[-1.0, 2.0]));
        let a = tape.var(t(&[2], &[0.25, 0.25]));
        let y = tape.prelu(x, a).unwrap();
        assert_eq!(tape.value(y).data(), &[-0.25, 2.0]);
    }

    #[test]
    fn matmul_small() {
        let mut tape = Tape::new();
        let a = tape.var(t(&[1, 2], &[1.0, 2.0]));
        let b = tape.var(t(&[2, 1], &[3.0, 4.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).shape(), &[1, 1]);
        assert_eq!(tape.value(c).data(), &[11.0]);
    }

    #[test]
    fn square_gradient_accumulates_over_both_uses() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.var(t(&[2], &[1.0, 2.0]));
        let y = tape.scale(x, 2.0).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn shape_errors_name_the_primitive() {
        let mut tape = Tape::new();
        let a = tape.var(t(&[2, 3], &[0.0; 6]));
        let b = tape.var(t(&[2, 3], &[0.0; 6]));
        let err = tape.matmul(a, b).unwrap_err();
        assert!(matches!(err, Error::Shape { prim: "matmul", .. }), "{err}");
        let k = tape.var(Tensor::zeros(&[1, 1, 2, 2]));
        let x = tape.var(Tensor::zeros(&[1, 1, 4, 4]));
        assert!(tape.conv2d(x, k, 3, 0).is_err());
    }

    #[test]
    fn conv_transpose_doubles_resolution() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::full(&[2, 3, 4, 4], 1.0));
        let k = tape.var(Tensor::full(&[3, 5, 3, 3], 0.1));
        let y = tape.conv_transpose2d(x, k, 2, 1, 1).unwrap();
        assert_eq!(tape.shape(y), &[2, 5, 8, 8]);
    }

    #[test]
    fn finite_checks_catch_nan() {
        let mut tape = Tape::with_finite_checks();
        let x = tape.var(Tensor::scalar(f64::NAN));
        assert!(matches!(tape.scale(x, 1.0), Err(Error::NonFinite("scale"))));
    }

    #[test]
    fn frozen_inputs_get_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::scalar(2.0));
        let x = tape.var(Tensor::scalar(5.0));
        let y = tape.mul(c, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[2.0]);
    }
}
