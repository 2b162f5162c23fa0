//! Encoder, demapper, task head and JSCC models, and their composition
//! `task ∘ demapper ∘ channel ∘ encoder`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{BatchRealization, ChannelConfig, ChannelKind, ComplexBlock, Snr};
use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Tape, Tensor, Var};

/// Bandwidth compression ratio: channel symbols per source dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rate {
    pub num: u32,
    pub den: u32,
}

impl Rate {
    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 || num > den {
            return Err(Error::invalid(format!("rate {num}/{den} must lie in (0, 1]")));
        }
        Ok(Self { num, den })
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Rate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("bad rate `{s}` (expected `num/den`)"));
        let (n, d) = s.split_once('/').unwrap_or((s, "1"));
        Rate::new(n.trim().parse().map_err(|_| bad())?, d.trim().parse().map_err(|_| bad())?)
    }
}

/// `round(input_dims · r)`, halves rounded up, at least one symbol.
pub fn symbols_for_rate(input_dims: usize, rate: Rate) -> usize {
    let (num, den) = (rate.num as usize, rate.den as usize);
    ((2 * input_dims * num + den) / (2 * den)).max(1)
}

/// One stage of a feed-forward stack. Parameterized layers own names under
/// the network's prefix.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv { name: String, cin: usize, cout: usize, k: usize, stride: usize, pad: usize },
    ConvT { name: String, cin: usize, cout: usize, k: usize, stride: usize, pad: usize, out_pad: usize },
    Dense { name: String, fin: usize, fout: usize },
    Prelu { name: String, channels: usize },
    Relu,
    Sigmoid,
    /// Per-sample target shape.
    Reshape(Vec<usize>),
    Flatten,
    /// SNR-conditioned multiplicative gate over axis-1 channels.
    SnrGate { name: String, channels: usize },
    NormalizePower { symbols: usize },
}

/// SNR fed to gates is clamped to this range (dB) and scaled by 1/20; the
/// noiseless sentinel maps to the top of the range.
pub const GATE_SNR_RANGE: (f64, f64) = (-10.0, 30.0);

fn gate_feature(snr: Snr) -> f64 {
    let db = match snr {
        Snr::Db(db) => db.clamp(GATE_SNR_RANGE.0, GATE_SNR_RANGE.1),
        Snr::Infinite => GATE_SNR_RANGE.1,
    };
    db / 20.0
}

/// A layer stack with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    prefix: String,
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    pub params: ParamSet,
}

fn glorot(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

impl Network {
    /// Build and initialize; initialization is a pure function of `seed`.
    pub fn new(prefix: &str, input_shape: Vec<usize>, layers: Vec<Layer>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let p = |n: &str, s: &str| format!("{prefix}.{n}.{s}");
        for layer in &layers {
            match layer {
                Layer::Conv { name, cin, cout, k, .. } => {
                    params.insert(p(name, "w"), glorot(&mut rng, &[*cout, *cin, *k, *k], cin * k * k, cout * k * k))?;
                    params.insert(p(name, "b"), Tensor::zeros(&[*cout]))?;
                }
                Layer::ConvT { name, cin, cout, k, .. } => {
                    params.insert(p(name, "w"), glorot(&mut rng, &[*cin, *cout, *k, *k], cin * k * k, cout * k * k))?;
                    params.insert(p(name, "b"), Tensor::zeros(&[*cout]))?;
                }
                Layer::Dense { name, fin, fout } => {
                    params.insert(p(name, "w"), glorot(&mut rng, &[*fin, *fout], *fin, *fout))?;
                    params.insert(p(name, "b"), Tensor::zeros(&[*fout]))?;
                }
                Layer::Prelu { name, channels } => {
                    params.insert(p(name, "slope"), Tensor::full(&[*channels], 0.25))?;
                }
                Layer::SnrGate { name, channels } => {
                    params.insert(p(name, "w"), glorot(&mut rng, &[channels + 1, *channels], channels + 1, *channels))?;
                    // Gates start mostly open.
                    params.insert(p(name, "b"), Tensor::full(&[*channels], 2.0))?;
                }
                Layer::Relu | Layer::Sigmoid | Layer::Reshape(_) | Layer::Flatten | Layer::NormalizePower { .. } => {}
            }
        }
        let net = Self { prefix: prefix.to_string(), input_shape, layers, params };
        net.output_shape()?;
        Ok(net)
    }

    pub fn identity(input_shape: Vec<usize>) -> Self {
        Self { prefix: String::new(), input_shape, layers: Vec::new(), params: ParamSet::new() }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_dims(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn has_snr_gate(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::SnrGate { .. }))
    }

    /// Per-sample output shape, found by a dry run on one zero-ish sample.
    pub fn output_shape(&self) -> Result<Vec<usize>> {
        let mut tape = Tape::new();
        let mut shape = vec![1];
        shape.extend(&self.input_shape);
        let x = tape.constant(Tensor::full(&shape, 0.5));
        let y = self.forward(&mut tape, x, Some(Snr::Db(0.0)))?;
        Ok(tape.shape(y)[1..].to_vec())
    }

    fn name(&self, layer: &str, slot: &str) -> String {
        format!("{}.{layer}.{slot}", self.prefix)
    }

    /// Record the stack on `tape`. `x` is `[N, ...input_shape]`.
    pub fn forward(&self, tape: &mut Tape, x: Var, snr: Option<Snr>) -> Result<Var> {
        if tape.shape(x)[1..] != self.input_shape[..] {
            return Err(Error::shape(
                "network",
                format!("`{}` expects [N, {:?}], got {:?}", self.prefix, self.input_shape, tape.shape(x)),
            ));
        }
        let n = tape.shape(x)[0];
        let mut h = x;
        for layer in &self.layers {
            h = match layer {
                Layer::Conv { name, stride, pad, .. } => {
                    let w = tape.param(&self.params, &self.name(name, "w"))?;
                    let b = tape.param(&self.params, &self.name(name, "b"))?;
                    let y = tape.conv2d(h, w, *stride, *pad)?;
                    tape.add_bias(y, b)?
                }
                Layer::ConvT { name, stride, pad, out_pad, .. } => {
                    let w = tape.param(&self.params, &self.name(name, "w"))?;
                    let b = tape.param(&self.params, &self.name(name, "b"))?;
                    let y = tape.conv_transpose2d(h, w, *stride, *pad, *out_pad)?;
                    tape.add_bias(y, b)?
                }
                Layer::Dense { name, .. } => {
                    let w = tape.param(&self.params, &self.name(name, "w"))?;
                    let b = tape.param(&self.params, &self.name(name, "b"))?;
                    let y = tape.matmul(h, w)?;
                    tape.add_bias(y, b)?
                }
                Layer::Prelu { name, .. } => {
                    let a = tape.param(&self.params, &self.name(name, "slope"))?;
                    tape.prelu(h, a)?
                }
                Layer::Relu => tape.relu(h)?,
                Layer::Sigmoid => tape.sigmoid(h)?,
                Layer::Reshape(shape) => {
                    let mut full = vec![n];
                    full.extend(shape);
                    tape.reshape(h, &full)?
                }
                Layer::Flatten => tape.flatten(h)?,
                Layer::SnrGate { name, .. } => {
                    let snr = snr.ok_or_else(|| Error::invalid(format!("`{}` is SNR-conditioned but no SNR given", self.prefix)))?;
                    let pooled = tape.channel_mean(h)?;
                    let feat = tape.constant(Tensor::full(&[n, 1], gate_feature(snr)));
                    let input = tape.concat_cols(pooled, feat)?;
                    let w = tape.param(&self.params, &self.name(name, "w"))?;
                    let b = tape.param(&self.params, &self.name(name, "b"))?;
                    let logits = tape.matmul(input, w)?;
                    let logits = tape.add_bias(logits, b)?;
                    let gate = tape.sigmoid(logits)?;
                    tape.scale_channels(h, gate)?
                }
                Layer::NormalizePower { symbols } => tape.normalize_power(h, *symbols)?,
            };
        }
        Ok(h)
    }

    /// Forward without keeping the tape.
    pub fn infer(&self, x: &Tensor, snr: Option<Snr>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = self.forward(&mut tape, xv, snr)?;
        Ok(tape.value(y).clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArchKind {
    /// Strided convolutions for images.
    Conv,
    /// Fully connected stacks.
    Dense,
}

impl FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv" => Ok(ArchKind::Conv),
            "dense" => Ok(ArchKind::Dense),
            other => Err(Error::invalid(format!("unknown architecture `{other}`"))),
        }
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArchKind::Conv => "conv",
            ArchKind::Dense => "dense",
        })
    }
}

/// Architecture knobs shared by encoder, demapper and task head.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArchConfig {
    pub kind: ArchKind,
    pub snr_gate: bool,
    /// Hidden width of dense encoder/demapper stacks.
    pub hidden: usize,
    /// Hidden width of the task head.
    pub task_hidden: usize,
    pub conv1: usize,
    pub conv2: usize,
}

impl ArchConfig {
    pub fn conv(snr_gate: bool) -> Self {
        Self { kind: ArchKind::Conv, snr_gate, hidden: 256, task_hidden: 128, conv1: 16, conv2: 32 }
    }

    pub fn dense(snr_gate: bool) -> Self {
        Self { kind: ArchKind::Dense, snr_gate, hidden: 256, task_hidden: 128, conv1: 16, conv2: 32 }
    }
}

fn half(n: usize) -> usize {
    n.div_ceil(2)
}

fn shape_chw(input_shape: &[usize]) -> Result<(usize, usize, usize)> {
    match input_shape {
        [c, h, w] => Ok((*c, *h, *w)),
        other => Err(Error::shape("arch", format!("conv architecture needs [C,H,W] input, got {other:?}"))),
    }
}

fn encoder_layers(input_shape: &[usize], symbols: usize, arch: &ArchConfig) -> Result<Vec<Layer>> {
    let mut layers = Vec::new();
    let gate = |layers: &mut Vec<Layer>, name: &str, channels: usize| {
        if arch.snr_gate {
            layers.push(Layer::SnrGate { name: name.into(), channels });
        }
    };
    match arch.kind {
        ArchKind::Conv => {
            let (c, h, w) = shape_chw(input_shape)?;
            let (c1, c2) = (arch.conv1, arch.conv2);
            layers.push(Layer::Conv { name: "conv1".into(), cin: c, cout: c1, k: 3, stride: 2, pad: 1 });
            layers.push(Layer::Prelu { name: "act1".into(), channels: c1 });
            gate(&mut layers, "gate1", c1);
            layers.push(Layer::Conv { name: "conv2".into(), cin: c1, cout: c2, k: 3, stride: 2, pad: 1 });
            layers.push(Layer::Prelu { name: "act2".into(), channels: c2 });
            gate(&mut layers, "gate2", c2);
            layers.push(Layer::Flatten);
            let flat = c2 * half(half(h)) * half(half(w));
            layers.push(Layer::Dense { name: "out".into(), fin: flat, fout: 2 * symbols });
        }
        ArchKind::Dense => {
            let dims = input_shape.iter().product();
            layers.push(Layer::Flatten);
            layers.push(Layer::Dense { name: "fc1".into(), fin: dims, fout: arch.hidden });
            layers.push(Layer::Prelu { name: "act1".into(), channels: arch.hidden });
            gate(&mut layers, "gate1", arch.hidden);
            layers.push(Layer::Dense { name: "out".into(), fin: arch.hidden, fout: 2 * symbols });
        }
    }
    layers.push(Layer::NormalizePower { symbols });
    Ok(layers)
}

fn demapper_layers(output_shape: &[usize], symbols: usize, arch: &ArchConfig) -> Result<Vec<Layer>> {
    let mut layers = Vec::new();
    let gate = |layers: &mut Vec<Layer>, name: &str, channels: usize| {
        if arch.snr_gate {
            layers.push(Layer::SnrGate { name: name.into(), channels });
        }
    };
    match arch.kind {
        ArchKind::Conv => {
            let (c, h, w) = shape_chw(output_shape)?;
            let (c1, c2) = (arch.conv1, arch.conv2);
            let (h2, w2) = (half(h), half(w));
            let (h4, w4) = (half(h2), half(w2));
            let flat = c2 * h4 * w4;
            layers.push(Layer::Dense { name: "in".into(), fin: 2 * symbols, fout: flat });
            layers.push(Layer::Prelu { name: "act0".into(), channels: flat });
            gate(&mut layers, "gate0", flat);
            layers.push(Layer::Reshape(vec![c2, h4, w4]));
            // Transposed conv output is 2·in − 1 + out_pad; pick out_pad to
            // land exactly on the encoder's intermediate sizes.
            let op1 = (h2 + 1 - 2 * h4, w2 + 1 - 2 * w4);
            let op2 = (h + 1 - 2 * h2, w + 1 - 2 * w2);
            if op1.0 != op1.1 || op2.0 != op2.1 {
                return Err(Error::shape("arch", format!("non-square inputs with mismatched parity: {output_shape:?}")));
            }
            layers.push(Layer::ConvT { name: "deconv1".into(), cin: c2, cout: c1, k: 3, stride: 2, pad: 1, out_pad: op1.0 });
            layers.push(Layer::Prelu { name: "act1".into(), channels: c1 });
            gate(&mut layers, "gate1", c1);
            layers.push(Layer::ConvT { name: "deconv2".into(), cin: c1, cout: c, k: 3, stride: 2, pad: 1, out_pad: op2.0 });
        }
        ArchKind::Dense => {
            let dims = output_shape.iter().product();
            layers.push(Layer::Dense { name: "fc1".into(), fin: 2 * symbols, fout: arch.hidden });
            layers.push(Layer::Prelu { name: "act1".into(), channels: arch.hidden });
            gate(&mut layers, "gate1", arch.hidden);
            layers.push(Layer::Dense { name: "out".into(), fin: arch.hidden, fout: dims });
            layers.push(Layer::Reshape(output_shape.to_vec()));
        }
    }
    layers.push(Layer::Sigmoid);
    Ok(layers)
}

fn task_layers(input_shape: &[usize], outputs: usize, arch: &ArchConfig) -> Result<Vec<Layer>> {
    let mut layers = Vec::new();
    match arch.kind {
        ArchKind::Conv => {
            let (c, h, w) = shape_chw(input_shape)?;
            let (c1, c2) = (arch.conv1, arch.conv2);
            layers.push(Layer::Conv { name: "conv1".into(), cin: c, cout: c1, k: 3, stride: 2, pad: 1 });
            layers.push(Layer::Relu);
            layers.push(Layer::Conv { name: "conv2".into(), cin: c1, cout: c2, k: 3, stride: 2, pad: 1 });
            layers.push(Layer::Relu);
            layers.push(Layer::Flatten);
            let flat = c2 * half(half(h)) * half(half(w));
            layers.push(Layer::Dense { name: "fc1".into(), fin: flat, fout: arch.task_hidden });
        }
        ArchKind::Dense => {
            layers.push(Layer::Flatten);
            let dims = input_shape.iter().product();
            layers.push(Layer::Dense { name: "fc1".into(), fin: dims, fout: arch.task_hidden });
        }
    }
    layers.push(Layer::Relu);
    layers.push(Layer::Dense { name: "out".into(), fin: arch.task_hidden, fout: outputs });
    Ok(layers)
}

/// Transmitter: source → `s` unit-power complex symbols.
#[derive(Clone, Debug, PartialEq)]
pub struct GoeModel {
    pub net: Network,
    symbols: usize,
}

impl GoeModel {
    pub fn new(prefix: &str, input_shape: &[usize], symbols: usize, arch: &ArchConfig, seed: u64) -> Result<Self> {
        let layers = encoder_layers(input_shape, symbols, arch)?;
        Ok(Self { net: Network::new(prefix, input_shape.to_vec(), layers, seed)?, symbols })
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, snr: Snr) -> Result<Var> {
        self.net.forward(tape, x, Some(snr))
    }
}

/// Encode a batch `[N, ...]` into `N` blocks of unit average power.
pub fn goe_encode(m: &GoeModel, x: &Tensor, snr: Snr) -> Result<Vec<ComplexBlock>> {
    let z = m.net.infer(x, Some(snr))?;
    (0..z.batch()).map(|i| ComplexBlock::new(z.row(i).to_vec())).collect()
}

/// Receiver front end: equalized symbols → source-shaped signal in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DemapperModel {
    pub net: Network,
    output_shape: Vec<usize>,
}

impl DemapperModel {
    pub fn new(prefix: &str, output_shape: &[usize], symbols: usize, arch: &ArchConfig, seed: u64) -> Result<Self> {
        let layers = demapper_layers(output_shape, symbols, arch)?;
        let net = Network::new(prefix, vec![2 * symbols], layers, seed)?;
        Ok(Self { net, output_shape: output_shape.to_vec() })
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn forward(&self, tape: &mut Tape, z_hat: Var, snr: Snr) -> Result<Var> {
        self.net.forward(tape, z_hat, Some(snr))
    }
}

/// Demap a batch of received blocks into `[N, ...source shape]`.
pub fn demap(m: &DemapperModel, z_hat: &[ComplexBlock], snr: Snr) -> Result<Tensor> {
    let width = m.net.input_dims();
    if z_hat.is_empty() || z_hat.iter().any(|b| b.data().len() != width) {
        return Err(Error::shape("demap", format!("expected blocks of {} symbols", width / 2)));
    }
    let data = z_hat.iter().flat_map(|b| b.data().iter().copied()).collect();
    let x = Tensor::new(vec![z_hat.len(), width], data)?;
    m.net.infer(&x, Some(snr))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskHead {
    Classifier { classes: usize },
    QNetwork { actions: usize },
    /// Passes the demapped signal through unchanged.
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskModel {
    pub head: TaskHead,
    pub net: Network,
    pub frozen: bool,
}

impl TaskModel {
    pub fn new(prefix: &str, input_shape: &[usize], head: TaskHead, arch: &ArchConfig, seed: u64) -> Result<Self> {
        let net = match head {
            TaskHead::Classifier { classes: n } | TaskHead::QNetwork { actions: n } => {
                Network::new(prefix, input_shape.to_vec(), task_layers(input_shape, n, arch)?, seed)?
            }
            TaskHead::Identity => Network::identity(input_shape.to_vec()),
        };
        Ok(Self { head, net, frozen: false })
    }

    pub fn outputs(&self) -> usize {
        match self.head {
            TaskHead::Classifier { classes } => classes,
            TaskHead::QNetwork { actions } => actions,
            TaskHead::Identity => self.net.input_dims(),
        }
    }

    pub fn forward(&self, tape: &mut Tape, w: Var) -> Result<Var> {
        self.net.forward(tape, w, None)
    }
}

/// Reconstruction-only baseline with the same shapes as encoder + demapper.
#[derive(Clone, Debug, PartialEq)]
pub struct JsccModel {
    pub encoder: GoeModel,
    pub decoder: DemapperModel,
}

impl JsccModel {
    pub fn new(input_shape: &[usize], symbols: usize, arch: &ArchConfig, seed: u64) -> Result<Self> {
        let (encoder, decoder) = comm_pair(input_shape, symbols, arch, seed)?;
        Ok(Self { encoder, decoder })
    }

    pub fn param_count(&self) -> usize {
        self.encoder.net.params.count() + self.decoder.net.params.count()
    }
}

/// Encoder/demapper pair with the canonical prefixes and seeds derived from
/// `seed`. The JSCC baseline uses the same construction.
pub fn comm_pair(input_shape: &[usize], symbols: usize, arch: &ArchConfig, seed: u64) -> Result<(GoeModel, DemapperModel)> {
    let enc = GoeModel::new("enc", input_shape, symbols, arch, seed)?;
    let dec = DemapperModel::new("dec", input_shape, symbols, arch, seed.wrapping_add(1))?;
    Ok((enc, dec))
}

/// Intermediates of one pass through the full chain.
#[derive(Clone, Debug)]
pub struct ComposeOutput {
    pub y_hat: Tensor,
    pub w: Tensor,
    pub z: Tensor,
    pub z_hat: Tensor,
    pub realization: BatchRealization,
}

/// Vars recorded by [`forward_chain`].
#[derive(Clone, Copy, Debug)]
pub struct ChainVars {
    pub z: Var,
    pub z_hat: Var,
    pub w: Var,
    pub y_hat: Var,
}

/// Record encoder → channel → demapper → task on `tape` with one freshly
/// sampled channel realization for the batch.
#[allow(clippy::too_many_arguments)]
pub fn forward_chain<R: Rng + ?Sized>(
    tape: &mut Tape,
    goe: &GoeModel,
    kind: ChannelKind,
    snr: Snr,
    demapper: &DemapperModel,
    task: &TaskModel,
    x: Var,
    rng: &mut R,
) -> Result<(ChainVars, BatchRealization)> {
    let z = goe.forward(tape, x, snr)?;
    let real = BatchRealization::sample(tape.shape(z)[0], goe.symbols(), kind, snr, rng);
    let z_hat = real.apply(tape, z)?;
    let w = demapper.forward(tape, z_hat, snr)?;
    let y_hat = task.forward(tape, w)?;
    Ok((ChainVars { z, z_hat, w, y_hat }, real))
}

/// `task ∘ demapper ∘ channel ∘ encoder` on a batch, sampling exactly one
/// channel realization per block.
pub fn compose<R: Rng + ?Sized>(
    goe: &GoeModel,
    channel: &ChannelConfig,
    demapper: &DemapperModel,
    task: &TaskModel,
    x: &Tensor,
    rng: &mut R,
) -> Result<ComposeOutput> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let (v, realization) = forward_chain(&mut tape, goe, channel.kind, channel.snr, demapper, task, xv, rng)?;
    Ok(ComposeOutput {
        y_hat: tape.value(v.y_hat).clone(),
        w: tape.value(v.w).clone(),
        z: tape.value(v.z).clone(),
        z_hat: tape.value(v.z_hat).clone(),
        realization,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn symbol_counts() {
        assert_eq!(symbols_for_rate(3072, Rate::new(1, 6).unwrap()), 512);
        assert_eq!(symbols_for_rate(768, Rate::new(1, 6).unwrap()), 128);
        assert_eq!(symbols_for_rate(784, Rate::new(1, 6).unwrap()), 131);
        // Inverse check on the 84×84×4 frame stack with 192·7² reals.
        let reals = 192 * 7 * 7;
        let dims = 84 * 84 * 4;
        assert_eq!(reals * 6, 2 * dims);
        assert_eq!(symbols_for_rate(dims, Rate::new(1, 6).unwrap()), reals / 2);
        assert_eq!(symbols_for_rate(1, Rate::new(1, 6).unwrap()), 1);
        assert!("0/3".parse::<Rate>().is_err());
        assert_eq!("1/6".parse::<Rate>().unwrap(), Rate::new(1, 6).unwrap());
    }

    #[test]
    fn encoder_output_has_unit_power() {
        for arch in [ArchConfig::conv(true), ArchConfig::dense(false)] {
            let shape = [1, 8, 8];
            let s = symbols_for_rate(64, Rate::new(1, 6).unwrap());
            let goe = GoeModel::new("enc", &shape, s, &arch, 5).unwrap();
            let x = batch(&[4, 1, 8, 8], 1);
            let blocks = goe_encode(&goe, &x, Snr::Db(3.0)).unwrap();
            assert_eq!(blocks.len(), 4);
            for b in blocks {
                assert_eq!(b.symbols(), s);
                assert!((b.mean_power() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn demapper_output_matches_source_shape() {
        for (shape, arch) in [(vec![1, 8, 8], ArchConfig::conv(true)), (vec![1, 7, 7], ArchConfig::conv(false)), (vec![3, 16, 16], ArchConfig::dense(false))] {
            let dims: usize = shape.iter().product();
            let s = symbols_for_rate(dims, Rate::new(1, 6).unwrap());
            let dec = DemapperModel::new("dec", &shape, s, &arch, 2).unwrap();
            let blocks: Vec<_> = (0..3).map(|i| ComplexBlock::new((0..2 * s).map(|j| ((i * j) as f64).sin()).collect()).unwrap()).collect();
            let w = demap(&dec, &blocks, Snr::Db(10.0)).unwrap();
            let mut expect = vec![3];
            expect.extend(&shape);
            assert_eq!(w.shape(), &expect[..]);
            assert!(w.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn jscc_parameter_parity() {
        let arch = ArchConfig::conv(true);
        let jscc = JsccModel::new(&[1, 8, 8], 11, &arch, 3).unwrap();
        let goe = GoeModel::new("enc", &[1, 8, 8], 11, &arch, 9).unwrap();
        let dem = DemapperModel::new("dec", &[1, 8, 8], 11, &arch, 9).unwrap();
        assert_eq!(jscc.param_count(), goe.net.params.count() + dem.net.params.count());
    }

    #[test]
    fn ungated_models_ignore_snr() {
        let arch = ArchConfig::conv(false);
        let goe = GoeModel::new("enc", &[1, 8, 8], 11, &arch, 4).unwrap();
        let x = batch(&[2, 1, 8, 8], 3);
        let a = goe_encode(&goe, &x, Snr::Db(-2.0)).unwrap();
        let b = goe_encode(&goe, &x, Snr::Db(20.0)).unwrap();
        assert_eq!(a, b);
        let gated = GoeModel::new("enc", &[1, 8, 8], 11, &ArchConfig::conv(true), 4).unwrap();
        assert_ne!(goe_encode(&gated, &x, Snr::Db(-2.0)).unwrap(), goe_encode(&gated, &x, Snr::Db(20.0)).unwrap());
    }

    #[test]
    fn compose_is_seed_deterministic_and_noise_dependent() {
        let arch = ArchConfig::conv(true);
        let (goe, dem) = comm_pair(&[1, 8, 8], 11, &arch, 7).unwrap();
        let task = TaskModel::new("task", &[1, 8, 8], TaskHead::Classifier { classes: 4 }, &arch, 8).unwrap();
        let x = batch(&[2, 1, 8, 8], 5);
        let cfg = ChannelConfig::new(ChannelKind::Awgn, Snr::Db(0.0), 1);
        let a = compose(&goe, &cfg, &dem, &task, &x, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = compose(&goe, &cfg, &dem, &task, &x, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a.y_hat, b.y_hat);
        assert_eq!(a.w, b.w);
        let c = compose(&goe, &cfg, &dem, &task, &x, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_ne!(a.w, c.w);
        assert_eq!(a.y_hat.shape(), &[2, 4]);
    }

    #[test]
    fn noiseless_compose_feeds_task_with_demapped_signal() {
        let arch = ArchConfig::dense(false);
        let (goe, dem) = comm_pair(&[3, 16, 16], 128, &arch, 1).unwrap();
        let task = TaskModel::new("q", &[3, 16, 16], TaskHead::QNetwork { actions: 3 }, &arch, 2).unwrap();
        let x = batch(&[2, 3, 16, 16], 9);
        let cfg = ChannelConfig::noiseless(ChannelKind::SlowFading);
        let out = compose(&goe, &cfg, &dem, &task, &x, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(out.z, out.z_hat);
        assert_eq!(task.net.infer(&out.w, None).unwrap(), out.y_hat);
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let goe = GoeModel::new("enc", &[1, 8, 8], 11, &ArchConfig::conv(false), 0).unwrap();
        let x = batch(&[2, 1, 7, 7], 0);
        assert!(matches!(goe_encode(&goe, &x, Snr::Db(0.0)), Err(Error::Shape { .. })));
    }
}
