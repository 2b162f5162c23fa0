//! Central finite-difference checks of the analytic backward pass.

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// A primitive with its attributes, for gradient checking.
#[derive(Clone, Debug, PartialEq)]
pub enum Prim {
    MatMul,
    Conv2d { stride: usize, pad: usize },
    ConvTranspose2d { stride: usize, pad: usize, out_pad: usize },
    AddBias,
    Relu,
    Prelu,
    Sigmoid,
    Reshape(Vec<usize>),
    Flatten,
    Mean,
    Add,
    Sub,
    Mul,
    Scale(f64),
    SoftmaxCrossEntropy { labels: Vec<usize> },
    Mse,
    Huber { delta: f64 },
    NormalizePower { symbols: usize },
    ChannelMean,
    ScaleChannels,
    ConcatCols,
    Gather { idx: Vec<usize> },
}

impl Prim {
    pub fn name(&self) -> &'static str {
        match self {
            Prim::MatMul => "matmul",
            Prim::Conv2d { .. } => "conv2d",
            Prim::ConvTranspose2d { .. } => "conv_transpose2d",
            Prim::AddBias => "add_bias",
            Prim::Relu => "relu",
            Prim::Prelu => "prelu",
            Prim::Sigmoid => "sigmoid",
            Prim::Reshape(_) => "reshape",
            Prim::Flatten => "flatten",
            Prim::Mean => "mean",
            Prim::Add => "add",
            Prim::Sub => "sub",
            Prim::Mul => "mul",
            Prim::Scale(_) => "scale",
            Prim::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Prim::Mse => "mse",
            Prim::Huber { .. } => "huber",
            Prim::NormalizePower { .. } => "normalize_power",
            Prim::ChannelMean => "channel_mean",
            Prim::ScaleChannels => "scale_channels",
            Prim::ConcatCols => "concat_cols",
            Prim::Gather { .. } => "gather",
        }
    }

    /// Record the primitive on `tape` applied to `inputs`.
    pub fn apply(&self, tape: &mut Tape, inputs: &[Var]) -> Result<Var> {
        let arg = |i: usize| inputs[i];
        match self {
            Prim::MatMul => tape.matmul(arg(0), arg(1)),
            Prim::Conv2d { stride, pad } => tape.conv2d(arg(0), arg(1), *stride, *pad),
            Prim::ConvTranspose2d { stride, pad, out_pad } => {
                tape.conv_transpose2d(arg(0), arg(1), *stride, *pad, *out_pad)
            }
            Prim::AddBias => tape.add_bias(arg(0), arg(1)),
            Prim::Relu => tape.relu(arg(0)),
            Prim::Prelu => tape.prelu(arg(0), arg(1)),
            Prim::Sigmoid => tape.sigmoid(arg(0)),
            Prim::Reshape(shape) => tape.reshape(arg(0), shape),
            Prim::Flatten => tape.flatten(arg(0)),
            Prim::Mean => tape.mean(arg(0)),
            Prim::Add => tape.add(arg(0), arg(1)),
            Prim::Sub => tape.sub(arg(0), arg(1)),
            Prim::Mul => tape.mul(arg(0), arg(1)),
            Prim::Scale(k) => tape.scale(arg(0), *k),
            Prim::SoftmaxCrossEntropy { labels } => tape.softmax_cross_entropy(arg(0), labels),
            Prim::Mse => tape.mse(arg(0), arg(1)),
            Prim::Huber { delta } => tape.huber(arg(0), arg(1), *delta),
            Prim::NormalizePower { symbols } => tape.normalize_power(arg(0), *symbols),
            Prim::ChannelMean => tape.channel_mean(arg(0)),
            Prim::ScaleChannels => tape.scale_channels(arg(0), arg(1)),
            Prim::ConcatCols => tape.concat_cols(arg(0), arg(1)),
            Prim::Gather { idx } => tape.gather(arg(0), idx),
        }
    }
}

/// Max relative error between the analytic gradient of a scalar function
/// built by `build` and its central finite-difference estimate, over every
/// coordinate of every input. Error per coordinate is
/// `|analytic − numeric| / max(1, |analytic|)`.
pub fn grad_check<F>(inputs: &[Tensor], step: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |point: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = point.iter().map(|t| tape.var(t.clone())).collect();
        let root = build(&mut tape, &vars)?;
        Ok(tape.value(root).data()[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let root = build(&mut tape, &vars)?;
    let grads = tape.backward(root)?;

    let mut point = inputs.to_vec();
    let mut worst = 0.0f64;
    for (k, var) in vars.iter().enumerate() {
        let zero = Tensor::zeros(inputs[k].shape());
        let analytic = grads.get(*var).unwrap_or(&zero);
        for i in 0..inputs[k].len() {
            let orig = point[k].data()[i];
            point[k].data_mut()[i] = orig + step;
            let up = eval(&point)?;
            point[k].data_mut()[i] = orig - step;
            let down = eval(&point)?;
            point[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.data()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}

/// [`grad_check`] for a single primitive. Non-scalar outputs are reduced by
/// a fixed, non-uniform weighting so every output coordinate contributes.
pub fn finite_diff_check(prim: &Prim, point: &[Tensor], step: f64) -> Result<f64> {
    grad_check(point, step, |tape, vars| {
        let out = prim.apply(tape, vars)?;
        if tape.value(out).is_scalar() {
            return Ok(out);
        }
        let shape = tape.shape(out).to_vec();
        let n: usize = shape.iter().product();
        let w = (0..n).map(|i| (0.7 + 1.3 * i as f64).sin() + 0.5).collect();
        let w = tape.constant(Tensor::from_parts(shape, w));
        let weighted = tape.mul(out, w)?;
        tape.mean(weighted)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_on_vectors() {
        let a = Tensor::from_vec((0..8).map(|i| (i as f64 * 0.9).sin()).collect());
        let b = Tensor::from_vec((0..8).map(|i| (i as f64 * 0.4).cos()).collect());
        assert!(finite_diff_check(&Prim::Mse, &[a, b], 1e-5).unwrap() < 1e-6);
    }

    #[test]
    fn softmax_ce_ten_classes() {
        let logits = Tensor::new(vec![2, 10], (0..20).map(|i| (i as f64 * 1.7).sin() * 2.0).collect()).unwrap();
        let prim = Prim::SoftmaxCrossEntropy { labels: vec![3, 9] };
        assert!(finite_diff_check(&prim, &[logits], 1e-5).unwrap() < 1e-6);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let x = Tensor::from_vec(vec![0.3]);
        let err = grad_check(&[x], 1e-5, |tape, v| {
            let s = tape.sigmoid(v[0])?;
            // x smuggled in as a constant: value depends on it, tape does not.
            let c = tape.constant(Tensor::scalar(tape.value(v[0]).data()[0]));
            let y = tape.mul(s, c)?;
            tape.mean(y)
        })
        .unwrap();
        assert!(err > 1e-3);
    }
}
