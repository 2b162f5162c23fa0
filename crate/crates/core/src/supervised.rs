//! Supervised training: task pretraining without a channel, joint
//! encoder/demapper/task training through the channel, the JSCC
//! reconstruction baseline, and SNR-sweep evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{BatchRealization, ChannelKind, Snr};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exp::metrics::{mean_std, EvalPoint, Metric};
use crate::models::{forward_chain, DemapperModel, GoeModel, JsccModel, TaskHead, TaskModel};
use crate::objective::{accuracy, psnr_from_mse, ObjectiveConfig, TaskLoss};
use crate::tensor::{OptRule, Optimizer, Tape, Tensor, Var};

/// SNR used for each training minibatch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SnrPolicy {
    Fixed(Snr),
    /// Uniform in `[lo, hi]` dB, drawn once per minibatch.
    Uniform { lo: f64, hi: f64 },
}

impl SnrPolicy {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Snr {
        match *self {
            SnrPolicy::Fixed(s) => s,
            SnrPolicy::Uniform { lo, hi } if lo == hi => Snr::Db(lo),
            SnrPolicy::Uniform { lo, hi } => Snr::Db(rng.random_range(lo..=hi)),
        }
    }

    pub fn label(&self) -> String {
        match self {
            SnrPolicy::Fixed(s) => s.to_string(),
            SnrPolicy::Uniform { lo, hi } => format!("{lo}:{hi}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub snr: SnrPolicy,
    pub freeze_task: bool,
    pub seed: u64,
    pub rule: OptRule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            lr: 1e-4,
            batch_size: 32,
            epochs: 10,
            snr: SnrPolicy::Uniform { lo: -2.0, hi: 20.0 },
            freeze_task: false,
            seed: 0,
            rule: OptRule::adam(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        crate::objective::check_alpha(self.alpha)?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        if let SnrPolicy::Uniform { lo, hi } = self.snr {
            if !(lo <= hi) {
                return Err(Error::invalid(format!("SNR range {lo}..{hi} is empty")));
            }
        }
        Ok(())
    }

    pub fn optimizer(&self) -> Result<Optimizer> {
        Optimizer::new(self.rule, self.lr)
    }
}

/// Encoder, demapper and task head trained together.
#[derive(Clone, Debug, PartialEq)]
pub struct GocomSystem {
    pub goe: GoeModel,
    pub demapper: DemapperModel,
    pub task: TaskModel,
}

fn task_loss(tape: &mut Tape, task: &TaskModel, y_hat: Var, x: Var, labels: &[usize]) -> Result<Var> {
    match task.head {
        TaskHead::Classifier { .. } => tape.softmax_cross_entropy(y_hat, labels),
        TaskHead::Identity => tape.mse(y_hat, x),
        TaskHead::QNetwork { .. } => Err(Error::invalid("Q-network heads train through the RL trainer")),
    }
}

/// Train the task head on clean inputs (no channel). Returns the mean loss
/// of each epoch. Zero epochs leaves the head untouched.
pub fn pretrain_task(task: &mut TaskModel, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let opt = cfg.optimizer()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mut total = 0.0;
        let batches = data.epoch_batches(cfg.batch_size, &mut rng);
        for idx in &batches {
            let (x, labels) = data.batch(idx);
            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let y = task.forward(&mut tape, xv)?;
            let loss = task_loss(&mut tape, task, y, xv, &labels)?;
            let grads = tape.backward(loss)?;
            task.net.params.accumulate(&tape, &grads);
            opt.step(&mut task.net.params);
            total += tape.value(loss).data()[0];
        }
        trace.push(total / batches.len() as f64);
    }
    Ok(trace)
}

/// One minibatch of joint training: encode, transmit, demap, run the task,
/// backpropagate `(1−α)·L_task + α·L_comm` and update every unfrozen part.
#[allow(clippy::too_many_arguments)]
pub fn train_step<R: Rng + ?Sized>(
    sys: &mut GocomSystem,
    x: &Tensor,
    labels: &[usize],
    channel: ChannelKind,
    snr: Snr,
    obj: &ObjectiveConfig,
    opt: &Optimizer,
    rng: &mut R,
) -> Result<f64> {
    let alpha = obj.alpha();
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let (v, _) = forward_chain(&mut tape, &sys.goe, channel, snr, &sys.demapper, &sys.task, xv, rng)?;
    let l_comm = tape.mse(v.w, xv)?;
    let l_task = task_loss(&mut tape, &sys.task, v.y_hat, xv, labels)?;
    let a = tape.scale(l_task, 1.0 - alpha)?;
    let b = tape.scale(l_comm, alpha)?;
    let loss = tape.add(a, b)?;
    let grads = tape.backward(loss)?;
    sys.goe.net.params.accumulate(&tape, &grads);
    sys.demapper.net.params.accumulate(&tape, &grads);
    opt.step(&mut sys.goe.net.params);
    opt.step(&mut sys.demapper.net.params);
    if !sys.task.frozen {
        sys.task.net.params.accumulate(&tape, &grads);
        opt.step(&mut sys.task.net.params);
    }
    Ok(tape.value(loss).data()[0])
}

/// One minibatch of JSCC training on `MSE(x, x̂)`.
pub fn jscc_step<R: Rng + ?Sized>(
    jscc: &mut JsccModel,
    x: &Tensor,
    channel: ChannelKind,
    snr: Snr,
    opt: &Optimizer,
    rng: &mut R,
) -> Result<f64> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let z = jscc.encoder.forward(&mut tape, xv, snr)?;
    let real = BatchRealization::sample(tape.shape(z)[0], jscc.encoder.symbols(), channel, snr, rng);
    let z_hat = real.apply(&mut tape, z)?;
    let x_hat = jscc.decoder.forward(&mut tape, z_hat, snr)?;
    let loss = tape.mse(x_hat, xv)?;
    let grads = tape.backward(loss)?;
    jscc.encoder.net.params.accumulate(&tape, &grads);
    jscc.decoder.net.params.accumulate(&tape, &grads);
    opt.step(&mut jscc.encoder.net.params);
    opt.step(&mut jscc.decoder.net.params);
    Ok(tape.value(loss).data()[0])
}

/// Minibatches in training order with the SNR drawn for each. The draw order
/// (shuffle, then one SNR per batch, then the step's own channel draws) is
/// shared by both trainers.
fn run_epochs<F>(data: &Dataset, cfg: &TrainConfig, mut step: F) -> Result<Vec<f64>>
where
    F: FnMut(&Tensor, &[usize], Snr, &mut ChaCha8Rng) -> Result<f64>,
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let batches = data.epoch_batches(cfg.batch_size, &mut rng);
        let mut total = 0.0;
        for idx in &batches {
            let (x, labels) = data.batch(idx);
            let snr = cfg.snr.sample(&mut rng);
            total += step(&x, &labels, snr, &mut rng)?;
        }
        trace.push(total / batches.len() as f64);
    }
    Ok(trace)
}

/// Joint training for `cfg.epochs`; returns per-epoch mean objective.
pub fn train_gocom(sys: &mut GocomSystem, data: &Dataset, channel: ChannelKind, cfg: &TrainConfig) -> Result<Vec<f64>> {
    let opt = cfg.optimizer()?;
    sys.task.frozen = cfg.freeze_task;
    let obj = ObjectiveConfig::new(cfg.alpha, TaskLoss::CrossEntropy)?;
    run_epochs(data, cfg, |x, labels, snr, rng| train_step(sys, x, labels, channel, snr, &obj, &opt, rng))
}

/// Reconstruction-only training; the task is never involved.
pub fn train_jscc(jscc: &mut JsccModel, data: &Dataset, channel: ChannelKind, cfg: &TrainConfig) -> Result<Vec<f64>> {
    let opt = cfg.optimizer()?;
    run_epochs(data, cfg, |x, _, snr, rng| jscc_step(jscc, x, channel, snr, &opt, rng))
}

/// System under evaluation.
#[derive(Clone, Copy, Debug)]
pub enum EvalSystem<'a> {
    Gocom(&'a GocomSystem),
    /// JSCC reconstruction fed to a frozen pretrained task head.
    JsccTask { jscc: &'a JsccModel, task: &'a TaskModel },
    /// Task on clean inputs, no channel.
    Upper(&'a TaskModel),
    /// Uniform random class guess.
    Random { classes: usize },
}

const EVAL_BATCH: usize = 256;

/// Per-seed stream for (grid point, repeat).
pub(crate) fn eval_rng(seed: u64, point: usize, repeat: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((point as u64) << 32) | repeat as u64);
    rng
}

/// Accuracy (and PSNR for JSCC) over `repeats` channel seeds at every grid
/// SNR. Channel-free systems produce one point with `test_snr = None`.
pub fn evaluate_sweep(
    system: EvalSystem<'_>,
    data: &Dataset,
    channel: ChannelKind,
    grid: &[Snr],
    repeats: usize,
    seed: u64,
) -> Result<Vec<EvalPoint>> {
    if repeats == 0 || data.is_empty() {
        return Err(Error::invalid("evaluation needs repeats >= 1 and a nonempty test set"));
    }
    let chunks: Vec<Vec<usize>> = (0..data.len()).collect::<Vec<_>>().chunks(EVAL_BATCH).map(<[usize]>::to_vec).collect();
    let mut points = Vec::new();
    match system {
        EvalSystem::Upper(task) => {
            let mut hits = 0.0;
            for idx in &chunks {
                let (x, labels) = data.batch(idx);
                let y = task.net.infer(&x, None)?;
                hits += accuracy(&y, &labels)? * labels.len() as f64;
            }
            let acc = hits / data.len() as f64;
            points.push(EvalPoint { test_snr: None, metric: Metric::Accuracy, value: acc, std: 0.0, repeats });
        }
        EvalSystem::Random { classes } => {
            let accs: Vec<f64> = (0..repeats)
                .map(|r| {
                    let mut rng = eval_rng(seed, 0, r);
                    let hits = data.labels.iter().filter(|&&y| rng.random_range(0..classes) == y).count();
                    hits as f64 / data.len() as f64
                })
                .collect();
            let (m, s) = mean_std(&accs);
            points.push(EvalPoint { test_snr: None, metric: Metric::Accuracy, value: m, std: s, repeats });
        }
        EvalSystem::Gocom(sys) => {
            for (gi, &snr) in grid.iter().enumerate() {
                let mut accs = Vec::with_capacity(repeats);
                for r in 0..repeats {
                    let mut rng = eval_rng(seed, gi, r);
                    let mut hits = 0.0;
                    for idx in &chunks {
                        let (x, labels) = data.batch(idx);
                        let mut tape = Tape::new();
                        let xv = tape.constant(x);
                        let (v, _) = forward_chain(&mut tape, &sys.goe, channel, snr, &sys.demapper, &sys.task, xv, &mut rng)?;
                        hits += accuracy(tape.value(v.y_hat), &labels)? * labels.len() as f64;
                    }
                    accs.push(hits / data.len() as f64);
                }
                let (m, s) = mean_std(&accs);
                points.push(EvalPoint { test_snr: Some(snr), metric: Metric::Accuracy, value: m, std: s, repeats });
            }
        }
        EvalSystem::JsccTask { jscc, task } => {
            for (gi, &snr) in grid.iter().enumerate() {
                let mut accs = Vec::with_capacity(repeats);
                let mut psnrs = Vec::with_capacity(repeats);
                for r in 0..repeats {
                    let mut rng = eval_rng(seed, gi, r);
                    let (mut hits, mut sq) = (0.0, 0.0);
                    for idx in &chunks {
                        let (x, labels) = data.batch(idx);
                        let mut tape = Tape::new();
                        let xv = tape.constant(x);
                        let z = jscc.encoder.forward(&mut tape, xv, snr)?;
                        let real = BatchRealization::sample(labels.len(), jscc.encoder.symbols(), channel, snr, &mut rng);
                        let z_hat = real.apply(&mut tape, z)?;
                        let x_hat = jscc.decoder.forward(&mut tape, z_hat, snr)?;
                        let y = task.forward(&mut tape, x_hat)?;
                        hits += accuracy(tape.value(y), &labels)? * labels.len() as f64;
                        let mse = tape.mse(x_hat, xv)?;
                        sq += tape.value(mse).data()[0] * labels.len() as f64;
                    }
                    accs.push(hits / data.len() as f64);
                    psnrs.push(psnr_from_mse(sq / data.len() as f64, 1.0)?);
                }
                let (m, s) = mean_std(&accs);
                points.push(EvalPoint { test_snr: Some(snr), metric: Metric::Accuracy, value: m, std: s, repeats });
                let (m, s) = mean_std(&psnrs);
                points.push(EvalPoint { test_snr: Some(snr), metric: Metric::PsnrDb, value: m, std: s, repeats });
            }
        }
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synth;
    use crate::models::{comm_pair, symbols_for_rate, ArchConfig, Rate};

    fn small_system(seed: u64, head: TaskHead) -> GocomSystem {
        let arch = ArchConfig::conv(true);
        let s = symbols_for_rate(64, Rate::new(1, 6).unwrap());
        let (goe, demapper) = comm_pair(&[1, 8, 8], s, &arch, seed).unwrap();
        let task = TaskModel::new("task", &[1, 8, 8], head, &arch, seed + 10).unwrap();
        GocomSystem { goe, demapper, task }
    }

    #[test]
    fn zero_epoch_pretraining_is_a_no_op() {
        let data = gen_synth(20, 4, 0).unwrap();
        let mut sys = small_system(0, TaskHead::Classifier { classes: 4 });
        let before = sys.task.net.params.clone();
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(pretrain_task(&mut sys.task, &data, &cfg).unwrap().is_empty());
        assert!(before.values_bit_equal(&sys.task.net.params));
    }

    #[test]
    fn frozen_task_is_never_updated() {
        let data = gen_synth(64, 4, 1).unwrap();
        let mut sys = small_system(1, TaskHead::Classifier { classes: 4 });
        let fp = sys.task.net.params.fingerprint();
        let goe_fp = sys.goe.net.params.fingerprint();
        let cfg = TrainConfig { epochs: 2, freeze_task: true, lr: 1e-3, ..TrainConfig::default() };
        train_gocom(&mut sys, &data, ChannelKind::Awgn, &cfg).unwrap();
        assert_eq!(fp, sys.task.net.params.fingerprint());
        assert_ne!(goe_fp, sys.goe.net.params.fingerprint());
    }

    #[test]
    fn upper_bound_has_no_snr_dependence() {
        let data = gen_synth(30, 3, 2).unwrap();
        let sys = small_system(2, TaskHead::Classifier { classes: 3 });
        let pts = evaluate_sweep(EvalSystem::Upper(&sys.task), &data, ChannelKind::Awgn, &[Snr::Db(0.0), Snr::Db(5.0)], 10, 0).unwrap();
        assert_eq!(pts.len(), 1);
        assert!(pts[0].test_snr.is_none());
    }

    #[test]
    fn sweep_rows_carry_repeats_and_finite_std() {
        let data = gen_synth(30, 3, 2).unwrap();
        let sys = small_system(3, TaskHead::Classifier { classes: 3 });
        let grid = [Snr::Db(0.0), Snr::Infinite];
        let pts = evaluate_sweep(EvalSystem::Gocom(&sys), &data, ChannelKind::SlowFading, &grid, 10, 4).unwrap();
        assert_eq!(pts.len(), 2);
        assert!(pts.iter().all(|p| p.repeats == 10 && p.std.is_finite() && p.std >= 0.0));
        assert_eq!(pts[1].std, 0.0, "noiseless evaluation is deterministic");
    }

    #[test]
    fn snr_policy_draws_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = SnrPolicy::Uniform { lo: -2.0, hi: 20.0 };
        for _ in 0..100 {
            match p.sample(&mut rng) {
                Snr::Db(d) => assert!((-2.0..=20.0).contains(&d)),
                Snr::Infinite => panic!(),
            }
        }
        let bad = TrainConfig { snr: SnrPolicy::Uniform { lo: 3.0, hi: 1.0 }, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
    }
}
