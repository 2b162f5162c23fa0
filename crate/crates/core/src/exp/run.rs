//! The pretrain → train → evaluate pipeline behind every subcommand.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::checkpoint::{load_checkpoint, restore_into, save_checkpoint};
use super::config::{CommInit, DataSource, ExperimentConfig, SystemKind, TaskKind};
use super::metrics::{sort_rows, write_metrics_file, EvalPoint, Metric, MetricsRow, RunMeta};
use crate::channel::Snr;
use crate::data::{gen_synth_with, load_idx, CatchEnv, Dataset, Environment, Split};
use crate::error::{Error, Result};
use crate::models::{comm_pair, symbols_for_rate, DemapperModel, GoeModel, JsccModel, TaskHead, TaskModel};
use crate::rl::{collect_observations, eval_policy, eval_random, train_rl, DqnConfig, QSystem};
use crate::supervised::{evaluate_sweep, pretrain_task, train_gocom, train_jscc, EvalSystem, GocomSystem, SnrPolicy, TrainConfig};
use crate::tensor::ParamSet;

/// Which part of the pipeline to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// Task pretraining only; writes the task checkpoint and upper-bound rows.
    Pretrain,
    /// Full pipeline for the configured system.
    Train,
    /// Evaluate checkpoints from a previous `Train` in the same output dir.
    Eval,
    /// Upper-bound and random baselines.
    Baseline,
}

/// Plain-text run log with elapsed-time stamps. Excluded from determinism.
pub struct RunLog {
    start: Instant,
    file: Option<fs::File>,
    echo: bool,
}

impl RunLog {
    pub fn open(path: &Path, echo: bool) -> Result<Self> {
        let file = fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self { start: Instant::now(), file: Some(file), echo })
    }

    pub fn silent() -> Self {
        Self { start: Instant::now(), file: None, echo: false }
    }

    pub fn line(&mut self, msg: impl AsRef<str>) {
        let text = format!("[{:>8.1}s] {}", self.start.elapsed().as_secs_f64(), msg.as_ref());
        if let Some(f) = &mut self.file {
            let _ = writeln!(f, "{text}");
        }
        if self.echo {
            eprintln!("{text}");
        }
    }
}

const TASK_SEED_OFFSET: u64 = 10;
const COMM_SEED_OFFSET: u64 = 1;
const EVAL_SEED_OFFSET: u64 = 1_000;

fn ckpt_dir(out: &Path) -> PathBuf {
    out.join("checkpoints")
}

fn save(out: &Path, name: &str, p: &ParamSet, log: &mut RunLog) -> Result<()> {
    let dir = ckpt_dir(out);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join(format!("{name}.ckpt"));
    save_checkpoint(&path, p)?;
    log.line(format!("saved {}", path.display()));
    Ok(())
}

fn restore(out: &Path, name: &str, into: &mut ParamSet) -> Result<()> {
    let p = load_checkpoint(&ckpt_dir(out).join(format!("{name}.ckpt")))?;
    restore_into(into, &p)
}

/// Train/test split for the classification task.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.data {
        DataSource::Synth { train, test, classes } => {
            let all = gen_synth_with(train + test, *classes, cfg.seed, &cfg.synth)?;
            Ok((all.subset(0, *train, Split::Train), all.subset(*train, train + test, Split::Test)))
        }
        DataSource::Idx { train_images, train_labels, test_images, test_labels } => {
            let train = load_idx(train_images, train_labels)?;
            let mut test = load_idx(test_images, test_labels)?;
            test.split = Split::Test;
            test.classes = test.classes.max(train.classes);
            Ok((train, test))
        }
    }
}

fn meta(cfg: &ExperimentConfig, system: SystemKind) -> RunMeta {
    let mut c = cfg.clone();
    c.system = system;
    let train_snr = match system {
        SystemKind::Upper | SystemKind::Random => "none".to_string(),
        _ => cfg.train_snr.label(),
    };
    RunMeta {
        run_id: c.run_id(),
        task: cfg.task.to_string(),
        system: system.to_string(),
        channel: cfg.channel.to_string(),
        alpha: cfg.alpha,
        train_snr,
    }
}

fn pretrain_config(cfg: &ExperimentConfig) -> TrainConfig {
    TrainConfig { epochs: cfg.pretrain_epochs, lr: cfg.pretrain_lr, seed: cfg.seed.wrapping_add(TASK_SEED_OFFSET), ..cfg.train }
}

/// Task head, either loaded from `task_checkpoint` or pretrained clean.
fn classifier_pre(cfg: &ExperimentConfig, train: &Dataset, log: &mut RunLog) -> Result<TaskModel> {
    let head = TaskHead::Classifier { classes: train.classes };
    let mut task = TaskModel::new("task", train.sample_shape(), head, &cfg.arch, cfg.seed.wrapping_add(TASK_SEED_OFFSET))?;
    if let Some(path) = &cfg.task_checkpoint {
        restore_into(&mut task.net.params, &load_checkpoint(path)?)?;
        log.line(format!("task head loaded from {}", path.display()));
    } else {
        let trace = pretrain_task(&mut task, train, &pretrain_config(cfg))?;
        log.line(format!("task pretraining: {} epochs, final loss {:?}", trace.len(), trace.last()));
    }
    Ok(task)
}

fn q_pre(cfg: &ExperimentConfig, env: &mut CatchEnv, log: &mut RunLog) -> Result<TaskModel> {
    let head = TaskHead::QNetwork { actions: env.actions() };
    let qnet = TaskModel::new("task", &env.observation_shape(), head, &cfg.arch, cfg.seed.wrapping_add(TASK_SEED_OFFSET))?;
    if let Some(path) = &cfg.task_checkpoint {
        let mut qnet = qnet;
        restore_into(&mut qnet.net.params, &load_checkpoint(path)?)?;
        log.line(format!("Q-network loaded from {}", path.display()));
        return Ok(qnet);
    }
    let run = train_rl(env, QSystem::direct(qnet), &pretrain_dqn(cfg))?;
    let tail: Vec<f64> = run.episode_rewards.iter().rev().take(20).copied().collect();
    log.line(format!("Q-network pretraining: {} episodes, last rewards {tail:?}", run.episode_rewards.len()));
    Ok(run.online.qnet)
}

/// Encoder/demapper trained by reconstruction on random-policy observations
/// at the DQN training SNR, as the starting point for fine-tuning.
fn jscc_link(
    cfg: &ExperimentConfig,
    env: &mut CatchEnv,
    goe: GoeModel,
    demapper: DemapperModel,
    log: &mut RunLog,
) -> Result<(GoeModel, DemapperModel)> {
    let comm_seed = cfg.seed.wrapping_add(COMM_SEED_OFFSET);
    let data = collect_observations(env, cfg.comm_init_observations, comm_seed)?;
    let mut jscc = JsccModel { encoder: goe, decoder: demapper };
    let tc = TrainConfig {
        epochs: cfg.comm_init_epochs,
        lr: cfg.comm_init_lr,
        snr: SnrPolicy::Fixed(cfg.dqn.train_snr),
        seed: comm_seed,
        ..cfg.train
    };
    let trace = train_jscc(&mut jscc, &data, cfg.channel, &tc)?;
    log.line(format!("link JSCC initialization: {} observations, {} epochs, final mse {:?}", data.len(), trace.len(), trace.last()));
    Ok((jscc.encoder, jscc.decoder))
}

/// DQN settings for the channel-free Q-network.
pub fn pretrain_dqn(cfg: &ExperimentConfig) -> DqnConfig {
    DqnConfig {
        total_steps: cfg.pretrain_steps,
        eps_start: 1.0,
        eps_decay_steps: cfg.pretrain_eps_decay,
        lr: cfg.pretrain_lr,
        capacity: cfg.dqn.capacity.min(cfg.pretrain_steps.max(cfg.dqn.batch_size)),
        alpha: 0.0,
        freeze_task: false,
        seed: cfg.seed.wrapping_add(TASK_SEED_OFFSET),
        ..cfg.dqn
    }
}

fn reward_points(test_snr: Option<Snr>, (mean, std): (f64, f64), episodes: usize) -> [EvalPoint; 2] {
    [
        EvalPoint { test_snr, metric: Metric::RewardMean, value: mean, std, repeats: episodes },
        EvalPoint { test_snr, metric: Metric::RewardStd, value: std, std: 0.0, repeats: episodes },
    ]
}

fn classify(cfg: &ExperimentConfig, stage: Stage, log: &mut RunLog) -> Result<Vec<MetricsRow>> {
    let (train, test) = load_data(cfg)?;
    log.line(format!("data: {} train / {} test, shape {:?}, {} classes", train.len(), test.len(), train.sample_shape(), train.classes));
    let shape = train.sample_shape().to_vec();
    let symbols = symbols_for_rate(train.sample_dims(), cfg.rate);
    let grid = &cfg.test_snr;
    let eval_seed = cfg.seed.wrapping_add(EVAL_SEED_OFFSET);
    let comm_seed = cfg.seed.wrapping_add(COMM_SEED_OFFSET);
    let mut rows = Vec::new();

    let upper_rows = |task: &TaskModel, rows: &mut Vec<MetricsRow>| -> Result<()> {
        let pts = evaluate_sweep(EvalSystem::Upper(task), &test, cfg.channel, grid, cfg.repeats, eval_seed)?;
        rows.extend(meta(cfg, SystemKind::Upper).rows(&pts, grid));
        Ok(())
    };
    let random_rows = |rows: &mut Vec<MetricsRow>| -> Result<()> {
        let pts = evaluate_sweep(EvalSystem::Random { classes: test.classes }, &test, cfg.channel, grid, cfg.repeats, eval_seed)?;
        rows.extend(meta(cfg, SystemKind::Random).rows(&pts, grid));
        Ok(())
    };

    match (stage, cfg.system) {
        (Stage::Baseline, _) => {
            let task = classifier_pre(cfg, &train, log)?;
            save(&cfg.out, "task", &task.net.params, log)?;
            upper_rows(&task, &mut rows)?;
            random_rows(&mut rows)?;
        }
        (Stage::Pretrain, _) | (Stage::Train, SystemKind::Upper) => {
            let task = classifier_pre(cfg, &train, log)?;
            save(&cfg.out, "task", &task.net.params, log)?;
            upper_rows(&task, &mut rows)?;
        }
        (_, SystemKind::Random) => random_rows(&mut rows)?,
        (Stage::Eval, SystemKind::Upper) => {
            let mut task = TaskModel::new("task", &shape, TaskHead::Classifier { classes: train.classes }, &cfg.arch, 0)?;
            restore(&cfg.out, "task", &mut task.net.params)?;
            upper_rows(&task, &mut rows)?;
        }
        (stage, SystemKind::Gocom) => {
            let (goe, demapper) = comm_pair(&shape, symbols, &cfg.arch, comm_seed)?;
            let mut sys = if stage == Stage::Eval {
                let task = TaskModel::new("task", &shape, TaskHead::Classifier { classes: train.classes }, &cfg.arch, 0)?;
                let mut sys = GocomSystem { goe, demapper, task };
                restore(&cfg.out, "enc", &mut sys.goe.net.params)?;
                restore(&cfg.out, "dec", &mut sys.demapper.net.params)?;
                restore(&cfg.out, "task", &mut sys.task.net.params)?;
                sys
            } else {
                let task = classifier_pre(cfg, &train, log)?;
                GocomSystem { goe, demapper, task }
            };
            if stage == Stage::Train {
                let trace = train_gocom(&mut sys, &train, cfg.channel, &cfg.train)?;
                log.line(format!("joint training: {} epochs, objective {trace:?}", trace.len()));
                save(&cfg.out, "enc", &sys.goe.net.params, log)?;
                save(&cfg.out, "dec", &sys.demapper.net.params, log)?;
                save(&cfg.out, "task", &sys.task.net.params, log)?;
            }
            let pts = evaluate_sweep(EvalSystem::Gocom(&sys), &test, cfg.channel, grid, cfg.repeats, eval_seed)?;
            rows.extend(meta(cfg, SystemKind::Gocom).rows(&pts, grid));
        }
        (stage, SystemKind::Jscc) => {
            let mut jscc = JsccModel::new(&shape, symbols, &cfg.arch, comm_seed)?;
            let mut task = if stage == Stage::Eval {
                let mut t = TaskModel::new("task", &shape, TaskHead::Classifier { classes: train.classes }, &cfg.arch, 0)?;
                restore(&cfg.out, "enc", &mut jscc.encoder.net.params)?;
                restore(&cfg.out, "dec", &mut jscc.decoder.net.params)?;
                restore(&cfg.out, "task", &mut t.net.params)?;
                t
            } else {
                classifier_pre(cfg, &train, log)?
            };
            task.frozen = true;
            if stage == Stage::Train {
                let trace = train_jscc(&mut jscc, &train, cfg.channel, &cfg.train)?;
                log.line(format!("JSCC training: {} epochs, mse {trace:?}", trace.len()));
                save(&cfg.out, "enc", &jscc.encoder.net.params, log)?;
                save(&cfg.out, "dec", &jscc.decoder.net.params, log)?;
                save(&cfg.out, "task", &task.net.params, log)?;
            }
            let pts = evaluate_sweep(EvalSystem::JsccTask { jscc: &jscc, task: &task }, &test, cfg.channel, grid, cfg.repeats, eval_seed)?;
            rows.extend(meta(cfg, SystemKind::Jscc).rows(&pts, grid));
        }
    }
    Ok(rows)
}

fn reinforce(cfg: &ExperimentConfig, stage: Stage, log: &mut RunLog) -> Result<Vec<MetricsRow>> {
    let mut env = CatchEnv::new();
    let shape = env.observation_shape();
    let dims: usize = shape.iter().product();
    let symbols = symbols_for_rate(dims, cfg.rate);
    let grid = &cfg.test_snr;
    let eval_seed = cfg.seed.wrapping_add(EVAL_SEED_OFFSET);
    let episodes = cfg.eval_episodes;
    let head = TaskHead::QNetwork { actions: env.actions() };
    let mut rows = Vec::new();
    let eval_env = CatchEnv::new();

    let upper_rows = |qnet: &TaskModel, rows: &mut Vec<MetricsRow>| -> Result<()> {
        let sys = QSystem::direct(qnet.clone());
        let r = eval_policy(&sys, &eval_env, cfg.channel, Snr::Infinite, episodes, eval_seed)?;
        rows.extend(meta(cfg, SystemKind::Upper).rows(&reward_points(None, r, episodes), grid));
        Ok(())
    };
    let random_rows = |rows: &mut Vec<MetricsRow>| -> Result<()> {
        let r = eval_random(&eval_env, episodes, eval_seed)?;
        rows.extend(meta(cfg, SystemKind::Random).rows(&reward_points(None, r, episodes), grid));
        Ok(())
    };

    match (stage, cfg.system) {
        (Stage::Baseline, _) => {
            let qnet = q_pre(cfg, &mut env, log)?;
            save(&cfg.out, "task", &qnet.net.params, log)?;
            upper_rows(&qnet, &mut rows)?;
            random_rows(&mut rows)?;
        }
        (Stage::Pretrain, _) | (Stage::Train, SystemKind::Upper) => {
            let qnet = q_pre(cfg, &mut env, log)?;
            save(&cfg.out, "task", &qnet.net.params, log)?;
            upper_rows(&qnet, &mut rows)?;
        }
        (_, SystemKind::Random) => random_rows(&mut rows)?,
        (Stage::Eval, SystemKind::Upper) => {
            let mut qnet = TaskModel::new("task", &shape, head, &cfg.arch, 0)?;
            restore(&cfg.out, "task", &mut qnet.net.params)?;
            upper_rows(&qnet, &mut rows)?;
        }
        (stage, SystemKind::Gocom) => {
            let (goe, demapper) = comm_pair(&shape, symbols, &cfg.arch, cfg.seed.wrapping_add(COMM_SEED_OFFSET))?;
            let sys = if stage == Stage::Eval {
                let mut sys = QSystem::with_link(goe, demapper, TaskModel::new("task", &shape, head, &cfg.arch, 0)?);
                let link = sys.link.as_mut().expect("linked system");
                restore(&cfg.out, "enc", &mut link.goe.net.params)?;
                restore(&cfg.out, "dec", &mut link.demapper.net.params)?;
                restore(&cfg.out, "task", &mut sys.qnet.net.params)?;
                sys
            } else {
                let qnet = q_pre(cfg, &mut env, log)?;
                let (goe, demapper) = match cfg.comm_init {
                    CommInit::Random => (goe, demapper),
                    CommInit::Jscc => jscc_link(cfg, &mut env, goe, demapper, log)?,
                };
                let run = train_rl(&mut env, QSystem::with_link(goe, demapper, qnet), &cfg.dqn)?;
                let tail: Vec<f64> = run.episode_rewards.iter().rev().take(20).copied().collect();
                log.line(format!("DQN training: {} episodes, {} syncs, last rewards {tail:?}", run.episode_rewards.len(), run.syncs));
                let sys = run.online;
                let link = sys.link.as_ref().expect("linked system");
                save(&cfg.out, "enc", &link.goe.net.params, log)?;
                save(&cfg.out, "dec", &link.demapper.net.params, log)?;
                save(&cfg.out, "task", &sys.qnet.net.params, log)?;
                sys
            };
            for (i, &snr) in grid.iter().enumerate() {
                let r = eval_policy(&sys, &eval_env, cfg.channel, snr, episodes, eval_seed.wrapping_add(i as u64))?;
                log.line(format!("eval {snr} dB: {:.3} ± {:.3}", r.0, r.1));
                rows.extend(meta(cfg, SystemKind::Gocom).rows(&reward_points(Some(snr), r, episodes), grid));
            }
        }
        (_, SystemKind::Jscc) => return Err(Error::invalid("jscc is only defined for task = classify")),
    }
    Ok(rows)
}

/// Execute one run and write `metrics.csv`, checkpoints and `run.log` into
/// `cfg.out`. Returns the emitted rows.
pub fn run(cfg: &ExperimentConfig, stage: Stage, echo: bool) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let mut log = RunLog::open(&cfg.out.join("run.log"), echo)?;
    log.line(format!("run {} stage {stage:?}", cfg.run_id()));
    let rows = match cfg.task {
        TaskKind::Classify => classify(cfg, stage, &mut log)?,
        TaskKind::Rl => reinforce(cfg, stage, &mut log)?,
    };
    write_metrics_file(&cfg.out.join("metrics.csv"), &rows)?;
    log.line(format!("wrote {} rows", rows.len()));
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Alpha,
    /// Each value is both the (fixed) training SNR and the test SNR.
    Snr,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepAxis::Alpha),
            "snr" => Ok(SweepAxis::Snr),
            _ => Err(Error::invalid(format!("unknown sweep axis `{s}` (alpha, snr)"))),
        }
    }
}

/// One run per value in `out/<axis>_<value>/`, merged into `out/metrics.csv`
/// sorted by (system, alpha, test SNR). On failure the rows of completed
/// runs are still written before the error is returned.
pub fn sweep(base: &ExperimentConfig, axis: SweepAxis, values: &[String], echo: bool) -> Result<Vec<MetricsRow>> {
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one value"));
    }
    let mut cfgs = Vec::with_capacity(values.len());
    for v in values {
        let mut c = base.clone();
        match axis {
            SweepAxis::Alpha => c.alpha = v.parse().map_err(|_| Error::invalid(format!("bad alpha `{v}`")))?,
            SweepAxis::Snr => {
                let snr: Snr = v.parse()?;
                c.train_snr = crate::supervised::SnrPolicy::Fixed(snr);
                c.test_snr = vec![snr];
            }
        }
        c.out = base.out.join(format!("{}_{v}", if axis == SweepAxis::Alpha { "alpha" } else { "snr" }));
        c.sync();
        c.validate()?;
        cfgs.push(c);
    }
    fs::create_dir_all(&base.out).map_err(|e| Error::io(&base.out, e))?;
    let mut merged = Vec::new();
    let mut failure = None;
    for c in &cfgs {
        match run(c, Stage::Train, echo) {
            Ok(rows) => merged.extend(rows),
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    sort_rows(&mut merged);
    write_metrics_file(&base.out.join("metrics.csv"), &merged)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(merged),
    }
}
