//! Experiment configuration: flat `[section]` / `key = value` text.
//!
//! Unknown sections and keys are rejected with their line number, and the
//! whole config is validated before any compute starts.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::channel::{ChannelKind, Snr};
use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::models::{ArchConfig, ArchKind, Rate};
use crate::rl::DqnConfig;
use crate::supervised::{SnrPolicy, TrainConfig};
use crate::tensor::OptRule;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Classify,
    Rl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SystemKind {
    Gocom,
    Jscc,
    Upper,
    Random,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Classify => "classify",
            TaskKind::Rl => "rl",
        })
    }
}

impl FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classify" => Ok(TaskKind::Classify),
            "rl" => Ok(TaskKind::Rl),
            _ => Err(Error::invalid(format!("unknown task `{s}` (classify, rl)"))),
        }
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SystemKind::Gocom => "gocom",
            SystemKind::Jscc => "jscc",
            SystemKind::Upper => "upper",
            SystemKind::Random => "random",
        })
    }
}

impl FromStr for SystemKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gocom" => Ok(SystemKind::Gocom),
            "jscc" => Ok(SystemKind::Jscc),
            "upper" => Ok(SystemKind::Upper),
            "random" => Ok(SystemKind::Random),
            _ => Err(Error::invalid(format!("unknown system `{s}` (gocom, jscc, upper, random)"))),
        }
    }
}

/// Starting point of the encoder/demapper in RL runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CommInit {
    Random,
    /// Reconstruction training on random-policy observations at the
    /// training SNR.
    Jscc,
}

impl FromStr for CommInit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(CommInit::Random),
            "jscc" => Ok(CommInit::Jscc),
            _ => Err(Error::invalid(format!("unknown comm_init `{s}` (random, jscc)"))),
        }
    }
}

impl fmt::Display for CommInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CommInit::Random => "random",
            CommInit::Jscc => "jscc",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// Generated blobs, split into train/test by count.
    Synth { train: usize, test: usize, classes: usize },
    Idx { train_images: PathBuf, train_labels: PathBuf, test_images: PathBuf, test_labels: PathBuf },
}

/// Everything one run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub system: SystemKind,
    pub channel: ChannelKind,
    pub alpha: f64,
    pub rate: Rate,
    pub train_snr: SnrPolicy,
    pub test_snr: Vec<Snr>,
    pub seed: u64,
    pub repeats: usize,
    pub out: PathBuf,
    pub data: DataSource,
    /// Generator knobs when `data` is synthetic.
    pub synth: SynthConfig,
    pub arch: ArchConfig,
    /// Supervised training (joint and JSCC).
    pub train: TrainConfig,
    /// Task pretraining epochs (no channel).
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub dqn: DqnConfig,
    /// Environment steps for the channel-free Q-network.
    pub pretrain_steps: usize,
    pub pretrain_eps_decay: usize,
    pub eval_episodes: usize,
    /// Load ξ_pre from this checkpoint instead of pretraining.
    pub task_checkpoint: Option<PathBuf>,
    /// How the RL link starts before DQN fine-tuning.
    pub comm_init: CommInit,
    pub comm_init_epochs: usize,
    pub comm_init_observations: usize,
    pub comm_init_lr: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::Classify,
            system: SystemKind::Gocom,
            channel: ChannelKind::Awgn,
            alpha: 0.1,
            rate: Rate::new(1, 6).expect("1/6"),
            train_snr: SnrPolicy::Uniform { lo: -2.0, hi: 20.0 },
            test_snr: snr_grid(-2.0, 2.0, 20.0),
            seed: 0,
            repeats: 10,
            out: PathBuf::from("runs/default"),
            data: DataSource::Synth { train: 2000, test: 500, classes: 10 },
            synth: SynthConfig::default(),
            arch: ArchConfig::conv(true),
            train: TrainConfig::default(),
            pretrain_epochs: 10,
            pretrain_lr: 1e-3,
            dqn: DqnConfig::default(),
            pretrain_steps: 200_000,
            pretrain_eps_decay: 50_000,
            eval_episodes: 100,
            task_checkpoint: None,
            comm_init: CommInit::Random,
            comm_init_epochs: 50,
            comm_init_observations: 5000,
            comm_init_lr: 1e-3,
        }
    }
}

/// `lo, lo+step, …, hi` in dB (inclusive, tolerant to rounding).
pub fn snr_grid(lo: f64, step: f64, hi: f64) -> Vec<Snr> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    (0..n).map(|i| Snr::Db(lo + step * i as f64)).collect()
}

/// `20`, `inf`, or a training range `lo:hi`.
pub fn parse_train_snr(s: &str) -> Result<SnrPolicy> {
    match s.split_once(':') {
        Some((lo, hi)) => {
            let lo: f64 = lo.trim().parse().map_err(|_| Error::invalid(format!("bad SNR `{lo}`")))?;
            let hi: f64 = hi.trim().parse().map_err(|_| Error::invalid(format!("bad SNR `{hi}`")))?;
            if !(lo <= hi) {
                return Err(Error::invalid(format!("empty SNR range {lo}:{hi}")));
            }
            Ok(SnrPolicy::Uniform { lo, hi })
        }
        None => Ok(SnrPolicy::Fixed(s.parse()?)),
    }
}

/// Comma list (`0, 10, inf`) or an inclusive range `lo:step:hi`.
pub fn parse_snr_list(s: &str) -> Result<Vec<Snr>> {
    let parts: Vec<&str> = s.split(':').map(str::trim).collect();
    let grid = if parts.len() == 3 {
        let nums: Vec<f64> = parts
            .iter()
            .map(|p| p.parse::<f64>().map_err(|_| Error::invalid(format!("bad SNR grid `{s}`"))))
            .collect::<Result<_>>()?;
        if !(nums[1] > 0.0) || nums[0] > nums[2] {
            return Err(Error::invalid(format!("bad SNR grid `{s}` (lo:step:hi with step > 0)")));
        }
        snr_grid(nums[0], nums[1], nums[2])
    } else {
        s.split(',').map(|p| p.trim().parse::<Snr>()).collect::<Result<_>>()?
    };
    if grid.is_empty() {
        return Err(Error::invalid("empty SNR grid"));
    }
    Ok(grid)
}

fn parse_bool(s: &str) -> Result<bool> {
    match s {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::invalid(format!("expected true/false, got `{s}`"))),
    }
}

fn num<T: FromStr>(s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::invalid(format!("expected a number, got `{s}`")))
}

#[derive(Default)]
struct IdxPaths {
    train_images: Option<PathBuf>,
    train_labels: Option<PathBuf>,
    test_images: Option<PathBuf>,
    test_labels: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Parse config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut section = String::new();
        let mut source = String::from("synth");
        let (mut n_train, mut n_test, mut classes) = (2000, 500, 10);
        let mut idx = IdxPaths::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or(Error::Config { line: line_no, key: line.into(), msg: "unterminated section header".into() })?;
                section = name.trim().to_string();
                if !["experiment", "data", "arch", "train", "rl"].contains(&section.as_str()) {
                    return Err(Error::Config { line: line_no, key: section, msg: "unknown section".into() });
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(Error::Config { line: line_no, key: line.into(), msg: "expected `key = value`".into() })?;
            let (key, value) = (key.trim(), value.trim());
            let full = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
            let wrap = |e: Error| Error::Config { line: line_no, key: full.clone(), msg: e.to_string() };
            let r: Result<()> = (|| {
                match full.as_str() {
                    "experiment.task" => cfg.task = value.parse()?,
                    "experiment.system" => cfg.system = value.parse()?,
                    "experiment.channel" => cfg.channel = value.parse()?,
                    "experiment.alpha" => cfg.alpha = num(value)?,
                    "experiment.rate" => cfg.rate = value.parse()?,
                    "experiment.train_snr" => cfg.train_snr = parse_train_snr(value)?,
                    "experiment.test_snr" => cfg.test_snr = parse_snr_list(value)?,
                    "experiment.seed" => cfg.seed = num(value)?,
                    "experiment.repeats" => cfg.repeats = num(value)?,
                    "experiment.out" => cfg.out = PathBuf::from(value),
                    "experiment.task_checkpoint" => cfg.task_checkpoint = Some(PathBuf::from(value)),
                    "data.source" => source = value.to_string(),
                    "data.train" => n_train = num(value)?,
                    "data.test" => n_test = num(value)?,
                    "data.classes" => classes = num(value)?,
                    "data.noise" => cfg.synth.noise = num(value)?,
                    "data.jitter" => cfg.synth.jitter = num(value)?,
                    "data.train_images" => idx.train_images = Some(value.into()),
                    "data.train_labels" => idx.train_labels = Some(value.into()),
                    "data.test_images" => idx.test_images = Some(value.into()),
                    "data.test_labels" => idx.test_labels = Some(value.into()),
                    "arch.kind" => {
                        cfg.arch.kind = match value {
                            "conv" => ArchKind::Conv,
                            "dense" => ArchKind::Dense,
                            _ => return Err(Error::invalid(format!("unknown architecture `{value}` (conv, dense)"))),
                        }
                    }
                    "arch.snr_gate" => cfg.arch.snr_gate = parse_bool(value)?,
                    "arch.hidden" => cfg.arch.hidden = num(value)?,
                    "arch.task_hidden" => cfg.arch.task_hidden = num(value)?,
                    "arch.conv1" => cfg.arch.conv1 = num(value)?,
                    "arch.conv2" => cfg.arch.conv2 = num(value)?,
                    "train.epochs" => cfg.train.epochs = num(value)?,
                    "train.lr" => cfg.train.lr = num(value)?,
                    "train.batch_size" => cfg.train.batch_size = num(value)?,
                    "train.freeze_task" => cfg.train.freeze_task = parse_bool(value)?,
                    "train.optimizer" => cfg.train.rule = parse_rule(value)?,
                    "train.pretrain_epochs" => cfg.pretrain_epochs = num(value)?,
                    "train.pretrain_lr" => cfg.pretrain_lr = num(value)?,
                    "rl.gamma" => cfg.dqn.gamma = num(value)?,
                    "rl.eps_start" => cfg.dqn.eps_start = num(value)?,
                    "rl.eps_end" => cfg.dqn.eps_end = num(value)?,
                    "rl.eps_decay_steps" => cfg.dqn.eps_decay_steps = num(value)?,
                    "rl.sync_every" => cfg.dqn.sync_every = num(value)?,
                    "rl.capacity" => cfg.dqn.capacity = num(value)?,
                    "rl.batch_size" => cfg.dqn.batch_size = num(value)?,
                    "rl.lr" => cfg.dqn.lr = num(value)?,
                    "rl.total_steps" => cfg.dqn.total_steps = num(value)?,
                    "rl.learn_start" => cfg.dqn.learn_start = num(value)?,
                    "rl.learn_every" => cfg.dqn.learn_every = num(value)?,
                    "rl.huber_delta" => cfg.dqn.huber_delta = num(value)?,
                    "rl.freeze_task" => cfg.dqn.freeze_task = parse_bool(value)?,
                    "rl.optimizer" => cfg.dqn.rule = parse_rule(value)?,
                    "rl.pretrain_steps" => cfg.pretrain_steps = num(value)?,
                    "rl.pretrain_eps_decay" => cfg.pretrain_eps_decay = num(value)?,
                    "rl.eval_episodes" => cfg.eval_episodes = num(value)?,
                    "rl.pretrain_lr" => cfg.pretrain_lr = num(value)?,
                    "rl.comm_init" => cfg.comm_init = value.parse()?,
                    "rl.comm_init_epochs" => cfg.comm_init_epochs = num(value)?,
                    "rl.comm_init_observations" => cfg.comm_init_observations = num(value)?,
                    "rl.comm_init_lr" => cfg.comm_init_lr = num(value)?,
                    _ => return Err(Error::invalid("unknown key")),
                }
                Ok(())
            })();
            r.map_err(wrap)?;
        }
        cfg.data = match source.as_str() {
            "synth" => DataSource::Synth { train: n_train, test: n_test, classes },
            "idx" => {
                let need = |p: Option<PathBuf>, k: &str| {
                    p.ok_or(Error::Config { line: 0, key: format!("data.{k}"), msg: "required when source = idx".into() })
                };
                DataSource::Idx {
                    train_images: need(idx.train_images, "train_images")?,
                    train_labels: need(idx.train_labels, "train_labels")?,
                    test_images: need(idx.test_images, "test_images")?,
                    test_labels: need(idx.test_labels, "test_labels")?,
                }
            }
            other => {
                return Err(Error::Config { line: 0, key: "data.source".into(), msg: format!("unknown source `{other}` (synth, idx)") })
            }
        };
        cfg.sync();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Push shared fields into the trainer configs.
    pub fn sync(&mut self) {
        self.train.alpha = self.alpha;
        self.train.seed = self.seed;
        self.train.snr = self.train_snr;
        self.dqn.alpha = self.alpha;
        self.dqn.channel = self.channel;
        self.dqn.seed = self.seed;
        if let SnrPolicy::Fixed(s) = self.train_snr {
            self.dqn.train_snr = s;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::Config { line: 0, key: key.into(), msg });
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("experiment.alpha", format!("{} outside [0, 1]", self.alpha));
        }
        if self.repeats == 0 {
            return bad("experiment.repeats", "must be >= 1".into());
        }
        if self.test_snr.is_empty() {
            return bad("experiment.test_snr", "empty grid".into());
        }
        if self.train.epochs == 0 {
            return bad("train.epochs", "must be >= 1".into());
        }
        if self.train.batch_size == 0 {
            return bad("train.batch_size", "must be >= 1".into());
        }
        if !(self.train.lr > 0.0) || !(self.pretrain_lr > 0.0) || !(self.dqn.lr > 0.0) {
            return bad("lr", "learning rates must be positive".into());
        }
        if self.arch.hidden == 0 || self.arch.task_hidden == 0 || self.arch.conv1 == 0 || self.arch.conv2 == 0 {
            return bad("arch", "layer widths must be >= 1".into());
        }
        if !(self.synth.noise >= 0.0) || !(0.0..=1.0).contains(&self.synth.jitter) {
            return bad("data", format!("need noise >= 0 and jitter in [0, 1] (got {} / {})", self.synth.noise, self.synth.jitter));
        }
        if let DataSource::Synth { train, test, classes } = self.data {
            if classes < 2 || train < classes || test == 0 {
                return bad("data", format!("need classes >= 2, train >= classes, test >= 1 (got {train}/{test}/{classes})"));
            }
        }
        if self.task == TaskKind::Rl {
            if self.system == SystemKind::Jscc {
                return bad("experiment.system", "jscc is only defined for task = classify".into());
            }
            if matches!(self.train_snr, SnrPolicy::Uniform { .. }) && self.system == SystemKind::Gocom {
                return bad("experiment.train_snr", "RL training uses a fixed SNR".into());
            }
            if self.eval_episodes == 0 {
                return bad("rl.eval_episodes", "must be >= 1".into());
            }
            if self.comm_init == CommInit::Jscc && (self.comm_init_epochs == 0 || self.comm_init_observations == 0) {
                return bad("rl.comm_init", "jscc initialization needs epochs and observations >= 1".into());
            }
            if !(self.comm_init_lr > 0.0) {
                return bad("rl.comm_init_lr", "must be positive".into());
            }
            self.dqn.validate().map_err(|e| Error::Config { line: 0, key: "rl".into(), msg: e.to_string() })?;
        }
        Ok(())
    }

    /// Stable identifier derived from the run's defining fields.
    pub fn run_id(&self) -> String {
        format!(
            "{}-{}-{}-a{}-t{}-seed{}",
            self.task,
            self.system,
            self.channel,
            self.alpha,
            self.train_snr.label(),
            self.seed
        )
    }
}

fn parse_rule(s: &str) -> Result<OptRule> {
    match s {
        "adam" => Ok(OptRule::adam()),
        "sgd" => Ok(OptRule::Sgd),
        _ => Err(Error::invalid(format!("unknown optimizer `{s}` (adam, sgd)"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_overrides() {
        let cfg = ExperimentConfig::parse(
            "# demo\n[experiment]\ntask = rl\nsystem = gocom\nchannel = rayleigh\nalpha = 0\ntrain_snr = 20\n\
             test_snr = 0, 10, inf\n[rl]\ntotal_steps = 100\n[arch]\nkind = dense\nsnr_gate = false\n",
        )
        .unwrap();
        assert_eq!(cfg.task, TaskKind::Rl);
        assert_eq!(cfg.channel, ChannelKind::SlowFading);
        assert_eq!(cfg.test_snr, vec![Snr::Db(0.0), Snr::Db(10.0), Snr::Infinite]);
        assert_eq!(cfg.dqn.total_steps, 100);
        assert_eq!(cfg.dqn.train_snr, Snr::Db(20.0));
        assert_eq!(cfg.arch.kind, ArchKind::Dense);
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = ExperimentConfig::parse("[experiment]\n\nalpah = 0.1\n").unwrap_err();
        match err {
            Error::Config { line, key, .. } => assert_eq!((line, key.as_str()), (3, "experiment.alpah")),
            other => panic!("{other}"),
        }
        assert!(matches!(ExperimentConfig::parse("[nope]\n"), Err(Error::Config { line: 1, .. })));
        assert!(matches!(ExperimentConfig::parse("[train]\nepochs = x\n"), Err(Error::Config { line: 2, .. })));
        assert!(ExperimentConfig::parse("[experiment]\nalpha = 1.5\n").is_err());
    }

    #[test]
    fn grid_arithmetic() {
        assert_eq!(parse_snr_list("-2:2:20").unwrap().len(), 12);
        assert_eq!(parse_train_snr("-2:20").unwrap(), SnrPolicy::Uniform { lo: -2.0, hi: 20.0 });
        assert_eq!(parse_train_snr("inf").unwrap(), SnrPolicy::Fixed(Snr::Infinite));
        assert!(parse_snr_list("0:0:5").is_err());
    }
}
