//! Command-line front end: `gocom <pretrain|train|eval|sweep|baseline>`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gocom::channel::{ChannelKind, Snr};
use gocom::exp::config::{ExperimentConfig, SystemKind, TaskKind};
use gocom::exp::{run, sweep, Stage, SweepAxis};
use gocom::supervised::SnrPolicy;

#[derive(Parser)]
#[command(name = "gocom", version, about = "Goal-oriented communication experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the task model without a channel and record the upper bound.
    Pretrain(Common),
    /// Pretrain, train the configured system and evaluate it.
    Train(Common),
    /// Evaluate checkpoints left in the output directory by `train`.
    Eval(Common),
    /// One training run per value of an axis, merged into one metrics.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = ["alpha", "snr"])]
        axis: String,
        /// Comma-separated values, e.g. `0.01,0.1` or `-2,0,2`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        values: Vec<String>,
    },
    /// Upper-bound and random baselines.
    Baseline(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fixed training SNR in dB (or `inf`).
    #[arg(long, allow_hyphen_values = true)]
    snr_db: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_parser = ["awgn", "rayleigh"])]
    channel: Option<String>,
    #[arg(long, value_parser = ["classify", "rl"])]
    task: Option<String>,
    #[arg(long, value_parser = ["gocom", "jscc", "upper", "random"])]
    system: Option<String>,
    /// Print the run log to stderr as well.
    #[arg(long, short)]
    verbose: bool,
}

impl Common {
    fn load(&self) -> gocom::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(s) = &self.snr_db {
            cfg.train_snr = SnrPolicy::Fixed(s.parse::<Snr>()?);
        }
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        if let Some(c) = &self.channel {
            cfg.channel = c.parse::<ChannelKind>()?;
        }
        if let Some(t) = &self.task {
            cfg.task = t.parse::<TaskKind>()?;
        }
        if let Some(s) = &self.system {
            cfg.system = s.parse::<SystemKind>()?;
        }
        cfg.sync();
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Pretrain(c) => c.load().and_then(|cfg| run(&cfg, Stage::Pretrain, c.verbose)),
        Cmd::Train(c) => c.load().and_then(|cfg| run(&cfg, Stage::Train, c.verbose)),
        Cmd::Eval(c) => c.load().and_then(|cfg| run(&cfg, Stage::Eval, c.verbose)),
        Cmd::Baseline(c) => c.load().and_then(|cfg| run(&cfg, Stage::Baseline, c.verbose)),
        Cmd::Sweep { common, axis, values } => common
            .load()
            .and_then(|cfg| Ok((cfg, axis.parse::<SweepAxis>()?)))
            .and_then(|(cfg, axis)| sweep(&cfg, axis, values, common.verbose)),
    };
    match result {
        Ok(rows) => {
            println!("{} metric rows written", rows.len());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
