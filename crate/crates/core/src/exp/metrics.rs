//! `metrics.csv`: one row per (grid point, metric).

use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::channel::Snr;
use crate::error::{Error, Result};

pub const METRICS_HEADER: [&str; 11] = [
    "run_id",
    "task",
    "system",
    "channel",
    "alpha",
    "train_snr",
    "test_snr_db",
    "metric",
    "value",
    "std",
    "repeats",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Accuracy,
    PsnrDb,
    RewardMean,
    RewardStd,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Accuracy => "accuracy",
            Metric::PsnrDb => "psnr_db",
            Metric::RewardMean => "reward_mean",
            Metric::RewardStd => "reward_std",
        })
    }
}

/// One evaluated metric at one test SNR, before run metadata is attached.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalPoint {
    /// `None` for channel-free systems.
    pub test_snr: Option<Snr>,
    pub metric: Metric,
    pub value: f64,
    pub std: f64,
    pub repeats: usize,
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    if xs.iter().all(|&x| x == xs[0]) {
        return (xs[0], 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub task: String,
    pub system: String,
    pub channel: String,
    pub alpha: f64,
    pub train_snr: String,
    /// `inf` for the noiseless sentinel.
    pub test_snr_db: String,
    pub metric: Metric,
    pub value: f64,
    pub std: f64,
    pub repeats: usize,
}

/// Run-level fields shared by every row of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunMeta {
    pub run_id: String,
    pub task: String,
    pub system: String,
    pub channel: String,
    pub alpha: f64,
    pub train_snr: String,
}

impl RunMeta {
    /// Expand points into rows; channel-free points are repeated over `grid`.
    pub fn rows(&self, points: &[EvalPoint], grid: &[Snr]) -> Vec<MetricsRow> {
        let mut rows = Vec::new();
        for p in points {
            let snrs: Vec<Snr> = match p.test_snr {
                Some(s) => vec![s],
                None => grid.to_vec(),
            };
            for s in snrs {
                rows.push(MetricsRow {
                    run_id: self.run_id.clone(),
                    task: self.task.clone(),
                    system: self.system.clone(),
                    channel: self.channel.clone(),
                    alpha: self.alpha,
                    train_snr: self.train_snr.clone(),
                    test_snr_db: s.to_string(),
                    metric: p.metric,
                    value: p.value,
                    std: p.std,
                    repeats: p.repeats,
                });
            }
        }
        rows
    }
}

impl MetricsRow {
    fn record(&self) -> [String; 11] {
        [
            self.run_id.clone(),
            self.task.clone(),
            self.system.clone(),
            self.channel.clone(),
            self.alpha.to_string(),
            self.train_snr.clone(),
            self.test_snr_db.clone(),
            self.metric.to_string(),
            self.value.to_string(),
            self.std.to_string(),
            self.repeats.to_string(),
        ]
    }

    /// Numeric test SNR; `inf` sorts last.
    pub fn test_snr_value(&self) -> f64 {
        self.test_snr_db.parse::<f64>().unwrap_or(f64::INFINITY)
    }
}

fn parse_metric(s: &str) -> Result<Metric> {
    match s {
        "accuracy" => Ok(Metric::Accuracy),
        "psnr_db" => Ok(Metric::PsnrDb),
        "reward_mean" => Ok(Metric::RewardMean),
        "reward_std" => Ok(Metric::RewardStd),
        other => Err(Error::invalid(format!("unknown metric `{other}`"))),
    }
}

pub fn write_metrics<W: Write>(out: W, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush().map_err(|e| Error::io("metrics.csv", e))?;
    Ok(())
}

pub fn write_metrics_file(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_metrics(std::io::BufWriter::new(f), rows)
}

pub fn read_metrics_file(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_HEADER {
        return Err(Error::invalid(format!("{}: unexpected header {header:?}", path.display())));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| Error::invalid(format!("bad number `{s}`")));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(MetricsRow {
            run_id: rec[0].to_string(),
            task: rec[1].to_string(),
            system: rec[2].to_string(),
            channel: rec[3].to_string(),
            alpha: num(&rec[4])?,
            train_snr: rec[5].to_string(),
            test_snr_db: rec[6].to_string(),
            metric: parse_metric(&rec[7])?,
            value: num(&rec[8])?,
            std: num(&rec[9])?,
            repeats: rec[10].parse().map_err(|_| Error::invalid(format!("bad repeats `{}`", &rec[10])))?,
        });
    }
    Ok(rows)
}

/// Stable order used for merged sweeps.
pub fn sort_rows(rows: &mut [MetricsRow]) {
    rows.sort_by(|a, b| {
        a.system
            .cmp(&b.system)
            .then(a.alpha.total_cmp(&b.alpha))
            .then(a.test_snr_value().total_cmp(&b.test_snr_value()))
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_with_quoting() {
        let meta = RunMeta {
            run_id: "a,b".into(),
            task: "classify".into(),
            system: "gocom".into(),
            channel: "awgn".into(),
            alpha: 0.1,
            train_snr: "-2:20".into(),
        };
        let pts = [
            EvalPoint { test_snr: Some(Snr::Db(0.0)), metric: Metric::Accuracy, value: 0.5, std: 0.01, repeats: 10 },
            EvalPoint { test_snr: None, metric: Metric::Accuracy, value: 0.9, std: 0.0, repeats: 10 },
        ];
        let rows = meta.rows(&pts, &[Snr::Db(0.0), Snr::Infinite]);
        assert_eq!(rows.len(), 3);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics_file(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("run_id,task,system,"));
        assert!(text.contains("\"a,b\""));
        assert_eq!(read_metrics_file(&p).unwrap(), rows);
    }

    #[test]
    fn mean_std_population() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}
