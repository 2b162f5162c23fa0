//! Python bindings: channel and objective helpers, the Catch environment,
//! encoder/demapper links, checkpoints, metrics files and full experiment
//! runs. Tensors cross the boundary as flat lists of floats plus a shape.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gocom::channel::{self, ChannelConfig, ChannelKind, ComplexBlock, Snr};
use gocom::data::{self, Environment};
use gocom::exp::{self, ExperimentConfig, MetricsRow, Stage};
use gocom::models::{self, ArchConfig, DemapperModel, GoeModel, Rate};
use gocom::objective;
use gocom::tensor::{ParamSet, Tensor};

/// Parameters as `{name: (shape, values)}`.
type ParamDict = BTreeMap<String, (Vec<usize>, Vec<f64>)>;

fn err(e: gocom::Error) -> PyErr {
    match e {
        gocom::Error::Io { .. } | gocom::Error::Csv(_) | gocom::Error::Checkpoint(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn snr_of(db: Option<f64>) -> Snr {
    db.map_or(Snr::Infinite, Snr::Db)
}

fn tensor(shape: Vec<usize>, data: Vec<f64>) -> PyResult<Tensor> {
    Tensor::new(shape, data).map_err(err)
}

/// Noise power `10^(-snr_db/10)` for unit signal power.
#[pyfunction]
fn snr_to_noise_power(snr_db: f64) -> f64 {
    channel::snr_to_noise_power(snr_db)
}

/// Complex symbols needed to send `dims` reals at rate `num/den`.
#[pyfunction]
fn symbols_for_rate(dims: usize, num: u32, den: u32) -> PyResult<usize> {
    Ok(models::symbols_for_rate(dims, Rate::new(num, den).map_err(err)?))
}

/// Scale interleaved (re, im) reals to unit average symbol power.
#[pyfunction]
fn normalize_power(raw: Vec<f64>) -> PyResult<Vec<f64>> {
    let s = raw.len() / 2;
    Ok(channel::normalize_power(&raw, s).map_err(err)?.into_data())
}

/// Send one block through the channel and equalize; `snr_db=None` is noiseless.
#[pyfunction]
#[pyo3(signature = (z, channel = "awgn", snr_db = None, seed = 0))]
fn transmit(z: Vec<f64>, channel: &str, snr_db: Option<f64>, seed: u64) -> PyResult<Vec<f64>> {
    let kind: ChannelKind = channel.parse().map_err(err)?;
    let block = ComplexBlock::new(z).map_err(err)?;
    let cfg = ChannelConfig::new(kind, snr_of(snr_db), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(channel::transmit(&block, &cfg, &mut rng).0.into_data())
}

#[pyfunction]
fn combined_loss(l_task: f64, l_comm: f64, alpha: f64) -> PyResult<f64> {
    objective::combined_loss(l_task, l_comm, alpha).map_err(err)
}

/// Reward blended with the reconstruction penalty (maximization form).
#[pyfunction]
fn modified_reward(reward: f64, x: Vec<f64>, w: Vec<f64>, alpha: f64) -> PyResult<f64> {
    let (n, m) = (x.len(), w.len());
    objective::modified_reward(reward, &tensor(vec![n], x)?, &tensor(vec![m], w)?, alpha).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (x, x_hat, max_val = 1.0))]
fn psnr(x: Vec<f64>, x_hat: Vec<f64>, max_val: f64) -> PyResult<f64> {
    let (n, m) = (x.len(), x_hat.len());
    objective::psnr(&tensor(vec![n], x)?, &tensor(vec![m], x_hat)?, max_val).map_err(err)
}

#[pyfunction]
fn discounted_return(rewards: Vec<f64>, gamma: f64) -> PyResult<f64> {
    objective::discounted_return(&rewards, gamma).map_err(err)
}

/// Synthetic blob images: `(pixels, shape, labels)`.
#[pyfunction]
fn gen_synth(n: usize, classes: usize, seed: u64) -> PyResult<(Vec<f64>, Vec<usize>, Vec<usize>)> {
    let ds = data::gen_synth(n, classes, seed).map_err(err)?;
    Ok((ds.inputs.data().to_vec(), ds.inputs.shape().to_vec(), ds.labels))
}

/// IDX image/label pair: `(pixels, shape, labels)`.
#[pyfunction]
fn load_idx(images: PathBuf, labels: PathBuf) -> PyResult<(Vec<f64>, Vec<usize>, Vec<usize>)> {
    let ds = data::load_idx(images, labels).map_err(err)?;
    Ok((ds.inputs.data().to_vec(), ds.inputs.shape().to_vec(), ds.labels))
}

/// The Catch pixel game with three stacked 16×16 frames.
#[pyclass(name = "CatchEnv")]
struct PyCatchEnv {
    inner: data::CatchEnv,
}

#[pymethods]
impl PyCatchEnv {
    #[new]
    fn new() -> Self {
        Self { inner: data::CatchEnv::new() }
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.inner.reset(seed).into_data()
    }

    /// Returns `(observation, reward, done)`.
    fn step(&mut self, action: usize) -> PyResult<(Vec<f64>, f64, bool)> {
        let s = self.inner.step(action).map_err(err)?;
        Ok((s.observation.into_data(), s.reward, s.done))
    }

    #[getter]
    fn actions(&self) -> usize {
        self.inner.actions()
    }

    #[getter]
    fn observation_shape(&self) -> Vec<usize> {
        self.inner.observation_shape()
    }

    /// Move toward the ball.
    fn scripted_action(&self) -> usize {
        data::scripted_action(&self.inner)
    }
}

/// Encoder + demapper pair with randomly initialized parameters.
#[pyclass(name = "Link")]
struct PyLink {
    goe: GoeModel,
    demapper: DemapperModel,
}

#[pymethods]
impl PyLink {
    #[new]
    #[pyo3(signature = (input_shape, symbols, arch = "conv", snr_gate = true, seed = 0))]
    fn new(input_shape: Vec<usize>, symbols: usize, arch: &str, snr_gate: bool, seed: u64) -> PyResult<Self> {
        let arch = match arch {
            "conv" => ArchConfig::conv(snr_gate),
            "dense" => ArchConfig::dense(snr_gate),
            other => return Err(PyValueError::new_err(format!("unknown architecture `{other}`"))),
        };
        let (goe, demapper) = models::comm_pair(&input_shape, symbols, &arch, seed).map_err(err)?;
        Ok(Self { goe, demapper })
    }

    #[getter]
    fn symbols(&self) -> usize {
        self.goe.symbols()
    }

    fn param_count(&self) -> usize {
        self.goe.net.params.count() + self.demapper.net.params.count()
    }

    /// Encode a flat batch of `batch` samples into unit-power blocks.
    #[pyo3(signature = (x, batch, snr_db = None))]
    fn encode(&self, x: Vec<f64>, batch: usize, snr_db: Option<f64>) -> PyResult<Vec<Vec<f64>>> {
        let mut shape = vec![batch];
        shape.extend(self.goe.net.input_shape());
        let blocks = models::goe_encode(&self.goe, &tensor(shape, x)?, snr_of(snr_db)).map_err(err)?;
        Ok(blocks.into_iter().map(ComplexBlock::into_data).collect())
    }

    /// Demap received blocks back to the source shape (flattened).
    #[pyo3(signature = (blocks, snr_db = None))]
    fn demap(&self, blocks: Vec<Vec<f64>>, snr_db: Option<f64>) -> PyResult<Vec<f64>> {
        let blocks = blocks.into_iter().map(ComplexBlock::new).collect::<gocom::Result<Vec<_>>>().map_err(err)?;
        Ok(models::demap(&self.demapper, &blocks, snr_of(snr_db)).map_err(err)?.into_data())
    }
}

fn row_dict(r: &MetricsRow) -> BTreeMap<&'static str, String> {
    BTreeMap::from([
        ("run_id", r.run_id.clone()),
        ("task", r.task.clone()),
        ("system", r.system.clone()),
        ("channel", r.channel.clone()),
        ("alpha", r.alpha.to_string()),
        ("train_snr", r.train_snr.clone()),
        ("test_snr_db", r.test_snr_db.clone()),
        ("metric", r.metric.to_string()),
        ("value", r.value.to_string()),
        ("std", r.std.to_string()),
        ("repeats", r.repeats.to_string()),
    ])
}

/// Rows of a metrics.csv as dicts of strings.
#[pyfunction]
fn read_metrics(path: PathBuf) -> PyResult<Vec<BTreeMap<&'static str, String>>> {
    Ok(exp::read_metrics_file(&path).map_err(err)?.iter().map(row_dict).collect())
}

/// `{name: (shape, values)}` from a checkpoint file.
#[pyfunction]
fn load_checkpoint(path: PathBuf) -> PyResult<ParamDict> {
    let p = exp::load_checkpoint(&path).map_err(err)?;
    Ok(p.iter().map(|(n, e)| (n.to_string(), (e.value.shape().to_vec(), e.value.data().to_vec()))).collect())
}

#[pyfunction]
fn save_checkpoint(path: PathBuf, params: ParamDict) -> PyResult<()> {
    let mut set = ParamSet::new();
    for (name, (shape, values)) in params {
        set.insert(name, tensor(shape, values)?).map_err(err)?;
    }
    exp::save_checkpoint(&path, &set).map_err(err)
}

/// A validated experiment configuration.
#[pyclass(name = "Experiment")]
struct PyExperiment {
    cfg: ExperimentConfig,
}

#[pymethods]
impl PyExperiment {
    /// Parse config text (`[section]` / `key = value`).
    #[new]
    #[pyo3(signature = (text = ""))]
    fn new(text: &str) -> PyResult<Self> {
        Ok(Self { cfg: ExperimentConfig::parse(text).map_err(err)? })
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        Ok(Self { cfg: ExperimentConfig::from_file(&path).map_err(err)? })
    }

    #[getter]
    fn run_id(&self) -> String {
        self.cfg.run_id()
    }

    #[getter]
    fn out(&self) -> PathBuf {
        self.cfg.out.clone()
    }

    #[setter]
    fn set_out(&mut self, out: PathBuf) {
        self.cfg.out = out;
    }

    /// Run a stage (`pretrain`, `train`, `eval`, `baseline`) and return the rows.
    #[pyo3(signature = (stage = "train"))]
    fn run(&self, stage: &str) -> PyResult<Vec<BTreeMap<&'static str, String>>> {
        let stage = match stage {
            "pretrain" => Stage::Pretrain,
            "train" => Stage::Train,
            "eval" => Stage::Eval,
            "baseline" => Stage::Baseline,
            other => return Err(PyValueError::new_err(format!("unknown stage `{other}`"))),
        };
        let rows = exp::run(&self.cfg, stage, false).map_err(err)?;
        Ok(rows.iter().map(row_dict).collect())
    }
}

#[pymodule]
fn gocom_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(snr_to_noise_power, m)?)?;
    m.add_function(wrap_pyfunction!(symbols_for_rate, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_power, m)?)?;
    m.add_function(wrap_pyfunction!(transmit, m)?)?;
    m.add_function(wrap_pyfunction!(combined_loss, m)?)?;
    m.add_function(wrap_pyfunction!(modified_reward, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(discounted_return, m)?)?;
    m.add_function(wrap_pyfunction!(gen_synth, m)?)?;
    m.add_function(wrap_pyfunction!(load_idx, m)?)?;
    m.add_function(wrap_pyfunction!(read_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(load_checkpoint, m)?)?;
    m.add_function(wrap_pyfunction!(save_checkpoint, m)?)?;
    m.add_class::<PyCatchEnv>()?;
    m.add_class::<PyLink>()?;
    m.add_class::<PyExperiment>()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrappers_match_core() {
        assert!((snr_to_noise_power(10.0) - 0.1).abs() < 1e-15);
        assert_eq!(symbols_for_rate(768, 1, 6).unwrap(), 128);
        let z = normalize_power(vec![3.0, 4.0, 0.0, 0.0]).unwrap();
        let p: f64 = z.iter().map(|v| v * v).sum::<f64>() / 2.0;
        assert!((p - 1.0).abs() < 1e-12);
        assert_eq!(transmit(z.clone(), "rayleigh", None, 3).unwrap().len(), 4);
        assert_eq!(discounted_return(vec![1.0, 1.0], 0.5).unwrap(), 1.5);
    }

    #[test]
    fn link_round_trip_shapes() {
        let link = PyLink::new(vec![1, 8, 8], 11, "dense", false, 0).unwrap();
        let blocks = link.encode(vec![0.5; 128], 2, Some(5.0)).unwrap();
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].len(), 22);
        assert_eq!(link.demap(blocks, Some(5.0)).unwrap().len(), 128);
    }
}
