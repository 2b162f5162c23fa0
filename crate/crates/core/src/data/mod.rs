//! Datasets and environments: IDX image files, synthetic blob images, and
//! the pixel Catch game.

mod catch;
mod idx;
mod synth;

pub use catch::{scripted_action, CatchEnv, CATCH_BALLS, CATCH_FRAMES, CATCH_SIZE};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels, IMAGES_MAGIC, LABELS_MAGIC};
pub use synth::{gen_synth, gen_synth_with, SynthConfig};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Labeled images, `inputs: [n, C, H, W]` with values in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        if inputs.batch() != labels.len() {
            return Err(Error::shape("dataset", format!("{} inputs vs {} labels", inputs.batch(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("label {bad} outside [0, {classes})")));
        }
        Ok(Self { inputs, labels, classes, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample shape, e.g. `[1, 8, 8]`.
    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn sample_dims(&self) -> usize {
        self.inputs.row_len()
    }

    /// Gather rows into a batch.
    pub fn batch(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        let mut shape = vec![idx.len()];
        shape.extend(self.sample_shape());
        let data = idx.iter().flat_map(|&i| self.inputs.row(i).iter().copied()).collect();
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        (Tensor::new(shape, data).expect("batch shape"), labels)
    }

    /// Slice `[start, end)` in storage order.
    pub fn subset(&self, start: usize, end: usize, split: Split) -> Dataset {
        let idx: Vec<usize> = (start..end).collect();
        let (inputs, labels) = self.batch(&idx);
        Dataset { inputs, labels, classes: self.classes, split }
    }

    /// Shuffled minibatch index lists covering one epoch.
    pub fn epoch_batches<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(rng);
        order.chunks(batch_size).map(<[usize]>::to_vec).collect()
    }
}

/// One environment transition.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub observation: Tensor,
    pub reward: f64,
    pub done: bool,
}

/// Seedable episodic environment with a discrete action set.
pub trait Environment {
    fn reset(&mut self, seed: u64) -> Tensor;
    fn step(&mut self, action: usize) -> Result<Step>;
    fn actions(&self) -> usize;
    fn observation_shape(&self) -> Vec<usize>;
}
