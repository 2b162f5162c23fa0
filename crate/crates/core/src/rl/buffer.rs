//! Replay buffer holding transitions extended with the demapper output.
//!
//! Storage is three flat rings (x_t, w_t, x_{t+1}) allocated once, so a long
//! run does not interleave millions of small long-lived allocations with
//! the large short-lived ones of each training step.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One experience as produced by the environment loop.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub x_t: Tensor,
    pub action: usize,
    /// Demapper output at experience time.
    pub w_t: Tensor,
    /// Unmodified environment reward.
    pub reward: f64,
    /// Modified reward, frozen at insertion.
    pub r_hat: f64,
    pub x_next: Tensor,
    pub done: bool,
}

/// Borrowed view of a stored transition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StoredTransition<'a> {
    pub x_t: &'a [f64],
    pub action: usize,
    pub w_t: &'a [f64],
    pub reward: f64,
    pub r_hat: f64,
    pub x_next: &'a [f64],
    pub done: bool,
}

#[derive(Clone, Copy, Debug, Default)]
struct Meta {
    action: usize,
    reward: f64,
    r_hat: f64,
    done: bool,
}

/// A sampled minibatch, stacked along a new leading axis.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledBatch {
    pub x_t: Tensor,
    pub actions: Vec<usize>,
    pub r_hat: Vec<f64>,
    pub x_next: Tensor,
    pub done: Vec<bool>,
}

impl SampledBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Fixed-capacity FIFO ring with uniform sampling with replacement.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_shape: Vec<usize>,
    dims: usize,
    x: Vec<f64>,
    w: Vec<f64>,
    xn: Vec<f64>,
    meta: Vec<Meta>,
    len: usize,
    /// Slot of the next write; once full, also the oldest item.
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("replay capacity must be >= 1"));
        }
        Ok(Self {
            capacity,
            obs_shape: Vec::new(),
            dims: 0,
            x: Vec::new(),
            w: Vec::new(),
            xn: Vec::new(),
            meta: Vec::new(),
            len: 0,
            cursor: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Store a transition, evicting the oldest when full. The first push
    /// fixes the observation shape.
    pub fn push(&mut self, t: &Transition) -> Result<()> {
        if self.dims == 0 {
            self.obs_shape = t.x_t.shape().to_vec();
            self.dims = t.x_t.len();
            // Zeroed allocations are mapped lazily; untouched slots cost nothing.
            self.x = vec![0.0; self.capacity * self.dims];
            self.w = vec![0.0; self.capacity * self.dims];
            self.xn = vec![0.0; self.capacity * self.dims];
            self.meta = vec![Meta::default(); self.capacity];
        }
        for (what, s) in [("x_t", t.x_t.shape()), ("w_t", t.w_t.shape()), ("x_next", t.x_next.shape())] {
            if s != self.obs_shape.as_slice() {
                return Err(Error::shape("replay", format!("{what} {s:?}, buffer holds {:?}", self.obs_shape)));
            }
        }
        let r = self.cursor * self.dims..(self.cursor + 1) * self.dims;
        self.x[r.clone()].copy_from_slice(t.x_t.data());
        self.w[r.clone()].copy_from_slice(t.w_t.data());
        self.xn[r].copy_from_slice(t.x_next.data());
        self.meta[self.cursor] = Meta { action: t.action, reward: t.reward, r_hat: t.r_hat, done: t.done };
        self.cursor = (self.cursor + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
        Ok(())
    }

    /// Transition in storage slot `slot`.
    pub fn get(&self, slot: usize) -> Option<StoredTransition<'_>> {
        (slot < self.len).then(|| {
            let r = slot * self.dims..(slot + 1) * self.dims;
            let m = self.meta[slot];
            StoredTransition {
                x_t: &self.x[r.clone()],
                action: m.action,
                w_t: &self.w[r.clone()],
                reward: m.reward,
                r_hat: m.r_hat,
                x_next: &self.xn[r],
                done: m.done,
            }
        })
    }

    /// Items oldest first.
    pub fn iter(&self) -> impl Iterator<Item = StoredTransition<'_>> {
        let start = if self.len < self.capacity { 0 } else { self.cursor };
        (0..self.len).map(move |i| self.get((start + i) % self.len).expect("slot in range"))
    }

    /// `m` uniform storage slots, with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.len < m || m == 0 {
            return Err(Error::BufferUnderfilled { have: self.len, want: m });
        }
        Ok((0..m).map(|_| rng.random_range(0..self.len)).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<SampledBatch> {
        let idx = self.sample_indices(m, rng)?;
        self.gather(&idx)
    }

    /// Stack the given slots into a batch.
    pub fn gather(&self, slots: &[usize]) -> Result<SampledBatch> {
        if slots.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut shape = vec![slots.len()];
        shape.extend(&self.obs_shape);
        let (mut x, mut xn) = (Vec::with_capacity(slots.len() * self.dims), Vec::with_capacity(slots.len() * self.dims));
        let (mut actions, mut r_hat, mut done) = (Vec::new(), Vec::new(), Vec::new());
        for &s in slots {
            let t = self.get(s).ok_or_else(|| Error::invalid(format!("slot {s} not filled")))?;
            x.extend_from_slice(t.x_t);
            xn.extend_from_slice(t.x_next);
            actions.push(t.action);
            r_hat.push(t.r_hat);
            done.push(t.done);
        }
        Ok(SampledBatch { x_t: Tensor::new(shape.clone(), x)?, actions, r_hat, x_next: Tensor::new(shape, xn)?, done })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(tag: f64) -> Transition {
        let x = Tensor::scalar(tag);
        Transition { x_t: x.clone(), action: 0, w_t: x.clone(), reward: tag, r_hat: tag, x_next: x, done: false }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(2).unwrap();
        for t in [1.0, 2.0, 3.0] {
            b.push(&tr(t)).unwrap();
        }
        let held: Vec<f64> = b.iter().map(|t| t.reward).collect();
        assert_eq!(held, vec![2.0, 3.0]);
        b.push(&tr(4.0)).unwrap();
        assert_eq!(b.iter().map(|t| t.x_t[0]).collect::<Vec<_>>(), vec![3.0, 4.0]);
        assert_eq!(b.len(), 2);
    }

    #[test]
    fn underfilled_sampling_errors() {
        let mut b = ReplayBuffer::new(10).unwrap();
        b.push(&tr(0.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(b.sample(2, &mut rng), Err(Error::BufferUnderfilled { have: 1, want: 2 })));
        assert_eq!(b.sample(1, &mut rng).unwrap().len(), 1);
        assert!(ReplayBuffer::new(0).is_err());
    }

    #[test]
    fn shape_is_fixed_by_first_push() {
        let mut b = ReplayBuffer::new(4).unwrap();
        b.push(&tr(0.0)).unwrap();
        let mut bad = tr(1.0);
        bad.w_t = Tensor::zeros(&[2]);
        assert!(b.push(&bad).is_err());
    }
}
