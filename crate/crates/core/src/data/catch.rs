//! Pixel Catch: a ball falls one row per step from a random column; the
//! agent slides a width-3 paddle along the bottom row to catch it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Environment, Step};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CATCH_SIZE: usize = 16;
pub const CATCH_FRAMES: usize = 3;
pub const CATCH_BALLS: usize = 10;

const LEFT: usize = 0;
const STAY: usize = 1;
const RIGHT: usize = 2;

#[derive(Clone, Debug)]
pub struct CatchEnv {
    rng: ChaCha8Rng,
    ball_row: usize,
    ball_col: usize,
    paddle: usize,
    balls_left: usize,
    done: bool,
    /// Oldest frame first.
    frames: Vec<Vec<f64>>,
}

impl Default for CatchEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl CatchEnv {
    pub fn new() -> Self {
        let mut env = Self {
            rng: ChaCha8Rng::seed_from_u64(0),
            ball_row: 0,
            ball_col: 0,
            paddle: CATCH_SIZE / 2,
            balls_left: CATCH_BALLS,
            done: true,
            frames: vec![vec![0.0; CATCH_SIZE * CATCH_SIZE]; CATCH_FRAMES],
        };
        env.reset(0);
        env
    }

    /// Start an episode with a chosen first ball column and paddle centre.
    pub fn reset_with(&mut self, seed: u64, ball_col: usize, paddle: usize) -> Tensor {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.ball_row = 0;
        self.ball_col = ball_col.min(CATCH_SIZE - 1);
        self.paddle = paddle.clamp(1, CATCH_SIZE - 2);
        self.balls_left = CATCH_BALLS;
        self.done = false;
        for f in &mut self.frames {
            f.fill(0.0);
        }
        self.push_frame();
        self.observation()
    }

    pub fn ball(&self) -> (usize, usize) {
        (self.ball_row, self.ball_col)
    }

    pub fn paddle(&self) -> usize {
        self.paddle
    }

    pub fn balls_left(&self) -> usize {
        self.balls_left
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    fn push_frame(&mut self) {
        let mut f = self.frames.remove(0);
        f.fill(0.0);
        let bottom = (CATCH_SIZE - 1) * CATCH_SIZE;
        for c in self.paddle - 1..=self.paddle + 1 {
            f[bottom + c] = 1.0;
        }
        f[self.ball_row * CATCH_SIZE + self.ball_col] = 1.0;
        self.frames.push(f);
    }

    /// `[frames, H, W]`, oldest frame first.
    pub fn observation(&self) -> Tensor {
        let data = self.frames.iter().flatten().copied().collect();
        Tensor::new(vec![CATCH_FRAMES, CATCH_SIZE, CATCH_SIZE], data).expect("catch observation")
    }
}

impl Environment for CatchEnv {
    fn reset(&mut self, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let col = rng.random_range(0..CATCH_SIZE);
        self.reset_with(seed.wrapping_add(0x9e37_79b9_7f4a_7c15), col, CATCH_SIZE / 2)
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        if self.done {
            return Err(Error::Env("step after episode end; call reset".into()));
        }
        let delta: isize = match action {
            LEFT => -1,
            STAY => 0,
            RIGHT => 1,
            other => return Err(Error::Env(format!("action {other} not in 0..3"))),
        };
        self.paddle = (self.paddle as isize + delta).clamp(1, CATCH_SIZE as isize - 2) as usize;
        self.ball_row += 1;
        let mut reward = 0.0;
        if self.ball_row == CATCH_SIZE - 1 {
            if self.ball_col.abs_diff(self.paddle) <= 1 {
                reward = 1.0;
            }
            self.balls_left -= 1;
            if self.balls_left == 0 {
                self.done = true;
            } else {
                self.ball_row = 0;
                self.ball_col = self.rng.random_range(0..CATCH_SIZE);
            }
        }
        self.push_frame();
        Ok(Step { observation: self.observation(), reward, done: self.done })
    }

    fn actions(&self) -> usize {
        3
    }

    fn observation_shape(&self) -> Vec<usize> {
        vec![CATCH_FRAMES, CATCH_SIZE, CATCH_SIZE]
    }
}

/// Move the paddle toward the ball's column.
pub fn scripted_action(env: &CatchEnv) -> usize {
    let (_, col) = env.ball();
    match col.cmp(&env.paddle()) {
        std::cmp::Ordering::Less => LEFT,
        std::cmp::Ordering::Equal => STAY,
        std::cmp::Ordering::Greater => RIGHT,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_above_paddle_is_caught() {
        let mut env = CatchEnv::new();
        env.reset_with(1, 8, 8);
        let mut total = 0.0;
        for _ in 0..CATCH_SIZE - 1 {
            total += env.step(STAY).unwrap().reward;
        }
        assert_eq!(total, 1.0);
        assert_eq!(env.balls_left(), CATCH_BALLS - 1);
    }

    #[test]
    fn observation_layout() {
        let mut env = CatchEnv::new();
        let obs = env.reset_with(0, 3, 8);
        assert_eq!(obs.len(), 768);
        // Only the newest frame is populated right after reset.
        let newest = &obs.data()[2 * 256..];
        assert_eq!(newest.iter().sum::<f64>(), 4.0);
        assert_eq!(obs.data()[..512].iter().sum::<f64>(), 0.0);
        assert_eq!(newest[3], 1.0);
        assert!(obs.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn episode_has_ten_balls_then_errors() {
        let mut env = CatchEnv::new();
        env.reset(5);
        let mut steps = 0;
        loop {
            steps += 1;
            if env.step(RIGHT).unwrap().done {
                break;
            }
        }
        assert_eq!(steps, CATCH_BALLS * (CATCH_SIZE - 1));
        assert!(matches!(env.step(STAY), Err(Error::Env(_))));
        assert!(env.step(7).is_err());
    }

    #[test]
    fn paddle_stays_on_grid() {
        let mut env = CatchEnv::new();
        env.reset_with(0, 0, 1);
        env.step(LEFT).unwrap();
        assert_eq!(env.paddle(), 1);
        env.reset_with(0, 0, 14);
        env.step(RIGHT).unwrap();
        assert_eq!(env.paddle(), 14);
    }
}
