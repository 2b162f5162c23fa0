//! DQN whose Q-function is the whole chain: task head after demapper after
//! channel after encoder. Without a link the Q-network sees clean
//! observations (the upper-bound agent).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::buffer::{ReplayBuffer, SampledBatch, Transition};
use crate::channel::{BatchRealization, ChannelKind, Snr};
use crate::data::{Dataset, Environment, Split};
use crate::error::{Error, Result};
use crate::exp::metrics::mean_std;
use crate::models::{DemapperModel, GoeModel, TaskModel};
use crate::objective::{argmax, check_alpha, modified_reward};
use crate::tensor::{OptRule, Optimizer, ParamSet, Tape, Tensor, Var};

/// Encoder and demapper in front of the Q-network.
#[derive(Clone, Debug, PartialEq)]
pub struct Link {
    pub goe: GoeModel,
    pub demapper: DemapperModel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QSystem {
    pub link: Option<Link>,
    pub qnet: TaskModel,
}

impl QSystem {
    pub fn direct(qnet: TaskModel) -> Self {
        Self { link: None, qnet }
    }

    pub fn with_link(goe: GoeModel, demapper: DemapperModel, qnet: TaskModel) -> Self {
        Self { link: Some(Link { goe, demapper }), qnet }
    }

    /// Records `(w, Q)` for a batch; draws one channel realization per row.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        x: Var,
        channel: ChannelKind,
        snr: Snr,
        rng: &mut R,
    ) -> Result<(Var, Var)> {
        let w = match &self.link {
            Some(link) => {
                let z = link.goe.forward(tape, x, snr)?;
                let real = BatchRealization::sample(tape.shape(z)[0], link.goe.symbols(), channel, snr, rng);
                let z_hat = real.apply(tape, z)?;
                link.demapper.forward(tape, z_hat, snr)?
            }
            None => x,
        };
        let q = self.qnet.forward(tape, w)?;
        Ok((w, q))
    }

    pub fn param_sets(&self) -> Vec<&ParamSet> {
        let mut v = Vec::new();
        if let Some(l) = &self.link {
            v.push(&l.goe.net.params);
            v.push(&l.demapper.net.params);
        }
        v.push(&self.qnet.net.params);
        v
    }

    fn param_sets_mut(&mut self) -> Vec<&mut ParamSet> {
        let mut v = Vec::new();
        if let Some(l) = &mut self.link {
            v.push(&mut l.goe.net.params);
            v.push(&mut l.demapper.net.params);
        }
        v.push(&mut self.qnet.net.params);
        v
    }

    pub fn actions(&self) -> usize {
        self.qnet.outputs()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DqnConfig {
    pub gamma: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay_steps: usize,
    pub sync_every: usize,
    pub capacity: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub alpha: f64,
    pub channel: ChannelKind,
    pub train_snr: Snr,
    pub total_steps: usize,
    /// Transitions stored before the first update.
    pub learn_start: usize,
    /// Environment steps per gradient update.
    pub learn_every: usize,
    pub huber_delta: f64,
    pub freeze_task: bool,
    pub seed: u64,
    pub rule: OptRule,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_steps: 50_000,
            sync_every: 1_000,
            capacity: 50_000,
            batch_size: 32,
            lr: 1e-4,
            alpha: 0.0,
            channel: ChannelKind::Awgn,
            train_snr: Snr::Db(20.0),
            total_steps: 200_000,
            learn_start: 1_000,
            learn_every: 1,
            huber_delta: 1.0,
            freeze_task: false,
            seed: 0,
            rule: OptRule::adam(),
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::invalid(format!("discount {} outside [0, 1]", self.gamma)));
        }
        for (name, e) in [("eps_start", self.eps_start), ("eps_end", self.eps_end)] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::invalid(format!("{name} = {e} outside [0, 1]")));
            }
        }
        if self.batch_size == 0 || self.sync_every == 0 || self.learn_every == 0 || self.capacity < self.batch_size {
            return Err(Error::invalid("batch size, sync period and learn period must be >= 1 and fit in the buffer"));
        }
        if !(self.huber_delta > 0.0) {
            return Err(Error::invalid("huber delta must be positive"));
        }
        Ok(())
    }

    /// Linear decay from `eps_start` to `eps_end` over `eps_decay_steps`.
    pub fn epsilon(&self, step: usize) -> f64 {
        if self.eps_decay_steps == 0 || step >= self.eps_decay_steps {
            return self.eps_end;
        }
        let f = step as f64 / self.eps_decay_steps as f64;
        self.eps_start + f * (self.eps_end - self.eps_start)
    }
}

/// ε-greedy over given Q-values. One uniform draw decides exploration; a
/// second picks the random action.
pub fn epsilon_greedy<R: Rng + ?Sized>(q: &[f64], eps: f64, rng: &mut R) -> usize {
    if rng.random::<f64>() < eps {
        rng.random_range(0..q.len())
    } else {
        argmax(q)
    }
}

fn batch_of(xs: &[&Tensor]) -> Result<Tensor> {
    let mut shape = vec![xs.len()];
    shape.extend(xs[0].shape());
    let data = xs.iter().flat_map(|t| t.data().iter().copied()).collect();
    Tensor::new(shape, data)
}

/// Action for a single observation plus the demapper output it was based on.
pub fn select_action<R: Rng + ?Sized>(
    sys: &QSystem,
    x: &Tensor,
    eps: f64,
    channel: ChannelKind,
    snr: Snr,
    rng: &mut R,
) -> Result<(usize, Tensor)> {
    let mut tape = Tape::new();
    let xv = tape.constant(batch_of(&[x])?);
    let (w, q) = sys.forward(&mut tape, xv, channel, snr, rng)?;
    let action = epsilon_greedy(tape.value(q).row(0), eps, rng);
    let w = tape.value(w).clone().reshape(x.shape().to_vec())?;
    Ok((action, w))
}

/// TD targets `R̂ + γ·max_a Q'(x', a)·(1 − done)`.
pub fn td_targets(q_next: &Tensor, r_hat: &[f64], done: &[bool], gamma: f64) -> Vec<f64> {
    r_hat
        .iter()
        .zip(done)
        .enumerate()
        .map(|(i, (&r, &d))| {
            if d || gamma == 0.0 {
                r
            } else {
                let row = q_next.row(i);
                r + gamma * row[argmax(row)]
            }
        })
        .collect()
}

/// One Huber-TD update of the online system. The target system samples
/// its own channel realizations.
pub fn dqn_step<R: Rng + ?Sized>(
    online: &mut QSystem,
    target: &QSystem,
    batch: &SampledBatch,
    cfg: &DqnConfig,
    opt: &Optimizer,
    rng: &mut R,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut tt = Tape::new();
    let xn = tt.constant(batch.x_next.clone());
    let (_, qn) = target.forward(&mut tt, xn, cfg.channel, cfg.train_snr, rng)?;
    let targets = td_targets(tt.value(qn), &batch.r_hat, &batch.done, cfg.gamma);
    drop(tt);

    let mut tape = Tape::new();
    let xv = tape.constant(batch.x_t.clone());
    let (_, q) = online.forward(&mut tape, xv, cfg.channel, cfg.train_snr, rng)?;
    let pred = tape.gather(q, &batch.actions)?;
    let tgt = tape.constant(Tensor::new(vec![batch.len()], targets)?);
    let loss = tape.huber(pred, tgt, cfg.huber_delta)?;
    let grads = tape.backward(loss)?;
    let freeze = cfg.freeze_task;
    let n = online.param_sets_mut().len();
    for (i, p) in online.param_sets_mut().into_iter().enumerate() {
        if freeze && i == n - 1 {
            continue;
        }
        p.accumulate(&tape, &grads);
        opt.step(p);
    }
    Ok(tape.value(loss).data()[0])
}

/// Copy every online parameter into the target, bit for bit.
pub fn sync_target(online: &QSystem, target: &mut QSystem) -> Result<()> {
    for (dst, src) in target.param_sets_mut().into_iter().zip(online.param_sets()) {
        dst.copy_values_from(src)?;
    }
    Ok(())
}

pub fn params_bit_equal(a: &QSystem, b: &QSystem) -> bool {
    let (pa, pb) = (a.param_sets(), b.param_sets());
    pa.len() == pb.len() && pa.iter().zip(&pb).all(|(x, y)| x.values_bit_equal(y))
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct RlRun {
    pub online: QSystem,
    pub target: QSystem,
    /// Raw game reward per finished episode.
    pub episode_rewards: Vec<f64>,
    /// Sum of modified rewards per finished episode.
    pub episode_modified: Vec<f64>,
    pub td_losses: Vec<f64>,
    pub buffer: ReplayBuffer,
    pub syncs: usize,
    /// Whether every sync produced a bit-equal target.
    pub syncs_bit_equal: bool,
}

/// Standard DQN loop: one environment step per iteration feeding the
/// buffer, an update every `learn_every` steps, periodic target sync.
pub fn train_rl<E: Environment>(env: &mut E, init: QSystem, cfg: &DqnConfig) -> Result<RlRun> {
    cfg.validate()?;
    if init.actions() != env.actions() {
        return Err(Error::invalid(format!("Q-network has {} outputs, environment {} actions", init.actions(), env.actions())));
    }
    let opt = Optimizer::new(cfg.rule, cfg.lr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut episode_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    episode_rng.set_stream(1);
    let mut online = init;
    let mut target = online.clone();
    let mut buffer = ReplayBuffer::new(cfg.capacity)?;
    let mut run_rewards = Vec::new();
    let mut run_modified = Vec::new();
    let mut td_losses = Vec::new();
    let (mut syncs, mut syncs_ok) = (0, true);

    let mut obs = env.reset(episode_rng.random());
    let (mut ep_r, mut ep_m) = (0.0, 0.0);
    for t in 0..cfg.total_steps {
        let (action, w_t) = select_action(&online, &obs, cfg.epsilon(t), cfg.channel, cfg.train_snr, &mut rng)?;
        let step = env.step(action)?;
        let r_hat = modified_reward(step.reward, &obs, &w_t, cfg.alpha)?;
        if !r_hat.is_finite() {
            return Err(Error::NonFinite("modified reward"));
        }
        let (reward, done) = (step.reward, step.done);
        let tr = Transition { x_t: obs, action, w_t, reward, r_hat, x_next: step.observation, done };
        buffer.push(&tr)?;
        ep_r += reward;
        ep_m += r_hat;
        obs = if done {
            run_rewards.push(ep_r);
            run_modified.push(ep_m);
            (ep_r, ep_m) = (0.0, 0.0);
            env.reset(episode_rng.random())
        } else {
            tr.x_next
        };

        if buffer.len() >= cfg.learn_start.max(cfg.batch_size) && t % cfg.learn_every == 0 {
            let batch = buffer.sample(cfg.batch_size, &mut rng)?;
            td_losses.push(dqn_step(&mut online, &target, &batch, cfg, &opt, &mut rng)?);
        }
        if (t + 1) % cfg.sync_every == 0 {
            sync_target(&online, &mut target)?;
            syncs += 1;
            syncs_ok &= params_bit_equal(&online, &target);
        }
    }
    Ok(RlRun {
        online,
        target,
        episode_rewards: run_rewards,
        episode_modified: run_modified,
        td_losses,
        buffer,
        syncs,
        syncs_bit_equal: syncs_ok,
    })
}

fn episode_seed(seed: u64, episode: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode as u64 + 2);
    rng.random()
}

/// Greedy rollouts, run in lockstep batches; returns mean and population
/// std of the raw episode reward.
pub fn eval_policy<E: Environment + Clone>(
    sys: &QSystem,
    env: &E,
    channel: ChannelKind,
    snr: Snr,
    episodes: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    const LANES: usize = 128;
    if episodes == 0 {
        return Err(Error::invalid("evaluation needs at least one episode"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut totals = Vec::with_capacity(episodes);
    for start in (0..episodes).step_by(LANES) {
        let lanes = LANES.min(episodes - start);
        let mut envs: Vec<E> = vec![env.clone(); lanes];
        let mut obs: Vec<Option<Tensor>> = envs.iter_mut().enumerate().map(|(i, e)| Some(e.reset(episode_seed(seed, start + i)))).collect();
        let mut reward = vec![0.0; lanes];
        loop {
            let live: Vec<usize> = (0..lanes).filter(|&i| obs[i].is_some()).collect();
            if live.is_empty() {
                break;
            }
            let xs: Vec<&Tensor> = live.iter().map(|&i| obs[i].as_ref().expect("live lane")).collect();
            let mut tape = Tape::new();
            let xv = tape.constant(batch_of(&xs)?);
            let (_, q) = sys.forward(&mut tape, xv, channel, snr, &mut rng)?;
            let qv = tape.value(q);
            for (row, &i) in live.iter().enumerate() {
                let step = envs[i].step(argmax(qv.row(row)))?;
                reward[i] += step.reward;
                obs[i] = (!step.done).then_some(step.observation);
            }
        }
        totals.extend(reward);
    }
    Ok(mean_std(&totals))
}

/// Uniformly random actions; mean and population std of episode reward.
pub fn eval_random<E: Environment + Clone>(env: &E, episodes: usize, seed: u64) -> Result<(f64, f64)> {
    if episodes == 0 {
        return Err(Error::invalid("evaluation needs at least one episode"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = env.actions();
    let mut totals = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let mut e = env.clone();
        e.reset(episode_seed(seed, ep));
        let mut total = 0.0;
        loop {
            let step = e.step(rng.random_range(0..a))?;
            total += step.reward;
            if step.done {
                break;
            }
        }
        totals.push(total);
    }
    Ok(mean_std(&totals))
}

/// `n` observations visited by a uniformly random policy, as an unlabeled
/// dataset (one class, label 0). Used to pretrain a link by reconstruction.
pub fn collect_observations<E: Environment>(env: &mut E, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("need at least one observation"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = env.observation_shape();
    let dims: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n * dims);
    let mut ep = 0;
    let mut x = env.reset(episode_seed(seed, ep));
    for _ in 0..n {
        data.extend_from_slice(x.data());
        let step = env.step(rng.random_range(0..env.actions()))?;
        x = if step.done {
            ep += 1;
            env.reset(episode_seed(seed, ep))
        } else {
            step.observation
        };
    }
    let mut full = vec![n];
    full.extend(shape);
    Dataset::new(Tensor::new(full, data)?, vec![0; n], 1, Split::Train)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CatchEnv;
    use crate::models::{comm_pair, symbols_for_rate, ArchConfig, Rate, TaskHead};

    fn tiny_system(seed: u64) -> QSystem {
        let arch = ArchConfig { hidden: 32, task_hidden: 16, ..ArchConfig::dense(false) };
        let shape = [3, 16, 16];
        let s = symbols_for_rate(768, Rate::new(1, 6).unwrap());
        let (goe, dem) = comm_pair(&shape, s, &arch, seed).unwrap();
        let q = TaskModel::new("task", &shape, TaskHead::QNetwork { actions: 3 }, &arch, seed + 2).unwrap();
        QSystem::with_link(goe, dem, q)
    }

    #[test]
    fn greedy_and_tie_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(epsilon_greedy(&[0.1, 0.9, 0.3], 0.0, &mut rng), 1);
        assert_eq!(epsilon_greedy(&[0.5, 0.5, 0.1], 0.0, &mut rng), 0);
    }

    #[test]
    fn td_target_limits() {
        let q = Tensor::new(vec![2, 3], vec![1.0, 5.0, 2.0, -1.0, -3.0, -2.0]).unwrap();
        assert_eq!(td_targets(&q, &[0.5, 0.25], &[true, false], 0.9), vec![0.5, 0.25 - 0.9]);
        assert_eq!(td_targets(&q, &[0.5, 0.25], &[false, false], 0.0), vec![0.5, 0.25]);
    }

    #[test]
    fn epsilon_schedule() {
        let cfg = DqnConfig { eps_decay_steps: 100, ..DqnConfig::default() };
        assert_eq!(cfg.epsilon(0), 1.0);
        assert!((cfg.epsilon(50) - 0.525).abs() < 1e-12);
        assert_eq!(cfg.epsilon(100), 0.05);
        assert_eq!(cfg.epsilon(10_000), 0.05);
    }

    #[test]
    fn sync_copies_bits_and_target_stays_put() {
        let mut env = CatchEnv::new();
        let cfg = DqnConfig {
            total_steps: 120,
            learn_start: 16,
            batch_size: 8,
            capacity: 200,
            sync_every: 50,
            lr: 1e-3,
            ..DqnConfig::default()
        };
        let run = train_rl(&mut env, tiny_system(0), &cfg).unwrap();
        assert_eq!(run.syncs, 2);
        assert!(run.syncs_bit_equal);
        // 20 updates after the last sync: online drifted away from target.
        assert!(!params_bit_equal(&run.online, &run.target));
        let mut t = run.target.clone();
        sync_target(&run.online, &mut t).unwrap();
        sync_target(&run.online, &mut t).unwrap();
        assert!(params_bit_equal(&run.online, &t));
        // α = 0: stored modified reward is the raw reward.
        assert!(run.buffer.iter().all(|tr| tr.r_hat == tr.reward));
    }

    #[test]
    fn seeded_runs_repeat() {
        let cfg = DqnConfig { total_steps: 160, learn_start: 16, batch_size: 8, capacity: 200, ..DqnConfig::default() };
        let a = train_rl(&mut CatchEnv::new(), tiny_system(3), &cfg).unwrap();
        let b = train_rl(&mut CatchEnv::new(), tiny_system(3), &cfg).unwrap();
        assert_eq!(a.episode_rewards, b.episode_rewards);
        assert_eq!(a.td_losses, b.td_losses);
        assert!(params_bit_equal(&a.online, &b.online));
    }

    #[test]
    fn eval_is_bounded_and_deterministic() {
        let sys = tiny_system(1);
        let env = CatchEnv::new();
        let a = eval_policy(&sys, &env, ChannelKind::Awgn, Snr::Db(10.0), 3, 7).unwrap();
        let b = eval_policy(&sys, &env, ChannelKind::Awgn, Snr::Db(10.0), 3, 7).unwrap();
        assert_eq!(a, b);
        assert!((0.0..=10.0).contains(&a.0));
        let (m, _) = eval_random(&env, 200, 0).unwrap();
        assert!((1.0..3.0).contains(&m));
    }
}
