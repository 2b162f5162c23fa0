//! Property tests for channel, buffer, persistence, config and environment
//! invariants, plus CLI smoke tests.

use std::process::Command;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gocom::channel::{normalize_power, sample_realization, ChannelKind, ComplexBlock, Snr};
use gocom::data::{parse_idx_images, CatchEnv, Environment, CATCH_BALLS, CATCH_SIZE};
use gocom::exp::config::snr_grid;
use gocom::exp::metrics::{write_metrics, Metric, MetricsRow};
use gocom::exp::{decode_checkpoint, encode_checkpoint, read_metrics_file, write_metrics_file};
use gocom::rl::{td_targets, DqnConfig, ReplayBuffer, Transition};
use gocom::{ParamSet, Tensor};

fn transition(tag: f64) -> Transition {
    let x = Tensor::from_vec(vec![tag, -tag]);
    Transition { x_t: x.clone(), action: 0, w_t: x.clone(), reward: tag, r_hat: tag, x_next: x, done: false }
}

proptest! {
    #[test]
    fn normalized_blocks_have_unit_power(raw in prop::collection::vec(-5.0f64..5.0, 1..40)) {
        let mut raw = raw;
        if raw.len() % 2 == 1 {
            raw.pop();
        }
        prop_assume!(raw.len() >= 2 && raw.iter().any(|v| v.abs() > 1e-6));
        let b = normalize_power(&raw, raw.len() / 2).unwrap();
        prop_assert!((b.mean_power() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noiseless_channels_are_identity(raw in prop::collection::vec(-3.0f64..3.0, 2..32), seed in any::<u64>(), fading in any::<bool>()) {
        let mut raw = raw;
        if raw.len() % 2 == 1 {
            raw.pop();
        }
        let z = ComplexBlock::new(raw).unwrap();
        let kind = if fading { ChannelKind::SlowFading } else { ChannelKind::Awgn };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = sample_realization(z.symbols(), kind, Snr::Infinite, &mut rng);
        prop_assert_eq!(r.apply(&z), z);
    }

    #[test]
    fn buffer_keeps_newest_capacity_items(cap in 1usize..20, pushes in 0usize..60) {
        let mut b = ReplayBuffer::new(cap).unwrap();
        for i in 0..pushes {
            b.push(&transition(i as f64)).unwrap();
        }
        prop_assert_eq!(b.len(), pushes.min(cap));
        let held: Vec<f64> = b.iter().map(|t| t.reward).collect();
        let want: Vec<f64> = (pushes.saturating_sub(cap)..pushes).map(|i| i as f64).collect();
        prop_assert_eq!(held, want);
    }

    #[test]
    fn epsilon_is_monotone_and_bounded(start in 0.0f64..1.0, end in 0.0f64..1.0, decay in 0usize..500, a in 0usize..1000, b in 0usize..1000) {
        prop_assume!(end <= start);
        let cfg = DqnConfig { eps_start: start, eps_end: end, eps_decay_steps: decay, ..DqnConfig::default() };
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(cfg.epsilon(hi) <= cfg.epsilon(lo) + 1e-15);
        prop_assert!(cfg.epsilon(lo) <= start + 1e-15 && cfg.epsilon(lo) >= end - 1e-15);
    }

    #[test]
    fn terminal_td_target_is_the_reward(q in prop::collection::vec(-5.0f64..5.0, 3), r in -2.0f64..2.0, gamma in 0.0f64..1.0) {
        let qn = Tensor::new(vec![1, 3], q.clone()).unwrap();
        prop_assert_eq!(td_targets(&qn, &[r], &[true], gamma), vec![r]);
        let best = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((td_targets(&qn, &[r], &[false], gamma)[0] - (r + gamma * best)).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip(values in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 1..20), 1..5)) {
        let mut p = ParamSet::new();
        for (i, v) in values.iter().enumerate() {
            p.insert(format!("layer{i}.w"), Tensor::from_vec(v.clone())).unwrap();
        }
        let bytes = encode_checkpoint(&p);
        let back = decode_checkpoint(&bytes).unwrap();
        prop_assert!(back.values_bit_equal(&p));
        prop_assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn metrics_csv_round_trip(value in -1e3f64..1e3, std in 0.0f64..10.0, repeats in 1usize..100, alpha in 0.0f64..1.0) {
        let row = MetricsRow {
            run_id: "classify-gocom-awgn".into(),
            task: "classify".into(),
            system: "gocom".into(),
            channel: "awgn".into(),
            alpha,
            train_snr: "-2:20".into(),
            test_snr_db: "0".into(),
            metric: Metric::Accuracy,
            value,
            std,
            repeats,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        write_metrics_file(&path, std::slice::from_ref(&row)).unwrap();
        prop_assert_eq!(read_metrics_file(&path).unwrap(), vec![row]);
    }

    #[test]
    fn snr_grid_covers_endpoints(lo in -10i32..10, steps in 0usize..15, step in 1i32..4) {
        let hi = lo + step * steps as i32;
        let g = snr_grid(lo as f64, step as f64, hi as f64);
        prop_assert_eq!(g.len(), steps + 1);
        prop_assert_eq!(g[0], Snr::Db(lo as f64));
        prop_assert_eq!(*g.last().unwrap(), Snr::Db(hi as f64));
    }

    #[test]
    fn catch_episodes_are_bounded(seed in any::<u64>(), actions in prop::collection::vec(0usize..3, 150)) {
        let mut env = CatchEnv::new();
        env.reset(seed);
        let (mut total, mut steps) = (0.0, 0);
        for a in actions {
            let s = env.step(a).unwrap();
            prop_assert!(s.reward == 0.0 || s.reward == 1.0);
            prop_assert!(s.observation.data().iter().all(|&v| v == 0.0 || v == 1.0));
            total += s.reward;
            steps += 1;
            if s.done {
                break;
            }
        }
        prop_assert_eq!(steps, CATCH_BALLS * (CATCH_SIZE - 1));
        prop_assert!(total <= CATCH_BALLS as f64);
        prop_assert!(env.step(1).is_err());
    }
}

#[test]
fn mnist_training_image_header() {
    // Header of the 60000 × 28 × 28 training images, followed by two pixels.
    let mut bytes = vec![0x00, 0x00, 0x08, 0x03, 0x00, 0x00, 0xEA, 0x60, 0x00, 0x00, 0x00, 0x1C, 0x00, 0x00, 0x00, 0x1C];
    assert!(parse_idx_images(&bytes).is_err(), "no pixel data yet");
    let mut small = bytes.clone();
    small[4..8].copy_from_slice(&1u32.to_be_bytes());
    small.extend(std::iter::repeat_n(255u8, 28 * 28));
    let (n, rows, cols, px) = parse_idx_images(&small).unwrap();
    assert_eq!((n, rows, cols), (1, 28, 28));
    assert!(px.iter().all(|&p| p == 1.0));
    bytes.extend(std::iter::repeat_n(0u8, 60_000 * 28 * 28));
    let (n, rows, cols, _) = parse_idx_images(&bytes).unwrap();
    assert_eq!((n, rows, cols), (60_000, 28, 28));
}

#[test]
fn metrics_header_is_fixed() {
    let mut out = Vec::new();
    write_metrics(&mut out, &[]).unwrap();
    assert_eq!(String::from_utf8(out).unwrap().trim_end(), "run_id,task,system,channel,alpha,train_snr,test_snr_db,metric,value,std,repeats");
}

fn gocom() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gocom"))
}

#[test]
fn cli_baseline_writes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.ini");
    std::fs::write(&cfg, "[experiment]\nrepeats = 2\ntest_snr = 0,10\n[data]\ntrain = 200\ntest = 50\n[train]\npretrain_epochs = 1\n").unwrap();
    let out = dir.path().join("run");
    let status = gocom()
        .args(["baseline", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--seed", "3", "--snr-db", "-2"])
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let rows = read_metrics_file(&out.join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.run_id.ends_with("seed3")));
    assert!(out.join("checkpoints/task.ckpt").exists());
    assert!(out.join("run.log").exists());
}

#[test]
fn cli_reports_bad_config_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.ini");
    std::fs::write(&cfg, "[experiment]\nalpha = 0.1\n\n[train]\nepohcs = 3\n").unwrap();
    let out = gocom().args(["train", "--config"]).arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 5") && err.contains("train.epohcs"), "{err}");
}

#[test]
fn cli_rejects_jscc_for_rl() {
    let out = gocom().args(["train", "--task", "rl", "--system", "jscc", "--snr-db", "20"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("jscc"));
}
