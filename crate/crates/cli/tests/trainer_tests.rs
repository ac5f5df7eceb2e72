//! Trainer behavior: checkpoint continuation is bit-identical to
//! uninterrupted training, divergence halts with the last good state, and
//! the validation split is deterministic.

use tstnet::checkpoint::Checkpoint;
use tstnet::config::TrainConfig;
use tstnet::manifest::{split_validation, LoadedEpisode};
use tstnet::synth::{synthesize, SynthConfig};
use tstnet::trainer::{train, TrainControl};

fn tiny_train_config() -> TrainConfig {
    TrainConfig {
        d: 16,
        m: 12,
        k_objects: 3,
        k_filters: 2,
        d_o: 10,
        d_in: 10,
        d_w: 8,
        d_g: 8,
        proposal_budget: 12,
        lr: 0.005,
        batch: 4,
        epochs: 5,
        val_split: 0.0,
        seed: 11,
        ..TrainConfig::default()
    }
}

fn tiny_episodes(n: usize) -> Vec<LoadedEpisode> {
    let cfg = SynthConfig {
        episodes: n,
        m: 12,
        k_objects: 3,
        d_o: 10,
        d_w: 8,
        vocab: 5,
        ..SynthConfig::default()
    };
    let (_, eps) = synthesize(&cfg).unwrap();
    eps.into_iter()
        .map(|e| LoadedEpisode { id: e.plan.id.clone(), tensors: e.tensors, gt: e.gt, duration: e.duration })
        .collect()
}

fn param_bits(ckpt: &Checkpoint) -> Vec<u32> {
    ckpt.set.iter().flat_map(|p| p.value.data().iter().map(|x| x.to_bits())).collect()
}

#[test]
fn resumed_training_is_bit_identical_to_uninterrupted() {
    let episodes = tiny_episodes(8);
    let cfg = tiny_train_config();

    // straight run: 5 epochs
    let straight = train(&cfg, &episodes, None, |_| TrainControl::Continue).unwrap();

    // interrupted run: 2 epochs, checkpoint, resume for 3 more
    let mut short_cfg = cfg.clone();
    short_cfg.epochs = 2;
    let first = train(&short_cfg, &episodes, None, |_| TrainControl::Continue).unwrap();

    // the checkpoint carries its own config; extend the epoch budget only
    let mut resumed_ckpt = first.checkpoint;
    resumed_ckpt.config.epochs = cfg.epochs;
    let resumed =
        train(&cfg, &episodes, Some(resumed_ckpt), |_| TrainControl::Continue).unwrap();

    assert_eq!(straight.checkpoint.epoch, resumed.checkpoint.epoch);
    assert_eq!(param_bits(&straight.checkpoint), param_bits(&resumed.checkpoint));
    assert_eq!(straight.checkpoint.rng_state, resumed.checkpoint.rng_state);
    // loss trajectories of the overlapping epochs agree exactly
    let tail: Vec<f64> = straight.history[2..].iter().map(|s| s.loss).collect();
    let resumed_losses: Vec<f64> = resumed.history.iter().map(|s| s.loss).collect();
    assert_eq!(tail, resumed_losses);
}

#[test]
fn saved_and_reloaded_checkpoint_continues_identically() {
    let episodes = tiny_episodes(8);
    let cfg = tiny_train_config();
    let mut short_cfg = cfg.clone();
    short_cfg.epochs = 2;
    let first = train(&short_cfg, &episodes, None, |_| TrainControl::Continue).unwrap();

    let dir = std::env::temp_dir().join(format!("tstnet-resume-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("mid.tsck");
    tstnet::checkpoint::save(&path, &first.checkpoint).unwrap();
    let mut reloaded = tstnet::checkpoint::load(&path).unwrap();
    reloaded.config.epochs = cfg.epochs;

    let resumed_mem = {
        let mut ckpt = first.checkpoint;
        ckpt.config.epochs = cfg.epochs;
        train(&cfg, &episodes, Some(ckpt), |_| TrainControl::Continue).unwrap()
    };
    let resumed_disk = train(&cfg, &episodes, Some(reloaded), |_| TrainControl::Continue).unwrap();
    assert_eq!(param_bits(&resumed_mem.checkpoint), param_bits(&resumed_disk.checkpoint));
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn divergence_halts_with_last_good_checkpoint() {
    let mut episodes = tiny_episodes(8);
    let cfg = tiny_train_config();
    // poison one episode with huge values that overflow f32 matmuls
    for x in episodes[3].tensors.activity.data_mut() {
        *x = 3.0e38;
    }
    let outcome = train(&cfg, &episodes, None, |_| TrainControl::Continue).unwrap();
    let reason = outcome.halted.expect("training must halt");
    assert!(reason.contains("diverged"), "{reason}");
    // the checkpoint is from before the poisoned epoch
    assert_eq!(outcome.checkpoint.epoch, 0);
    assert!(outcome.history.is_empty());
}

#[test]
fn early_stop_callback_ends_training() {
    let episodes = tiny_episodes(6);
    let cfg = tiny_train_config();
    let outcome = train(&cfg, &episodes, None, |stats| {
        if stats.epoch >= 1 {
            TrainControl::Stop
        } else {
            TrainControl::Continue
        }
    })
    .unwrap();
    assert_eq!(outcome.history.len(), 2);
    assert_eq!(outcome.checkpoint.epoch, 2);
}

#[test]
fn validation_split_is_deterministic_and_proportional() {
    let episodes = tiny_episodes(64);
    let (train_a, val_a) = split_validation(&episodes, 0.2);
    let (train_b, val_b) = split_validation(&episodes, 0.2);
    assert_eq!(train_a, train_b);
    assert_eq!(val_a, val_b);
    assert_eq!(train_a.len() + val_a.len(), 64);
    assert!(val_a.len() >= 6 && val_a.len() <= 26, "got {} val episodes", val_a.len());
    let (all_train, no_val) = split_validation(&episodes, 0.0);
    assert_eq!(all_train.len(), 64);
    assert!(no_val.is_empty());
}

#[test]
fn throughput_is_reported_and_reasonably_stable() {
    // repeat the timed forward pass and report the variation (the spec for
    // the measurement reports, not asserts, < 20% variation)
    let episodes = tiny_episodes(16);
    let cfg = tiny_train_config();
    let (mp, set) = tstnet_core::model::ModelParams::init(&cfg.model_config(), cfg.seed);
    let mut rates = Vec::new();
    for _ in 0..3 {
        let run = tstnet::trainer::run_predictions(&set, &mp, &cfg.model_config(), &episodes, 3)
            .unwrap();
        assert_eq!(run.param_count, set.scalar_count());
        rates.push(tstnet_core::metrics::vqps(episodes.len(), run.elapsed_secs));
    }
    let max = rates.iter().cloned().fold(f64::MIN, f64::max);
    let min = rates.iter().cloned().fold(f64::MAX, f64::min);
    println!("throughput over 3 runs: {rates:?} video-query pairs/s (spread {:.1}%)",
             100.0 * (max - min) / max);
    assert!(rates.iter().all(|r| *r > 0.0));
}
