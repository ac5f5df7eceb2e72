//! Training loop: gradient accumulation over batches, global-norm clipping,
//! Adam updates, per-epoch validation metrics, divergence handling and
//! checkpointing. Single-threaded and bit-deterministic for a fixed seed.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use tstnet_core::localizer::MomentPrediction;
use tstnet_core::metrics::{evaluate, EvalReport, Segment, DEFAULT_THRESHOLDS, DEFAULT_TOP_NS};
use tstnet_core::model::{forward, forward_loss, ModelConfig, ModelParams};
use tstnet_core::nn::{BoundParams, ParamSet};
use tstnet_core::optim::{adam_step, clip_global_norm, AdamConfig, AdamState};
use tstnet_core::rng::SplitMix64;
use tstnet_core::tape::Tape;

use crate::checkpoint::{verify_against_model, Checkpoint};
use crate::config::TrainConfig;
use crate::manifest::{split_validation, LoadedEpisode};

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub r1_03: f64,
    pub r1_05: f64,
    pub r1_07: f64,
    pub miou: f64,
    /// Batches whose gradient norm was clipped this epoch.
    pub clipped: usize,
    /// Batches skipped because of a non-finite gradient.
    pub skipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainControl {
    Continue,
    Stop,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochStats>,
    /// Set when training halted before the configured epoch count; the
    /// checkpoint is then the last good state.
    pub halted: Option<String>,
}

/// Train on `episodes`, reporting stats to `on_epoch` after every epoch.
/// The callback may stop training early. Passing `resume` continues from a
/// checkpoint bit-identically to a run that never stopped.
pub fn train(
    cfg: &TrainConfig,
    episodes: &[LoadedEpisode],
    resume: Option<Checkpoint>,
    mut on_epoch: impl FnMut(&EpochStats) -> TrainControl,
) -> anyhow::Result<TrainOutcome> {
    cfg.validate()?;
    anyhow::ensure!(!episodes.is_empty(), "no episodes to train on");
    let model_cfg = cfg.model_config();
    let (mp, fresh_set) = ModelParams::init(&model_cfg, cfg.seed);

    let (mut set, mut adam, mut rng, start_epoch) = match resume {
        Some(ckpt) => {
            // the epoch budget may grow on resume; everything else must match
            let mut comparable = ckpt.config.clone();
            comparable.epochs = cfg.epochs;
            anyhow::ensure!(
                comparable == *cfg,
                "checkpoint was trained with a different configuration"
            );
            verify_against_model(&ckpt, &fresh_set)?;
            let rng = SplitMix64::from_state(ckpt.rng_state);
            (ckpt.set, ckpt.adam, rng, ckpt.epoch)
        }
        None => {
            let adam = AdamState::new(&fresh_set);
            (fresh_set, adam, SplitMix64::new(cfg.seed ^ 0x51_17_AA_71), 0)
        }
    };

    let (train_idx, val_idx) = split_validation(episodes, cfg.val_split);
    anyhow::ensure!(!train_idx.is_empty(), "validation split consumed every episode");
    // with no validation split, metrics are computed on the training set
    let eval_idx: Vec<usize> = if val_idx.is_empty() { train_idx.clone() } else { val_idx };

    let adam_cfg = AdamConfig::with_lr(cfg.lr);
    let mut history = Vec::new();
    let mut order = train_idx.clone();

    for epoch in start_epoch..cfg.epochs {
        // snapshot entering the epoch; returned if this epoch diverges
        let snapshot = (set.clone(), adam.clone(), rng.state());
        // shuffle the canonical order so the permutation is a function of
        // the RNG state alone (checkpoint resume must replay it exactly)
        order.copy_from_slice(&train_idx);
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0f64;
        let mut clipped = 0usize;
        let mut skipped = 0usize;
        let mut diverged = None;

        'batches: for chunk in order.chunks(cfg.batch) {
            set.zero_grads();
            let scale = 1.0 / chunk.len() as f32;
            for &i in chunk {
                let ep = &episodes[i];
                let mut tape = Tape::new();
                let bp = BoundParams::bind(&mut tape, &set);
                let (loss, _) =
                    forward_loss(&mut tape, &bp, &mp, &model_cfg, &ep.tensors, ep.gt, ep.duration)?;
                let value = tape.value(loss).data()[0] as f64;
                if !value.is_finite() {
                    diverged = Some(format!("loss diverged on episode {} at epoch {epoch}", ep.id));
                    break 'batches;
                }
                epoch_loss += value;
                let grads = tape.backward(loss)?;
                bp.accumulate_grads(&tape, &grads, &mut set, scale);
            }
            if clip_global_norm(&mut set, cfg.clip_norm).is_some() {
                clipped += 1;
            }
            if let Err(e) = adam_step(&mut set, &mut adam, &adam_cfg) {
                eprintln!("warning: skipping update at epoch {epoch}: {e}");
                skipped += 1;
            }
        }

        if let Some(reason) = diverged {
            let (set, adam, rng_state) = snapshot;
            return Ok(TrainOutcome {
                checkpoint: Checkpoint {
                    epoch,
                    rng_state,
                    config: cfg.clone(),
                    set,
                    adam,
                },
                history,
                halted: Some(reason),
            });
        }

        let report = evaluation_report(&set, &mp, &model_cfg, episodes, &eval_idx, cfg.top_n)?;
        let stats = EpochStats {
            epoch,
            loss: epoch_loss / train_idx.len() as f64,
            r1_03: report.recall[0][0],
            r1_05: report.recall[0][1],
            r1_07: report.recall[0][2],
            miou: report.miou,
            clipped,
            skipped,
        };
        let control = on_epoch(&stats);
        history.push(stats);
        if control == TrainControl::Stop {
            return Ok(TrainOutcome {
                checkpoint: Checkpoint {
                    epoch: epoch + 1,
                    rng_state: rng.state(),
                    config: cfg.clone(),
                    set,
                    adam,
                },
                history,
                halted: None,
            });
        }
    }

    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            epoch: cfg.epochs,
            rng_state: rng.state(),
            config: cfg.clone(),
            set,
            adam,
        },
        history,
        halted: None,
    })
}

/// Forward passes over a set of episodes, timed without any file I/O.
pub struct ModelRun {
    pub predictions: Vec<(String, Vec<MomentPrediction>)>,
    pub elapsed_secs: f64,
    pub param_count: usize,
}

pub fn run_predictions(
    set: &ParamSet<f32>,
    mp: &ModelParams,
    model_cfg: &ModelConfig,
    episodes: &[LoadedEpisode],
    top_n: usize,
) -> anyhow::Result<ModelRun> {
    let start = Instant::now();
    let mut predictions = Vec::with_capacity(episodes.len());
    for ep in episodes {
        let mut tape = Tape::new();
        let bp = BoundParams::bind(&mut tape, set);
        let out = forward(&mut tape, &bp, mp, model_cfg, &ep.tensors)?;
        let ranked = tstnet_core::localizer::rank_predictions(
            &tape,
            &out.scored,
            model_cfg.m,
            ep.duration,
            top_n,
        )?;
        predictions.push((ep.id.clone(), ranked));
    }
    Ok(ModelRun {
        predictions,
        elapsed_secs: start.elapsed().as_secs_f64(),
        param_count: set.scalar_count(),
    })
}

fn evaluation_report(
    set: &ParamSet<f32>,
    mp: &ModelParams,
    model_cfg: &ModelConfig,
    episodes: &[LoadedEpisode],
    idx: &[usize],
    top_n: usize,
) -> anyhow::Result<EvalReport> {
    let subset: Vec<LoadedEpisode> = idx.iter().map(|&i| episodes[i].clone()).collect();
    let run = run_predictions(set, mp, model_cfg, &subset, top_n)?;
    let preds: Vec<Vec<Segment>> = run
        .predictions
        .iter()
        .map(|(_, ps)| ps.iter().map(|p| (p.t_start, p.t_end)).collect())
        .collect();
    let gts: Vec<Segment> = subset.iter().map(|e| (e.gt.t_start, e.gt.t_end)).collect();
    Ok(evaluate(&preds, &gts, &DEFAULT_TOP_NS, &DEFAULT_THRESHOLDS)?)
}

/// Evaluate ranked predictions (by episode id) against ground-truth
/// segments. Every episode must have predictions and vice versa.
pub fn report_for_predictions(
    predictions: &[(String, Vec<MomentPrediction>)],
    ground_truths: &[(String, Segment)],
) -> anyhow::Result<EvalReport> {
    let mut by_id: std::collections::BTreeMap<&str, &Vec<MomentPrediction>> =
        std::collections::BTreeMap::new();
    for (id, preds) in predictions {
        by_id.insert(id.as_str(), preds);
    }
    let mut ranked: Vec<Vec<Segment>> = Vec::with_capacity(ground_truths.len());
    let mut gts: Vec<Segment> = Vec::with_capacity(ground_truths.len());
    for (id, gt) in ground_truths {
        let Some(preds) = by_id.remove(id.as_str()) else {
            anyhow::bail!("no predictions for episode {id}");
        };
        ranked.push(preds.iter().map(|p| (p.t_start, p.t_end)).collect());
        gts.push(*gt);
    }
    if let Some((id, _)) = by_id.into_iter().next() {
        anyhow::bail!("predictions reference unknown episode {id} (missing ground truth)");
    }
    Ok(evaluate(&ranked, &gts, &DEFAULT_TOP_NS, &DEFAULT_THRESHOLDS)?)
}
