//! Moment localizer: deterministic proposal enumeration, scoring and
//! boundary regression heads, the training loss, and ranked predictions in
//! seconds.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::model::ModelConfig;
use crate::nn::{AffineLayer, BoundParams, ParamSet};
use crate::rng::SplitMix64;
use crate::tape::{Tape, Var};
use crate::Real;

/// Candidate segment in inclusive frame indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Proposal {
    pub start: usize,
    pub end: usize,
}

impl Proposal {
    pub fn width(&self) -> usize {
        self.end - self.start + 1
    }
}

/// One ranked output segment, in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentPrediction {
    pub t_start: f64,
    pub t_end: f64,
    pub score: f64,
}

/// Scoring head (2D -> D -> 1, sigmoid) and regression head (2D -> D -> 2).
#[derive(Debug, Clone)]
pub struct LocalizerParams {
    pub score1: AffineLayer,
    pub score2: AffineLayer,
    pub reg1: AffineLayer,
    pub reg2: AffineLayer,
}

impl LocalizerParams {
    pub fn init<T: Real>(set: &mut ParamSet<T>, cfg: &ModelConfig, rng: &mut SplitMix64) -> Self {
        let d2 = 2 * cfg.d;
        Self {
            score1: AffineLayer::init(set, "loc.score1", d2, cfg.d, true, rng),
            score2: AffineLayer::init(set, "loc.score2", cfg.d, 1, true, rng),
            reg1: AffineLayer::init(set, "loc.reg1", d2, cfg.d, true, rng),
            reg2: AffineLayer::init(set, "loc.reg2", cfg.d, 2, true, rng),
        }
    }
}

/// Thresholds and weights of the localization loss. All values are config
/// keys; the defaults follow common proposal-based grounding practice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// tIoU at which the classification target starts rising above 0.
    pub tau_lo: f64,
    /// tIoU at which the classification target saturates at 1.
    pub tau_hi: f64,
    /// Proposals above this tIoU regress their boundaries.
    pub positive_iou: f64,
    /// Weight of the regression term.
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { tau_lo: 0.3, tau_hi: 0.7, positive_iou: 0.5, lambda: 1.0 }
    }
}

/// Deterministic multi-scale sliding-window enumeration returning exactly
/// `budget` proposals (for M >= 8).
///
/// Widths are ceil(M/8), ceil(M/4), ceil(M/2), M with stride
/// max(1, width/8), enumerated in (width, start) order. Overshoot is cut to
/// an evenly spaced subsequence; undershoot halves the strides once and then
/// pads by repeating the last proposal. For M < 8 every segment is
/// enumerated and truncated to `budget`.
pub fn enumerate_proposals(m: usize, budget: usize) -> Result<Vec<Proposal>> {
    if budget == 0 || m == 0 {
        return Err(CoreError::InvalidArgument {
            op: "enumerate_proposals",
            detail: format!("m = {m}, budget = {budget} must both be positive"),
        });
    }
    if m < 8 {
        let mut all = Vec::new();
        for width in 1..=m {
            for start in 0..=(m - width) {
                all.push(Proposal { start, end: start + width - 1 });
            }
        }
        all.truncate(budget);
        return Ok(all);
    }
    let widths = [m.div_ceil(8), m.div_ceil(4), m.div_ceil(2), m];
    let sweep = |halve: bool| -> Vec<Proposal> {
        let mut out = Vec::new();
        for &width in &widths {
            let mut stride = (width / 8).max(1);
            if halve {
                stride = (stride / 2).max(1);
            }
            let mut start = 0;
            while start + width <= m {
                out.push(Proposal { start, end: start + width - 1 });
                start += stride;
            }
        }
        out
    };
    let mut proposals = sweep(false);
    if proposals.len() < budget {
        proposals = sweep(true);
    }
    match proposals.len().cmp(&budget) {
        core::cmp::Ordering::Greater => {
            let n = proposals.len();
            Ok((0..budget).map(|i| proposals[i * n / budget]).collect())
        }
        core::cmp::Ordering::Less => {
            let last = *proposals.last().expect("non-empty sweep");
            proposals.resize(budget, last);
            Ok(proposals)
        }
        core::cmp::Ordering::Equal => Ok(proposals),
    }
}

/// Map inclusive frame bounds to seconds: the segment covers
/// [start, end + 1) in frame units.
pub fn frames_to_seconds(start: f64, end: f64, m: usize, duration: f64) -> (f64, f64) {
    let scale = duration / m as f64;
    (start * scale, (end + 1.0) * scale)
}

/// Ground-truth segment converted to continuous frame units.
pub fn seconds_to_frames(t_start: f64, t_end: f64, m: usize, duration: f64) -> (f64, f64) {
    let scale = m as f64 / duration;
    (t_start * scale, t_end * scale)
}

/// Per-proposal model outputs, still on the tape.
pub struct ScoredProposals {
    /// `[P, 1]` pre-sigmoid
    pub logits: Var,
    /// `[P, 1]` in (0,1)
    pub scores: Var,
    /// `[P, 2]` frame-unit boundary offsets
    pub offsets: Var,
    /// `[P, 2]` refined inclusive bounds, clamped and validity-checked
    pub refined: Var,
}

/// Mean-pool the track features over each proposal and run both heads.
pub fn score_proposals<T: Real>(
    tape: &mut Tape<T>,
    bp: &BoundParams,
    lp: &LocalizerParams,
    track: Var,
    proposals: &[Proposal],
    cfg: &ModelConfig,
) -> Result<ScoredProposals> {
    let slope = T::from_f64(cfg.leaky_slope);
    let segs: Vec<(usize, usize)> = proposals.iter().map(|p| (p.start, p.end)).collect();
    let pooled = tape.segment_mean_rows(track, &segs)?;

    let s_hidden = lp.score1.apply(tape, bp, pooled)?;
    let s_hidden = tape.leaky_relu(s_hidden, slope)?;
    let logits = lp.score2.apply(tape, bp, s_hidden)?;
    let scores = tape.sigmoid(logits)?;

    let r_hidden = lp.reg1.apply(tape, bp, pooled)?;
    let r_hidden = tape.leaky_relu(r_hidden, slope)?;
    let offsets = lp.reg2.apply(tape, bp, r_hidden)?;

    let refined = if cfg.flags.no_refine {
        let raw: Vec<T> = proposals
            .iter()
            .flat_map(|p| [T::from_f64(p.start as f64), T::from_f64(p.end as f64)])
            .collect();
        tape.leaf(crate::tensor::Tensor::from_vec(alloc::vec![proposals.len(), 2], raw)?)
    } else {
        tape.refine_bounds(offsets, &segs, cfg.m)?
    };

    Ok(ScoredProposals { logits, scores, offsets, refined })
}

/// Temporal IoU between a proposal's [start, end+1) span and a continuous
/// frame-unit segment.
pub fn proposal_iou(p: Proposal, gt: (f64, f64)) -> f64 {
    interval_iou((p.start as f64, p.end as f64 + 1.0), gt)
}

fn interval_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1.max(b.1) - a.0.min(b.0)).max(f64::MIN_POSITIVE);
    inter / union
}

/// BCE on the scores against scaled-IoU soft labels, plus smooth-L1 boundary
/// regression on positives:
///   y_p = clamp((tIoU_p - tau_lo) / (tau_hi - tau_lo), 0, 1)
///   L = BCE(scores, y) + lambda * smoothL1(refined, gt | tIoU_p > positive_iou)
/// Regression targets are the ground truth in inclusive frame indices
/// (gs, ge - 1). With no positives the regression term is zero.
pub fn localization_loss<T: Real>(
    tape: &mut Tape<T>,
    scored: &ScoredProposals,
    proposals: &[Proposal],
    gt_frames: (f64, f64),
    loss_cfg: &LossConfig,
) -> Result<Var> {
    if proposals.is_empty() {
        return Err(CoreError::InvalidArgument {
            op: "localization_loss",
            detail: "no proposals".into(),
        });
    }
    let span = loss_cfg.tau_hi - loss_cfg.tau_lo;
    let mut labels = Vec::with_capacity(proposals.len());
    let mut mask = Vec::with_capacity(proposals.len());
    let mut targets = Vec::with_capacity(proposals.len() * 2);
    for &p in proposals {
        let iou = proposal_iou(p, gt_frames);
        labels.push(T::from_f64(((iou - loss_cfg.tau_lo) / span).clamp(0.0, 1.0)));
        mask.push(iou > loss_cfg.positive_iou);
        targets.push(T::from_f64(gt_frames.0));
        targets.push(T::from_f64(gt_frames.1 - 1.0));
    }
    let cls = tape.bce_logits_mean(scored.logits, &labels)?;
    let reg = tape.smooth_l1_mean(scored.refined, &targets, &mask)?;
    let reg_scaled = tape.scale_const(reg, T::from_f64(loss_cfg.lambda))?;
    tape.add(cls, reg_scaled)
}

/// Rank the scored proposals and emit the top-n as second-unit predictions.
/// Ties break on earlier start, then smaller width; the sort is stable, so
/// the ranking is identical however the proposals were produced.
pub fn rank_predictions<T: Real>(
    tape: &Tape<T>,
    scored: &ScoredProposals,
    m: usize,
    duration: f64,
    top_n: usize,
) -> Result<Vec<MomentPrediction>> {
    let scores = tape.value(scored.scores).data();
    let refined = tape.value(scored.refined).data();
    let mut items: Vec<MomentPrediction> = scores
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let (t_start, t_end) = frames_to_seconds(
                refined[i * 2].as_f64(),
                refined[i * 2 + 1].as_f64(),
                m,
                duration,
            );
            MomentPrediction { t_start, t_end, score: s.as_f64() }
        })
        .collect();
    items.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.t_start.partial_cmp(&b.t_start).unwrap_or(core::cmp::Ordering::Equal))
            .then((a.t_end - a.t_start).partial_cmp(&(b.t_end - b.t_start)).unwrap_or(core::cmp::Ordering::Equal))
    });
    items.truncate(top_n);
    Ok(items)
}
