//! Temporal tracker: dynamic template update across frames, forward and
//! reversed, fused into the per-frame track features the localizer consumes.
//!
//! Per stream the recurrence is
//!   u_i = FNN(concat(T_orig, T_{i-1}))
//!   h_i = gru(u_i, h_{i-1})
//!   T_i = (h_i + T_orig) ⊙ S_i
//! with T_0 = T_orig and h_0 = 0. Each of the k+2 streams owns its updater;
//! the reversed pass owns a separate set plus its own fusion layer.

use alloc::vec::Vec;

use crate::error::Result;
use crate::generator::TargetBundle;
use crate::model::{AblationFlags, ModelConfig};
use crate::nn::{AffineLayer, BoundParams, GruCellParams, ParamSet};
use crate::rng::SplitMix64;
use crate::tape::{Tape, Var};
use crate::Real;

/// FNN (2D -> D -> D) followed by a GRU cell of width D.
#[derive(Debug, Clone)]
pub struct UpdaterParams {
    pub fnn1: AffineLayer,
    pub fnn2: AffineLayer,
    pub gru: GruCellParams,
}

impl UpdaterParams {
    pub fn init<T: Real>(set: &mut ParamSet<T>, name: &str, d: usize, rng: &mut SplitMix64) -> Self {
        Self {
            fnn1: AffineLayer::init(set, &alloc::format!("{name}.fnn1"), 2 * d, d, true, rng),
            fnn2: AffineLayer::init(set, &alloc::format!("{name}.fnn2"), d, d, true, rng),
            gru: GruCellParams::init(set, &alloc::format!("{name}.gru"), d, rng),
        }
    }
}

/// Updaters for one tracking direction plus the stream-fusion layer.
#[derive(Debug, Clone)]
pub struct DirectionParams {
    pub object_updaters: Vec<UpdaterParams>,
    pub activity_updater: UpdaterParams,
    pub semantic_updater: UpdaterParams,
    /// (k+2)·D -> D
    pub fuse: AffineLayer,
}

impl DirectionParams {
    pub fn init<T: Real>(set: &mut ParamSet<T>, prefix: &str, cfg: &ModelConfig, rng: &mut SplitMix64) -> Self {
        let object_updaters = (0..cfg.k_filters)
            .map(|i| UpdaterParams::init(set, &alloc::format!("{prefix}.obj{i}"), cfg.d, rng))
            .collect();
        let activity_updater = UpdaterParams::init(set, &alloc::format!("{prefix}.act"), cfg.d, rng);
        let semantic_updater = UpdaterParams::init(set, &alloc::format!("{prefix}.sem"), cfg.d, rng);
        let fuse = AffineLayer::init(
            set,
            &alloc::format!("{prefix}.fuse"),
            (cfg.k_filters + 2) * cfg.d,
            cfg.d,
            true,
            rng,
        );
        Self { object_updaters, activity_updater, semantic_updater, fuse }
    }
}

#[derive(Debug, Clone)]
pub struct TrackerParams {
    pub forward: DirectionParams,
    pub reversed: DirectionParams,
}

impl TrackerParams {
    pub fn init<T: Real>(set: &mut ParamSet<T>, cfg: &ModelConfig, rng: &mut SplitMix64) -> Self {
        Self {
            forward: DirectionParams::init(set, "trk.fwd", cfg, rng),
            reversed: DirectionParams::init(set, "trk.rev", cfg, rng),
        }
    }
}

/// All track features for one episode.
pub struct TrackTensor {
    /// k streams of `[M, D]`
    pub object_tracks: Vec<Var>,
    /// `[M, D]`
    pub activity_track: Var,
    /// `[M, D]`
    pub semantic_track: Var,
    /// fused forward features `[M, D]`
    pub fused_forward: Var,
    /// fused reversed features `[M, D]`, already back in forward frame order
    pub fused_reversed: Var,
    /// `[M, 2D]`, forward half first
    pub combined: Var,
}

/// Track one template through one search space. `template` is `[D]` (or a
/// single row), `search` is `[M, D]`; the output stacks T_1..T_M into
/// `[M, D]`.
pub fn track_stream<T: Real>(
    tape: &mut Tape<T>,
    bp: &BoundParams,
    up: &UpdaterParams,
    template: Var,
    search: Var,
    flags: &AblationFlags,
    slope: T,
) -> Result<Var> {
    let d = *tape.shape(search).last().unwrap();
    let m = tape.value(search).numel() / d;
    let mut h = tape.zeros(&[1, d]);
    let mut prev = template;
    let mut steps = Vec::with_capacity(m);
    for i in 0..m {
        let frame = tape.row_slice(search, i, 1)?;
        let step = if flags.no_dtu {
            tape.mul(frame, template)?
        } else {
            let joint = tape.concat_cols(&[template, prev])?;
            let hidden = up.fnn1.apply(tape, bp, joint)?;
            let hidden = tape.leaky_relu(hidden, slope)?;
            let update = up.fnn2.apply(tape, bp, hidden)?;
            let state = if flags.no_gru {
                update
            } else {
                h = up.gru.step(tape, bp, update, h)?;
                h
            };
            let shifted = tape.add(state, template)?;
            tape.mul(shifted, frame)?
        };
        steps.push(step);
        prev = step;
    }
    tape.concat_rows(&steps)
}

/// Track every stream of the bundle with one direction's updaters.
pub fn track_all<T: Real>(
    tape: &mut Tape<T>,
    bp: &BoundParams,
    dp: &DirectionParams,
    object_pairs: &[(Var, Var)],
    activity_pair: (Var, Var),
    semantic_pair: (Var, Var),
    flags: &AblationFlags,
    slope: T,
) -> Result<(Vec<Var>, Var, Var)> {
    let object_tracks = object_pairs
        .iter()
        .zip(&dp.object_updaters)
        .map(|(&(t, s), up)| track_stream(tape, bp, up, t, s, flags, slope))
        .collect::<Result<Vec<_>>>()?;
    let activity_track =
        track_stream(tape, bp, &dp.activity_updater, activity_pair.0, activity_pair.1, flags, slope)?;
    let semantic_track =
        track_stream(tape, bp, &dp.semantic_updater, semantic_pair.0, semantic_pair.1, flags, slope)?;
    Ok((object_tracks, activity_track, semantic_track))
}

/// Concatenate the k+2 streams per frame and project back to width D.
pub fn fuse_tracks<T: Real>(
    tape: &mut Tape<T>,
    bp: &BoundParams,
    fuse: &AffineLayer,
    object_tracks: &[Var],
    activity_track: Var,
    semantic_track: Var,
) -> Result<Var> {
    let mut parts = object_tracks.to_vec();
    parts.push(activity_track);
    parts.push(semantic_track);
    let stacked = tape.concat_cols(&parts)?;
    fuse.apply(tape, bp, stacked)
}

/// Full tracker: forward pass, reversed pass (reverse each search space,
/// track, reverse back), and the concatenated `[M, 2D]` output. The
/// `no_reverse` ablation zeroes the reversed half, keeping the width.
pub fn track_episode<T: Real>(
    tape: &mut Tape<T>,
    bp: &BoundParams,
    tp: &TrackerParams,
    bundle: &TargetBundle,
    cfg: &ModelConfig,
) -> Result<TrackTensor> {
    let slope = T::from_f64(cfg.leaky_slope);
    let flags = &cfg.flags;
    let object_pairs: Vec<(Var, Var)> = bundle
        .object_templates
        .iter()
        .zip(&bundle.object_search)
        .map(|(&t, &s)| (t, s))
        .collect();
    let (object_tracks, activity_track, semantic_track) = track_all(
        tape,
        bp,
        &tp.forward,
        &object_pairs,
        (bundle.activity_template, bundle.activity_search),
        (bundle.semantic_template, bundle.semantic_search),
        flags,
        slope,
    )?;
    let fused_forward =
        fuse_tracks(tape, bp, &tp.forward.fuse, &object_tracks, activity_track, semantic_track)?;

    let fused_reversed = if flags.no_reverse {
        tape.zeros(&[cfg.m, cfg.d])
    } else {
        let rev_object_pairs: Vec<(Var, Var)> = object_pairs
            .iter()
            .map(|&(t, s)| Ok((t, tape.reverse_rows(s)?)))
            .collect::<Result<_>>()?;
        let rev_activity = tape.reverse_rows(bundle.activity_search)?;
        let rev_semantic = tape.reverse_rows(bundle.semantic_search)?;
        let (rev_obj_tracks, rev_act_track, rev_sem_track) = track_all(
            tape,
            bp,
            &tp.reversed,
            &rev_object_pairs,
            (bundle.activity_template, rev_activity),
            (bundle.semantic_template, rev_semantic),
            flags,
            slope,
        )?;
        let fused = fuse_tracks(
            tape,
            bp,
            &tp.reversed.fuse,
            &rev_obj_tracks,
            rev_act_track,
            rev_sem_track,
        )?;
        tape.reverse_rows(fused)?
    };

    let combined = tape.concat_cols(&[fused_forward, fused_reversed])?;
    Ok(TrackTensor {
        object_tracks,
        activity_track,
        semantic_track,
        fused_forward,
        fused_reversed,
        combined,
    })
}
