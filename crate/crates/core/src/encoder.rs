//! Feature encoder: spatial fusion of object features, activity resampling,
//! query projection. Everything leaves this module at the shared model
//! width D.

#[cfg(not(feature = "std"))]
use num_traits::Float;

use alloc::format;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::inputs::EpisodeTensors;
use crate::model::ModelConfig;
use crate::nn::{AffineLayer, BoundParams, ParamSet};
use crate::rng::SplitMix64;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::Real;

#[derive(Debug, Clone)]
pub struct EncoderParams {
    /// (D_o + 4) -> D, applied to object features with their box appended.
    pub fuse: AffineLayer,
    /// D_in -> D; absent when the activity features already have width D.
    pub activity: Option<AffineLayer>,
    /// D_w -> D word projection.
    pub word: AffineLayer,
    /// D_g -> D sentence projection.
    pub global: AffineLayer,
}

impl EncoderParams {
    pub fn init<T: Real>(set: &mut ParamSet<T>, cfg: &ModelConfig, rng: &mut SplitMix64) -> Self {
        let fuse = AffineLayer::init(set, "enc.fuse", cfg.d_o + 4, cfg.d, true, rng);
        let activity = (cfg.d_in != cfg.d)
            .then(|| AffineLayer::init(set, "enc.activity", cfg.d_in, cfg.d, true, rng));
        let word = AffineLayer::init(set, "enc.word", cfg.d_w, cfg.d, true, rng);
        let global = AffineLayer::init(set, "enc.global", cfg.d_g, cfg.d, true, rng);
        Self { fuse, activity, word, global }
    }
}

/// Model-width features for one episode, on the tape.
pub struct EncodedEpisode {
    /// `[M, K, D]`
    pub object_features: Var,
    /// `[M, D]`
    pub activity_features: Var,
    /// `[N, D]`
    pub word_features: Var,
    /// `[1, D]`
    pub sentence_feature: Var,
    /// Words dropped because the query exceeded N_max.
    pub truncated_words: usize,
}

/// Concatenate each object's box onto its feature vector: `[M, K, D_o + 4]`.
pub fn fuse_object_boxes<T: Real>(objects: &Tensor<T>, boxes: &Tensor<T>) -> Result<Tensor<T>> {
    let os = objects.shape();
    let bs = boxes.shape();
    if os.len() != 3 || bs.len() != 3 || os[0] != bs[0] || os[1] != bs[1] || bs[2] != 4 {
        return Err(CoreError::ShapeMismatch {
            op: "fuse_object_boxes",
            lhs: os.to_vec(),
            rhs: bs.to_vec(),
        });
    }
    let (m, k, d_o) = (os[0], os[1], os[2]);
    let od = objects.data();
    let bd = boxes.data();
    let mut out = Vec::with_capacity(m * k * (d_o + 4));
    for i in 0..m * k {
        out.extend_from_slice(&od[i * d_o..(i + 1) * d_o]);
        out.extend_from_slice(&bd[i * 4..(i + 1) * 4]);
    }
    Tensor::from_vec(alloc::vec![m, k, d_o + 4], out)
}

/// Linearly resample the rows of `[M_raw, D]` to exactly `m` rows. Row `i`
/// reads source position `i * (M_raw - 1) / (m - 1)`; endpoints are
/// preserved exactly.
pub fn resample_activity<T: Real>(features: &Tensor<T>, m: usize) -> Result<Tensor<T>> {
    let shape = features.shape();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(CoreError::InvalidArgument {
            op: "resample_activity",
            detail: format!("expected non-empty [M_raw, D], got {shape:?}"),
        });
    }
    if m < 2 {
        return Err(CoreError::InvalidArgument {
            op: "resample_activity",
            detail: format!("target frame count {m} must be >= 2"),
        });
    }
    let (m_raw, d) = (shape[0], shape[1]);
    if m_raw == m {
        return Ok(features.clone());
    }
    let data = features.data();
    let mut out = Vec::with_capacity(m * d);
    for i in 0..m {
        if m_raw == 1 {
            out.extend_from_slice(&data[..d]);
            continue;
        }
        let pos = i as f64 * (m_raw - 1) as f64 / (m - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(m_raw - 1);
        let frac = T::from_f64(pos - lo as f64);
        let one = T::one();
        for j in 0..d {
            out.push(data[lo * d + j] * (one - frac) + data[hi * d + j] * frac);
        }
    }
    Tensor::from_vec(alloc::vec![m, d], out)
}

/// Run the encoder over raw episode tensors, pushing the inputs onto the
/// tape as constants. Queries longer than N_max are truncated; the number
/// of dropped words is reported for the caller's run log.
pub fn encode<T: Real>(
    tape: &mut Tape<T>,
    bp: &BoundParams,
    enc: &EncoderParams,
    cfg: &ModelConfig,
    ep: &EpisodeTensors<T>,
) -> Result<EncodedEpisode> {
    let fused = fuse_object_boxes(&ep.objects, &ep.boxes)?;
    let fused_leaf = tape.leaf(fused);
    let object_features = enc.fuse.apply(tape, bp, fused_leaf)?;

    let resampled = resample_activity(&ep.activity, cfg.m)?;
    if resampled.shape()[1] != cfg.d_in {
        return Err(CoreError::InvalidArgument {
            op: "encode",
            detail: format!(
                "activity width {} does not match configured D_in {}",
                resampled.shape()[1],
                cfg.d_in
            ),
        });
    }
    let act_leaf = tape.leaf(resampled);
    let activity_features = match &enc.activity {
        Some(layer) => layer.apply(tape, bp, act_leaf)?,
        None => act_leaf,
    };

    let n = ep.words.shape()[0];
    let truncated_words = n.saturating_sub(cfg.n_max);
    let words = if truncated_words > 0 {
        let d_w = ep.words.shape()[1];
        let kept = ep.words.data()[..cfg.n_max * d_w].to_vec();
        Tensor::from_vec(alloc::vec![cfg.n_max, d_w], kept)?
    } else {
        ep.words.clone()
    };
    let words_leaf = tape.leaf(words);
    let word_features = enc.word.apply(tape, bp, words_leaf)?;

    let global = Tensor::from_vec(alloc::vec![1, ep.global.numel()], ep.global.data().to_vec())?;
    let global_leaf = tape.leaf(global);
    let sentence_feature = enc.global.apply(tape, bp, global_leaf)?;

    Ok(EncodedEpisode {
        object_features,
        activity_features,
        word_features,
        sentence_feature,
        truncated_words,
    })
}
