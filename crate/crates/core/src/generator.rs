//! Cross-modal targets generator: search-space representation, template
//! generation, and the instance filters that reduce K object candidates to
//! k tracked streams.
//!
//! Attention here is a sigmoid gating, not a softmax distribution: every
//! weight lies in (0,1) and rows are not normalized. The same k object
//! filters produce both the search spaces and the templates, so stream i of
//! each corresponds to the same latent target.

#[cfg(not(feature = "std"))]
use num_traits::Float;

use alloc::vec::Vec;

use crate::encoder::EncodedEpisode;
use crate::error::{CoreError, Result};
use crate::model::ModelConfig;
use crate::nn::{AffineLayer, BoundParams, ParamId, ParamSet};
use crate::rng::SplitMix64;
use crate::tape::{Tape, Var};
use crate::Real;

/// Weights of the per-frame object self-attention.
#[derive(Debug, Clone)]
pub struct SelfAttentionParams {
    pub w1: ParamId,
    pub w2: ParamId,
}

/// Weights of one query-guided attention site (X attends over Y).
#[derive(Debug, Clone)]
pub struct QueryAttentionParams {
    pub w3: ParamId,
    pub w4: ParamId,
    pub w5: ParamId,
}

/// Linear layer + Leaky-ReLU + 1d-maxpool unit selecting one target stream.
#[derive(Debug, Clone)]
pub struct InstanceFilter {
    pub affine: AffineLayer,
}

impl InstanceFilter {
    fn init<T: Real>(set: &mut ParamSet<T>, name: &str, d: usize, rng: &mut SplitMix64) -> Self {
        Self { affine: AffineLayer::init(set, name, d, d, true, rng) }
    }
}

/// Filters used on the template side. Shared with the search-side filters
/// unless the sharing ablation is enabled.
#[derive(Debug, Clone)]
pub struct TemplateFilters {
    pub object: Vec<InstanceFilter>,
    pub activity: InstanceFilter,
    pub semantic: InstanceFilter,
}

#[derive(Debug, Clone)]
pub struct GeneratorParams {
    pub self_attn: SelfAttentionParams,
    /// objects attend over words
    pub obj_word: QueryAttentionParams,
    /// activity frames attend over words
    pub act_word: QueryAttentionParams,
    /// activity frames attend over that frame's objects
    pub act_obj: QueryAttentionParams,
    pub object_filters: Vec<InstanceFilter>,
    pub activity_filter: InstanceFilter,
    pub semantic_filter: InstanceFilter,
    /// Present only under the unshared-template-filters ablation.
    pub separate_template_filters: Option<TemplateFilters>,
}

impl GeneratorParams {
    pub fn init<T: Real>(set: &mut ParamSet<T>, cfg: &ModelConfig, rng: &mut SplitMix64) -> Self {
        let d = cfg.d;
        let mat = |name: alloc::string::String, s: &mut ParamSet<T>, r: &mut SplitMix64| {
            s.add(name, crate::model::uniform_matrix(d, d, r))
        };
        let self_attn = SelfAttentionParams {
            w1: mat("gen.self.w1".into(), set, rng),
            w2: mat("gen.self.w2".into(), set, rng),
        };
        let site = |prefix: &str, s: &mut ParamSet<T>, r: &mut SplitMix64| QueryAttentionParams {
            w3: s.add(alloc::format!("{prefix}.w3"), crate::model::uniform_matrix(d, d, r)),
            w4: s.add(alloc::format!("{prefix}.w4"), crate::model::uniform_matrix(d, d, r)),
            w5: s.add(alloc::format!("{prefix}.w5"), crate::model::uniform_matrix(d, d, r)),
        };
        let obj_word = site("gen.obj_word", set, rng);
        let act_word = site("gen.act_word", set, rng);
        let act_obj = site("gen.act_obj", set, rng);
        let object_filters = (0..cfg.k_filters)
            .map(|i| InstanceFilter::init(set, &alloc::format!("gen.filter.obj{i}"), d, rng))
            .collect();
        let activity_filter = InstanceFilter::init(set, "gen.filter.act", d, rng);
        let semantic_filter = InstanceFilter::init(set, "gen.filter.sem", d, rng);
        let separate_template_filters = cfg.flags.no_tg_filters_shared.then(|| TemplateFilters {
            object: (0..cfg.k_filters)
                .map(|i| InstanceFilter::init(set, &alloc::format!("gen.tfilter.obj{i}"), d, rng))
                .collect(),
            activity: InstanceFilter::init(set, "gen.tfilter.act", d, rng),
            semantic: InstanceFilter::init(set, "gen.tfilter.sem", d, rng),
        });
        Self {
            self_attn,
            obj_word,
            act_word,
            act_obj,
            object_filters,
            activity_filter,
            semantic_filter,
            separate_template_filters,
        }
    }

    fn template_object_filters(&self) -> &[InstanceFilter] {
        match &self.separate_template_filters {
            Some(t) => &t.object,
            None => &self.object_filters,
        }
    }

    fn template_activity_filter(&self) -> &InstanceFilter {
        match &self.separate_template_filters {
            Some(t) => &t.activity,
            None => &self.activity_filter,
        }
    }

    fn template_semantic_filter(&self) -> &InstanceFilter {
        match &self.separate_template_filters {
            Some(t) => &t.semantic,
            None => &self.semantic_filter,
        }
    }
}

/// Search spaces and original templates for one episode.
pub struct TargetBundle {
    /// k streams of `[M, D]`
    pub object_search: Vec<Var>,
    /// `[M, D]`
    pub activity_search: Var,
    /// `[M, D]`
    pub semantic_search: Var,
    /// k templates of `[D]`
    pub object_templates: Vec<Var>,
    /// `[D]`
    pub activity_template: Var,
    /// `[D]`
    pub semantic_template: Var,
}

/// Per-frame self-attention over the K objects:
/// out = sigmoid((V·W1)(V·W2)ᵀ) · V / sqrt(D). The 1/sqrt(D) tempers the
/// value product, not the scores.
pub fn object_self_attention<T: Real>(
    tape: &mut Tape<T>,
    bp: &BoundParams,
    p: &SelfAttentionParams,
    frame: Var,
    d: usize,
) -> Result<Var> {
    let q = tape.matmul(frame, bp.var(p.w1))?;
    let k = tape.matmul(frame, bp.var(p.w2))?;
    let scores = tape.matmul_nt(q, k)?;
    let gates = tape.sigmoid(scores)?;
    let mixed = tape.matmul(gates, frame)?;
    tape.scale_const(mixed, T::from_f64(1.0 / (d as f64).sqrt()))
}

/// Query-guided attention: X highlights the rows of Y it correlates with.
/// weights = sigmoid((X·W3)(Y·W4)ᵀ / sqrt(D)), out = weights · (Y·W5).
/// Returns (weights, out); every weight lies strictly in (0,1).
pub fn query_guided_attention<T: Real>(
    tape: &mut Tape<T>,
    bp: &BoundParams,
    p: &QueryAttentionParams,
    x: Var,
    y: Var,
    d: usize,
) -> Result<(Var, Var)> {
    let xq = tape.matmul(x, bp.var(p.w3))?;
    let yk = tape.matmul(y, bp.var(p.w4))?;
    let raw = tape.matmul_nt(xq, yk)?;
    let scaled = tape.scale_const(raw, T::from_f64(1.0 / (d as f64).sqrt()))?;
    let weights = tape.sigmoid(scaled)?;
    let yv = tape.matmul(y, bp.var(p.w5))?;
    let out = tape.matmul(weights, yv)?;
    Ok((weights, out))
}

/// Cosine affinity between every query row and every candidate row,
/// plus the affinity-weighted sum of candidates:
/// w[i,j] = cos(q_i, v_j), out_i = sum_j w[i,j] v_j.
pub fn word_object_affinity<T: Real>(
    tape: &mut Tape<T>,
    queries: Var,
    candidates: Var,
) -> Result<(Var, Var)> {
    let w = tape.cosine_rows(queries, candidates)?;
    let out = tape.matmul(w, candidates)?;
    Ok((w, out))
}

/// Apply one instance filter per frame and max-pool over the object axis,
/// stacking the frames into `[M, D]`. With `no_filter` the affine +
/// activation is skipped and only the pooling remains.
pub fn search_filter_frames<T: Real>(
    tape: &mut Tape<T>,
    bp: &BoundParams,
    filter: &InstanceFilter,
    frames: &[Var],
    slope: T,
    no_filter: bool,
) -> Result<Var> {
    let mut pooled = Vec::with_capacity(frames.len());
    for &frame in frames {
        let activated = if no_filter {
            frame
        } else {
            let lin = filter.affine.apply(tape, bp, frame)?;
            tape.leaky_relu(lin, slope)?
        };
        pooled.push(tape.max_axis(activated, 0)?);
    }
    tape.concat_rows(&pooled)
}

/// Apply one instance filter to stacked query-aware features `[R, D]` and
/// max-pool jointly over all rows, yielding a `[D]` template.
pub fn template_filter<T: Real>(
    tape: &mut Tape<T>,
    bp: &BoundParams,
    filter: &InstanceFilter,
    stacked: Var,
    slope: T,
    no_filter: bool,
) -> Result<Var> {
    let activated = if no_filter {
        stacked
    } else {
        let lin = filter.affine.apply(tape, bp, stacked)?;
        tape.leaky_relu(lin, slope)?
    };
    tape.max_axis(activated, 0)
}

/// Run the full generator for one episode.
pub fn build_targets<T: Real>(
    tape: &mut Tape<T>,
    bp: &BoundParams,
    gp: &GeneratorParams,
    cfg: &ModelConfig,
    enc: &EncodedEpisode,
) -> Result<TargetBundle> {
    if cfg.k_filters > cfg.k_objects {
        return Err(CoreError::InvalidArgument {
            op: "build_targets",
            detail: alloc::format!(
                "k_filters {} exceeds k_objects {}",
                cfg.k_filters,
                cfg.k_objects
            ),
        });
    }
    let slope = T::from_f64(cfg.leaky_slope);
    let (m, k) = (cfg.m, cfg.k_objects);
    let no_ssr = cfg.flags.no_ssr;
    let no_filter = cfg.flags.no_filter;

    // Per-frame views of the object features.
    let obj_frames: Vec<Var> =
        (0..m).map(|t| tape.row_slice(enc.object_features, t * k, k)).collect::<Result<_>>()?;

    // Self-attended objects; with no_ssr the attention stages are bypassed.
    let attended_frames: Vec<Var> = if no_ssr {
        obj_frames.clone()
    } else {
        obj_frames
            .iter()
            .map(|&f| object_self_attention(tape, bp, &gp.self_attn, f, cfg.d))
            .collect::<Result<_>>()?
    };

    // Word-guided object features per frame.
    let word_guided_frames: Vec<Var> = if no_ssr {
        attended_frames.clone()
    } else {
        attended_frames
            .iter()
            .map(|&f| {
                query_guided_attention(tape, bp, &gp.obj_word, f, enc.word_features, cfg.d)
                    .map(|(_, out)| out)
            })
            .collect::<Result<_>>()?
    };

    // k object search spaces.
    let object_search: Vec<Var> = gp
        .object_filters
        .iter()
        .map(|f| search_filter_frames(tape, bp, f, &word_guided_frames, slope, no_filter))
        .collect::<Result<_>>()?;

    // Activity search space.
    let word_guided_activity = if no_ssr {
        enc.activity_features
    } else {
        query_guided_attention(tape, bp, &gp.act_word, enc.activity_features, enc.word_features, cfg.d)?.1
    };
    let activity_search = if no_filter {
        word_guided_activity
    } else {
        let lin = gp.activity_filter.affine.apply(tape, bp, word_guided_activity)?;
        tape.leaky_relu(lin, slope)?
    };

    // Semantic features: each activity frame attends over that frame's
    // attended objects.
    let semantic_frames: Vec<Var> = if no_ssr {
        (0..m).map(|t| tape.row_slice(enc.activity_features, t, 1)).collect::<Result<_>>()?
    } else {
        (0..m)
            .map(|t| {
                let act_row = tape.row_slice(enc.activity_features, t, 1)?;
                query_guided_attention(tape, bp, &gp.act_obj, act_row, attended_frames[t], cfg.d)
                    .map(|(_, out)| out)
            })
            .collect::<Result<_>>()?
    };
    let semantic_features = tape.concat_rows(&semantic_frames)?;
    let semantic_search = tape.mul_row_vec(semantic_features, enc.sentence_feature)?;

    // Word-object affinity per frame, stacked to [M*N, D].
    let mut object_aware: Vec<Var> = Vec::with_capacity(m);
    let mut activity_aware: Vec<Var> = Vec::with_capacity(m);
    for t in 0..m {
        let (_, q_obj) = word_object_affinity(tape, enc.word_features, obj_frames[t])?;
        object_aware.push(q_obj);
        let act_row = tape.row_slice(enc.activity_features, t, 1)?;
        let (_, q_act) = word_object_affinity(tape, enc.word_features, act_row)?;
        activity_aware.push(q_act);
    }
    let object_aware_all = tape.concat_rows(&object_aware)?;
    let activity_aware_all = tape.concat_rows(&activity_aware)?;

    let object_templates: Vec<Var> = gp
        .template_object_filters()
        .iter()
        .map(|f| template_filter(tape, bp, f, object_aware_all, slope, no_filter))
        .collect::<Result<_>>()?;
    let activity_template = template_filter(
        tape,
        bp,
        gp.template_activity_filter(),
        activity_aware_all,
        slope,
        no_filter,
    )?;

    // Semantic template: the sentence embedding acts as a single query word
    // against the per-frame semantic features.
    let sem_w = tape.cosine_rows(enc.sentence_feature, semantic_features)?;
    let sem_w_col = tape.transpose(sem_w)?;
    let sentence_aware = tape.scale_rows(semantic_features, sem_w_col)?;
    let semantic_template = template_filter(
        tape,
        bp,
        gp.template_semantic_filter(),
        sentence_aware,
        slope,
        no_filter,
    )?;

    Ok(TargetBundle {
        object_search,
        activity_search,
        semantic_search,
        object_templates,
        activity_template,
        semantic_template,
    })
}
