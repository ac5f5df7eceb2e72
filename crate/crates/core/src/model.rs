//! Model configuration, parameter construction, and the end-to-end forward
//! pipeline: encode -> generate targets -> track -> localize.

#[cfg(not(feature = "std"))]
use num_traits::Float;

use alloc::vec::Vec;

use crate::encoder::{encode, EncodedEpisode, EncoderParams};
use crate::error::Result;
use crate::generator::{build_targets, GeneratorParams, TargetBundle};
use crate::inputs::{EpisodeTensors, GroundTruth};
use crate::localizer::{
    enumerate_proposals, localization_loss, rank_predictions, score_proposals, seconds_to_frames,
    LocalizerParams, LossConfig, MomentPrediction, Proposal, ScoredProposals,
};
use crate::nn::{BoundParams, ParamSet};
use crate::rng::SplitMix64;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::tracker::{track_episode, TrackerParams, TrackTensor};
use crate::Real;

/// Switches that disable individual architecture components, for ablation
/// runs. Defaults are all off (full model).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AblationFlags {
    /// Bypass the attention stages of search-space construction.
    pub no_ssr: bool,
    /// Give the template side its own filter parameters instead of sharing
    /// the search-side filters.
    pub no_tg_filters_shared: bool,
    /// Replace every instance filter's affine + activation with identity,
    /// keeping only the pooling.
    pub no_filter: bool,
    /// Bypass the template updater entirely: T_i = T_orig ⊙ S_i.
    pub no_dtu: bool,
    /// Drop the GRU from the updater, keeping only the FNN.
    pub no_gru: bool,
    /// Zero the reversed track features (width is preserved).
    pub no_reverse: bool,
    /// Skip boundary refinement; predictions come from the raw grid.
    pub no_refine: bool,
}

/// Architecture dimensions and behavior switches.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Shared hidden width D.
    pub d: usize,
    /// Objects per frame K.
    pub k_objects: usize,
    /// Instance filters / tracked object streams k.
    pub k_filters: usize,
    /// Region-feature width.
    pub d_o: usize,
    /// Raw activity-feature width.
    pub d_in: usize,
    /// Word-embedding width.
    pub d_w: usize,
    /// Sentence-embedding width.
    pub d_g: usize,
    /// Frames per episode M.
    pub m: usize,
    /// Maximum query length; longer queries are truncated.
    pub n_max: usize,
    pub proposal_budget: usize,
    pub leaky_slope: f64,
    pub flags: AblationFlags,
    pub loss: LossConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 512,
            k_objects: 15,
            k_filters: 5,
            d_o: 1024,
            d_in: 4096,
            d_w: 300,
            d_g: 2400,
            m: 64,
            n_max: 25,
            proposal_budget: 384,
            leaky_slope: 0.01,
            flags: AblationFlags::default(),
            loss: LossConfig::default(),
        }
    }
}

pub(crate) fn uniform_matrix<T: Real>(rows: usize, cols: usize, rng: &mut SplitMix64) -> Tensor<T> {
    let bound = 1.0 / (rows as f64).sqrt();
    let data = (0..rows * cols).map(|_| T::from_f64(rng.uniform(-bound, bound))).collect();
    Tensor::from_vec(alloc::vec![rows, cols], data).expect("matrix shape")
}

/// All layer handles of the model. The actual tensors live in a [`ParamSet`]
/// so they can be cast, checkpointed and updated independently of this
/// structure.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub generator: GeneratorParams,
    pub tracker: TrackerParams,
    pub localizer: LocalizerParams,
}

impl ModelParams {
    /// Deterministic initialization from a seed; the parameter order within
    /// the returned set is fixed by construction order.
    pub fn init(cfg: &ModelConfig, seed: u64) -> (Self, ParamSet<f32>) {
        let mut rng = SplitMix64::new(seed);
        let mut set = ParamSet::new();
        let encoder = EncoderParams::init(&mut set, cfg, &mut rng);
        let generator = GeneratorParams::init(&mut set, cfg, &mut rng);
        let tracker = TrackerParams::init(&mut set, cfg, &mut rng);
        let localizer = LocalizerParams::init(&mut set, cfg, &mut rng);
        (Self { encoder, generator, tracker, localizer }, set)
    }
}

/// Everything the forward pass produces for one episode.
pub struct PipelineOutput {
    pub encoded: EncodedEpisode,
    pub bundle: TargetBundle,
    pub tracks: TrackTensor,
    pub proposals: Vec<Proposal>,
    pub scored: ScoredProposals,
}

/// Full forward pass for one episode.
pub fn forward<T: Real>(
    tape: &mut Tape<T>,
    bp: &BoundParams,
    mp: &ModelParams,
    cfg: &ModelConfig,
    ep: &EpisodeTensors<T>,
) -> Result<PipelineOutput> {
    let encoded = encode(tape, bp, &mp.encoder, cfg, ep)?;
    let bundle = build_targets(tape, bp, &mp.generator, cfg, &encoded)?;
    let tracks = track_episode(tape, bp, &mp.tracker, &bundle, cfg)?;
    let proposals = enumerate_proposals(cfg.m, cfg.proposal_budget)?;
    let scored = score_proposals(tape, bp, &mp.localizer, tracks.combined, &proposals, cfg)?;
    Ok(PipelineOutput { encoded, bundle, tracks, proposals, scored })
}

/// Forward pass plus the training loss against a ground-truth segment.
pub fn forward_loss<T: Real>(
    tape: &mut Tape<T>,
    bp: &BoundParams,
    mp: &ModelParams,
    cfg: &ModelConfig,
    ep: &EpisodeTensors<T>,
    gt: GroundTruth,
    duration: f64,
) -> Result<(Var, PipelineOutput)> {
    gt.validate(duration)?;
    let out = forward(tape, bp, mp, cfg, ep)?;
    let gt_frames = seconds_to_frames(gt.t_start, gt.t_end, cfg.m, duration);
    let loss = localization_loss(tape, &out.scored, &out.proposals, gt_frames, &cfg.loss)?;
    Ok((loss, out))
}

/// Run the model in inference mode and return the ranked top-n predictions.
pub fn predict<T: Real>(
    set: &ParamSet<T>,
    mp: &ModelParams,
    cfg: &ModelConfig,
    ep: &EpisodeTensors<T>,
    duration: f64,
    top_n: usize,
) -> Result<Vec<MomentPrediction>> {
    let mut tape = Tape::new();
    let bp = BoundParams::bind(&mut tape, set);
    let out = forward(&mut tape, &bp, mp, cfg, ep)?;
    rank_predictions(&tape, &out.scored, cfg.m, duration, top_n)
}
