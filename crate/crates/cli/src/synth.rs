//! Synthetic episode generator.
//!
//! Every episode plants one target object track whose features carry an
//! additive action signature inside the ground-truth segment, with the
//! query naming the target's class word and the action word. Prototypes are
//! orthonormal, so at signature strength zero the segment is statistically
//! indistinguishable from background and the dataset becomes a negative
//! control.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tstnet_core::inputs::{EpisodeTensors, GroundTruth};
use tstnet_core::rng::SplitMix64;
use tstnet_core::Tensor;

use crate::manifest::{write_manifest, DataError, EpisodeManifest, GtSegment};
use crate::record::write_tensor;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub episodes: usize,
    /// Frames per episode; one frame spans one second.
    pub m: usize,
    pub k_objects: usize,
    pub d_o: usize,
    pub d_w: usize,
    pub vocab: usize,
    pub noise_sigma: f64,
    /// Additive strength of the action prototype inside the segment.
    pub signature_strength: f64,
    pub seg_frac_min: f64,
    pub seg_frac_max: f64,
    pub distractors: usize,
    /// Absolute index of the first generated episode. Episode contents
    /// depend only on their absolute index (and the seed), so disjoint
    /// ranges from the same seed share prototype tables but no episodes.
    pub first_episode: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            episodes: 128,
            m: 32,
            k_objects: 6,
            d_o: 32,
            d_w: 16,
            vocab: 12,
            noise_sigma: 0.1,
            signature_strength: 0.5,
            seg_frac_min: 0.15,
            seg_frac_max: 0.4,
            distractors: 2,
            first_episode: 0,
        }
    }
}

/// What the generator decided for one episode; the oracle tests use this.
#[derive(Debug, Clone)]
pub struct EpisodePlan {
    pub id: String,
    pub class_word: usize,
    pub action_word: usize,
    pub target_slot: usize,
    pub gt_start_frame: usize,
    pub gt_len: usize,
}

/// Fixed tables derived from the seed: orthonormal class and action
/// prototypes in object-feature space, plus the word-embedding table.
pub struct Prototypes {
    pub class_protos: Vec<Vec<f64>>,
    pub action_protos: Vec<Vec<f64>>,
    pub word_table: Vec<Vec<f64>>,
}

pub struct SynthEpisode {
    pub plan: EpisodePlan,
    pub tensors: EpisodeTensors<f32>,
    pub gt: GroundTruth,
    pub duration: f64,
}

fn orthonormal_rows(count: usize, dim: usize, rng: &mut SplitMix64) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(count);
    while rows.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        for prev in &rows {
            let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (x, p) in v.iter_mut().zip(prev) {
                *x -= dot * p;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue; // resample a degenerate draw
        }
        for x in v.iter_mut() {
            *x /= norm;
        }
        rows.push(v);
    }
    rows
}

pub fn prototypes(cfg: &SynthConfig) -> Result<Prototypes, DataError> {
    if 2 * cfg.vocab > cfg.d_o {
        return Err(DataError::Invalid {
            episode_id: "<synth>".into(),
            detail: format!(
                "orthonormal prototypes need 2*vocab <= d_o, got vocab {} vs d_o {}",
                cfg.vocab, cfg.d_o
            ),
        });
    }
    let mut rng = SplitMix64::new(cfg.seed);
    let all = orthonormal_rows(2 * cfg.vocab, cfg.d_o, &mut rng);
    let (class_protos, action_protos) = all.split_at(cfg.vocab);
    let mut word_rng = SplitMix64::new(cfg.seed ^ 0x77_00_55);
    let word_table: Vec<Vec<f64>> = (0..cfg.vocab)
        .map(|_| {
            let v: Vec<f64> = (0..cfg.d_w).map(|_| word_rng.normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    Ok(Prototypes {
        class_protos: class_protos.to_vec(),
        action_protos: action_protos.to_vec(),
        word_table,
    })
}

/// Generate all episodes in memory. Pure function of the config.
pub fn synthesize(cfg: &SynthConfig) -> Result<(Prototypes, Vec<SynthEpisode>), DataError> {
    if !(cfg.seg_frac_min > 0.0 && cfg.seg_frac_min <= cfg.seg_frac_max && cfg.seg_frac_max <= 1.0)
    {
        return Err(DataError::Invalid {
            episode_id: "<synth>".into(),
            detail: format!(
                "segment fraction range ({}, {}) must lie in (0, 1]",
                cfg.seg_frac_min, cfg.seg_frac_max
            ),
        });
    }
    let protos = prototypes(cfg)?;
    let mut episodes = Vec::with_capacity(cfg.episodes);
    for index in cfg.first_episode..cfg.first_episode + cfg.episodes {
        // per-episode stream keyed on the absolute index
        let mut rng =
            SplitMix64::new(cfg.seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        episodes.push(synthesize_episode(cfg, &protos, index, &mut rng));
    }
    Ok((protos, episodes))
}

fn synthesize_episode(
    cfg: &SynthConfig,
    protos: &Prototypes,
    index: usize,
    rng: &mut SplitMix64,
) -> SynthEpisode {
    let (m, k, d_o) = (cfg.m, cfg.k_objects, cfg.d_o);
    let class_word = rng.below(cfg.vocab);
    let action_word = rng.below(cfg.vocab);
    let target_slot = rng.below(k);

    // segment
    let frac = rng.uniform(cfg.seg_frac_min, cfg.seg_frac_max);
    let gt_len = ((frac * m as f64).round() as usize).clamp(1, m);
    let gt_start = rng.below(m - gt_len + 1);

    // query: class word, action word, then distractors
    let mut word_ids = vec![class_word, action_word];
    for _ in 0..cfg.distractors {
        word_ids.push(rng.below(cfg.vocab));
    }
    let n = word_ids.len();
    let mut words = Vec::with_capacity(n * cfg.d_w);
    for w in &word_ids {
        words.extend(protos.word_table[*w].iter().map(|x| *x as f32));
    }
    let mut global: Vec<f64> = protos.word_table[class_word]
        .iter()
        .zip(&protos.word_table[action_word])
        .map(|(a, b)| a + b)
        .collect();
    let gnorm = global.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
    let global: Vec<f32> = global.drain(..).map(|x| (x / gnorm) as f32).collect();

    // object classes: the target slot carries the queried class, the rest
    // must not
    let mut slot_classes = vec![0usize; k];
    for (j, slot) in slot_classes.iter_mut().enumerate() {
        if j == target_slot {
            *slot = class_word;
        } else {
            loop {
                let w = rng.below(cfg.vocab);
                if w != class_word {
                    *slot = w;
                    break;
                }
            }
        }
    }

    let in_gt = |t: usize| t >= gt_start && t < gt_start + gt_len;
    let mut objects = Vec::with_capacity(m * k * d_o);
    for t in 0..m {
        for (j, class) in slot_classes.iter().enumerate() {
            for c in 0..d_o {
                let mut v = protos.class_protos[*class][c] + cfg.noise_sigma * rng.normal();
                if j == target_slot && in_gt(t) {
                    v += cfg.signature_strength * protos.action_protos[action_word][c];
                }
                objects.push(v as f32);
            }
        }
    }

    // activity: the active signature inside the segment, noise outside
    let mut activity = Vec::with_capacity(m * d_o);
    for t in 0..m {
        for c in 0..d_o {
            let mut v = cfg.noise_sigma * rng.normal();
            if in_gt(t) {
                v += cfg.signature_strength * protos.action_protos[action_word][c];
            }
            activity.push(v as f32);
        }
    }

    // boxes: fixed extents per object, random-walking center kept inside
    // the unit square
    let mut boxes = vec![0.0f32; m * k * 4];
    for j in 0..k {
        let w = rng.uniform(0.1, 0.3);
        let h = rng.uniform(0.1, 0.3);
        let mut cx = rng.uniform(0.25, 0.75);
        let mut cy = rng.uniform(0.25, 0.75);
        for t in 0..m {
            cx = (cx + 0.03 * rng.normal()).clamp(w / 2.0, 1.0 - w / 2.0);
            cy = (cy + 0.03 * rng.normal()).clamp(h / 2.0, 1.0 - h / 2.0);
            let base = (t * k + j) * 4;
            boxes[base] = (cx - w / 2.0) as f32;
            boxes[base + 1] = (cy - h / 2.0) as f32;
            boxes[base + 2] = (cx + w / 2.0) as f32;
            boxes[base + 3] = (cy + h / 2.0) as f32;
        }
    }

    let duration = m as f64;
    SynthEpisode {
        plan: EpisodePlan {
            id: format!("ep{index:04}"),
            class_word,
            action_word,
            target_slot,
            gt_start_frame: gt_start,
            gt_len,
        },
        tensors: EpisodeTensors {
            objects: Tensor::from_vec(vec![m, k, d_o], objects).expect("objects shape"),
            boxes: Tensor::from_vec(vec![m, k, 4], boxes).expect("boxes shape"),
            activity: Tensor::from_vec(vec![m, d_o], activity).expect("activity shape"),
            words: Tensor::from_vec(vec![n, cfg.d_w], words).expect("words shape"),
            global: Tensor::from_vec(vec![cfg.d_w], global).expect("global shape"),
        },
        gt: GroundTruth { t_start: gt_start as f64, t_end: (gt_start + gt_len) as f64 },
        duration,
    }
}

/// Generate and write a dataset directory: `episodes/<id>/manifest.json`
/// plus the five tensor records per episode.
pub fn generate(cfg: &SynthConfig, out_dir: &Path) -> Result<Vec<EpisodePlan>, DataError> {
    let (_, episodes) = synthesize(cfg)?;
    let io = |path: &Path| {
        let p = path.to_path_buf();
        move |source: std::io::Error| DataError::Io { path: p.clone(), source }
    };
    let rec = |id: &str, path: &Path| {
        let (id, p) = (id.to_string(), path.to_path_buf());
        move |source: crate::record::RecordError| DataError::BadRecord {
            episode_id: id.clone(),
            path: p.clone(),
            source,
        }
    };
    let mut plans = Vec::with_capacity(episodes.len());
    for ep in episodes {
        let dir = out_dir.join("episodes").join(&ep.plan.id);
        fs::create_dir_all(&dir).map_err(io(&dir))?;
        let files = [
            ("objects.tsrf", &ep.tensors.objects),
            ("boxes.tsrf", &ep.tensors.boxes),
            ("activity.tsrf", &ep.tensors.activity),
            ("words.tsrf", &ep.tensors.words),
            ("global.tsrf", &ep.tensors.global),
        ];
        for (name, tensor) in files {
            let path = dir.join(name);
            write_tensor(&path, tensor).map_err(rec(&ep.plan.id, &path))?;
        }
        write_manifest(
            &dir,
            &EpisodeManifest {
                episode_id: ep.plan.id.clone(),
                duration_seconds: ep.duration,
                objects: "objects.tsrf".into(),
                boxes: "boxes.tsrf".into(),
                activity: "activity.tsrf".into(),
                words: "words.tsrf".into(),
                global: "global.tsrf".into(),
                gt: GtSegment { t_start: ep.gt.t_start, t_end: ep.gt.t_end },
            },
        )?;
        plans.push(ep.plan);
    }
    Ok(plans)
}
