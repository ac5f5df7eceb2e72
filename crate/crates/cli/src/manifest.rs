//! Episode manifests and dataset loading.
//!
//! A dataset directory holds `episodes/<id>/manifest.json`; every manifest
//! references the tensor records of one video-query pair, with paths
//! relative to its own directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tstnet_core::inputs::{EpisodeTensors, GroundTruth};

use crate::record::{read_tensor, RecordError};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GtSegment {
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpisodeManifest {
    pub episode_id: String,
    pub duration_seconds: f64,
    /// Tensor record paths, relative to the manifest's directory.
    pub objects: String,
    pub boxes: String,
    pub activity: String,
    pub words: String,
    pub global: String,
    pub gt: GtSegment,
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("episode {episode_id}: manifest parse failure: {detail}")]
    ManifestParse { episode_id: String, detail: String },
    #[error("episode {episode_id}: missing or unreadable file {path}: {source}")]
    BadRecord { episode_id: String, path: PathBuf, source: RecordError },
    #[error("{file}: expected shape {expected}, got {actual:?}")]
    ShapeMismatch { file: String, expected: String, actual: Vec<usize> },
    #[error("episode {episode_id}: {detail}")]
    Invalid { episode_id: String, detail: String },
    #[error("dataset directory {0} has no episodes")]
    Empty(PathBuf),
}

/// Expected tensor dimensions, taken from the training configuration.
#[derive(Debug, Clone, Copy)]
pub struct DataShape {
    pub m: usize,
    pub k_objects: usize,
    pub d_o: usize,
    pub d_in: usize,
    pub d_w: usize,
    pub d_g: usize,
}

#[derive(Debug, Clone)]
pub struct LoadedEpisode {
    pub id: String,
    pub tensors: EpisodeTensors<f32>,
    pub gt: GroundTruth,
    pub duration: f64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

pub fn write_manifest(dir: &Path, manifest: &EpisodeManifest) -> Result<(), DataError> {
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(io_err(&path))
}

/// Load and validate every episode under `dir/episodes/`, in stable
/// episode-id order.
pub fn load_dataset(dir: &Path, shape: &DataShape) -> Result<Vec<LoadedEpisode>, DataError> {
    let episodes_dir = dir.join("episodes");
    let entries = fs::read_dir(&episodes_dir).map_err(io_err(&episodes_dir))?;
    let mut manifest_paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(io_err(&episodes_dir))?;
        let manifest = entry.path().join("manifest.json");
        if manifest.is_file() {
            manifest_paths.push(manifest);
        }
    }
    if manifest_paths.is_empty() {
        return Err(DataError::Empty(dir.to_path_buf()));
    }
    let mut episodes: Vec<LoadedEpisode> = manifest_paths
        .iter()
        .map(|p| load_episode(p, shape))
        .collect::<Result<_, _>>()?;
    episodes.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(episodes)
}

pub fn load_episode(manifest_path: &Path, shape: &DataShape) -> Result<LoadedEpisode, DataError> {
    let text = fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
    let manifest: EpisodeManifest =
        serde_json::from_str(&text).map_err(|e| DataError::ManifestParse {
            episode_id: manifest_path.display().to_string(),
            detail: e.to_string(),
        })?;
    let base = manifest_path.parent().expect("manifest has a directory");
    let id = manifest.episode_id.clone();
    let read = |rel: &str| -> Result<tstnet_core::Tensor<f32>, DataError> {
        let path = base.join(rel);
        read_tensor(&path).map_err(|source| DataError::BadRecord {
            episode_id: id.clone(),
            path,
            source,
        })
    };
    let objects = read(&manifest.objects)?;
    let boxes = read(&manifest.boxes)?;
    let activity = read(&manifest.activity)?;
    let words = read(&manifest.words)?;
    let global = read(&manifest.global)?;

    let expect = |file: &str, got: &[usize], want: &[usize]| -> Result<(), DataError> {
        if got != want {
            return Err(DataError::ShapeMismatch {
                file: format!("{id}/{file}"),
                expected: format!("{want:?}"),
                actual: got.to_vec(),
            });
        }
        Ok(())
    };
    expect(&manifest.objects, objects.shape(), &[shape.m, shape.k_objects, shape.d_o])?;
    expect(&manifest.boxes, boxes.shape(), &[shape.m, shape.k_objects, 4])?;
    if activity.ndim() != 2 || activity.shape()[0] == 0 || activity.shape()[1] != shape.d_in {
        return Err(DataError::ShapeMismatch {
            file: format!("{id}/{}", manifest.activity),
            expected: format!("[M_raw >= 1, {}]", shape.d_in),
            actual: activity.shape().to_vec(),
        });
    }
    if words.ndim() != 2 || words.shape()[0] == 0 || words.shape()[1] != shape.d_w {
        return Err(DataError::ShapeMismatch {
            file: format!("{id}/{}", manifest.words),
            expected: format!("[N >= 1, {}]", shape.d_w),
            actual: words.shape().to_vec(),
        });
    }
    expect(&manifest.global, global.shape(), &[shape.d_g])?;

    let tensors = EpisodeTensors { objects, boxes, activity, words, global };
    tensors
        .validate(shape.m, shape.k_objects, shape.d_o, shape.d_w)
        .map_err(|e| DataError::Invalid { episode_id: id.clone(), detail: e.to_string() })?;

    let gt = GroundTruth { t_start: manifest.gt.t_start, t_end: manifest.gt.t_end };
    gt.validate(manifest.duration_seconds)
        .map_err(|e| DataError::Invalid { episode_id: id.clone(), detail: e.to_string() })?;

    Ok(LoadedEpisode { id, tensors, gt, duration: manifest.duration_seconds })
}

/// Read only the ground truths of a dataset (for evaluating prediction
/// files without loading feature tensors). Sorted by episode id.
pub fn load_ground_truths(dir: &Path) -> Result<Vec<(String, (f64, f64))>, DataError> {
    let episodes_dir = dir.join("episodes");
    let entries = fs::read_dir(&episodes_dir).map_err(io_err(&episodes_dir))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(io_err(&episodes_dir))?;
        let path = entry.path().join("manifest.json");
        if !path.is_file() {
            continue;
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let manifest: EpisodeManifest =
            serde_json::from_str(&text).map_err(|e| DataError::ManifestParse {
                episode_id: path.display().to_string(),
                detail: e.to_string(),
            })?;
        GroundTruth { t_start: manifest.gt.t_start, t_end: manifest.gt.t_end }
            .validate(manifest.duration_seconds)
            .map_err(|e| DataError::Invalid {
                episode_id: manifest.episode_id.clone(),
                detail: e.to_string(),
            })?;
        out.push((manifest.episode_id, (manifest.gt.t_start, manifest.gt.t_end)));
    }
    if out.is_empty() {
        return Err(DataError::Empty(dir.to_path_buf()));
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

/// FNV-1a, used for the validation split and the config hash.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Deterministic id-hash split: episodes whose hash falls below the
/// fraction go to validation.
pub fn split_validation(episodes: &[LoadedEpisode], fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let threshold = (fraction.clamp(0.0, 1.0) * 1000.0) as u64;
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, ep) in episodes.iter().enumerate() {
        if fnv1a64(ep.id.as_bytes()) % 1000 < threshold {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    (train, val)
}
