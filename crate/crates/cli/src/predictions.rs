//! Prediction files: one JSON record per line, one line per episode.
//!
//! `{"episode_id": "...", "predictions": [{"t_start": s, "t_end": e, "score": p}, ...]}`

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tstnet_core::localizer::MomentPrediction;

#[derive(Serialize, Deserialize)]
struct PredRecord {
    episode_id: String,
    predictions: Vec<PredEntry>,
}

#[derive(Serialize, Deserialize)]
struct PredEntry {
    t_start: f64,
    t_end: f64,
    score: f64,
}

pub fn write_predictions(
    mut w: impl Write,
    predictions: &[(String, Vec<MomentPrediction>)],
) -> std::io::Result<()> {
    for (id, preds) in predictions {
        let record = PredRecord {
            episode_id: id.clone(),
            predictions: preds
                .iter()
                .map(|p| PredEntry { t_start: p.t_start, t_end: p.t_end, score: p.score })
                .collect(),
        };
        writeln!(w, "{}", serde_json::to_string(&record).expect("record serializes"))?;
    }
    Ok(())
}

pub fn read_predictions(path: &Path) -> anyhow::Result<Vec<(String, Vec<MomentPrediction>)>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: PredRecord = serde_json::from_str(line)
            .map_err(|e| anyhow::anyhow!("prediction line {}: {e}", i + 1))?;
        out.push((
            record.episode_id,
            record
                .predictions
                .into_iter()
                .map(|p| MomentPrediction { t_start: p.t_start, t_end: p.t_end, score: p.score })
                .collect(),
        ));
    }
    anyhow::ensure!(!out.is_empty(), "prediction file {} is empty", path.display());
    Ok(out)
}
