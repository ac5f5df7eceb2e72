//! Evaluation metrics: temporal IoU, top-n recall at IoU thresholds, mean
//! IoU, and throughput accounting.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};

/// Segment in seconds, start < end.
pub type Segment = (f64, f64);

/// Temporal intersection-over-union. Degenerate (zero-length or inverted)
/// segments are an error; disjoint segments score 0.
pub fn tiou(a: Segment, b: Segment) -> Result<f64> {
    for (name, s) in [("first", a), ("second", b)] {
        if !(s.0 < s.1) {
            return Err(CoreError::InvalidArgument {
                op: "tiou",
                detail: format!("{name} segment ({}, {}) is degenerate", s.0, s.1),
            });
        }
    }
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    if inter == 0.0 {
        return Ok(0.0);
    }
    let union = a.1.max(b.1) - a.0.min(b.0);
    Ok(inter / union)
}

fn check_aligned(predictions: &[Vec<Segment>], ground_truths: &[Segment]) -> Result<()> {
    if predictions.len() != ground_truths.len() {
        return Err(CoreError::InvalidArgument {
            op: "metrics",
            detail: format!(
                "{} prediction lists vs {} ground truths",
                predictions.len(),
                ground_truths.len()
            ),
        });
    }
    if let Some(i) = predictions.iter().position(|p| p.is_empty()) {
        return Err(CoreError::InvalidArgument {
            op: "metrics",
            detail: format!("episode {i} has no predictions"),
        });
    }
    Ok(())
}

/// Fraction of episodes where one of the top-n ranked predictions has
/// tIoU strictly greater than `mu` against the ground truth.
pub fn recall_at(
    predictions: &[Vec<Segment>],
    ground_truths: &[Segment],
    n: usize,
    mu: f64,
) -> Result<f64> {
    check_aligned(predictions, ground_truths)?;
    let mut hits = 0usize;
    for (ranked, gt) in predictions.iter().zip(ground_truths) {
        let hit = ranked
            .iter()
            .take(n)
            .map(|&p| tiou(p, *gt))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .any(|v| v > mu);
        hits += hit as usize;
    }
    Ok(hits as f64 / predictions.len() as f64)
}

/// Mean tIoU of the top-1 prediction over all episodes.
pub fn mean_iou(predictions: &[Vec<Segment>], ground_truths: &[Segment]) -> Result<f64> {
    check_aligned(predictions, ground_truths)?;
    let mut acc = 0.0;
    for (ranked, gt) in predictions.iter().zip(ground_truths) {
        acc += tiou(ranked[0], *gt)?;
    }
    Ok(acc / predictions.len() as f64)
}

/// Recall table plus mean IoU for a fixed grid of n values and thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub top_ns: Vec<usize>,
    pub thresholds: Vec<f64>,
    /// recall[i][j] = R@top_ns[i], IoU=thresholds[j]
    pub recall: Vec<Vec<f64>>,
    pub miou: f64,
    pub episodes: usize,
}

pub const DEFAULT_TOP_NS: [usize; 2] = [1, 5];
pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.3, 0.5, 0.7];

pub fn evaluate(
    predictions: &[Vec<Segment>],
    ground_truths: &[Segment],
    top_ns: &[usize],
    thresholds: &[f64],
) -> Result<EvalReport> {
    let mut recall = Vec::with_capacity(top_ns.len());
    for &n in top_ns {
        let mut row = Vec::with_capacity(thresholds.len());
        for &mu in thresholds {
            row.push(recall_at(predictions, ground_truths, n, mu)?);
        }
        recall.push(row);
    }
    Ok(EvalReport {
        top_ns: top_ns.to_vec(),
        thresholds: thresholds.to_vec(),
        recall,
        miou: mean_iou(predictions, ground_truths)?,
        episodes: predictions.len(),
    })
}

/// Video-query pairs per second.
pub fn vqps(episodes: usize, elapsed_secs: f64) -> f64 {
    episodes as f64 / elapsed_secs
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn tiou_identity_is_one() {
        assert_eq!(tiou((0.0, 10.0), (0.0, 10.0)).unwrap(), 1.0);
    }

    #[test]
    fn tiou_touching_segments_is_zero() {
        assert_eq!(tiou((0.0, 5.0), (5.0, 10.0)).unwrap(), 0.0);
    }

    #[test]
    fn tiou_partial_overlap() {
        let v = tiou((2.0, 6.0), (4.0, 8.0)).unwrap();
        assert!((v - 2.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn tiou_symmetric() {
        let a = (1.0, 4.0);
        let b = (2.0, 9.0);
        assert_eq!(tiou(a, b).unwrap(), tiou(b, a).unwrap());
    }

    #[test]
    fn tiou_rejects_degenerate() {
        assert!(tiou((5.0, 5.0), (0.0, 1.0)).is_err());
        assert!(tiou((0.0, 1.0), (2.0, 1.0)).is_err());
    }

    #[test]
    fn perfect_predictions_score_one() {
        let gts = vec![(0.0, 5.0), (3.0, 9.0)];
        let preds: Vec<Vec<Segment>> = gts.iter().map(|&g| vec![g]).collect();
        assert_eq!(recall_at(&preds, &gts, 1, 0.7).unwrap(), 1.0);
        assert_eq!(mean_iou(&preds, &gts).unwrap(), 1.0);
    }

    #[test]
    fn disjoint_predictions_score_zero() {
        let gts = vec![(0.0, 5.0), (0.0, 5.0)];
        let preds = vec![vec![(6.0, 9.0)], vec![(7.0, 8.0)]];
        assert_eq!(recall_at(&preds, &gts, 1, 0.3).unwrap(), 0.0);
        assert_eq!(mean_iou(&preds, &gts).unwrap(), 0.0);
    }

    #[test]
    fn recall_is_strict_at_threshold() {
        // tIoU exactly 0.5 must not count at mu = 0.5
        let gts = vec![(0.0, 2.0)];
        let preds = vec![vec![(0.0, 1.0)]];
        assert_eq!(recall_at(&preds, &gts, 1, 0.5).unwrap(), 0.0);
        assert_eq!(recall_at(&preds, &gts, 1, 0.49).unwrap(), 1.0);
    }

    #[test]
    fn missing_ground_truth_is_an_error() {
        let preds = vec![vec![(0.0, 1.0)], vec![(0.0, 1.0)]];
        let gts = vec![(0.0, 1.0)];
        assert!(recall_at(&preds, &gts, 1, 0.5).is_err());
    }

    #[test]
    fn vqps_simple() {
        assert_eq!(vqps(100, 1.0), 100.0);
    }
}
