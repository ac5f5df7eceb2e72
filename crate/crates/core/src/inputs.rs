//! Per-episode input tensors and their validation.

use alloc::format;

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;
use crate::Real;

/// Raw features for one video-query pair, as produced by upstream feature
/// extractors (or the synthetic generator).
#[derive(Debug, Clone)]
pub struct EpisodeTensors<T> {
    /// Region features, `[M, K, D_o]`.
    pub objects: Tensor<T>,
    /// Normalized box corners (x1, y1, x2, y2), `[M, K, 4]`.
    pub boxes: Tensor<T>,
    /// Clip features before resampling, `[M_raw, D_in]`.
    pub activity: Tensor<T>,
    /// Word embeddings, `[N, D_w]`.
    pub words: Tensor<T>,
    /// Whole-sentence embedding, `[D_g]`.
    pub global: Tensor<T>,
}

/// Ground-truth segment in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub t_start: f64,
    pub t_end: f64,
}

impl GroundTruth {
    pub fn validate(&self, duration: f64) -> Result<()> {
        if !(0.0 <= self.t_start && self.t_start < self.t_end && self.t_end <= duration) {
            return Err(CoreError::InvalidArgument {
                op: "GroundTruth::validate",
                detail: format!(
                    "segment ({}, {}) invalid for duration {duration}",
                    self.t_start, self.t_end
                ),
            });
        }
        Ok(())
    }
}

impl<T: Real> EpisodeTensors<T> {
    /// Checks shapes against the model dimensions plus the value-level
    /// invariants: boxes inside `[0,1]` with ordered corners, no zero-norm
    /// word vector, at least one word and one activity frame.
    pub fn validate(&self, m: usize, k_objects: usize, d_o: usize, d_w: usize) -> Result<()> {
        let check_shape = |name: &str, got: &[usize], want: &[usize]| -> Result<()> {
            if got != want {
                return Err(CoreError::InvalidArgument {
                    op: "EpisodeTensors::validate",
                    detail: format!("{name}: expected shape {want:?}, got {got:?}"),
                });
            }
            Ok(())
        };
        check_shape("objects", self.objects.shape(), &[m, k_objects, d_o])?;
        check_shape("boxes", self.boxes.shape(), &[m, k_objects, 4])?;
        if self.activity.ndim() != 2 || self.activity.shape()[0] == 0 {
            return Err(CoreError::InvalidArgument {
                op: "EpisodeTensors::validate",
                detail: format!("activity: expected [M_raw >= 1, D_in], got {:?}", self.activity.shape()),
            });
        }
        if self.words.ndim() != 2 || self.words.shape()[0] == 0 || self.words.shape()[1] != d_w {
            return Err(CoreError::InvalidArgument {
                op: "EpisodeTensors::validate",
                detail: format!("words: expected [N >= 1, {d_w}], got {:?}", self.words.shape()),
            });
        }
        self.validate_boxes()?;
        self.validate_word_norms()?;
        Ok(())
    }

    fn validate_boxes(&self) -> Result<()> {
        let data = self.boxes.data();
        for (i, quad) in data.chunks_exact(4).enumerate() {
            let (x1, y1, x2, y2) = (quad[0], quad[1], quad[2], quad[3]);
            let unit = T::one();
            let inside = |v: T| v >= T::zero() && v <= unit;
            if !(inside(x1) && inside(y1) && inside(x2) && inside(y2)) {
                return Err(CoreError::InvalidArgument {
                    op: "EpisodeTensors::validate",
                    detail: format!("box {i} has coordinates outside [0,1]"),
                });
            }
            if x1 > x2 || y1 > y2 {
                return Err(CoreError::InvalidArgument {
                    op: "EpisodeTensors::validate",
                    detail: format!("box {i} has unordered corners"),
                });
            }
        }
        Ok(())
    }

    fn validate_word_norms(&self) -> Result<()> {
        let (n, d) = self.words.matrix_dims();
        let data = self.words.data();
        for i in 0..n {
            let mut norm = T::zero();
            for j in 0..d {
                let x = data[i * d + j];
                norm = norm + x * x;
            }
            if norm == T::zero() {
                return Err(CoreError::ZeroNorm { op: "EpisodeTensors::validate (words)", row: i });
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> EpisodeTensors<U> {
        EpisodeTensors {
            objects: self.objects.cast(),
            boxes: self.boxes.cast(),
            activity: self.activity.cast(),
            words: self.words.cast(),
            global: self.global.cast(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    fn valid_episode() -> EpisodeTensors<f32> {
        let m = 2;
        let k = 2;
        EpisodeTensors {
            objects: Tensor::filled(&[m, k, 3], 0.5),
            boxes: Tensor::from_vec(
                vec![m, k, 4],
                (0..m * k).flat_map(|_| [0.1, 0.2, 0.6, 0.7]).collect::<Vec<f32>>(),
            )
            .unwrap(),
            activity: Tensor::filled(&[3, 5], 1.0),
            words: Tensor::filled(&[2, 4], 0.3),
            global: Tensor::filled(&[4], 0.2),
        }
    }

    #[test]
    fn valid_episode_passes() {
        assert!(valid_episode().validate(2, 2, 3, 4).is_ok());
    }

    #[test]
    fn out_of_range_box_rejected() {
        let mut ep = valid_episode();
        ep.boxes.data_mut()[0] = 1.5;
        assert!(ep.validate(2, 2, 3, 4).is_err());
    }

    #[test]
    fn unordered_box_rejected() {
        let mut ep = valid_episode();
        ep.boxes.data_mut()[0] = 0.9; // x1 > x2
        assert!(ep.validate(2, 2, 3, 4).is_err());
    }

    #[test]
    fn zero_norm_word_rejected() {
        let mut ep = valid_episode();
        for j in 0..4 {
            ep.words.data_mut()[4 + j] = 0.0;
        }
        match ep.validate(2, 2, 3, 4) {
            Err(CoreError::ZeroNorm { row, .. }) => assert_eq!(row, 1),
            other => panic!("expected zero-norm error, got {other:?}"),
        }
    }

    #[test]
    fn gt_bounds_checked() {
        assert!(GroundTruth { t_start: 0.0, t_end: 5.0 }.validate(10.0).is_ok());
        assert!(GroundTruth { t_start: 5.0, t_end: 5.0 }.validate(10.0).is_err());
        assert!(GroundTruth { t_start: 2.0, t_end: 11.0 }.validate(10.0).is_err());
    }
}
