use crate::autodiff::Tensor;
use crate::features::FeatureMatrix;
use crate::models::ModelConfig;

/// One model input window: `context_len` warmup frames followed by
/// `seq_len` loss-bearing frames, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// Source frame of the first loss-bearing row.
    pub start: usize,
    /// Loss-bearing rows backed by real frames; the rest replicate the
    /// last frame.
    pub valid: usize,
    pub data: Vec<f64>,
}

impl Window {
    /// Source frame indices of the real loss-bearing rows.
    pub fn frames(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.valid
    }
}

/// Cuts `m` into windows starting at 0, `stride`, `2*stride`, ... while the
/// start is inside the clip. Context before frame 0 is zero; rows past the
/// end replicate the last frame.
pub fn make_sequences(m: &FeatureMatrix, seq_len: usize, context_len: usize, stride: usize) -> Vec<Window> {
    assert!(seq_len >= 1 && stride >= 1, "seq_len and stride must be positive");
    let t_len = m.n_frames();
    let width = m.width();
    let len = context_len + seq_len;
    (0..t_len)
        .step_by(stride)
        .map(|start| {
            let mut data = Vec::with_capacity(len * width);
            for p in 0..len {
                let src = start as isize - context_len as isize + p as isize;
                if src < 0 {
                    data.extend(std::iter::repeat_n(0.0, width));
                } else {
                    data.extend_from_slice(m.row((src as usize).min(t_len - 1)));
                }
            }
            Window {
                start,
                valid: seq_len.min(t_len - start),
                data,
            }
        })
        .collect()
}

/// Loss mask of one window's per-frame outputs.
pub(crate) fn window_mask(w: &Window, seq_len: usize) -> impl Iterator<Item = f64> + '_ {
    (0..seq_len).map(move |p| if p < w.valid { 1.0 } else { 0.0 })
}

/// Stacks windows into `[B, context_len + seq_len, width]`.
pub(crate) fn stack_windows(windows: &[&Window], cfg: &ModelConfig) -> Tensor {
    let data: Vec<f64> = windows.iter().flat_map(|w| w.data.iter().copied()).collect();
    Tensor::new(vec![windows.len(), cfg.window_len(), cfg.input_dim], data).expect("window sizes agree")
}

/// Whole-clip model input and the loss mask of its output rows.
///
/// Sequence models get every window (stride `seq_len`); segment-level
/// variants produce one unmasked row per window. Frame models get every
/// frame.
pub fn model_inputs(cfg: &ModelConfig, m: &FeatureMatrix) -> (Tensor, Vec<f64>) {
    if cfg.is_sequence() {
        let windows = make_sequences(m, cfg.seq_len, cfg.context_len, cfg.seq_len);
        let refs: Vec<&Window> = windows.iter().collect();
        let mask = if cfg.per_frame() {
            windows.iter().flat_map(|w| window_mask(w, cfg.seq_len)).collect()
        } else {
            vec![1.0; windows.len()]
        };
        (stack_windows(&refs, cfg), mask)
    } else {
        let t = Tensor::new(vec![m.n_frames(), m.width()], m.data().to_vec()).expect("matrix shape");
        (t, vec![1.0; m.n_frames()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FEATURE_DIM;

    fn ramp(t: usize) -> FeatureMatrix {
        let data = (0..t).flat_map(|i| std::iter::repeat_n(i as f64 + 1.0, FEATURE_DIM)).collect();
        FeatureMatrix::new("r", data).unwrap()
    }

    fn first_col(w: &Window) -> Vec<f64> {
        w.data.chunks_exact(FEATURE_DIM).map(|r| r[0]).collect()
    }

    #[test]
    fn eighty_frames_three_windows() {
        let ws = make_sequences(&ramp(80), 30, 20, 30);
        assert_eq!(ws.iter().map(|w| w.start).collect::<Vec<_>>(), vec![0, 30, 60]);
        assert_eq!(ws.iter().map(|w| w.valid).collect::<Vec<_>>(), vec![30, 30, 20]);
        // frame i holds value i + 1
        let c = first_col(&ws[1]);
        assert_eq!(c[0], 11.0);
        assert_eq!(c[20], 31.0);
        let c = first_col(&ws[2]);
        assert_eq!(c[20], 61.0);
        assert!(c[40..].iter().all(|&v| v == 80.0));
    }

    #[test]
    fn short_clip_single_padded_window() {
        let ws = make_sequences(&ramp(10), 30, 20, 30);
        assert_eq!(ws.len(), 1);
        let c = first_col(&ws[0]);
        assert!(c[..20].iter().all(|&v| v == 0.0));
        assert_eq!(&c[20..30], &(1..=10).map(|v| v as f64).collect::<Vec<_>>()[..]);
        assert!(c[30..].iter().all(|&v| v == 10.0));
        assert_eq!(ws[0].valid, 10);
    }

    #[test]
    fn loss_regions_cover_every_frame() {
        for t in 1..120 {
            for (seq, stride) in [(30, 30), (7, 3), (5, 5), (1, 1)] {
                let ws = make_sequences(&ramp(t), seq, 4, stride);
                let mut seen = vec![false; t];
                for w in &ws {
                    let c = first_col(w);
                    for (k, f) in w.frames().enumerate() {
                        assert_eq!(c[4 + k], f as f64 + 1.0);
                        seen[f] = true;
                    }
                }
                assert!(seen.iter().all(|&s| s), "t={t} seq={seq} stride={stride}");
            }
        }
    }
}
