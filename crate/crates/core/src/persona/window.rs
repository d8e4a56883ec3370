use serde::{Deserialize, Serialize};

use crate::encoder::EstimatedPersona;
use crate::error::{Error, Result};
use crate::numerics::mean_of;

/// How a user's rationale sequence is chunked before projection.
/// Windows are mean-pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub window_len: usize,
    /// Defaults to `window_len` (non-overlapping windows).
    #[serde(default)]
    pub stride: Option<usize>,
}

impl WindowConfig {
    pub fn new(window_len: usize) -> Self {
        Self {
            window_len,
            stride: None,
        }
    }

    pub fn with_stride(window_len: usize, stride: usize) -> Self {
        Self {
            window_len,
            stride: Some(stride),
        }
    }

    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(self.window_len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 {
            return Err(Error::Config("window.window_len must be at least 1".into()));
        }
        let s = self.stride();
        if s == 0 || s > self.window_len {
            return Err(Error::Config(format!(
                "window.stride must be in [1, {}], got {s}",
                self.window_len
            )));
        }
        Ok(())
    }

    /// `[start, end)` ranges of the windows over a sequence of length `n`.
    /// Windows start every `stride` items; the first window that reaches the
    /// end of the sequence is the last one, and may be shorter than
    /// `window_len`.
    pub fn ranges(&self, n: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = 0;
        while start < n {
            let end = (start + self.window_len).min(n);
            out.push((start, end));
            if end == n {
                break;
            }
            start += self.stride();
        }
        out
    }
}

/// Mean-pooled windows over a sequence of vectors.
pub fn pool_windows(vectors: &[Vec<f64>], cfg: &WindowConfig) -> Vec<Vec<f64>> {
    cfg.ranges(vectors.len())
        .into_iter()
        .map(|(s, e)| mean_of(vectors[s..e].iter().map(Vec::as_slice)).expect("non-empty window"))
        .collect()
}

pub fn make_windows(personas: &[EstimatedPersona], cfg: &WindowConfig) -> Vec<Vec<f64>> {
    cfg.ranges(personas.len())
        .into_iter()
        .map(|(s, e)| {
            mean_of(personas[s..e].iter().map(|p| p.vector.as_slice())).expect("non-empty window")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vs(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|&x| vec![x, -x]).collect()
    }

    #[test]
    fn pairs() {
        let w = pool_windows(&vs(&[1.0, 3.0, 5.0, 7.0]), &WindowConfig::new(2));
        assert_eq!(w, vec![vec![2.0, -2.0], vec![6.0, -6.0]]);
    }

    #[test]
    fn partial_final_window_is_kept() {
        let w = pool_windows(&vs(&[1.0, 3.0, 5.0, 7.0, 9.0]), &WindowConfig::new(2));
        assert_eq!(w.len(), 3);
        assert_eq!(w[2], vec![9.0, -9.0]);
    }

    #[test]
    fn identical_inputs() {
        for l in 1..6 {
            let w = pool_windows(&vs(&[0.25; 7]), &WindowConfig::new(l));
            assert!(w.iter().all(|x| x == &vec![0.25, -0.25]));
        }
    }

    #[test]
    fn empty_and_long_windows() {
        assert!(pool_windows(&[], &WindowConfig::new(3)).is_empty());
        let w = pool_windows(&vs(&[1.0, 2.0, 3.0]), &WindowConfig::new(10));
        assert_eq!(w, vec![vec![2.0, -2.0]]);
    }

    #[test]
    fn strided_windows() {
        let cfg = WindowConfig::with_stride(3, 1);
        assert_eq!(cfg.ranges(5), vec![(0, 3), (1, 4), (2, 5)]);
        let cfg = WindowConfig::with_stride(3, 2);
        assert_eq!(cfg.ranges(6), vec![(0, 3), (2, 5), (4, 6)]);
    }

    #[test]
    fn validation() {
        assert!(WindowConfig::new(0).validate().is_err());
        assert!(WindowConfig::with_stride(2, 3).validate().is_err());
        assert!(WindowConfig::with_stride(2, 0).validate().is_err());
        assert!(WindowConfig::with_stride(4, 4).validate().is_ok());
    }
}
