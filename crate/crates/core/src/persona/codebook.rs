//! Persona codebook: nearest-code quantization, commitment loss and the
//! exponential-moving-average code update.

use crate::error::{Error, Result};
use crate::numerics::{sq_dist, Matrix, Rng};

/// Updates without any assignment after which a code counts as dead.
pub const DEAD_CODE_STEPS: u32 = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct PersonaCodebook {
    codes: Matrix,
    counts: Vec<f64>,
    sums: Matrix,
    decay: f64,
    epsilon: f64,
    idle: Vec<u32>,
}

impl PersonaCodebook {
    /// Codebook whose EMA statistics are consistent with `codes`:
    /// `E_m = N_m · z_m`.
    pub fn new(codes: Matrix, counts: Vec<f64>, decay: f64, epsilon: f64) -> Result<Self> {
        let mut sums = codes.clone();
        for (m, &n) in counts.iter().enumerate() {
            for x in &mut sums.data_mut()[m * codes.cols()..(m + 1) * codes.cols()] {
                *x *= n;
            }
        }
        Self::from_parts(codes, counts, sums, decay, epsilon)
    }

    pub fn from_parts(codes: Matrix, counts: Vec<f64>, sums: Matrix, decay: f64, epsilon: f64) -> Result<Self> {
        if codes.rows() == 0 || codes.cols() == 0 {
            return Err(Error::Config("codebook needs at least one code of positive dimension".into()));
        }
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::Config(format!("codebook decay must be in (0, 1), got {decay}")));
        }
        if !(epsilon > 0.0) {
            return Err(Error::Config(format!("codebook epsilon must be positive, got {epsilon}")));
        }
        if counts.len() != codes.rows() || sums.rows() != codes.rows() || sums.cols() != codes.cols() {
            return Err(Error::Shape("codebook statistics do not match code shape".into()));
        }
        if counts.iter().any(|&n| !(n >= 0.0) || !n.is_finite()) {
            return Err(Error::Numeric("codebook counts must be finite and non-negative".into()));
        }
        if !codes.is_finite() || !sums.is_finite() {
            return Err(Error::Numeric("codebook entries must be finite".into()));
        }
        let idle = vec![0; codes.rows()];
        Ok(Self {
            codes,
            counts,
            sums,
            decay,
            epsilon,
            idle,
        })
    }

    /// Single code pinned at the origin with unit count.
    pub fn pinned_zero(dim: usize, decay: f64, epsilon: f64) -> Result<Self> {
        Self::new(Matrix::zeros(1, dim), vec![1.0], decay, epsilon)
    }

    pub fn size(&self) -> usize {
        self.codes.rows()
    }

    pub fn dim(&self) -> usize {
        self.codes.cols()
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn code(&self, m: usize) -> &[f64] {
        self.codes.row(m)
    }

    pub fn codes(&self) -> &Matrix {
        &self.codes
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn sums(&self) -> &Matrix {
        &self.sums
    }

    pub fn idle_steps(&self) -> &[u32] {
        &self.idle
    }

    /// Restores idle counters saved alongside the codebook. Extra entries
    /// are ignored and missing ones read as zero.
    pub fn restore_idle(&mut self, idle: Vec<u32>) {
        for (slot, v) in self.idle.iter_mut().zip(idle) {
            *slot = v;
        }
    }

    /// Nearest code by Euclidean distance; ties go to the lowest index.
    pub fn quantize(&self, w: &[f64]) -> Result<(usize, &[f64])> {
        if w.len() != self.dim() {
            return Err(Error::Shape(format!(
                "quantize: vector dim {} vs codebook dim {}",
                w.len(),
                self.dim()
            )));
        }
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for m in 0..self.size() {
            let d = sq_dist(w, self.code(m));
            if d < best_d {
                best_d = d;
                best = m;
            }
        }
        Ok((best, self.code(best)))
    }

    /// One EMA step over a batch of windows and their code assignments.
    ///
    /// `N_m ← γN_m + (1-γ)·count_m`, `E_m ← γE_m + (1-γ)·Σ w`, then
    /// `z_m ← E_m / N_m` for every code whose count exceeds epsilon. Codes at
    /// or below epsilon keep their vector until reseeded.
    pub fn ema_update(&mut self, windows: &[Vec<f64>], assignments: &[usize]) -> Result<()> {
        if windows.len() != assignments.len() {
            return Err(Error::Shape(format!(
                "ema_update: {} windows, {} assignments",
                windows.len(),
                assignments.len()
            )));
        }
        let d = self.dim();
        let p = self.size();
        let mut batch_counts = vec![0.0; p];
        let mut batch_sums = Matrix::zeros(p, d);
        for (w, &m) in windows.iter().zip(assignments) {
            if m >= p {
                return Err(Error::Shape(format!("assignment {m} outside codebook of size {p}")));
            }
            if w.len() != d {
                return Err(Error::Shape(format!("window dim {} vs codebook dim {d}", w.len())));
            }
            batch_counts[m] += 1.0;
            for (s, x) in batch_sums.data_mut()[m * d..(m + 1) * d].iter_mut().zip(w) {
                *s += x;
            }
        }
        let g = self.decay;
        for m in 0..p {
            self.counts[m] = g * self.counts[m] + (1.0 - g) * batch_counts[m];
            let sums = &mut self.sums.data_mut()[m * d..(m + 1) * d];
            for (s, b) in sums.iter_mut().zip(batch_sums.row(m)) {
                *s = g * *s + (1.0 - g) * b;
            }
            if self.counts[m] > self.epsilon {
                let n = self.counts[m];
                for k in 0..d {
                    let v = self.sums.get(m, k) / n;
                    self.codes.set(m, k, v);
                }
            }
            if batch_counts[m] > 0.0 {
                self.idle[m] = 0;
            } else {
                self.idle[m] = self.idle[m].saturating_add(1);
            }
        }
        Ok(())
    }

    /// Moves every code idle for at least `threshold` updates onto a random
    /// window from `recent`. Returns how many codes were reseeded.
    pub fn reseed_dead(&mut self, recent: &[Vec<f64>], threshold: u32, rng: &mut Rng) -> usize {
        if recent.is_empty() {
            return 0;
        }
        let d = self.dim();
        let mut n = 0;
        for m in 0..self.size() {
            if self.idle[m] < threshold {
                continue;
            }
            let w = &recent[rng.below(recent.len())];
            for k in 0..d {
                self.codes.set(m, k, w[k]);
                self.sums.set(m, k, w[k]);
            }
            self.counts[m] = 1.0;
            self.idle[m] = 0;
            n += 1;
        }
        n
    }

    /// Number of codes whose EMA count is above epsilon.
    pub fn active_codes(&self) -> usize {
        self.counts.iter().filter(|&&n| n > self.epsilon).count()
    }
}

/// `(1/n) Σ ‖w - z‖²` with codes treated as constants.
pub fn commitment_loss(windows: &[Vec<f64>], codes: &[Vec<f64>]) -> Result<f64> {
    if windows.len() != codes.len() {
        return Err(Error::Shape(format!(
            "commitment_loss: {} windows, {} codes",
            windows.len(),
            codes.len()
        )));
    }
    if windows.is_empty() {
        return Err(Error::Shape("commitment_loss needs at least one window".into()));
    }
    let total: f64 = windows.iter().zip(codes).map(|(w, z)| sq_dist(w, z)).sum();
    Ok(total / windows.len() as f64)
}
