//! The shared persona space: windowed pooling of rationale vectors, an
//! affine projection, and a vector-quantized codebook trained by EMA.

mod codebook;
mod kmeans;
mod window;

pub use codebook::{commitment_loss, PersonaCodebook, DEAD_CODE_STEPS};
pub use kmeans::{kmeans_init, KMeansReport, DUPLICATE_JITTER};
pub use window::{make_windows, pool_windows, WindowConfig};

use crate::encoder::EstimatedPersona;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// Affine map from rationale space (`d_r`) into persona space (`d`).
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Projector {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weights.rows() != bias.len() {
            return Err(Error::Shape(format!(
                "projector weights have {} rows, bias has {} entries",
                weights.rows(),
                bias.len()
            )));
        }
        if !weights.is_finite() || bias.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("projector parameters".into()));
        }
        Ok(Self { weights, bias })
    }

    /// Gaussian weights with variance `1/in_dim`, zero bias.
    pub fn random(out_dim: usize, in_dim: usize, rng: &mut Rng) -> Self {
        Self {
            weights: Matrix::random_normal(out_dim, in_dim, 1.0 / (in_dim as f64).sqrt(), rng),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn project(&self, window: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.weights.matvec(window)?;
        for (o, b) in out.iter_mut().zip(&self.bias) {
            *o += b;
        }
        Ok(out)
    }
}

/// A user's quantized persona: one code per history window, in order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct UserPersona {
    pub code_indices: Vec<usize>,
    pub code_vectors: Vec<Vec<f64>>,
}

impl UserPersona {
    pub fn is_empty(&self) -> bool {
        self.code_indices.is_empty()
    }

    pub fn len(&self) -> usize {
        self.code_indices.len()
    }
}

/// Intermediate values of the windows → projection → quantization chain.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PersonaTrace {
    /// Mean-pooled rationale windows (`d_r`).
    pub windows: Vec<Vec<f64>>,
    /// Projected windows (`d`).
    pub projected: Vec<Vec<f64>>,
    pub persona: UserPersona,
}

/// Projects pooled windows and quantizes each against the codebook.
pub fn quantize_windows(proj: &Projector, cb: &PersonaCodebook, windows: Vec<Vec<f64>>) -> Result<PersonaTrace> {
    let projected = windows
        .iter()
        .map(|w| proj.project(w))
        .collect::<Result<Vec<_>>>()?;
    let mut persona = UserPersona::default();
    for w in &projected {
        let (m, z) = cb.quantize(w)?;
        persona.code_indices.push(m);
        persona.code_vectors.push(z.to_vec());
    }
    Ok(PersonaTrace {
        windows,
        projected,
        persona,
    })
}

/// Windows, projects and quantizes a user's rationale sequence.
pub fn quantize_history(
    proj: &Projector,
    cb: &PersonaCodebook,
    personas: &[EstimatedPersona],
    cfg: &WindowConfig,
) -> Result<UserPersona> {
    Ok(quantize_windows(proj, cb, make_windows(personas, cfg))?.persona)
}
