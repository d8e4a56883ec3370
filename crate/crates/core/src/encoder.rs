//! Persona estimation from single comparisons.
//!
//! An encoder turns one feedback triple into an instance-level rationale
//! vector `r`: a guess at why this user preferred one response over the
//! other. Encoders here work on precomputed response embeddings; anything
//! heavier (a language model, say) plugs in by exporting embeddings.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeedbackTriple};
use crate::error::{Error, Result};
use crate::numerics::{normalize, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// `normalize(e_chosen - e_rejected)`, negated when `label == 0`.
    Contrastive,
    /// `weights · [e_chosen; e_rejected; label]`.
    ConcatLinear,
    /// Embedding of the preferred response alone; no comparison.
    IdentityChosen,
}

impl EncoderKind {
    pub fn code(self) -> u8 {
        match self {
            EncoderKind::Contrastive => 0,
            EncoderKind::ConcatLinear => 1,
            EncoderKind::IdentityChosen => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(EncoderKind::Contrastive),
            1 => Ok(EncoderKind::ConcatLinear),
            2 => Ok(EncoderKind::IdentityChosen),
            other => Err(Error::Format(format!("unknown encoder kind {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderSpec {
    kind: EncoderKind,
    output_dim: usize,
    weights: Option<Matrix>,
}

impl EncoderSpec {
    pub fn contrastive(response_dim: usize) -> Self {
        Self {
            kind: EncoderKind::Contrastive,
            output_dim: response_dim,
            weights: None,
        }
    }

    pub fn identity_chosen(response_dim: usize) -> Self {
        Self {
            kind: EncoderKind::IdentityChosen,
            output_dim: response_dim,
            weights: None,
        }
    }

    /// `weights` must be `d_r × (2·D_r + 1)`.
    pub fn concat_linear(weights: Matrix) -> Result<Self> {
        if weights.rows() == 0 || weights.cols() < 3 || (weights.cols() - 1) % 2 != 0 {
            return Err(Error::Shape(format!(
                "concat_linear weights must be d_r x (2*D_r + 1), got {}x{}",
                weights.rows(),
                weights.cols()
            )));
        }
        if !weights.is_finite() {
            return Err(Error::Numeric("concat_linear weights".into()));
        }
        Ok(Self {
            kind: EncoderKind::ConcatLinear,
            output_dim: weights.rows(),
            weights: Some(weights),
        })
    }

    /// Builds a spec of `kind` for responses of dimension `response_dim`.
    /// `concat_linear` gets `weights` drawn by the caller.
    pub fn for_kind(kind: EncoderKind, response_dim: usize, weights: Option<Matrix>) -> Result<Self> {
        match kind {
            EncoderKind::Contrastive => Ok(Self::contrastive(response_dim)),
            EncoderKind::IdentityChosen => Ok(Self::identity_chosen(response_dim)),
            EncoderKind::ConcatLinear => Self::concat_linear(weights.ok_or_else(|| {
                Error::Config("encoder.kind = concat_linear requires weights".into())
            })?),
        }
    }

    pub fn kind(&self) -> EncoderKind {
        self.kind
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn weights(&self) -> Option<&Matrix> {
        self.weights.as_ref()
    }

    /// Response dimension this encoder expects.
    pub fn input_dim(&self) -> usize {
        match &self.weights {
            Some(w) => (w.cols() - 1) / 2,
            None => self.output_dim,
        }
    }

    /// Raw rationale vector from two response embeddings and a label.
    pub fn encode_vectors(&self, chosen: &[f64], rejected: &[f64], label: u8) -> Result<Vec<f64>> {
        if chosen.len() != self.input_dim() || rejected.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "encoder expects response dim {}, got {} and {}",
                self.input_dim(),
                chosen.len(),
                rejected.len()
            )));
        }
        let out = match self.kind {
            EncoderKind::Contrastive => {
                let diff: Vec<f64> = chosen.iter().zip(rejected).map(|(a, b)| a - b).collect();
                let r = normalize(&diff);
                if label == 1 {
                    r
                } else {
                    r.into_iter().map(|x| -x).collect()
                }
            }
            EncoderKind::IdentityChosen => {
                if label == 1 {
                    chosen.to_vec()
                } else {
                    rejected.to_vec()
                }
            }
            EncoderKind::ConcatLinear => {
                let mut input = Vec::with_capacity(2 * chosen.len() + 1);
                input.extend_from_slice(chosen);
                input.extend_from_slice(rejected);
                input.push(label as f64);
                self.weights.as_ref().expect("validated").matvec(&input)?
            }
        };
        Ok(out)
    }
}

/// Instance-level rationale for one feedback triple.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedPersona {
    pub vector: Vec<f64>,
    pub source: FeedbackTriple,
}

pub fn encode(spec: &EncoderSpec, triple: &FeedbackTriple, dataset: &Dataset) -> Result<EstimatedPersona> {
    let chosen = dataset.response_embedding(&triple.chosen)?;
    let rejected = dataset.response_embedding(&triple.rejected)?;
    Ok(EstimatedPersona {
        vector: spec.encode_vectors(chosen, rejected, triple.label)?,
        source: triple.clone(),
    })
}

/// Encodes every triple, preserving order.
pub fn encode_history(
    spec: &EncoderSpec,
    history: &[FeedbackTriple],
    dataset: &Dataset,
) -> Result<Vec<EstimatedPersona>> {
    history.iter().map(|t| encode(spec, t, dataset)).collect()
}
