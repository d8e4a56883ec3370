use serde::{Deserialize, Serialize};

use crate::encoder::EncoderKind;
use crate::error::{Error, Result};
use crate::numerics::Activation;
use crate::persona::{WindowConfig, DEAD_CODE_STEPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// `P(first ≻ second) = σ(R₁ - R₂)`.
    PairwiseBt,
    /// Each response scored independently: `P(selected) = σ(R)`.
    PointwiseSigmoid,
}

/// How a user's windows reach the reward head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PersonaMode {
    /// Mean of the assigned code vectors (straight-through for gradients).
    Quantized,
    /// Mean of the projected windows; the codebook is bypassed.
    Continuous,
    /// A single code fixed at the origin: no persona information.
    Pinned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub commit_weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub window: WindowConfig,
    pub codebook_size: usize,
    pub decay: f64,
    pub epsilon: f64,
    pub loss_mode: LossMode,
    pub hidden_dim: usize,
    /// Dimension of the persona space; `0` means "same as the rationale".
    pub persona_dim: usize,
    pub activation: Activation,
    pub encoder_kind: EncoderKind,
    /// Output size of the `concat_linear` encoder.
    pub encoder_dim: usize,
    pub persona_mode: PersonaMode,
    pub kmeans_iters: usize,
    pub dead_code_steps: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            commit_weight: 0.2,
            epochs: 100,
            batch_size: 8,
            seed: 0,
            window: WindowConfig::new(5),
            codebook_size: 64,
            decay: 0.99,
            epsilon: 1e-5,
            loss_mode: LossMode::PairwiseBt,
            hidden_dim: 64,
            persona_dim: 0,
            activation: Activation::Relu,
            encoder_kind: EncoderKind::Contrastive,
            encoder_dim: 8,
            persona_mode: PersonaMode::Quantized,
            kmeans_iters: 100,
            dead_code_steps: DEAD_CODE_STEPS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("train.{name} must be positive")))
            }
        };
        positive("learning_rate", self.learning_rate > 0.0 && self.learning_rate.is_finite())?;
        positive("batch_size", self.batch_size > 0)?;
        positive("codebook_size", self.codebook_size > 0)?;
        positive("hidden_dim", self.hidden_dim > 0)?;
        positive("epsilon", self.epsilon > 0.0)?;
        positive("encoder_dim", self.encoder_dim > 0)?;
        positive("dead_code_steps", self.dead_code_steps > 0)?;
        if !(self.commit_weight >= 0.0 && self.commit_weight.is_finite()) {
            return Err(Error::Config("train.commit_weight must be non-negative".into()));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::Config(format!("train.decay must be in (0, 1), got {}", self.decay)));
        }
        if self.persona_mode == PersonaMode::Pinned && self.codebook_size != 1 {
            return Err(Error::Config("train.persona_mode = pinned requires codebook_size = 1".into()));
        }
        self.window
            .validate()
            .map_err(|e| Error::Config(format!("train.{}", e.to_string().trim_start_matches("invalid configuration: "))))
    }

    /// Persona-space dimension given the rationale dimension.
    pub fn resolved_persona_dim(&self, rationale_dim: usize) -> usize {
        if self.persona_dim == 0 {
            rationale_dim
        } else {
            self.persona_dim
        }
    }

    /// β = 0, one code pinned at the origin.
    pub fn persona_free(&self) -> Self {
        Self {
            commit_weight: 0.0,
            codebook_size: 1,
            persona_mode: PersonaMode::Pinned,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
        assert_eq!(TrainConfig::default().commit_weight, 0.2);
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = TrainConfig::default();
        c.decay = 1.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.window.window_len = 0;
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("window_len"), "{msg}");
        let mut c = TrainConfig::default();
        c.persona_mode = PersonaMode::Pinned;
        assert!(c.validate().is_err());
        assert!(TrainConfig::default().persona_free().validate().is_ok());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<TrainConfig>(r#"{"learning_rat": 0.1}"#);
        assert!(err.is_err());
        let ok: TrainConfig = serde_json::from_str(r#"{"learning_rate": 0.1}"#).unwrap();
        assert_eq!(ok.learning_rate, 0.1);
        assert_eq!(ok.batch_size, 8);
    }
}
