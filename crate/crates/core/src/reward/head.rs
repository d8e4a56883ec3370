use crate::error::{Error, Result};
use crate::numerics::{dot, Activation, Matrix, Rng};

/// `R = outᵀ φ(weights · [persona; episode; response] + bias)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardHead {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub out: Vec<f64>,
    persona_dim: usize,
    episode_dim: usize,
    response_dim: usize,
}

/// Cached forward pass for one `(persona, episode, response)` input.
#[derive(Debug, Clone)]
pub struct HeadForward {
    pub input: Vec<f64>,
    pub pre: Vec<f64>,
    pub act: Vec<f64>,
    pub reward: f64,
}

impl RewardHead {
    pub fn new(
        weights: Matrix,
        bias: Vec<f64>,
        activation: Activation,
        out: Vec<f64>,
        persona_dim: usize,
        episode_dim: usize,
        response_dim: usize,
    ) -> Result<Self> {
        let hidden = weights.rows();
        if hidden == 0 {
            return Err(Error::Shape("reward head needs at least one hidden unit".into()));
        }
        if weights.cols() != persona_dim + episode_dim + response_dim {
            return Err(Error::Shape(format!(
                "reward head input is {} wide, expected {persona_dim}+{episode_dim}+{response_dim}",
                weights.cols()
            )));
        }
        if bias.len() != hidden || out.len() != hidden {
            return Err(Error::Shape("reward head bias/output size mismatch".into()));
        }
        if !weights.is_finite() || bias.iter().chain(&out).any(|x| !x.is_finite()) {
            return Err(Error::Numeric("reward head parameters".into()));
        }
        Ok(Self {
            weights,
            bias,
            activation,
            out,
            persona_dim,
            episode_dim,
            response_dim,
        })
    }

    /// Gaussian init: weights then output vector, both drawn row-major from
    /// `rng` with standard deviation `1/√fan_in`; zero bias.
    pub fn random(
        hidden: usize,
        persona_dim: usize,
        episode_dim: usize,
        response_dim: usize,
        activation: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        let in_dim = persona_dim + episode_dim + response_dim;
        let weights = Matrix::random_normal(hidden, in_dim, 1.0 / (in_dim as f64).sqrt(), rng);
        let out_std = 1.0 / (hidden as f64).sqrt();
        let out = (0..hidden).map(|_| out_std * rng.normal()).collect();
        Self::new(
            weights,
            vec![0.0; hidden],
            activation,
            out,
            persona_dim,
            episode_dim,
            response_dim,
        )
    }

    pub fn hidden_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn persona_dim(&self) -> usize {
        self.persona_dim
    }

    pub fn episode_dim(&self) -> usize {
        self.episode_dim
    }

    pub fn response_dim(&self) -> usize {
        self.response_dim
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn forward(&self, persona: &[f64], episode: &[f64], response: &[f64]) -> Result<HeadForward> {
        if persona.len() != self.persona_dim
            || episode.len() != self.episode_dim
            || response.len() != self.response_dim
        {
            return Err(Error::Shape(format!(
                "reward head expects ({}, {}, {}) inputs, got ({}, {}, {})",
                self.persona_dim,
                self.episode_dim,
                self.response_dim,
                persona.len(),
                episode.len(),
                response.len()
            )));
        }
        let mut input = Vec::with_capacity(self.input_dim());
        input.extend_from_slice(persona);
        input.extend_from_slice(episode);
        input.extend_from_slice(response);
        let mut pre = self.weights.matvec(&input)?;
        for (p, b) in pre.iter_mut().zip(&self.bias) {
            *p += b;
        }
        let act: Vec<f64> = pre.iter().map(|&x| self.activation.apply(x)).collect();
        let reward = dot(&self.out, &act);
        Ok(HeadForward {
            input,
            pre,
            act,
            reward,
        })
    }

    pub fn reward(&self, persona: &[f64], episode: &[f64], response: &[f64]) -> Result<f64> {
        Ok(self.forward(persona, episode, response)?.reward)
    }
}
