use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeedbackTriple};
use crate::encoder::{encode_history, EncoderKind, EncoderSpec};
use crate::error::{Error, Result};
use crate::numerics::{mean_of, sigmoid, Matrix, Rng};
use crate::persona::{
    kmeans_init, make_windows, quantize_windows, PersonaCodebook, PersonaTrace, Projector,
    UserPersona,
};

use super::config::{LossMode, PersonaMode, TrainConfig};
use super::head::RewardHead;

pub(crate) const STREAM_ENCODER: u64 = 1;
pub(crate) const STREAM_PROJECTOR: u64 = 2;
/// Reward head init stream: weights (hidden × [persona; episode; response],
/// row-major) then the output vector.
pub const STREAM_HEAD: u64 = 3;
pub(crate) const STREAM_KMEANS: u64 = 4;
/// Per-epoch shuffling uses stream `STREAM_SHUFFLE + epoch_index`.
pub const STREAM_SHUFFLE: u64 = 1 << 20;
pub(crate) const STREAM_RESEED: u64 = 2 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub nll: f64,
    pub commit_loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingMetadata {
    pub epochs_completed: usize,
    pub seed: u64,
    pub history: Vec<EpochMetrics>,
}

/// Everything needed to score responses for a user: encoder, projector,
/// codebook, reward head, the config that produced them and training
/// metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: EncoderSpec,
    pub projector: Projector,
    pub codebook: PersonaCodebook,
    pub head: RewardHead,
    pub config: TrainConfig,
    pub metadata: TrainingMetadata,
}

/// A user's persona as seen by the reward head.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonaState {
    pub trace: PersonaTrace,
    pub pooled: Vec<f64>,
}

impl Model {
    /// Fresh model sized for `train`. The codebook is initialized by k-means
    /// over the projected history windows of every training user.
    pub fn init(train: &Dataset, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let rng = Rng::new(cfg.seed);
        let response_dim = train.responses().dim();
        let episode_dim = train.episodes().dim();

        let encoder_weights = (cfg.encoder_kind == EncoderKind::ConcatLinear).then(|| {
            let cols = 2 * response_dim + 1;
            Matrix::random_normal(cfg.encoder_dim, cols, 1.0 / (cols as f64).sqrt(), &mut rng.fork(STREAM_ENCODER))
        });
        let encoder = EncoderSpec::for_kind(cfg.encoder_kind, response_dim, encoder_weights)?;
        let rationale_dim = encoder.output_dim();
        let persona_dim = cfg.resolved_persona_dim(rationale_dim);

        let projector = Projector::random(persona_dim, rationale_dim, &mut rng.fork(STREAM_PROJECTOR));
        let head = RewardHead::random(
            cfg.hidden_dim,
            persona_dim,
            episode_dim,
            response_dim,
            cfg.activation,
            &mut rng.fork(STREAM_HEAD),
        )?;

        let codebook = if cfg.persona_mode == PersonaMode::Pinned {
            PersonaCodebook::pinned_zero(persona_dim, cfg.decay, cfg.epsilon)?
        } else {
            let mut samples = Vec::new();
            for user in train.users() {
                let rationales = encode_history(&encoder, &user.history, train)?;
                for w in make_windows(&rationales, &cfg.window) {
                    samples.push(projector.project(&w)?);
                }
            }
            let mut krng = rng.fork(STREAM_KMEANS);
            if samples.is_empty() {
                let codes = Matrix::random_normal(cfg.codebook_size, persona_dim, 1.0, &mut krng);
                PersonaCodebook::new(codes, vec![1.0; cfg.codebook_size], cfg.decay, cfg.epsilon)?
            } else {
                kmeans_init(&samples, cfg.codebook_size, &mut krng, cfg.kmeans_iters, cfg.decay, cfg.epsilon)?.0
            }
        };

        Ok(Self {
            encoder,
            projector,
            codebook,
            head,
            config: cfg.clone(),
            metadata: TrainingMetadata {
                epochs_completed: 0,
                seed: cfg.seed,
                history: Vec::new(),
            },
        })
    }

    pub fn persona_dim(&self) -> usize {
        self.projector.out_dim()
    }

    /// Errors when the dataset's embedding dimensions differ from the
    /// model's.
    pub fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        let (e, r) = (ds.episodes().dim(), ds.responses().dim());
        if e != self.head.episode_dim() || r != self.head.response_dim() || r != self.encoder.input_dim() {
            return Err(Error::Shape(format!(
                "model expects episode dim {} and response dim {}, dataset has {e} and {r}",
                self.head.episode_dim(),
                self.head.response_dim()
            )));
        }
        Ok(())
    }

    /// Encoded and mean-pooled history windows (before projection).
    pub fn rationale_windows(&self, history: &[FeedbackTriple], ds: &Dataset) -> Result<Vec<Vec<f64>>> {
        let rationales = encode_history(&self.encoder, history, ds)?;
        Ok(make_windows(&rationales, &self.config.window))
    }

    pub fn trace_windows(&self, windows: Vec<Vec<f64>>) -> Result<PersonaTrace> {
        quantize_windows(&self.projector, &self.codebook, windows)
    }

    /// Vector fed to the reward head for a given trace.
    pub fn pooled(&self, trace: &PersonaTrace) -> Vec<f64> {
        let d = self.persona_dim();
        let pooled = match self.config.persona_mode {
            PersonaMode::Quantized => mean_of(trace.persona.code_vectors.iter().map(Vec::as_slice)),
            PersonaMode::Continuous => mean_of(trace.projected.iter().map(Vec::as_slice)),
            PersonaMode::Pinned => None,
        };
        pooled.unwrap_or_else(|| vec![0.0; d])
    }

    pub fn persona_state(&self, history: &[FeedbackTriple], ds: &Dataset) -> Result<PersonaState> {
        let trace = self.trace_windows(self.rationale_windows(history, ds)?)?;
        let pooled = self.pooled(&trace);
        Ok(PersonaState { trace, pooled })
    }

    pub fn reward_pooled(&self, pooled: &[f64], episode: &[f64], response: &[f64]) -> Result<f64> {
        self.head.reward(pooled, episode, response)
    }

    /// Reward of `response` in `episode` for a user with persona `persona`.
    /// An empty persona pools to the zero vector.
    pub fn reward(&self, persona: &UserPersona, episode: &[f64], response: &[f64]) -> Result<f64> {
        let pooled = mean_of(persona.code_vectors.iter().map(Vec::as_slice))
            .unwrap_or_else(|| vec![0.0; self.persona_dim()]);
        self.head.reward(&pooled, episode, response)
    }

    /// Preference probability for the first response.
    ///
    /// Pairwise mode: `σ(R_i - R_j)`. Pointwise mode: `σ(R_i)`, the
    /// probability that response `i` is selected on its own.
    pub fn pair_prob(&self, persona: &UserPersona, episode: &[f64], resp_i: &[f64], resp_j: &[f64]) -> Result<f64> {
        let ri = self.reward(persona, episode, resp_i)?;
        match self.config.loss_mode {
            LossMode::PairwiseBt => {
                let rj = self.reward(persona, episode, resp_j)?;
                Ok(sigmoid(ri - rj))
            }
            LossMode::PointwiseSigmoid => Ok(sigmoid(ri)),
        }
    }

    /// Predicted label for one comparison given precomputed rewards:
    /// 1 when the first response wins or ties.
    pub fn decide(&self, r_first: f64, r_second: f64) -> u8 {
        let first = match self.config.loss_mode {
            LossMode::PairwiseBt => sigmoid(r_first - r_second) >= 0.5,
            LossMode::PointwiseSigmoid => sigmoid(r_first) >= sigmoid(r_second),
        };
        u8::from(first)
    }

    /// Predicts `1` if `resp_i` is preferred over `resp_j` (ties count as
    /// preferring `resp_i`).
    pub fn predict_pair(
        &self,
        history: &[FeedbackTriple],
        episode_id: &str,
        resp_i: &str,
        resp_j: &str,
        ds: &Dataset,
    ) -> Result<u8> {
        let state = self.persona_state(history, ds)?;
        let e = ds.episode_embedding(episode_id)?;
        let ri = self.reward_pooled(&state.pooled, e, ds.response_embedding(resp_i)?)?;
        let rj = self.reward_pooled(&state.pooled, e, ds.response_embedding(resp_j)?)?;
        Ok(self.decide(ri, rj))
    }

    /// Trainable parameters, flattened: projector weights, projector bias,
    /// head weights, head bias, head output.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        p.extend_from_slice(self.projector.weights.data());
        p.extend_from_slice(&self.projector.bias);
        p.extend_from_slice(self.head.weights.data());
        p.extend_from_slice(&self.head.bias);
        p.extend_from_slice(&self.head.out);
        p
    }

    pub fn num_params(&self) -> usize {
        self.projector.weights.data().len()
            + self.projector.bias.len()
            + self.head.weights.data().len()
            + self.head.bias.len()
            + self.head.out.len()
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                p.len()
            )));
        }
        let mut rest = p;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        take(self.projector.weights.data_mut());
        take(&mut self.projector.bias);
        take(self.head.weights.data_mut());
        take(&mut self.head.bias);
        take(&mut self.head.out);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Activation;
    use crate::persona::WindowConfig;
    use crate::simulator::{generate, World, WorldSpec};

    fn world() -> World {
        generate(&WorldSpec {
            train_users: 8,
            validation_users: 2,
            test_users: 3,
            history_min: 4,
            history_max: 8,
            current_per_user: 3,
            episode_dim: 5,
            response_dim: 3,
            ..WorldSpec::default()
        })
        .unwrap()
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            codebook_size: 4,
            hidden_dim: 4,
            window: WindowConfig::new(2),
            ..TrainConfig::default()
        }
    }

    /// Head whose reward is the first response coordinate.
    fn first_coordinate(model: &mut Model) {
        let h = &mut model.head;
        let skip = h.persona_dim() + h.episode_dim();
        h.weights = Matrix::zeros(h.hidden_dim(), h.input_dim());
        h.weights.set(0, skip, 1.0);
        h.bias = vec![0.0; h.hidden_dim()];
        h.activation = Activation::Identity;
        h.out = vec![0.0; h.hidden_dim()];
        h.out[0] = 1.0;
    }

    #[test]
    fn pair_prob_values() {
        let w = world();
        let mut m = Model::init(&w.train, &cfg()).unwrap();
        first_coordinate(&mut m);
        let p = UserPersona::default();
        let e = [0.3; 5];
        let a = [3f64.ln(), 0.5, -1.0];
        let b = [0.0, 2.0, 7.0];
        assert!((m.pair_prob(&p, &e, &a, &b).unwrap() - 0.75).abs() < 1e-15);
        assert!((m.pair_prob(&p, &e, &b, &a).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(m.pair_prob(&p, &e, &a, &a).unwrap(), 0.5);

        m.config.loss_mode = LossMode::PointwiseSigmoid;
        assert!((m.pair_prob(&p, &e, &a, &b).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn silent_model_predicts_first_on_empty_history() {
        let w = world();
        let mut m = Model::init(&w.train, &cfg()).unwrap();
        m.head.out = vec![0.0; m.head.hidden_dim()];
        let u = w.test.users().next().unwrap();
        let t = &u.current[0];
        assert_eq!(m.predict_pair(&[], &t.episode_id, &t.chosen, &t.rejected, &w.test).unwrap(), 1);
        assert_eq!(m.predict_pair(&[], &t.episode_id, &t.rejected, &t.chosen, &w.test).unwrap(), 1);
    }

    #[test]
    fn doubling_history_keeps_predictions_when_windows_align() {
        let w = world();
        let m = Model::init(&w.train, &cfg()).unwrap();
        for u in w.test.users() {
            let even = &u.history[..u.history.len() / 2 * 2];
            let doubled: Vec<FeedbackTriple> = even.iter().chain(even).cloned().collect();
            let once = m.persona_state(even, &w.test).unwrap();
            let twice = m.persona_state(&doubled, &w.test).unwrap();
            let codes = &once.trace.persona.code_indices;
            assert_eq!(twice.trace.persona.code_indices, [codes.as_slice(), codes.as_slice()].concat());
            for (a, b) in once.pooled.iter().zip(&twice.pooled) {
                assert!((a - b).abs() < 1e-12);
            }
            for t in &u.current {
                let a = m.predict_pair(even, &t.episode_id, &t.chosen, &t.rejected, &w.test).unwrap();
                let b = m.predict_pair(&doubled, &t.episode_id, &t.chosen, &t.rejected, &w.test).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let w = world();
        let m = Model::init(&w.train, &cfg()).unwrap();
        let other = generate(&WorldSpec {
            response_dim: 4,
            ..WorldSpec {
                train_users: 3,
                validation_users: 1,
                test_users: 1,
                history_min: 2,
                history_max: 3,
                current_per_user: 1,
                ..WorldSpec::default()
            }
        })
        .unwrap();
        assert!(matches!(m.check_dataset(&other.test), Err(Error::Shape(_))));
    }
}
