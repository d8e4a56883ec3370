//! Mini-batch gradient descent on the projector and reward head, with EMA
//! codebook updates and hand-derived gradients.
//!
//! Per example the loss is `NLL + β · L_commit(user)`; a batch averages it.
//! Gradients reach the projector through the quantizer by straight-through:
//! the gradient with respect to a code vector is copied to the projected
//! window it replaced.

use std::collections::HashSet;

use crate::data::{Dataset, FeedbackTriple};
use crate::error::{Error, Result};
use crate::numerics::{log_sigmoid, mean_of, sigmoid, sq_dist, Rng};
use crate::persona::commitment_loss;

use super::config::{LossMode, PersonaMode, TrainConfig};
use super::model::{EpochMetrics, Model, STREAM_RESEED, STREAM_SHUFFLE};

/// One current comparison of a training user, with embeddings resolved.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub user: usize,
    pub episode: &'a [f64],
    pub first: &'a [f64],
    pub second: &'a [f64],
    pub label: u8,
}

/// What the loss needs to know about one user besides the parameters.
#[derive(Debug, Clone, Default)]
pub struct UserTerm {
    /// Pooled rationale windows (projector inputs).
    pub windows: Vec<Vec<f64>>,
    /// Assigned code per window; constants under differentiation.
    pub codes: Vec<Vec<f64>>,
    /// When set, the pooled persona is `mean(w_k + offset_k)` instead of
    /// `mean(code_k)`. With `offset_k = code_k - w_k` frozen at some
    /// parameter point, this is the straight-through surrogate whose finite
    /// differences match the analytic gradient.
    pub offsets: Option<Vec<Vec<f64>>>,
}

/// Resolved training set: cached rationale windows per user plus examples.
#[derive(Debug)]
pub struct TrainingSet<'a> {
    pub dataset: &'a Dataset,
    pub user_ids: Vec<&'a str>,
    pub windows: Vec<Vec<Vec<f64>>>,
    pub examples: Vec<Example<'a>>,
    pub sources: Vec<&'a FeedbackTriple>,
}

impl<'a> TrainingSet<'a> {
    pub fn new(model: &Model, ds: &'a Dataset) -> Result<Self> {
        model.check_dataset(ds)?;
        let mut user_ids = Vec::new();
        let mut windows = Vec::new();
        let mut examples = Vec::new();
        let mut sources = Vec::new();
        for (u, user) in ds.users().enumerate() {
            user_ids.push(user.user_id.as_str());
            windows.push(model.rationale_windows(&user.history, ds)?);
            for t in &user.current {
                examples.push(Example {
                    user: u,
                    episode: ds.episode_embedding(&t.episode_id)?,
                    first: ds.response_embedding(&t.chosen)?,
                    second: ds.response_embedding(&t.rejected)?,
                    label: t.label,
                });
                sources.push(t);
            }
        }
        Ok(Self {
            dataset: ds,
            user_ids,
            windows,
            examples,
            sources,
        })
    }

    /// Code assignment of every window of every user under the current model.
    pub fn assignments(&self, model: &Model) -> Result<Vec<Vec<usize>>> {
        self.windows
            .iter()
            .map(|ws| {
                ws.iter()
                    .map(|w| Ok(model.codebook.quantize(&model.projector.project(w)?)?.0))
                    .collect()
            })
            .collect()
    }

    /// User terms with codes looked up from `assignments` in the current
    /// codebook.
    pub fn user_term(&self, model: &Model, user: usize, assignments: &[usize]) -> UserTerm {
        UserTerm {
            windows: self.windows[user].clone(),
            codes: assignments.iter().map(|&m| model.codebook.code(m).to_vec()).collect(),
            offsets: None,
        }
    }
}

/// Loss and gradient bookkeeping for a flat parameter vector laid out as in
/// [`Model::params`].
struct Layout {
    proj_w: usize,
    proj_b: usize,
    head_w: usize,
    head_b: usize,
    head_out: usize,
}

impl Layout {
    fn of(model: &Model) -> Self {
        let proj_w = 0;
        let proj_b = proj_w + model.projector.weights.data().len();
        let head_w = proj_b + model.projector.bias.len();
        let head_b = head_w + model.head.weights.data().len();
        let head_out = head_b + model.head.bias.len();
        Self {
            proj_w,
            proj_b,
            head_w,
            head_b,
            head_out,
        }
    }
}

/// Loss terms of one example.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub nll: f64,
    pub commit: f64,
}

/// Adds `d loss / d params` of one example into `grad` (scaled by `weight`)
/// and returns its loss terms. `grad` may be empty to skip the backward
/// pass.
pub fn example_loss(model: &Model, term: &UserTerm, ex: &Example<'_>, weight: f64, grad: &mut [f64]) -> Result<LossTerms> {
    let cfg = &model.config;
    let d = model.persona_dim();
    let n = term.windows.len();
    let projected = term
        .windows
        .iter()
        .map(|w| model.projector.project(w))
        .collect::<Result<Vec<_>>>()?;

    let pooled = match cfg.persona_mode {
        PersonaMode::Pinned => None,
        PersonaMode::Continuous => mean_of(projected.iter().map(Vec::as_slice)),
        PersonaMode::Quantized => match &term.offsets {
            Some(off) => {
                let shifted: Vec<Vec<f64>> = projected
                    .iter()
                    .zip(off)
                    .map(|(w, o)| w.iter().zip(o).map(|(a, b)| a + b).collect())
                    .collect();
                mean_of(shifted.iter().map(Vec::as_slice))
            }
            None => mean_of(term.codes.iter().map(Vec::as_slice)),
        },
    }
    .unwrap_or_else(|| vec![0.0; d]);

    let commit = if cfg.persona_mode == PersonaMode::Quantized && n > 0 {
        projected.iter().zip(&term.codes).map(|(w, z)| sq_dist(w, z)).sum::<f64>() / n as f64
    } else {
        0.0
    };

    let f1 = model.head.forward(&pooled, ex.episode, ex.first)?;
    let f2 = model.head.forward(&pooled, ex.episode, ex.second)?;
    let y = ex.label as f64;
    let nll = nll_from_rewards(cfg.loss_mode, f1.reward, f2.reward, ex.label);
    let (g1, g2) = match cfg.loss_mode {
        LossMode::PairwiseBt => {
            let g = sigmoid(f1.reward - f2.reward) - y;
            (g, -g)
        }
        LossMode::PointwiseSigmoid => (sigmoid(f1.reward) - y, sigmoid(f2.reward) - (1.0 - y)),
    };
    let terms = LossTerms { nll, commit };
    if grad.is_empty() {
        return Ok(terms);
    }

    let lay = Layout::of(model);
    let head = &model.head;
    let hidden = head.hidden_dim();
    let in_dim = head.input_dim();
    let mut d_pooled = vec![0.0; d];
    for (f, g) in [(&f1, g1), (&f2, g2)] {
        let g = g * weight;
        if g == 0.0 {
            continue;
        }
        for h in 0..hidden {
            grad[lay.head_out + h] += g * f.act[h];
            let dpre = g * head.out[h] * head.activation.derivative(f.pre[h]);
            if dpre == 0.0 {
                continue;
            }
            grad[lay.head_b + h] += dpre;
            let row = &mut grad[lay.head_w + h * in_dim..lay.head_w + (h + 1) * in_dim];
            for (gw, x) in row.iter_mut().zip(&f.input) {
                *gw += dpre * x;
            }
            let wrow = head.weights.row(h);
            for k in 0..d {
                d_pooled[k] += dpre * wrow[k];
            }
        }
    }

    if cfg.persona_mode == PersonaMode::Pinned || n == 0 {
        return Ok(terms);
    }
    let inv_n = 1.0 / n as f64;
    let beta = if cfg.persona_mode == PersonaMode::Quantized {
        cfg.commit_weight
    } else {
        0.0
    };
    let rdim = model.projector.in_dim();
    for (k, (window, w)) in term.windows.iter().zip(&projected).enumerate() {
        for i in 0..d {
            let mut dw = d_pooled[i] * inv_n;
            if beta != 0.0 {
                dw += weight * beta * 2.0 * (w[i] - term.codes[k][i]) * inv_n;
            }
            if dw == 0.0 {
                continue;
            }
            grad[lay.proj_b + i] += dw;
            let row = &mut grad[lay.proj_w + i * rdim..lay.proj_w + (i + 1) * rdim];
            for (gw, x) in row.iter_mut().zip(window) {
                *gw += dw * x;
            }
        }
    }
    Ok(terms)
}

/// Mean total loss `NLL + β·commit` over `batch` and its gradient.
pub fn batch_loss(model: &Model, batch: &[(UserTerm, Example<'_>)]) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; model.num_params()];
    let weight = 1.0 / batch.len().max(1) as f64;
    let mut total = 0.0;
    for (term, ex) in batch {
        let t = example_loss(model, term, ex, weight, &mut grad)?;
        total += weight * (t.nll + model.config.commit_weight * t.commit);
    }
    Ok((total, grad))
}

/// Freezes `offset_k = code_k - w_k` at the model's current parameters, so
/// the batch loss becomes the straight-through surrogate.
pub fn freeze_surrogate(model: &Model, batch: &mut [(UserTerm, Example<'_>)]) -> Result<()> {
    for (term, _) in batch.iter_mut() {
        let offsets = term
            .windows
            .iter()
            .zip(&term.codes)
            .map(|(w, z)| {
                let p = model.projector.project(w)?;
                Ok(z.iter().zip(&p).map(|(a, b)| a - b).collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        term.offsets = Some(offsets);
    }
    Ok(())
}

/// Aggregates over a full pass with fresh personas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassStats {
    pub nll: f64,
    pub commit: f64,
    pub accuracy: f64,
    pub count: usize,
}

/// Mean NLL, mean commitment loss and accuracy over the current items of
/// `ds`, with personas recomputed from each user's history.
pub fn pass_stats(model: &Model, ds: &Dataset) -> Result<PassStats> {
    let set = TrainingSet::new(model, ds)?;
    let mut pooled = Vec::with_capacity(set.windows.len());
    let mut commit = 0.0;
    let mut with_windows = 0usize;
    for ws in &set.windows {
        let trace = model.trace_windows(ws.clone())?;
        if model.config.persona_mode == PersonaMode::Quantized && !ws.is_empty() {
            commit += commitment_loss(&trace.projected, &trace.persona.code_vectors)?;
            with_windows += 1;
        }
        pooled.push(model.pooled(&trace));
    }
    let mut nll = 0.0;
    let mut correct = 0usize;
    for ex in &set.examples {
        let p = &pooled[ex.user];
        let r1 = model.reward_pooled(p, ex.episode, ex.first)?;
        let r2 = model.reward_pooled(p, ex.episode, ex.second)?;
        nll += nll_from_rewards(model.config.loss_mode, r1, r2, ex.label);
        if model.decide(r1, r2) == ex.label {
            correct += 1;
        }
    }
    let count = set.examples.len();
    Ok(PassStats {
        nll: if count > 0 { nll / count as f64 } else { 0.0 },
        commit: if with_windows > 0 { commit / with_windows as f64 } else { 0.0 },
        accuracy: if count > 0 { correct as f64 / count as f64 } else { 0.0 },
        count,
    })
}

/// Negative log-likelihood of `label` given the two rewards.
pub fn nll_from_rewards(mode: LossMode, r1: f64, r2: f64, label: u8) -> f64 {
    let y = label as f64;
    let bce = |logit: f64, target: f64| -(target * log_sigmoid(logit) + (1.0 - target) * log_sigmoid(-logit));
    match mode {
        LossMode::PairwiseBt => bce(r1 - r2, y),
        LossMode::PointwiseSigmoid => bce(r1, y) + bce(r2, 1.0 - y),
    }
}

/// Initializes a model on `train` and trains it for `cfg.epochs` epochs.
pub fn train(train: &Dataset, validation: Option<&Dataset>, cfg: &TrainConfig) -> Result<Model> {
    let model = Model::init(train, cfg)?;
    continue_training(model, train, validation, cfg.epochs, |_| {})
}

/// Runs `epochs` more epochs on `model`, appending to its loss history.
/// `on_epoch` sees each epoch's metrics as soon as they are computed.
pub fn continue_training(
    mut model: Model,
    train: &Dataset,
    validation: Option<&Dataset>,
    epochs: usize,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Model> {
    if epochs == 0 {
        return Ok(model);
    }
    let set = TrainingSet::new(&model, train)?;
    if set.examples.is_empty() {
        return Err(Error::Config("training split has no current comparisons".into()));
    }
    if let Some(v) = validation {
        model.check_dataset(v)?;
    }
    let root = Rng::new(model.metadata.seed);
    let batch_size = model.config.batch_size;
    let lr = model.config.learning_rate;
    let mode = model.config.persona_mode;

    for _ in 0..epochs {
        let epoch = model.metadata.epochs_completed;
        let assignments = set.assignments(&model)?;
        let mut order: Vec<usize> = (0..set.examples.len()).collect();
        root.fork(STREAM_SHUFFLE + epoch as u64).shuffle(&mut order);
        let mut reseed_rng = root.fork(STREAM_RESEED + epoch as u64);

        for chunk in order.chunks(batch_size) {
            let batch: Vec<(UserTerm, Example<'_>)> = chunk
                .iter()
                .map(|&i| {
                    let ex = set.examples[i];
                    (set.user_term(&model, ex.user, &assignments[ex.user]), ex)
                })
                .collect();
            let (loss, grad) = batch_loss(&model, &batch)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                let ids: Vec<String> = chunk
                    .iter()
                    .map(|&i| format!("{}/{}", set.sources[i].user_id, set.sources[i].episode_id))
                    .collect();
                return Err(Error::Numeric(format!(
                    "loss {loss} in epoch {epoch}, batch items [{}]",
                    ids.join(", ")
                )));
            }

            // EMA statistics use the windows the forward pass saw.
            let mut ema_windows = Vec::new();
            let mut ema_assign = Vec::new();
            if mode == PersonaMode::Quantized {
                let mut seen = HashSet::new();
                for &i in chunk {
                    let u = set.examples[i].user;
                    if !seen.insert(u) {
                        continue;
                    }
                    for (w, &m) in set.windows[u].iter().zip(&assignments[u]) {
                        ema_windows.push(model.projector.project(w)?);
                        ema_assign.push(m);
                    }
                }
            }

            let mut params = model.params();
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= lr * g;
            }
            model.set_params(&params)?;

            if mode == PersonaMode::Quantized {
                model.codebook.ema_update(&ema_windows, &ema_assign)?;
                let steps = model.config.dead_code_steps;
                model.codebook.reseed_dead(&ema_windows, steps, &mut reseed_rng);
            }
        }

        let stats = pass_stats(&model, train)?;
        let val_acc = match validation {
            Some(v) if v.num_current() > 0 => Some(pass_stats(&model, v)?.accuracy),
            _ => None,
        };
        let metrics = EpochMetrics {
            epoch: epoch + 1,
            nll: stats.nll,
            commit_loss: stats.commit,
            train_acc: stats.accuracy,
            val_acc,
        };
        log::debug!(
            "epoch {} nll {:.4} commit {:.4} train_acc {:.4} val_acc {:?}",
            metrics.epoch,
            metrics.nll,
            metrics.commit_loss,
            metrics.train_acc,
            metrics.val_acc
        );
        on_epoch(&metrics);
        model.metadata.history.push(metrics);
        model.metadata.epochs_completed += 1;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, Activation};
    use crate::simulator::{generate, WorldSpec};

    fn world() -> crate::simulator::World {
        generate(&WorldSpec {
            train_users: 10,
            validation_users: 2,
            test_users: 2,
            history_min: 3,
            history_max: 12,
            current_per_user: 4,
            episode_dim: 6,
            response_dim: 4,
            ..WorldSpec::default()
        })
        .unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            codebook_size: 6,
            hidden_dim: 5,
            persona_dim: 3,
            activation: Activation::Tanh,
            epochs: 3,
            batch_size: 4,
            window: crate::persona::WindowConfig::new(3),
            ..TrainConfig::default()
        }
    }

    fn check(cfg: &TrainConfig) -> f64 {
        let w = world();
        let model = Model::init(&w.train, cfg).unwrap();
        let set = TrainingSet::new(&model, &w.train).unwrap();
        let assign = set.assignments(&model).unwrap();
        let mut batch: Vec<_> = set
            .examples
            .iter()
            .take(12)
            .map(|ex| (set.user_term(&model, ex.user, &assign[ex.user]), *ex))
            .collect();
        freeze_surrogate(&model, &mut batch).unwrap();
        let params = model.params();
        grad_check(
            |p| {
                let mut m = model.clone();
                m.set_params(p).unwrap();
                batch_loss(&m, &batch).unwrap()
            },
            &params,
            1e-5,
        )
        .unwrap()
    }

    #[test]
    fn gradients_match_finite_differences() {
        for mode in [PersonaMode::Quantized, PersonaMode::Continuous] {
            for loss_mode in [LossMode::PairwiseBt, LossMode::PointwiseSigmoid] {
                let cfg = TrainConfig {
                    persona_mode: mode,
                    loss_mode,
                    ..small_cfg()
                };
                let err = check(&cfg);
                assert!(err < 1e-4, "{mode:?} {loss_mode:?}: {err}");
            }
        }
        assert!(check(&small_cfg().persona_free()) < 1e-4);
    }

    #[test]
    fn zero_epochs_is_initialization() {
        let w = world();
        let cfg = TrainConfig { epochs: 0, ..small_cfg() };
        let trained = train(&w.train, None, &cfg).unwrap();
        assert_eq!(trained, Model::init(&w.train, &cfg).unwrap());
        assert!(trained.metadata.history.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_resumable() {
        let w = world();
        let cfg = small_cfg();
        let a = train(&w.train, Some(&w.validation), &cfg).unwrap();
        let b = train(&w.train, Some(&w.validation), &cfg).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let epochs: Vec<usize> = a.metadata.history.iter().map(|m| m.epoch).collect();
        assert_eq!(epochs, vec![1, 2, 3]);

        let first = train(&w.train, Some(&w.validation), &TrainConfig { epochs: 2, ..cfg.clone() }).unwrap();
        let resumed = continue_training(first, &w.train, Some(&w.validation), 1, |_| {}).unwrap();
        assert_eq!(resumed.metadata.epochs_completed, 3);
        let epochs: Vec<usize> = resumed.metadata.history.iter().map(|m| m.epoch).collect();
        assert_eq!(epochs, vec![1, 2, 3]);
        // The resumed run replays the same shuffles, so it lands where the
        // uninterrupted run does.
        assert_eq!(resumed.params(), a.params());
    }

    #[test]
    fn nll_values() {
        let ln2 = std::f64::consts::LN_2;
        assert!((nll_from_rewards(LossMode::PairwiseBt, 0.0, 0.0, 1) - ln2).abs() < 1e-15);
        assert!((nll_from_rewards(LossMode::PointwiseSigmoid, 0.0, 0.0, 0) - 2.0 * ln2).abs() < 1e-15);
        let a = nll_from_rewards(LossMode::PairwiseBt, 1.3, -0.2, 1);
        let b = nll_from_rewards(LossMode::PairwiseBt, -0.2, 1.3, 0);
        assert_eq!(a, b);
    }

    #[test]
    fn separable_data_is_fit_within_50_epochs() {
        // One prototype and near-zero label noise: labels are a linear
        // function of the response difference.
        let w = generate(&WorldSpec {
            num_prototypes: 1,
            multimodal_rate: 0.0,
            temperature: 1e-9,
            train_users: 30,
            validation_users: 1,
            test_users: 1,
            history_min: 2,
            history_max: 4,
            current_per_user: 10,
            episode_dim: 6,
            response_dim: 4,
            ..WorldSpec::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            codebook_size: 4,
            hidden_dim: 8,
            epochs: 50,
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let model = train(&w.train, None, &cfg).unwrap();
        let last = model.metadata.history.last().unwrap();
        assert_eq!(last.train_acc, 1.0, "{:?}", model.metadata.history.iter().map(|m| m.train_acc).collect::<Vec<_>>());
    }
}
