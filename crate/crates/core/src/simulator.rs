//! Synthetic worlds with a known generative persona model.
//!
//! Users carry one prototype (or alternate between two), every feedback item
//! gets a fresh episode and a fresh pair of responses, and labels are drawn
//! from a Bradley-Terry model over a bilinear true reward
//! `R*(u, e, τ) = z_uᵀ M [e; τ]` at temperature `T`.

use std::path::Path;
use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::binio::{ByteReader, ByteWriter};
use crate::data::{Dataset, EmbeddingTable, FeedbackTriple, Role, Split};
use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, normalize, sigmoid, Matrix, Rng};

pub const TRUTH_MAGIC: &[u8; 4] = b"EPGT";
pub const TRUTH_VERSION: u32 = 1;
/// Rejection-sampling budget for well-separated prototypes.
pub const PROTOTYPE_ATTEMPTS: usize = 10_000;

const STREAM_PROTOTYPES: u64 = 1;
const STREAM_REWARD: u64 = 2;
const STREAM_TOPICS: u64 = 3;
const STREAM_SPLIT: u64 = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSpec {
    pub num_prototypes: usize,
    pub persona_dim: usize,
    pub episode_dim: usize,
    pub response_dim: usize,
    pub train_users: usize,
    pub validation_users: usize,
    pub test_users: usize,
    pub history_min: usize,
    pub history_max: usize,
    pub current_per_user: usize,
    pub temperature: f64,
    /// Fraction of each test user's current episodes drawn orthogonal to
    /// that user's history episodes.
    pub episode_shift: f64,
    /// Probability that a user alternates between two prototypes.
    pub multimodal_rate: f64,
    /// Standard deviation of the entries of the true reward matrix.
    pub reward_scale: f64,
    pub min_prototype_distance: f64,
    /// How strongly episodes lean toward a per-prototype topic direction.
    /// `0` gives isotropic episodes.
    pub topic_coupling: f64,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            num_prototypes: 8,
            persona_dim: 4,
            episode_dim: 64,
            response_dim: 8,
            train_users: 200,
            validation_users: 50,
            test_users: 50,
            history_min: 20,
            history_max: 60,
            current_per_user: 50,
            temperature: 1.0,
            episode_shift: 0.0,
            multimodal_rate: 0.1,
            reward_scale: 2.0,
            min_prototype_distance: 1.0,
            topic_coupling: 0.0,
            seed: 0,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_prototypes", self.num_prototypes),
            ("persona_dim", self.persona_dim),
            ("episode_dim", self.episode_dim),
            ("response_dim", self.response_dim),
            ("train_users", self.train_users),
            ("test_users", self.test_users),
            ("current_per_user", self.current_per_user),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("world.{name} must be positive")));
            }
        }
        if self.history_min > self.history_max {
            return Err(Error::Config(format!(
                "world.history_min ({}) exceeds world.history_max ({})",
                self.history_min, self.history_max
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("world.temperature must be positive".into()));
        }
        for (name, v) in [
            ("episode_shift", self.episode_shift),
            ("multimodal_rate", self.multimodal_rate),
            ("topic_coupling", self.topic_coupling),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("world.{name} must be in [0, 1], got {v}")));
            }
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return Err(Error::Config("world.reward_scale must be positive".into()));
        }
        if !(self.min_prototype_distance >= 0.0) {
            return Err(Error::Config("world.min_prototype_distance must be non-negative".into()));
        }
        if self.multimodal_rate > 0.0 && self.num_prototypes < 2 {
            return Err(Error::Config("world.multimodal_rate > 0 needs at least two prototypes".into()));
        }
        if self.episode_shift > 0.0 && self.episode_dim <= self.history_max {
            return Err(Error::Config(format!(
                "world.episode_dim ({}) must exceed world.history_max ({}) for shifted episodes",
                self.episode_dim, self.history_max
            )));
        }
        Ok(())
    }
}

/// The generative side of a world.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// One unit-norm prototype per row.
    pub prototypes: Matrix,
    /// `persona_dim × (episode_dim + response_dim)`.
    pub reward: Matrix,
    /// Prototype indices per user (one, or two for alternating users).
    pub users: IndexMap<String, Vec<usize>>,
    /// Prototype active in each episode.
    pub episodes: IndexMap<String, usize>,
}

impl GroundTruth {
    pub fn true_reward(&self, prototype: usize, episode: &[f64], response: &[f64]) -> f64 {
        let z = self.prototypes.row(prototype);
        let de = episode.len();
        let mut r = 0.0;
        for (a, &za) in z.iter().enumerate() {
            let row = self.reward.row(a);
            r += za * (dot(&row[..de], episode) + dot(&row[de..], response));
        }
        r
    }

    pub fn min_prototype_distance(&self) -> f64 {
        let k = self.prototypes.rows();
        let mut best = f64::INFINITY;
        for i in 0..k {
            for j in i + 1..k {
                best = best.min(crate::numerics::sq_dist(self.prototypes.row(i), self.prototypes.row(j)).sqrt());
            }
        }
        best
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = ByteWriter::new();
        out.bytes(TRUTH_MAGIC);
        out.u32(TRUTH_VERSION);

        let mut w = ByteWriter::new();
        w.matrix(&self.prototypes);
        out.section(1, &w.into_bytes());

        let mut w = ByteWriter::new();
        w.matrix(&self.reward);
        out.section(2, &w.into_bytes());

        let mut w = ByteWriter::new();
        w.u64(self.users.len() as u64);
        for (id, protos) in &self.users {
            w.string(id);
            w.u64(protos.len() as u64);
            protos.iter().for_each(|&p| w.u64(p as u64));
        }
        out.section(3, &w.into_bytes());

        let mut w = ByteWriter::new();
        w.u64(self.episodes.len() as u64);
        for (id, &p) in &self.episodes {
            w.string(id);
            w.u64(p as u64);
        }
        out.section(4, &w.into_bytes());
        out.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "truth file");
        r.expect_magic(TRUTH_MAGIC)?;
        let version = r.u32()?;
        if version != TRUTH_VERSION {
            return Err(Error::Format(format!("truth file: unsupported version {version}")));
        }
        let mut next = |tag: u8| -> Result<ByteReader<'_>> {
            let at = r.position();
            let (found, body) = r.section()?;
            if found != tag {
                return Err(Error::Format(format!(
                    "truth file: expected section {tag} at byte offset {at}, found {found}"
                )));
            }
            Ok(body)
        };

        let mut s = next(1)?;
        let prototypes = s.matrix()?;
        s.expect_end()?;
        let mut s = next(2)?;
        let reward = s.matrix()?;
        s.expect_end()?;
        let k = prototypes.rows();
        let check = |p: u64| -> Result<usize> {
            if (p as usize) < k {
                Ok(p as usize)
            } else {
                Err(Error::Format(format!("truth file: prototype index {p} out of range")))
            }
        };

        let mut s = next(3)?;
        let n = s.len_prefix(9)?;
        let mut users = IndexMap::with_capacity(n);
        for _ in 0..n {
            let id = s.string()?;
            let m = s.len_prefix(8)?;
            let protos = (0..m).map(|_| check(s.u64()?)).collect::<Result<Vec<_>>>()?;
            users.insert(id, protos);
        }
        s.expect_end()?;

        let mut s = next(4)?;
        let n = s.len_prefix(16)?;
        let mut episodes = IndexMap::with_capacity(n);
        for _ in 0..n {
            let id = s.string()?;
            episodes.insert(id, check(s.u64()?)?);
        }
        s.expect_end()?;
        r.expect_end()?;

        if reward.rows() != prototypes.cols() {
            return Err(Error::Format("truth file: reward rows must equal prototype dim".into()));
        }
        Ok(Self {
            prototypes,
            reward,
            users,
            episodes,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// The three splits of a generated world plus its truth.
#[derive(Debug, Clone)]
pub struct World {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub truth: GroundTruth,
}

pub const FEEDBACK_FILES: [(Split, &str); 3] = [
    (Split::Train, "train.jsonl"),
    (Split::Validation, "validation.jsonl"),
    (Split::Test, "test.jsonl"),
];
pub const EPISODES_FILE: &str = "episodes.epem";
pub const RESPONSES_FILE: &str = "responses.epem";
pub const TRUTH_FILE: &str = "truth.epgt";

impl World {
    pub fn split(&self, split: Split) -> &Dataset {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    /// Writes the three feedback files, both embedding files and the truth
    /// sidecar into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (split, name) in FEEDBACK_FILES {
            self.split(split).write_feedback(&dir.join(name))?;
        }
        self.train.episodes().write(&dir.join(EPISODES_FILE))?;
        self.train.responses().write(&dir.join(RESPONSES_FILE))?;
        self.truth.write(&dir.join(TRUTH_FILE))
    }

    /// Reads a directory written by [`World::write`].
    pub fn read(dir: &Path) -> Result<Self> {
        let episodes = Arc::new(EmbeddingTable::read(&dir.join(EPISODES_FILE))?);
        let responses = Arc::new(EmbeddingTable::read(&dir.join(RESPONSES_FILE))?);
        let load = |name: &str| Dataset::load_with_tables(&dir.join(name), episodes.clone(), responses.clone());
        Ok(Self {
            train: load(FEEDBACK_FILES[0].1)?,
            validation: load(FEEDBACK_FILES[1].1)?,
            test: load(FEEDBACK_FILES[2].1)?,
            truth: GroundTruth::read(&dir.join(TRUTH_FILE))?,
        })
    }
}

fn unit_vector(dim: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v = normalize(&rng.normal_vec(dim));
        if v.iter().any(|&x| x != 0.0) {
            return v;
        }
    }
}

fn round_f32(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x as f32 as f64).collect()
}

/// Unit vector orthogonal to every vector in `basis` (assumed orthonormal).
fn orthogonal_unit(basis: &[Vec<f64>], dim: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let mut v = rng.normal_vec(dim);
        // Two passes keep the residual overlap at rounding level.
        for _ in 0..2 {
            for b in basis {
                let c = dot(&v, b);
                axpy(-c, b, &mut v);
            }
        }
        if crate::numerics::norm(&v) > 1e-6 {
            return normalize(&v);
        }
    }
}

fn orthonormal_basis(vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let mut u = v.clone();
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&u, b);
                axpy(-c, b, &mut u);
            }
        }
        if crate::numerics::norm(&u) > 1e-9 {
            basis.push(normalize(&u));
        }
    }
    basis
}

fn sample_prototypes(spec: &WorldSpec, rng: &mut Rng) -> Result<Matrix> {
    let mut protos: Vec<Vec<f64>> = Vec::with_capacity(spec.num_prototypes);
    let mut attempts = 0;
    while protos.len() < spec.num_prototypes {
        if attempts == PROTOTYPE_ATTEMPTS {
            return Err(Error::Config(format!(
                "world.min_prototype_distance = {} is infeasible for {} prototypes in {} dims after {PROTOTYPE_ATTEMPTS} rejections",
                spec.min_prototype_distance, spec.num_prototypes, spec.persona_dim
            )));
        }
        attempts += 1;
        let z = unit_vector(spec.persona_dim, rng);
        let far = protos
            .iter()
            .all(|p| crate::numerics::sq_dist(p, &z).sqrt() >= spec.min_prototype_distance);
        if far {
            protos.push(z);
        }
    }
    Matrix::from_rows(&protos)
}

struct Builder<'a> {
    spec: &'a WorldSpec,
    truth: GroundTruth,
    topics: Vec<Vec<f64>>,
    episodes: EmbeddingTable,
    responses: EmbeddingTable,
    records: Vec<(Split, FeedbackTriple, Role)>,
}

impl Builder<'_> {
    fn episode(&mut self, id: &str, prototype: usize, shifted_from: Option<&[Vec<f64>]>, rng: &mut Rng) -> Result<Vec<f64>> {
        let d = self.spec.episode_dim;
        let v = match shifted_from {
            Some(basis) => orthogonal_unit(basis, d, rng),
            None => {
                let noise = unit_vector(d, rng);
                let t = self.spec.topic_coupling;
                if t > 0.0 {
                    let mut v: Vec<f64> = noise.iter().map(|x| x * (1.0 - t * t).sqrt()).collect();
                    axpy(t, &self.topics[prototype], &mut v);
                    normalize(&v)
                } else {
                    noise
                }
            }
        };
        let v = round_f32(&v);
        self.episodes.insert(id, &v)?;
        self.truth.episodes.insert(id.to_owned(), prototype);
        Ok(v)
    }

    fn response(&mut self, id: &str, rng: &mut Rng) -> Result<Vec<f64>> {
        let v = round_f32(&unit_vector(self.spec.response_dim, rng));
        self.responses.insert(id, &v)?;
        Ok(v)
    }

    fn user(&mut self, split: Split, index: usize, rng: &mut Rng) -> Result<()> {
        let spec = self.spec;
        let user_id = format!("{}-u{index:04}", split.as_str());
        let first = rng.below(spec.num_prototypes);
        let protos = if rng.bernoulli(spec.multimodal_rate) {
            let mut second = rng.below(spec.num_prototypes - 1);
            if second >= first {
                second += 1;
            }
            vec![first, second]
        } else {
            vec![first]
        };
        let n_hist = spec.history_min + rng.below(spec.history_max - spec.history_min + 1);
        let n_cur = spec.current_per_user;
        let mut shifted = vec![false; n_cur];
        if split == Split::Test && spec.episode_shift > 0.0 {
            let k = (spec.episode_shift * n_cur as f64).round() as usize;
            let mut idx: Vec<usize> = (0..n_cur).collect();
            rng.shuffle(&mut idx);
            for &i in &idx[..k.min(n_cur)] {
                shifted[i] = true;
            }
        }

        let mut history_episodes = Vec::with_capacity(n_hist);
        let mut basis = Vec::new();
        for item in 0..n_hist + n_cur {
            let role = if item < n_hist { Role::History } else { Role::Current };
            if item == n_hist && shifted.iter().any(|&s| s) {
                basis = orthonormal_basis(&history_episodes);
            }
            let prototype = protos[item % protos.len()];
            let episode_id = format!("{user_id}-e{item:03}");
            let shift = role == Role::Current && shifted[item - n_hist];
            let e = self.episode(&episode_id, prototype, shift.then_some(basis.as_slice()), rng)?;
            if role == Role::History {
                history_episodes.push(e.clone());
            }
            let a_id = format!("{episode_id}-a");
            let b_id = format!("{episode_id}-b");
            let a = self.response(&a_id, rng)?;
            let b = self.response(&b_id, rng)?;
            let diff = self.truth.true_reward(prototype, &e, &a) - self.truth.true_reward(prototype, &e, &b);
            let label = u8::from(rng.bernoulli(sigmoid(diff / spec.temperature)));
            self.records.push((
                split,
                FeedbackTriple {
                    user_id: user_id.clone(),
                    episode_id,
                    chosen: a_id,
                    rejected: b_id,
                    label,
                },
                role,
            ));
        }
        self.truth.users.insert(user_id, protos);
        Ok(())
    }
}

/// Generates a world. Identical specs give identical worlds.
pub fn generate(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let rng = Rng::new(spec.seed);
    let prototypes = sample_prototypes(spec, &mut rng.fork(STREAM_PROTOTYPES))?;
    let reward = Matrix::random_normal(
        spec.persona_dim,
        spec.episode_dim + spec.response_dim,
        spec.reward_scale,
        &mut rng.fork(STREAM_REWARD),
    );
    let mut trng = rng.fork(STREAM_TOPICS);
    let topics = (0..spec.num_prototypes)
        .map(|_| unit_vector(spec.episode_dim, &mut trng))
        .collect();

    let mut b = Builder {
        spec,
        truth: GroundTruth {
            prototypes,
            reward,
            users: IndexMap::new(),
            episodes: IndexMap::new(),
        },
        topics,
        episodes: EmbeddingTable::new(spec.episode_dim),
        responses: EmbeddingTable::new(spec.response_dim),
        records: Vec::new(),
    };
    let splits = [
        (Split::Train, spec.train_users),
        (Split::Validation, spec.validation_users),
        (Split::Test, spec.test_users),
    ];
    for (i, (split, n)) in splits.into_iter().enumerate() {
        let mut srng = rng.fork(STREAM_SPLIT + i as u64);
        for u in 0..n {
            b.user(split, u, &mut srng)?;
        }
    }

    let episodes = Arc::new(b.episodes);
    let responses = Arc::new(b.responses);
    let mut sets = [Split::Train, Split::Validation, Split::Test]
        .map(|s| Dataset::new(Some(s), episodes.clone(), responses.clone()));
    for (split, triple, role) in b.records {
        let idx = match split {
            Split::Train => 0,
            Split::Validation => 1,
            Split::Test => 2,
        };
        sets[idx].push(triple, role);
    }
    let [train, validation, test] = sets;
    Ok(World {
        train,
        validation,
        test,
        truth: b.truth,
    })
}

/// Accuracy of the true-reward argmax (ties go to the first response)
/// against the sampled labels of every current item in `dataset`.
pub fn bayes_accuracy(truth: &GroundTruth, dataset: &Dataset) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for user in dataset.users() {
        if !truth.users.contains_key(&user.user_id) {
            return Err(Error::Integrity(format!(
                "user {:?} is not part of this ground truth",
                user.user_id
            )));
        }
        for t in &user.current {
            let &p = truth.episodes.get(&t.episode_id).ok_or_else(|| {
                Error::Integrity(format!("episode {:?} is not part of this ground truth", t.episode_id))
            })?;
            let e = dataset.episode_embedding(&t.episode_id)?;
            if e.len() + dataset.responses().dim() != truth.reward.cols() {
                return Err(Error::Shape("dataset dimensions do not match the ground truth".into()));
            }
            let ri = truth.true_reward(p, e, dataset.response_embedding(&t.chosen)?);
            let rj = truth.true_reward(p, e, dataset.response_embedding(&t.rejected)?);
            let pred = u8::from(ri >= rj);
            correct += usize::from(pred == t.label);
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Integrity("bayes accuracy needs at least one current item".into()));
    }
    Ok(correct as f64 / total as f64)
}
