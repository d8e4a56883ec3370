//! `EPCK` model checkpoints.
//!
//! Magic `EPCK`, version `u32`, then six sections in this order, each a tag
//! byte, a `u64` payload length and the payload: encoder (1), projector (2),
//! codebook (3), reward head (4), train config (5), training metadata (6).
//! Floats are `f64`, everything little-endian.

use std::path::Path;

use crate::binio::{ByteReader, ByteWriter};
use crate::encoder::{EncoderKind, EncoderSpec};
use crate::error::{Error, Result};
use crate::numerics::Activation;
use crate::persona::{PersonaCodebook, Projector, WindowConfig};

use super::config::{LossMode, PersonaMode, TrainConfig};
use super::head::RewardHead;
use super::model::{EpochMetrics, Model, TrainingMetadata};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EPCK";
pub const CHECKPOINT_VERSION: u32 = 1;

const TAG_ENCODER: u8 = 1;
const TAG_PROJECTOR: u8 = 2;
const TAG_CODEBOOK: u8 = 3;
const TAG_HEAD: u8 = 4;
const TAG_CONFIG: u8 = 5;
const TAG_METADATA: u8 = 6;

fn loss_mode_code(m: LossMode) -> u8 {
    match m {
        LossMode::PairwiseBt => 0,
        LossMode::PointwiseSigmoid => 1,
    }
}

fn persona_mode_code(m: PersonaMode) -> u8 {
    match m {
        PersonaMode::Quantized => 0,
        PersonaMode::Continuous => 1,
        PersonaMode::Pinned => 2,
    }
}

fn encode_config(w: &mut ByteWriter, c: &TrainConfig) {
    w.f64(c.learning_rate);
    w.f64(c.commit_weight);
    w.u64(c.epochs as u64);
    w.u64(c.batch_size as u64);
    w.u64(c.seed);
    w.u64(c.window.window_len as u64);
    w.u64(c.window.stride.map_or(0, |s| s as u64));
    w.u64(c.codebook_size as u64);
    w.f64(c.decay);
    w.f64(c.epsilon);
    w.u8(loss_mode_code(c.loss_mode));
    w.u64(c.hidden_dim as u64);
    w.u64(c.persona_dim as u64);
    w.u8(c.activation.code());
    w.u8(c.encoder_kind.code());
    w.u64(c.encoder_dim as u64);
    w.u8(persona_mode_code(c.persona_mode));
    w.u64(c.kmeans_iters as u64);
    w.u32(c.dead_code_steps);
}

fn decode_config(r: &mut ByteReader<'_>) -> Result<TrainConfig> {
    let learning_rate = r.f64()?;
    let commit_weight = r.f64()?;
    let epochs = r.u64()? as usize;
    let batch_size = r.u64()? as usize;
    let seed = r.u64()?;
    let window_len = r.u64()? as usize;
    let stride = match r.u64()? {
        0 => None,
        s => Some(s as usize),
    };
    let codebook_size = r.u64()? as usize;
    let decay = r.f64()?;
    let epsilon = r.f64()?;
    let loss_mode = match r.u8()? {
        0 => LossMode::PairwiseBt,
        1 => LossMode::PointwiseSigmoid,
        x => return Err(Error::Format(format!("checkpoint: unknown loss mode {x}"))),
    };
    let hidden_dim = r.u64()? as usize;
    let persona_dim = r.u64()? as usize;
    let activation = Activation::from_code(r.u8()?)?;
    let encoder_kind = EncoderKind::from_code(r.u8()?)?;
    let encoder_dim = r.u64()? as usize;
    let persona_mode = match r.u8()? {
        0 => PersonaMode::Quantized,
        1 => PersonaMode::Continuous,
        2 => PersonaMode::Pinned,
        x => return Err(Error::Format(format!("checkpoint: unknown persona mode {x}"))),
    };
    let kmeans_iters = r.u64()? as usize;
    let dead_code_steps = r.u32()?;
    Ok(TrainConfig {
        learning_rate,
        commit_weight,
        epochs,
        batch_size,
        seed,
        window: WindowConfig { window_len, stride },
        codebook_size,
        decay,
        epsilon,
        loss_mode,
        hidden_dim,
        persona_dim,
        activation,
        encoder_kind,
        encoder_dim,
        persona_mode,
        kmeans_iters,
        dead_code_steps,
    })
}

fn opt_f64(w: &mut ByteWriter, v: Option<f64>) {
    match v {
        Some(x) => {
            w.u8(1);
            w.f64(x);
        }
        None => {
            w.u8(0);
            w.f64(0.0);
        }
    }
}

fn read_opt_f64(r: &mut ByteReader<'_>) -> Result<Option<f64>> {
    let flag = r.u8()?;
    let v = r.f64()?;
    match flag {
        0 => Ok(None),
        1 => Ok(Some(v)),
        x => Err(Error::Format(format!("checkpoint: bad option flag {x}"))),
    }
}

impl Model {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = ByteWriter::new();
        out.bytes(CHECKPOINT_MAGIC);
        out.u32(CHECKPOINT_VERSION);

        let mut w = ByteWriter::new();
        w.u8(self.encoder.kind().code());
        w.u64(self.encoder.output_dim() as u64);
        w.u64(self.encoder.input_dim() as u64);
        match self.encoder.weights() {
            Some(m) => {
                w.u8(1);
                w.matrix(m);
            }
            None => w.u8(0),
        }
        out.section(TAG_ENCODER, &w.into_bytes());

        let mut w = ByteWriter::new();
        w.matrix(&self.projector.weights);
        w.f64s(&self.projector.bias);
        out.section(TAG_PROJECTOR, &w.into_bytes());

        let cb = &self.codebook;
        let mut w = ByteWriter::new();
        w.u64(cb.size() as u64);
        w.u64(cb.dim() as u64);
        w.f64(cb.decay());
        w.f64(cb.epsilon());
        w.matrix(cb.codes());
        w.f64s(cb.counts());
        w.matrix(cb.sums());
        cb.idle_steps().iter().for_each(|&s| w.u32(s));
        out.section(TAG_CODEBOOK, &w.into_bytes());

        let h = &self.head;
        let mut w = ByteWriter::new();
        w.u8(h.activation.code());
        w.u64(h.persona_dim() as u64);
        w.u64(h.episode_dim() as u64);
        w.u64(h.response_dim() as u64);
        w.matrix(&h.weights);
        w.f64s(&h.bias);
        w.f64s(&h.out);
        out.section(TAG_HEAD, &w.into_bytes());

        let mut w = ByteWriter::new();
        encode_config(&mut w, &self.config);
        out.section(TAG_CONFIG, &w.into_bytes());

        let m = &self.metadata;
        let mut w = ByteWriter::new();
        w.u64(m.epochs_completed as u64);
        w.u64(m.seed);
        w.u64(m.history.len() as u64);
        for e in &m.history {
            w.u64(e.epoch as u64);
            w.f64(e.nll);
            w.f64(e.commit_loss);
            w.f64(e.train_acc);
            opt_f64(&mut w, e.val_acc);
        }
        out.section(TAG_METADATA, &w.into_bytes());
        out.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "checkpoint");
        r.expect_magic(CHECKPOINT_MAGIC)?;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("checkpoint: unsupported version {version}")));
        }
        let mut section = |expect: u8| -> Result<ByteReader<'_>> {
            let at = r.position();
            let (tag, body) = r.section()?;
            if tag != expect {
                return Err(Error::Format(format!(
                    "checkpoint: expected section {expect} at byte offset {at}, found {tag}"
                )));
            }
            Ok(body)
        };

        let mut s = section(TAG_ENCODER)?;
        let kind = EncoderKind::from_code(s.u8()?)?;
        let output_dim = s.u64()? as usize;
        let input_dim = s.u64()? as usize;
        let weights = match s.u8()? {
            0 => None,
            1 => Some(s.matrix()?),
            x => return Err(Error::Format(format!("checkpoint: bad weights flag {x}"))),
        };
        s.expect_end()?;
        let encoder = EncoderSpec::for_kind(kind, input_dim, weights)?;
        if encoder.output_dim() != output_dim || encoder.input_dim() != input_dim {
            return Err(Error::Format("checkpoint: encoder dimensions inconsistent".into()));
        }

        let mut s = section(TAG_PROJECTOR)?;
        let projector = Projector::new(s.matrix()?, s.f64s()?)?;
        s.expect_end()?;

        let mut s = section(TAG_CODEBOOK)?;
        let size = s.u64()? as usize;
        let dim = s.u64()? as usize;
        let decay = s.f64()?;
        let epsilon = s.f64()?;
        let codes = s.matrix()?;
        let counts = s.f64s()?;
        let sums = s.matrix()?;
        if codes.rows() != size || codes.cols() != dim {
            return Err(Error::Format("checkpoint: codebook header disagrees with codes".into()));
        }
        let idle = (0..size).map(|_| s.u32()).collect::<Result<Vec<_>>>()?;
        s.expect_end()?;
        let mut codebook = PersonaCodebook::from_parts(codes, counts, sums, decay, epsilon)?;
        codebook.restore_idle(idle);

        let mut s = section(TAG_HEAD)?;
        let activation = Activation::from_code(s.u8()?)?;
        let pd = s.u64()? as usize;
        let ed = s.u64()? as usize;
        let rd = s.u64()? as usize;
        let head = RewardHead::new(s.matrix()?, s.f64s()?, activation, s.f64s()?, pd, ed, rd)?;
        s.expect_end()?;

        let mut s = section(TAG_CONFIG)?;
        let config = decode_config(&mut s)?;
        s.expect_end()?;

        let mut s = section(TAG_METADATA)?;
        let epochs_completed = s.u64()? as usize;
        let seed = s.u64()?;
        let n = s.len_prefix(8 + 8 * 3 + 9)?;
        let mut history = Vec::with_capacity(n);
        for _ in 0..n {
            history.push(EpochMetrics {
                epoch: s.u64()? as usize,
                nll: s.f64()?,
                commit_loss: s.f64()?,
                train_acc: s.f64()?,
                val_acc: read_opt_f64(&mut s)?,
            });
        }
        s.expect_end()?;
        r.expect_end()?;

        if projector.out_dim() != head.persona_dim()
            || projector.out_dim() != codebook.dim()
            || projector.in_dim() != encoder.output_dim()
        {
            return Err(Error::Format("checkpoint: component dimensions disagree".into()));
        }
        Ok(Model {
            encoder,
            projector,
            codebook,
            head,
            config,
            metadata: TrainingMetadata {
                epochs_completed,
                seed,
                history,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::train;
    use crate::simulator::{generate, WorldSpec};

    fn model(kind: EncoderKind) -> Model {
        let w = generate(&WorldSpec {
            train_users: 6,
            validation_users: 2,
            test_users: 2,
            history_min: 2,
            history_max: 8,
            current_per_user: 3,
            ..WorldSpec::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            codebook_size: 4,
            hidden_dim: 5,
            epochs: 2,
            encoder_kind: kind,
            ..TrainConfig::default()
        };
        train(&w.train, Some(&w.validation), &cfg).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        for kind in [EncoderKind::Contrastive, EncoderKind::ConcatLinear, EncoderKind::IdentityChosen] {
            let m = model(kind);
            let bytes = m.to_bytes();
            let back = Model::from_bytes(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn corruption_is_rejected() {
        let bytes = model(EncoderKind::Contrastive).to_bytes();
        let mut bad = bytes.clone();
        bad[1] = b'Q';
        assert!(Model::from_bytes(&bad).is_err());

        let mut bad = bytes.clone();
        bad[4] = 9;
        let msg = Model::from_bytes(&bad).unwrap_err().to_string();
        assert!(msg.contains("version"), "{msg}");

        // First section length field (after magic, version and tag).
        let mut bad = bytes.clone();
        bad[9..17].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(Model::from_bytes(&bad).is_err());

        let mut bad = bytes.clone();
        bad[8] = 7;
        assert!(Model::from_bytes(&bad).is_err());

        assert!(Model::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(Model::from_bytes(&long).is_err());
    }
}
