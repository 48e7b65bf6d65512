//! SCKP layout (little-endian):
//!
//! ```text
//! magic "SCKP" | version u32 | config hash [32]
//! model config: input_dim hidden layers heads proj_dim K (u32 each) | mask_ratio f64 | temperature f64
//! train config: epochs u32 | batch u32 | lr_max lr_min beta1 beta2 eps weight_decay (f64 each)
//!               | seed u64 | mcm u8 | set u8 | reduction u8 | checkpoint_every u32
//! progress:     epoch u64 | step u64
//! rng:          seed [32] | stream u64 | word_pos u128
//! params:       count u32, then per block: name_len u32 | name | ndim u32 | dims u32.. | values f32.. | adam m f32.. | adam v f32..
//! log:          count u32, then per epoch: epoch u32 | mcm f64 | set f64 | total f64 | lr f64
//! checksum:     sha256 of every preceding byte [32]
//! ```
//!
//! The config hash is the sha256 of the model and train config fields
//! excluding `checkpoint_every`.

use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{AdamConfig, AdamState, EpochLog, TrainConfig};
use crate::losses::{LossConfig, Reduction};
use crate::model::{ModelConfig, ModelError, ModelParams};
use crate::numerics::{ParameterSet, Tensor};
use crate::wire::{Put, Reader, Short};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SCKP";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad magic {found:?}, expected \"SCKP\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported checkpoint version {found}, expected {CHECKPOINT_VERSION}")]
    BadVersion { found: u32 },
    #[error("truncated checkpoint: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("checksum mismatch: the checkpoint is corrupted")]
    Checksum,
    #[error("stored config hash does not match the stored configuration")]
    ConfigHash,
    #[error("malformed checkpoint: {0}")]
    Malformed(&'static str),
    #[error(transparent)]
    Layout(#[from] ModelError),
}

impl From<Short> for CheckpointError {
    fn from(s: Short) -> Self {
        CheckpointError::Truncated {
            expected: s.expected,
            actual: s.actual,
        }
    }
}

/// Serializable ChaCha8 position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Everything needed to continue training bit-exactly.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: ModelParams<f32>,
    pub train: TrainConfig,
    pub adam: AdamState<f32>,
    pub step: u64,
    /// Completed epochs.
    pub epoch: u64,
    pub rng: RngState,
    pub log: Vec<EpochLog>,
}

fn put_model_config(out: &mut Vec<u8>, c: &ModelConfig) {
    for v in [
        c.input_dim,
        c.hidden_dim,
        c.layers,
        c.heads,
        c.proj_dim,
        c.clips_per_view,
    ] {
        out.put_u32(v as u32);
    }
    out.put_f64(c.mask_ratio);
    out.put_f64(c.temperature);
}

fn put_train_config(out: &mut Vec<u8>, c: &TrainConfig) {
    out.put_u32(c.epochs as u32);
    out.put_u32(c.batch_size as u32);
    for v in [
        c.lr_max,
        c.lr_min,
        c.adam.beta1,
        c.adam.beta2,
        c.adam.eps,
        c.adam.weight_decay,
    ] {
        out.put_f64(v);
    }
    out.put_u64(c.seed);
    out.put_u8(c.losses.mcm as u8);
    out.put_u8(c.losses.set as u8);
    out.put_u8(match c.losses.mcm_reduction {
        Reduction::Mean => 0,
        Reduction::Sum => 1,
    });
}

/// sha256 over the training-relevant configuration fields.
pub fn config_hash(model: &ModelConfig, train: &TrainConfig) -> [u8; 32] {
    let mut bytes = Vec::new();
    put_model_config(&mut bytes, model);
    put_train_config(&mut bytes, train);
    Sha256::digest(&bytes).into()
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.put(&CHECKPOINT_MAGIC);
    out.put_u32(CHECKPOINT_VERSION);
    out.put(&config_hash(&ckpt.model.config, &ckpt.train));
    put_model_config(&mut out, &ckpt.model.config);
    put_train_config(&mut out, &ckpt.train);
    out.put_u32(ckpt.train.checkpoint_every as u32);
    out.put_u64(ckpt.epoch);
    out.put_u64(ckpt.step);
    out.put(&ckpt.rng.seed);
    out.put_u64(ckpt.rng.stream);
    out.put_u128(ckpt.rng.word_pos);
    let params = &ckpt.model.params;
    out.put_u32(params.len() as u32);
    for (i, p) in params.iter().enumerate() {
        out.put_u32(p.name.len() as u32);
        out.put(p.name.as_bytes());
        out.put_u32(p.value.shape().len() as u32);
        for &d in p.value.shape() {
            out.put_u32(d as u32);
        }
        for t in [&p.value, &ckpt.adam.first[i], &ckpt.adam.second[i]] {
            for &x in t.data() {
                out.put_f32(x);
            }
        }
    }
    out.put_u32(ckpt.log.len() as u32);
    for e in &ckpt.log {
        out.put_u32(e.epoch as u32);
        for v in [e.mcm, e.set, e.total, e.lr] {
            out.put_f64(v);
        }
    }
    let digest = Sha256::digest(&out);
    out.put(&digest);
    out
}

fn read_model_config(r: &mut Reader<'_>) -> Result<ModelConfig, Short> {
    Ok(ModelConfig {
        input_dim: r.u32()? as usize,
        hidden_dim: r.u32()? as usize,
        layers: r.u32()? as usize,
        heads: r.u32()? as usize,
        proj_dim: r.u32()? as usize,
        clips_per_view: r.u32()? as usize,
        mask_ratio: r.f64()?,
        temperature: r.f64()?,
    })
}

fn read_train_config(r: &mut Reader<'_>) -> Result<TrainConfig, CheckpointError> {
    let epochs = r.u32()? as usize;
    let batch_size = r.u32()? as usize;
    let lr_max = r.f64()?;
    let lr_min = r.f64()?;
    let adam = AdamConfig {
        beta1: r.f64()?,
        beta2: r.f64()?,
        eps: r.f64()?,
        weight_decay: r.f64()?,
    };
    let seed = r.u64()?;
    let flag = |b: u8| match b {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(CheckpointError::Malformed("loss toggle is not 0 or 1")),
    };
    let mcm = flag(r.u8()?)?;
    let set = flag(r.u8()?)?;
    let mcm_reduction = match r.u8()? {
        0 => Reduction::Mean,
        1 => Reduction::Sum,
        _ => return Err(CheckpointError::Malformed("unknown loss reduction")),
    };
    let checkpoint_every = r.u32()? as usize;
    Ok(TrainConfig {
        epochs,
        batch_size,
        lr_max,
        lr_min,
        adam,
        seed,
        losses: LossConfig {
            mcm,
            set,
            mcm_reduction,
        },
        checkpoint_every,
    })
}

fn read_tensor(r: &mut Reader<'_>, shape: &[usize], n: usize) -> Result<Tensor<f32>, CheckpointError> {
    r.require(n.saturating_mul(4))?;
    let data = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;
    Tensor::new(shape.to_vec(), data).map_err(|_| CheckpointError::Malformed("empty parameter shape"))
}

/// Parses and verifies SCKP bytes.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader::new(bytes);
    let magic: [u8; 4] = r.array()?;
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic { found: magic });
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::BadVersion { found: version });
    }
    r.require(2 * DIGEST_LEN)?;
    let body_len = bytes.len() - DIGEST_LEN;
    if Sha256::digest(&bytes[..body_len]).as_slice() != &bytes[body_len..] {
        return Err(CheckpointError::Checksum);
    }
    let mut r = Reader::new(&bytes[..body_len]);
    r.pos = 8;
    let stored_hash: [u8; 32] = r.array()?;
    let model_cfg = read_model_config(&mut r)?;
    let train = read_train_config(&mut r)?;
    if config_hash(&model_cfg, &train) != stored_hash {
        return Err(CheckpointError::ConfigHash);
    }
    let epoch = r.u64()?;
    let step = r.u64()?;
    let rng = RngState {
        seed: r.array()?,
        stream: r.u64()?,
        word_pos: r.u128()?,
    };
    let count = r.u32()? as usize;
    let mut params = ParameterSet::new();
    let mut first = Vec::new();
    let mut second = Vec::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| CheckpointError::Malformed("parameter name is not UTF-8"))?;
        let ndim = r.u32()? as usize;
        r.require(ndim.saturating_mul(4))?;
        let shape: Vec<usize> = (0..ndim)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<_, _>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or(CheckpointError::Malformed("parameter shape overflows"))?;
        let value = read_tensor(&mut r, &shape, n)?;
        first.push(read_tensor(&mut r, &shape, n)?);
        second.push(read_tensor(&mut r, &shape, n)?);
        params.push(name, value);
    }
    let log_count = r.u32()? as usize;
    r.require(log_count.saturating_mul(36))?;
    let mut log = Vec::with_capacity(log_count);
    for _ in 0..log_count {
        log.push(EpochLog {
            epoch: r.u32()? as usize,
            mcm: r.f64()?,
            set: r.f64()?,
            total: r.f64()?,
            lr: r.f64()?,
        });
    }
    if r.remaining() != 0 {
        return Err(CheckpointError::Malformed("bytes left before the checksum"));
    }
    let model = ModelParams::from_parameters(&model_cfg, params)?;
    Ok(Checkpoint {
        model,
        train,
        adam: AdamState { first, second },
        step,
        epoch,
        rng,
        log,
    })
}
