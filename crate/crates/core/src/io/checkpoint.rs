//! Binary checkpoint container.
//!
//! Layout: an 8-byte magic, a u32 format version and a 32-byte SHA-256
//! checksum of the payload, followed by the payload itself — the
//! configuration snapshot, counters, RNG states, curriculum entries and
//! named tensor records (name, dtype, shape, little-endian payload).
//! Serialization is fully deterministic: save -> load -> save produces
//! byte-identical files.

use crate::env::SimEnv;
use crate::error::{Error, Result};
use crate::heads::ActorCriticWeights;
use crate::ppo::{Adam, RngState, Trainer};
use crate::tensor::{Dtype, Scalar, Tensor};
use crate::terrain::{CurriculumState, TerrainFamily};
use sha2::{Digest, Sha256};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ATNLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// One named tensor payload.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub payload: Vec<u8>,
}

impl TensorRecord {
    pub fn from_tensor<T: Scalar>(name: &str, t: &Tensor<T>) -> Self {
        let mut payload = Vec::with_capacity(t.numel() * T::DTYPE.byte_width());
        match T::DTYPE {
            Dtype::F32 => {
                for v in t.data() {
                    payload.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
                }
            }
            Dtype::F64 => {
                for v in t.data() {
                    payload.extend_from_slice(&v.as_f64().to_le_bytes());
                }
            }
        }
        TensorRecord {
            name: name.to_string(),
            dtype: T::DTYPE,
            shape: t.shape().to_vec(),
            payload,
        }
    }

    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        if self.dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` stored as {:?}, requested {:?}",
                self.name,
                self.dtype,
                T::DTYPE
            )));
        }
        let width = self.dtype.byte_width();
        if self.payload.len() % width != 0 {
            return Err(Error::Checkpoint(format!("tensor `{}` payload misaligned", self.name)));
        }
        let mut data = Vec::with_capacity(self.payload.len() / width);
        match self.dtype {
            Dtype::F32 => {
                for c in self.payload.chunks_exact(4) {
                    data.push(T::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64));
                }
            }
            Dtype::F64 => {
                for c in self.payload.chunks_exact(8) {
                    data.push(T::from_f64(f64::from_le_bytes(c.try_into().unwrap())));
                }
            }
        }
        Tensor::new(&self.shape, data)
    }
}

/// Snapshot of one agent's curriculum assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct CurriculumSnapshot {
    pub family: TerrainFamily,
    pub level: u8,
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
}

impl CurriculumSnapshot {
    pub fn from_state(s: &CurriculumState) -> Self {
        CurriculumSnapshot {
            family: s.family,
            level: s.level,
            rng_seed: s.rng_seed(),
            rng_word_pos: s.rng_word_pos(),
        }
    }

    pub fn to_state(&self) -> CurriculumState {
        CurriculumState::with_rng_state(self.family, self.level, self.rng_seed, self.rng_word_pos)
    }
}

/// Everything a run needs to resume.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config_text: String,
    pub stage: u8,
    pub epoch: u64,
    pub lr: f64,
    pub adam_step: u64,
    pub action_rng: RngState,
    pub shuffle_rng: RngState,
    pub env_rngs: Vec<RngState>,
    pub curricula: Vec<CurriculumSnapshot>,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    /// Capture a trainer's full state.
    pub fn from_trainer<T: Scalar>(trainer: &Trainer<T>, config_text: &str) -> Self {
        let (action_rng, shuffle_rng, env_rngs) = trainer.rng_snapshot();
        let names: Vec<String> = trainer
            .weights
            .named_tensors()
            .iter()
            .map(|(n, _)| n.clone())
            .collect();
        let mut tensors: Vec<TensorRecord> = trainer
            .weights
            .named_tensors()
            .iter()
            .map(|(n, t)| TensorRecord::from_tensor(n, t))
            .collect();
        for (i, name) in names.iter().enumerate() {
            tensors.push(TensorRecord::from_tensor(&format!("adam.m.{name}"), &trainer.adam.m[i]));
            tensors.push(TensorRecord::from_tensor(&format!("adam.v.{name}"), &trainer.adam.v[i]));
        }
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_text: config_text.to_string(),
            stage: trainer.plan.stage,
            epoch: trainer.epoch as u64,
            lr: trainer.lr,
            adam_step: trainer.adam.step,
            action_rng,
            shuffle_rng,
            env_rngs,
            curricula: trainer.curricula().iter().map(CurriculumSnapshot::from_state).collect(),
            tensors,
        }
    }

    /// Weights-only capture (evaluation tools).
    pub fn from_weights<T: Scalar>(weights: &ActorCriticWeights<T>, config_text: &str, stage: u8) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_text: config_text.to_string(),
            stage,
            epoch: 0,
            lr: 0.0,
            adam_step: 0,
            action_rng: RngState { seed: [0; 32], word_pos: 0 },
            shuffle_rng: RngState { seed: [0; 32], word_pos: 0 },
            env_rngs: Vec::new(),
            curricula: Vec::new(),
            tensors: weights
                .named_tensors()
                .iter()
                .map(|(n, t)| TensorRecord::from_tensor(n, t))
                .collect(),
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorRecord> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Copy stored weight tensors into an existing weights struct; every
    /// weight must be present with matching shape and dtype.
    pub fn load_weights_into<T: Scalar>(&self, weights: &mut ActorCriticWeights<T>) -> Result<()> {
        for (name, tensor) in weights.named_tensors_mut() {
            let rec = self
                .tensor(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            let loaded: Tensor<T> = rec.to_tensor()?;
            if loaded.shape() != tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, run expects {:?}",
                    loaded.shape(),
                    tensor.shape()
                )));
            }
            *tensor = loaded;
        }
        Ok(())
    }

    /// Restore optimizer slots aligned with the weight tensor names.
    pub fn load_adam_into<T: Scalar>(&self, adam: &mut Adam<T>, names: &[String]) -> Result<()> {
        for (i, name) in names.iter().enumerate() {
            for (prefix, slot) in [("adam.m.", &mut adam.m[i]), ("adam.v.", &mut adam.v[i])] {
                let full = format!("{prefix}{name}");
                let rec = self
                    .tensor(&full)
                    .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{full}`")))?;
                *slot = rec.to_tensor()?;
            }
        }
        adam.step = self.adam_step;
        Ok(())
    }

    /// Full trainer restoration: weights, optimizer, RNG streams, curricula
    /// and counters.
    pub fn restore_trainer<T: Scalar>(&self, trainer: &mut Trainer<T>) -> Result<()> {
        self.load_weights_into(&mut trainer.weights)?;
        let names: Vec<String> = trainer
            .weights
            .named_tensors()
            .iter()
            .map(|(n, _)| n.clone())
            .collect();
        self.load_adam_into(&mut trainer.adam, &names)?;
        trainer.lr = self.lr;
        trainer.epoch = self.epoch as usize;
        if self.env_rngs.len() != trainer.envs().len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} environment streams, run uses {}",
                self.env_rngs.len(),
                trainer.envs().len()
            )));
        }
        trainer.restore_curricula(self.curricula.iter().map(CurriculumSnapshot::to_state).collect())?;
        trainer.restore_rngs(self.action_rng, self.shuffle_rng, self.env_rngs.clone());
        Ok(())
    }

    /// Restore one standalone environment RNG (evaluation tools).
    pub fn restore_env_rng(&self, idx: usize, env: &mut SimEnv) -> Result<()> {
        let st = self
            .env_rngs
            .get(idx)
            .ok_or_else(|| Error::Checkpoint(format!("no env rng stream {idx}")))?;
        env.restore_rng(st.seed, st.word_pos);
        Ok(())
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u128(&mut self, v: u128) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }

    fn rng(&mut self, s: &RngState) {
        self.bytes(&s.seed);
        self.u128(s.word_pos);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated checkpoint payload".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn rng(&mut self) -> Result<RngState> {
        let seed: [u8; 32] = self.take(32)?.try_into().unwrap();
        let word_pos = self.u128()?;
        Ok(RngState { seed, word_pos })
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn encode_payload(c: &Checkpoint) -> Vec<u8> {
    let mut w = Writer::new();
    let cfg = c.config_text.as_bytes();
    w.u64(cfg.len() as u64);
    w.bytes(cfg);
    w.u8(c.stage);
    w.u64(c.epoch);
    w.f64(c.lr);
    w.u64(c.adam_step);
    w.rng(&c.action_rng);
    w.rng(&c.shuffle_rng);
    w.u32(c.env_rngs.len() as u32);
    for s in &c.env_rngs {
        w.rng(s);
    }
    w.u32(c.curricula.len() as u32);
    for cur in &c.curricula {
        w.u8(cur.family.index() as u8);
        w.u8(cur.level);
        w.bytes(&cur.rng_seed);
        w.u128(cur.rng_word_pos);
    }
    w.u32(c.tensors.len() as u32);
    for t in &c.tensors {
        let name = t.name.as_bytes();
        w.u16(name.len() as u16);
        w.bytes(name);
        w.u8(t.dtype.code());
        w.u8(t.shape.len() as u8);
        for &d in &t.shape {
            w.u64(d as u64);
        }
        w.u64(t.payload.len() as u64);
        w.bytes(&t.payload);
    }
    w.buf
}

fn decode_payload(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0 };
    let cfg_len = r.u64()? as usize;
    let config_text = String::from_utf8(r.take(cfg_len)?.to_vec())
        .map_err(|_| Error::Checkpoint("config snapshot is not UTF-8".into()))?;
    let stage = r.u8()?;
    let epoch = r.u64()?;
    let lr = r.f64()?;
    let adam_step = r.u64()?;
    let action_rng = r.rng()?;
    let shuffle_rng = r.rng()?;
    let n_env = r.u32()? as usize;
    let mut env_rngs = Vec::with_capacity(n_env);
    for _ in 0..n_env {
        env_rngs.push(r.rng()?);
    }
    let n_cur = r.u32()? as usize;
    let mut curricula = Vec::with_capacity(n_cur);
    for _ in 0..n_cur {
        let family_idx = r.u8()? as usize;
        let family = *TerrainFamily::ALL
            .get(family_idx)
            .ok_or_else(|| Error::Checkpoint(format!("bad terrain family index {family_idx}")))?;
        let level = r.u8()?;
        let rng_seed: [u8; 32] = r.take(32)?.try_into().unwrap();
        let rng_word_pos = r.u128()?;
        curricula.push(CurriculumSnapshot {
            family,
            level,
            rng_seed,
            rng_word_pos,
        });
    }
    let n_tensors = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let dtype = Dtype::from_code(r.u8()?)
            .ok_or_else(|| Error::Checkpoint(format!("unknown dtype for `{name}`")))?;
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let payload_len = r.u64()? as usize;
        let payload = r.take(payload_len)?.to_vec();
        let expect = shape.iter().product::<usize>() * dtype.byte_width();
        if payload.len() != expect {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` payload has {} bytes, shape {:?} needs {expect}",
                payload.len(),
                shape
            )));
        }
        tensors.push(TensorRecord {
            name,
            dtype,
            shape,
            payload,
        });
    }
    if !r.done() {
        return Err(Error::Checkpoint("trailing bytes after checkpoint payload".into()));
    }
    Ok(Checkpoint {
        version: CHECKPOINT_VERSION,
        config_text,
        stage,
        epoch,
        lr,
        adam_step,
        action_rng,
        shuffle_rng,
        env_rngs,
        curricula,
        tensors,
    })
}

pub fn write_checkpoint(path: &Path, c: &Checkpoint) -> Result<()> {
    let payload = encode_payload(c);
    let digest = Sha256::digest(&payload);
    let mut out = Vec::with_capacity(44 + payload.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&digest);
    out.extend_from_slice(&payload);
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 44 {
        return Err(Error::Checkpoint(format!("{}: file too short", path.display())));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("{}: bad magic", path.display())));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: format version {version}, this build reads {CHECKPOINT_VERSION}",
            path.display()
        )));
    }
    let stored: [u8; 32] = bytes[12..44].try_into().unwrap();
    let payload = &bytes[44..];
    let digest = Sha256::digest(payload);
    if digest[..] != stored {
        return Err(Error::Checkpoint(format!("{}: checksum mismatch", path.display())));
    }
    decode_payload(payload)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_checkpoint() -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_text: "[run]\nmaster_seed = 3\n".to_string(),
            stage: 1,
            epoch: 42,
            lr: 9.5e-4,
            adam_step: 630,
            action_rng: RngState { seed: [7; 32], word_pos: 123456 },
            shuffle_rng: RngState { seed: [9; 32], word_pos: 77 },
            env_rngs: vec![RngState { seed: [1; 32], word_pos: 5 }],
            curricula: vec![CurriculumSnapshot {
                family: TerrainFamily::GridStones,
                level: 4,
                rng_seed: [2; 32],
                rng_word_pos: 99,
            }],
            tensors: vec![TensorRecord::from_tensor(
                "w",
                &Tensor::<f32>::from_f64_slice(&[2, 2], &[1.0, -0.5, 0.25, 2.0]).unwrap(),
            )],
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let c = sample_checkpoint();
        write_checkpoint(&p1, &c).unwrap();
        let back = read_checkpoint(&p1).unwrap();
        assert_eq!(c, back);
        write_checkpoint(&p2, &back).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn corruption_fails_the_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        write_checkpoint(&p, &sample_checkpoint()).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xFF;
        std::fs::write(&p, &bytes).unwrap();
        let err = read_checkpoint(&p).unwrap_err().to_string();
        assert!(err.contains("checksum"), "{err}");
    }

    #[test]
    fn truncation_is_an_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ckpt");
        write_checkpoint(&p, &sample_checkpoint()).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 10]).unwrap();
        assert!(read_checkpoint(&p).is_err());
        // even a header-only file errors
        std::fs::write(&p, &bytes[..20]).unwrap();
        assert!(read_checkpoint(&p).is_err());
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.ckpt");
        write_checkpoint(&p, &sample_checkpoint()).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[8] = 99;
        std::fs::write(&p, &bytes).unwrap();
        let err = read_checkpoint(&p).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }

    #[test]
    fn dtype_mismatch_is_rejected_on_load() {
        let rec = TensorRecord::from_tensor(
            "w",
            &Tensor::<f32>::from_f64_slice(&[2], &[1.0, 2.0]).unwrap(),
        );
        assert!(rec.to_tensor::<f64>().is_err());
        assert!(rec.to_tensor::<f32>().is_ok());
    }
}
