//! Checkpoint files: model weights plus enough run state to resume or replay.
//!
//! Layout is an eight-byte magic, a length-prefixed JSON header with the
//! training position and generator state, then the binary weight sections.

use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nets::{read_model, write_model, ModelParams};
use crate::pipeline::config::TrainConfig;

const MAGIC: &[u8; 8] = b"AVIEWCK1";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub params: ModelParams,
    /// Training stage this snapshot was taken after (1, 2, or 3).
    pub stage: u8,
    /// Epochs completed within that stage.
    pub epoch: usize,
    /// Hash of the config that produced the run; guards against evaluating
    /// a checkpoint under a different configuration by accident.
    pub config_hash: String,
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
    pub rng_stream: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    stage: u8,
    epoch: usize,
    config_hash: String,
    rng_seed: String,
    rng_word_pos_hi: u64,
    rng_word_pos_lo: u64,
    rng_stream: u64,
}

/// Content hash of a config, stable across field order and whitespace.
pub fn config_hash(cfg: &TrainConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    to_hex(&digest)
}

fn to_hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn from_hex(text: &str) -> Result<Vec<u8>> {
    if text.len() % 2 != 0 {
        return Err(Error::Schema("odd-length hex string".into()));
    }
    (0..text.len() / 2)
        .map(|i| {
            u8::from_str_radix(&text[2 * i..2 * i + 2], 16)
                .map_err(|_| Error::Schema(format!("invalid hex string {text:?}")))
        })
        .collect()
}

/// Captures the full state of a generator: seed, stream, and position.
pub fn rng_snapshot(rng: &ChaCha8Rng) -> ([u8; 32], u128, u64) {
    (rng.get_seed(), rng.get_word_pos(), rng.get_stream())
}

/// Rebuilds a generator at exactly the captured position.
pub fn restore_rng(seed: [u8; 32], word_pos: u128, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    rng
}

impl Checkpoint {
    pub fn new(
        params: ModelParams,
        stage: u8,
        epoch: usize,
        config_hash: String,
        rng: &ChaCha8Rng,
    ) -> Self {
        let (rng_seed, rng_word_pos, rng_stream) = rng_snapshot(rng);
        Checkpoint { params, stage, epoch, config_hash, rng_seed, rng_word_pos, rng_stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        restore_rng(self.rng_seed, self.rng_word_pos, self.rng_stream)
    }
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let header = Header {
        stage: ck.stage,
        epoch: ck.epoch,
        config_hash: ck.config_hash.clone(),
        rng_seed: to_hex(&ck.rng_seed),
        rng_word_pos_hi: (ck.rng_word_pos >> 64) as u64,
        rng_word_pos_lo: ck.rng_word_pos as u64,
        rng_stream: ck.rng_stream,
    };
    let header_bytes = serde_json::to_vec(&header).expect("header serializes");
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(MAGIC)?;
    file.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    file.write_all(&header_bytes)?;
    write_model(&mut file, &ck.params)?;
    file.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Schema(format!(
            "{} is not a checkpoint file",
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Schema(format!("checkpoint header: {e}")))?;
    let seed_bytes = from_hex(&header.rng_seed)?;
    let rng_seed: [u8; 32] = seed_bytes
        .try_into()
        .map_err(|_| Error::Schema("generator seed must be 32 bytes".into()))?;
    let params = read_model(&mut file)?;
    Ok(Checkpoint {
        params,
        stage: header.stage,
        epoch: header.epoch,
        config_hash: header.config_hash,
        rng_seed,
        rng_word_pos: ((header.rng_word_pos_hi as u128) << 64) | header.rng_word_pos_lo as u128,
        rng_stream: header.rng_stream,
    })
}
