//! Checkpoint files: JSON with weight arrays as IEEE-754 hex strings so a
//! save/load cycle is bit-exact, plus the architecture, optimizer and RNG
//! state needed to resume or serve a run.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fairness::CalibrationWeights;
use crate::nnet::{AdamState, ModelParams};
use crate::question_bank::QuestionBank;
use crate::trainer::{TrainConfig, TrainRunState};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed checkpoint rng state: {0}")]
    BadRng(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub epoch: u64,
    pub config: TrainConfig,
    pub bank: QuestionBank,
    pub phi: ModelParams,
    pub psi: ModelParams,
    pub adam_phi: AdamState,
    pub adam_psi: AdamState,
    pub calibration: CalibrationWeights,
    /// 32-byte ChaCha seed, hex encoded.
    pub rng_seed: String,
    /// Stream position, decimal u128.
    pub rng_word_pos: String,
}

impl Checkpoint {
    pub fn from_state(state: &TrainRunState, cfg: &TrainConfig, bank: &QuestionBank) -> Checkpoint {
        let seed = state.rng.get_seed();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            epoch: state.epoch,
            config: cfg.clone(),
            bank: bank.clone(),
            phi: state.phi.clone(),
            psi: state.psi.clone(),
            adam_phi: state.adam_phi.clone(),
            adam_psi: state.adam_psi.clone(),
            calibration: state.calib.clone(),
            rng_seed: seed.iter().map(|b| format!("{b:02x}")).collect(),
            rng_word_pos: state.rng.get_word_pos().to_string(),
        }
    }

    /// Reconstructs the RNG stream exactly where the checkpoint left it.
    pub fn rng(&self) -> Result<ChaCha8Rng, CheckpointError> {
        if self.rng_seed.len() != 64 {
            return Err(CheckpointError::BadRng(format!(
                "seed hex must be 64 chars, got {}",
                self.rng_seed.len()
            )));
        }
        let mut seed = [0u8; 32];
        for (i, chunk) in seed.iter_mut().enumerate() {
            let byte = &self.rng_seed[2 * i..2 * i + 2];
            *chunk = u8::from_str_radix(byte, 16)
                .map_err(|e| CheckpointError::BadRng(format!("bad seed hex: {e}")))?;
        }
        let word_pos: u128 = self
            .rng_word_pos
            .parse()
            .map_err(|e| CheckpointError::BadRng(format!("bad word position: {e}")))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_word_pos(word_pos);
        Ok(rng)
    }
}

pub fn save_checkpoint(
    path: &Path,
    state: &TrainRunState,
    cfg: &TrainConfig,
    bank: &QuestionBank,
) -> Result<(), std::io::Error> {
    let ckpt = Checkpoint::from_state(state, cfg, bank);
    let json = serde_json::to_string_pretty(&ckpt).expect("checkpoint serialization cannot fail");
    std::fs::write(path, json)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let raw = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&raw)?)
}
