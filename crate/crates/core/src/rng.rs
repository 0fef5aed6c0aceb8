//! Counter-based random streams.
//!
//! Everything random in a run descends from one 64-bit seed. The control
//! stream drives batch sampling and is checkpointed as `(key, stream,
//! word_pos)`; reward draws use a fresh stream addressed by iteration and
//! prompt index so they can be generated in any order, or in parallel,
//! without changing the result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type StreamRng = ChaCha8Rng;

const CONTROL_STREAM: u64 = 0;
const DATASET_STREAM: u64 = 1;
/// Reward streams start here; stream `REWARD_STREAM_BASE + iter`.
const REWARD_STREAM_BASE: u64 = 1 << 32;
/// Words reserved per prompt inside one reward stream.
const WORDS_PER_PROMPT: u128 = 1 << 24;

fn keyed(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn control_rng(seed: u64) -> ChaCha8Rng {
    keyed(seed, CONTROL_STREAM)
}

pub fn dataset_rng(seed: u64) -> ChaCha8Rng {
    keyed(seed, DATASET_STREAM)
}

pub fn reward_rng(seed: u64, iter: u64, prompt_index: usize) -> ChaCha8Rng {
    let mut rng = keyed(seed, REWARD_STREAM_BASE + iter);
    rng.set_word_pos(prompt_index as u128 * WORDS_PER_PROMPT);
    rng
}

/// Portable snapshot of a [`ChaCha8Rng`] position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub key: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            key: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = |m: &str| Error::Checkpoint(format!("rng state: {m}"));
        let key: [u8; 32] = hex::decode(&self.key)
            .map_err(|_| bad("key is not hex"))?
            .try_into()
            .map_err(|_| bad("key must be 32 bytes"))?;
        let word_pos: u128 = self.word_pos.parse().map_err(|_| bad("bad word position"))?;
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.stream);
        rng.set_word_pos(word_pos);
        Ok(rng)
    }
}
