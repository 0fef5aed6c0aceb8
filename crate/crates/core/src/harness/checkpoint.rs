use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::CategoryState;
use crate::curriculum::ProbabilityList;
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::sim::SimLearner;

pub const CHECKPOINT_FORMAT: &str = "cgpo-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to continue a run bit-exactly. The prompt set itself is
/// rebuilt from the config, which the hash pins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub iter: u64,
    /// The probability list in its own line-oriented format.
    pub probability_list: String,
    pub categories: CategoryState,
    pub learner: SimLearner,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn new(
        config_hash: String,
        list: &ProbabilityList,
        categories: CategoryState,
        learner: SimLearner,
        rng: RngState,
    ) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config_hash,
            iter: list.iter(),
            probability_list: list.to_checkpoint_string(),
            categories,
            learner,
            rng,
        }
    }

    pub fn probability_list(&self) -> Result<ProbabilityList> {
        let list = ProbabilityList::read_checkpoint(self.probability_list.as_bytes())?;
        if list.iter() != self.iter {
            return Err(Error::Checkpoint(format!(
                "probability list is at iteration {}, checkpoint says {}",
                list.iter(),
                self.iter
            )));
        }
        Ok(list)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(self)?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Format {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        let ckpt: Checkpoint = serde_json::from_slice(&bytes).map_err(|e| Error::Format {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        Ok(ckpt)
    }
}
