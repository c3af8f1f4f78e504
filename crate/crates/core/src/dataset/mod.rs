//! Episode datasets of (state, goal, force label) transitions produced by the
//! forward solver, their Table-style summary, and training windows.

mod generate;
mod io;
mod sequences;
mod summary;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use generate::{
    episode_seed, generate_dataset, generate_dataset_with_stats, generate_episode, ForceProcess,
    GenerationStats, GeneratorConfig,
};
pub use io::{file_sha256, read_dataset, write_dataset, DatasetHeader, DATASET_FORMAT};
pub use sequences::{split, to_sequences, Normalizer, Sequence, SequenceSet};
pub use summary::{summarize, uniform_ks_statistic, ColumnStats, DatasetSummary};

pub const STATE_DIM: usize = 7;
pub const GOAL_DIM: usize = 3;
pub const FORCE_DIM: usize = 4;

/// One transition. `r` is the tip reached under `t`; `r_d` is the tip the
/// solver reaches under the label forces `t_a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub r: [f64; 3],
    #[serde(rename = "T")]
    pub t: [f64; 4],
    pub r_d: [f64; 3],
    #[serde(rename = "T_a")]
    pub t_a: [f64; 4],
}

impl Step {
    pub fn state(&self) -> [f64; STATE_DIM] {
        [
            self.r[0], self.r[1], self.r[2], self.t[0], self.t[1], self.t[2], self.t[3],
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub seed: u64,
    pub steps: Vec<Step>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Checks force bounds, the zero-force start and chain consistency.
    pub fn validate(&self, max_force_n: f64) -> Result<()> {
        let first = self
            .steps
            .first()
            .ok_or_else(|| Error::contract(format!("episode {} has no steps", self.seed)))?;
        if first.t != [0.0; 4] {
            return Err(Error::contract(format!(
                "episode {} does not start from zero tension",
                self.seed
            )));
        }
        for (n, step) in self.steps.iter().enumerate() {
            let all = step.t.iter().chain(&step.t_a);
            if all.clone().any(|f| !(0.0..=max_force_n).contains(f)) {
                return Err(Error::contract(format!(
                    "episode {} step {n}: force outside [0, {max_force_n}] N",
                    self.seed
                )));
            }
            if let Some(next) = self.steps.get(n + 1) {
                if next.t != step.t_a || next.r != step.r_d {
                    return Err(Error::contract(format!(
                        "episode {} breaks the state chain at step {n}",
                        self.seed
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
