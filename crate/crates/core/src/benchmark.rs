//! Seeded synthetic benchmark: training worlds and held-out worlds with
//! their episodes.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::env::{generate_env, generate_episodes, EnvGenParams, Vocabulary};
use crate::error::Result;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkSpec {
    pub seed: u64,
    pub train_worlds: usize,
    pub train_episodes: usize,
    pub heldout_worlds: usize,
    pub heldout_episodes: usize,
    pub world: EnvGenParams,
    pub min_hops: usize,
    pub max_hops: usize,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            seed: 2024,
            train_worlds: 20,
            train_episodes: 400,
            heldout_worlds: 5,
            heldout_episodes: 100,
            world: EnvGenParams {
                node_count: 16,
                radius: 2.6,
                landmark_vocab: 32,
                side: None,
            },
            min_hops: 2,
            max_hops: 4,
        }
    }
}

/// Held-out worlds draw from a separate index range of the same streams.
const HELDOUT_OFFSET: u64 = 1 << 32;

pub struct Benchmark {
    pub train: Dataset,
    pub heldout: Dataset,
}

fn split(spec: &BenchmarkSpec, prefix: &str, worlds: usize, episodes: usize, offset: u64) -> Result<Dataset> {
    let vocab = Vocabulary::new(spec.world.landmark_vocab);
    let mut envs = Vec::with_capacity(worlds);
    let mut eps = Vec::with_capacity(episodes);
    for w in 0..worlds {
        let id = format!("{prefix}-{w:02}");
        let k = offset + w as u64;
        let env = generate_env(id.clone(), &mut rng::substream(spec.seed, rng::ENV_GEN, k), &spec.world)?;
        // Spread the episode count as evenly as possible over worlds.
        let count = episodes / worlds + usize::from(w < episodes % worlds);
        let mut r = rng::substream(spec.seed, rng::EPISODE_GEN, k);
        let mut batch = generate_episodes(&env, &mut r, count, spec.min_hops, spec.max_hops, &vocab)?;
        for (i, ep) in batch.iter_mut().enumerate() {
            ep.id = format!("{id}-{i:03}");
        }
        eps.extend(batch);
        envs.push(env);
    }
    Ok(Dataset::new(envs, eps))
}

pub fn generate(spec: &BenchmarkSpec) -> Result<Benchmark> {
    Ok(Benchmark {
        train: split(spec, "train", spec.train_worlds, spec.train_episodes, 0)?,
        heldout: split(spec, "heldout", spec.heldout_worlds, spec.heldout_episodes, HELDOUT_OFFSET)?,
    })
}
