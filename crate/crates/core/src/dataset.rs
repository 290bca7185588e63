//! A set of worlds plus the episodes that run in them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::env::{load_episodes, EnvGraph, Episode, Vocabulary};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub envs: BTreeMap<String, EnvGraph>,
    pub episodes: Vec<Episode>,
}

fn expand(paths: &[PathBuf], ext: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == ext))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

impl Dataset {
    pub fn new(envs: impl IntoIterator<Item = EnvGraph>, episodes: Vec<Episode>) -> Self {
        Self {
            envs: envs.into_iter().map(|e| (e.id().to_string(), e)).collect(),
            episodes,
        }
    }

    /// Environment files (or directories of `*.json`) and episode files (or
    /// directories of `*.jsonl`).
    pub fn load(env_paths: &[PathBuf], episode_paths: &[PathBuf]) -> Result<Self> {
        let mut envs = BTreeMap::new();
        for f in expand(env_paths, "json")? {
            let e = EnvGraph::load(&f)?;
            envs.insert(e.id().to_string(), e);
        }
        let mut episodes = Vec::new();
        for f in expand(episode_paths, "jsonl")? {
            episodes.extend(load_episodes(&f)?);
        }
        Ok(Self { envs, episodes })
    }

    pub fn env(&self, id: &str) -> Result<&EnvGraph> {
        self.envs.get(id).ok_or_else(|| Error::UnknownEnv(id.to_string()))
    }

    /// Every episode must reference a known world and be valid in it.
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        for ep in &self.episodes {
            ep.validate(self.env(&ep.env_id)?, vocab)?;
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("envs"))?;
        for (id, e) in &self.envs {
            e.save(&dir.join("envs").join(format!("{id}.json")))?;
        }
        crate::env::save_episodes(&dir.join("episodes.jsonl"), &self.episodes)
    }

    /// Loads a directory written by [`Dataset::save`].
    pub fn load_dir(dir: &Path) -> Result<Self> {
        Self::load(&[dir.join("envs")], &[dir.join("episodes.jsonl")])
    }

    pub fn truncated(&self, n: usize) -> Self {
        let mut d = self.clone();
        if n > 0 {
            d.episodes.truncate(n);
        }
        d
    }
}
