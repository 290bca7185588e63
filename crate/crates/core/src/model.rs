//! The full agent: latent provider and policy sharing one parameter store.

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::config::{LatentConfig, PolicyConfig, RunConfig};
use crate::env::{Observation, Vocabulary};
use crate::error::{Error, Result};
use crate::latent::{LatentCache, LatentProvider};
use crate::nn::{ParamStore, Session};
use crate::policy::{view_keys, LatentSource, PolicyNet};
use crate::rng;

pub const PROVIDER_PREFIX: &str = "provider";
pub const POLICY_PREFIX: &str = "policy";

/// Everything that determines the parameter layout of a [`NavModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub seed: u64,
    pub landmark_vocab: usize,
    pub latent: LatentConfig,
    pub policy: PolicyConfig,
}

impl From<&RunConfig> for ModelSpec {
    fn from(c: &RunConfig) -> Self {
        Self {
            seed: c.seed,
            landmark_vocab: c.landmark_vocab,
            latent: c.latent.clone(),
            policy: c.policy.clone(),
        }
    }
}

pub struct NavModel {
    pub spec: ModelSpec,
    pub store: ParamStore,
    pub provider: LatentProvider,
    pub policy: PolicyNet,
}

impl NavModel {
    /// Fresh model; the provider and the policy draw from separate
    /// initialisation streams so changing one never reshuffles the other.
    pub fn new(spec: ModelSpec) -> Self {
        let vocab = Vocabulary::new(spec.landmark_vocab);
        let mut store = ParamStore::new();
        let mut r = rng::substream(spec.seed, rng::INIT, 0);
        let provider = LatentProvider::new(&spec.latent, vocab, &mut store, &mut r, PROVIDER_PREFIX);
        let mut r = rng::substream(spec.seed, rng::INIT, 1);
        let policy = PolicyNet::new(&spec.policy, spec.latent.d_lm, &mut store, &mut r, POLICY_PREFIX);
        Self {
            spec,
            store,
            provider,
            policy,
        }
    }

    pub fn from_config(cfg: &RunConfig) -> Self {
        Self::new(ModelSpec::from(cfg))
    }

    pub fn vocabulary(&self) -> Vocabulary {
        self.provider.vocabulary()
    }

    /// Cached latents are only valid while the provider is frozen.
    pub fn latent_source<'a>(&self, cache: Option<&'a LatentCache>) -> LatentSource<'a> {
        match cache {
            Some(c) if !self.spec.latent.trainable => LatentSource::Cached(c),
            _ => LatentSource::Live,
        }
    }

    /// Merged latent per candidate and the instruction latents for one
    /// observation, placed on the session's tape.
    pub fn observation_latents(
        &self,
        s: &Session,
        source: LatentSource,
        instruction: &[usize],
        obs: &Observation,
    ) -> Result<(Vec<Var>, Var)> {
        let keys = view_keys(obs);
        if keys.is_empty() {
            return Err(Error::Invalid(format!("node {} has no navigable neighbours", obs.at)));
        }
        match source {
            LatentSource::Cached(cache) => {
                let c = cache.get_or_compute(&self.provider, &self.store, &keys, instruction)?;
                let t = s.tape();
                let merged = c.merged.iter().map(|m| t.constant(m.clone())).collect();
                Ok((merged, t.constant(c.instruction.clone())))
            }
            LatentSource::Live => {
                let enc = self.provider.encode_views(s, &keys, instruction)?;
                Ok((enc.merged, enc.instruction))
            }
        }
    }

    /// Copies parameter values by name from `other`; shapes must match.
    pub fn load_values(&mut self, named: &[(String, crate::tensor::Tensor)]) -> Result<()> {
        let mut by_name = std::collections::HashMap::new();
        for (i, e) in self.store.entries().iter().enumerate() {
            by_name.insert(e.name.clone(), i);
        }
        if named.len() != self.store.len() {
            return Err(Error::Corrupt(format!(
                "checkpoint has {} tensors, model expects {}",
                named.len(),
                self.store.len()
            )));
        }
        for (name, value) in named {
            let i = *by_name
                .get(name)
                .ok_or_else(|| Error::Corrupt(format!("unknown parameter {name}")))?;
            let id = crate::nn::ParamId(i);
            if self.store.get(id).shape() != value.shape() {
                return Err(Error::Corrupt(format!("shape mismatch for {name}")));
            }
            *self.store.get_mut(id) = value.clone();
        }
        Ok(())
    }
}
