//! Run configuration: one JSON document covering every module. Unknown keys
//! are rejected; omitted keys take the defaults below.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatentConfig {
    /// View feature width.
    pub d_v: usize,
    /// Query width inside the query encoder.
    pub d_q: usize,
    /// Width of the language-model latent space.
    pub d_lm: usize,
    pub num_queries: usize,
    pub qformer_depth: usize,
    pub encoder_depth: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    /// Longest joint (instruction + image token) sequence accepted.
    pub max_len: usize,
    /// Sinusoidal position encoding on the joint sequence.
    pub positional: bool,
    /// Causal (decoder-style) instead of bidirectional encoder attention.
    pub causal: bool,
    /// Train the provider jointly with the policy instead of freezing it.
    pub trainable: bool,
    /// Bound multiplier for the provider's linear initialisation.
    pub init_gain: f64,
}

impl Default for LatentConfig {
    fn default() -> Self {
        Self {
            d_v: 32,
            d_q: 32,
            d_lm: 64,
            num_queries: 32,
            qformer_depth: 1,
            encoder_depth: 2,
            heads: 1,
            ffn_mult: 2,
            max_len: 2048,
            positional: true,
            causal: false,
            trainable: false,
            init_gain: 3f64.sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub d_model: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub node_encoder_depth: usize,
    pub cross_modal_depth: usize,
    /// Extra stand-alone graph-aware attention layers after the cross-modal stack.
    pub gasa_layers: usize,
    pub max_steps: usize,
    /// Rows of the step-embedding table; index 0 is reserved for unexplored
    /// nodes and visit orders are clamped to `step_table - 1`.
    pub step_table: usize,
    pub affinity_w_init: f64,
    pub affinity_b_init: f64,
    /// Hidden width of the directional-embedding MLP.
    pub direction_hidden: usize,
    /// Zero the directional and step embeddings (test configuration).
    pub zero_position_embeddings: bool,
    /// Dropout is not applied; kept so configs can state it explicitly.
    pub dropout: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 1,
            ffn_mult: 2,
            node_encoder_depth: 2,
            cross_modal_depth: 2,
            gasa_layers: 0,
            max_steps: 15,
            step_table: 17,
            affinity_w_init: -0.1,
            affinity_b_init: 0.0,
            direction_hidden: 32,
            zero_position_embeddings: false,
            dropout: 0.0,
        }
    }
}

impl PolicyConfig {
    /// Single graph-aware attention layer + feed-forward, no node encoder and
    /// no cross-modal stack.
    pub fn without_policy_stack(&self) -> Self {
        Self {
            node_encoder_depth: 0,
            cross_modal_depth: 0,
            gasa_layers: 1,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PseudoLabelRule {
    /// Memory-graph distance to the node plus its remaining geodesic to the goal.
    PathPlusRemaining,
    /// Remaining geodesic to the goal only.
    RemainingOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Behaviour-cloning weight λ in `λ·L_BC + L_DAG`.
    pub lambda: f64,
    pub dagger: bool,
    /// Sampling temperature for on-policy rollouts.
    pub temperature: f64,
    /// Alternate BC-only and DAgger-only steps instead of summing both.
    pub alternate: bool,
    pub pseudo_label: PseudoLabelRule,
    pub batch_size: usize,
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub lr_peak: f64,
    /// Learning rate at step 0 of the warmup.
    pub lr_floor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Evaluate (and checkpoint) every this many steps; 0 disables.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.2,
            dagger: true,
            temperature: 1.0,
            alternate: false,
            pseudo_label: PseudoLabelRule::PathPlusRemaining,
            batch_size: 2,
            total_steps: 5000,
            warmup_steps: 1000,
            lr_peak: 1e-5,
            lr_floor: 1e-8,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.05,
            grad_clip: None,
            eval_every: 500,
        }
    }
}

/// Query-encoder tuning constants, recorded for provenance only; that
/// stage is not run here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage1Schedule {
    pub steps: usize,
    pub batch_size: usize,
    pub warmup_steps: usize,
    pub lr_floor: f64,
    pub lr_peak: f64,
    pub lr_min: f64,
}

impl Default for Stage1Schedule {
    fn default() -> Self {
        Self {
            steps: 200_000,
            batch_size: 8,
            warmup_steps: 1000,
            lr_floor: 1e-8,
            lr_peak: 1e-5,
            lr_min: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Success radius in meters (strict: NE < threshold).
    pub success_threshold: f64,
    /// Episodes evaluated at each periodic evaluation during training; 0 = all.
    pub max_episodes: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            success_threshold: 3.0,
            max_episodes: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Environment JSON files or directories of them.
    pub train_envs: Vec<PathBuf>,
    pub train_episodes: Vec<PathBuf>,
    pub eval_envs: Vec<PathBuf>,
    pub eval_episodes: Vec<PathBuf>,
    /// Checkpoints, the training log and reports are written here.
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub landmark_vocab: usize,
    pub latent: LatentConfig,
    pub policy: PolicyConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub stage1: Stage1Schedule,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            landmark_vocab: 32,
            latent: LatentConfig::default(),
            policy: PolicyConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            stage1: Stage1Schedule::default(),
            data: DataConfig::default(),
        }
    }
}

impl RunConfig {
    /// Settings that train the default benchmark on one CPU core in a few
    /// minutes: fewer queries, a much larger learning rate and batch 3.
    pub fn smoke() -> Self {
        let mut c = Self {
            seed: 1,
            ..Self::default()
        };
        c.latent.num_queries = 8;
        c.train.lr_peak = 1e-3;
        c.train.lr_floor = 1e-6;
        c.train.warmup_steps = 200;
        c.train.batch_size = 3;
        c
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_json(&std::fs::read_to_string(path)?)?;
        // Relative data paths resolve against the config file's directory.
        if let Some(base) = path.parent() {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            let d = &mut cfg.data;
            d.train_envs.iter_mut().for_each(fix);
            d.train_episodes.iter_mut().for_each(fix);
            d.eval_envs.iter_mut().for_each(fix);
            d.eval_episodes.iter_mut().for_each(fix);
            if let Some(o) = d.output_dir.as_mut() {
                fix(o);
            }
        }
        Ok(cfg)
    }

    /// Canonical JSON of the fully resolved configuration.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 over the model-defining part of the config (everything except
    /// data paths), hex encoded.
    pub fn hash(&self) -> [u8; 32] {
        let mut c = self.clone();
        c.data = DataConfig::default();
        Sha256::digest(serde_json::to_vec(&c).expect("config serializes")).into()
    }

    pub fn hash_hex(&self) -> String {
        self.hash().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let l = &self.latent;
        if l.d_v == 0 || l.d_q == 0 || l.d_lm == 0 || l.num_queries == 0 || l.heads == 0 || l.ffn_mult == 0 {
            return bad("latent dimensions must be positive".into());
        }
        if !(l.init_gain > 0.0) || !l.init_gain.is_finite() {
            return bad("latent.init_gain must be positive".into());
        }
        if !l.d_q.is_multiple_of(l.heads) || !l.d_lm.is_multiple_of(l.heads) {
            return bad("latent widths must be divisible by latent.heads".into());
        }
        let p = &self.policy;
        if p.d_model == 0 || p.heads == 0 || !p.d_model.is_multiple_of(p.heads) || p.ffn_mult == 0 {
            return bad("policy.d_model must be positive and divisible by policy.heads".into());
        }
        if p.step_table < 2 {
            return bad("policy.step_table must be >= 2".into());
        }
        if p.direction_hidden == 0 {
            return bad("policy.direction_hidden must be positive".into());
        }
        let t = &self.train;
        if t.lambda < 0.0 || !t.lambda.is_finite() {
            return bad(format!("train.lambda must be >= 0, got {}", t.lambda));
        }
        if !(t.temperature > 0.0) {
            return bad(format!("train.temperature must be > 0, got {}", t.temperature));
        }
        if t.batch_size == 0 {
            return bad("train.batch_size must be >= 1".into());
        }
        if !(t.lr_peak > 0.0) || t.lr_floor < 0.0 {
            return bad("learning rates must be positive".into());
        }
        if self.landmark_vocab == 0 {
            return bad("landmark_vocab must be >= 1".into());
        }
        if !(self.eval.success_threshold > 0.0) {
            return bad("eval.success_threshold must be > 0".into());
        }
        Ok(())
    }
}
