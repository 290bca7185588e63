//! Browser bindings. Every operation takes and returns JSON strings so the
//! page needs no generated type definitions.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use navlab::config::{LatentConfig, PolicyConfig};
use navlab::env::{generate_env, generate_episodes, EnvGenParams, EnvGraph, Episode, Vocabulary, START_HEADING};
use navlab::eval::{episode_metrics, EpisodeMetrics, SUCCESS_THRESHOLD};
use navlab::model::{ModelSpec, NavModel};
use navlab::policy::{greedy_rollout, StepLog};
use navlab::prompt::{render_gpt4v_prompt, render_nav_prompt};
use navlab::rng;
use navlab::train::Checkpoint;

pub const LANDMARKS: usize = 32;

/// A world plus one episode in it.
#[derive(Serialize, Deserialize)]
pub struct Scenario {
    pub world: serde_json::Value,
    pub episode: Episode,
}

impl Scenario {
    fn env(&self) -> navlab::Result<EnvGraph> {
        EnvGraph::from_json(self.episode.env_id.clone(), &self.world.to_string())
    }
}

#[derive(Serialize)]
pub struct RolloutView {
    pub trajectory: Vec<usize>,
    pub steps: Vec<StepLog>,
    pub metrics: EpisodeMetrics,
    pub source: &'static str,
}

fn parse_scenario(json: &str) -> navlab::Result<Scenario> {
    Ok(serde_json::from_str(json)?)
}

pub fn scenario_json(seed: u64, nodes: usize) -> navlab::Result<String> {
    let params = EnvGenParams {
        node_count: nodes,
        radius: 2.6,
        landmark_vocab: LANDMARKS,
        side: None,
    };
    let env = generate_env("demo", &mut rng::stream(seed, rng::ENV_GEN), &params)?;
    let vocab = Vocabulary::new(LANDMARKS);
    let max_hops = (nodes - 1).clamp(1, 5);
    // Small worlds may be too shallow for long routes; relax the lower bound.
    let mut r = rng::stream(seed, rng::EPISODE_GEN);
    let mut min_hops = max_hops.min(3);
    let mut eps = loop {
        match generate_episodes(&env, &mut r, 1, min_hops, max_hops, &vocab) {
            Err(navlab::Error::GenerationExhausted { .. }) if min_hops > 1 => min_hops -= 1,
            other => break other?,
        }
    };
    let scenario = Scenario {
        world: serde_json::from_str(&env.to_json()?)?,
        episode: eps.remove(0),
    };
    Ok(serde_json::to_string(&scenario)?)
}

/// Small untrained model used when no checkpoint is supplied.
fn demo_model(seed: u64) -> NavModel {
    NavModel::new(ModelSpec {
        seed,
        landmark_vocab: LANDMARKS,
        latent: LatentConfig {
            num_queries: 4,
            d_v: 16,
            d_q: 16,
            d_lm: 32,
            encoder_depth: 1,
            ..LatentConfig::default()
        },
        policy: PolicyConfig {
            d_model: 32,
            direction_hidden: 16,
            ..PolicyConfig::default()
        },
    })
}

pub fn rollout_json(scenario: &str, checkpoint: &[u8], seed: u64) -> navlab::Result<String> {
    let sc = parse_scenario(scenario)?;
    let env = sc.env()?;
    let (model, threshold, max_steps, source) = if checkpoint.is_empty() {
        let m = demo_model(seed);
        let steps = m.spec.policy.max_steps;
        (m, SUCCESS_THRESHOLD, steps, "untrained")
    } else {
        let ck = Checkpoint::from_bytes(checkpoint)?;
        let m = ck.model()?;
        (m, ck.config.eval.success_threshold, ck.config.policy.max_steps, "checkpoint")
    };
    sc.episode.validate(&env, &model.vocabulary())?;
    let r = greedy_rollout(&model, None, &env, &sc.episode, max_steps)?;
    let metrics = episode_metrics(&env, &sc.episode, &r.trajectory, r.stopped, threshold)?;
    Ok(serde_json::to_string(&RolloutView {
        trajectory: r.trajectory,
        steps: r.steps,
        metrics,
        source,
    })?)
}

/// Navigation prompt for the observation at `node` facing `heading`, or the
/// reasoning prompt when `gpt4v` is set.
pub fn prompt_text(scenario: &str, node: usize, heading: f64, gpt4v: bool) -> navlab::Result<String> {
    let sc = parse_scenario(scenario)?;
    let text = sc.episode.text();
    if gpt4v {
        return Ok(render_gpt4v_prompt(&text));
    }
    let env = sc.env()?;
    let obs = env.observe(node, heading)?;
    let angles: Vec<f64> = obs.candidates.iter().map(|c| c.angle).collect();
    Ok(render_nav_prompt(&text, &angles, 32))
}

fn js(e: navlab::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// New world with one episode, as scenario JSON.
#[wasm_bindgen]
pub fn generate_scenario(seed: u32, nodes: u32) -> Result<String, JsError> {
    if nodes < 2 {
        return Err(JsError::new("a world needs at least 2 nodes"));
    }
    scenario_json(seed as u64, nodes as usize).map_err(js)
}

/// Greedy rollout; an empty `checkpoint` selects the seeded untrained model.
#[wasm_bindgen]
pub fn rollout(scenario: &str, checkpoint: &[u8], seed: u32) -> Result<String, JsError> {
    rollout_json(scenario, checkpoint, seed as u64).map_err(js)
}

#[wasm_bindgen]
pub fn render_prompt(scenario: &str, node: u32, heading: f64, gpt4v: bool) -> Result<String, JsError> {
    prompt_text(scenario, node as usize, heading, gpt4v).map_err(js)
}

/// Heading the agent starts episodes with.
#[wasm_bindgen]
pub fn start_heading() -> f64 {
    START_HEADING
}
