//! Text prompts: the navigation system prompt, the reasoning-generation
//! prompt, and sampling of intermediate steps for reasoning data.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{normalize_degrees, Direction, Episode};
use crate::error::{Error, Result};

/// Marker standing in for a view's continuous image tokens.
pub fn image_token_placeholder(n: usize) -> String {
    format!("[IMG_TOKENS:{n}]")
}

/// Marker standing in for the observation image of the reasoning prompt.
pub const IMAGE_PLACEHOLDER: &str = "[IMAGE]";

fn whole_degrees(angle: f64) -> i64 {
    (normalize_degrees(angle).round() as i64).rem_euclid(360)
}

/// Navigation system prompt. `angles` are candidate angles relative to the
/// agent heading, in degrees; each candidate shows `tokens_per_view` tokens.
pub fn render_nav_prompt(instruction: &str, angles: &[f64], tokens_per_view: usize) -> String {
    let img = image_token_placeholder(tokens_per_view);
    let mut out = format!(
        "You are navigating in an indoor environment given the instruction: <INST>{instruction}</INST>;\n\
         The navigable locations are listed below: {{\n"
    );
    for (i, &a) in angles.iter().enumerate() {
        out.push_str(&format!(
            "    \"Candidate {}, facing {} degree, {}\" : <IMG>{img}</IMG>;\n",
            i + 1,
            whole_degrees(a),
            Direction::from_angle(a).word()
        ));
    }
    out.push_str("};\nPlease choose the next direction.\n");
    out
}

/// Reasoning-generation prompt for an external vision-language model.
pub fn render_gpt4v_prompt(instruction: &str) -> String {
    format!(
        "{IMAGE_PLACEHOLDER}\n\
         \n\
         As an AI navigating an indoor environment, you're given the task {instruction}.\n\
         \n\
         You find yourself at a particular juncture within the execution of this command. \
         Based on your current observation of the surroundings, including obstacles, pathways, \
         and relevant landmarks, determine the next step toward completing this task. \
         Your response should briefly describe your immediate environment and specify the \
         direction or action you will take to proceed. Summarize this in a concise paragraph, \
         integrating both your observation and decision-making process.\n"
    )
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReasoningRecord {
    pub episode_id: String,
    /// Index into the episode's ground-truth path.
    pub step: usize,
    pub prompt: String,
    /// Reference to the observation image the prompt refers to.
    pub image_ref: String,
    /// Target reasoning text; empty until filled by an external annotator.
    pub reasoning: String,
}

/// Uniformly samples `k` distinct (episode, intermediate step) pairs. Steps
/// are strictly inside the path, so the start and goal are never chosen.
pub fn sample_reasoning_steps(episodes: &[Episode], rng: &mut ChaCha8Rng, k: usize) -> Result<Vec<ReasoningRecord>> {
    if episodes.is_empty() {
        return Err(Error::EmptyInput("episodes"));
    }
    let population: Vec<(usize, usize)> = episodes
        .iter()
        .enumerate()
        .flat_map(|(e, ep)| (1..ep.path.len().saturating_sub(1)).map(move |s| (e, s)))
        .collect();
    let k = k.min(population.len());
    let mut picked: Vec<usize> = index::sample(rng, population.len(), k).into_vec();
    picked.sort_unstable();
    Ok(picked
        .into_iter()
        .map(|i| {
            let (e, step) = population[i];
            let ep = &episodes[e];
            ReasoningRecord {
                episode_id: ep.id.clone(),
                step,
                prompt: render_gpt4v_prompt(&ep.text()),
                image_ref: format!("{}/{}/{}", ep.env_id, ep.id, ep.path[step]),
                reasoning: String::new(),
            }
        })
        .collect())
}

pub fn save_records(path: &Path, records: &[ReasoningRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn load_records(path: &Path) -> Result<Vec<ReasoningRecord>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
