//! Navigation metrics and the evaluation harness.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::env::{EnvGraph, Episode};
use crate::error::{Error, Result};
use crate::latent::LatentCache;
use crate::model::NavModel;
use crate::policy::greedy_rollout;

/// Default success radius in meters.
pub const SUCCESS_THRESHOLD: f64 = 3.0;

/// Sum of traversed edge lengths.
pub fn trajectory_length(env: &EnvGraph, traj: &[usize]) -> Result<f64> {
    if traj.is_empty() {
        return Err(Error::Trajectory("empty trajectory".into()));
    }
    let mut total = 0.0;
    for w in traj.windows(2) {
        total += env
            .edge_length(w[0], w[1])
            .ok_or_else(|| Error::Trajectory(format!("{}-{} is not an edge", w[0], w[1])))?;
    }
    Ok(total)
}

/// Geodesic distance from the final node to the goal.
pub fn navigation_error(env: &EnvGraph, traj: &[usize], goal: usize) -> Result<f64> {
    let last = *traj.last().ok_or_else(|| Error::Trajectory("empty trajectory".into()))?;
    env.geodesic_distance(last, goal)
}

pub fn is_success(ne: f64, threshold: f64) -> bool {
    ne < threshold
}

/// Whether any traversed node came within the threshold of the goal.
pub fn oracle_success(env: &EnvGraph, traj: &[usize], goal: usize, threshold: f64) -> Result<bool> {
    for &n in traj {
        if env.geodesic_distance(n, goal)? < threshold {
            return Ok(true);
        }
    }
    Ok(false)
}

/// `success · l / max(p, l)`; equals `success` when `l = 0`.
pub fn spl(success: bool, shortest: f64, taken: f64) -> f64 {
    if !success {
        return 0.0;
    }
    if shortest <= 0.0 {
        return 1.0;
    }
    shortest / taken.max(shortest)
}

/// Dynamic time warping between node sequences with geodesic point cost.
pub fn dtw(env: &EnvGraph, a: &[usize], b: &[usize]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Trajectory("empty path in DTW".into()));
    }
    let (n, m) = (a.len(), b.len());
    let mut dp = vec![f64::INFINITY; (n + 1) * (m + 1)];
    dp[0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let cost = env.geodesic_distance(a[i - 1], b[j - 1])?;
            let best = dp[(i - 1) * (m + 1) + j]
                .min(dp[i * (m + 1) + j - 1])
                .min(dp[(i - 1) * (m + 1) + j - 1]);
            dp[i * (m + 1) + j] = cost + best;
        }
    }
    Ok(dp[n * (m + 1) + m])
}

/// `exp(−DTW / (|gt| · threshold))`.
pub fn ndtw(env: &EnvGraph, traj: &[usize], gt: &[usize], threshold: f64) -> Result<f64> {
    Ok((-dtw(env, traj, gt)? / (gt.len() as f64 * threshold)).exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode_id: String,
    pub env_id: String,
    pub trajectory: Vec<usize>,
    pub stopped: bool,
    pub tl: f64,
    pub ne: f64,
    pub success: bool,
    pub oracle_success: bool,
    pub spl: f64,
    pub ndtw: f64,
    pub sdtw: f64,
}

pub fn episode_metrics(
    env: &EnvGraph,
    episode: &Episode,
    trajectory: &[usize],
    stopped: bool,
    threshold: f64,
) -> Result<EpisodeMetrics> {
    let tl = trajectory_length(env, trajectory)?;
    let ne = navigation_error(env, trajectory, episode.goal)?;
    let success = is_success(ne, threshold);
    let shortest = env.geodesic_distance(episode.start, episode.goal)?;
    let nd = ndtw(env, trajectory, &episode.path, threshold)?;
    Ok(EpisodeMetrics {
        episode_id: episode.id.clone(),
        env_id: episode.env_id.clone(),
        trajectory: trajectory.to_vec(),
        stopped,
        tl,
        ne,
        success,
        oracle_success: oracle_success(env, trajectory, episode.goal, threshold)?,
        spl: spl(success, shortest, tl),
        ndtw: nd,
        sdtw: if success { nd } else { 0.0 },
    })
}

/// Dataset means. OSR, SR and SPL are percentages; nDTW and sDTW fractions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub episodes: usize,
    #[serde(rename = "TL")]
    pub tl: f64,
    #[serde(rename = "NE")]
    pub ne: f64,
    #[serde(rename = "OSR")]
    pub osr: f64,
    #[serde(rename = "SR")]
    pub sr: f64,
    #[serde(rename = "SPL")]
    pub spl: f64,
    #[serde(rename = "nDTW")]
    pub ndtw: f64,
    #[serde(rename = "sDTW")]
    pub sdtw: f64,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

pub fn summarize(per: &[EpisodeMetrics]) -> Result<Summary> {
    if per.is_empty() {
        return Err(Error::EmptyInput("episodes"));
    }
    let n = per.len() as f64;
    let mean = |f: &dyn Fn(&EpisodeMetrics) -> f64| per.iter().map(f).sum::<f64>() / n;
    let pct = |f: &dyn Fn(&EpisodeMetrics) -> f64| round2(100.0 * mean(f));
    Ok(Summary {
        episodes: per.len(),
        tl: mean(&|m| m.tl),
        ne: mean(&|m| m.ne),
        osr: pct(&|m| m.oracle_success as u8 as f64),
        sr: pct(&|m| m.success as u8 as f64),
        spl: pct(&|m| m.spl),
        ndtw: mean(&|m| m.ndtw),
        sdtw: mean(&|m| m.sdtw),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub summary: Summary,
    pub episodes: Vec<EpisodeMetrics>,
}

pub const CSV_HEADER: &str = "TL,NE,OSR,SR,SPL,nDTW,sDTW";

impl MetricReport {
    pub fn to_csv(&self) -> String {
        let s = &self.summary;
        format!(
            "{CSV_HEADER}\n{:.2},{:.2},{:.2},{:.2},{:.2},{:.4},{:.4}\n",
            s.tl, s.ne, s.osr, s.sr, s.spl, s.ndtw, s.sdtw
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Worker count from `NAVLAB_THREADS`, else the available parallelism.
pub fn thread_count() -> usize {
    std::env::var("NAVLAB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Greedy rollout of every episode, then metrics. Results keep episode order
/// regardless of the worker count.
pub fn evaluate(
    model: &NavModel,
    cache: Option<&LatentCache>,
    data: &Dataset,
    max_steps: usize,
    threshold: f64,
    threads: usize,
) -> Result<MetricReport> {
    if data.episodes.is_empty() {
        return Err(Error::EmptyInput("episodes"));
    }
    for ep in &data.episodes {
        data.env(&ep.env_id)?;
    }
    let run = |ep: &Episode| -> Result<EpisodeMetrics> {
        let env = data.env(&ep.env_id)?;
        let r = greedy_rollout(model, cache, env, ep, max_steps)?;
        episode_metrics(env, ep, &r.trajectory, r.stopped, threshold)
    };
    let threads = threads.clamp(1, data.episodes.len());
    let per: Vec<EpisodeMetrics> = if threads == 1 {
        data.episodes.iter().map(run).collect::<Result<_>>()?
    } else {
        let chunk = data.episodes.len().div_ceil(threads);
        let parts: Vec<Result<Vec<EpisodeMetrics>>> = std::thread::scope(|sc| {
            let handles: Vec<_> = data
                .episodes
                .chunks(chunk)
                .map(|c| sc.spawn(move || c.iter().map(run).collect::<Result<Vec<_>>>()))
                .collect();
            handles.into_iter().map(|h| h.join().expect("evaluation worker")).collect()
        });
        let mut all = Vec::with_capacity(data.episodes.len());
        for p in parts {
            all.extend(p?);
        }
        all
    };
    Ok(MetricReport {
        summary: summarize(&per)?,
        episodes: per,
    })
}
