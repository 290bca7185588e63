use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use navlab::benchmark::{self, BenchmarkSpec};
use navlab::config::RunConfig;
use navlab::dataset::Dataset;
use navlab::env::{generate_env, generate_episodes, save_episodes, EnvGenParams, EnvGraph, Vocabulary};
use navlab::eval::{evaluate, thread_count};
use navlab::latent::LatentCache;
use navlab::prompt::{render_gpt4v_prompt, render_nav_prompt, sample_reasoning_steps, save_records};
use navlab::train::{Checkpoint, Trainer};
use navlab::{gradsuite, rng, Error};

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_INVALID: u8 = 4;

#[derive(Parser)]
#[command(name = "navlab", version, about = "Instruction-following navigation over topological graph memory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random world and write it as JSON.
    GenEnv {
        #[arg(long)]
        seed: u64,
        #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
        nodes: u64,
        #[arg(long, default_value_t = 2.6)]
        radius: f64,
        #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
        landmarks: u64,
        /// Output file; the world id is its file stem.
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample shortest-path episodes in a world and write them as JSON Lines.
    GenEpisodes {
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        count: u64,
        #[arg(long, default_value_t = 2)]
        min_hops: usize,
        #[arg(long, default_value_t = 6)]
        max_hops: usize,
        /// Landmark vocabulary size the instructions are written in.
        #[arg(long, default_value_t = 32)]
        landmarks: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the seeded train / held-out benchmark into a directory.
    GenBenchmark {
        /// Benchmark spec JSON; defaults to the built-in spec.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from a run config; writes checkpoint.bin and train_log.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from output_dir/checkpoint.bin if present.
        #[arg(long)]
        resume: bool,
    },
    /// Greedy evaluation of a checkpoint; writes `<report>.csv` and `<report>.json`.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// World files or directories of them.
        #[arg(long, num_args = 1.., required = true)]
        envs: Vec<PathBuf>,
        /// Episode files or directories of them.
        #[arg(long, num_args = 1.., required = true)]
        episodes: Vec<PathBuf>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Print the navigation prompt (or the reasoning prompt with --gpt4v).
    RenderPrompt {
        #[arg(long)]
        instruction: String,
        /// Inline JSON or a file: a list of angles in degrees, or objects with an `angle` field.
        #[arg(long)]
        candidates_json: Option<String>,
        #[arg(long)]
        gpt4v: bool,
        #[arg(long, default_value_t = 32)]
        tokens_per_view: usize,
    },
    /// Sample intermediate steps and write reasoning-prompt records.
    SampleReasoning {
        #[arg(long, num_args = 1.., required = true)]
        episodes: Vec<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        k: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient sweep; exits 4 above tolerance.
    Gradcheck {
        /// Random draws per primitive; composite blocks get a tenth.
        #[arg(long, default_value_t = 100)]
        scale: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    Usage(String),
    Lib(Error),
    Tolerance(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Tolerance(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_INVALID)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Io(_) => EXIT_IO,
                _ => EXIT_INVALID,
            })
        }
    }
}

fn run(cmd: Command) -> CmdResult {
    match cmd {
        Command::GenEnv {
            seed,
            nodes,
            radius,
            landmarks,
            out,
        } => gen_env(seed, nodes as usize, radius, landmarks as usize, &out),
        Command::GenEpisodes {
            env,
            seed,
            count,
            min_hops,
            max_hops,
            landmarks,
            out,
        } => {
            let world = EnvGraph::load(&env)?;
            let vocab = Vocabulary::new(landmarks);
            let mut r = rng::stream(seed, rng::EPISODE_GEN);
            let eps = generate_episodes(&world, &mut r, count as usize, min_hops, max_hops, &vocab)?;
            save_episodes(&out, &eps)?;
            println!("{} episodes in {}", eps.len(), world.id());
            Ok(())
        }
        Command::GenBenchmark { spec, seed, out } => {
            let mut spec: BenchmarkSpec = match spec {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?).map_err(Error::Json)?,
                None => BenchmarkSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let b = benchmark::generate(&spec)?;
            b.train.save(&out.join("train"))?;
            b.heldout.save(&out.join("heldout"))?;
            println!(
                "train: {} worlds / {} episodes; heldout: {} worlds / {} episodes",
                b.train.envs.len(),
                b.train.episodes.len(),
                b.heldout.envs.len(),
                b.heldout.episodes.len()
            );
            Ok(())
        }
        Command::Train { config, resume } => train(&config, resume),
        Command::Eval {
            ckpt,
            envs,
            episodes,
            report,
        } => eval(&ckpt, &envs, &episodes, &report),
        Command::RenderPrompt {
            instruction,
            candidates_json,
            gpt4v,
            tokens_per_view,
        } => {
            if gpt4v {
                print!("{}", render_gpt4v_prompt(&instruction));
                return Ok(());
            }
            let Some(spec) = candidates_json else {
                return Err(Failure::Usage("--candidates-json is required without --gpt4v".into()));
            };
            let angles = parse_candidates(&spec)?;
            if angles.is_empty() {
                return Err(Failure::Usage("at least one candidate is required".into()));
            }
            print!("{}", render_nav_prompt(&instruction, &angles, tokens_per_view));
            Ok(())
        }
        Command::SampleReasoning { episodes, seed, k, out } => {
            let data = Dataset::load(&[], &episodes)?;
            let mut r = rng::stream(seed, "reasoning");
            let recs = sample_reasoning_steps(&data.episodes, &mut r, k as usize)?;
            save_records(&out, &recs)?;
            println!("{} records", recs.len());
            Ok(())
        }
        Command::Gradcheck { scale, seed } => {
            let results = gradsuite::run(scale, seed)?;
            let mut failed = Vec::new();
            for r in &results {
                println!(
                    "{:<8} {:<48} cases={:<4} max_rel_err={:.3e}",
                    if r.passed() { "ok" } else { "FAIL" },
                    r.name,
                    r.cases,
                    r.max_rel_error
                );
                if !r.passed() {
                    failed.push(r.name.clone());
                }
            }
            if failed.is_empty() {
                Ok(())
            } else {
                Err(Failure::Tolerance(format!(
                    "{} check(s) above {:e}: {}",
                    failed.len(),
                    gradsuite::TOLERANCE,
                    failed.join(", ")
                )))
            }
        }
    }
}

fn gen_env(seed: u64, nodes: usize, radius: f64, landmarks: usize, out: &Path) -> CmdResult {
    let id = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| Failure::Usage("--out needs a file name".into()))?;
    let params = EnvGenParams {
        node_count: nodes,
        radius,
        landmark_vocab: landmarks,
        side: None,
    };
    let env = generate_env(id, &mut rng::stream(seed, rng::ENV_GEN), &params)?;
    env.save(out)?;
    println!("nodes={} edges={}", env.node_count(), env.edges().len());
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CandidateSpec {
    Angle(f64),
    Object { angle: f64 },
}

fn parse_candidates(spec: &str) -> Result<Vec<f64>, Failure> {
    let text = if spec.trim_start().starts_with('[') {
        spec.to_string()
    } else {
        std::fs::read_to_string(spec)?
    };
    let items: Vec<CandidateSpec> = serde_json::from_str(&text).map_err(Error::Json)?;
    Ok(items
        .into_iter()
        .map(|c| match c {
            CandidateSpec::Angle(a) | CandidateSpec::Object { angle: a } => a,
        })
        .collect())
}

fn train(config: &Path, resume: bool) -> CmdResult {
    let cfg = RunConfig::load(config)?;
    let out = cfg
        .data
        .output_dir
        .clone()
        .ok_or_else(|| Failure::Usage("config data.output_dir is required for training".into()))?;
    std::fs::create_dir_all(&out)?;
    eprintln!("config hash {}", cfg.hash_hex());
    eprintln!("{}", cfg.to_json());
    std::fs::write(out.join("config.json"), cfg.to_json())?;

    let train_data = Dataset::load(&cfg.data.train_envs, &cfg.data.train_episodes)?;
    if train_data.episodes.is_empty() {
        return Err(Failure::Usage("config lists no training episodes".into()));
    }
    let vocab = Vocabulary::new(cfg.landmark_vocab);
    train_data.validate(&vocab)?;
    let eval_data = if cfg.data.eval_episodes.is_empty() {
        None
    } else {
        let d = Dataset::load(&cfg.data.eval_envs, &cfg.data.eval_episodes)?;
        d.validate(&vocab)?;
        Some(d)
    };

    let ck_path = out.join("checkpoint.bin");
    let mut trainer = if resume && ck_path.exists() {
        let ck = Checkpoint::load(&ck_path)?;
        if ck.config.hash() != cfg.hash() {
            return Err(Failure::Tolerance("checkpoint was written under a different config".into()));
        }
        eprintln!("resuming at step {}", ck.step);
        Trainer::from_checkpoint(&ck)?
    } else {
        Trainer::new(&cfg)?
    };
    trainer.run(&train_data, eval_data.as_ref(), Some(&out), |row| {
        if let Some(sr) = row.eval_sr {
            eprintln!(
                "step {} lr {:.2e} bc {:.4} dag {:.4} eval SR {:.2} SPL {:.2}",
                row.step,
                row.lr,
                row.loss_bc,
                row.loss_dag,
                sr,
                row.eval_spl.unwrap_or(0.0)
            );
        }
    })?;
    let ck = trainer.checkpoint();
    println!("step={} checkpoint={} sha256={}", ck.step, ck_path.display(), ck.digest_hex());
    Ok(())
}

fn report_stem(report: &Path) -> PathBuf {
    match report.extension().and_then(|e| e.to_str()) {
        Some("csv") | Some("json") => report.with_extension(""),
        _ => report.to_path_buf(),
    }
}

fn eval(ckpt: &Path, envs: &[PathBuf], episodes: &[PathBuf], report: &Path) -> CmdResult {
    let ck = Checkpoint::load(ckpt)?;
    let model = ck.model()?;
    let data = Dataset::load(envs, episodes)?;
    data.validate(&model.vocabulary())?;
    let data = data.truncated(ck.config.eval.max_episodes);
    let cache = LatentCache::new();
    let rep = evaluate(
        &model,
        Some(&cache),
        &data,
        ck.config.policy.max_steps,
        ck.config.eval.success_threshold,
        thread_count(),
    )?;
    let stem = report_stem(report);
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let csv = rep.to_csv();
    std::fs::write(stem.with_extension("csv"), &csv)?;
    std::fs::write(stem.with_extension("json"), rep.to_json())?;
    print!("{csv}");
    Ok(())
}
