mod common;

use common::*;
use navlab::dataset::Dataset;
use navlab::error::Error;
use navlab::nn::Session;
use navlab::policy::Action;
use navlab::rng;
use navlab::train::{dagger_rollout, episode_loss, Checkpoint, DaggerParams, Objective, Trainer};

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let b = tiny_benchmark(1);
    let mut tr = Trainer::new(&tiny_config(1)).unwrap();
    for _ in 0..3 {
        tr.train_step(&b.train).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.bin");
    tr.checkpoint().save(&p).unwrap();
    let loaded = Checkpoint::load(&p).unwrap();
    assert_eq!(loaded, tr.checkpoint());
    let q = dir.path().join("b.bin");
    loaded.save(&q).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let bytes = Trainer::new(&tiny_config(2)).unwrap().checkpoint().to_bytes();
    for cut in [0, 7, 40, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Corrupt(_))), "cut at {cut}");
    }
    let mut flipped = bytes.clone();
    flipped[bytes.len() / 2] ^= 1;
    assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::Corrupt(_))));
    let mut versioned = bytes.clone();
    versioned[8] = 9;
    assert!(matches!(Checkpoint::from_bytes(&versioned), Err(Error::Version { found: 9, .. })));
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let b = tiny_benchmark(3);
    let cfg = tiny_config(3);
    let mut straight = Trainer::new(&cfg).unwrap();
    let mut losses = Vec::new();
    for _ in 0..8 {
        losses.push(straight.train_step(&b.train).unwrap().loss);
    }

    let mut first = Trainer::new(&cfg).unwrap();
    for _ in 0..5 {
        first.train_step(&b.train).unwrap();
    }
    let bytes = first.checkpoint().to_bytes();
    let mut resumed = Trainer::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    for k in 5..8 {
        assert_eq!(resumed.train_step(&b.train).unwrap().loss, losses[k], "step {}", k + 1);
    }
    assert_eq!(resumed.checkpoint().digest_hex(), straight.checkpoint().digest_hex());
}

#[test]
fn losses_are_finite_and_positive_at_random_init() {
    let b = navlab::benchmark::generate(&navlab::benchmark::BenchmarkSpec {
        seed: 4,
        train_worlds: 10,
        train_episodes: 200,
        heldout_worlds: 1,
        heldout_episodes: 1,
        world: navlab::env::EnvGenParams {
            node_count: 12,
            radius: 2.6,
            landmark_vocab: 8,
            side: None,
        },
        min_hops: 1,
        max_hops: 4,
    })
    .unwrap();
    let cfg = tiny_config(4);
    let model = navlab::model::NavModel::from_config(&cfg);
    for (i, ep) in b.train.episodes.iter().enumerate() {
        let env = b.train.env(&ep.env_id).unwrap();
        let mut r = rng::substream(4, "loss", i as u64);
        let l = episode_loss(&model, None, &cfg, env, ep, Objective::Both, &mut r).unwrap();
        assert!(l.bc.is_finite() && l.bc > 0.0, "bc {}", l.bc);
        assert!(l.dag.is_finite() && l.dag >= 0.0, "dag {}", l.dag);
        assert!(l.total.is_finite() && l.total > 0.0);
        assert!(l.grads.is_finite());
    }
}

#[test]
fn zero_lambda_removes_the_teacher_forced_term() {
    let b = tiny_benchmark(5);
    let mut cfg = tiny_config(5);
    cfg.train.lambda = 0.0;
    let model = navlab::model::NavModel::from_config(&cfg);
    for (i, ep) in b.train.episodes.iter().enumerate() {
        let env = b.train.env(&ep.env_id).unwrap();
        let mut r1 = rng::substream(5, "l0", i as u64);
        let mut r2 = rng::substream(5, "l0", i as u64);
        let both = episode_loss(&model, None, &cfg, env, ep, Objective::Both, &mut r1).unwrap();
        let dag = episode_loss(&model, None, &cfg, env, ep, Objective::DaggerOnly, &mut r2).unwrap();
        assert_eq!(both.total, dag.total);
        assert_eq!(both.grads.norm(), dag.grads.norm());
    }
}

#[test]
fn dagger_labels_live_in_the_step_memory() {
    let b = tiny_benchmark(6);
    let cfg = tiny_config(6);
    let model = navlab::model::NavModel::from_config(&cfg);
    let p = DaggerParams::from_config(&cfg);
    for (i, ep) in b.train.episodes.iter().enumerate() {
        let env = b.train.env(&ep.env_id).unwrap();
        let s = Session::new(&model.store, false);
        let mut r = rng::substream(6, "labels", i as u64);
        let roll = dagger_rollout(&s, &model, model.latent_source(None), env, ep, p, &mut r).unwrap();
        for st in &roll.steps {
            match st.label.unwrap() {
                Action::Stop => {}
                Action::Node(id) => {
                    let slot = st.candidates.iter().position(|&c| c == id).expect("label in memory");
                    assert!(st.scores[slot].is_some(), "label {id} is masked");
                }
            }
        }
    }
}

#[test]
fn single_episode_overfits() {
    let b = tiny_benchmark(7);
    let ep = b.train.episodes.iter().max_by_key(|e| e.hops()).unwrap().clone();
    let one = Dataset::new([b.train.env(&ep.env_id).unwrap().clone()], vec![ep]);
    let mut cfg = tiny_config(7);
    cfg.train.dagger = false;
    cfg.train.lambda = 1.0;
    cfg.train.batch_size = 1;
    cfg.train.total_steps = 50;
    cfg.train.lr_peak = 1e-2;
    let mut tr = Trainer::new(&cfg).unwrap();
    let first = tr.train_step(&one).unwrap().loss;
    let mut last = first;
    while tr.step < 50 {
        last = tr.train_step(&one).unwrap().loss;
    }
    assert!(last < 0.5 * first, "{first} -> {last}");
}

#[test]
fn fixed_seed_gives_identical_checkpoints() {
    let b = tiny_benchmark(8);
    let run = || {
        let mut tr = Trainer::new(&tiny_config(8)).unwrap();
        tr.run(&b.train, None, None, |_| {}).unwrap();
        (tr.checkpoint().digest_hex(), tr.evaluate(&b.heldout).unwrap().to_json())
    };
    assert_eq!(run(), run());
}

#[test]
fn run_writes_log_and_checkpoint() {
    let b = tiny_benchmark(9);
    let mut cfg = tiny_config(9);
    cfg.train.total_steps = 4;
    cfg.train.eval_every = 2;
    let dir = tempfile::tempdir().unwrap();
    let mut tr = Trainer::new(&cfg).unwrap();
    let rows = tr.run(&b.train, Some(&b.heldout), Some(dir.path()), |_| {}).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows[1].eval_sr.is_some() && rows[0].eval_sr.is_none());
    let log = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 5);
    assert_eq!(log.lines().next().unwrap(), "step,lr,loss_bc,loss_dag,eval_SR,eval_SPL");
    let ck = Checkpoint::load(&dir.path().join("checkpoint.bin")).unwrap();
    assert_eq!(ck.step, 4);
}
