use adapower_core::harness::experiments::*;
use adapower_core::harness::*;
use adapower_core::numeric::Tensor;
use adapower_core::world_model::{AdamConfig, AdamState, WorldModel};
use adapower_core::Error;
use proptest::prelude::*;

fn small_run() -> RunConfig {
    let mut c = RunConfig::default();
    c.env.episodes = 12;
    c.train.pretrain_iters = 6;
    c.train.iters = 6;
    c.train.batch = 3;
    c.train.warmup = 2;
    c.eval.episodes = 3;
    c.eval.horizon = 4;
    c
}

#[test]
fn config_text_round_trips() {
    let c = small_run();
    let text = c.to_text();
    let back = RunConfig::parse(&text).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.to_text(), text);
    assert_eq!(text.lines().count(), RunConfig::keys().len());
    let mut keys = RunConfig::keys();
    keys.sort();
    assert_eq!(keys, RunConfig::keys());
}

#[test]
fn partial_config_keeps_defaults() {
    let c = RunConfig::parse("# a comment\nmodel.d_model = 16   # trailing\n\nttt.layout = T+SC\nenv.train_tasks = 1,4\n").unwrap();
    assert_eq!(c.model.d_model, 16);
    assert_eq!(c.env.train_tasks, vec![1, 4]);
    assert_eq!(c.get("ttt.layout").unwrap(), "T+SC");
    assert_eq!(c.train, RunConfig::default().train);
}

#[test]
fn bad_config_text_rejected() {
    for text in [
        "model.d_modle = 16",
        "model.d_model",
        "model.d_model = sixteen",
        "run.seed = 1\nrun.seed = 2",
        "model.patch = 5",
        "env.train_tasks = 0",
        "train.lr_base = -1",
        "mpc.k = 0\nmpc.m = 0",
        "ttt.layout = tsc+",
    ] {
        assert!(matches!(RunConfig::parse(text), Err(Error::Config(_))), "{text:?}");
    }
}

proptest! {
    #[test]
    fn config_values_round_trip(seed in any::<u64>(), lr in 1e-6f64..1.0, sigma in 0.0f64..2.0, iters in 0usize..100_000, persist in any::<bool>()) {
        let mut c = RunConfig::default();
        c.seed = seed;
        c.train.lr_ttt = lr;
        c.mpc.planner.sigma = sigma;
        c.train.iters = iters;
        c.model.persist_ttt = persist;
        let back = RunConfig::parse(&c.to_text()).unwrap();
        prop_assert_eq!(back, c);
    }
}

fn sample_checkpoint() -> Checkpoint {
    let mut c = Checkpoint::default();
    c.insert("a", &Tensor::<f64>::new(vec![2, 3], vec![1.0, -2.5, 3.25, 0.0, 1e-7, -1e7]).unwrap());
    c.insert("b.scalar", &Tensor::<f32>::scalar(0.5));
    c
}

#[test]
fn checkpoint_bytes_round_trip() {
    let c = sample_checkpoint();
    let bytes = c.to_bytes();
    assert_eq!(&bytes[..4], CHECKPOINT_MAGIC);
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.to_bytes(), bytes);
    assert_eq!(back.get::<f64>("a").unwrap().data()[2], 3.25);
    assert!(back.get::<f64>("missing").is_err());
}

#[test]
fn checkpoint_corruption_detected() {
    let bytes = sample_checkpoint().to_bytes();
    for i in [0, 5, 12, bytes.len() / 2, bytes.len() - 1] {
        let mut b = bytes.clone();
        b[i] ^= 0x10;
        assert!(matches!(Checkpoint::from_bytes(&b), Err(Error::Format { .. })), "flip at {i}");
    }
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut long = bytes.clone();
    long.push(0);
    assert!(Checkpoint::from_bytes(&long).is_err());
    assert_ne!(checksum(b"abc"), checksum(b"abd"));
    assert_eq!(checksum(b""), 0xcbf2_9ce4_8422_2325);
}

#[test]
fn model_checkpoint_round_trips_through_a_file() {
    let cfg = small_run();
    let m = WorldModel::<f32>::build(&cfg.model, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let c = checkpoint_model(&m, None, 7);
    c.write(&mut std::fs::File::create(&path).unwrap()).unwrap();
    let first = std::fs::read(&path).unwrap();
    let read = Checkpoint::read(&mut std::fs::File::open(&path).unwrap()).unwrap();
    let mut fresh = WorldModel::<f32>::build(&cfg.model, 5).unwrap();
    let (opt, it) = restore_model(&read, &mut fresh, AdamConfig::default()).unwrap();
    assert!(opt.is_none());
    assert_eq!(it, 7);
    assert_eq!(fresh.params(), m.params());
    assert_eq!(checkpoint_model(&fresh, None, 7).to_bytes(), first);

    let mut narrow = cfg.model.clone();
    narrow.d_model = 16;
    let mut other = WorldModel::<f32>::build(&narrow, 5).unwrap();
    assert!(restore_model(&read, &mut other, AdamConfig::default()).is_err());
}

#[test]
fn csv_writes_nan_and_checks_width() {
    let mut t = MetricsTable::new(&["name", "value"]);
    t.push(vec!["x".into(), f64::NAN.into()]).unwrap();
    t.push(vec!["y".into(), 2usize.into()]).unwrap();
    t.push(vec!["z".into(), f64::INFINITY.into()]).unwrap();
    assert_eq!(t.to_csv(), "name,value\nx,nan\ny,2\nz,nan\n");
    assert!(t.push(vec!["short".into()]).is_err());
    assert!(t.push(vec!["a,b".into(), 1usize.into()]).is_err());
    assert!(t.float(0, "value").unwrap().is_nan());
    assert_eq!(t.float(1, "value"), Some(2.0));
}

#[test]
fn pipeline_metrics_are_reproducible() {
    let cfg = small_run();
    let run = || {
        let eps = training_episodes(&cfg).unwrap();
        let t = train_pipeline::<f32>(&cfg, &eps).unwrap();
        let held = heldout_episodes(&cfg).unwrap();
        let (errs, _) = rollout_errors(&t.model, &held, cfg.eval.start, cfg.eval.horizon, cfg.seed).unwrap();
        (t.losses.to_csv(), rollout_table(&errs, cfg.train.iters).unwrap().to_csv())
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert_eq!(a.0.lines().count(), 1 + 12);
    assert!(a.0.starts_with("stage,iteration,loss,lr_scale\npretrain,0,"));
}

#[test]
fn resumed_training_matches_unbroken() {
    let cfg = small_run();
    let eps = training_episodes(&cfg).unwrap();
    let (base, _) = pretrain_base::<f32>(&cfg, &eps).unwrap();

    let mut straight = adapted_model(&cfg, &base).unwrap();
    let mut opt = AdamState::new(AdamConfig::default());
    let full = train_adapters(&cfg, &mut straight, &mut opt, &eps, 0, 6).unwrap();

    let mut first = adapted_model(&cfg, &base).unwrap();
    let mut opt1 = AdamState::new(AdamConfig::default());
    let head = train_adapters(&cfg, &mut first, &mut opt1, &eps, 0, 3).unwrap();
    let bytes = checkpoint_model(&first, Some(&opt1), 3).to_bytes();
    let mut resumed = adapted_model(&cfg, &base).unwrap();
    let (opt2, it) = restore_model(&Checkpoint::from_bytes(&bytes).unwrap(), &mut resumed, AdamConfig::default()).unwrap();
    let mut opt2 = opt2.unwrap();
    assert_eq!(it, 3);
    let tail = train_adapters(&cfg, &mut resumed, &mut opt2, &eps, it, 6).unwrap();

    let joined: Vec<_> = head.into_iter().chain(tail).collect();
    for (a, b) in joined.iter().zip(&full) {
        assert_eq!(a.0, b.0);
        assert!((a.1 - b.1).abs() <= 1e-6, "{a:?} vs {b:?}");
    }
    for (name, p) in straight.params().iter() {
        let q = resumed.params().tensor(name).unwrap();
        let d = p.value.data().iter().zip(q.data()).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
        assert!(d <= 1e-6, "{name}: {d}");
    }
}

#[test]
fn zero_learning_rate_gives_a_flat_curve() {
    let mut cfg = small_run();
    cfg.train.lr_ttt = 0.0;
    cfg.train.lr_adapter = 0.0;
    let eps = training_episodes(&cfg).unwrap();
    let (base, _) = pretrain_base::<f32>(&cfg, &eps).unwrap();
    let mut m = adapted_model(&cfg, &base).unwrap();
    let before = m.clone();
    let mut opt = AdamState::new(AdamConfig::default());
    train_adapters(&cfg, &mut m, &mut opt, &eps, 0, 5).unwrap();
    assert_eq!(m.params(), before.params());
    let a = one_step_mse(&m, &eps[..2], 0).unwrap();
    assert_eq!(a, one_step_mse(&before, &eps[..2], 0).unwrap());
}

#[test]
fn schedule_warms_up_then_decays_linearly() {
    assert_eq!(lr_scale(0, 0, 10), 1.0);
    assert_eq!(lr_scale(5, 0, 10), 0.5);
    assert_eq!(lr_scale(0, 4, 14), 0.25);
    assert_eq!(lr_scale(3, 4, 14), 1.0);
    assert_eq!(lr_scale(4, 4, 14), 1.0);
    assert_eq!(lr_scale(13, 4, 14), 0.1);
    assert_eq!(lr_scale(20, 4, 14), 0.0);
    assert_eq!(lr_scale(7, 10, 5), 0.8);
}

#[test]
fn heldout_episodes_cover_every_task_and_are_long_enough() {
    let mut cfg = small_run();
    cfg.eval.episodes = 10;
    let held = heldout_episodes(&cfg).unwrap();
    assert_eq!(held.len(), 10);
    assert!(held.iter().all(|e| e.steps.len() > cfg.eval.start + cfg.eval.horizon));
    let mut ids: Vec<usize> = held.iter().map(|e| e.task_id).collect();
    ids.sort();
    ids.dedup();
    assert!(ids.len() >= 3);
}

#[test]
fn thread_cap_reads_the_environment() {
    // only checks parsing; the pool itself is process-global
    std::env::set_var("ADAPOWER_THREADS", "3");
    assert_eq!(thread_cap(), Some(3));
    std::env::set_var("ADAPOWER_THREADS", "zero");
    assert_eq!(thread_cap(), None);
    std::env::remove_var("ADAPOWER_THREADS");
    assert_eq!(thread_cap(), None);
}
