use daflow::checkpoint;
use daflow::config::RunConfig;
use daflow::data::make_batch;
use daflow::train::{datasets, Trainer};
use proptest::prelude::*;

fn tiny(dir: &std::path::Path) -> RunConfig {
    let mut c = RunConfig::toy(2);
    c.model.fpn_channels = vec![4, 4, 6, 6];
    c.model.mfe_hidden = vec![6, 4, 4, 4];
    c.model.mfe_kernels = vec![3, 3, 3, 3];
    c.model.shallow_channels = vec![4, 4];
    c.train_pairs = 6;
    c.eval_pairs = 2;
    c.batch_size = 2;
    c.epochs = 2;
    c.log_every = 1;
    c.checkpoint_every = 1;
    c.checkpoint_dir = dir.join("ck");
    c.output_dir = dir.join("out");
    c
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(tmp.path());
    // Uninterrupted: two epochs, then one more step by hand.
    let mut full = Trainer::new(cfg.clone()).unwrap();
    full.run().unwrap();

    let mut first = cfg.clone();
    first.epochs = 1;
    first.checkpoint_dir = tmp.path().join("ck1");
    Trainer::new(first.clone()).unwrap().run().unwrap();
    let (train, eval) = datasets(&cfg).unwrap();
    let mut resumed = Trainer::resume(cfg.clone(), &first.checkpoint_dir.join("final"), train, eval).unwrap();
    assert_eq!(resumed.progress.epoch, 1);
    resumed.run().unwrap();
    assert_eq!(resumed.progress, full.progress);
    for ((_, a), (_, b)) in resumed.model.params().iter().zip(full.model.params().iter()) {
        assert_eq!(a.value, b.value, "{}", a.name);
    }

    // The next step's loss agrees too.
    let s = full.train_set().get(0).unwrap();
    let (b, t) = make_batch(&[&s], cfg.heatmap_sigma).unwrap();
    assert_eq!(full.step(&b, &t).unwrap().loss, resumed.step(&b, &t).unwrap().loss);
}

#[test]
fn run_writes_logs_metrics_and_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(tmp.path());
    let mut t = Trainer::new(cfg.clone()).unwrap();
    t.enable_log().unwrap();
    let s = t.run().unwrap();
    assert_eq!(s.progress.step, 6);
    for f in ["train_log.jsonl", "train_log.txt", "metrics.json", "metrics.txt"] {
        assert!(cfg.output_dir.join(f).is_file(), "{f}");
    }
    assert!(cfg.checkpoint_dir.join("epoch_0001").join("manifest.txt").is_file());
    let log = std::fs::read_to_string(cfg.output_dir.join("train_log.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert!(first["loss"].as_f64().unwrap().is_finite());
    let ck = checkpoint::load::<f32>(&cfg.checkpoint_dir.join("final")).unwrap();
    assert_eq!(ck.config, cfg);
    assert_eq!(ck.progress.step, 6);
}

#[test]
fn resume_rejects_other_architecture() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(tmp.path());
    cfg.epochs = 0;
    Trainer::new(cfg.clone()).unwrap().run().unwrap();
    let mut other = cfg.clone();
    other.model.samples = 3;
    let (train, eval) = datasets(&other).unwrap();
    assert!(Trainer::resume(other, &cfg.checkpoint_dir.join("initial"), train, eval).is_err());
}

#[test]
fn loss_goes_down_on_a_fixed_batch() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(tmp.path());
    cfg.set("lr", "2e-3").unwrap();
    let mut t = Trainer::new(cfg.clone()).unwrap();
    let s = t.train_set().get(0).unwrap();
    let (b, tg) = make_batch(&[&s], cfg.heatmap_sigma).unwrap();
    let first = t.step(&b, &tg).unwrap().loss;
    let mut last = first;
    for _ in 0..30 {
        last = t.step(&b, &tg).unwrap().loss;
    }
    assert!(last < first, "{first} -> {last}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn config_text_roundtrip(
        seed in any::<u64>(),
        samples in 1usize..9,
        lr in 1e-6f64..1e-1,
        batch in 1usize..17,
        style in 0.0f64..500.0,
        concat in any::<bool>(),
        minus in any::<bool>(),
    ) {
        let mut c = RunConfig::toy(samples);
        c.seed = seed;
        c.set("lr", &lr.to_string()).unwrap();
        c.batch_size = batch;
        c.loss.style = style;
        c.set("merge_mode", if concat { "concat" } else { "joint_softmax" }).unwrap();
        c.set("level_weighting", if minus { "n_minus_1" } else { "n_plus_1" }).unwrap();
        c.data_root = Some("some/dir".into());
        let back = RunConfig::from_text(&c.to_text()).unwrap();
        prop_assert_eq!(back, c);
    }
}
