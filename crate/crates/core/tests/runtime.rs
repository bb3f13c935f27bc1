use std::fs;

use mptrain::backend::CostModel;
use mptrain::runtime::{
    gen_blobs, gen_images, run_reference, run_training, Checkpoint, Dataset, ExecutionPlan,
    ParamStore, PlanOptions, Technique, Techniques, TrainRunConfig, Trainer,
};
use mptrain::translator::{mlp, niti, toy_cnn, translate};
use mptrain::Error;

fn blobs() -> Dataset {
    gen_blobs(500, 4, 2, 11).unwrap()
}

fn mlp_cfg() -> TrainRunConfig {
    let mut cfg = TrainRunConfig::new(mlp(4, 16, 2), niti());
    cfg.epochs = 5;
    cfg.batch = 20;
    cfg.seed = 5;
    cfg
}

#[test]
fn mlp_on_blobs_reaches_ninety_percent() {
    let data = blobs();
    let cfg = mlp_cfg();
    let (fp32, _) = run_reference(&cfg, 0.01, &data, None).unwrap();
    assert!(fp32 >= 0.95, "fp32 oracle {fp32}");
    let out = run_training(&cfg, &data, None).unwrap();
    assert!(out.summary.train_accuracy >= 0.9, "{:?}", out.summary);
    assert!(out.summary.train_accuracy >= fp32 - 0.05);
}

#[test]
fn same_seed_gives_identical_logs() {
    let data = blobs();
    let mut logs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = mlp_cfg();
        cfg.epochs = 2;
        cfg.out = Some(dir.path().to_path_buf());
        run_training(&cfg, &data, None).unwrap();
        let log = fs::read(dir.path().join("metrics.csv")).unwrap();
        let ck = fs::read(dir.path().join("checkpoints/epoch_001.ckpt")).unwrap();
        logs.push((log, ck));
    }
    assert_eq!(logs[0], logs[1]);
    let header = String::from_utf8(logs[0].0.clone()).unwrap();
    assert!(header.starts_with(mptrain::runtime::METRICS_HEADER));
}

#[test]
fn reuse_and_cosched_do_not_change_numerics() {
    let data = gen_images(96, 8, 10, 1.0, 2).unwrap();
    let mut base = TrainRunConfig::new(toy_cnn(), niti());
    base.batch = 16;
    base.epochs = 1;
    let on = run_training(&base, &data, None).unwrap();
    let mut off = base.clone();
    off.techniques = Techniques::without(&[Technique::Reuse, Technique::Cosched, Technique::Split]);
    let off = run_training(&off, &data, None).unwrap();
    assert_eq!(on.trainer.params, off.trainer.params);
    let ms_on: f64 = on.metrics.iter().map(|m| m.sim_ms).sum();
    let ms_off: f64 = off.metrics.iter().map(|m| m.sim_ms).sum();
    assert!(ms_on < ms_off);
    assert_eq!(on.summary.builds, on.trainer.plan.subgraphs.len() as u64);
    assert_eq!(
        off.summary.builds,
        off.trainer.plan.subgraphs.len() as u64 * 6
    );
}

#[test]
fn rescale_off_means_per_batch_rescale() {
    let data = gen_images(64, 8, 10, 1.0, 2).unwrap();
    let mut cfg = TrainRunConfig::new(toy_cnn(), niti());
    cfg.batch = 16;
    cfg.techniques = Techniques::without(&[Technique::Rescale]);
    let out = run_training(&cfg, &data, None).unwrap();
    let sites = out.trainer.rescale.states.len();
    assert!(out.metrics.iter().all(|m| m.recomputes == sites));
}

#[test]
fn checkpoint_resumes_bit_identically() {
    let data = blobs();
    let graph = translate(&mlp(4, 16, 2), &niti()).unwrap();
    let plan =
        || ExecutionPlan::prepare(&graph, &CostModel::seeded(), PlanOptions::new(20)).unwrap();
    let params = ParamStore::init(&graph, 3).unwrap();
    let batches: Vec<_> = (0..3).flat_map(|e| data.epoch_batches(20, 3, e)).collect();
    let mut straight = Trainer::new(graph.clone(), plan(), params.clone(), None).unwrap();
    for (i, idx) in batches.iter().enumerate() {
        let (x, y) = data.gather(idx).unwrap();
        straight.step(&x, &y, 0).unwrap();
        if i == 30 {
            break;
        }
    }
    let mut first = Trainer::new(graph.clone(), plan(), params, None).unwrap();
    for idx in &batches[..15] {
        let (x, y) = data.gather(idx).unwrap();
        first.step(&x, &y, 0).unwrap();
    }
    let mut bytes = Vec::new();
    first.checkpoint().write(&mut bytes).unwrap();
    let ck = Checkpoint::read(&bytes[..]).unwrap();
    let mut resumed = Trainer::new(
        graph.clone(),
        plan(),
        ParamStore::init(&graph, 99).unwrap(),
        None,
    )
    .unwrap();
    resumed.restore(ck).unwrap();
    for idx in &batches[15..31] {
        let (x, y) = data.gather(idx).unwrap();
        resumed.step(&x, &y, 0).unwrap();
    }
    assert_eq!(resumed.params, straight.params);
    assert_eq!(resumed.rescale.states, straight.rescale.states);
}

#[test]
fn truncated_checkpoint_is_format_error() {
    let graph = translate(&mlp(4, 8, 2), &niti()).unwrap();
    let ck = Checkpoint {
        params: ParamStore::init(&graph, 0).unwrap(),
        rescale: Default::default(),
        batches_done: 4,
    };
    let mut bytes = Vec::new();
    ck.write(&mut bytes).unwrap();
    assert_eq!(Checkpoint::read(&bytes[..]).unwrap(), ck);
    let cut = &bytes[..bytes.len() - 3];
    assert!(matches!(Checkpoint::read(cut), Err(Error::Format(_))));
}

#[test]
fn dataset_model_mismatch_is_run_error() {
    let data = gen_blobs(100, 3, 2, 0).unwrap();
    let err = run_training(&mlp_cfg(), &data, None);
    assert!(matches!(err, Err(Error::Run(_))));
}

#[test]
fn synthetic_blobs_are_linearly_separable() {
    // A single dense layer is a linear classifier.
    let data = blobs();
    let mut cfg = TrainRunConfig::new(
        mptrain::translator::ModelSpec {
            name: "linear".into(),
            input: vec![4],
            classes: 2,
            layers: vec![mptrain::translator::LayerSpec::dense(2)],
        },
        niti(),
    );
    cfg.epochs = 5;
    cfg.batch = 20;
    let (acc, _) = run_reference(&cfg, 0.01, &data, None).unwrap();
    assert!(acc >= 0.9, "{acc}");
}

#[test]
fn tight_budget_releases_and_rebuilds() {
    let data = gen_images(64, 8, 10, 1.0, 2).unwrap();
    let graph = translate(&toy_cnn(), &niti()).unwrap();
    let mut opts = PlanOptions::new(16);
    opts.techniques = Techniques::without(&[Technique::Cosched]);
    let plan = ExecutionPlan::prepare(&graph, &CostModel::seeded(), opts).unwrap();
    let sizes = plan.region_sizes(&graph);
    let largest: u64 = sizes.iter().map(|s| s.iter().sum::<u64>()).max().unwrap();
    let total: u64 = sizes.iter().flatten().sum();
    assert!(largest < total);
    let budget = (largest).max(total * 6 / 10);
    let mut t = Trainer::new(
        graph.clone(),
        plan,
        ParamStore::init(&graph, 0).unwrap(),
        Some(budget),
    )
    .unwrap();
    for idx in data.epoch_batches(16, 0, 0) {
        let (x, y) = data.gather(&idx).unwrap();
        t.step(&x, &y, 0).unwrap();
        assert!(t.budget_state().unwrap().sum_resident() <= budget);
    }
    assert!(t.releases() > 0);
    assert!(t.builds() > t.plan.subgraphs.len() as u64);
}
