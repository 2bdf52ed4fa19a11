use mireg::bench::{benchmark_on, hard_outlier_gen, sweep, test_scenes, SweepParam};
use mireg::config::RunConfig;
use mireg::estimate::{run_pipeline, FeatureSource, Mode};
use mireg::geom::LabeledScene;

fn hard(mode: Mode, n: usize) -> RunConfig {
    let mut cfg = RunConfig { mode, num_scenes: n, seed: 21, ..RunConfig::default() };
    cfg.gen = hard_outlier_gen(&cfg.gen);
    cfg
}

#[test]
fn removing_pruning_lowers_mf() {
    let cfg = hard(Mode::Beta, 6);
    let scenes = test_scenes(&cfg, cfg.num_scenes).unwrap();
    let full = benchmark_on(&cfg, None, &scenes).unwrap().metrics;
    let mut off = cfg.clone();
    off.prune.enabled = false;
    let unpruned = benchmark_on(&off, None, &scenes).unwrap().metrics;
    assert!(unpruned.mf < full.mf, "pruned {} vs unpruned {}", full.mf, unpruned.mf);
}

#[test]
fn tau_n_endpoints_do_not_raise_recall() {
    let cfg = RunConfig { mode: Mode::Oracle, num_scenes: 10, ..RunConfig::default() };
    let rows = sweep(&cfg, None, SweepParam::TauN, &[10.0, 30.0]).unwrap();
    assert!(rows[1].mr <= rows[0].mr, "{rows:?}");
}

#[test]
fn tau_s_sweep_rows_are_nonzero() {
    let cfg = hard(Mode::Beta, 4);
    let rows = sweep(&cfg, None, SweepParam::TauS, &[0.70, 0.75, 0.80, 0.85, 0.90]).unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.mf > 0.0), "{rows:?}");
}

#[test]
fn saved_scene_gives_identical_registration() {
    let cfg = RunConfig { mode: Mode::Beta, num_scenes: 1, ..RunConfig::default() };
    let scene = test_scenes(&cfg, 1).unwrap().remove(0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    scene.save(&path).unwrap();
    let loaded = LabeledScene::load(&path).unwrap();
    let a = run_pipeline(&scene, FeatureSource::Beta, &cfg.pipeline(), 5).unwrap();
    let b = run_pipeline(&loaded, FeatureSource::Beta, &cfg.pipeline(), 5).unwrap();
    assert_eq!(a.transforms, b.transforms);
    assert_eq!(a.cluster_assignment, b.cluster_assignment);
}

#[test]
fn unlabeled_scene_runs_but_oracle_refuses() {
    let cfg = RunConfig::default();
    let labeled = test_scenes(&cfg, 1).unwrap().remove(0);
    let bare = LabeledScene::unlabeled(labeled.correspondences.clone()).unwrap();
    let a = run_pipeline(&labeled, FeatureSource::Beta, &cfg.pipeline(), 1).unwrap();
    let b = run_pipeline(&bare, FeatureSource::Beta, &cfg.pipeline(), 1).unwrap();
    assert_eq!(a.transforms, b.transforms);
    assert!(matches!(run_pipeline(&bare, FeatureSource::Oracle, &cfg.pipeline(), 1), Err(mireg::Error::MissingLabels)));
}
