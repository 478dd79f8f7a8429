use super::*;
use crate::data::SyntheticSpec;
use crate::fusion::FuseInterval;

fn small_cfg() -> RunConfig {
    RunConfig {
        data: SyntheticSpec {
            num_classes: 6,
            dim: 8,
            classes_per_task: 2,
            train_per_class: 20,
            test_per_class: 10,
            ..SyntheticSpec::default()
        },
        model: ModelConfig {
            hidden_dims: vec![16],
            feature_dim: 8,
        },
        buffer_capacity: 12,
        ..RunConfig::default()
    }
}

#[test]
fn every_training_sample_streamed_exactly_once() {
    let cfg = small_cfg();
    let run = train_run(&cfg).unwrap();
    let stream = build_stream(&cfg).unwrap();
    let mut seen: Vec<usize> = run.records.iter().flat_map(|r| r.report.stream_ids.clone()).collect();
    seen.sort_unstable();
    let mut all: Vec<usize> = stream.tasks.iter().flat_map(|t| t.train.ids.clone()).collect();
    all.sort_unstable();
    assert_eq!(seen, all);
    // the memory batch only ever holds already streamed samples
    let mut streamed = std::collections::HashSet::new();
    for r in &run.records {
        assert!(r.report.memory_ids.iter().all(|id| streamed.contains(id)));
        streamed.extend(r.report.stream_ids.iter().copied());
    }
}

#[test]
fn workspace_untouched_by_backward() {
    let run = train_run(&small_cfg()).unwrap();
    for r in &run.records {
        assert!(r.report.gwm_checksum_before_backward.is_some());
        assert_eq!(r.report.gwm_checksum_before_backward, r.report.gwm_checksum_after_backward);
    }
}

#[test]
fn task_interval_fires_once_per_task() {
    let run = train_run(&small_cfg()).unwrap();
    assert_eq!(run.fuse_events(), 3);
    let mut cfg = small_cfg();
    cfg.fusion.fuse_interval = FuseInterval::Batches(1);
    assert_eq!(train_run(&cfg).unwrap().fuse_events(), run.records.len());
}

#[test]
fn deterministic_and_seed_sensitive() {
    let a = train_run(&small_cfg()).unwrap();
    let b = train_run(&small_cfg()).unwrap();
    assert_eq!(a.summary, b.summary);
    assert_eq!(a.students[0].params, b.students[0].params);
    let mut cfg = small_cfg();
    cfg.seed = 1;
    assert_ne!(train_run(&cfg).unwrap().students[0].params, a.students[0].params);
}

#[test]
fn single_task_has_no_forgetting() {
    let mut cfg = small_cfg();
    cfg.data.num_classes = 2;
    let run = train_run(&cfg).unwrap();
    assert_eq!(run.accuracy.num_tasks(), 1);
    assert_eq!(run.summary.frf, 0.0);
}

#[test]
fn separable_stream_is_learned() {
    let mut cfg = RunConfig::default();
    cfg.data.sigma = 1e-3;
    cfg.diagnostics = false;
    let full = train_run(&cfg).unwrap();
    assert!((full.summary.ala - 1.0).abs() <= 0.01, "ala {}", full.summary.ala);
    cfg.loss.enable_kd = false;
    cfg.loss.enable_fuse = false;
    cfg.loss.enable_gwmkd = false;
    let er = train_run(&cfg).unwrap();
    assert!((er.summary.ala - 1.0).abs() <= 0.01, "ala {}", er.summary.ala);
}

#[test]
fn full_collapse_step_makes_students_the_midpoint() {
    let mut cfg = small_cfg();
    cfg.fusion.ema_alpha = 1.0;
    cfg.fusion.fuse_ratio = 1.0;
    cfg.fusion.fuse_interval = FuseInterval::Batches(1);
    let mut stream = build_stream(&cfg).unwrap();
    let mut state = RunState::new(&cfg, &stream).unwrap();
    state.begin_task(0, &stream).unwrap();
    let mut order = substream(cfg.seed, Stream::Order);
    let batches: Vec<Batch> = stream.stream_batches(0, cfg.batch_size, &mut order).unwrap().collect();

    // replay the step by hand to get the post-update, pre-fusion students
    let mut shadow = RunState::new(&RunConfig {
        loss: crate::losses::LossConfig {
            enable_fuse: false,
            ..cfg.loss.clone()
        },
        ..cfg.clone()
    }, &stream)
    .unwrap();
    shadow.begin_task(0, &stream).unwrap();
    shadow.train_batch(&batches[0], 0, false).unwrap();
    let mid = combine(&[&shadow.students[0].params, &shadow.students[1].params], &[0.5, 0.5]).unwrap();

    let report = state.train_batch(&batches[0], 0, false).unwrap();
    assert!(report.fused);
    assert_eq!(state.students[0].params, mid);
    assert_eq!(state.students[1].params, mid);
    assert_eq!(report.cos_students, Some(1.0));
}

#[test]
fn mirrored_views_swap_student_roles() {
    // with the strong view set to the weak one and identical streams, the
    // two students see the same data and stay identical
    let mut cfg = small_cfg();
    cfg.augment = crate::data::AugmentConfig::identity();
    cfg.er_augment = crate::data::AugmentConfig::identity();
    let run = train_run(&cfg).unwrap();
    assert_eq!(run.students[0].params, run.students[1].params);
    for r in &run.records {
        assert_eq!(r.report.losses[0], r.report.losses[1]);
    }
}

#[test]
fn train_batch_needs_a_task() {
    let cfg = small_cfg();
    let stream = build_stream(&cfg).unwrap();
    let mut state = RunState::new(&cfg, &stream).unwrap();
    let b = stream.tasks[0].train.select(&[0, 1]);
    assert!(matches!(state.train_batch(&b, 0, false), Err(Error::Contract(_))));
}

#[test]
fn run_directory_layout() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_cfg();
    cfg.output_dir = Some(dir.path().to_path_buf());
    cfg.eval_every = 5;
    train_run(&cfg).unwrap();
    for f in [
        "config.json",
        "accuracy_matrix.csv",
        "summary.csv",
        "losses.csv",
        "cosine.csv",
        "drift.csv",
        "buffer_final.csv",
        "curve.csv",
        "meta.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let persisted = RunConfig::load(&dir.path().join("config.json")).unwrap();
    assert_eq!(persisted, cfg);
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(summary.starts_with("seed,faa,frf,ala\n0,"));
}

#[test]
fn config_errors_name_the_field() {
    let err = RunConfig::from_json(r#"{"fusion": {"fuse_ratio": 1.5}}"#).unwrap_err();
    assert!(matches!(err, Error::Config { ref field, .. } if field == "fusion.fuse_ratio"), "{err}");
    assert!(RunConfig::from_json(r#"{"bogus": 1}"#).is_err());
    let err = RunConfig::from_json(r#"{"optimizer": {"lr": 0}}"#).unwrap_err();
    assert!(matches!(err, Error::Config { ref field, .. } if field == "optimizer.lr"));
    let cfg = RunConfig::from_json("{}").unwrap();
    assert_eq!(cfg, RunConfig::default());
    assert_eq!(RunConfig::from_json(&cfg.to_json().unwrap()).unwrap(), cfg);
}
