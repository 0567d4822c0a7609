//! Cross-module behaviour of the training stages on small inputs.

use dsod::adapt::{AdaptConfig, Adapter};
use dsod::distill::{init_student_from_dsod, DistillConfig, InitMode};
use dsod::harness::{Overrides, RunConfig};
use dsod::model::{Detector, DetectorConfig};
use dsod::pipeline::{evaluate, run_adaptation, run_distillation, SweepConfig};
use dsod::synth::{domain_pair, SceneSpec, SuiteSizes};
use dsod::Error;

fn small_pair() -> dsod::synth::DomainPair {
    domain_pair("fog", &SceneSpec::default(), 7, SuiteSizes { train: 4, eval: 2 }).unwrap()
}

#[test]
fn adaptation_without_injection_uses_zero_weight() {
    let pair = small_pair();
    let source = Detector::new(DetectorConfig::default(), 1).unwrap();
    let cfg = AdaptConfig {
        use_ufi: false,
        use_safr: false,
        epochs: 1,
        ..AdaptConfig::default()
    };
    let run = run_adaptation(&source, &pair.target_train, Some(&pair.target_eval), &cfg, &SweepConfig::default()).unwrap();
    assert_eq!(run.weights(), [0.0; 3]);
    assert!(run.stability.is_none());
    assert!(run.best.is_some());
    assert_eq!(run.metrics.len(), run.iterations);
}

#[test]
fn pinned_weight_skips_the_sweep() {
    let pair = small_pair();
    let source = Detector::new(DetectorConfig::default(), 2).unwrap();
    let cfg = AdaptConfig {
        epochs: 1,
        ..AdaptConfig::default()
    };
    let sweep = SweepConfig {
        w_star: Some(0.15),
        ..SweepConfig::default()
    };
    let run = run_adaptation(&source, &pair.target_train, None, &cfg, &sweep).unwrap();
    assert_eq!(run.weights(), [0.15; 3]);
    assert!(run.stability.is_none());
}

#[test]
fn distilled_student_drops_the_foundation() {
    let pair = small_pair();
    let dsod = Detector::new(DetectorConfig::default(), 3).unwrap();
    let source = Detector::new(DetectorConfig::default(), 4).unwrap();
    for init in [InitMode::Dsod, InitMode::Source] {
        let cfg = DistillConfig {
            init,
            epochs: 1,
            ..DistillConfig::default()
        };
        let run = run_distillation(&dsod, [0.1; 3], &source, &pair.target_train, None, &cfg).unwrap();
        assert!(!run.student.has_foundation());
        assert!(evaluate(&run.student, &[0.0; 3], &pair.target_eval).is_ok());
    }
}

#[test]
fn student_initialised_from_adapted_model_matches_its_plain_path() {
    let pair = small_pair();
    let dsod = Detector::new(DetectorConfig::default(), 5).unwrap();
    let student = init_student_from_dsod(&dsod.config, &dsod.params).unwrap();
    let img = &pair.target_train.images[0];
    assert_eq!(
        student.predict(img, &[0.0; 3], false).unwrap(),
        dsod.predict(img, &[0.0; 3], false).unwrap()
    );
}

#[test]
fn adapter_keeps_the_source_untouched() {
    let pair = small_pair();
    let source = Detector::new(DetectorConfig::default(), 6).unwrap();
    let snapshot = source.params.clone();
    let mut adapter = Adapter::new(&source, AdaptConfig::default(), [0.1; 3], 4).unwrap();
    let batch: Vec<_> = pair.target_train.images.iter().take(2).collect();
    adapter.step(&batch).unwrap();
    assert_eq!(source.params, snapshot);
    assert_ne!(adapter.student.params, snapshot);
}

#[test]
fn evaluation_rejects_a_class_count_mismatch() {
    let pair = small_pair();
    let cfg = DetectorConfig {
        num_classes: pair.target_eval.num_classes() + 1,
        ..DetectorConfig::default()
    };
    let det = Detector::new(cfg, 0).unwrap();
    assert!(matches!(evaluate(&det, &[0.0; 3], &pair.target_eval), Err(Error::ClassMismatch { .. })));
}

#[test]
fn overrides_reach_every_stage() {
    let mut cfg = RunConfig::default();
    cfg.apply(&Overrides {
        delta: Some(0.45),
        no_safr: true,
        box_fusion: true,
        init: Some(InitMode::Source),
        ..Overrides::default()
    });
    assert_eq!(cfg.adapt.delta, 0.45);
    assert_eq!(cfg.distill.delta_ema, 0.45);
    assert!(!cfg.adapt.use_safr);
    assert!(cfg.distill.box_fusion);
    assert_eq!(cfg.distill.init, InitMode::Source);
}
