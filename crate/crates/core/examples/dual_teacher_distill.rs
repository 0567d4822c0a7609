//! Distilling an adapted dual-encoder model into a foundation-free student,
//! with loss-level fusion of the two teachers and with merged pseudo-boxes.

use dsod::adapt::AdaptConfig;
use dsod::distill::DistillConfig;
use dsod::model::DetectorConfig;
use dsod::pipeline::{evaluate, pretrain_source, run_adaptation, run_distillation, PretrainConfig, SweepConfig};
use dsod::synth::{domain_pair, mixture_dataset, SceneSpec, SuiteSizes};

fn main() -> dsod::Result<()> {
    let scene = SceneSpec::default();
    let pair = domain_pair("fog", &scene, 2, SuiteSizes { train: 120, eval: 60 })?;
    let mut pre = PretrainConfig::default();
    pre.supervised.epochs = 15;
    pre.mixture_size = 120;
    pre.foundation.steps = 300;
    let mixture = mixture_dataset(&scene, pre.mixture_size, 2)?;
    let source = pretrain_source(DetectorConfig::default(), &pair.source_train, &mixture, &pre, 2)?;
    let adapt = AdaptConfig {
        use_daaw: false,
        epochs: 2,
        ..AdaptConfig::default()
    };
    let adapted = run_adaptation(&source, &pair.target_train, None, &adapt, &SweepConfig::default())?;
    let teacher_ap = evaluate(&adapted.teacher, &adapted.weights(), &pair.target_eval)?.map;
    println!("adapted teacher   {teacher_ap:.3}");

    for (name, box_fusion) in [("loss-level fusion", false), ("box fusion       ", true)] {
        let cfg = DistillConfig {
            box_fusion,
            epochs: 2,
            ..DistillConfig::default()
        };
        let run = run_distillation(&adapted.teacher, adapted.weights(), &source, &pair.target_train, None, &cfg)?;
        let ap = evaluate(&run.student, &[0.0; 3], &pair.target_eval)?.map;
        println!("{name} {ap:.3}  (student has foundation: {})", run.student.has_foundation());
    }
    Ok(())
}
