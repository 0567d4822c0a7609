//! Prediction stability of a source model as foundation features are mixed
//! in, and the weight picked at the elbow of the curve.

use dsod::model::DetectorConfig;
use dsod::pipeline::{pretrain_source, run_sweep, PretrainConfig, SweepConfig};
use dsod::synth::{domain_pair, mixture_dataset, SceneSpec, SuiteSizes};

fn main() -> dsod::Result<()> {
    let scene = SceneSpec::default();
    let pair = domain_pair("fog", &scene, 1, SuiteSizes { train: 120, eval: 20 })?;
    let mut cfg = PretrainConfig::default();
    cfg.supervised.epochs = 10;
    cfg.mixture_size = 120;
    cfg.foundation.steps = 300;
    let mixture = mixture_dataset(&scene, cfg.mixture_size, 1)?;
    let det = pretrain_source(DetectorConfig::default(), &pair.source_train, &mixture, &cfg, 1)?;

    let sweep = SweepConfig {
        images: 20,
        ..SweepConfig::default()
    };
    let report = run_sweep(&det, &pair.target_train, &sweep)?;
    println!("   w    S_cls   S_loc   S_joint");
    for i in 0..report.weights.len() {
        let mark = if i == report.selected { " <" } else { "" };
        println!(
            "{:.2}  {:.4}  {:.4}  {:.4}{mark}",
            report.weights[i], report.s_cls[i], report.s_loc[i], report.s_joint[i]
        );
    }
    println!("w* = {}", report.w_star);
    Ok(())
}
