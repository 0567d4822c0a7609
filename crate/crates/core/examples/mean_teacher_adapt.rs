//! Self-training a source model on unlabelled foggy images: plain mean
//! teacher against the variant with injected foundation features and the
//! feature regulariser.

use dsod::adapt::AdaptConfig;
use dsod::model::DetectorConfig;
use dsod::pipeline::{evaluate, pretrain_source, run_adaptation, PretrainConfig, SweepConfig};
use dsod::synth::{domain_pair, mixture_dataset, SceneSpec, SuiteSizes};

fn main() -> dsod::Result<()> {
    let scene = SceneSpec::default();
    let pair = domain_pair("fog", &scene, 0, SuiteSizes { train: 150, eval: 60 })?;
    let mut pre = PretrainConfig::default();
    pre.supervised.epochs = 15;
    pre.mixture_size = 150;
    pre.foundation.steps = 300;
    let mixture = mixture_dataset(&scene, pre.mixture_size, 0)?;
    let source = pretrain_source(DetectorConfig::default(), &pair.source_train, &mixture, &pre, 0)?;
    println!("source only   {:.3}", evaluate(&source, &[0.0; 3], &pair.target_eval)?.map);

    let sweep = SweepConfig::default();
    for (name, ufi, safr) in [("mean teacher", false, false), ("with both   ", true, true)] {
        let cfg = AdaptConfig {
            use_ufi: ufi,
            use_safr: safr,
            use_daaw: false,
            epochs: 2,
            ..AdaptConfig::default()
        };
        let run = run_adaptation(&source, &pair.target_train, Some(&pair.target_eval), &cfg, &sweep)?;
        let best = run.best.as_ref().map_or(f64::NAN, |(_, ap)| *ap);
        let last = evaluate(&run.teacher, &run.weights(), &pair.target_eval)?.map;
        println!("{name}  last {last:.3}  best {best:.3}  ({} steps)", run.iterations);
    }
    Ok(())
}
