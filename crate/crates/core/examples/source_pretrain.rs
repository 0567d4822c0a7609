//! Source-only training on the clean split and its drop on the foggy split.
//!
//! Usage: `source_pretrain [train_images] [epochs]` (defaults 200 and 20).

use std::time::Instant;

use dsod::model::DetectorConfig;
use dsod::pipeline::{evaluate, pretrain_source, PretrainConfig};
use dsod::synth::{domain_pair, mixture_dataset, SceneSpec, SuiteSizes};

fn main() -> dsod::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let train = args.next().unwrap_or(200);
    let epochs = args.next().unwrap_or(20);
    let scene = SceneSpec::default();
    let pair = domain_pair("fog", &scene, 0, SuiteSizes { train, eval: 100 })?;
    let mut cfg = PretrainConfig::default();
    cfg.supervised.epochs = epochs;
    cfg.mixture_size = train;
    cfg.foundation.steps = 400;

    let t = Instant::now();
    let mixture = mixture_dataset(&scene, cfg.mixture_size, 0)?;
    let det = pretrain_source(DetectorConfig::default(), &pair.source_train, &mixture, &cfg, 0)?;
    println!("trained in {:.1}s", t.elapsed().as_secs_f64());
    println!("source AP50 {:.3}", evaluate(&det, &[0.0; 3], &pair.source_eval)?.map);
    println!("target AP50 {:.3}", evaluate(&det, &[0.0; 3], &pair.target_eval)?.map);
    Ok(())
}
