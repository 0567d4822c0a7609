//! Every stage of the file-based pipeline on a small configuration:
//! generate, pretrain, sweep, adapt, distill, evaluate, analyze.
//!
//! Usage: `pipeline_run [out_dir]` (default `pipeline-out`).

use std::path::PathBuf;

use dsod::harness::{self, RunConfig, CHECKPOINT_FILE, TARGET_EVAL};
use dsod::synth::SuiteSizes;

fn main() -> dsod::Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "pipeline-out".into()));
    let mut cfg = RunConfig {
        sizes: SuiteSizes { train: 60, eval: 30 },
        ..RunConfig::default()
    };
    cfg.pretrain.mixture_size = 60;
    cfg.pretrain.foundation.steps = 200;
    cfg.pretrain.supervised.epochs = 8;
    cfg.sweep.images = 10;
    cfg.adapt.epochs = 1;
    cfg.distill.epochs = 1;

    let data = root.join("data");
    harness::generate(&cfg, &data)?;
    harness::pretrain(&cfg, &data, &root.join("pretrain"))?;
    let source = root.join("pretrain").join(CHECKPOINT_FILE);
    let w = harness::sweep(&cfg, &data, &source, &root.join("sweep"))?;
    println!("w* = {w}");
    harness::adapt(&cfg, &data, &source, &root.join("adapt"))?;
    let adapted = root.join("adapt").join(CHECKPOINT_FILE);
    harness::distill(&cfg, &data, &adapted, Some(&source), &root.join("distill"))?;
    let student = root.join("distill").join(CHECKPOINT_FILE);
    let map = harness::evaluate_checkpoint(&student, &data.join(TARGET_EVAL), &root.join("evaluate"))?;
    println!("student AP50 on the target split: {map:.3}");
    harness::analyze(&cfg, &[source, adapted], &data.join(TARGET_EVAL), 20, &root.join("analyze"))?;
    println!("outputs in {}", root.display());
    Ok(())
}
