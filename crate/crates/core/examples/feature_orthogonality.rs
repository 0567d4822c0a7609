//! Cosine between pyramid features and projected foundation features of a
//! freshly initialised wide model.

use dsod::model::{Detector, DetectorConfig};
use dsod::pipeline::analyze_orthogonality;
use dsod::synth::{mixture_dataset, SceneSpec};

fn main() -> dsod::Result<()> {
    let det = Detector::new(DetectorConfig::wide(256), 0)?;
    let images: Vec<_> = mixture_dataset(&SceneSpec::default(), 20, 0)?.into_iter().map(|(i, _)| i).collect();
    for row in analyze_orthogonality(&[("init".to_string(), &det)], &images)? {
        println!("level {}: mean cos {:+.4}, mean |cos| {:.4}", row.level, row.mean_cos, row.mean_abs_cos);
    }
    Ok(())
}
