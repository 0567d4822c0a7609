//! Source and target splits of every shift task, with pixel statistics.
//! An optional argument names a directory to write the fog pair into.

use dsod::synth::{domain_pair, pixel_std, save_dataset, SceneSpec, SuiteSizes, TASKS};

fn main() -> dsod::Result<()> {
    let scene = SceneSpec::default();
    let sizes = SuiteSizes { train: 40, eval: 10 };
    for task in TASKS {
        let pair = domain_pair(task, &scene, 0, sizes)?;
        let stats = |ds: &dsod::synth::Dataset| {
            let std = ds.images.iter().map(pixel_std).sum::<f64>() / ds.len() as f64;
            let objects = ds.labels.iter().map(Vec::len).sum::<usize>() as f64 / ds.len() as f64;
            (std, objects)
        };
        let (s_std, s_obj) = stats(&pair.source_train);
        let (t_std, t_obj) = stats(&pair.target_train);
        println!("{task:>9}: source std {s_std:.3} ({s_obj:.1} objects), target std {t_std:.3} ({t_obj:.1} objects)");
    }
    if let Some(dir) = std::env::args().nth(1) {
        let pair = domain_pair("fog", &scene, 0, sizes)?;
        let dir = std::path::Path::new(&dir);
        save_dataset(&dir.join("source_train"), &pair.source_train)?;
        save_dataset(&dir.join("target_train"), &pair.target_train)?;
        println!("wrote fog splits to {}", dir.display());
    }
    Ok(())
}
