//! Run configuration and the stage runners behind the `dsod` binary. Every
//! runner reads and writes plain files so stages can be chained from the
//! shell.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapt::AdaptConfig;
use crate::checkpoint::Checkpoint;
use crate::distill::{DistillConfig, InitMode};
use crate::error::{Error, Result};
use crate::metrics::write_metrics;
use crate::model::{Detector, DetectorConfig};
use crate::pipeline::{
    analyze_orthogonality, evaluate, pretrain_source, run_adaptation, run_distillation, run_sweep, write_eval,
    write_orthogonality, PretrainConfig, SweepConfig,
};
use crate::synth::{domain_pair, load_dataset, mixture_dataset, save_dataset, Dataset, SceneSpec, SuiteSizes};

pub const SOURCE_TRAIN: &str = "source_train";
pub const SOURCE_EVAL: &str = "source_eval";
pub const TARGET_TRAIN: &str = "target_train";
pub const TARGET_EVAL: &str = "target_eval";

pub const CHECKPOINT_FILE: &str = "checkpoint.dsod";
pub const BEST_FILE: &str = "best.dsod";
pub const METRICS_FILE: &str = "metrics.csv";
pub const STABILITY_FILE: &str = "stability.csv";
pub const ORTHOGONALITY_FILE: &str = "orthogonality.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// `fog`, `scene` or `sim2real`.
    pub task: String,
    pub sizes: SuiteSizes,
    pub scene: SceneSpec,
    pub model: DetectorConfig,
    pub pretrain: PretrainConfig,
    pub sweep: SweepConfig,
    pub adapt: AdaptConfig,
    pub distill: DistillConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            task: "fog".into(),
            sizes: SuiteSizes::default(),
            scene: SceneSpec::default(),
            model: DetectorConfig::default(),
            pretrain: PretrainConfig::default(),
            sweep: SweepConfig::default(),
            adapt: AdaptConfig::default(),
            distill: DistillConfig::default(),
        }
    }
}

/// Command-line values that replace config entries when present.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub delta: Option<f64>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub lambda3: Option<f64>,
    pub w_star: Option<f64>,
    pub no_ufi: bool,
    pub no_safr: bool,
    pub no_daaw: bool,
    pub box_fusion: bool,
    pub init: Option<InitMode>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|_| Error::MissingInput(p.to_path_buf()))?;
                Self::from_toml(&text)
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(d) = o.delta {
            self.adapt.delta = d;
            self.distill.delta_ema = d;
            self.distill.delta_static = d;
        }
        if let Some(v) = o.lambda1 {
            self.adapt.lambda1 = v;
        }
        if let Some(v) = o.lambda2 {
            self.distill.lambda2 = v;
        }
        if let Some(v) = o.lambda3 {
            self.distill.lambda3 = v;
        }
        if let Some(w) = o.w_star {
            self.sweep.w_star = Some(w);
        }
        self.adapt.use_ufi &= !o.no_ufi;
        self.adapt.use_safr &= !o.no_safr;
        self.adapt.use_daaw &= !o.no_daaw;
        self.distill.box_fusion |= o.box_fusion;
        if let Some(i) = o.init {
            self.distill.init = i;
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
    }

    fn adapt_config(&self) -> AdaptConfig {
        AdaptConfig {
            seed: self.adapt.seed ^ self.seed,
            ..self.adapt
        }
    }

    fn distill_config(&self) -> DistillConfig {
        DistillConfig {
            seed: self.distill.seed ^ self.seed,
            ..self.distill
        }
    }
}

fn dataset(data: &Path, split: &str) -> Result<Dataset> {
    load_dataset(&data.join(split))
}

fn prepare(out: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    Ok(())
}

/// Writes the four splits of the configured task under `out`.
pub fn generate(cfg: &RunConfig, out: &Path) -> Result<()> {
    prepare(out, cfg)?;
    let pair = domain_pair(&cfg.task, &cfg.scene, cfg.seed, cfg.sizes)?;
    for (name, ds) in [
        (SOURCE_TRAIN, &pair.source_train),
        (SOURCE_EVAL, &pair.source_eval),
        (TARGET_TRAIN, &pair.target_train),
        (TARGET_EVAL, &pair.target_eval),
    ] {
        save_dataset(&out.join(name), ds)?;
    }
    Ok(())
}

/// Source model from `data/source_train`, evaluated on `data/source_eval`.
pub fn pretrain(cfg: &RunConfig, data: &Path, out: &Path) -> Result<Checkpoint> {
    let source = dataset(data, SOURCE_TRAIN)?;
    prepare(out, cfg)?;
    let mixture = mixture_dataset(&source.scene, cfg.pretrain.mixture_size, cfg.seed)?;
    let det = pretrain_source(cfg.model.clone(), &source, &mixture, &cfg.pretrain, cfg.seed)?;
    let ck = Checkpoint::from_detector(&det, "pretrain", cfg.seed, 0, None, cfg.digest()?);
    ck.save(&out.join(CHECKPOINT_FILE))?;
    let eval = dataset(data, SOURCE_EVAL)?;
    write_eval(out, &evaluate(&det, &[0.0; 3], &eval)?)?;
    Ok(ck)
}

/// Stability curve of a source checkpoint on `data/target_train`.
pub fn sweep(cfg: &RunConfig, data: &Path, checkpoint: &Path, out: &Path) -> Result<f64> {
    let source = Checkpoint::load(checkpoint)?.detector();
    let target = dataset(data, TARGET_TRAIN)?;
    prepare(out, cfg)?;
    let report = run_sweep(&source, &target, &cfg.sweep)?;
    report.write_csv(&out.join(STABILITY_FILE))?;
    Ok(report.w_star)
}

/// Self-training of a source checkpoint on `data/target_train`, scored on
/// `data/target_eval`.
pub fn adapt(cfg: &RunConfig, data: &Path, checkpoint: &Path, out: &Path) -> Result<Checkpoint> {
    let source = Checkpoint::load(checkpoint)?.detector();
    let target = dataset(data, TARGET_TRAIN)?;
    let eval = dataset(data, TARGET_EVAL)?;
    prepare(out, cfg)?;
    let run = run_adaptation(&source, &target, Some(&eval), &cfg.adapt_config(), &cfg.sweep)?;
    let digest = cfg.digest()?;
    let w = run.weights();
    if let Some(report) = &run.stability {
        report.write_csv(&out.join(STABILITY_FILE))?;
    }
    write_metrics(&out.join(METRICS_FILE), &run.metrics)?;
    if let Some((best, _)) = &run.best {
        Checkpoint::from_detector(best, "adapt", cfg.seed, run.iterations, Some(w), digest.clone())
            .save(&out.join(BEST_FILE))?;
    }
    let ck = Checkpoint::from_detector(&run.teacher, "adapt", cfg.seed, run.iterations, Some(w), digest);
    ck.save(&out.join(CHECKPOINT_FILE))?;
    write_eval(out, &evaluate(&run.teacher, &w, &eval)?)?;
    Ok(ck)
}

/// Distils an adapted checkpoint into a foundation-free student. `source`
/// is needed only for source initialisation.
pub fn distill(cfg: &RunConfig, data: &Path, dsod: &Path, source: Option<&Path>, out: &Path) -> Result<Checkpoint> {
    let dsod = Checkpoint::load(dsod)?;
    let src = match (cfg.distill.init, source) {
        (InitMode::Source, None) => {
            return Err(Error::Config("source initialisation needs a source checkpoint".into()));
        }
        (_, Some(p)) => Some(Checkpoint::load(p)?.detector()),
        (InitMode::Dsod, None) => None,
    };
    let teacher = dsod.detector();
    let target = dataset(data, TARGET_TRAIN)?;
    let eval = dataset(data, TARGET_EVAL)?;
    prepare(out, cfg)?;
    let run = run_distillation(
        &teacher,
        dsod.weights(),
        src.as_ref().unwrap_or(&teacher),
        &target,
        Some(&eval),
        &cfg.distill_config(),
    )?;
    let digest = cfg.digest()?;
    write_metrics(&out.join(METRICS_FILE), &run.metrics)?;
    if let Some((best, _)) = &run.best {
        Checkpoint::from_detector(best, "distill", cfg.seed, run.iterations, None, digest.clone())
            .save(&out.join(BEST_FILE))?;
    }
    let ck = Checkpoint::from_detector(&run.student, "distill", cfg.seed, run.iterations, None, digest);
    ck.save(&out.join(CHECKPOINT_FILE))?;
    write_eval(out, &evaluate(&run.student, &[0.0; 3], &eval)?)?;
    Ok(ck)
}

/// AP50 of a checkpoint, run with its stored weights, on a dataset directory.
pub fn evaluate_checkpoint(checkpoint: &Path, dataset_dir: &Path, out: &Path) -> Result<f64> {
    let ck = Checkpoint::load(checkpoint)?;
    let ds = load_dataset(dataset_dir)?;
    std::fs::create_dir_all(out)?;
    let report = evaluate(&ck.detector(), &ck.weights(), &ds)?;
    write_eval(out, &report)?;
    Ok(report.map)
}

/// Orthogonality rows for the given checkpoints, or for a freshly
/// initialised model of the configured architecture when none are given.
pub fn analyze(cfg: &RunConfig, checkpoints: &[PathBuf], dataset_dir: &Path, images: usize, out: &Path) -> Result<()> {
    let ds = load_dataset(dataset_dir)?;
    prepare(out, cfg)?;
    let mut models: Vec<(String, Detector)> = Vec::new();
    if checkpoints.is_empty() {
        models.push((format!("init-{}", cfg.seed), Detector::new(cfg.model.clone(), cfg.seed)?));
    }
    for p in checkpoints {
        let id = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
        models.push((id, Checkpoint::load(p)?.detector()));
    }
    let named: Vec<(String, &Detector)> = models.iter().map(|(id, d)| (id.clone(), d)).collect();
    let n = images.min(ds.len());
    let rows = analyze_orthogonality(&named, &ds.images[..n])?;
    write_orthogonality(&out.join(ORTHOGONALITY_FILE), &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_partial_files() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
        let partial = RunConfig::from_toml("seed = 4\n[adapt]\ndelta = 0.5\n").unwrap();
        assert_eq!(partial.seed, 4);
        assert_eq!(partial.adapt.delta, 0.5);
        assert_eq!(partial.adapt.lambda1, AdaptConfig::default().lambda1);
        assert!(RunConfig::from_toml("seed = \"x\"").is_err());
    }

    #[test]
    fn flags_win_over_file() {
        let mut cfg = RunConfig::from_toml("[adapt]\ndelta = 0.5\nuse_safr = true\n").unwrap();
        cfg.apply(&Overrides {
            delta: Some(0.2),
            lambda2: Some(0.0),
            w_star: Some(0.1),
            no_safr: true,
            init: Some(InitMode::Source),
            ..Overrides::default()
        });
        assert_eq!(cfg.adapt.delta, 0.2);
        assert_eq!(cfg.distill.delta_ema, 0.2);
        assert_eq!(cfg.distill.lambda2, 0.0);
        assert_eq!(cfg.sweep.w_star, Some(0.1));
        assert!(!cfg.adapt.use_safr);
        assert!(cfg.adapt.use_ufi);
        assert_eq!(cfg.distill.init, InitMode::Source);
    }

    #[test]
    fn digest_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.digest().unwrap(), b.digest().unwrap());
        assert_eq!(a.digest().unwrap().len(), 64);
        b.adapt.delta = 0.25;
        assert_ne!(a.digest().unwrap(), b.digest().unwrap());
    }
}
