//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! The two ordering criteria share one set of per-seed source, adaptation
//! and distillation runs. They are measurements of a noisy reproduction, so
//! they report their verdict without failing the test run; every exact
//! criterion also asserts. Run with `--nocapture` to see the lines.

use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dsod::adapt::{
    adapt_loss, combine_adapt_loss, ema_update, hard_loss, heatmap_from_boxes, pseudo_labels_from, safr_loss,
    student_pass, AdaptConfig, Adapter,
};
use dsod::daaw::{select_from_curve, select_weight, stability_joint, warmup_weight, WeightSchedule};
use dsod::detection::{
    focal_loss, giou, hungarian_match, set_detection_loss, BBox, Detection, Label, LossWeights, Prediction,
};
use dsod::distill::{
    combine_distill_loss, distill_loss, fp_reinforcement, soft_static_loss, DistillConfig, InitMode,
};
use dsod::harness::{self, RunConfig};
use dsod::model::{forward, inverse_project, Detector, DetectorConfig, ForwardOptions, MaskSpec};
use dsod::pipeline::{
    analyze_orthogonality, pretrain_source, run_adaptation, run_distillation, PretrainConfig, SweepConfig,
};
use dsod::synth::{domain_pair, mixture_dataset, DomainPair, SceneSpec, SuiteSizes};
use dsod::tensor::{grad_check, Graph, Tensor};
use dsod::train::{evaluate_detector, SupervisedConfig};

fn verdict(id: u32, name: &str, ok: bool, detail: &str) {
    println!("criterion {id} {}: {name} [{detail}]", if ok { "PASS" } else { "FAIL" });
}

fn random_image(cfg: &DetectorConfig, rng: &mut ChaCha8Rng) -> Tensor {
    let n = cfg.channels * cfg.height * cfg.width;
    Tensor::new(vec![cfg.channels, cfg.height, cfg.width], (0..n).map(|_| rng.random()).collect()).unwrap()
}

fn random_labels(n: usize, classes: usize, rng: &mut ChaCha8Rng) -> Vec<Label> {
    (0..n)
        .map(|_| Label {
            class_id: rng.random_range(0..classes),
            bbox: BBox::new(
                rng.random_range(0.25..0.75),
                rng.random_range(0.25..0.75),
                rng.random_range(0.15..0.4),
                rng.random_range(0.15..0.4),
            ),
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Zero-initialised biases put dead ReLU units exactly on their kink, where
/// central differences are meaningless; a random bias moves the probe point
/// off it.
fn randomize_biases(det: &mut Detector, rng: &mut ChaCha8Rng) {
    let frozen: Vec<String> = det.params.frozen().map(str::to_string).collect();
    for (name, t) in det.params.iter_mut() {
        if name.ends_with(".b") && !frozen.iter().any(|f| f == name) {
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
        }
    }
}

/// Worst relative error of every training objective on one seed.
fn objective_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let cfg = DetectorConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut det = Detector::new(cfg.clone(), seed).unwrap();
    let mut student_free = Detector::foundation_free(cfg.clone(), seed + 50).unwrap();
    randomize_biases(&mut det, &mut rng);
    randomize_biases(&mut student_free, &mut rng);
    let other = Detector::new(cfg.clone(), seed + 100).unwrap();
    let img = random_image(&cfg, &mut rng);
    let labels = random_labels(2, cfg.num_classes, &mut rng);
    let static_labels = random_labels(1, cfg.num_classes, &mut rng);
    let teacher_preds: Vec<Prediction> = other.predict(&img, &[0.2; 3], true).unwrap().into_iter().take(3).collect();
    let w = LossWeights::default();
    let weights = [0.3; 3];
    let mask = Some(MaskSpec {
        ratio: 0.5,
        patch: 4,
        seed,
    });
    let (rows, cols) = cfg.foundation_grid();
    let boxes: Vec<BBox> = labels.iter().map(|l| l.bbox).collect();
    let hm = heatmap_from_boxes(&boxes, rows, cols).unwrap();
    let eps = 1e-5;
    let opts = ForwardOptions {
        use_foundation: true,
        mask: None,
    };
    let with = |p: &dsod::tensor::ParamStore, base: &Detector| Detector {
        config: base.config.clone(),
        params: p.clone(),
    };

    let detection = grad_check(
        |g, p| {
            let out = forward(g, &cfg, p, &img, &weights, opts)?;
            set_detection_loss(g, out.preds, &labels, &w)
        },
        &det.params,
        eps,
    )
    .unwrap();
    let regularization = grad_check(
        |g, p| {
            let out = forward(g, &cfg, p, &img, &weights, opts)?;
            let inv = inverse_project(g, &cfg, p, &out.cnn)?;
            safr_loss(g, &inv, out.foundation.expect("foundation"), &hm)
        },
        &det.params,
        eps,
    )
    .unwrap();
    let soft = grad_check(
        |g, p| {
            let out = forward(g, &cfg, p, &img, &[0.0; 3], ForwardOptions::default())?;
            soft_static_loss(g, out.preds, &teacher_preds, 5.0, 2.0, &w)
        },
        &student_free.params,
        eps,
    )
    .unwrap();
    let adaptation = grad_check(
        |g, p| {
            let s = with(p, &det);
            let pass = student_pass(g, &s, &img, &weights, true, mask)?;
            let (d, dm) = hard_loss(g, &pass, &labels, &w)?;
            let inv = inverse_project(g, &cfg, p, &pass.normal.cnn)?;
            let reg = safr_loss(g, &inv, pass.normal.foundation.expect("foundation"), &hm)?;
            adapt_loss(g, d, dm, Some(reg), 0.1)
        },
        &det.params,
        eps,
    )
    .unwrap();
    let dcfg = DistillConfig::default();
    let distillation = grad_check(
        |g, p| {
            let s = with(p, &student_free);
            let pass = student_pass(g, &s, &img, &[0.0; 3], false, mask)?;
            let t = distill_loss(g, &pass, &labels, &static_labels, &teacher_preds, &dcfg, &w)?;
            Ok(t.total)
        },
        &student_free.params,
        eps,
    )
    .unwrap();
    vec![
        ("detection", detection),
        ("regularization", regularization),
        ("soft static", soft),
        ("adaptation", adaptation),
        ("distillation", distillation),
    ]
}

#[test]
fn criterion_01_gradients() {
    let t = Instant::now();
    let mut worst = (0.0f64, "", 0u64);
    for seed in 0..5 {
        for (name, err) in objective_errors(seed) {
            if err > worst.0 || worst.1.is_empty() {
                worst = (err, name, seed);
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let ok = worst.0 < 1e-4 && secs < 30.0;
    verdict(
        1,
        "gradient check of every objective, 5 seeds",
        ok,
        &format!("max rel err {:.2e} ({} seed {}), {secs:.1}s", worst.0, worst.1, worst.2),
    );
    assert!(ok);
}

fn brute_force_min(cost: &[Vec<f64>]) -> f64 {
    fn rec(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == cost.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                rec(cost, row + 1, used, acc + cost[row][j], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(cost, 0, &mut vec![false; cost[0].len()], 0.0, &mut best);
    best
}

#[test]
fn criterion_02_matching_oracle() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for n in 2..=7 {
        for _ in 0..200 {
            let cost: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..5.0)).collect()).collect();
            let m = hungarian_match(&cost);
            worst = worst.max((m.total_cost(&cost) - brute_force_min(&cost)).abs());
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let ok = worst < 1e-9 && secs < 10.0;
    verdict(2, "assignment equals exhaustive minimum, n = 2..7", ok, &format!("max gap {worst:.1e}, {secs:.2}s"));
    assert!(ok);
}

#[test]
fn criterion_03_closed_forms() {
    let w = [0.2, 0.3, 0.4];
    let checks: Vec<(&str, f64, f64)> = vec![
        (
            "giou disjoint",
            giou(&BBox::from_xyxy(0.0, 0.0, 1.0, 1.0), &BBox::from_xyxy(1.0, 1.0, 2.0, 2.0)),
            -0.5,
        ),
        (
            "giou overlap",
            giou(&BBox::from_xyxy(0.0, 0.0, 2.0, 2.0), &BBox::from_xyxy(1.0, 1.0, 3.0, 3.0)),
            1.0 / 7.0 - 2.0 / 9.0,
        ),
        ("focal", focal_loss(0.5, true, 0.25, 2.0), 0.25 * 0.25 * 2f64.ln()),
        ("heatmap centre", heatmap_from_boxes(&[BBox::new(8.5 / 16.0, 8.5 / 16.0, 0.25, 0.25)], 16, 16).unwrap().data()[8 * 16 + 8], 1.0),
        ("heatmap one sigma", heatmap_from_boxes(&[BBox::new(8.5 / 16.0, 8.5 / 16.0, 0.25, 0.25)], 16, 16).unwrap().data()[8 * 16 + 12], (-0.5f64).exp()),
        ("joint stability", stability_joint(0.64, 0.25), 0.4),
        ("warm-up quarter point", warmup_weight(25, &WeightSchedule { w_star: w, n_warm: 100 })[1], 0.5 * w[1]),
        ("adaptation composite", combine_adapt_loss(1.0, 0.8, 0.5, 0.1), 1.85),
        ("distillation composite", combine_distill_loss(1.0, 0.5, 0.2, 0.5, 0.5), 1.35),
    ];
    let bad: Vec<String> = checks
        .iter()
        .filter(|(_, got, want)| (got - want).abs() >= 1e-9)
        .map(|(n, got, want)| format!("{n}: {got} vs {want}"))
        .collect();
    let ok = bad.is_empty();
    verdict(3, "closed-form values", ok, &if ok { format!("{} values", checks.len()) } else { bad.join("; ") });
    assert!(ok);
}

#[test]
fn criterion_04_weight_selection_contract() {
    let mut ok = true;
    let mut notes = Vec::new();
    for seed in 0..3 {
        let cfg = DetectorConfig::tiny();
        let det = Detector::new(cfg.clone(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let images: Vec<Tensor> = (0..4).map(|_| random_image(&cfg, &mut rng)).collect();
        let report = select_weight(&det, &images, &[0.0, 0.1, 0.2, 0.3, 0.4], 5).unwrap();
        let at_zero = report.s_joint[0];
        ok &= (at_zero - 1.0).abs() < 1e-12;
        notes.push(format!("S(0) = {at_zero}"));
    }
    let weights = [0.0, 0.1, 0.2, 0.3, 0.4];
    let s = vec![1.0, 0.99, 0.97, 0.80, 0.50];
    let digitized = select_from_curve(&weights, s.clone(), s.clone(), s).unwrap().w_star;
    ok &= digitized == 0.2;
    notes.push(format!("digitized w* = {digitized}"));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..500 {
        let n = rng.random_range(3..12);
        let ws: Vec<f64> = (0..n).map(|i| i as f64 * 0.05).collect();
        let curve: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let r = select_from_curve(&ws, curve.clone(), curve.clone(), curve).unwrap();
        ok &= r.selected > 0 && r.selected < n - 1;
    }
    verdict(4, "weight selection contract", ok, &notes.join(", "));
    assert!(ok);
}

#[test]
fn criterion_05_orthogonality_at_init() {
    let scene = SceneSpec::default();
    let mut worst = 0.0f64;
    let mut ok = true;
    for seed in 0..3 {
        let cfg = DetectorConfig::wide(256);
        ok &= cfg.dims.iter().all(|&d| d >= 256);
        let det = Detector::new(cfg, seed).unwrap();
        let images: Vec<Tensor> = mixture_dataset(&scene, 100, seed).unwrap().into_iter().map(|(i, _)| i).collect();
        let rows = analyze_orthogonality(&[(format!("init-{seed}"), &det)], &images).unwrap();
        for r in rows {
            worst = worst.max(r.mean_abs_cos);
        }
    }
    ok &= worst < 0.1;
    verdict(5, "random-init features orthogonal to projected foundation features", ok, &format!("max mean |cos| {worst:.4}"));
    assert!(ok);
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct SeedRun {
    pair: DomainPair,
    source: Detector,
    source_ap: f64,
    mt_ap: f64,
    ufi_ap: f64,
    dsod: Detector,
    dsod_ap: f64,
    dsod_weights: [f64; 3],
}

struct StageOne {
    runs: Vec<SeedRun>,
    elapsed: Duration,
}

fn adapt_variant(use_ufi: bool, use_safr: bool, seed: u64) -> AdaptConfig {
    AdaptConfig {
        use_ufi,
        use_safr,
        use_daaw: false,
        seed,
        ..AdaptConfig::default()
    }
}

fn stage_one() -> &'static StageOne {
    static CELL: OnceLock<StageOne> = OnceLock::new();
    CELL.get_or_init(|| {
        let t = Instant::now();
        let scene = SceneSpec::default();
        let runs = SEEDS
            .iter()
            .map(|&seed| {
                let pair = domain_pair("fog", &scene, seed, SuiteSizes::default()).unwrap();
                let pcfg = PretrainConfig::default();
                let mixture = mixture_dataset(&scene, pcfg.mixture_size, seed).unwrap();
                let source = pretrain_source(DetectorConfig::default(), &pair.source_train, &mixture, &pcfg, seed).unwrap();
                let eval = &pair.target_eval;
                let source_ap = evaluate_detector(&source, &eval.images, &eval.labels, &[0.0; 3], false).unwrap().map;
                let sweep = SweepConfig::default();
                let run = |ufi, safr| {
                    let r = run_adaptation(&source, &pair.target_train, Some(eval), &adapt_variant(ufi, safr, seed), &sweep)
                        .unwrap();
                    let w = r.weights();
                    let (best, ap) = r.best.expect("scheduled evaluation");
                    (best, ap, w)
                };
                let (_, mt_ap, _) = run(false, false);
                let (_, ufi_ap, _) = run(true, false);
                let (dsod, dsod_ap, dsod_weights) = run(true, true);
                println!(
                    "  seed {seed}: source {source_ap:.3}  MT {mt_ap:.3}  +UFI {ufi_ap:.3}  +UFI+SAFR {dsod_ap:.3}"
                );
                SeedRun {
                    pair,
                    source,
                    source_ap,
                    mt_ap,
                    ufi_ap,
                    dsod,
                    dsod_ap,
                    dsod_weights,
                }
            })
            .collect();
        StageOne {
            runs,
            elapsed: t.elapsed(),
        }
    })
}

#[test]
fn criterion_06_ablation_ordering() {
    let s1 = stage_one();
    let med = |f: fn(&SeedRun) -> f64| median(s1.runs.iter().map(f).collect());
    let (src, mt, ufi, full) = (med(|r| r.source_ap), med(|r| r.mt_ap), med(|r| r.ufi_ap), med(|r| r.dsod_ap));
    let mins = s1.elapsed.as_secs_f64() / 60.0;
    let ok = src < mt && mt < ufi && ufi <= full && full - src >= 0.05 && mins < 30.0;
    verdict(
        6,
        "fog ablation ordering, median of 5 seeds",
        ok,
        &format!("source {src:.3} < MT {mt:.3} < +UFI {ufi:.3} <= +SAFR {full:.3}, gap {:.1} pts, {mins:.1} min", (full - src) * 100.0),
    );
}

#[test]
fn criterion_07_distillation_ordering() {
    let s1 = stage_one();
    let t = Instant::now();
    let mut rows = Vec::new();
    for (run, &seed) in s1.runs.iter().zip(&SEEDS) {
        let pair = &run.pair;
        let distil = |box_fusion: bool, init: InitMode| {
            let cfg = DistillConfig {
                box_fusion,
                init,
                seed,
                ..DistillConfig::default()
            };
            run_distillation(&run.dsod, run.dsod_weights, &run.source, &pair.target_train, Some(&pair.target_eval), &cfg)
                .unwrap()
                .best
                .expect("scheduled evaluation")
                .1
        };
        let boxes = distil(true, InitMode::Dsod);
        let loss = distil(false, InitMode::Dsod);
        let from_source = distil(false, InitMode::Source);
        println!(
            "  seed {seed}: MT {:.3}  box fusion {boxes:.3}  loss-level {loss:.3}  teacher {:.3}  source init {from_source:.3}",
            run.mt_ap, run.dsod_ap
        );
        rows.push((run.mt_ap, boxes, loss, run.dsod_ap, from_source));
    }
    let col = |k: usize| {
        median(
            rows.iter()
                .map(|r| [r.0, r.1, r.2, r.3, r.4][k])
                .collect(),
        )
    };
    let (mt, boxes, loss, teacher, from_source) = (col(0), col(1), col(2), col(3), col(4));
    let mins = t.elapsed().as_secs_f64() / 60.0;
    let ok = mt < boxes && boxes < loss && loss <= teacher && loss >= from_source && mins < 20.0;
    verdict(
        7,
        "distillation ordering, median of 5 seeds",
        ok,
        &format!(
            "MT {mt:.3} < box fusion {boxes:.3} < loss-level {loss:.3} <= teacher {teacher:.3}; DSOD init {loss:.3} >= source init {from_source:.3}; {mins:.1} min"
        ),
    );
}

#[test]
fn criterion_08_false_positive_gradient() {
    let cfg = DetectorConfig::default();
    let mut student = Detector::foundation_free(cfg.clone(), 8).unwrap();
    // An undecided student: every cell scores every class near 0.5, so
    // neither the positive nor the background term is damped by the focal
    // modulation.
    for l in 3..=5 {
        let b = student.params.get_mut(&format!("head.l{l}.b")).unwrap();
        b.data_mut()[..cfg.num_classes].fill(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let image = random_image(&cfg, &mut rng);
    let truth = BBox::new(0.3, 0.3, 0.2, 0.2);
    let fp = Detection {
        bbox: BBox::new(0.75, 0.7, 0.2, 0.25),
        class_id: 1,
        score: 0.9,
    };
    let ema = vec![
        Detection {
            bbox: truth,
            class_id: 0,
            score: 0.8,
        },
        fp,
    ];
    let stat = vec![Detection {
        bbox: truth,
        class_id: 0,
        score: 0.85,
    }];
    let mut probs = vec![0.02; cfg.num_classes];
    probs[0] = 0.85;
    let soft = vec![Prediction {
        bbox: truth,
        class_probs: probs,
    }];
    let loss_level = DistillConfig::default();
    let box_fusion = DistillConfig {
        box_fusion: true,
        ..loss_level
    };
    let a = fp_reinforcement(&student, &image, &ema, &stat, &soft, &fp, &loss_level).unwrap();
    let b = fp_reinforcement(&student, &image, &ema, &stat, &soft, &fp, &box_fusion).unwrap();
    let ok = a < b;
    verdict(8, "false-positive reinforcement, loss-level below box fusion", ok, &format!("{a:.4} vs {b:.4}"));
    assert!(ok);
}

fn tiny_run(seed: u64) -> RunConfig {
    let mut cfg = RunConfig {
        seed,
        sizes: SuiteSizes { train: 12, eval: 6 },
        ..RunConfig::default()
    };
    cfg.pretrain.mixture_size = 12;
    cfg.pretrain.foundation.steps = 10;
    cfg.pretrain.supervised = SupervisedConfig {
        epochs: 2,
        batch: 4,
        ..SupervisedConfig::default()
    };
    cfg.sweep.images = 4;
    cfg.adapt.epochs = 1;
    cfg.distill.epochs = 1;
    cfg
}

fn pipeline_outputs(root: &Path, cfg: &RunConfig) -> Vec<(String, Vec<u8>)> {
    let data = root.join("data");
    harness::generate(cfg, &data).unwrap();
    harness::pretrain(cfg, &data, &root.join("pretrain")).unwrap();
    let src = root.join("pretrain").join(harness::CHECKPOINT_FILE);
    harness::sweep(cfg, &data, &src, &root.join("sweep")).unwrap();
    harness::adapt(cfg, &data, &src, &root.join("adapt")).unwrap();
    let adapted = root.join("adapt").join(harness::CHECKPOINT_FILE);
    harness::distill(cfg, &data, &adapted, Some(&src), &root.join("distill")).unwrap();
    let student = root.join("distill").join(harness::CHECKPOINT_FILE);
    harness::evaluate_checkpoint(&student, &data.join(harness::TARGET_EVAL), &root.join("evaluate")).unwrap();
    [
        "pretrain/checkpoint.dsod",
        "sweep/stability.csv",
        "adapt/stability.csv",
        "adapt/metrics.csv",
        "adapt/checkpoint.dsod",
        "distill/metrics.csv",
        "distill/checkpoint.dsod",
        "evaluate/eval.json",
    ]
    .iter()
    .map(|rel| (rel.to_string(), std::fs::read(root.join(rel)).unwrap()))
    .collect()
}

#[test]
fn criterion_09_end_to_end_determinism() {
    let cfg = tiny_run(9);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = pipeline_outputs(a.path(), &cfg);
    let second = pipeline_outputs(b.path(), &cfg);
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let ok = differing.is_empty() && first.iter().all(|(_, bytes)| !bytes.is_empty());
    verdict(
        9,
        "end-to-end runs byte-identical",
        ok,
        &if ok { format!("{} artifacts", first.len()) } else { differing.join(", ") },
    );
    assert!(ok);
}

#[test]
fn criterion_10_invariances() {
    let cfg = DetectorConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let det = Detector::new(cfg.clone(), 10).unwrap();
    let img = random_image(&cfg, &mut rng);
    let w = LossWeights::default();
    let mut failures = Vec::new();

    // permutation invariance of the set loss
    let labels = random_labels(4, cfg.num_classes, &mut rng);
    let mut reversed = labels.clone();
    reversed.reverse();
    let loss_of = |ls: &[Label]| {
        let mut g = Graph::new();
        let out = forward(&mut g, &cfg, &det.params, &img, &[0.0; 3], ForwardOptions::default()).unwrap();
        let l = set_detection_loss(&mut g, out.preds, ls, &w).unwrap();
        g.item(l)
    };
    if loss_of(&labels).to_bits() != loss_of(&reversed).to_bits() {
        failures.push("set loss permutation");
    }

    // EMA stays inside the segment between teacher and student
    let mut teacher = det.params.clone();
    let student = Detector::new(cfg.clone(), 11).unwrap().params;
    let before = teacher.clone();
    ema_update(&mut teacher, &student, 0.37).unwrap();
    let inside = teacher.iter().all(|(name, t)| {
        let (a, b) = (before.get(name).unwrap(), student.get(name).unwrap());
        t.data()
            .iter()
            .zip(a.data().iter().zip(b.data()))
            .all(|(&v, (&x, &y))| x.min(y) <= v && v <= x.max(y))
    });
    if !inside {
        failures.push("EMA affine hull");
    }

    // raising δ only removes pseudo-labels
    let preds = det.predict(&img, &[0.0; 3], false).unwrap();
    let mut deltas: Vec<f64> = (1..20).map(|i| i as f64 * 0.05).collect();
    deltas.push(0.999);
    let sets: Vec<Vec<Detection>> = deltas.iter().map(|&d| pseudo_labels_from(&preds, d)).collect();
    let nested = sets.windows(2).all(|p| p[1].iter().all(|d| p[0].contains(d)));
    if !nested {
        failures.push("pseudo-label monotonicity");
    }

    // frozen foundation untouched by adaptation
    let source = Detector::new(cfg.clone(), 12).unwrap();
    let mut adapter = Adapter::new(&source, AdaptConfig::default(), [0.2; 3], 2).unwrap();
    for _ in 0..3 {
        adapter.step(&[&img]).unwrap();
    }
    let frozen_same = source
        .params
        .iter()
        .filter(|(n, _)| source.params.is_frozen(n))
        .all(|(n, t)| {
            let s = adapter.student.params.get(n).unwrap();
            let te = adapter.teacher.params.get(n).unwrap();
            let bits = |x: &Tensor| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            bits(t) == bits(s) && bits(t) == bits(te)
        });
    if !frozen_same {
        failures.push("frozen parameters");
    }

    // zero fusion weight is the plain model
    let run = |use_foundation: bool| {
        let mut g = Graph::new();
        let out = forward(
            &mut g,
            &cfg,
            &det.params,
            &img,
            &[0.0; 3],
            ForwardOptions {
                use_foundation,
                mask: None,
            },
        )
        .unwrap();
        let l = g.value(out.preds.logits).data().to_vec();
        let b = g.value(out.preds.boxes).data().to_vec();
        (l, b)
    };
    if run(true) != run(false) {
        failures.push("fusion identity");
    }

    let ok = failures.is_empty();
    verdict(10, "invariance suite", ok, &if ok { "5 properties".to_string() } else { failures.join(", ") });
    assert!(ok);
}
