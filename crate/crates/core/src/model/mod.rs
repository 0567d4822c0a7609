//! Dual-tower grid detector.
//!
//! Every feature map lives on the tape channels-last, as `[rows·cols, C]`.
//! The student tower is a three-level pyramid of per-cell MLPs over pooled
//! pixel windows; the foundation tower is a frozen per-cell MLP over a
//! standardized half-resolution copy of the image. SSE projections carry
//! foundation features into each level, inverse projections carry level
//! features back for regularization, and a per-cell linear head decodes
//! class logits and a box.

mod config;
mod foundation;

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::DetectorConfig;
pub use foundation::{pretrain_foundation, FoundationPretrain};

use crate::detection::{nms, Detection, Prediction, PredVars, NMS_IOU};
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamStore, ResizePlan, Tensor, Var};

/// Prefixes of every parameter that belongs to the foundation branch.
pub const FOUNDATION_PREFIXES: [&str; 3] = ["foundation.", "sse.", "inv."];

pub fn is_foundation_branch(name: &str) -> bool {
    FOUNDATION_PREFIXES.iter().any(|p| name.starts_with(p))
}

/// Prior probability encoded in the initial class bias.
const PRIOR_PROB: f64 = 0.01;
const HEAD_INIT_STD: f64 = 0.01;
/// Width, in cells, of the range a cell's box centre can reach.
const CENTRE_SPAN: f64 = 1.0;

/// Options of a single forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ForwardOptions {
    pub use_foundation: bool,
    pub mask: Option<MaskSpec>,
}

/// Patch masking applied to the student tower's input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub ratio: f64,
    pub patch: usize,
    pub seed: u64,
}

/// Tape handles produced by [`forward`].
#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub cnn: Vec<Var>,
    pub foundation: Option<Var>,
    pub fused: Vec<Var>,
    /// Predictions for every cell of every level, in level-major order.
    pub preds: PredVars,
    /// Cell indices of the top-N predictions by maximum class probability.
    pub ranking: Vec<usize>,
}

impl ModelOutput {
    pub fn top_predictions(&self, g: &Graph) -> Vec<Prediction> {
        let all = self.preds.predictions(g);
        self.ranking.iter().map(|&i| all[i].clone()).collect()
    }
}

fn image_dims(image: &Tensor) -> Result<(usize, usize, usize)> {
    match *image.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::Shape {
            op: "image",
            lhs: image.shape().to_vec(),
            rhs: vec![],
        }),
    }
}

fn check_image(cfg: &DetectorConfig, image: &Tensor, h: usize, w: usize) -> Result<()> {
    let expected = [cfg.channels, h, w];
    if image.shape() != expected {
        return Err(Error::Shape {
            op: "image",
            lhs: image.shape().to_vec(),
            rhs: expected.to_vec(),
        });
    }
    Ok(())
}

/// Average-pooled `2·stride` windows centred on every cell, flattened
/// channels-last into `[cells, pg·pg·C]`. Pixels outside the image count as 0.
fn cell_windows(image: &Tensor, stride: usize, pg: usize) -> Result<Tensor> {
    let (c, h, w) = image_dims(image)?;
    let (gh, gw) = (h / stride, w / stride);
    let pool = 2 * stride / pg;
    let norm = 1.0 / (pool * pool) as f64;
    let px = image.data();
    let dim = pg * pg * c;
    let mut out = vec![0.0; gh * gw * dim];
    let half = (stride / 2) as isize;
    for r in 0..gh {
        for q in 0..gw {
            let y0 = (r * stride) as isize - half;
            let x0 = (q * stride) as isize - half;
            let row = &mut out[(r * gw + q) * dim..(r * gw + q + 1) * dim];
            for py in 0..pg {
                for pxi in 0..pg {
                    for dy in 0..pool {
                        let y = y0 + (py * pool + dy) as isize;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        for dx in 0..pool {
                            let x = x0 + (pxi * pool + dx) as isize;
                            if x < 0 || x >= w as isize {
                                continue;
                            }
                            let (y, x) = (y as usize, x as usize);
                            for ch in 0..c {
                                row[(py * pg + pxi) * c + ch] += px[(ch * h + y) * w + x] * norm;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![gh * gw, dim], out)
}

/// 2×2 average pooling of a `[C, H, W]` image.
pub fn half_resolution(image: &Tensor) -> Result<Tensor> {
    let (c, h, w) = image_dims(image)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidArgument(format!("cannot halve {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let px = image.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let at = |yy: usize, xx: usize| px[(ch * h + yy) * w + xx];
                out.push(0.25 * (at(2 * y, 2 * x) + at(2 * y, 2 * x + 1) + at(2 * y + 1, 2 * x) + at(2 * y + 1, 2 * x + 1)));
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// Per-channel standardization of a `[C, H, W]` image.
fn standardize(image: &Tensor) -> Result<Tensor> {
    let (c, h, w) = image_dims(image)?;
    let n = h * w;
    let mut data = image.data().to_vec();
    for plane in data.chunks_mut(n) {
        let mean = plane.iter().sum::<f64>() / n as f64;
        let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var.sqrt() + 1e-2);
        plane.iter_mut().for_each(|v| *v = (*v - mean) * inv);
    }
    Tensor::new(vec![c, h, w], data)
}

fn dense(g: &mut Graph, params: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(params, &format!("{prefix}.w"))?;
    let b = g.param(params, &format!("{prefix}.b"))?;
    g.linear(x, w, b)
}

fn mlp(g: &mut Graph, params: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let h = dense(g, params, &format!("{prefix}.fc1"), x)?;
    let h = g.relu(h);
    dense(g, params, &format!("{prefix}.fc2"), h)
}

/// Zero-mean, unit-variance rows (layer norm without affine terms).
fn norm_rows(g: &mut Graph, x: Var) -> Result<Var> {
    let c = g.shape(x)[1];
    let avg = g.constant(Tensor::new(vec![c, 1], vec![1.0 / c as f64; c])?)?;
    let spread = g.constant(Tensor::new(vec![1, c], vec![1.0; c])?)?;
    let mean = g.matmul(x, avg)?;
    let mean = g.matmul(mean, spread)?;
    let xc = g.sub(x, mean)?;
    let sq = g.square(xc);
    let var = g.matmul(sq, avg)?;
    let var = g.offset(var, 1e-5);
    let log_var = g.ln(var)?;
    let log_inv = g.scale(log_var, -0.5);
    let inv = g.exp(log_inv);
    let inv = g.matmul(inv, spread)?;
    g.mul(xc, inv)
}

fn level_name(l: usize) -> String {
    format!("l{}", l + 3)
}

/// Student pyramid features, one `[cells_l, C_l]` variable per level.
pub fn encode_cnn(g: &mut Graph, cfg: &DetectorConfig, params: &ParamStore, image: &Tensor) -> Result<Vec<Var>> {
    check_image(cfg, image, cfg.height, cfg.width)?;
    (0..3)
        .map(|l| {
            let x = g.constant(cell_windows(image, cfg.strides[l], cfg.patch_grid)?)?;
            let h = mlp(g, params, &format!("cnn.{}", level_name(l)), x)?;
            norm_rows(g, h)
        })
        .collect()
}

/// Frozen foundation features `[cells_f, D_f]` from a half-resolution image.
pub fn encode_foundation(g: &mut Graph, cfg: &DetectorConfig, params: &ParamStore, half_image: &Tensor) -> Result<Var> {
    check_image(cfg, half_image, cfg.height / 2, cfg.width / 2)?;
    let x = cell_windows(&standardize(half_image)?, cfg.foundation_stride / 2, cfg.patch_grid)?;
    let x = g.constant(x)?;
    mlp(g, params, "foundation", x)
}

fn plan(from: (usize, usize), to: (usize, usize)) -> Result<Rc<ResizePlan>> {
    Ok(Rc::new(ResizePlan::new(from.0, from.1, to.0, to.1)?))
}

/// SSE projection of the foundation feature onto level `l`: 1×1 linear map
/// to `C_l`, then bilinear resize to the level grid.
pub fn sse_project(g: &mut Graph, cfg: &DetectorConfig, params: &ParamStore, f: Var, l: usize) -> Result<Var> {
    let p = dense(g, params, &format!("sse.{}", level_name(l)), f)?;
    g.resize(p, plan(cfg.foundation_grid(), cfg.level_grid(l))?)
}

/// `cnn_l + w_l · proj_l`; a zero weight returns the CNN variable itself.
pub fn ufi_fuse(g: &mut Graph, cnn: &[Var], proj: &[Var], w: &[f64]) -> Result<Vec<Var>> {
    if cnn.len() != proj.len() || cnn.len() != w.len() {
        return Err(Error::InvalidArgument(format!(
            "ufi_fuse: {} levels, {} projections, {} weights",
            cnn.len(),
            proj.len(),
            w.len()
        )));
    }
    cnn.iter()
        .zip(proj)
        .zip(w)
        .map(|((&c, &p), &wl)| {
            if g.shape(c) != g.shape(p) {
                return Err(Error::Shape {
                    op: "ufi_fuse",
                    lhs: g.shape(c).to_vec(),
                    rhs: g.shape(p).to_vec(),
                });
            }
            if wl == 0.0 {
                return Ok(c);
            }
            let s = g.scale(p, wl);
            g.add(c, s)
        })
        .collect()
}

/// Maps every level back to the foundation width and grid (2-layer MLP then
/// bilinear resize).
pub fn inverse_project(g: &mut Graph, cfg: &DetectorConfig, params: &ParamStore, cnn: &[Var]) -> Result<Vec<Var>> {
    cnn.iter()
        .enumerate()
        .map(|(l, &x)| {
            let y = mlp(g, params, &format!("inv.{}", level_name(l)), x)?;
            g.resize(y, plan(cfg.level_grid(l), cfg.foundation_grid())?)
        })
        .collect()
}

/// Sigmoid box parameters to `(cx, cy, w, h)`: the centre may fall anywhere
/// in the cell's receptive window (`CENTRE_SPAN` cells wide, centred on the
/// cell), the size spans at most half the image. Rows of `raw` run over the
/// cells of each grid in turn.
pub(crate) fn decode_boxes(g: &mut Graph, raw: Var, grids: &[(usize, usize)]) -> Result<Var> {
    let n: usize = grids.iter().map(|(h, w)| h * w).sum();
    let mut scale = Vec::with_capacity(n * 4);
    let mut offset = Vec::with_capacity(n * 4);
    for &(gh, gw) in grids {
        for r in 0..gh {
            for q in 0..gw {
                let lead = (CENTRE_SPAN - 1.0) / 2.0;
                scale.extend([CENTRE_SPAN / gw as f64, CENTRE_SPAN / gh as f64, 0.5, 0.5]);
                offset.extend([(q as f64 - lead) / gw as f64, (r as f64 - lead) / gh as f64, 0.0, 0.0]);
            }
        }
    }
    let s = g.sigmoid(raw);
    let scale = g.constant(Tensor::new(vec![n, 4], scale)?)?;
    let offset = g.constant(Tensor::new(vec![n, 4], offset)?)?;
    let boxes = g.mul(s, scale)?;
    g.add(boxes, offset)
}

/// Per-cell class logits and decoded boxes for every level.
fn head(g: &mut Graph, cfg: &DetectorConfig, params: &ParamStore, feats: &[Var]) -> Result<PredVars> {
    let c = cfg.num_classes;
    let outs = feats
        .iter()
        .enumerate()
        .map(|(l, &f)| dense(g, params, &format!("head.{}", level_name(l)), f))
        .collect::<Result<Vec<_>>>()?;
    let raw = g.concat(&outs, 0)?;
    let logits = g.slice_cols(raw, 0, c)?;
    let box_raw = g.slice_cols(raw, c, c + 4)?;
    let grids: Vec<(usize, usize)> = (0..3).map(|l| cfg.level_grid(l)).collect();
    let boxes = decode_boxes(g, box_raw, &grids)?;
    Ok(PredVars { logits, boxes })
}

/// Cells sorted by maximum class logit (descending, stable), truncated to `n`.
fn rank_cells(logits: &Tensor, n: usize) -> Vec<usize> {
    let c = logits.shape()[1];
    let best: Vec<f64> = logits
        .data()
        .chunks(c)
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut idx: Vec<usize> = (0..best.len()).collect();
    idx.sort_by(|&a, &b| best[b].total_cmp(&best[a]));
    idx.truncate(n);
    idx
}

/// Zeroes each `patch × patch` block independently with probability `ratio`.
pub fn apply_mask<R: Rng + ?Sized>(image: &Tensor, ratio: f64, patch: usize, rng: &mut R) -> Result<Tensor> {
    let (c, h, w) = image_dims(image)?;
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!("mask ratio {ratio} outside [0, 1]")));
    }
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::InvalidArgument(format!("patch {patch} does not divide {h}x{w}")));
    }
    let mut out = image.clone();
    let data = out.data_mut();
    for py in 0..h / patch {
        for px in 0..w / patch {
            if rng.random::<f64>() >= ratio {
                continue;
            }
            for ch in 0..c {
                for y in py * patch..(py + 1) * patch {
                    let row = (ch * h + y) * w;
                    data[row + px * patch..row + (px + 1) * patch].fill(0.0);
                }
            }
        }
    }
    Ok(out)
}

/// Full forward pass. `weights` are the per-level fusion weights; they are
/// ignored when the foundation branch is off.
pub fn forward(
    g: &mut Graph,
    cfg: &DetectorConfig,
    params: &ParamStore,
    image: &Tensor,
    weights: &[f64; 3],
    opts: ForwardOptions,
) -> Result<ModelOutput> {
    let cnn = match opts.mask {
        Some(m) if m.ratio > 0.0 => {
            let mut rng = ChaCha8Rng::seed_from_u64(m.seed);
            let masked = apply_mask(image, m.ratio, m.patch, &mut rng)?;
            encode_cnn(g, cfg, params, &masked)?
        }
        _ => encode_cnn(g, cfg, params, image)?,
    };
    let (foundation, fused) = if opts.use_foundation {
        let f = encode_foundation(g, cfg, params, &half_resolution(image)?)?;
        let mut proj = Vec::with_capacity(3);
        for (l, &wl) in weights.iter().enumerate() {
            // A zero-weight level keeps its CNN features untouched.
            proj.push(if wl == 0.0 { cnn[l] } else { sse_project(g, cfg, params, f, l)? });
        }
        (Some(f), ufi_fuse(g, &cnn, &proj, weights)?)
    } else {
        (None, cnn.clone())
    };
    let preds = head(g, cfg, params, &fused)?;
    let ranking = rank_cells(g.value(preds.logits), cfg.top_n);
    Ok(ModelOutput {
        cnn,
        foundation,
        fused,
        preds,
        ranking,
    })
}

/// Converts a channels-last feature variable to a `[C, rows, cols]` tensor.
pub fn to_chw(g: &Graph, v: Var, rows: usize, cols: usize) -> Result<Tensor> {
    let t = g.value(v);
    let &[cells, c] = t.shape() else {
        return Err(Error::Shape {
            op: "to_chw",
            lhs: t.shape().to_vec(),
            rhs: vec![rows, cols],
        });
    };
    if cells != rows * cols {
        return Err(Error::Shape {
            op: "to_chw",
            lhs: t.shape().to_vec(),
            rhs: vec![rows, cols],
        });
    }
    let mut out = vec![0.0; c * cells];
    for (i, row) in t.data().chunks(c).enumerate() {
        for (ch, &v) in row.iter().enumerate() {
            out[ch * cells + i] = v;
        }
    }
    Tensor::new(vec![c, rows, cols], out)
}

fn insert_dense<R: Rng + ?Sized>(p: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, std: f64, rng: &mut R) {
    p.insert(format!("{name}.w"), Tensor::randn(&[fan_in, fan_out], std, rng));
    p.insert(format!("{name}.b"), Tensor::zeros(&[fan_out]));
}

fn insert_mlp<R: Rng + ?Sized>(p: &mut ParamStore, prefix: &str, d_in: usize, hidden: usize, d_out: usize, rng: &mut R) {
    insert_dense(p, &format!("{prefix}.fc1"), d_in, hidden, (2.0 / d_in as f64).sqrt(), rng);
    insert_dense(p, &format!("{prefix}.fc2"), hidden, d_out, (1.0 / hidden as f64).sqrt(), rng);
}

/// Student encoder and head.
pub fn init_student<R: Rng + ?Sized>(p: &mut ParamStore, cfg: &DetectorConfig, rng: &mut R) {
    let d = cfg.window_dim();
    for l in 0..3 {
        let c = cfg.dims[l];
        insert_mlp(p, &format!("cnn.{}", level_name(l)), d, c, c, rng);
    }
    let prior = -((1.0 - PRIOR_PROB) / PRIOR_PROB).ln();
    for l in 0..3 {
        let name = format!("head.{}", level_name(l));
        let out = cfg.num_classes + 4;
        p.insert(format!("{name}.w"), Tensor::randn(&[cfg.dims[l], out], HEAD_INIT_STD, rng));
        let mut b = vec![0.0; out];
        b[..cfg.num_classes].fill(prior);
        p.insert(format!("{name}.b"), Tensor::new(vec![out], b).expect("bias shape"));
    }
}

/// Foundation encoder, inserted frozen.
pub fn init_foundation<R: Rng + ?Sized>(p: &mut ParamStore, cfg: &DetectorConfig, rng: &mut R) -> Result<()> {
    let d = cfg.foundation_dim;
    insert_mlp(p, "foundation", cfg.window_dim(), d, d, rng);
    for n in ["foundation.fc1.w", "foundation.fc1.b", "foundation.fc2.w", "foundation.fc2.b"] {
        p.freeze(n)?;
    }
    Ok(())
}

pub fn init_sse<R: Rng + ?Sized>(p: &mut ParamStore, cfg: &DetectorConfig, rng: &mut R) {
    let d = cfg.foundation_dim;
    for l in 0..3 {
        insert_dense(p, &format!("sse.{}", level_name(l)), d, cfg.dims[l], (1.0 / d as f64).sqrt(), rng);
    }
}

pub fn init_inverse<R: Rng + ?Sized>(p: &mut ParamStore, cfg: &DetectorConfig, rng: &mut R) {
    for l in 0..3 {
        let c = cfg.dims[l];
        insert_mlp(p, &format!("inv.{}", level_name(l)), c, c, cfg.foundation_dim, rng);
    }
}

/// A detector configuration paired with its parameters.
#[derive(Debug, Clone)]
pub struct Detector {
    pub config: DetectorConfig,
    pub params: ParamStore,
}

impl Detector {
    /// Every parameter group freshly initialized from `seed`.
    pub fn new(config: DetectorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        init_student(&mut params, &config, &mut rng);
        init_foundation(&mut params, &config, &mut rng)?;
        init_sse(&mut params, &config, &mut rng);
        init_inverse(&mut params, &config, &mut rng);
        Ok(Self { config, params })
    }

    /// Student tower and head only.
    pub fn foundation_free(config: DetectorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        init_student(&mut params, &config, &mut rng);
        Ok(Self { config, params })
    }

    pub fn has_foundation(&self) -> bool {
        self.params.names().any(is_foundation_branch)
    }

    /// Removes every foundation-branch parameter.
    pub fn strip_foundation(&mut self) {
        let names: Vec<String> = self
            .params
            .names()
            .filter(|n| is_foundation_branch(n))
            .map(str::to_string)
            .collect();
        for n in names {
            self.params.remove(&n);
        }
    }

    pub fn forward(&self, g: &mut Graph, image: &Tensor, weights: &[f64; 3], opts: ForwardOptions) -> Result<ModelOutput> {
        forward(g, &self.config, &self.params, image, weights, opts)
    }

    /// Top-N predictions without keeping the tape.
    pub fn predict(&self, image: &Tensor, weights: &[f64; 3], use_foundation: bool) -> Result<Vec<Prediction>> {
        let mut g = Graph::new();
        let opts = ForwardOptions {
            use_foundation,
            mask: None,
        };
        let out = self.forward(&mut g, image, weights, opts)?;
        Ok(out.top_predictions(&g))
    }

    /// Top-N predictions reduced to their best class and deduplicated by
    /// class-wise NMS.
    pub fn detect(&self, image: &Tensor, weights: &[f64; 3], use_foundation: bool) -> Result<Vec<Detection>> {
        let dets: Vec<Detection> = self
            .predict(image, weights, use_foundation)?
            .iter()
            .map(Prediction::to_detection)
            .collect();
        Ok(nms(&dets, NMS_IOU))
    }
}
