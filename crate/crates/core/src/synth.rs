//! Procedural detection domains.
//!
//! A scene is laid out from its own seed (shapes, sizes, positions, colours);
//! a domain shift is then applied to the rendered pixels only, so a scene
//! keeps its labels under every shift.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::detection::{iou, BBox, Label};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Object shape drawn for a class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Rectangle,
    Disc,
    Triangle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Object side lengths in pixels.
    pub min_size: usize,
    pub max_size: usize,
    /// One entry per class.
    pub shapes: Vec<Shape>,
    /// Base hue in degrees per class; object hues jitter around it.
    pub hues: Vec<f64>,
    pub hue_jitter: f64,
    pub background: [f64; 3],
    /// Amplitude of the low-frequency background texture.
    pub texture: f64,
    pub pixel_noise: f64,
    /// Placement is rejected above this IoU with an earlier object.
    pub max_overlap: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            min_objects: 1,
            max_objects: 6,
            min_size: 10,
            max_size: 24,
            shapes: vec![Shape::Rectangle, Shape::Disc, Shape::Triangle],
            hues: vec![0.0, 120.0, 240.0],
            hue_jitter: 25.0,
            background: [0.45, 0.45, 0.45],
            texture: 0.08,
            pixel_noise: 0.02,
            max_overlap: 0.1,
        }
    }
}

impl SceneSpec {
    pub fn num_classes(&self) -> usize {
        self.shapes.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftKind {
    None,
    /// Blend toward a bright gray, then compress contrast.
    Fog,
    /// Hue rotation of objects and a new background tint.
    Scene,
    /// Pixel noise plus blurred edges.
    Sim2Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    pub shift: ShiftKind,
    /// In `[0, 1]`; 0 leaves the rendering untouched.
    pub strength: f64,
}

impl DomainSpec {
    pub fn new(name: &str, shift: ShiftKind, strength: f64) -> Self {
        Self {
            name: name.to_string(),
            shift,
            strength,
        }
    }

    pub fn clean() -> Self {
        Self::new("clean", ShiftKind::None, 0.0)
    }
}

const FOG_GRAY: f64 = 0.75;
const FOG_BLEND: f64 = 0.8;
const FOG_COMPRESS: f64 = 0.5;
const SCENE_HUE_SHIFT: f64 = 60.0;
const SCENE_BACKGROUND: [f64; 3] = [0.30, 0.42, 0.25];
const SIM_NOISE: f64 = 0.12;

/// A labelled image set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<Tensor>,
    pub labels: Vec<Vec<Label>>,
    pub seed: u64,
    pub scene: SceneSpec,
    pub domain: DomainSpec,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.scene.num_classes()
    }

    /// `(image, labels)` pairs.
    pub fn samples(&self) -> Vec<(Tensor, Vec<Label>)> {
        self.images.iter().cloned().zip(self.labels.iter().cloned()).collect()
    }

    /// The first `n` images.
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            images: self.images[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            ..self.clone()
        }
    }
}

/// Independent stream for `(seed, index, purpose)`.
fn stream(seed: u64, index: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_mul(4).wrapping_add(purpose));
    rng
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// One placed object: class, pixel bounds `[x0, y0, x1, y1)`, colour as
/// hue/saturation/value.
#[derive(Debug, Clone, Copy)]
struct Object {
    class: usize,
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    hsv: [f64; 3],
}

fn covers(shape: Shape, o: &Object, x: usize, y: usize) -> bool {
    let (w, h) = ((o.x1 - o.x0) as f64, (o.y1 - o.y0) as f64);
    let u = (x - o.x0) as f64 + 0.5;
    let v = (y - o.y0) as f64 + 0.5;
    match shape {
        Shape::Rectangle => true,
        Shape::Disc => {
            let (dx, dy) = (u / w - 0.5, v / h - 0.5);
            dx * dx + dy * dy <= 0.25
        }
        Shape::Triangle => {
            // apex at the top centre, base along the bottom edge
            let half = 0.5 * (v / h);
            (u / w - 0.5).abs() <= half
        }
    }
}

fn layout(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<Object> {
    let n = rng.random_range(spec.min_objects..=spec.max_objects);
    let mut objects: Vec<Object> = Vec::with_capacity(n);
    let mut boxes: Vec<BBox> = Vec::with_capacity(n);
    for _ in 0..n {
        for _attempt in 0..50 {
            let class = rng.random_range(0..spec.num_classes());
            let w = rng.random_range(spec.min_size..=spec.max_size).min(spec.width);
            let h = rng.random_range(spec.min_size..=spec.max_size).min(spec.height);
            let x0 = rng.random_range(0..=spec.width - w);
            let y0 = rng.random_range(0..=spec.height - h);
            let hue = spec.hues[class] + rng.random_range(-spec.hue_jitter..=spec.hue_jitter);
            let sat = rng.random_range(0.6..0.9);
            let val = rng.random_range(0.65..0.95);
            let o = Object {
                class,
                x0,
                y0,
                x1: x0 + w,
                y1: y0 + h,
                hsv: [hue, sat, val],
            };
            let b = pixel_box(spec, &o);
            if boxes.iter().all(|e| iou(e, &b) <= spec.max_overlap) {
                boxes.push(b);
                objects.push(o);
                break;
            }
        }
    }
    objects
}

fn pixel_box(spec: &SceneSpec, o: &Object) -> BBox {
    let (w, h) = (spec.width as f64, spec.height as f64);
    BBox::from_xyxy(o.x0 as f64 / w, o.y0 as f64 / h, o.x1 as f64 / w, o.y1 as f64 / h)
}

/// Tight box around the pixels an object's mask actually covers.
fn mask_box(spec: &SceneSpec, o: &Object) -> Option<BBox> {
    let shape = spec.shapes[o.class];
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in o.y0..o.y1 {
        for x in o.x0..o.x1 {
            if covers(shape, o, x, y) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    if x0 == usize::MAX {
        return None;
    }
    let (w, h) = (spec.width as f64, spec.height as f64);
    Some(BBox::from_xyxy(x0 as f64 / w, y0 as f64 / h, x1 as f64 / w, y1 as f64 / h))
}

/// Renders the scene, returning the image and the object index owning each
/// pixel (`usize::MAX` for background).
fn render(spec: &SceneSpec, objects: &[Object], rng: &mut ChaCha8Rng, hue_shift: f64, background: [f64; 3]) -> (Vec<f64>, Vec<usize>) {
    let (h, w) = (spec.height, spec.width);
    let mut owner = vec![usize::MAX; h * w];
    for (k, o) in objects.iter().enumerate() {
        let shape = spec.shapes[o.class];
        for y in o.y0..o.y1 {
            for x in o.x0..o.x1 {
                if covers(shape, o, x, y) {
                    owner[y * w + x] = k;
                }
            }
        }
    }
    // low-frequency texture: two random plane waves
    let waves: Vec<(f64, f64, f64)> = (0..2)
        .map(|_| {
            (
                rng.random_range(0.05..0.3),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let noise = Normal::new(0.0, spec.pixel_noise.max(0.0)).expect("finite std");
    let colours: Vec<[f64; 3]> = objects
        .iter()
        .map(|o| hsv_to_rgb(o.hsv[0] + hue_shift, o.hsv[1], o.hsv[2]))
        .collect();
    let mut img = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let tex: f64 = waves
                .iter()
                .map(|&(f, theta, phase)| {
                    let t = f * (x as f64 * theta.cos() + y as f64 * theta.sin()) + phase;
                    t.sin()
                })
                .sum::<f64>()
                * 0.5
                * spec.texture;
            let o = owner[y * w + x];
            for ch in 0..3 {
                let base = if o == usize::MAX {
                    background[ch] + tex
                } else {
                    colours[o][ch]
                };
                let v = base + noise.sample(rng);
                img[(ch * h + y) * w + x] = v.clamp(0.0, 1.0);
            }
        }
    }
    (img, owner)
}

fn fog(img: &mut [f64], strength: f64) {
    let a = FOG_BLEND * strength;
    img.iter_mut().for_each(|v| *v = (1.0 - a) * *v + a * FOG_GRAY);
    let mean = img.iter().sum::<f64>() / img.len() as f64;
    let k = 1.0 - FOG_COMPRESS * strength;
    img.iter_mut().for_each(|v| *v = mean + (*v - mean) * k);
}

fn sim2real(img: &mut [f64], h: usize, w: usize, strength: f64, rng: &mut ChaCha8Rng) {
    let src = img.to_vec();
    for ch in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                let mut n = 0.0;
                for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        acc += src[(ch * h + yy) * w + xx];
                        n += 1.0;
                    }
                }
                let i = (ch * h + y) * w + x;
                img[i] = (1.0 - strength) * src[i] + strength * acc / n;
            }
        }
    }
    let noise = Normal::new(0.0, SIM_NOISE * strength).expect("finite std");
    img.iter_mut().for_each(|v| *v = (*v + noise.sample(rng)).clamp(0.0, 1.0));
}

/// Renders image `index` of a dataset.
pub fn render_image(scene: &SceneSpec, domain: &DomainSpec, seed: u64, index: u64) -> Result<(Tensor, Vec<Label>)> {
    if !(0.0..=1.0).contains(&domain.strength) {
        return Err(Error::InvalidArgument(format!("shift strength {} outside [0, 1]", domain.strength)));
    }
    let objects = layout(scene, &mut stream(seed, index, 0));
    let s = domain.strength;
    let (hue_shift, background) = if domain.shift == ShiftKind::Scene && s > 0.0 {
        let mut bg = scene.background;
        bg.iter_mut().zip(SCENE_BACKGROUND).for_each(|(b, t)| *b = (1.0 - s) * *b + s * t);
        (SCENE_HUE_SHIFT * s, bg)
    } else {
        (0.0, scene.background)
    };
    let (mut img, _) = render(scene, &objects, &mut stream(seed, index, 1), hue_shift, background);
    if s > 0.0 {
        match domain.shift {
            ShiftKind::Fog => fog(&mut img, s),
            ShiftKind::Sim2Real => sim2real(&mut img, scene.height, scene.width, s, &mut stream(seed, index, 2)),
            ShiftKind::None | ShiftKind::Scene => {}
        }
    }
    let labels = objects
        .iter()
        .filter_map(|o| {
            mask_box(scene, o).map(|bbox| Label {
                class_id: o.class,
                bbox,
            })
        })
        .collect();
    let t = Tensor::new(vec![3, scene.height, scene.width], img)?;
    Ok((t, labels))
}

pub fn generate_dataset(scene: &SceneSpec, domain: &DomainSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
    }
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let (img, lab) = render_image(scene, domain, seed, i as u64)?;
        images.push(img);
        labels.push(lab);
    }
    Ok(Dataset {
        images,
        labels,
        seed,
        scene: scene.clone(),
        domain: domain.clone(),
    })
}

/// Images drawn from every shift kind at uniformly random strength, used to
/// train the foundation surrogate.
pub fn mixture_dataset(scene: &SceneSpec, n: usize, seed: u64) -> Result<Vec<(Tensor, Vec<Label>)>> {
    let kinds = [ShiftKind::None, ShiftKind::Fog, ShiftKind::Scene, ShiftKind::Sim2Real];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d69_7874);
    (0..n)
        .map(|i| {
            let kind = kinds[i % kinds.len()];
            let strength = if kind == ShiftKind::None { 0.0 } else { rng.random_range(0.0..=1.0) };
            render_image(scene, &DomainSpec::new("mixture", kind, strength), seed, i as u64)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainPair {
    pub task: String,
    pub source_train: Dataset,
    pub source_eval: Dataset,
    pub target_train: Dataset,
    pub target_eval: Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteSizes {
    pub train: usize,
    pub eval: usize,
}

impl Default for SuiteSizes {
    fn default() -> Self {
        Self { train: 800, eval: 200 }
    }
}

/// Source and target domains of the three adaptation tasks.
pub fn task_domains(task: &str) -> Result<(DomainSpec, DomainSpec)> {
    Ok(match task {
        "fog" => (DomainSpec::clean(), DomainSpec::new("fog", ShiftKind::Fog, 0.6)),
        "scene" => (
            DomainSpec::new("palette-a", ShiftKind::None, 0.0),
            DomainSpec::new("palette-b", ShiftKind::Scene, 1.0),
        ),
        "sim2real" => (
            DomainSpec::new("noisy-texture", ShiftKind::Sim2Real, 1.0),
            DomainSpec::new("clean-texture", ShiftKind::None, 0.0),
        ),
        other => return Err(Error::Config(format!("unknown task `{other}`"))),
    })
}

pub const TASKS: [&str; 3] = ["fog", "scene", "sim2real"];

/// One task's four splits, each from its own seed.
pub fn domain_pair(task: &str, scene: &SceneSpec, seed: u64, sizes: SuiteSizes) -> Result<DomainPair> {
    let (src, tgt) = task_domains(task)?;
    let base = seed.wrapping_mul(1_000_003);
    Ok(DomainPair {
        task: task.to_string(),
        source_train: generate_dataset(scene, &src, sizes.train, base.wrapping_add(1))?,
        source_eval: generate_dataset(scene, &src, sizes.eval, base.wrapping_add(2))?,
        target_train: generate_dataset(scene, &tgt, sizes.train, base.wrapping_add(3))?,
        target_eval: generate_dataset(scene, &tgt, sizes.eval, base.wrapping_add(4))?,
    })
}

pub fn benchmark_suite(seed: u64, sizes: SuiteSizes) -> Result<Vec<DomainPair>> {
    let scene = SceneSpec::default();
    TASKS.iter().map(|t| domain_pair(t, &scene, seed, sizes)).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    count: usize,
    seed: u64,
    scene: SceneSpec,
    domain: DomainSpec,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRecord {
    class: usize,
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

/// Binary tensor: `u32` rank, `u64` dims, then little-endian `f64` values.
pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut buf = Vec::with_capacity(4 + 8 * t.shape().len() + 8 * t.numel());
    buf.extend((t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        buf.extend((d as u64).to_le_bytes());
    }
    for &v in t.data() {
        buf.extend(v.to_le_bytes());
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .map_err(|_| Error::MissingInput(path.to_path_buf()))?
        .read_to_end(&mut buf)?;
    let take = |at: usize, n: usize| -> Result<&[u8]> {
        buf.get(at..at + n).ok_or(Error::Truncated {
            offset: at,
            needed: n,
            available: buf.len().saturating_sub(at),
        })
    };
    let rank = u32::from_le_bytes(take(0, 4)?.try_into().expect("4 bytes")) as usize;
    let mut at = 4;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(u64::from_le_bytes(take(at, 8)?.try_into().expect("8 bytes")) as usize);
        at += 8;
    }
    let n: usize = shape.iter().product();
    let bytes = take(at, 8 * n)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Tensor::new(shape, data)
}

/// Writes `dataset.json` plus `NNNNN.bin` / `NNNNN.json` per image.
pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        count: ds.len(),
        seed: ds.seed,
        scene: ds.scene.clone(),
        domain: ds.domain.clone(),
    };
    fs::write(dir.join("dataset.json"), serde_json::to_string_pretty(&manifest)?)?;
    for (i, (img, labels)) in ds.images.iter().zip(&ds.labels).enumerate() {
        write_tensor(&dir.join(format!("{i:05}.bin")), img)?;
        let recs: Vec<LabelRecord> = labels
            .iter()
            .map(|l| LabelRecord {
                class: l.class_id,
                cx: l.bbox.cx,
                cy: l.bbox.cy,
                w: l.bbox.w,
                h: l.bbox.h,
            })
            .collect();
        fs::write(dir.join(format!("{i:05}.json")), serde_json::to_string(&recs)?)?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join("dataset.json");
    let text = fs::read_to_string(&mpath).map_err(|_| Error::MissingInput(mpath.clone()))?;
    let m: Manifest = serde_json::from_str(&text)?;
    let mut images = Vec::with_capacity(m.count);
    let mut labels = Vec::with_capacity(m.count);
    for i in 0..m.count {
        images.push(read_tensor(&dir.join(format!("{i:05}.bin")))?);
        let lpath = dir.join(format!("{i:05}.json"));
        let text = fs::read_to_string(&lpath).map_err(|_| Error::MissingInput(lpath.clone()))?;
        let recs: Vec<LabelRecord> = serde_json::from_str(&text)?;
        labels.push(
            recs.into_iter()
                .map(|r| Label {
                    class_id: r.class,
                    bbox: BBox::new(r.cx, r.cy, r.w, r.h),
                })
                .collect(),
        );
    }
    Ok(Dataset {
        images,
        labels,
        seed: m.seed,
        scene: m.scene,
        domain: m.domain,
    })
}

/// Standard deviation of all pixel values.
pub fn pixel_std(img: &Tensor) -> f64 {
    let d = img.data();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(domain: DomainSpec, seed: u64) -> Dataset {
        generate_dataset(&SceneSpec::default(), &domain, 12, seed).unwrap()
    }

    #[test]
    fn deterministic() {
        let fog = DomainSpec::new("fog", ShiftKind::Fog, 0.6);
        assert_eq!(small(fog.clone(), 3), small(fog, 3));
        let s = DomainSpec::new("s", ShiftKind::Sim2Real, 1.0);
        assert_eq!(small(s.clone(), 4), small(s, 4));
    }

    #[test]
    fn zero_strength_is_clean() {
        let clean = small(DomainSpec::clean(), 5);
        for kind in [ShiftKind::Fog, ShiftKind::Scene, ShiftKind::Sim2Real] {
            assert_eq!(small(DomainSpec::new("z", kind, 0.0), 5).images, clean.images);
        }
    }

    #[test]
    fn shifts_keep_geometry_and_fog_lowers_contrast() {
        let clean = small(DomainSpec::clean(), 6);
        for kind in [ShiftKind::Fog, ShiftKind::Scene, ShiftKind::Sim2Real] {
            let shifted = small(DomainSpec::new("x", kind, 0.7), 6);
            assert_eq!(shifted.labels, clean.labels);
        }
        let fog = small(DomainSpec::new("fog", ShiftKind::Fog, 0.3), 6);
        for (a, b) in clean.images.iter().zip(&fog.images) {
            assert!(pixel_std(b) < pixel_std(a));
        }
    }

    #[test]
    fn labels_are_valid_and_cover_object_pixels() {
        let scene = SceneSpec::default();
        for i in 0..40 {
            let mut rng = stream(11, i, 0);
            let objects = layout(&scene, &mut rng);
            assert!(objects.len() <= scene.max_objects);
            let (_, owner) = render(&scene, &objects, &mut stream(11, i, 1), 0.0, scene.background);
            for (k, o) in objects.iter().enumerate() {
                let b = mask_box(&scene, o).unwrap();
                assert!(b.w > 0.0 && b.h > 0.0 && b.w <= 0.5 && b.h <= 0.5);
                let [x0, y0, x1, y1] = b.to_xyxy();
                let (x0, y0) = ((x0 * 64.0).round() as usize, (y0 * 64.0).round() as usize);
                let (x1, y1) = ((x1 * 64.0).round() as usize, (y1 * 64.0).round() as usize);
                let visible = (y0..y1).any(|y| (x0..x1).any(|x| owner[y * 64 + x] == k));
                assert!(visible, "object {k} of image {i} fully hidden");
            }
            for a in 0..objects.len() {
                for b in a + 1..objects.len() {
                    assert!(iou(&pixel_box(&scene, &objects[a]), &pixel_box(&scene, &objects[b])) <= 0.7);
                }
            }
        }
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small(DomainSpec::new("fog", ShiftKind::Fog, 0.6), 7);
        save_dataset(dir.path(), &ds).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
        assert!(matches!(load_dataset(&dir.path().join("nope")), Err(Error::MissingInput(_))));
    }

    #[test]
    fn suite_shares_label_space() {
        let sizes = SuiteSizes { train: 2, eval: 2 };
        let suite = benchmark_suite(1, sizes).unwrap();
        assert_eq!(suite.len(), 3);
        for p in &suite {
            assert_eq!(p.source_train.num_classes(), 3);
            assert_eq!(p.target_eval.num_classes(), 3);
        }
    }
}
