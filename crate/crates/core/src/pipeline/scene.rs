//! Synthetic vocabulary and scene generation.
//!
//! Classes get quasi-uniform unit colors on the positive octant; the
//! synthetic vocabulary embeds each color with the fixed orthonormal
//! projection rows, so cosine similarity in embedding space equals cosine
//! similarity between colors. Scenes place slot-aligned rectangles and
//! disks (one per 32x32 image cell, matching the deepest cost-map grid),
//! tinted with their class color plus a little noise.

use std::collections::BTreeSet;

use crate::cost::{color_projection, Vocabulary};
use crate::error::Result;
use crate::pipeline::config::PipelineConfig;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Quasi-uniform unit vectors on the positive octant.
pub fn octant_colors(k: usize) -> Vec<[f64; 3]> {
    let golden = (1.0 + 5.0f64.sqrt()) / 2.0;
    (0..k)
        .map(|i| {
            let z = (i as f64 + 0.5) / k as f64;
            let theta = std::f64::consts::FRAC_PI_2 * ((i as f64 * golden) % 1.0);
            let r = (1.0 - z * z).sqrt();
            [r * theta.cos(), r * theta.sin(), z]
        })
        .collect()
}

/// Deterministic stand-in for the text encoder: class `t` embeds its
/// octant color through the fixed projection rows. Depends only on (k,d).
pub fn synthetic_vocabulary(k: usize, d: usize) -> Result<Vocabulary> {
    let proj = color_projection(d);
    let colors = octant_colors(k);
    let mut emb = vec![0.0f64; k * d];
    for (t, color) in colors.iter().enumerate() {
        for dd in 0..d {
            emb[t * d + dd] = (0..3).map(|j| proj[j][dd] * color[j]).sum();
        }
    }
    let mut names: Vec<String> = (0..k).map(|t| format!("class_{t:03}")).collect();
    names[0] = "background".into();
    Vocabulary::new(names, Tensor::new(vec![k, d], emb)?)
}

/// RGB tint for a vocabulary row: project the embedding back onto the
/// color rows and clamp into a paintable range. Exact inverse for the
/// synthetic vocabulary.
pub fn class_color(vocab: &Vocabulary, t: usize) -> [f64; 3] {
    let d = vocab.dim();
    let proj = color_projection(d);
    let row = &vocab.embeddings.data()[t * d..(t + 1) * d];
    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut c = [0.0f64; 3];
    for (j, p) in proj.iter().enumerate() {
        let dot: f64 = p.iter().zip(row).map(|(a, b)| a * b).sum();
        c[j] = (dot / norm).abs().clamp(0.02, 1.0);
    }
    c
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect { y0: usize, x0: usize, sy: usize, sx: usize },
    Disk { cy: f64, cx: f64, r: f64 },
}

impl Shape {
    fn contains(&self, y: usize, x: usize) -> bool {
        match *self {
            Shape::Rect { y0, x0, sy, sx } => y >= y0 && y < y0 + sy && x >= x0 && x < x0 + sx,
            Shape::Disk { cy, cx, r } => {
                let dy = y as f64 + 0.5 - cy;
                let dx = x as f64 + 0.5 - cx;
                dy * dy + dx * dx <= r * r
            }
        }
    }
}

/// One synthetic image with quarter-resolution labels.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    /// [3,H,W] in [0,1].
    pub image: Tensor,
    /// Vocabulary indices, H/4 x W/4 row-major.
    pub labels: Vec<usize>,
    pub present_classes: BTreeSet<usize>,
}

const IMAGE_NOISE: f64 = 0.02;

fn generate_scene(cfg: &PipelineConfig, vocab: &Vocabulary, rng: &mut Rng) -> SyntheticScene {
    let (h, w) = (cfg.h, cfg.w);
    let slots_y = h / 32;
    let slots_x = w / 32;
    let slots = slots_y * slots_x;
    let max_shapes = (cfg.max_present - 1).min(slots);
    let n_shapes = 1 + rng.below(max_shapes);
    let chosen_slots = rng.distinct(slots, n_shapes);

    let mut shapes: Vec<(Shape, usize)> = Vec::with_capacity(n_shapes);
    for &slot in &chosen_slots {
        let class = 1 + rng.below(vocab.len() - 1);
        let oy = (slot / slots_x) * 32;
        let ox = (slot % slots_x) * 32;
        let shape = if rng.below(2) == 0 {
            let sy = 26 + rng.below(5);
            let sx = 26 + rng.below(5);
            let jy = 1 + rng.below(32 - sy - 1);
            let jx = 1 + rng.below(32 - sx - 1);
            Shape::Rect { y0: oy + jy, x0: ox + jx, sy, sx }
        } else {
            let r = 14.0 + rng.uniform();
            let cy = oy as f64 + 16.0 + rng.range(-1.0, 1.0);
            let cx = ox as f64 + 16.0 + rng.range(-1.0, 1.0);
            Shape::Disk { cy, cx, r }
        };
        shapes.push((shape, class));
    }

    let class_at = |y: usize, x: usize| -> usize {
        // later shapes draw on top; slots are distinct so order rarely matters
        for (shape, class) in shapes.iter().rev() {
            if shape.contains(y, x) {
                return *class;
            }
        }
        0
    };

    let bg = class_color(vocab, 0);
    let mut colors = vec![bg; vocab.len()];
    for &(_, class) in &shapes {
        colors[class] = class_color(vocab, class);
    }

    let mut image = vec![0.0f64; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let c = colors[class_at(y, x)];
            for ch in 0..3 {
                let v = c[ch] + rng.range(-IMAGE_NOISE, IMAGE_NOISE);
                image[(ch * h + y) * w + x] = v.clamp(0.0, 1.0);
            }
        }
    }

    let (lh, lw) = (h / 4, w / 4);
    let mut labels = vec![0usize; lh * lw];
    let mut present = BTreeSet::new();
    for ly in 0..lh {
        for lx in 0..lw {
            let c = class_at(4 * ly + 2, 4 * lx + 2);
            labels[ly * lw + lx] = c;
            present.insert(c);
        }
    }

    SyntheticScene {
        image: Tensor::new(vec![3, h, w], image).expect("image buffer sized"),
        labels,
        present_classes: present,
    }
}

const SCENE_STREAM: u64 = 0x5ce4e;

/// Deterministic scene list; scene `i` depends only on (config, seed, i).
pub fn synth_dataset(count: usize, cfg: &PipelineConfig, vocab: &Vocabulary, seed: u64) -> Vec<SyntheticScene> {
    (0..count)
        .map(|i| {
            let mut rng = Rng::new(seed).derive(SCENE_STREAM.wrapping_add(i as u64));
            generate_scene(cfg, vocab, &mut rng)
        })
        .collect()
}

/// The generator's own sampling law for the expected number of present
/// classes (background plus distinct shape classes), ignoring the
/// measure-zero chance of a shape losing every label pixel.
pub fn expected_present_mean(cfg: &PipelineConfig) -> f64 {
    let slots = (cfg.h / 32) * (cfg.w / 32);
    let max_shapes = (cfg.max_present - 1).min(slots);
    let m = (cfg.k - 1) as f64;
    let mut acc = 0.0;
    for n in 1..=max_shapes {
        acc += m * (1.0 - (1.0 - 1.0 / m).powi(n as i32));
    }
    1.0 + acc / max_shapes as f64
}
