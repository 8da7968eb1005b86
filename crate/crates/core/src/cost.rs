//! Hierarchical pixel-text cost maps and training-free class reduction.
//!
//! Two image-text embedding maps are produced from the third encoder
//! stage (full resolution and a stride-2 downsample sharing the same
//! initial convolution weights), cosine similarity against the class
//! vocabulary turns each into a raw cost volume, a rank-vote scoring pass
//! picks the classes worth keeping, and the two pruned volumes are
//! embedded and merged into one latent volume.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io;
use crate::rng::Rng;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, TensorId, UpsampleMode};

/// Runtime-supplied class vocabulary: names plus [K,D] text embeddings.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    pub names: Vec<String>,
    pub embeddings: Tensor,
}

impl Vocabulary {
    pub fn new(names: Vec<String>, embeddings: Tensor) -> Result<Vocabulary> {
        if embeddings.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "vocabulary embeddings must be [K,D], got {:?}",
                embeddings.shape()
            )));
        }
        let (k, d) = (embeddings.shape()[0], embeddings.shape()[1]);
        if names.len() != k {
            return Err(Error::Dimension(format!(
                "vocabulary has {} names but {} embedding rows",
                names.len(),
                k
            )));
        }
        for t in 0..k {
            let row = &embeddings.data()[t * d..(t + 1) * d];
            if row.iter().all(|&v| v == 0.0) {
                return Err(Error::Domain(format!(
                    "vocabulary embedding row {t} is the zero vector"
                )));
            }
        }
        Ok(Vocabulary { names, embeddings })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.shape()[1]
    }

    pub fn load(names_path: &Path, embeddings_path: &Path) -> Result<Vocabulary> {
        let names = io::read_names(names_path)?;
        let embeddings = io::read_tensor(embeddings_path)?;
        Vocabulary::new(names, embeddings)
    }

    pub fn save(&self, names_path: &Path, embeddings_path: &Path) -> Result<()> {
        io::write_names(names_path, &self.names)?;
        io::write_tensor(embeddings_path, &self.embeddings)
    }

    /// Embeddings as a constant tape node (the text encoder is not trained).
    pub fn bind(&self, tape: &mut Tape) -> TensorId {
        tape.constant(self.embeddings.clone())
    }
}

/// Three fixed orthonormal rows of width `d`, shared by the synthetic
/// vocabulary, the scene painter, and the embedding-head initialization.
/// Depends only on `d`, never on the run seed.
pub fn color_projection(d: usize) -> [Vec<f64>; 3] {
    assert!(d >= 3, "embedding width must be at least 3");
    let mut rng = Rng::new(0x000C_010A);
    let mut rows: [Vec<f64>; 3] = [vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    for row in rows.iter_mut() {
        rng.fill_normal(row, 1.0);
    }
    // Gram-Schmidt
    for i in 0..3 {
        for j in 0..i {
            let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            let prev = rows[j].clone();
            for (v, p) in rows[i].iter_mut().zip(&prev) {
                *v -= dot * p;
            }
        }
        let norm: f64 = rows[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in rows[i].iter_mut() {
            *v /= norm;
        }
    }
    rows
}

/// Encoder outputs threaded through the pipeline: middle-layer visual
/// features plus the two image-text aligned embedding maps.
#[derive(Debug, Clone, Copy)]
pub struct EncoderFeatures {
    pub f1v: TensorId,
    pub f2v: TensorId,
    pub f3v: TensorId,
    pub f3s: TensorId,
    pub f4s: TensorId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostLevel {
    Raw,
    Latent,
}

/// Class-indexed stack of cost/feature maps with the local-to-vocabulary
/// index mapping.
#[derive(Debug, Clone)]
pub struct CostVolume {
    pub data: TensorId,
    pub class_ids: Vec<usize>,
    pub level: CostLevel,
}

fn check_class_ids(class_ids: &[usize]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for &c in class_ids {
        if !seen.insert(c) {
            return Err(Error::Contract(format!("duplicate class id {c} in cost volume")));
        }
    }
    Ok(())
}

impl CostVolume {
    pub fn raw(tape: &Tape, data: TensorId, class_ids: Vec<usize>) -> Result<CostVolume> {
        let shape = tape.shape(data);
        if shape.len() != 3 || shape[0] != class_ids.len() {
            return Err(Error::Dimension(format!(
                "raw cost volume wants [K,Hc,Wc] with K={}, got {:?}",
                class_ids.len(),
                shape
            )));
        }
        check_class_ids(&class_ids)?;
        if tape.data(data).iter().any(|&v| !(-1.0..=1.0).contains(&v)) {
            return Err(Error::Domain("raw similarity entries must lie in [-1,1]".into()));
        }
        Ok(CostVolume { data, class_ids, level: CostLevel::Raw })
    }

    pub fn latent(tape: &Tape, data: TensorId, class_ids: Vec<usize>) -> Result<CostVolume> {
        let shape = tape.shape(data);
        if shape.len() != 4 || shape[0] != class_ids.len() {
            return Err(Error::Dimension(format!(
                "latent cost volume wants [P,C,Hs,Ws] with P={}, got {:?}",
                class_ids.len(),
                shape
            )));
        }
        check_class_ids(&class_ids)?;
        Ok(CostVolume { data, class_ids, level: CostLevel::Latent })
    }

    /// Keep only the selected local channels, in selection order.
    pub fn select(&self, tape: &mut Tape, selection: &SelectionResult) -> Result<CostVolume> {
        let data = tape.index_select0(self.data, &selection.selected)?;
        let class_ids = selection.selected.iter().map(|&i| self.class_ids[i]).collect();
        Ok(CostVolume { data, class_ids, level: self.level })
    }
}

/// Cosine similarity of every pixel embedding against every class
/// embedding; identity local-to-vocabulary mapping.
pub fn cosine_cost_map(tape: &mut Tape, features: TensorId, embeddings: TensorId) -> Result<CostVolume> {
    let k = {
        let es = tape.shape(embeddings);
        if es.len() != 2 {
            return Err(Error::Dimension(format!(
                "cosine_cost_map embeddings must be [K,D], got {:?}",
                es
            )));
        }
        es[0]
    };
    let data = tape.cosine_map(features, embeddings)?;
    CostVolume::raw(tape, data, (0..k).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionParams {
    pub k: usize,
    pub lambda: f64,
    pub p: usize,
}

/// Per-class scores and the retained class indices, sorted by descending
/// score (ties broken by the lower index).
#[derive(Debug, Clone)]
pub struct SelectionResult {
    pub scores: Vec<f64>,
    pub selected: Vec<usize>,
    pub params: SelectionParams,
    /// True when the requested P exceeded the class count and was clamped.
    pub clamped: bool,
}

fn check_score_params(num_classes: usize, k: usize, lambda: f64) -> Result<()> {
    if k == 0 || k > num_classes {
        return Err(Error::Parameter(format!(
            "top-k depth {k} outside 1..={num_classes}"
        )));
    }
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Parameter(format!(
            "score coefficient lambda {lambda} outside (0,1)"
        )));
    }
    Ok(())
}

/// Rank-vote class scores: each pixel contributes `lambda^(rank-1)` to the
/// classes holding its top-k cost values. Ranking ties go to the lower
/// class index. Only comparisons enter, so any strictly increasing
/// per-pixel transform of the cost map leaves the result unchanged.
pub fn score_classes(raw: &Tensor, k: usize, lambda: f64) -> Result<Vec<f64>> {
    let shape = raw.shape();
    if shape.len() != 3 {
        return Err(Error::Dimension(format!(
            "score_classes wants a raw [K,Hc,Wc] volume, got {:?}",
            shape
        )));
    }
    let num_classes = shape[0];
    let hw = shape[1] * shape[2];
    check_score_params(num_classes, k, lambda)?;
    let data = raw.data();
    let powers: Vec<f64> = (0..k).map(|c| lambda.powi(c as i32)).collect();
    let mut scores = vec![0.0f64; num_classes];
    let mut chosen = vec![0usize; k];
    for p in 0..hw {
        for rank in 0..k {
            let mut best: Option<usize> = None;
            for t in 0..num_classes {
                if chosen[..rank].contains(&t) {
                    continue;
                }
                match best {
                    None => best = Some(t),
                    // strict comparison: equal values keep the earlier index
                    Some(b) => {
                        if data[t * hw + p] > data[b * hw + p] {
                            best = Some(t);
                        }
                    }
                }
            }
            let t = best.expect("k <= num_classes");
            chosen[rank] = t;
            scores[t] += powers[rank];
        }
    }
    Ok(scores)
}

/// Retain the top-P classes by score, descending, ties to the lower index.
/// P larger than the class count is clamped (small-vocabulary inference).
pub fn select_classes(scores: &[f64], k: usize, lambda: f64, p: usize) -> Result<SelectionResult> {
    if p == 0 {
        return Err(Error::Parameter("retained count P must be at least 1".into()));
    }
    let clamped = p > scores.len();
    let p_eff = p.min(scores.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(p_eff);
    Ok(SelectionResult {
        scores: scores.to_vec(),
        selected: order,
        params: SelectionParams { k, lambda, p: p_eff },
        clamped,
    })
}

/// Score on the deepest raw cost volume, then select.
pub fn score_and_select(raw: &Tensor, k: usize, lambda: f64, p: usize) -> Result<SelectionResult> {
    let scores = score_classes(raw, k, lambda)?;
    select_classes(&scores, k, lambda, p)
}

/// Stage-4 stand-in plus projection head that lifts third-stage visual
/// features into the image-text embedding space, at two resolutions.
/// `conv_s1` and `conv_s2` start from identical weights; with `tied` they
/// stay one tensor forever, otherwise training may let them diverge.
#[derive(Debug, Clone)]
pub struct HierarchyEmbed {
    pub conv_s1_w: ParamId,
    pub conv_s1_b: ParamId,
    pub conv_s2_w: ParamId,
    pub conv_s2_b: ParamId,
    pub g_w: ParamId,
    pub g_b: ParamId,
    pub head_w: ParamId,
    pub head_b: ParamId,
    pub tied: bool,
}

/// Positive pre-activation shift that keeps the color path in GELU's
/// near-identity region.
const GELU_SHIFT: f64 = 3.0;

/// Gain on each color-path layer. Cosine maps are scale-invariant, so the
/// gain leaves every cost value unchanged while making the per-step
/// angular drift of the embedding directions under training roughly
/// gain^2 smaller per layer, which keeps the training-free class votes
/// stable through the toy loop.
const COLOR_GAIN: f64 = 20.0;

impl HierarchyEmbed {
    /// Color-faithful initialization: the first three channels ride a
    /// center-tap identity path through `conv_s*`, `g` shifts them into
    /// GELU's linear region, and the head projects them with the fixed
    /// color rows (undoing the shift). Remaining channels start as small
    /// noise feeding zero head columns, free for training to use.
    pub fn init(store: &mut ParamStore, c3: usize, d: usize, tied: bool, rng: &mut Rng) -> HierarchyEmbed {
        assert!(c3 >= 3 && d >= 3, "color path needs at least 3 channels");
        let proj = color_projection(d);
        let g_width = d;

        let mut conv_s = Tensor::zeros(&[c3, c3, 3, 3]);
        for c in 0..c3 {
            conv_s.data_mut()[((c * c3 + c) * 3 + 1) * 3 + 1] = COLOR_GAIN;
        }
        let conv_s1_w = store.add(conv_s.clone());
        let conv_s1_b = store.add(Tensor::zeros(&[c3]));
        let (conv_s2_w, conv_s2_b) = if tied {
            (conv_s1_w, conv_s1_b)
        } else {
            (store.add(conv_s), store.add(Tensor::zeros(&[c3])))
        };

        let mut g_w = Tensor::zeros(&[g_width, c3, 3, 3]);
        let mut g_b = Tensor::zeros(&[g_width]);
        for j in 0..g_width {
            if j < 3 {
                g_w.data_mut()[((j * c3 + j) * 3 + 1) * 3 + 1] = COLOR_GAIN;
                g_b.data_mut()[j] = GELU_SHIFT;
            } else {
                for c in 0..c3 {
                    for t in 0..9 {
                        g_w.data_mut()[(j * c3 + c) * 9 + t] = rng.normal() * 0.05;
                    }
                }
            }
        }

        let mut head_w = Tensor::zeros(&[d, g_width, 1, 1]);
        let mut head_b = Tensor::zeros(&[d]);
        for dd in 0..d {
            for j in 0..3 {
                head_w.data_mut()[dd * g_width + j] = proj[j][dd] * COLOR_GAIN;
                head_b.data_mut()[dd] -= proj[j][dd] * COLOR_GAIN * GELU_SHIFT;
            }
        }

        HierarchyEmbed {
            conv_s1_w,
            conv_s1_b,
            conv_s2_w,
            conv_s2_b,
            g_w: store.add(g_w),
            g_b: store.add(g_b),
            head_w: store.add(head_w),
            head_b: store.add(head_b),
            tied,
        }
    }

    /// f3v [C3,h,w] -> (f3s [D,h,w], f4s [D,h/2,w/2]).
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        f3v: TensorId,
    ) -> Result<(TensorId, TensorId)> {
        let fs = tape.shape(f3v).to_vec();
        if fs.len() != 3 {
            return Err(Error::Dimension(format!(
                "hierarchical embeddings want f3v [C3,h,w], got {:?}",
                fs
            )));
        }
        let (c3, h, w) = (fs[0], fs[1], fs[2]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Parameter(format!(
                "stride-2 path needs even extents, got {h}x{w}"
            )));
        }
        let x = tape.reshape(f3v, &[1, c3, h, w])?;
        let w_s1 = tape.param(store, self.conv_s1_w);
        let b_s1 = tape.param(store, self.conv_s1_b);
        let w_s2 = tape.param(store, self.conv_s2_w);
        let b_s2 = tape.param(store, self.conv_s2_b);
        let y1 = tape.conv2d(x, w_s1, Some(b_s1), 1, 1, 1)?;
        let y2 = tape.conv2d(x, w_s2, Some(b_s2), 2, 1, 1)?;
        let f3s = self.head_path(tape, store, y1)?;
        let f4s = self.head_path(tape, store, y2)?;
        let d = tape.shape(f3s)[1];
        let f3s = tape.reshape(f3s, &[d, h, w])?;
        let f4s = tape.reshape(f4s, &[d, h / 2, w / 2])?;
        Ok((f3s, f4s))
    }

    fn head_path(&self, tape: &mut Tape, store: &ParamStore, y: TensorId) -> Result<TensorId> {
        let g_w = tape.param(store, self.g_w);
        let g_b = tape.param(store, self.g_b);
        let head_w = tape.param(store, self.head_w);
        let head_b = tape.param(store, self.head_b);
        let g = tape.conv2d(y, g_w, Some(g_b), 1, 1, 1)?;
        let act = tape.gelu(g)?;
        tape.conv2d(act, head_w, Some(head_b), 1, 0, 1)
    }
}

/// Per-class 1->C embedding convs plus merge convs fusing the two
/// hierarchy levels into one latent volume.
#[derive(Debug, Clone)]
pub struct CostEmbed {
    pub embed3_w: ParamId,
    pub embed3_b: ParamId,
    pub merge3_w: ParamId,
    pub merge3_b: ParamId,
    pub embed4_w: ParamId,
    pub embed4_b: ParamId,
    pub merge4_w: ParamId,
    pub merge4_b: ParamId,
    pub up: UpsampleMode,
}

impl CostEmbed {
    /// Initial influence of the coarse (deepest) branch relative to the
    /// fine branch. The class votes are scored on the deepest cost map,
    /// so its embeddings must not be the main target of early gradient
    /// pressure; the fine branch has the spatial detail anyway.
    const COARSE_BRANCH_SCALE: f64 = 1.0;

    pub fn init(store: &mut ParamStore, c: usize, rng: &mut Rng) -> CostEmbed {
        // positive center tap: the latent code starts out aligned with
        // "present class = high cosine", so early descent reinforces the
        // vote structure instead of re-coding it
        let embed = |rng: &mut Rng, gain: f64| {
            let mut w = Tensor::zeros(&[c, 1, 3, 3]);
            for ch in 0..c {
                for t in 0..9 {
                    w.data_mut()[ch * 9 + t] = rng.normal() * 0.1 * gain;
                }
                w.data_mut()[ch * 9 + 4] += 0.5 * gain;
            }
            w
        };
        let merge_scale = 0.5 / (c as f64 * 9.0).sqrt();
        CostEmbed {
            embed3_w: store.add(embed(rng, 1.0)),
            embed3_b: store.add(Tensor::zeros(&[c])),
            merge3_w: store.add(Tensor::randn(&[c, c, 3, 3], merge_scale, rng)),
            merge3_b: store.add(Tensor::zeros(&[c])),
            embed4_w: store.add(embed(rng, Self::COARSE_BRANCH_SCALE)),
            embed4_b: store.add(Tensor::zeros(&[c])),
            merge4_w: store.add(Tensor::randn(
                &[c, c, 3, 3],
                merge_scale * Self::COARSE_BRANCH_SCALE,
                rng,
            )),
            merge4_b: store.add(Tensor::zeros(&[c])),
            up: UpsampleMode::Nearest,
        }
    }

    /// S <- merge(embed(s3)) + up(merge(embed(s4))); class ids preserved.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        s3: &CostVolume,
        s4: &CostVolume,
    ) -> Result<CostVolume> {
        if s3.class_ids != s4.class_ids {
            return Err(Error::Contract(
                "embed_merge: the two hierarchy levels carry different class ids".into(),
            ));
        }
        let s3_shape = tape.shape(s3.data).to_vec();
        let s4_shape = tape.shape(s4.data).to_vec();
        if s3_shape.len() != 3 || s4_shape.len() != 3 {
            return Err(Error::Dimension("embed_merge wants raw [P,H,W] volumes".into()));
        }
        if s3_shape[1] != 2 * s4_shape[1] || s3_shape[2] != 2 * s4_shape[2] {
            return Err(Error::Dimension(format!(
                "embed_merge: s4 extents {:?} must be half of s3 {:?}",
                &s4_shape[1..],
                &s3_shape[1..]
            )));
        }
        let m3 = self.branch(tape, store, s3.data, &s3_shape, self.embed3_w, self.embed3_b, self.merge3_w, self.merge3_b)?;
        let m4 = self.branch(tape, store, s4.data, &s4_shape, self.embed4_w, self.embed4_b, self.merge4_w, self.merge4_b)?;
        let u4 = tape.upsample2d(m4, 2, self.up)?;
        let merged = tape.add(m3, u4)?;
        CostVolume::latent(tape, merged, s3.class_ids.clone())
    }

    #[allow(clippy::too_many_arguments)]
    fn branch(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        raw: TensorId,
        shape: &[usize],
        embed_w: ParamId,
        embed_b: ParamId,
        merge_w: ParamId,
        merge_b: ParamId,
    ) -> Result<TensorId> {
        let (p, h, w) = (shape[0], shape[1], shape[2]);
        let x = tape.reshape(raw, &[p, 1, h, w])?;
        let ew = tape.param(store, embed_w);
        let eb = tape.param(store, embed_b);
        let mw = tape.param(store, merge_w);
        let mb = tape.param(store, merge_b);
        let embedded = tape.conv2d(x, ew, Some(eb), 1, 1, 1)?;
        tape.conv2d(embedded, mw, Some(mb), 1, 1, 1)
    }
}
