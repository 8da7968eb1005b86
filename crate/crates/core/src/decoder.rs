//! Upsampling decoder: restores resolution by fusing middle-layer encoder
//! features into the aggregated cost volume, then projects per-class
//! logits. Two stages lift H/16 to H/4; the channel width narrows along
//! the way (C -> 8 -> 8 by default).

use crate::cost::{CostLevel, CostVolume};
use crate::error::{Error, Result};
use crate::flops::Stage;
use crate::rng::Rng;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, TensorId, UpsampleMode};

/// One x2 upsampling stage: project the guide features, concatenate them
/// onto every class channel stack, refine with two 3x3 convs.
#[derive(Debug, Clone)]
pub struct UpsampleStage {
    pub guide_w: ParamId,
    pub guide_b: ParamId,
    pub refine1_w: ParamId,
    pub refine1_b: ParamId,
    pub refine2_w: ParamId,
    pub refine2_b: ParamId,
    pub ch_in: usize,
    pub ch_guide: usize,
    pub ch_out: usize,
    pub up: UpsampleMode,
}

impl UpsampleStage {
    pub fn init(store: &mut ParamStore, ch_in: usize, ch_guide: usize, ch_out: usize, rng: &mut Rng) -> UpsampleStage {
        let g_scale = 1.0 / (ch_guide as f64 * 9.0).sqrt();
        let r1_scale = 1.0 / ((ch_in + ch_guide) as f64 * 9.0).sqrt();
        let r2_scale = 1.0 / (ch_out as f64 * 9.0).sqrt();
        UpsampleStage {
            guide_w: store.add(Tensor::randn(&[ch_guide, ch_guide, 3, 3], g_scale, rng)),
            guide_b: store.add(Tensor::zeros(&[ch_guide])),
            refine1_w: store.add(Tensor::randn(&[ch_out, ch_in + ch_guide, 3, 3], r1_scale, rng)),
            refine1_b: store.add(Tensor::zeros(&[ch_out])),
            refine2_w: store.add(Tensor::randn(&[ch_out, ch_out, 3, 3], r2_scale, rng)),
            refine2_b: store.add(Tensor::zeros(&[ch_out])),
            ch_in,
            ch_guide,
            ch_out,
            up: UpsampleMode::Nearest,
        }
    }

    /// [P,Ch,h,w] + guide [Cg,2h,2w] -> [P,Ch',2h,2w].
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, s: TensorId, guide: TensorId) -> Result<TensorId> {
        let ss = tape.shape(s).to_vec();
        let gs = tape.shape(guide).to_vec();
        if ss.len() != 4 || ss[1] != self.ch_in {
            return Err(Error::Dimension(format!(
                "upsample stage wants [P,Ch={},h,w], got {:?}",
                self.ch_in, ss
            )));
        }
        if gs.len() != 3 || gs[0] != self.ch_guide {
            return Err(Error::Dimension(format!(
                "upsample stage wants guide [Cg={},2h,2w], got {:?}",
                self.ch_guide, gs
            )));
        }
        let (p, h, w) = (ss[0], ss[2], ss[3]);
        if gs[1] != 2 * h || gs[2] != 2 * w {
            return Err(Error::Dimension(format!(
                "guide extents {:?} must be exactly double {h}x{w}",
                &gs[1..]
            )));
        }
        let up = tape.upsample2d(s, 2, self.up)?;
        let g4 = tape.reshape(guide, &[1, self.ch_guide, 2 * h, 2 * w])?;
        let gw = tape.param(store, self.guide_w);
        let gb = tape.param(store, self.guide_b);
        let g = tape.conv2d(g4, gw, Some(gb), 1, 1, 1)?;
        let g = tape.reshape(g, &[self.ch_guide, 2 * h, 2 * w])?;
        let g = tape.broadcast0(g, p)?;
        let cat = tape.concat(&[up, g], 1)?;
        let w1 = tape.param(store, self.refine1_w);
        let b1 = tape.param(store, self.refine1_b);
        let w2 = tape.param(store, self.refine2_w);
        let b2 = tape.param(store, self.refine2_b);
        let r1 = tape.conv2d(cat, w1, Some(b1), 1, 1, 1)?;
        let act = tape.gelu(r1)?;
        tape.conv2d(act, w2, Some(b2), 1, 1, 1)
    }
}

/// Per-class scalar logits with the class mapping carried along.
#[derive(Debug, Clone)]
pub struct LogitMap {
    pub logits: TensorId,
    pub class_ids: Vec<usize>,
}

impl LogitMap {
    /// Per-pixel argmax as local class indices.
    pub fn argmax_local(&self, tape: &Tape) -> Vec<usize> {
        let shape = tape.shape(self.logits);
        let (p, hw) = (shape[0], shape[1] * shape[2]);
        let data = tape.data(self.logits);
        let mut out = vec![0usize; hw];
        for px in 0..hw {
            let mut best = 0usize;
            for c in 1..p {
                if data[c * hw + px] > data[best * hw + px] {
                    best = c;
                }
            }
            out[px] = best;
        }
        out
    }

    /// Per-pixel argmax mapped to vocabulary indices.
    pub fn argmax_vocab(&self, tape: &Tape) -> Vec<usize> {
        self.argmax_local(tape).into_iter().map(|c| self.class_ids[c]).collect()
    }
}

/// Two-stage decoder plus the 1x1 logit head.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub stage1: UpsampleStage,
    pub stage2: UpsampleStage,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

impl Decoder {
    pub fn init(store: &mut ParamStore, c_latent: usize, c_guide: usize, rng: &mut Rng) -> Decoder {
        let ch_mid = 8;
        let stage1 = UpsampleStage::init(store, c_latent, c_guide, ch_mid, rng);
        let stage2 = UpsampleStage::init(store, ch_mid, c_guide, ch_mid, rng);
        let head_w = store.add(Tensor::randn(&[1, ch_mid, 1, 1], 0.25 / (ch_mid as f64).sqrt(), rng));
        let head_b = store.add(Tensor::zeros(&[1]));
        Decoder { stage1, stage2, head_w, head_b }
    }

    /// Aggregated latent volume at H/16 + guides (F2 at H/8, F1 at H/4)
    /// -> per-class logit map at H/4.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        volume: &CostVolume,
        f2v: TensorId,
        f1v: TensorId,
    ) -> Result<LogitMap> {
        if volume.level != CostLevel::Latent {
            return Err(Error::Contract("decoder wants a latent cost volume".into()));
        }
        let prev_stage = tape.stage();
        tape.set_stage(Stage::Decoder);
        let s = self.stage1.forward(tape, store, volume.data, f2v)?;
        let s = self.stage2.forward(tape, store, s, f1v)?;
        let logits = self.project_logits(tape, store, s)?;
        match prev_stage {
            Some(st) => tape.set_stage(st),
            None => tape.clear_stage(),
        }
        Ok(LogitMap { logits, class_ids: volume.class_ids.clone() })
    }

    /// 1x1 head collapsing the channel width to one scalar per class.
    pub fn project_logits(&self, tape: &mut Tape, store: &ParamStore, s: TensorId) -> Result<TensorId> {
        let ss = tape.shape(s).to_vec();
        if ss.len() != 4 {
            return Err(Error::Dimension(format!(
                "project_logits wants [P,Ch,H,W], got {:?}",
                ss
            )));
        }
        let hw = tape.param(store, self.head_w);
        let hb = tape.param(store, self.head_b);
        let y = tape.conv2d(s, hw, Some(hb), 1, 0, 1)?;
        tape.reshape(y, &[ss[0], ss[2], ss[3]])
    }
}
