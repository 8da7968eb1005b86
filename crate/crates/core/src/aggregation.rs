//! Cost aggregation with sequence reduction.
//!
//! The latent volume [P,C,Hs,Ws] is refined by alternating blocks:
//!
//! * spatial block — per class, the full pixel sequence attends to a
//!   strided-conv-compressed key/value sequence (reduction factor r1),
//!   then a depthwise conv and a star MLP, all residual;
//! * class block — per pooled location (average pooling with factor r2),
//!   the P classes attend to each other, a star MLP follows, and the
//!   pooled increment is upsampled back and added to the input.
//!
//! Both blocks are class-agnostic: no parameter is indexed by class, so
//! permuting the class channels permutes the outputs identically.

use crate::cost::{CostLevel, CostVolume};
use crate::error::{Error, Result};
use crate::flops::Stage;
use crate::rng::Rng;
use crate::tensor::{attention_with_probs, ParamId, ParamStore, Tape, Tensor, TensorId, UpsampleMode};

/// Widths and reduction factors for the aggregation stack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregationConfig {
    /// Latent channel width C.
    pub c: usize,
    /// Widened star-MLP width C'.
    pub c_prime: usize,
    /// Spatial key/value reduction stride.
    pub r1: usize,
    /// Class-level pooling factor.
    pub r2: usize,
    /// Number of (spatial, class) block pairs.
    pub num_blocks: usize,
    /// Depthwise conv kernel (odd).
    pub depthwise_kernel: usize,
}

impl AggregationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r1 < 1 || self.r2 < 1 {
            return Err(Error::Parameter(format!(
                "reduction factors must be >= 1, got r1={} r2={}",
                self.r1, self.r2
            )));
        }
        if self.c_prime < self.c {
            return Err(Error::Parameter(format!(
                "star width C'={} must be >= C={}",
                self.c_prime, self.c
            )));
        }
        if self.num_blocks < 1 {
            return Err(Error::Parameter("num_blocks must be >= 1".into()));
        }
        if self.depthwise_kernel % 2 == 0 {
            return Err(Error::Parameter(format!(
                "depthwise kernel must be odd, got {}",
                self.depthwise_kernel
            )));
        }
        Ok(())
    }
}

impl Default for AggregationConfig {
    fn default() -> Self {
        AggregationConfig { c: 16, c_prime: 32, r1: 2, r2: 2, num_blocks: 2, depthwise_kernel: 3 }
    }
}

/// Activation inside the star MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Identity,
}

/// Widened elementwise-product MLP:
/// f_out(sigma(f_in1(x) * f_in2(x))) over the trailing channel axis.
#[derive(Debug, Clone)]
pub struct StarMlp {
    pub f_in1_w: ParamId,
    pub f_in1_b: ParamId,
    pub f_in2_w: ParamId,
    pub f_in2_b: ParamId,
    pub f_out_w: ParamId,
    pub f_out_b: ParamId,
    pub activation: Activation,
    pub c: usize,
    pub c_prime: usize,
}

impl StarMlp {
    pub fn init(store: &mut ParamStore, c: usize, c_prime: usize, rng: &mut Rng) -> StarMlp {
        let in_scale = 1.0 / (c as f64).sqrt();
        let out_scale = 0.1 / (c_prime as f64).sqrt();
        StarMlp {
            f_in1_w: store.add(Tensor::randn(&[c, c_prime], in_scale, rng)),
            f_in1_b: store.add(Tensor::zeros(&[c_prime])),
            f_in2_w: store.add(Tensor::randn(&[c, c_prime], in_scale, rng)),
            f_in2_b: store.add(Tensor::zeros(&[c_prime])),
            f_out_w: store.add(Tensor::randn(&[c_prime, c], out_scale, rng)),
            f_out_b: store.add(Tensor::zeros(&[c])),
            activation: Activation::Gelu,
            c,
            c_prime,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: TensorId) -> Result<TensorId> {
        let trailing = *tape.shape(x).last().ok_or_else(|| {
            Error::Dimension("star_mlp wants rank >= 1".into())
        })?;
        if trailing != self.c {
            return Err(Error::Dimension(format!(
                "star_mlp trailing width {} != configured C={}",
                trailing, self.c
            )));
        }
        let w1 = tape.param(store, self.f_in1_w);
        let b1 = tape.param(store, self.f_in1_b);
        let w2 = tape.param(store, self.f_in2_w);
        let b2 = tape.param(store, self.f_in2_b);
        let wo = tape.param(store, self.f_out_w);
        let bo = tape.param(store, self.f_out_b);
        let h1 = tape.linear(x, w1, Some(b1))?;
        let h2 = tape.linear(x, w2, Some(b2))?;
        let prod = tape.mul(h1, h2)?;
        let act = match self.activation {
            Activation::Gelu => tape.gelu(prod)?,
            Activation::Identity => prod,
        };
        tape.linear(act, wo, Some(bo))
    }
}

/// Spatial-level aggregation block with strided key/value reduction.
#[derive(Debug, Clone)]
pub struct SpatialBlock {
    pub reduce_w: ParamId,
    pub reduce_b: ParamId,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub dw_w: ParamId,
    pub dw_b: ParamId,
    pub mlp: StarMlp,
    pub config: AggregationConfig,
}

impl SpatialBlock {
    pub fn init(store: &mut ParamStore, config: AggregationConfig, rng: &mut Rng) -> SpatialBlock {
        let c = config.c;
        let r1 = config.r1;
        let dk = config.depthwise_kernel;
        let reduce_scale = 1.0 / (c as f64 * (r1 * r1) as f64).sqrt();
        let lin_scale = 1.0 / (c as f64).sqrt();
        SpatialBlock {
            reduce_w: store.add(Tensor::randn(&[2 * c, c, r1, r1], reduce_scale, rng)),
            reduce_b: store.add(Tensor::zeros(&[2 * c])),
            proj_w: store.add(Tensor::randn(&[2 * c, c], lin_scale / 1.5, rng)),
            proj_b: store.add(Tensor::zeros(&[c])),
            out_w: store.add(Tensor::randn(&[c, c], 0.1 * lin_scale, rng)),
            out_b: store.add(Tensor::zeros(&[c])),
            dw_w: store.add(Tensor::randn(&[c, 1, dk, dk], 0.1 / (dk * dk) as f64, rng)),
            dw_b: store.add(Tensor::zeros(&[c])),
            mlp: StarMlp::init(store, c, config.c_prime, rng),
            config,
        }
    }

    /// Strided conv doubling channels, then a linear projection restoring
    /// width C: [P,C,H,W] -> per-class sequence [P, (H/r1)*(W/r1), C].
    pub fn spatial_reduce(&self, tape: &mut Tape, store: &ParamStore, s: TensorId) -> Result<TensorId> {
        let shape = tape.shape(s).to_vec();
        if shape.len() != 4 {
            return Err(Error::Dimension(format!(
                "spatial_reduce wants [P,C,H,W], got {:?}",
                shape
            )));
        }
        let (p, _c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let r1 = self.config.r1;
        if h % r1 != 0 || w % r1 != 0 {
            return Err(Error::Parameter(format!(
                "spatial_reduce extents {h}x{w} not divisible by r1={r1}"
            )));
        }
        let rw = tape.param(store, self.reduce_w);
        let rb = tape.param(store, self.reduce_b);
        let pw = tape.param(store, self.proj_w);
        let pb = tape.param(store, self.proj_b);
        let reduced = tape.conv2d(s, rw, Some(rb), r1, 0, 1)?; // [P,2C,H/r1,W/r1]
        let (hr, wr) = (h / r1, w / r1);
        let seq = tape.permute(reduced, &[0, 2, 3, 1])?;
        let seq = tape.reshape(seq, &[p, hr * wr, 2 * self.config.c])?;
        tape.linear(seq, pw, Some(pb))
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, s: TensorId) -> Result<TensorId> {
        self.forward_with_probs(tape, store, s).map(|(out, _)| out)
    }

    /// Forward pass that also exposes the attention probability node
    /// [P, Hs*Ws, Hs*Ws/r1^2].
    pub fn forward_with_probs(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        s: TensorId,
    ) -> Result<(TensorId, TensorId)> {
        let shape = tape.shape(s).to_vec();
        if shape.len() != 4 || shape[1] != self.config.c {
            return Err(Error::Dimension(format!(
                "spatial block wants [P,C={},H,W], got {:?}",
                self.config.c, shape
            )));
        }
        let (p, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let prev_stage = tape.stage();
        tape.set_stage(Stage::SpatialAttention);

        let query = tape.permute(s, &[0, 2, 3, 1])?;
        let query = tape.reshape(query, &[p, h * w, c])?;
        let reduced = self.spatial_reduce(tape, store, s)?;
        let (attn, probs) = attention_with_probs(tape, query, reduced, reduced)?;
        let ow = tape.param(store, self.out_w);
        let ob = tape.param(store, self.out_b);
        let attn_delta = tape.linear(attn, ow, Some(ob))?;
        let seq1 = tape.add(query, attn_delta)?;

        let grid = tape.reshape(seq1, &[p, h, w, c])?;
        let grid = tape.permute(grid, &[0, 3, 1, 2])?;
        let dw = tape.param(store, self.dw_w);
        let db = tape.param(store, self.dw_b);
        let pad = self.config.depthwise_kernel / 2;
        let conv_delta = tape.conv2d(grid, dw, Some(db), 1, pad, c)?;
        let grid2 = tape.add(grid, conv_delta)?;

        tape.set_stage(Stage::Mlp);
        let seq2 = tape.permute(grid2, &[0, 2, 3, 1])?;
        let seq2 = tape.reshape(seq2, &[p, h * w, c])?;
        let mlp_delta = self.mlp.forward(tape, store, seq2)?;
        let seq3 = tape.add(seq2, mlp_delta)?;
        let out = tape.reshape(seq3, &[p, h, w, c])?;
        let out = tape.permute(out, &[0, 3, 1, 2])?;

        match prev_stage {
            Some(st) => tape.set_stage(st),
            None => tape.clear_stage(),
        }
        Ok((out, probs))
    }
}

/// Class-level aggregation block over pooled spatial locations.
#[derive(Debug, Clone)]
pub struct ClassBlock {
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub mlp: StarMlp,
    pub config: AggregationConfig,
}

impl ClassBlock {
    pub fn init(store: &mut ParamStore, config: AggregationConfig, rng: &mut Rng) -> ClassBlock {
        let c = config.c;
        let lin_scale = 1.0 / (c as f64).sqrt();
        ClassBlock {
            out_w: store.add(Tensor::randn(&[c, c], 0.1 * lin_scale, rng)),
            out_b: store.add(Tensor::zeros(&[c])),
            mlp: StarMlp::init(store, c, config.c_prime, rng),
            config,
        }
    }

    /// Average-pool by r2 and reshape so the attention axis is the class
    /// axis: [P,C,H,W] -> [(H/r2)*(W/r2), P, C].
    pub fn class_reduce(&self, tape: &mut Tape, s: TensorId) -> Result<TensorId> {
        let shape = tape.shape(s).to_vec();
        if shape.len() != 4 {
            return Err(Error::Dimension(format!(
                "class_reduce wants [P,C,H,W], got {:?}",
                shape
            )));
        }
        let (p, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let r2 = self.config.r2;
        if h % r2 != 0 || w % r2 != 0 {
            return Err(Error::Parameter(format!(
                "class_reduce extents {h}x{w} not divisible by r2={r2}"
            )));
        }
        let pooled = tape.avg_pool2d(s, r2)?;
        let (hr, wr) = (h / r2, w / r2);
        let moved = tape.permute(pooled, &[2, 3, 0, 1])?; // [H',W',P,C]
        tape.reshape(moved, &[hr * wr, p, c])
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, s: TensorId) -> Result<TensorId> {
        self.forward_with_probs(tape, store, s).map(|(out, _)| out)
    }

    /// Forward pass that also exposes the class-attention probabilities
    /// [(H/r2)*(W/r2), P, P].
    pub fn forward_with_probs(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        s: TensorId,
    ) -> Result<(TensorId, TensorId)> {
        let shape = tape.shape(s).to_vec();
        if shape.len() != 4 || shape[1] != self.config.c {
            return Err(Error::Dimension(format!(
                "class block wants [P,C={},H,W], got {:?}",
                self.config.c, shape
            )));
        }
        let (p, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let r2 = self.config.r2;
        let prev_stage = tape.stage();
        tape.set_stage(Stage::ClassAttention);

        let pooled = self.class_reduce(tape, s)?; // [L,P,C]
        let (attn, probs) = attention_with_probs(tape, pooled, pooled, pooled)?;
        let ow = tape.param(store, self.out_w);
        let ob = tape.param(store, self.out_b);
        let attn_delta = tape.linear(attn, ow, Some(ob))?;
        let stream = tape.add(pooled, attn_delta)?;

        tape.set_stage(Stage::Mlp);
        let mlp_delta = self.mlp.forward(tape, store, stream)?;
        // total increment of the pooled stream, pushed back to full res
        let delta = tape.add(attn_delta, mlp_delta)?;
        let (hr, wr) = (h / r2, w / r2);
        let grid = tape.reshape(delta, &[hr, wr, p, c])?;
        let grid = tape.permute(grid, &[2, 3, 0, 1])?;
        let up = tape.upsample2d(grid, r2, UpsampleMode::Nearest)?;
        let out = tape.add(s, up)?;

        match prev_stage {
            Some(st) => tape.set_stage(st),
            None => tape.clear_stage(),
        }
        Ok((out, probs))
    }
}

/// The full aggregation stack: num_blocks x (spatial block, class block).
#[derive(Debug, Clone)]
pub struct AggregationStack {
    pub blocks: Vec<(SpatialBlock, ClassBlock)>,
    pub config: AggregationConfig,
}

impl AggregationStack {
    pub fn init(store: &mut ParamStore, config: AggregationConfig, rng: &mut Rng) -> Result<AggregationStack> {
        config.validate()?;
        let blocks = (0..config.num_blocks)
            .map(|_| (SpatialBlock::init(store, config, rng), ClassBlock::init(store, config, rng)))
            .collect();
        Ok(AggregationStack { blocks, config })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, volume: &CostVolume) -> Result<CostVolume> {
        if volume.level != CostLevel::Latent {
            return Err(Error::Contract("aggregation wants a latent cost volume".into()));
        }
        let mut s = volume.data;
        for (spatial, class) in &self.blocks {
            s = spatial.forward(tape, store, s)?;
            s = class.forward(tape, store, s)?;
        }
        CostVolume::latent(tape, s, volume.class_ids.clone())
    }
}
