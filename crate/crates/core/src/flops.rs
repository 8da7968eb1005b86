//! Multiply-accumulate instrumentation.
//!
//! Every tape op that performs dense multiply-accumulates (conv, linear,
//! batched matmul) reports its count here, attributed to the pipeline
//! stage that is active on the tape. Attention score/value matmuls are
//! additionally tagged so the sequence-reduction savings can be measured
//! against exactly the operations the analytic formulas cover.

/// Pipeline stage a MAC count is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Encoder,
    CostMaps,
    SpatialAttention,
    ClassAttention,
    Mlp,
    Decoder,
    Other,
}

pub const STAGES: [Stage; 7] = [
    Stage::Encoder,
    Stage::CostMaps,
    Stage::SpatialAttention,
    Stage::ClassAttention,
    Stage::Mlp,
    Stage::Decoder,
    Stage::Other,
];

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Encoder => "encoder",
            Stage::CostMaps => "cost_maps",
            Stage::SpatialAttention => "spatial_attention",
            Stage::ClassAttention => "class_attention",
            Stage::Mlp => "mlp",
            Stage::Decoder => "decoder",
            Stage::Other => "other",
        }
    }

    fn index(self) -> usize {
        match self {
            Stage::Encoder => 0,
            Stage::CostMaps => 1,
            Stage::SpatialAttention => 2,
            Stage::ClassAttention => 3,
            Stage::Mlp => 4,
            Stage::Decoder => 5,
            Stage::Other => 6,
        }
    }
}

/// Shape of one attention score matrix, for the sequence-length ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnShape {
    pub stage: Stage,
    pub batch: usize,
    pub query_len: usize,
    pub key_len: usize,
}

/// Per-stage MAC totals plus the attention-only sub-count.
#[derive(Debug, Clone, Default)]
pub struct FlopLedger {
    total: [u64; 7],
    attention: [u64; 7],
    attn_shapes: Vec<AttnShape>,
}

impl FlopLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, stage: Stage, macs: u64, tagged_attention: bool) {
        self.total[stage.index()] += macs;
        if tagged_attention {
            self.attention[stage.index()] += macs;
        }
    }

    pub fn record_attn_shape(&mut self, shape: AttnShape) {
        self.attn_shapes.push(shape);
    }

    pub fn stage_total(&self, stage: Stage) -> u64 {
        self.total[stage.index()]
    }

    /// Attention score+value matmul MACs attributed to `stage`.
    pub fn stage_attention(&self, stage: Stage) -> u64 {
        self.attention[stage.index()]
    }

    pub fn grand_total(&self) -> u64 {
        self.total.iter().sum()
    }

    pub fn attn_shapes(&self) -> &[AttnShape] {
        &self.attn_shapes
    }
}
