//! Model assembly and the end-to-end forward pass.

use crate::aggregation::AggregationStack;
use crate::cost::{
    cosine_cost_map, score_classes, select_classes, CostEmbed, CostVolume, EncoderFeatures,
    HierarchyEmbed, SelectionParams, SelectionResult, Vocabulary,
};
use crate::decoder::{Decoder, LogitMap};
use crate::error::{Error, Result};
use crate::flops::Stage;
use crate::pipeline::config::PipelineConfig;
use crate::pipeline::scene::synthetic_vocabulary;
use crate::rng::Rng;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, TensorId};

/// Width of every synthetic encoder stage (also the decoder guide width).
pub const STEM_WIDTH: usize = 8;

/// Frozen fixed-seed conv stack standing in for the visual encoder's
/// middle layers. Linear (no activations); the first three channels carry
/// the image colors down the pyramid by a center-tap identity path so the
/// cost maps stay informative without any training.
#[derive(Debug, Clone)]
pub struct SynthEncoder {
    convs: [(ParamId, ParamId); 4],
}

impl SynthEncoder {
    pub fn init(store: &mut ParamStore, rng: &mut Rng) -> SynthEncoder {
        let widths = [(STEM_WIDTH, 3), (STEM_WIDTH, STEM_WIDTH), (STEM_WIDTH, STEM_WIDTH), (STEM_WIDTH, STEM_WIDTH)];
        let mut convs = Vec::with_capacity(4);
        for (stage, &(cout, cin)) in widths.iter().enumerate() {
            let mut w = Tensor::zeros(&[cout, cin, 3, 3]);
            // the last stage samples at tap (2,2): the composite sample
            // point lands mid-slot, inside every generated shape
            let tap = if stage == 3 { 2 } else { 1 };
            for j in 0..cout {
                if j < 3 && j < cin {
                    w.data_mut()[((j * cin + j) * 3 + tap) * 3 + tap] = 1.0;
                } else {
                    for c in 0..cin {
                        for t in 0..9 {
                            w.data_mut()[(j * cin + c) * 9 + t] = rng.normal() * 0.15;
                        }
                    }
                }
            }
            convs.push((store.add_frozen(w), store.add_frozen(Tensor::zeros(&[cout]))));
        }
        SynthEncoder { convs: [convs[0], convs[1], convs[2], convs[3]] }
    }

    pub fn bias_params(&self) -> Vec<ParamId> {
        self.convs.iter().map(|&(_, b)| b).collect()
    }

    /// image [3,H,W] -> (f1v [8,H/4,W/4], f2v [8,H/8,W/8], f3v [8,H/16,W/16]).
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        image: TensorId,
    ) -> Result<(TensorId, TensorId, TensorId)> {
        let shape = tape.shape(image).to_vec();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::Dimension(format!(
                "encoder wants an image [3,H,W], got {:?}",
                shape
            )));
        }
        let (h, w) = (shape[1], shape[2]);
        if h % 32 != 0 || w % 32 != 0 {
            return Err(Error::Parameter(format!(
                "image extents must be multiples of 32, got {h}x{w}"
            )));
        }
        let mut x = tape.reshape(image, &[1, 3, h, w])?;
        let mut outs = Vec::with_capacity(4);
        for &(wid, bid) in &self.convs {
            let wt = tape.param(store, wid);
            let bt = tape.param(store, bid);
            x = tape.conv2d(x, wt, Some(bt), 2, 1, 1)?;
            outs.push(x);
        }
        let strip = |tape: &mut Tape, id: TensorId| -> Result<TensorId> {
            let s = tape.shape(id).to_vec();
            tape.reshape(id, &s[1..])
        };
        let f1v = strip(tape, outs[1])?;
        let f2v = strip(tape, outs[2])?;
        let f3v = strip(tape, outs[3])?;
        Ok((f1v, f2v, f3v))
    }
}

/// Forward products shared by the pruned and reference paths.
pub struct PipelinePrefix {
    pub feats: EncoderFeatures,
    pub s3: CostVolume,
    pub s4: CostVolume,
    pub scores: Vec<f64>,
}

pub struct ForwardOutput {
    pub logit_map: LogitMap,
    pub selection: SelectionResult,
}

/// Everything the pipeline owns: parameters plus module wiring.
pub struct Model {
    pub store: ParamStore,
    pub config: PipelineConfig,
    pub vocab: Vocabulary,
    pub encoder: SynthEncoder,
    pub hierarchy: HierarchyEmbed,
    pub embed: CostEmbed,
    pub stack: AggregationStack,
    pub decoder: Decoder,
}

impl Model {
    pub fn new(config: PipelineConfig) -> Result<Model> {
        config.validate()?;
        let vocab = match (&config.vocab_names, &config.vocab_embeddings) {
            (Some(n), Some(e)) => {
                let v = Vocabulary::load(n, e)?;
                if v.dim() != config.d {
                    return Err(Error::Dimension(format!(
                        "vocabulary width {} != configured d={}",
                        v.dim(),
                        config.d
                    )));
                }
                v
            }
            (None, None) => synthetic_vocabulary(config.k, config.d)?,
            _ => {
                return Err(Error::Parameter(
                    "vocab_names and vocab_embeddings must be given together".into(),
                ))
            }
        };
        let mut store = ParamStore::new();
        let rng = Rng::new(config.seed);
        let encoder = SynthEncoder::init(&mut store, &mut rng.derive(1));
        let hierarchy = HierarchyEmbed::init(
            &mut store,
            STEM_WIDTH,
            config.d,
            config.tie_hierarchy_convs,
            &mut rng.derive(2),
        );
        let embed = CostEmbed::init(&mut store, config.agg.c, &mut rng.derive(3));
        let stack = AggregationStack::init(&mut store, config.agg, &mut rng.derive(4))?;
        let decoder = Decoder::init(&mut store, config.agg.c, STEM_WIDTH, &mut rng.derive(5));
        Ok(Model { store, config, vocab, encoder, hierarchy, embed, stack, decoder })
    }

    /// Encoder features incl. the two image-text embedding maps.
    pub fn encode(&self, tape: &mut Tape, image: TensorId) -> Result<EncoderFeatures> {
        tape.set_stage(Stage::Encoder);
        let (f1v, f2v, f3v) = self.encoder.forward(tape, &self.store, image)?;
        let (f3s, f4s) = self.hierarchy.forward(tape, &self.store, f3v)?;
        tape.clear_stage();
        Ok(EncoderFeatures { f1v, f2v, f3v, f3s, f4s })
    }

    /// Cost maps and class scores (everything before pruning).
    pub fn forward_prefix(&self, tape: &mut Tape, image: TensorId) -> Result<PipelinePrefix> {
        let feats = self.encode(tape, image)?;
        tape.set_stage(Stage::CostMaps);
        let emb = self.vocab.bind(tape);
        let s3 = cosine_cost_map(tape, feats.f3s, emb)?;
        let s4 = cosine_cost_map(tape, feats.f4s, emb)?;
        let scores = score_classes(tape.value(s4.data), self.config.top_k, self.config.lambda)?;
        tape.clear_stage();
        Ok(PipelinePrefix { feats, s3, s4, scores })
    }

    fn forward_suffix(
        &self,
        tape: &mut Tape,
        prefix: &PipelinePrefix,
        selection: SelectionResult,
    ) -> Result<ForwardOutput> {
        tape.set_stage(Stage::CostMaps);
        let s3 = prefix.s3.select(tape, &selection)?;
        let s4 = prefix.s4.select(tape, &selection)?;
        let latent = self.embed.forward(tape, &self.store, &s3, &s4)?;
        tape.clear_stage();
        let aggregated = self.stack.forward(tape, &self.store, &latent)?;
        let logit_map =
            self.decoder.forward(tape, &self.store, &aggregated, prefix.feats.f2v, prefix.feats.f1v)?;
        Ok(ForwardOutput { logit_map, selection })
    }

    /// Full pass retaining the top-`p` classes.
    pub fn forward_with_p(&self, tape: &mut Tape, image: TensorId, p: usize) -> Result<ForwardOutput> {
        let prefix = self.forward_prefix(tape, image)?;
        let selection = select_classes(&prefix.scores, self.config.top_k, self.config.lambda, p)?;
        self.forward_suffix(tape, &prefix, selection)
    }

    /// Inference pass (top `p_infer` classes).
    pub fn forward_full(&self, tape: &mut Tape, image: TensorId) -> Result<ForwardOutput> {
        self.forward_with_p(tape, image, self.config.p_infer)
    }

    /// Training pass (top `p_train` classes).
    pub fn forward_train(&self, tape: &mut Tape, image: TensorId) -> Result<ForwardOutput> {
        self.forward_with_p(tape, image, self.config.p_train)
    }

    /// Reference path that never prunes: channels are ordered by score
    /// exactly like the pruned path, but the top-P truncation never runs.
    pub fn forward_reference(&self, tape: &mut Tape, image: TensorId) -> Result<ForwardOutput> {
        let prefix = self.forward_prefix(tape, image)?;
        let mut order: Vec<usize> = (0..prefix.scores.len()).collect();
        order.sort_by(|&a, &b| prefix.scores[b].total_cmp(&prefix.scores[a]).then(a.cmp(&b)));
        let selection = SelectionResult {
            scores: prefix.scores.clone(),
            selected: order,
            params: SelectionParams {
                k: self.config.top_k,
                lambda: self.config.lambda,
                p: prefix.scores.len(),
            },
            clamped: false,
        };
        self.forward_suffix(tape, &prefix, selection)
    }

    /// Merged latent volume before aggregation, for attention exports.
    pub fn forward_to_latent(
        &self,
        tape: &mut Tape,
        image: TensorId,
        p: usize,
    ) -> Result<(CostVolume, SelectionResult)> {
        let prefix = self.forward_prefix(tape, image)?;
        let selection = select_classes(&prefix.scores, self.config.top_k, self.config.lambda, p)?;
        tape.set_stage(Stage::CostMaps);
        let s3 = prefix.s3.select(tape, &selection)?;
        let s4 = prefix.s4.select(tape, &selection)?;
        let latent = self.embed.forward(tape, &self.store, &s3, &s4)?;
        tape.clear_stage();
        Ok((latent, selection))
    }
}
