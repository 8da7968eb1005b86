//! Toy training loop: per-pixel cross-entropy over the selected classes
//! at quarter resolution, plain gradient descent with a fixed step.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::pipeline::config::PipelineConfig;
use crate::pipeline::model::{ForwardOutput, Model};
use crate::pipeline::scene::{synth_dataset, SyntheticScene};
use crate::tensor::Tape;

/// Sentinel for pixels whose ground truth fell outside the selection.
pub const IGNORE_LABEL: usize = usize::MAX;

const TRAIN_STREAM: u64 = 0x7a11;
const EVAL_STREAM: u64 = 0xe7a1;

#[derive(Debug, Clone, Copy)]
pub struct TrainRecord {
    pub step: usize,
    pub loss: f64,
    /// Present on evaluation steps only.
    pub miou: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub final_miou: f64,
}

/// Vocabulary labels -> local channel indices under `class_ids`;
/// anything unselected becomes the ignore sentinel.
pub fn local_targets(labels: &[usize], class_ids: &[usize]) -> Vec<usize> {
    let lookup: HashMap<usize, usize> =
        class_ids.iter().enumerate().map(|(local, &vocab)| (vocab, local)).collect();
    labels.iter().map(|l| lookup.get(l).copied().unwrap_or(IGNORE_LABEL)).collect()
}

pub fn pixel_accuracy(pred_vocab: &[usize], labels: &[usize]) -> f64 {
    let hits = pred_vocab.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

/// Mean IoU over the vocabulary classes that appear in the labels.
pub fn mean_iou(pairs: &[(Vec<usize>, Vec<usize>)]) -> f64 {
    let mut inter: HashMap<usize, usize> = HashMap::new();
    let mut union: HashMap<usize, usize> = HashMap::new();
    let mut classes: Vec<usize> = Vec::new();
    for (pred, labels) in pairs {
        for (&p, &l) in pred.iter().zip(labels) {
            if p == l {
                *inter.entry(l).or_default() += 1;
                *union.entry(l).or_default() += 1;
            } else {
                *union.entry(l).or_default() += 1;
                *union.entry(p).or_default() += 1;
            }
            if !classes.contains(&l) {
                classes.push(l);
            }
        }
    }
    classes.sort_unstable();
    if classes.is_empty() {
        return 0.0;
    }
    let mut acc = 0.0;
    for c in &classes {
        let i = *inter.get(c).unwrap_or(&0) as f64;
        let u = *union.get(c).unwrap_or(&0) as f64;
        acc += if u > 0.0 { i / u } else { 0.0 };
    }
    acc / classes.len() as f64
}

fn forward_scene(model: &Model, tape: &mut Tape, scene: &SyntheticScene) -> Result<ForwardOutput> {
    let image = tape.input(scene.image.clone());
    model.forward_train(tape, image)
}

/// mIoU of the model over a scene list (training-time selection width).
pub fn evaluate_miou(model: &Model, scenes: &[SyntheticScene]) -> Result<f64> {
    let mut pairs = Vec::with_capacity(scenes.len());
    for scene in scenes {
        let mut tape = Tape::new();
        let out = forward_scene(model, &mut tape, scene)?;
        let pred = out.logit_map.argmax_vocab(&tape);
        pairs.push((pred, scene.labels.clone()));
    }
    Ok(mean_iou(&pairs))
}

/// Run the toy loop on synthetic scenes; returns the step log.
/// A non-finite loss aborts with the offending step number.
pub fn train_toy(config: &PipelineConfig) -> Result<(Model, TrainLog)> {
    config.validate()?;
    let mut model = Model::new(config.clone())?;
    let train = synth_dataset(config.train_scenes, config, &model.vocab, config.seed ^ TRAIN_STREAM);
    let eval = synth_dataset(config.eval_scenes, config, &model.vocab, config.seed ^ EVAL_STREAM);

    let mut records = Vec::with_capacity(config.steps);
    let mut initial_loss = f64::NAN;
    let mut final_loss = f64::NAN;
    for step in 0..config.steps {
        let scene = &train[step % train.len()];
        let mut tape = Tape::new();
        // any non-finite value inside a training step means the last
        // update blew the parameters up
        let diverged = |e: Error| match e {
            Error::NonFinite { .. } => Error::Divergence { step },
            other => other,
        };
        let out = forward_scene(&model, &mut tape, scene).map_err(diverged)?;
        let targets = local_targets(&scene.labels, &out.logit_map.class_ids);
        let loss_id = tape
            .cross_entropy(out.logit_map.logits, &targets, IGNORE_LABEL)
            .map_err(diverged)?;
        let loss = tape.data(loss_id)[0];
        if !loss.is_finite() {
            return Err(Error::Divergence { step });
        }
        if step == 0 {
            initial_loss = loss;
        }
        final_loss = loss;
        tape.backward(loss_id)?;
        model.store.apply_sgd(&tape, config.learning_rate);

        let miou = if step % config.eval_every == 0 || step + 1 == config.steps {
            Some(evaluate_miou(&model, &eval)?)
        } else {
            None
        };
        records.push(TrainRecord { step, loss, miou });
    }
    let final_miou = records.iter().rev().find_map(|r| r.miou).unwrap_or(0.0);
    Ok((model, TrainLog { records, initial_loss, final_loss, final_miou }))
}
