//! Synthetic scenes, model assembly, the end-to-end forward pass, and the
//! toy training loop.

mod config;
mod model;
mod scene;
mod train;

pub use config::PipelineConfig;
pub use model::{ForwardOutput, Model, PipelinePrefix, SynthEncoder, STEM_WIDTH};
pub use scene::{
    class_color, expected_present_mean, octant_colors, synth_dataset, synthetic_vocabulary,
    SyntheticScene,
};
pub use train::{
    evaluate_miou, local_targets, mean_iou, pixel_accuracy, train_toy, TrainLog, TrainRecord,
    IGNORE_LABEL,
};
