//! Pipeline configuration and its flat `key = value` file format.

use std::path::{Path, PathBuf};

use crate::aggregation::AggregationConfig;
use crate::error::{Error, Result};

/// Every knob of the desk-scale pipeline. The file format mirrors the
/// field names one to one; unknown keys are errors.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub h: usize,
    pub w: usize,
    pub vocab_names: Option<PathBuf>,
    pub vocab_embeddings: Option<PathBuf>,
    /// Vocabulary size K (used when no vocabulary files are given).
    pub k: usize,
    /// Embedding width D.
    pub d: usize,
    /// Scoring depth (top-k votes per pixel).
    pub top_k: usize,
    /// Score coefficient in (0,1).
    pub lambda: f64,
    pub p_train: usize,
    pub p_infer: usize,
    pub agg: AggregationConfig,
    pub seed: u64,
    pub learning_rate: f64,
    pub steps: usize,
    /// Cap on |present_classes| per synthetic scene (incl. background).
    pub max_present: usize,
    pub train_scenes: usize,
    pub eval_scenes: usize,
    pub eval_every: usize,
    /// Keep conv_s1/conv_s2 one tensor instead of letting them diverge.
    pub tie_hierarchy_convs: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            h: 64,
            w: 64,
            vocab_names: None,
            vocab_embeddings: None,
            k: 64,
            d: 16,
            top_k: 3,
            lambda: 0.1,
            p_train: 16,
            p_infer: 16,
            agg: AggregationConfig::default(),
            seed: 42,
            learning_rate: 0.03,
            steps: 300,
            max_present: 4,
            train_scenes: 16,
            eval_scenes: 4,
            eval_every: 50,
            tie_hierarchy_convs: false,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Parse(format!("config key `{key}`: cannot parse `{value}`")))
}

impl PipelineConfig {
    /// Parse the flat `key = value` format. Lines starting with `#` and
    /// blank lines are skipped; any unknown key is an error.
    pub fn parse(text: &str) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse(format!(
                    "config line {}: expected `key = value`, got `{line}`",
                    lineno + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            match key {
                "h" => cfg.h = parse_num(key, value)?,
                "w" => cfg.w = parse_num(key, value)?,
                "vocab_names" => cfg.vocab_names = Some(PathBuf::from(value)),
                "vocab_embeddings" => cfg.vocab_embeddings = Some(PathBuf::from(value)),
                "k" => cfg.k = parse_num(key, value)?,
                "d" => cfg.d = parse_num(key, value)?,
                "top_k" => cfg.top_k = parse_num(key, value)?,
                "lambda" => cfg.lambda = parse_num(key, value)?,
                "p_train" => cfg.p_train = parse_num(key, value)?,
                "p_infer" => cfg.p_infer = parse_num(key, value)?,
                "c" => cfg.agg.c = parse_num(key, value)?,
                "c_prime" => cfg.agg.c_prime = parse_num(key, value)?,
                "r1" => cfg.agg.r1 = parse_num(key, value)?,
                "r2" => cfg.agg.r2 = parse_num(key, value)?,
                "num_blocks" => cfg.agg.num_blocks = parse_num(key, value)?,
                "depthwise_kernel" => cfg.agg.depthwise_kernel = parse_num(key, value)?,
                "seed" => cfg.seed = parse_num(key, value)?,
                "learning_rate" => cfg.learning_rate = parse_num(key, value)?,
                "steps" => cfg.steps = parse_num(key, value)?,
                "max_present" => cfg.max_present = parse_num(key, value)?,
                "train_scenes" => cfg.train_scenes = parse_num(key, value)?,
                "eval_scenes" => cfg.eval_scenes = parse_num(key, value)?,
                "eval_every" => cfg.eval_every = parse_num(key, value)?,
                "tie_hierarchy_convs" => {
                    cfg.tie_hierarchy_convs = match value {
                        "true" => true,
                        "false" => false,
                        _ => {
                            return Err(Error::Parse(format!(
                                "config key `tie_hierarchy_convs`: expected true/false, got `{value}`"
                            )))
                        }
                    }
                }
                _ => return Err(Error::Parse(format!("unknown config key `{key}`"))),
            }
        }
        Ok(cfg)
    }

    /// Read a config file, then apply the `ERRSEG_SEED` override if set.
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = PipelineConfig::parse(&text)?;
        cfg.apply_seed_env()?;
        Ok(cfg)
    }

    pub fn apply_seed_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var("ERRSEG_SEED") {
            self.seed = v
                .parse::<u64>()
                .map_err(|_| Error::Parse(format!("ERRSEG_SEED: cannot parse `{v}` as u64")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.w == 0 || self.h % 32 != 0 || self.w % 32 != 0 {
            return Err(Error::Parameter(format!(
                "image extents must be positive multiples of 32, got {}x{}",
                self.h, self.w
            )));
        }
        if self.k < 2 {
            return Err(Error::Parameter(format!("vocabulary size k={} must be >= 2", self.k)));
        }
        if self.d < 3 {
            return Err(Error::Parameter(format!("embedding width d={} must be >= 3", self.d)));
        }
        if self.top_k == 0 || self.top_k > self.k {
            return Err(Error::Parameter(format!(
                "top_k={} outside 1..={}",
                self.top_k, self.k
            )));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::Parameter(format!("lambda={} outside (0,1)", self.lambda)));
        }
        if self.p_train == 0 || self.p_infer == 0 {
            return Err(Error::Parameter("p_train and p_infer must be >= 1".into()));
        }
        self.agg.validate()?;
        let hs = self.h / 16;
        let ws = self.w / 16;
        if hs % self.agg.r1 != 0 || ws % self.agg.r1 != 0 {
            return Err(Error::Parameter(format!(
                "latent extents {hs}x{ws} not divisible by r1={}",
                self.agg.r1
            )));
        }
        if hs % self.agg.r2 != 0 || ws % self.agg.r2 != 0 {
            return Err(Error::Parameter(format!(
                "latent extents {hs}x{ws} not divisible by r2={}",
                self.agg.r2
            )));
        }
        if self.max_present < 2 {
            return Err(Error::Parameter("max_present must be >= 2".into()));
        }
        if self.train_scenes == 0 || self.eval_scenes == 0 || self.eval_every == 0 {
            return Err(Error::Parameter(
                "train_scenes, eval_scenes, eval_every must be >= 1".into(),
            ));
        }
        Ok(())
    }
}
