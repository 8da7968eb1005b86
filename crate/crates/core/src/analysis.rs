//! Numerical oracles and accounting.
//!
//! * Contribution ratios of redundant class channels to the class-level
//!   attention output, before and after class reduction, plus the
//!   alpha/beta decomposition that proves reduction shrinks them.
//! * Instrumented MAC counts for the full pipeline, compared against the
//!   analytic sequence-reduction savings formulas.
//! * Vocabulary statistics: redundancy fractions and cross-vocabulary
//!   label similarity.
//! * Spatial-attention row export for qualitative inspection.

use crate::aggregation::SpatialBlock;
use crate::cost::{CostVolume, Vocabulary};
use crate::error::{Error, Result};
use crate::flops::{Stage, STAGES};
use crate::pipeline::{synth_dataset, Model, PipelineConfig};
use crate::rng::Rng;
use crate::tensor::{ParamStore, Tape, Tensor};

// ── contribution-ratio oracle ───────────────────────────────────────

/// One instance of the class-attention contribution computation:
/// `total` classes (K), the first `existing` (M) actually present, the
/// first `retained` (P) kept by reduction, a K x K attention score matrix
/// whose leading P x P block survives reduction unchanged, positive
/// per-class cost values, and the scaling width C.
#[derive(Debug, Clone)]
pub struct ContributionInstance {
    pub total: usize,
    pub existing: usize,
    pub retained: usize,
    scores: Tensor,
    costs: Vec<f64>,
    pub width: f64,
}

impl ContributionInstance {
    pub fn new(
        existing: usize,
        retained: usize,
        scores: Tensor,
        costs: Vec<f64>,
        width: f64,
    ) -> Result<ContributionInstance> {
        let shape = scores.shape().to_vec();
        if shape.len() != 2 || shape[0] != shape[1] {
            return Err(Error::Dimension(format!(
                "attention scores must be square [K,K], got {:?}",
                shape
            )));
        }
        let total = shape[0];
        if existing == 0 || existing > retained || retained > total {
            return Err(Error::Contract(format!(
                "need 1 <= M={existing} <= P={retained} <= K={total}"
            )));
        }
        if costs.len() != total {
            return Err(Error::Dimension(format!(
                "need {total} cost values, got {}",
                costs.len()
            )));
        }
        if costs.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Domain("cost values must all be positive".into()));
        }
        if !(width > 0.0) {
            return Err(Error::Parameter("scaling width must be positive".into()));
        }
        Ok(ContributionInstance { total, existing, retained, scores, costs, width })
    }

    /// Unreduced score row for query class `q` (0-based).
    fn row(&self, q: usize) -> &[f64] {
        &self.scores.data()[q * self.total..(q + 1) * self.total]
    }

    fn check_query(&self, q: usize) -> Result<()> {
        if q >= self.existing {
            return Err(Error::Contract(format!(
                "query class {q} must be an existing class (< {})",
                self.existing
            )));
        }
        Ok(())
    }

    fn weighted(&self, q: usize, range: std::ops::Range<usize>) -> f64 {
        let scale = 1.0 / self.width.sqrt();
        let row = self.row(q);
        let mut acc = 0.0;
        for k in range {
            acc += (row[k] * scale).exp() * self.costs[k];
        }
        acc
    }
}

/// (delta_r, delta_p): the redundant channels' share of the class-level
/// attention output before and after reduction, for query class `q`.
pub fn contribution_ratios(inst: &ContributionInstance, q: usize) -> Result<(f64, f64)> {
    inst.check_query(q)?;
    let (m, p, k) = (inst.existing, inst.retained, inst.total);
    let delta_r = inst.weighted(q, m..k) / inst.weighted(q, 0..k);
    let delta_p = if p == m {
        0.0
    } else {
        // the retained block equals the leading block of the full matrix
        inst.weighted(q, m..p) / inst.weighted(q, 0..p)
    };
    Ok((delta_r, delta_p))
}

/// (alpha, beta) of the decomposition (1/delta_r - 1)/(1/delta_p - 1)
/// = alpha * beta. The retained block is the leading block of the full
/// matrix, so alpha is identically 1, and beta compares the retained
/// redundant mass against all redundant mass, hence beta < 1 when P < K.
pub fn contribution_decomposition(inst: &ContributionInstance, q: usize) -> Result<(f64, f64)> {
    inst.check_query(q)?;
    let (m, p, k) = (inst.existing, inst.retained, inst.total);
    let alpha = inst.weighted(q, 0..m) / inst.weighted(q, 0..m);
    let beta = inst.weighted(q, m..p) / inst.weighted(q, m..k);
    Ok((alpha, beta))
}

/// Every quantity the contribution-ratio property relates, for one
/// (instance, query) pair.
#[derive(Debug, Clone, Copy)]
pub struct ContributionReport {
    pub delta_r: f64,
    pub delta_p: f64,
    pub alpha: f64,
    pub beta: f64,
    /// |(1/delta_r - 1)/(1/delta_p - 1) - alpha*beta|, when delta_p > 0.
    pub identity_residual: Option<f64>,
}

pub fn contribution_report(inst: &ContributionInstance, q: usize) -> Result<ContributionReport> {
    let (delta_r, delta_p) = contribution_ratios(inst, q)?;
    let (alpha, beta) = contribution_decomposition(inst, q)?;
    let identity_residual = if delta_p > 0.0 {
        let lhs = (1.0 / delta_r - 1.0) / (1.0 / delta_p - 1.0);
        Some((lhs - alpha * beta).abs())
    } else {
        None
    };
    Ok(ContributionReport { delta_r, delta_p, alpha, beta, identity_residual })
}

/// Random instance in the fuzzing regime: K in [3, max_total],
/// M < P < K, scores uniform in [-2,2], costs uniform in (0.1, 2].
pub fn random_instance(rng: &mut Rng, max_total: usize) -> ContributionInstance {
    let total = 3 + rng.below(max_total.saturating_sub(2).max(1));
    let existing = 1 + rng.below(total - 2);
    let retained = existing + 1 + rng.below(total - existing - 1);
    let scores = Tensor::from_fn(&[total, total], |_| rng.range(-2.0, 2.0));
    let costs: Vec<f64> = (0..total).map(|_| 0.1 + rng.uniform() * 1.9).collect();
    ContributionInstance::new(existing, retained, scores, costs, 1.0 + rng.uniform() * 63.0)
        .expect("construction satisfies invariants")
}

/// Summary of a randomized verification run.
#[derive(Debug, Clone, Copy)]
pub struct FuzzSummary {
    pub trials: usize,
    pub violations: usize,
    /// min over trials of (delta_r - delta_p); positive means the
    /// property held everywhere.
    pub worst_margin: f64,
    pub worst_alpha_dev: f64,
    pub worst_identity_residual: f64,
    pub max_beta: f64,
}

pub fn fuzz_contribution(trials: usize, seed: u64, max_total: usize) -> FuzzSummary {
    let mut rng = Rng::new(seed);
    let mut summary = FuzzSummary {
        trials,
        violations: 0,
        worst_margin: f64::INFINITY,
        worst_alpha_dev: 0.0,
        worst_identity_residual: 0.0,
        max_beta: 0.0,
    };
    for _ in 0..trials {
        let inst = random_instance(&mut rng, max_total);
        let q = rng.below(inst.existing);
        let report = contribution_report(&inst, q).expect("valid instance");
        let margin = report.delta_r - report.delta_p;
        if !(report.delta_p < report.delta_r) {
            summary.violations += 1;
        }
        summary.worst_margin = summary.worst_margin.min(margin);
        summary.worst_alpha_dev = summary.worst_alpha_dev.max((report.alpha - 1.0).abs());
        if let Some(res) = report.identity_residual {
            summary.worst_identity_residual = summary.worst_identity_residual.max(res);
        }
        summary.max_beta = summary.max_beta.max(report.beta);
    }
    summary
}

// ── MAC accounting ──────────────────────────────────────────────────

/// Per-stage MAC counts from one instrumented forward pass.
#[derive(Debug, Clone)]
pub struct MeasuredRun {
    pub stages: Vec<(&'static str, u64)>,
    pub total: u64,
    pub attn_spatial: u64,
    pub attn_class: u64,
}

/// Run the pipeline once on a synthetic scene and read the MAC ledger.
/// Counts depend on shapes only, never on values.
pub fn measure_pipeline(config: &PipelineConfig) -> Result<MeasuredRun> {
    let model = Model::new(config.clone())?;
    let scene = &synth_dataset(1, config, &model.vocab, config.seed)[0];
    let mut tape = Tape::new();
    let image = tape.input(scene.image.clone());
    model.forward_full(&mut tape, image)?;
    let ledger = tape.ledger();
    Ok(MeasuredRun {
        stages: STAGES.iter().map(|&s| (s.name(), ledger.stage_total(s))).collect(),
        total: ledger.grand_total(),
        attn_spatial: ledger.stage_attention(Stage::SpatialAttention),
        attn_class: ledger.stage_attention(Stage::ClassAttention),
    })
}

/// The unreduced counterpart: every class retained, no sequence reduction.
pub fn baseline_of(config: &PipelineConfig) -> PipelineConfig {
    let mut base = config.clone();
    base.p_infer = config.k;
    base.agg.r1 = 1;
    base.agg.r2 = 1;
    base
}

/// Instrumented counts plus measured-vs-analytic savings ratios.
#[derive(Debug, Clone)]
pub struct FlopReport {
    pub k: usize,
    pub p: usize,
    pub r1: usize,
    pub r2: usize,
    pub hs: usize,
    pub ws: usize,
    pub c: usize,
    pub run: MeasuredRun,
    pub baseline: MeasuredRun,
    pub measured_spatial_savings: f64,
    pub measured_class_savings: f64,
    pub analytic_spatial_savings: f64,
    pub analytic_class_savings: f64,
}

/// Fraction of spatial-attention MACs removed: 1 - P/(r1^2 K).
pub fn analytic_spatial_savings(k: usize, p: usize, r1: usize) -> f64 {
    1.0 - p as f64 / ((r1 * r1 * k) as f64)
}

/// Fraction of class-attention MACs removed: 1 - (P/(r2 K))^2.
pub fn analytic_class_savings(k: usize, p: usize, r2: usize) -> f64 {
    let q = p as f64 / ((r2 * k) as f64);
    1.0 - q * q
}

pub fn flop_count(config: &PipelineConfig) -> Result<FlopReport> {
    let run = measure_pipeline(config)?;
    let baseline = measure_pipeline(&baseline_of(config))?;
    let p = config.p_infer.min(config.k);
    Ok(FlopReport {
        k: config.k,
        p,
        r1: config.agg.r1,
        r2: config.agg.r2,
        hs: config.h / 16,
        ws: config.w / 16,
        c: config.agg.c,
        measured_spatial_savings: 1.0 - run.attn_spatial as f64 / baseline.attn_spatial as f64,
        measured_class_savings: 1.0 - run.attn_class as f64 / baseline.attn_class as f64,
        analytic_spatial_savings: analytic_spatial_savings(config.k, p, config.agg.r1),
        analytic_class_savings: analytic_class_savings(config.k, p, config.agg.r2),
        run,
        baseline,
    })
}

impl FlopReport {
    /// Flat `key=value` text: parameters, stage counts, savings footer.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (key, val) in [
            ("k", self.k),
            ("p", self.p),
            ("r1", self.r1),
            ("r2", self.r2),
            ("hs", self.hs),
            ("ws", self.ws),
            ("c", self.c),
        ] {
            s.push_str(&format!("{key}={val}\n"));
        }
        for (name, count) in &self.run.stages {
            s.push_str(&format!("{name}={count}\n"));
        }
        s.push_str(&format!("total={}\n", self.run.total));
        s.push_str(&format!("attn_macs_spatial={}\n", self.run.attn_spatial));
        s.push_str(&format!("attn_macs_class={}\n", self.run.attn_class));
        s.push_str(&format!("baseline_attn_macs_spatial={}\n", self.baseline.attn_spatial));
        s.push_str(&format!("baseline_attn_macs_class={}\n", self.baseline.attn_class));
        s.push_str(&format!(
            "savings_spatial={:.6} (analytic {:.6})\n",
            self.measured_spatial_savings, self.analytic_spatial_savings
        ));
        s.push_str(&format!(
            "savings_class={:.6} (analytic {:.6})\n",
            self.measured_class_savings, self.analytic_class_savings
        ));
        s
    }
}

// ── vocabulary statistics ───────────────────────────────────────────

/// Published per-benchmark figures: vocabulary size, average number of
/// classes present per image, and the retained-class count used at
/// inference.
#[derive(Debug, Clone, Copy)]
pub struct BenchmarkPreset {
    pub name: &'static str,
    pub classes: usize,
    pub avg_present: f64,
    pub retained: usize,
}

pub const BENCHMARK_PRESETS: [BenchmarkPreset; 5] = [
    BenchmarkPreset { name: "A-847", classes: 847, avg_present: 10.2, retained: 48 },
    BenchmarkPreset { name: "PC-459", classes: 459, avg_present: 6.5, retained: 48 },
    BenchmarkPreset { name: "A-150", classes: 150, avg_present: 8.5, retained: 32 },
    BenchmarkPreset { name: "PC-59", classes: 59, avg_present: 4.8, retained: 24 },
    BenchmarkPreset { name: "PAS-20", classes: 20, avg_present: 1.5, retained: 16 },
];

/// Fraction of vocabulary classes absent from an average image.
pub fn vocab_redundancy_stats(k: usize, avg_present: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::Parameter("vocabulary size must be positive".into()));
    }
    if !(avg_present > 0.0 && avg_present <= k as f64) {
        return Err(Error::Domain(format!(
            "average present classes {avg_present} outside (0, {k}]"
        )));
    }
    Ok(1.0 - avg_present / k as f64)
}

/// One-decimal percent rendering, e.g. 0.98795... -> "98.8%".
pub fn percent_one_decimal(frac: f64) -> String {
    format!("{:.1}%", frac * 100.0)
}

/// For each evaluation class, its best cosine match in the training
/// vocabulary; returns the fraction at or above each threshold.
/// A threshold of 1.00 counts matches within 1e-9 of exact.
pub fn vocab_similarity(eval: &Vocabulary, train: &Vocabulary, thresholds: &[f64]) -> Result<Vec<f64>> {
    if eval.is_empty() || train.is_empty() {
        return Err(Error::Parameter("vocabularies must be non-empty".into()));
    }
    let d = eval.dim();
    if train.dim() != d {
        return Err(Error::Dimension(format!(
            "embedding widths differ: eval D={d}, train D={}",
            train.dim()
        )));
    }
    let norm = |row: &[f64]| row.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut best = Vec::with_capacity(eval.len());
    for i in 0..eval.len() {
        let erow = &eval.embeddings.data()[i * d..(i + 1) * d];
        let en = norm(erow);
        let mut max_cos = f64::NEG_INFINITY;
        for j in 0..train.len() {
            let trow = &train.embeddings.data()[j * d..(j + 1) * d];
            let dot: f64 = erow.iter().zip(trow).map(|(a, b)| a * b).sum();
            max_cos = max_cos.max(dot / (en * norm(trow)));
        }
        best.push(max_cos);
    }
    Ok(thresholds
        .iter()
        .map(|&thr| {
            let cut = if thr >= 1.0 { 1.0 - 1e-9 } else { thr };
            best.iter().filter(|&&b| b >= cut).count() as f64 / best.len() as f64
        })
        .collect())
}

// ── attention-map export ────────────────────────────────────────────

/// The spatial-attention softmax row of one (class, query pixel), taken
/// straight from the instrumented block and reshaped to the reduced grid.
pub fn attention_map_export(
    tape: &mut Tape,
    store: &ParamStore,
    block: &SpatialBlock,
    volume: &CostVolume,
    class_index: usize,
    query: (usize, usize),
) -> Result<Tensor> {
    let shape = tape.shape(volume.data).to_vec();
    if shape.len() != 4 {
        return Err(Error::Dimension("attention export wants a latent volume".into()));
    }
    let (p, h, w) = (shape[0], shape[2], shape[3]);
    if class_index >= p {
        return Err(Error::Contract(format!(
            "class index {class_index} out of range (P={p})"
        )));
    }
    let (qy, qx) = query;
    if qy >= h || qx >= w {
        return Err(Error::Contract(format!(
            "query pixel ({qy},{qx}) out of range ({h}x{w})"
        )));
    }
    let (_, probs) = block.forward_with_probs(tape, store, volume.data)?;
    let ps = tape.shape(probs).to_vec(); // [P, H*W, L]
    let l = ps[2];
    let r1 = block.config.r1;
    let (hr, wr) = (h / r1, w / r1);
    debug_assert_eq!(l, hr * wr);
    let row_start = (class_index * h * w + qy * w + qx) * l;
    let row = tape.data(probs)[row_start..row_start + l].to_vec();
    Tensor::new(vec![hr, wr], row)
}
