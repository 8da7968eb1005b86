//! `errseg` — command-line surface for the redundancy-reduced
//! segmentation pipeline and its verification harness.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use errseg_core::analysis;
use errseg_core::cost::{score_classes, select_classes, Vocabulary};
use errseg_core::io;
use errseg_core::pipeline::{synth_dataset, train_toy, Model, PipelineConfig, SyntheticScene};
use errseg_core::{Error, Tape, Tensor};

#[derive(Parser)]
#[command(name = "errseg", version, about = "Redundancy-reduced cost-map segmentation, desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArg {
    /// Flat `key = value` config file; defaults apply when omitted.
    /// The ERRSEG_SEED environment variable overrides the seed either way.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<PipelineConfig, Error> {
        let cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => {
                let mut cfg = PipelineConfig::default();
                cfg.apply_seed_env()?;
                cfg
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the forward pass on a synthetic scene; write logits (ERRT),
    /// predicted labels (ERRT) and a PGM preview.
    Forward {
        #[command(flatten)]
        config: ConfigArg,
        /// Scene index within the deterministic scene stream.
        #[arg(long, default_value_t = 0)]
        scene: usize,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Score a raw cost map (ERRT [K,Hc,Wc]) and print the selection as
    /// `class_index score` lines.
    Select {
        /// Path to the raw cost-map tensor.
        cost_map: PathBuf,
        #[arg(long, default_value_t = 3)]
        top_k: usize,
        #[arg(long, default_value_t = 0.1)]
        lambda: f64,
        /// Number of classes to retain.
        #[arg(long, default_value_t = 16)]
        retain: usize,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Instrumented MAC accounting against the analytic savings formulas.
    BenchFlops {
        #[command(flatten)]
        config: ConfigArg,
        /// Sweep the verification grid (K x P x r1 x r2) instead of the
        /// single configured point.
        #[arg(long)]
        grid: bool,
    },
    /// Randomized verification of the contribution-ratio property.
    VerifyProp1 {
        #[arg(long, default_value_t = 10000)]
        trials: usize,
        #[arg(long, default_value_t = 20260101)]
        seed: u64,
        /// Largest class count drawn per trial.
        #[arg(long, default_value_t = 32)]
        max_classes: usize,
    },
    /// Run the toy training loop; emit a `step,loss,miou` CSV.
    TrainToy {
        #[command(flatten)]
        config: ConfigArg,
        /// Write the CSV to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export one spatial-attention row (ERRT, reduced-grid shape).
    ExportAttn {
        #[command(flatten)]
        config: ConfigArg,
        /// Local class channel index.
        #[arg(long)]
        class_index: usize,
        /// Query pixel as `y,x` on the latent grid.
        #[arg(long)]
        pixel: String,
        #[arg(long, default_value_t = 0)]
        scene: usize,
        /// Aggregation block to instrument.
        #[arg(long, default_value_t = 0)]
        block: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Vocabulary redundancy fractions from (K, average present) pairs.
    VocabStats {
        /// File with `k avg` or `name k avg` lines; use the flags for a
        /// single pair instead.
        file: Option<PathBuf>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        avg: Option<f64>,
    },
    /// Label-level similarity between two embedding sets (ERRT [K,D]).
    VocabSim {
        #[arg(long)]
        eval: PathBuf,
        #[arg(long)]
        train: PathBuf,
        /// Comma-separated cosine thresholds.
        #[arg(long, default_value = "1.00,0.95,0.90,0.85")]
        thresholds: String,
    },
}

fn nth_scene(cfg: &PipelineConfig, model: &Model, index: usize) -> SyntheticScene {
    synth_dataset(index + 1, cfg, &model.vocab, cfg.seed)
        .pop()
        .expect("index+1 scenes generated")
}

fn run_forward(config: &ConfigArg, scene_index: usize, out_dir: &Path) -> Result<(), Error> {
    let cfg = config.load()?;
    let model = Model::new(cfg.clone())?;
    let scene = nth_scene(&cfg, &model, scene_index);
    let mut tape = Tape::new();
    let image = tape.input(scene.image.clone());
    let out = model.forward_full(&mut tape, image)?;
    if out.selection.clamped {
        eprintln!(
            "warning: requested P exceeded the vocabulary size; clamped to {}",
            out.selection.params.p
        );
    }
    std::fs::create_dir_all(out_dir)?;

    let logits = tape.value(out.logit_map.logits).clone();
    io::write_tensor(&out_dir.join("logits.errt"), &logits)?;

    let pred = out.logit_map.argmax_vocab(&tape);
    let (lh, lw) = (cfg.h / 4, cfg.w / 4);
    let label_tensor = Tensor::new(vec![lh, lw], pred.iter().map(|&v| v as f64).collect())?;
    io::write_tensor(&out_dir.join("pred_labels.errt"), &label_tensor)?;
    io::write_pgm(&out_dir.join("pred.pgm"), &pred, lh, lw, cfg.k.saturating_sub(1))?;

    println!("scene {scene_index}: present classes {:?}", scene.present_classes);
    println!(
        "selection (top {}): {:?}",
        out.selection.params.p, out.selection.selected
    );
    println!("wrote logits.errt, pred_labels.errt, pred.pgm to {}", out_dir.display());
    Ok(())
}

fn run_select(
    cost_map: &Path,
    top_k: usize,
    lambda: f64,
    retain: usize,
    out: Option<&Path>,
) -> Result<(), Error> {
    let raw = io::read_tensor(cost_map)?;
    let scores = score_classes(&raw, top_k, lambda)?;
    let selection = select_classes(&scores, top_k, lambda, retain)?;
    if selection.clamped {
        eprintln!(
            "warning: requested P={retain} exceeds {} classes; clamped",
            scores.len()
        );
    }
    let text = io::format_selection(&selection.selected, &selection.scores);
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run_bench_flops(config: &ConfigArg, grid: bool) -> Result<(), Error> {
    let cfg = config.load()?;
    if !grid {
        let report = analysis::flop_count(&cfg)?;
        print!("{}", report.to_text());
        return Ok(());
    }
    for k in [150usize, 847] {
        let mut base_cfg = cfg.clone();
        base_cfg.k = k;
        base_cfg.p_infer = k;
        base_cfg.agg.r1 = 1;
        base_cfg.agg.r2 = 1;
        let baseline = analysis::measure_pipeline(&base_cfg)?;
        for p in [16usize, 32, 48] {
            for r1 in [1usize, 2] {
                for r2 in [1usize, 2] {
                    let mut c = cfg.clone();
                    c.k = k;
                    c.p_infer = p;
                    c.agg.r1 = r1;
                    c.agg.r2 = r2;
                    let run = analysis::measure_pipeline(&c)?;
                    let spat = 1.0 - run.attn_spatial as f64 / baseline.attn_spatial as f64;
                    let class = 1.0 - run.attn_class as f64 / baseline.attn_class as f64;
                    println!(
                        "k={k} p={p} r1={r1} r2={r2} savings_spatial={spat:.6} (analytic {:.6}) savings_class={class:.6} (analytic {:.6})",
                        analysis::analytic_spatial_savings(k, p, r1),
                        analysis::analytic_class_savings(k, p, r2),
                    );
                }
            }
        }
    }
    Ok(())
}

fn run_verify_prop1(trials: usize, seed: u64, max_classes: usize) -> Result<bool, Error> {
    if trials == 0 {
        return Err(Error::Parameter("trials must be >= 1".into()));
    }
    if max_classes < 3 {
        return Err(Error::Parameter("max_classes must be >= 3".into()));
    }
    let summary = analysis::fuzz_contribution(trials, seed, max_classes);
    let ok = summary.violations == 0
        && summary.worst_margin > 0.0
        && summary.worst_alpha_dev <= 1e-12
        && summary.worst_identity_residual <= 1e-9;
    println!(
        "trials={} violations={} worst_margin={:.3e} alpha_dev={:.3e} identity_residual={:.3e} max_beta={:.6}",
        summary.trials,
        summary.violations,
        summary.worst_margin,
        summary.worst_alpha_dev,
        summary.worst_identity_residual,
        summary.max_beta
    );
    println!("{}", if ok { "PASS" } else { "FAIL" });
    Ok(ok)
}

fn run_train_toy(config: &ConfigArg, out: Option<&Path>) -> Result<(), Error> {
    let cfg = config.load()?;
    let (_, log) = train_toy(&cfg)?;
    let mut csv = String::from("step,loss,miou\n");
    let mut last_miou = f64::NAN;
    for r in &log.records {
        if let Some(m) = r.miou {
            last_miou = m;
        }
        csv.push_str(&format!("{},{},{}\n", r.step, r.loss, last_miou));
    }
    match out {
        Some(path) => std::fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    eprintln!(
        "initial loss {:.6}, final loss {:.6}, final mIoU {:.4}",
        log.initial_loss, log.final_loss, log.final_miou
    );
    Ok(())
}

fn run_export_attn(
    config: &ConfigArg,
    class_index: usize,
    pixel: &str,
    scene_index: usize,
    block: usize,
    out: &Path,
) -> Result<(), Error> {
    let cfg = config.load()?;
    let (py, px) = pixel
        .split_once(',')
        .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)))
        .ok_or_else(|| Error::Parse(format!("--pixel wants `y,x`, got `{pixel}`")))?;
    let model = Model::new(cfg.clone())?;
    let scene = nth_scene(&cfg, &model, scene_index);
    let mut tape = Tape::new();
    let image = tape.input(scene.image.clone());
    let (latent, _) = model.forward_to_latent(&mut tape, image, cfg.p_infer)?;
    let blocks = &model.stack.blocks;
    let spatial = &blocks
        .get(block)
        .ok_or_else(|| Error::Contract(format!("block {block} out of range ({})", blocks.len())))?
        .0;
    let row = analysis::attention_map_export(
        &mut tape,
        &model.store,
        spatial,
        &latent,
        class_index,
        (py, px),
    )?;
    io::write_tensor(out, &row)?;
    println!(
        "wrote {} ({}x{} row, sum {:.12})",
        out.display(),
        row.shape()[0],
        row.shape()[1],
        row.data().iter().sum::<f64>()
    );
    Ok(())
}

fn run_vocab_stats(file: Option<&Path>, classes: Option<usize>, avg: Option<f64>) -> Result<(), Error> {
    match (file, classes, avg) {
        (Some(path), _, _) => {
            let text = std::fs::read_to_string(path)?;
            for line in text.lines() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let fields: Vec<&str> = line.split_whitespace().collect();
                let (name, k, a) = match fields.as_slice() {
                    [k, a] => ("".to_string(), k.to_string(), a.to_string()),
                    [name, k, a] => (format!("{name} "), k.to_string(), a.to_string()),
                    _ => {
                        return Err(Error::Parse(format!(
                            "expected `k avg` or `name k avg`, got `{line}`"
                        )))
                    }
                };
                let k: usize = k
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad class count in `{line}`")))?;
                let a: f64 = a
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad average in `{line}`")))?;
                let frac = analysis::vocab_redundancy_stats(k, a)?;
                println!("{name}k={k} avg={a} redundancy={}", analysis::percent_one_decimal(frac));
            }
            Ok(())
        }
        (None, Some(k), Some(a)) => {
            let frac = analysis::vocab_redundancy_stats(k, a)?;
            println!("k={k} avg={a} redundancy={}", analysis::percent_one_decimal(frac));
            Ok(())
        }
        _ => Err(Error::Parameter(
            "vocab-stats wants a file, or both --classes and --avg".into(),
        )),
    }
}

fn run_vocab_sim(eval: &Path, train: &Path, thresholds: &str) -> Result<(), Error> {
    let parse_emb = |path: &Path| -> Result<Vocabulary, Error> {
        let emb = io::read_tensor(path)?;
        let k = emb.shape().first().copied().unwrap_or(0);
        Vocabulary::new((0..k).map(|i| format!("class_{i:03}")).collect(), emb)
    };
    let eval_vocab = parse_emb(eval)?;
    let train_vocab = parse_emb(train)?;
    let thresholds: Vec<f64> = thresholds
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad threshold `{t}`")))
        })
        .collect::<Result<_, _>>()?;
    let fractions = analysis::vocab_similarity(&eval_vocab, &train_vocab, &thresholds)?;
    for (thr, frac) in thresholds.iter().zip(&fractions) {
        if *thr >= 1.0 {
            println!("==1.00 {frac:.4}");
        } else {
            println!(">={thr:.2} {frac:.4}");
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool, Error> {
    match &cli.command {
        Command::Forward { config, scene, out_dir } => {
            run_forward(config, *scene, out_dir)?;
            Ok(true)
        }
        Command::Select { cost_map, top_k, lambda, retain, out } => {
            run_select(cost_map, *top_k, *lambda, *retain, out.as_deref())?;
            Ok(true)
        }
        Command::BenchFlops { config, grid } => {
            run_bench_flops(config, *grid)?;
            Ok(true)
        }
        Command::VerifyProp1 { trials, seed, max_classes } => {
            run_verify_prop1(*trials, *seed, *max_classes)
        }
        Command::TrainToy { config, out } => {
            run_train_toy(config, out.as_deref())?;
            Ok(true)
        }
        Command::ExportAttn { config, class_index, pixel, scene, block, out } => {
            run_export_attn(config, *class_index, pixel, *scene, *block, out)?;
            Ok(true)
        }
        Command::VocabStats { file, classes, avg } => {
            run_vocab_stats(file.as_deref(), *classes, *avg)?;
            Ok(true)
        }
        Command::VocabSim { eval, train, thresholds } => {
            run_vocab_sim(eval, train, thresholds)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
