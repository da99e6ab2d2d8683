//! Command-line entry point: `hlb <subcommand> [options]`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::cost::{count_flops, count_params, emit_report, ReportFormat};
use crate::data::{
    generate_dataset, load_image, netpbm, save_mask, Dataset, DatasetManifest, GenOptions, Split,
};
use crate::error::{Error, Result};
use crate::loss::WeightMapMode;
use crate::model::{load_checkpoint, Model, ModelSpec};
use crate::tensor::softmax_channels;
use crate::train::{
    bench, evaluate_identity, evaluate_model, predict_masks, train, TrainConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "hlb", version, about = "Light-weight portrait segmentation on the CPU")]
struct Cli {
    /// Seed for data generation, initialisation and shuffling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key = value` file; flags given on the command line take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Channel decrease rate inside the factorized blocks.
    #[arg(long, global = true, value_parser = ["2", "4"])]
    dr: Option<String>,
    /// Loss weighting: `inverted` (1 + (1 - d/dmax)), `literal` (1 + d/dmax) or `uniform`.
    #[arg(long = "weight-map", global = true, value_parser = ["literal", "inverted", "uniform"])]
    weight_map: Option<String>,
    /// Base directory for every relative path.
    #[arg(long, global = true, default_value = ".")]
    root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic train/test dataset.
    GenData(GenDataArgs),
    /// Print parameter and FLOP counts per layer.
    Analyze(AnalyzeArgs),
    /// Train a model and write its RunLog and checkpoints.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Segment a single PPM image.
    Infer(InferArgs),
    /// Time single-image forwards.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long, default_value = "data")]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long = "train", default_value_t = 200)]
    train_count: usize,
    #[arg(long = "test", default_value_t = 50)]
    test_count: usize,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Input size as `WxH` or a single side, or `none` for parameters only.
    #[arg(long, default_value = "512x512")]
    input: String,
    /// `table`, `csv` or `jsonl`.
    #[arg(long, default_value = "table")]
    format: String,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    /// Dataset root containing `train/` and `test/`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for the RunLog and checkpoints.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, default_value = "run/best.ckpt")]
    checkpoint: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    /// Per-image CSV report.
    #[arg(long, default_value = "eval.csv")]
    report: PathBuf,
    /// Score the ground truth against itself instead of running a model.
    #[arg(long, hide = true)]
    identity: bool,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long, default_value = "run/best.ckpt")]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Predicted mask (PGM).
    #[arg(long)]
    output: PathBuf,
    /// Optional per-pixel confidence of the predicted class (PGM).
    #[arg(long)]
    confidence: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Checkpoint to time; a freshly initialised model is used when omitted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Square input side; repeat for several sizes.
    #[arg(long = "size", default_values_t = [224usize, 512])]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    iterations: usize,
    #[arg(long, default_value_t = 5)]
    warmup: usize,
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_USAGE,
        Error::Dimension { .. }
        | Error::Validation(_)
        | Error::Format { .. }
        | Error::SpecMismatch(_)
        | Error::MissingSamples(_)
        | Error::Io { .. } => EXIT_DATA,
        Error::State(_) => EXIT_INTERNAL,
    }
}

/// Parses `argv` (including the program name), runs the command and returns the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let mut stdout = std::io::stdout().lock();
    match execute(cli, &mut stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

struct Context {
    root: PathBuf,
    config: TrainConfig,
    /// Whether the model spec was set explicitly (flag or config file).
    spec_given: bool,
}

impl Context {
    fn path(&self, p: &Path) -> PathBuf {
        self.root.join(p)
    }
}

fn context(cli: &Cli) -> Result<Context> {
    let root = cli.root.clone();
    let mut config = TrainConfig::default();
    let mut spec_given = false;
    if let Some(path) = &cli.config {
        let path = root.join(path);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        for (k, v) in crate::config::parse_pairs(&text)? {
            config.set(&k, &v)?;
        }
        spec_given = config.model != ModelSpec::default();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(dr) = &cli.dr {
        config.set("decrease_rate", dr)?;
        spec_given = true;
    }
    if let Some(mode) = &cli.weight_map {
        config.weight_map = mode.parse::<WeightMapMode>().map_err(Error::Config)?;
    }
    Ok(Context {
        root,
        config,
        spec_given,
    })
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let mut ctx = context(&cli)?;
    let io = |e: std::io::Error| Error::io("<stdout>", e);
    match cli.command {
        Command::GenData(a) => {
            let opts = GenOptions {
                seed: ctx.config.seed,
                size: a.size,
                train: a.train_count,
                test: a.test_count,
            };
            let dir = ctx.path(&a.out);
            let (tr, te) = generate_dataset(&dir, &opts)?;
            writeln!(
                out,
                "wrote {} train and {} test samples ({}x{}) to {}",
                tr.ids.len(),
                te.ids.len(),
                a.size,
                a.size,
                dir.display()
            )
            .map_err(io)?;
        }
        Command::Analyze(a) => {
            let format: ReportFormat = a.format.parse()?;
            let report = match parse_hw(&a.input)? {
                Some(hw) => count_flops(&ctx.config.model, hw)?,
                None => count_params(&ctx.config.model)?,
            };
            write!(out, "{}", emit_report(&report, format)?).map_err(io)?;
        }
        Command::Train(a) => {
            let cfg = &mut ctx.config;
            if let Some(v) = a.epochs {
                cfg.epochs = v;
            }
            if let Some(v) = a.lr {
                cfg.lr0 = v;
            }
            if let Some(v) = a.decay {
                cfg.decay = v;
            }
            if let Some(v) = a.batch_size {
                cfg.batch_size = v;
            }
            if let Some(v) = a.data {
                cfg.data_root = v;
            }
            if let Some(v) = a.out {
                cfg.out_dir = v;
            }
            cfg.data_root = ctx.root.join(&cfg.data_root);
            cfg.out_dir = ctx.root.join(&cfg.out_dir);
            writeln!(out, "epoch,loss,miou,lr,seconds").map_err(io)?;
            let mut failed = None;
            let outcome = train(cfg, &mut |r| {
                if let Err(e) = writeln!(out, "{},{:.6},{:.2},{:.3e},{:.1}", r.epoch, r.loss, r.miou, r.lr, r.seconds) {
                    failed.get_or_insert(e);
                }
            })?;
            if let Some(e) = failed {
                return Err(io(e));
            }
            writeln!(out, "final checkpoint: {}", outcome.log.final_checkpoint.display()).map_err(io)?;
            if let (Some(best), Some(path)) = (outcome.log.best(), &outcome.log.best_checkpoint) {
                writeln!(out, "best checkpoint: {} (epoch {}, mIoU {:.2})", path.display(), best.epoch, best.miou)
                    .map_err(io)?;
            }
        }
        Command::Eval(a) => {
            let split: Split = a.split.parse()?;
            let data_root = ctx.path(a.data.as_ref().unwrap_or(&ctx.config.data_root));
            let manifest = DatasetManifest::load(&data_root, split)?;
            let report = if a.identity {
                evaluate_identity(&Dataset::load(&manifest, WeightMapMode::Uniform)?)?
            } else {
                let model = load_model(&ctx, &a.checkpoint)?;
                evaluate_model(&model, &Dataset::load(&manifest, WeightMapMode::Uniform)?)?
            };
            let report_path = ctx.path(&a.report);
            report.write_csv(&report_path)?;
            writeln!(out, "images        {}", report.per_image.len()).map_err(io)?;
            writeln!(out, "mIoU          {:.2}", report.miou).map_err(io)?;
            writeln!(out, "pooled mIoU   {:.2}", report.pooled_miou).map_err(io)?;
            writeln!(out, "report        {}", report_path.display()).map_err(io)?;
        }
        Command::Infer(a) => {
            let model = load_model(&ctx, &a.checkpoint)?;
            let image = load_image(&ctx.path(&a.input))?;
            let logits = model.forward(&image)?;
            let mask = predict_masks(&logits)?.remove(0);
            let mask_path = ctx.path(&a.output);
            save_mask(&mask_path, &mask)?;
            if let Some(conf) = &a.confidence {
                let probs = softmax_channels(&logits);
                let (h, w) = mask.dims();
                let values: Vec<f64> = (0..h * w)
                    .map(|i| probs.plane(0, mask.data()[i] as usize)[i])
                    .collect();
                let path = ctx.path(conf);
                if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                }
                std::fs::write(&path, netpbm::encode_pgm_gray(&values, h, w)).map_err(|e| Error::io(&path, e))?;
            }
            writeln!(
                out,
                "wrote {}x{} mask to {} ({:.1}% portrait)",
                mask.width(),
                mask.height(),
                mask_path.display(),
                100.0 * mask.foreground_fraction()
            )
            .map_err(io)?;
        }
        Command::Bench(a) => {
            let model = match &a.checkpoint {
                Some(p) => load_model(&ctx, p)?,
                None => Model::new(&ctx.config.model, ctx.config.seed)?,
            };
            let model = model.cast::<f32>();
            for size in a.sizes {
                if size == 0 || size % 8 != 0 {
                    return Err(Error::Config(format!("bench size {size} is not a positive multiple of 8")));
                }
                let report = bench(&model, size, a.iterations, a.warmup)?;
                writeln!(out, "{report}\n").map_err(io)?;
            }
        }
    }
    Ok(())
}

/// Loads a checkpoint; when the model spec was given explicitly it must match.
fn load_model(ctx: &Context, checkpoint: &Path) -> Result<Model<f64>> {
    let expected = ctx.spec_given.then_some(&ctx.config.model);
    load_checkpoint(&ctx.path(checkpoint), expected)
}

fn parse_hw(s: &str) -> Result<Option<(usize, usize)>> {
    if s.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    let bad = || Error::Config(format!("input size `{s}` is not `WxH`, a single side, or `none`"));
    let (w, h) = match s.split_once(['x', 'X']) {
        Some((w, h)) => (w.trim().parse().map_err(|_| bad())?, h.trim().parse().map_err(|_| bad())?),
        None => {
            let v: usize = s.trim().parse().map_err(|_| bad())?;
            (v, v)
        }
    };
    Ok(Some((h, w)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn input_sizes() {
        assert_eq!(parse_hw("512x256").unwrap(), Some((256, 512)));
        assert_eq!(parse_hw("224").unwrap(), Some((224, 224)));
        assert_eq!(parse_hw("none").unwrap(), None);
        assert!(parse_hw("12y").is_err());
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        assert_eq!(run(["hlb", "analyze", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["hlb", "analyze", "--dr", "3"]), EXIT_USAGE);
    }
}
