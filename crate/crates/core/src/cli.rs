//! The `maxdropout` command line.
//!
//! Every subcommand accepts `--config FILE` with flat `key = value` lines;
//! flags given on the command line override the file. Exit codes: 0 success,
//! 2 usage or configuration error, 3 data/parse/I/O error, 4 internal
//! invariant violation (including training divergence).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::bench::{self, BenchLock, BenchOptions, KernelMode};
use crate::config;
use crate::error::{Error, Result};
use crate::ppm;
use crate::regularizers::{DropConfig, Variant};
use crate::sweep::{self, SweepConfig};
use crate::synth::SyntheticDataset;
use crate::tensor::{NormScope, Shape};
use crate::train::{self, parse_scope, TrainConfig};
use crate::visualize::visualize;

#[derive(Debug, Parser)]
#[command(name = "maxdropout", version, about = "MaxDropout / MaxDropoutV2 regularizers: visualize, train, bench, sweep")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Apply a drop variant (Train mode) to a PPM image and write the result.
    Visualize(VisualizeArgs),
    /// Train the toy CNN on the synthetic dataset and emit per-epoch metrics as CSV.
    Train(TrainArgs),
    /// Time MaxDropout vs MaxDropoutV2 mask kernels and count their comparisons.
    Bench(BenchArgs),
    /// Train over a grid of drop rates and report mean/std validation accuracy as CSV.
    Sweep(SweepArgs),
}

/// Flags shared by the regularizer-facing subcommands.
#[derive(Debug, Clone, Default, Args)]
pub struct DropFlags {
    /// dropout, max-dropout (v1) or max-dropout-v2 (v2); `none` disables the layer where allowed.
    #[arg(long)]
    pub variant: Option<String>,
    /// Drop rate in [0, 1).
    #[arg(long)]
    pub rate: Option<String>,
    /// Min-max normalization scope: per-sample or whole-tensor.
    #[arg(long)]
    pub scope: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
}

impl DropFlags {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        // variant before rate: a rate needs a variant to attach to
        [("seed", &self.seed), ("variant", &self.variant), ("rate", &self.rate), ("scope", &self.scope)]
            .into_iter()
            .filter_map(|(k, v)| v.clone().map(|v| (k, v)))
            .collect()
    }
}

#[derive(Debug, Args)]
pub struct VisualizeArgs {
    /// key = value file (variant, rate, scope, seed).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input image, binary PPM (P6) or PGM (P5), maxval 255.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Where to write the masked image.
    #[arg(long, short)]
    pub output: PathBuf,
    #[command(flatten)]
    pub drop: DropFlags,
    /// Also write the mask in the binary tensor dump format.
    #[arg(long)]
    pub dump_mask: Option<PathBuf>,
    /// Also write the raw (unclamped) layer output in the binary tensor dump format.
    #[arg(long)]
    pub dump_tensor: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// key = value file with any TrainConfig key, plus train_size and val_size.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub drop: DropFlags,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub lr0: Option<String>,
    #[arg(long)]
    pub momentum: Option<String>,
    #[arg(long)]
    pub weight_decay: Option<String>,
    #[arg(long)]
    pub lr_decay_factor: Option<String>,
    /// Comma list of epochs at which the learning rate decays.
    #[arg(long)]
    pub decay_epochs: Option<String>,
    /// Comma list of shape-preserving steps, e.g. `hflip,cutout:8,erasing`.
    #[arg(long)]
    pub augment: Option<String>,
    #[arg(long)]
    pub train_size: Option<String>,
    #[arg(long)]
    pub val_size: Option<String>,
    /// Write the metrics CSV here instead of standard output.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// key = value file (shapes, iters, warmup, seed, rate, mode, max_elements).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Tensor shape n,c,h,w; repeat for several shapes. Default 128,64,32,32.
    #[arg(long = "shape")]
    pub shapes: Vec<String>,
    /// Timed iterations per kernel (>= 30).
    #[arg(long)]
    pub iters: Option<String>,
    /// Untimed warmup iterations (>= 5).
    #[arg(long)]
    pub warmup: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub rate: Option<String>,
    /// mask+apply (default) or mask.
    #[arg(long)]
    pub mode: Option<String>,
    /// Refuse tensors with more elements than this.
    #[arg(long)]
    pub max_elements: Option<String>,
    /// Write one JSON object per kernel run to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the reports as CSV to this file.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Lockfile guarding against concurrent benchmark runs.
    #[arg(long)]
    pub lock: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// key = value file (rates, variants, reps, train_size, val_size, any TrainConfig key).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `lo:hi:step` or a comma list, e.g. 0.05:0.5:0.05.
    #[arg(long)]
    pub rates: Option<String>,
    /// Comma list; `none` adds the no-drop baseline.
    #[arg(long)]
    pub variants: Option<String>,
    /// Repetitions per grid point, each with its own seed.
    #[arg(long)]
    pub reps: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub train_size: Option<String>,
    #[arg(long)]
    pub val_size: Option<String>,
    #[arg(long)]
    pub scope: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::InvalidRate(_)
        | Error::InvalidShape(_)
        | Error::OverMemoryCap { .. }
        | Error::BenchBusy(_) => 2,
        Error::Parse { .. } | Error::Io(_) | Error::Csv(_) | Error::Json(_) => 3,
        Error::ShapeMismatch { .. } | Error::Diverged { .. } | Error::Invariant(_) => 4,
    }
}

/// Apply the config file, then the flags, through one `set` function.
fn settle<'a>(
    file: Option<&PathBuf>,
    flags: impl IntoIterator<Item = (&'a str, String)>,
    mut set: impl FnMut(&str, &str) -> Result<bool>,
) -> Result<()> {
    if let Some(path) = file {
        config::apply_all(&config::load(path)?, &mut set)?;
    }
    for (key, value) in flags {
        if !set(key, &value)? {
            return Err(Error::Config(format!("unknown setting '{key}'")));
        }
    }
    Ok(())
}

fn opt<'a>(key: &'a str, v: &Option<String>) -> Option<(&'a str, String)> {
    v.clone().map(|v| (key, v))
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{v}' for {key}")))
}

pub fn parse_shape(s: &str) -> Result<Shape> {
    let dims: Vec<usize> = s
        .split([',', 'x'])
        .map(|d| parse_num("shape", d))
        .collect::<Result<_>>()?;
    match dims[..] {
        [n, c, h, w] => Shape::new(n, c, h, w),
        _ => Err(Error::Config(format!("shape '{s}' needs four dimensions n,c,h,w"))),
    }
}

fn create(path: &PathBuf) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Run a parsed command line, writing normal output to `out`.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Visualize(a) => run_visualize(a, out),
        Command::Train(a) => run_train(a, out),
        Command::Bench(a) => run_bench(a, out),
        Command::Sweep(a) => run_sweep(a, out),
    }
}

fn run_visualize(a: &VisualizeArgs, out: &mut dyn Write) -> Result<()> {
    let mut variant = Variant::MaxDropoutV2;
    let mut rate = 0.5f32;
    let mut scope = NormScope::PerSample;
    let mut seed = 0u64;
    settle(a.config.as_ref(), a.drop.pairs(), |k, v| {
        match k {
            "variant" => variant = v.parse()?,
            "rate" => rate = parse_num(k, v)?,
            "scope" => scope = parse_scope(v)?,
            "seed" => seed = parse_num(k, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    })?;
    let cfg = DropConfig::new(variant, rate)?.with_scope(scope).with_seed(seed);

    let img = ppm::read(&a.input)?;
    let vis = visualize(&img, &cfg)?;
    ppm::write(&a.output, &vis.image)?;
    if let Some(p) = &a.dump_mask {
        vis.mask.values.write_dump(create(p)?)?;
    }
    if let Some(p) = &a.dump_tensor {
        vis.output.write_dump(create(p)?)?;
    }
    writeln!(
        out,
        "{variant} rate {rate}: dropped {} of {} mask entries, wrote {}",
        vis.mask.dropped(),
        vis.mask.values.len(),
        a.output.display()
    )?;
    Ok(())
}

fn run_train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = TrainConfig::toy();
    let (mut train_size, mut val_size) = (2000usize, 500usize);
    let flags = a.drop.pairs().into_iter().chain(
        [
            opt("epochs", &a.epochs),
            opt("batch_size", &a.batch_size),
            opt("lr0", &a.lr0),
            opt("momentum", &a.momentum),
            opt("weight_decay", &a.weight_decay),
            opt("lr_decay_factor", &a.lr_decay_factor),
            opt("decay_epochs", &a.decay_epochs),
            opt("augment", &a.augment),
            opt("train_size", &a.train_size),
            opt("val_size", &a.val_size),
        ]
        .into_iter()
        .flatten(),
    );
    settle(a.config.as_ref(), flags, |k, v| match k {
        "train_size" => parse_num(k, v).map(|n| train_size = n).map(|_| true),
        "val_size" => parse_num(k, v).map(|n| val_size = n).map(|_| true),
        _ => cfg.set(k, v),
    })?;
    cfg.validate()?;

    let (train_data, val_data) = SyntheticDataset::split(train_size, val_size, cfg.seed);
    let outcome = train::train(&cfg, &train_data, &val_data)?;
    match &a.metrics {
        Some(p) => {
            outcome.log.write_csv(create(p)?)?;
            if let Some(m) = outcome.log.last() {
                writeln!(
                    out,
                    "epoch {}: train_loss {:.4} train_acc {:.4} val_loss {:.4} val_acc {:.4}",
                    m.epoch, m.train_loss, m.train_acc, m.val_loss, m.val_acc
                )?;
            }
        }
        None => outcome.log.write_csv(&mut *out)?,
    }
    Ok(())
}

fn run_bench(a: &BenchArgs, out: &mut dyn Write) -> Result<()> {
    let mut opts = BenchOptions::default();
    let mut shapes: Vec<Shape> = Vec::new();
    let mut file_shapes: Vec<Shape> = Vec::new();
    let flags = [
        opt("iters", &a.iters),
        opt("warmup", &a.warmup),
        opt("seed", &a.seed),
        opt("rate", &a.rate),
        opt("mode", &a.mode),
        opt("max_elements", &a.max_elements),
    ]
    .into_iter()
    .flatten()
    .chain(a.shapes.iter().map(|s| ("shape", s.clone())));
    let mut from_flags = false;
    // config "shapes" is a ';' list; any --shape flag replaces it entirely
    settle(a.config.as_ref(), flags, |k, v| {
        match k {
            "iters" => opts.iters = parse_num(k, v)?,
            "warmup" => opts.warmup = parse_num(k, v)?,
            "seed" => opts.seed = parse_num(k, v)?,
            "rate" => opts.rate = parse_num(k, v)?,
            "max_elements" => opts.max_elements = parse_num(k, v)?,
            "mode" => {
                opts.mode = match v.trim() {
                    "mask+apply" | "mask-and-apply" => KernelMode::MaskAndApply,
                    "mask" | "mask-only" => KernelMode::MaskOnly,
                    other => return Err(Error::Config(format!("unknown bench mode '{other}'"))),
                }
            }
            "shapes" => file_shapes = v.split(';').map(parse_shape).collect::<Result<_>>()?,
            "shape" => {
                from_flags = true;
                shapes.push(parse_shape(v)?);
            }
            _ => return Ok(false),
        }
        Ok(true)
    })?;
    if !from_flags {
        shapes = file_shapes;
    }
    if shapes.is_empty() {
        shapes.push(Shape::new(128, 64, 32, 32)?);
    }
    // reject bad options before taking the lock or doing any work
    for &s in &shapes {
        bench::check_options(Variant::MaxDropout, s, &opts)?;
    }

    let _lock = BenchLock::acquire(a.lock.clone().unwrap_or_else(BenchLock::default_path))?;
    let mut reports = Vec::new();
    let mut summary = Vec::new();
    for &shape in &shapes {
        let v1 = bench::bench_kernel(Variant::MaxDropout, shape, &opts)?;
        let v2 = bench::bench_kernel(Variant::MaxDropoutV2, shape, &opts)?;
        let cmp = bench::compare(&v1, &v2)?;
        summary.push(format!(
            "{shape}: median time ratio v2/v1 = {:.3}, comparison ratio = {} ({} vs {}) {}",
            cmp.time_ratio,
            cmp.comparison_ratio,
            v2.comparison_count,
            v1.comparison_count,
            if cmp.pass { "PASS" } else { "FAIL" }
        ));
        reports.push(v1);
        reports.push(v2);
    }
    write!(out, "{}", bench::table(&reports))?;
    for line in summary {
        writeln!(out, "{line}")?;
    }
    if let Some(p) = &a.out {
        let mut f = create(p)?;
        bench::write_jsonl(&reports, &mut f)?;
        f.flush()?;
    }
    if let Some(p) = &a.csv {
        bench::write_csv(&reports, create(p)?)?;
    }
    Ok(())
}

fn run_sweep(a: &SweepArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = SweepConfig::default();
    let flags = [
        opt("seed", &a.seed),
        opt("scope", &a.scope),
        opt("rates", &a.rates),
        opt("variants", &a.variants),
        opt("reps", &a.reps),
        opt("epochs", &a.epochs),
        opt("train_size", &a.train_size),
        opt("val_size", &a.val_size),
    ]
    .into_iter()
    .flatten();
    settle(a.config.as_ref(), flags, |k, v| cfg.set(k, v))?;
    cfg.validate()?;
    let rows = sweep::run(&cfg)?;
    match &a.out {
        Some(p) => {
            sweep::write_csv(&rows, create(p)?)?;
            writeln!(out, "wrote {} rows to {}", rows.len(), p.display())?;
        }
        None => sweep::write_csv(&rows, &mut *out)?,
    }
    Ok(())
}
