//! Micro-benchmarks of the MaxDropout and MaxDropoutV2 mask kernels.
//!
//! Each run times "generate mask + apply" (or mask generation alone) on one
//! fixed random tensor, single-threaded, and reports the median and 10th/90th
//! percentiles of the post-warmup wall times. The number of threshold
//! comparisons is taken from an instrumented run and checked against the
//! closed form (`n*c*h*w` for MaxDropout, `n*h*w` for MaxDropoutV2).

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::hint::black_box;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use statrs::statistics::{Data, Median, OrderStatistics};

use crate::error::{Error, Result};
use crate::regularizers::{self, analytic_comparisons, CountComparisons, DropConfig, Variant};
use crate::rng::Rng;
use crate::tensor::{Shape, Tensor};

pub const MIN_ITERS: usize = 30;
pub const MIN_WARMUP: usize = 5;
/// Default cap on benchmarked tensor size (elements).
pub const DEFAULT_MAX_ELEMENTS: usize = 1 << 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum KernelMode {
    /// Mask generation followed by applying it to the tensor.
    #[default]
    MaskAndApply,
    MaskOnly,
}

impl KernelMode {
    pub fn name(self) -> &'static str {
        match self {
            KernelMode::MaskAndApply => "mask+apply",
            KernelMode::MaskOnly => "mask",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchOptions {
    pub iters: usize,
    pub warmup: usize,
    pub seed: u64,
    pub rate: f32,
    pub mode: KernelMode,
    pub max_elements: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            iters: MIN_ITERS,
            warmup: MIN_WARMUP,
            seed: 0,
            rate: 0.5,
            mode: KernelMode::MaskAndApply,
            max_elements: DEFAULT_MAX_ELEMENTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub kernel: String,
    pub variant: Variant,
    pub mode: KernelMode,
    pub shape: [usize; 4],
    pub iterations: usize,
    pub warmup: usize,
    pub times_ns: Vec<u64>,
    pub median_ns: f64,
    pub p10_ns: f64,
    pub p90_ns: f64,
    pub comparison_count: u64,
}

/// Reject options and shapes [`bench_kernel`] would refuse.
pub fn check_options(variant: Variant, shape: Shape, opts: &BenchOptions) -> Result<()> {
    if variant == Variant::Dropout {
        return Err(Error::Config("only the max-dropout variants are benchmarked".into()));
    }
    if opts.iters < MIN_ITERS || opts.warmup < MIN_WARMUP {
        return Err(Error::Config(format!(
            "need iters >= {MIN_ITERS} and warmup >= {MIN_WARMUP}, got {} / {}",
            opts.iters, opts.warmup
        )));
    }
    if shape.len() > opts.max_elements {
        return Err(Error::OverMemoryCap {
            elements: shape.len(),
            cap: opts.max_elements,
        });
    }
    Ok(())
}

/// Threshold comparisons counted by an instrumented run of the mask kernel.
pub fn counted_comparisons(t: &Tensor, cfg: &DropConfig) -> Result<u64> {
    let mut counter = CountComparisons::default();
    match cfg.variant {
        Variant::MaxDropout => regularizers::max_dropout_mask_counted(t, cfg, &mut counter)?,
        Variant::MaxDropoutV2 => regularizers::max_dropout_v2_mask_counted(t, cfg, &mut counter)?,
        Variant::Dropout => return Ok(0),
    };
    Ok(counter.0)
}

fn run_once(t: &Tensor, cfg: &DropConfig, mode: KernelMode) -> Result<()> {
    match mode {
        KernelMode::MaskAndApply => {
            black_box(regularizers::forward(black_box(t), cfg)?);
        }
        KernelMode::MaskOnly => {
            let mask = match cfg.variant {
                Variant::MaxDropoutV2 => regularizers::max_dropout_v2_mask(black_box(t), cfg)?,
                _ => regularizers::max_dropout_mask(black_box(t), cfg)?,
            };
            black_box(mask);
        }
    }
    Ok(())
}

pub fn bench_kernel(variant: Variant, shape: Shape, opts: &BenchOptions) -> Result<BenchReport> {
    check_options(variant, shape, opts)?;
    let input = Tensor::uniform(shape, &mut Rng::new(opts.seed));
    let cfg = DropConfig::new(variant, opts.rate)?;

    let counted = counted_comparisons(&input, &cfg)?;
    let analytic = analytic_comparisons(variant, shape);
    if counted != analytic {
        return Err(Error::Invariant(format!(
            "{variant}: instrumented kernel counted {counted} comparisons, closed form gives {analytic}"
        )));
    }

    for _ in 0..opts.warmup {
        run_once(&input, &cfg, opts.mode)?;
    }
    let mut times_ns = Vec::with_capacity(opts.iters);
    for _ in 0..opts.iters {
        let start = Instant::now();
        run_once(&input, &cfg, opts.mode)?;
        times_ns.push(start.elapsed().as_nanos() as u64);
    }

    let mut data = Data::new(times_ns.iter().map(|&t| t as f64).collect::<Vec<_>>());
    Ok(BenchReport {
        kernel: format!("{variant}/{}", opts.mode.name()),
        variant,
        mode: opts.mode,
        shape: shape.dims(),
        iterations: opts.iters,
        warmup: opts.warmup,
        median_ns: data.median(),
        p10_ns: data.percentile(10),
        p90_ns: data.percentile(90),
        times_ns,
        comparison_count: counted,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Comparison {
    /// Median wall time of the second report over the first.
    pub time_ratio: f64,
    pub comparison_ratio: f64,
    /// `time_ratio < 1`.
    pub pass: bool,
}

/// Compare a MaxDropout report (`v1`) against a MaxDropoutV2 report (`v2`).
pub fn compare(v1: &BenchReport, v2: &BenchReport) -> Result<Comparison> {
    if v1.shape != v2.shape || v1.iterations != v2.iterations {
        return Err(Error::Config(format!(
            "reports differ in shape or iterations: {:?}x{} vs {:?}x{}",
            v1.shape, v1.iterations, v2.shape, v2.iterations
        )));
    }
    let time_ratio = v2.median_ns / v1.median_ns;
    Ok(Comparison {
        time_ratio,
        comparison_ratio: v2.comparison_count as f64 / v1.comparison_count as f64,
        pass: time_ratio < 1.0,
    })
}

pub fn write_jsonl<W: Write>(reports: &[BenchReport], mut out: W) -> Result<()> {
    for r in reports {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CsvRow<'a> {
    kernel: &'a str,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    iterations: usize,
    warmup: usize,
    median_ns: f64,
    p10_ns: f64,
    p90_ns: f64,
    comparison_count: u64,
}

pub fn write_csv<W: Write>(reports: &[BenchReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        let [n, c, h, wd] = r.shape;
        w.serialize(CsvRow {
            kernel: &r.kernel,
            n,
            c,
            h,
            w: wd,
            iterations: r.iterations,
            warmup: r.warmup,
            median_ns: r.median_ns,
            p10_ns: r.p10_ns,
            p90_ns: r.p90_ns,
            comparison_count: r.comparison_count,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn table(reports: &[BenchReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<28} {:>18} {:>6} {:>12} {:>12} {:>12} {:>12}",
        "kernel", "shape", "iters", "median ms", "p10 ms", "p90 ms", "comparisons"
    );
    for r in reports {
        let shape = format!("{}x{}x{}x{}", r.shape[0], r.shape[1], r.shape[2], r.shape[3]);
        let _ = writeln!(
            s,
            "{:<28} {:>18} {:>6} {:>12.3} {:>12.3} {:>12.3} {:>12}",
            r.kernel,
            shape,
            r.iterations,
            r.median_ns / 1e6,
            r.p10_ns / 1e6,
            r.p90_ns / 1e6,
            r.comparison_count
        );
    }
    s
}

/// Exclusive lock held while a benchmark suite runs; removed on drop.
#[derive(Debug)]
pub struct BenchLock {
    path: PathBuf,
}

impl BenchLock {
    pub fn default_path() -> PathBuf {
        std::env::temp_dir().join("maxdropout-bench.lock")
    }

    /// Fails with [`Error::BenchBusy`] while a live process holds `path`.
    /// A lock left behind by a dead process is taken over.
    pub fn acquire(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    writeln!(f, "{}", std::process::id())?;
                    return Ok(Self { path });
                }
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                    if holder_alive(&path) {
                        return Err(Error::BenchBusy(path.display().to_string()));
                    }
                    let _ = fs::remove_file(&path);
                }
                Err(e) => return Err(e.into()),
            }
        }
        Err(Error::BenchBusy(path.display().to_string()))
    }
}

impl Drop for BenchLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn holder_alive(path: &Path) -> bool {
    let Ok(text) = fs::read_to_string(path) else {
        return true;
    };
    let Ok(pid) = text.trim().parse::<u32>() else {
        // being written right now, or foreign content: assume held
        return true;
    };
    if cfg!(target_os = "linux") {
        Path::new(&format!("/proc/{pid}")).exists()
    } else {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> BenchOptions {
        BenchOptions::default()
    }

    #[test]
    fn counts_for_64_channel_map() {
        let s = Shape::new(1, 64, 32, 32).unwrap();
        let v1 = bench_kernel(Variant::MaxDropout, s, &opts()).unwrap();
        let v2 = bench_kernel(Variant::MaxDropoutV2, s, &opts()).unwrap();
        assert_eq!(v1.comparison_count, 65_536);
        assert_eq!(v2.comparison_count, 1_024);
        assert_eq!(v1.times_ns.len(), 30);
        assert!(v1.p10_ns <= v1.median_ns && v1.median_ns <= v1.p90_ns);
        let cmp = compare(&v1, &v2).unwrap();
        assert_eq!(cmp.comparison_ratio, 1.0 / 64.0);
    }

    #[test]
    fn degenerate_shape_counts_one() {
        let s = Shape::new(1, 1, 1, 1).unwrap();
        for v in [Variant::MaxDropout, Variant::MaxDropoutV2] {
            assert_eq!(bench_kernel(v, s, &opts()).unwrap().comparison_count, 1);
        }
    }

    #[test]
    fn identical_reports_compare_to_one() {
        let s = Shape::new(1, 4, 8, 8).unwrap();
        let r = bench_kernel(Variant::MaxDropout, s, &opts()).unwrap();
        let cmp = compare(&r, &r).unwrap();
        assert_eq!(cmp.time_ratio, 1.0);
        assert_eq!(cmp.comparison_ratio, 1.0);
        assert!(!cmp.pass);
    }

    #[test]
    fn rejects_bad_options() {
        let s = Shape::new(1, 4, 8, 8).unwrap();
        let few = BenchOptions { iters: 10, ..opts() };
        assert!(matches!(bench_kernel(Variant::MaxDropout, s, &few), Err(Error::Config(_))));
        let cold = BenchOptions { warmup: 1, ..opts() };
        assert!(bench_kernel(Variant::MaxDropout, s, &cold).is_err());
        let tiny = BenchOptions { max_elements: 100, ..opts() };
        assert!(matches!(
            bench_kernel(Variant::MaxDropout, s, &tiny),
            Err(Error::OverMemoryCap { elements: 256, cap: 100 })
        ));
        assert!(bench_kernel(Variant::Dropout, s, &opts()).is_err());
    }

    #[test]
    fn compare_requires_matching_runs() {
        let a = bench_kernel(Variant::MaxDropout, Shape::new(1, 2, 4, 4).unwrap(), &opts()).unwrap();
        let b = bench_kernel(Variant::MaxDropoutV2, Shape::new(1, 2, 4, 8).unwrap(), &opts()).unwrap();
        assert!(compare(&a, &b).is_err());
    }

    #[test]
    fn mask_only_mode() {
        let s = Shape::new(2, 8, 8, 8).unwrap();
        let o = BenchOptions {
            mode: KernelMode::MaskOnly,
            ..opts()
        };
        let r = bench_kernel(Variant::MaxDropoutV2, s, &o).unwrap();
        assert_eq!(r.kernel, "max-dropout-v2/mask");
        assert_eq!(r.comparison_count, 128);
    }

    #[test]
    fn report_formats() {
        let r = bench_kernel(Variant::MaxDropout, Shape::new(1, 2, 4, 4).unwrap(), &opts()).unwrap();
        let mut jl = Vec::new();
        write_jsonl(&[r.clone(), r.clone()], &mut jl).unwrap();
        let lines: Vec<serde_json::Value> = String::from_utf8(jl)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0]["comparison_count"], 32);
        assert_eq!(lines[0]["variant"], "max-dropout");
        let mut csv = Vec::new();
        write_csv(std::slice::from_ref(&r), &mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("kernel,n,c,h,w,"));
        assert!(table(&[r]).contains("max-dropout/mask+apply"));
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bench.lock");
        let held = BenchLock::acquire(&path).unwrap();
        assert!(matches!(BenchLock::acquire(&path), Err(Error::BenchBusy(_))));
        drop(held);
        assert!(!path.exists());
        let _again = BenchLock::acquire(&path).unwrap();
    }

    #[test]
    fn stale_lock_is_taken_over() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bench.lock");
        // pid far above any default pid_max
        fs::write(&path, "4294967295\n").unwrap();
        if cfg!(target_os = "linux") {
            assert!(BenchLock::acquire(&path).is_ok());
        }
    }
}
