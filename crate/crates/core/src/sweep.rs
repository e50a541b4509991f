//! Drop-rate grid: repeated toy-training runs per (variant, rate), reduced to
//! mean and standard deviation of the final validation accuracy.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use statrs::statistics::Statistics;

use crate::error::{Error, Result};
use crate::regularizers::{DropConfig, Variant};
use crate::synth::SyntheticDataset;
use crate::tensor::NormScope;
use crate::train::{parse_scope, train, TrainConfig};

/// `"lo:hi:step"` (inclusive, `round((hi - lo) / step) + 1` points) or a
/// comma list. Every rate must lie in `[0, 1)`.
pub fn parse_rates(spec: &str) -> Result<Vec<f32>> {
    let spec = spec.trim();
    let num = |s: &str| -> Result<f64> {
        s.trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad rate '{s}' in grid '{spec}'")))
    };
    let rates: Vec<f32> = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        let [lo, hi, step] = parts[..] else {
            return Err(Error::Config(format!("rate grid '{spec}' must be lo:hi:step")));
        };
        let (lo, hi, step) = (num(lo)?, num(hi)?, num(step)?);
        if step.is_nan() || step <= 0.0 || hi < lo {
            return Err(Error::Config(format!("rate grid '{spec}' needs lo <= hi and step > 0")));
        }
        let count = ((hi - lo) / step).round() as usize + 1;
        // snap to 1e-6 so 0.05 + 5 * 0.05 prints as 0.3
        (0..count)
            .map(|i| ((lo + i as f64 * step) * 1e6).round() / 1e6)
            .map(|r| r as f32)
            .collect()
    } else {
        spec.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| num(s).map(|r| r as f32))
            .collect::<Result<_>>()?
    };
    if rates.is_empty() {
        return Err(Error::Config("empty rate grid".into()));
    }
    if let Some(bad) = rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
        return Err(Error::InvalidRate(*bad));
    }
    Ok(rates)
}

/// Comma list of variant names; `none` stands for the no-drop baseline.
pub fn parse_variants(spec: &str) -> Result<Vec<Option<Variant>>> {
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| if s == "none" { Ok(None) } else { s.parse().map(Some) })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub rates: Vec<f32>,
    pub variants: Vec<Option<Variant>>,
    pub reps: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub scope: NormScope,
    /// Epochs, schedule and seed come from here; `drop` is replaced per run.
    pub base: TrainConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            rates: parse_rates("0.05:0.5:0.05").unwrap(),
            variants: vec![Some(Variant::MaxDropout), Some(Variant::MaxDropoutV2)],
            reps: 3,
            train_size: 1000,
            val_size: 250,
            scope: NormScope::PerSample,
            base: TrainConfig::toy(),
        }
    }
}

impl SweepConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let count = |v: &str| -> Result<usize> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value '{v}' for {key}")))
        };
        match key {
            "rates" => self.rates = parse_rates(value)?,
            "variants" => self.variants = parse_variants(value)?,
            "reps" => self.reps = count(value)?,
            "train_size" => self.train_size = count(value)?,
            "val_size" => self.val_size = count(value)?,
            "scope" => self.scope = parse_scope(value)?,
            _ => return self.base.set(key, value),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rates.is_empty() || self.variants.is_empty() {
            return Err(Error::Config("sweep needs at least one rate and one variant".into()));
        }
        if self.reps == 0 || self.train_size == 0 || self.val_size == 0 {
            return Err(Error::Config("reps, train_size and val_size must be >= 1".into()));
        }
        self.base.validate()
    }

    /// Seed of repetition `rep`; shared by every grid point so rows differ
    /// only in the regularizer.
    pub fn rep_seed(&self, rep: usize) -> u64 {
        self.base.seed.wrapping_add(rep as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub variant: String,
    pub rate: f32,
    pub reps: usize,
    pub mean_val_acc: f64,
    pub std_val_acc: f64,
}

fn run_one(cfg: &SweepConfig, variant: Option<Variant>, rate: f32, rep: usize) -> Result<f64> {
    let seed = cfg.rep_seed(rep);
    let mut tc = cfg.base.clone();
    tc.seed = seed;
    tc.augment.seed = seed;
    tc.drop = variant
        .map(|v| DropConfig::new(v, rate).map(|d| d.with_scope(cfg.scope)))
        .transpose()?;
    let (train_data, val_data) = SyntheticDataset::split(cfg.train_size, cfg.val_size, seed);
    let outcome = train(&tc, &train_data, &val_data)?;
    Ok(outcome.log.last().map_or(0.0, |m| m.val_acc))
}

/// One row per (variant, rate) in grid order; the baseline gets a single
/// row at rate 0. Runs execute in parallel and are independent.
pub fn run(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let points: Vec<(Option<Variant>, f32)> = cfg
        .variants
        .iter()
        .flat_map(|&v| match v {
            None => vec![(None, 0.0)],
            Some(_) => cfg.rates.iter().map(|&r| (v, r)).collect(),
        })
        .collect();
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..cfg.reps).map(move |rep| (p, rep)))
        .collect();
    let accs: Vec<f64> = jobs
        .par_iter()
        .map(|&(p, rep)| run_one(cfg, points[p].0, points[p].1, rep))
        .collect::<Result<_>>()?;

    Ok(points
        .iter()
        .zip(accs.chunks(cfg.reps))
        .map(|(&(variant, rate), a)| SweepRow {
            variant: variant.map_or("none", Variant::name).to_string(),
            rate,
            reps: cfg.reps,
            mean_val_acc: a.mean(),
            std_val_acc: if a.len() > 1 { a.std_dev() } else { 0.0 },
        })
        .collect())
}

/// Columns `variant,rate,reps,mean_val_acc,std_val_acc`.
pub fn write_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_matches_sweep_granularity() {
        let r = parse_rates("0.05:0.5:0.05").unwrap();
        assert_eq!(r.len(), 10);
        assert_eq!(r[0], 0.05);
        assert_eq!(r[5], 0.3);
        assert_eq!(r[9], 0.5);
        assert_eq!(parse_rates("0.1, 0.3").unwrap(), vec![0.1, 0.3]);
        assert_eq!(parse_rates("0.0").unwrap(), vec![0.0]);
    }

    #[test]
    fn rejects_bad_grids() {
        for bad in ["", "0.5:0.1:0.1", "0.1:0.5:0", "0.1:0.5", "0.2,1.0", "-0.1", "x"] {
            assert!(parse_rates(bad).is_err(), "{bad}");
        }
    }

    fn tiny() -> SweepConfig {
        let mut cfg = SweepConfig {
            rates: vec![0.0],
            variants: parse_variants("none,max-dropout,max-dropout-v2").unwrap(),
            reps: 2,
            train_size: 16,
            val_size: 8,
            ..SweepConfig::default()
        };
        cfg.base.epochs = 2;
        cfg.base.batch_size = 8;
        cfg
    }

    #[test]
    fn rate_zero_matches_baseline_exactly() {
        let rows = run(&tiny()).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].variant, "none");
        for row in &rows[1..] {
            assert_eq!(row.mean_val_acc, rows[0].mean_val_acc);
            assert_eq!(row.std_val_acc, rows[0].std_val_acc);
        }
    }

    #[test]
    fn csv_is_deterministic() {
        let mut cfg = tiny();
        cfg.rates = vec![0.2, 0.4];
        cfg.variants = vec![Some(Variant::MaxDropoutV2)];
        let render = |cfg: &SweepConfig| {
            let mut buf = Vec::new();
            write_csv(&run(cfg).unwrap(), &mut buf).unwrap();
            String::from_utf8(buf).unwrap()
        };
        let a = render(&cfg);
        assert_eq!(a, render(&cfg));
        assert!(a.starts_with("variant,rate,reps,mean_val_acc,std_val_acc\n"));
        assert_eq!(a.lines().count(), 3);
    }
}
