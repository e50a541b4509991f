//! Toy-scale training harness: ToyNet on [`SyntheticDataset`] with SGD +
//! Nesterov momentum, weight decay and a step learning-rate schedule.

pub mod loss;
pub mod net;
pub mod optim;

use std::io::Write;
use std::sync::mpsc::sync_channel;
use std::thread;

use serde::Serialize;

use crate::augment::AugmentPlan;
use crate::error::{Error, Result};
use crate::regularizers::{DropConfig, Variant};
use crate::rng::Rng;
use crate::synth::SyntheticDataset;
use crate::tensor::{NormScope, Tensor};

pub use net::{MaskSource, ToyNet};
pub use optim::{nesterov_update, sgd_nesterov_step};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f32,
    pub weight_decay: f32,
    pub lr_decay_factor: f64,
    /// Epochs at which the learning rate is multiplied by `lr_decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    /// `None` trains without a drop layer.
    pub drop: Option<DropConfig>,
    pub augment: AugmentPlan,
    pub seed: u64,
}

impl TrainConfig {
    /// Full-length protocol: 200 epochs, decays at 60/120/160.
    pub fn full_protocol() -> Self {
        Self {
            lr0: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_decay_factor: 0.2,
            decay_epochs: vec![60, 120, 160],
            epochs: 200,
            batch_size: 128,
            drop: None,
            augment: AugmentPlan::default(),
            seed: 0,
        }
    }

    /// The same schedule shape at a tenth of the length. The toy net has no
    /// normalization layers and dies at `lr0 = 0.1`, so it starts at 0.01.
    pub fn toy() -> Self {
        Self {
            lr0: 0.01,
            decay_epochs: vec![6, 12, 16],
            epochs: 20,
            batch_size: 32,
            ..Self::full_protocol()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad(format!("lr_decay_factor must lie in (0, 1], got {}", self.lr_decay_factor));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be >= 1".into());
        }
        if self.decay_epochs.windows(2).any(|w| w[0] > w[1]) {
            return bad(format!("decay_epochs must be ascending, got {:?}", self.decay_epochs));
        }
        Ok(())
    }

    /// Apply one `key = value` setting. Returns `false` for keys this struct
    /// does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value '{v}' for {key}")))
        }
        match key {
            "lr0" => self.lr0 = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "lr_decay_factor" => self.lr_decay_factor = num(key, value)?,
            "decay_epochs" => {
                self.decay_epochs = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| num(key, s))
                    .collect::<Result<_>>()?
            }
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "seed" => {
                self.seed = num(key, value)?;
                self.augment.seed = self.seed;
            }
            "augment" => self.augment = AugmentPlan::parse(value, self.seed)?,
            "variant" => {
                let v = value.trim();
                if v == "none" {
                    self.drop = None;
                } else {
                    let variant: Variant = v.parse()?;
                    let (rate, scope) = self.drop.map_or((0.0, NormScope::PerSample), |d| (d.rate(), d.scope));
                    self.drop = Some(DropConfig::new(variant, rate)?.with_scope(scope));
                }
            }
            "rate" => {
                let rate: f32 = num(key, value)?;
                let d = self
                    .drop
                    .ok_or_else(|| Error::Config("rate given without a drop variant".into()))?;
                self.drop = Some(DropConfig::new(d.variant, rate)?.with_scope(d.scope));
            }
            "scope" => {
                let scope = parse_scope(value)?;
                if let Some(d) = self.drop.as_mut() {
                    d.scope = scope;
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }
}

pub fn parse_scope(s: &str) -> Result<NormScope> {
    match s.trim() {
        "per-sample" | "sample" => Ok(NormScope::PerSample),
        "whole-tensor" | "tensor" | "whole" => Ok(NormScope::WholeTensor),
        other => Err(Error::Config(format!("unknown scope '{other}'"))),
    }
}

/// `lr0 * factor^k` where `k` counts the decay epochs `<= epoch`.
///
/// Evaluated as `lr0 / (1/factor)^k` so that an integral inverse factor
/// (0.2 -> 5) reproduces the decimal schedule exactly.
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    let k = cfg.decay_epochs.iter().filter(|&&d| d <= epoch).count() as i32;
    cfg.lr0 / (1.0 / cfg.lr_decay_factor).powi(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub epochs: Vec<EpochMetrics>,
}

impl MetricsLog {
    pub fn last(&self) -> Option<&EpochMetrics> {
        self.epochs.last()
    }

    /// CSV with header `epoch,lr,train_loss,train_acc,val_loss,val_acc`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.epochs {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub loss: f64,
    pub accuracy: f64,
}

const EVAL_BATCH: usize = 250;
const QUEUE_DEPTH: usize = 4;

/// Inference-mode loss and accuracy over a whole dataset.
pub fn evaluate(net: &ToyNet, data: &SyntheticDataset) -> Result<EvalMetrics> {
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut loss = 0.0;
    let mut correct = 0;
    for chunk in indices.chunks(EVAL_BATCH) {
        let (x, y) = data.batch(chunk);
        let cache = net.forward(&x, MaskSource::Infer)?;
        let (l, _, c) = net.loss(&cache, &y);
        loss += l * chunk.len() as f64;
        correct += c;
    }
    let n = data.len().max(1) as f64;
    Ok(EvalMetrics {
        loss: loss / n,
        accuracy: correct as f64 / n,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: ToyNet,
    pub log: MetricsLog,
}

fn build_batch(data: &SyntheticDataset, idx: &[usize], plan: &AugmentPlan, epoch: usize) -> Result<(Tensor, Vec<usize>)> {
    let (x, y) = data.batch(idx);
    if plan.is_empty() {
        return Ok((x, y));
    }
    let shape = x.shape();
    let mut out = Vec::with_capacity(shape.len());
    for &i in idx {
        let stream = (epoch * data.len() + i) as u64;
        let img = plan.apply(&data.image(i), stream)?;
        let s = img.tensor().shape();
        if (s.c, s.h, s.w) != (shape.c, shape.h, shape.w) {
            return Err(Error::Config(format!(
                "augmentation plan '{plan}' changes the image shape to {s}; training needs shape-preserving steps"
            )));
        }
        out.extend_from_slice(img.tensor().data());
    }
    Ok((Tensor::new(shape, out)?, y))
}

/// Train a fresh ToyNet. Batches are assembled (and augmented) on a producer
/// thread and handed over through a bounded queue, one consumer step each.
pub fn train(cfg: &TrainConfig, train_data: &SyntheticDataset, val_data: &SyntheticDataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_data.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let mut net = ToyNet::new(SyntheticDataset::sample_shape(), SyntheticDataset::CLASSES, cfg.drop, cfg.seed)?;
    let mut velocity: Vec<Vec<f32>> = net.param_slices().iter().map(|s| vec![0.0; s.len()]).collect();
    let mut log = MetricsLog::default();

    for epoch in 0..cfg.epochs {
        let lr = lr_at(cfg, epoch);
        let mut order: Vec<usize> = (0..train_data.len()).collect();
        Rng::derive(cfg.seed, 0x5eed_0000_0000 ^ epoch as u64).shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut correct = 0;
        thread::scope(|s| -> Result<()> {
            let (tx, rx) = sync_channel(QUEUE_DEPTH);
            let order = &order;
            s.spawn(move || {
                for chunk in order.chunks(cfg.batch_size) {
                    if tx.send(build_batch(train_data, chunk, &cfg.augment, epoch)).is_err() {
                        break;
                    }
                }
            });
            for (step, batch) in rx.into_iter().enumerate() {
                let (x, y) = batch?;
                let drop_seed = Rng::derive(cfg.seed, ((epoch as u64) << 32) | step as u64).next_u64();
                let cache = net.forward(&x, MaskSource::Train { seed: drop_seed })?;
                let (loss, dlogits, c) = net.loss(&cache, &y);
                if !loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        step,
                        loss: loss as f32,
                    });
                }
                loss_sum += loss * y.len() as f64;
                correct += c;
                let grads = net.backward(&cache, &dlogits)?;
                for ((p, g), v) in net.param_slices_mut().into_iter().zip(grads.slices()).zip(&mut velocity) {
                    sgd_nesterov_step(p, g, v, lr as f32, cfg.momentum, cfg.weight_decay);
                }
            }
            Ok(())
        })?;

        let val = evaluate(&net, val_data)?;
        let n = train_data.len() as f64;
        log.epochs.push(EpochMetrics {
            epoch,
            lr,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_loss: val.loss,
            val_acc: val.accuracy,
        });
    }
    Ok(TrainOutcome { net, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_values() {
        let cfg = TrainConfig::full_protocol();
        assert_eq!(lr_at(&cfg, 0), 0.1);
        assert_eq!(lr_at(&cfg, 59), 0.1);
        assert_eq!(lr_at(&cfg, 60), 0.02);
        assert_eq!(lr_at(&cfg, 120), 0.004);
        assert_eq!(lr_at(&cfg, 160), 0.0008);
        assert_eq!(lr_at(&cfg, 199), 0.0008);
        let toy = TrainConfig::toy();
        assert_eq!(lr_at(&toy, 5), 0.01);
        assert_eq!(lr_at(&toy, 6), 0.002);
    }

    #[test]
    fn set_keys() {
        let mut cfg = TrainConfig::toy();
        assert!(cfg.set("decay_epochs", "3,5").unwrap());
        assert_eq!(cfg.decay_epochs, vec![3, 5]);
        assert!(cfg.set("variant", "v2").unwrap());
        assert!(cfg.set("rate", "0.3").unwrap());
        assert_eq!(cfg.drop.unwrap().variant, Variant::MaxDropoutV2);
        assert_eq!(cfg.drop.unwrap().rate(), 0.3);
        assert!(cfg.set("rate", "1.0").is_err());
        assert!(!cfg.set("colour", "red").unwrap());
        assert!(cfg.set("epochs", "ten").is_err());
        cfg.set("variant", "none").unwrap();
        assert!(cfg.set("rate", "0.1").is_err());
    }

    #[test]
    fn validation() {
        let mut cfg = TrainConfig::toy();
        cfg.momentum = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::toy();
        cfg.decay_epochs = vec![5, 3];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn shape_changing_augmentation_is_rejected() {
        let (tr, va) = SyntheticDataset::split(8, 4, 0);
        let mut cfg = TrainConfig::toy();
        cfg.epochs = 1;
        cfg.augment = AugmentPlan::parse("crop:24x24", 0).unwrap();
        assert!(matches!(train(&cfg, &tr, &va), Err(Error::Config(_))));
    }

    #[test]
    fn short_run_is_deterministic() {
        let (tr, va) = SyntheticDataset::split(64, 32, 1);
        let mut cfg = TrainConfig::toy();
        cfg.epochs = 2;
        cfg.batch_size = 16;
        cfg.drop = Some(DropConfig::new(Variant::Dropout, 0.3).unwrap());
        cfg.augment = AugmentPlan::parse("hflip,cutout:6", 1).unwrap();
        let a = train(&cfg, &tr, &va).unwrap();
        let b = train(&cfg, &tr, &va).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.epochs.len(), 2);
        let mut csv = Vec::new();
        a.log.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("epoch,lr,train_loss,train_acc,val_loss,val_acc\n"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn divergence_is_reported() {
        let (tr, va) = SyntheticDataset::split(32, 8, 2);
        let mut cfg = TrainConfig::toy();
        cfg.epochs = 3;
        cfg.lr0 = 1e30;
        assert!(matches!(train(&cfg, &tr, &va), Err(Error::Diverged { .. })));
    }
}
