//! Mini-batch training with class weighting, Adam or SGD with an
//! exponential schedule, and early stopping on dev loss.

use std::borrow::Cow;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::augment::{augment, resize_pair, AugmentConfig};
use crate::dataset::synth::{mix_seed, parse_key_values};
use crate::dataset::{Manifest, Sample};
use crate::error::{Error, Result};
use crate::evaluation::{error_rates, threshold_at_bpcer};
use crate::geometry::{LabelMode, PixelLabel};
use crate::inference::aggregate;
use crate::network::{Grads, Model, ModelConfig, ParamStore, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    /// L2 penalty added to the gradient.
    pub weight_decay: f64,
    /// SGD momentum.
    pub momentum: f64,
    /// Per-epoch learning-rate decay; 1 disables the schedule.
    pub gamma: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Partial attack labels for AM2; zero maps otherwise.
    pub pal: bool,
    pub augment: AugmentConfig,
}

impl TrainConfig {
    pub fn adam() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            lr: 1e-4,
            weight_decay: 1e-5,
            momentum: 0.0,
            gamma: 1.0,
            max_epochs: 100,
            patience: 15,
            batch_size: 32,
            seed: 0,
            pal: true,
            augment: AugmentConfig::default(),
        }
    }

    pub fn sgd() -> Self {
        TrainConfig { optimizer: OptimizerKind::Sgd, lr: 1e-2, weight_decay: 5e-3, momentum: 0.9, gamma: 0.995, ..Self::adam() }
    }

    /// Short Adam schedule for either backbone, sized for the synthetic
    /// corpus on a desktop CPU.
    pub fn desk_scale() -> Self {
        TrainConfig { lr: 1e-3, max_epochs: 30, patience: 5, batch_size: 16, ..Self::adam() }
    }

    /// Adam for dense_pix, SGD with the exponential schedule for mix_pix.
    pub fn for_variant(variant: Variant) -> Self {
        match variant {
            Variant::DensePix => Self::adam(),
            Variant::MixPix => Self::sgd(),
        }
    }

    pub fn label_mode(&self) -> LabelMode {
        if self.pal {
            LabelMode::Partial
        } else {
            LabelMode::ZeroMap
        }
    }

    /// Learning rate used during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.gamma.powi(epoch as i32)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if self.max_epochs == 0 || self.patience >= self.max_epochs {
            return bad(format!("need 0 <= patience < max_epochs, got {} and {}", self.patience, self.max_epochs));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        Ok(())
    }

    /// Apply `key = value` overrides.
    pub fn apply_text(mut self, text: &str) -> Result<Self> {
        let mut pairs: Vec<(String, String)> = parse_key_values(text)?.into_iter().collect();
        // The optimizer resets its hyperparameters, so it must apply before them.
        pairs.sort_by_key(|(k, _)| k != "optimizer");
        for (key, value) in pairs {
            let bad = |e: &dyn std::fmt::Display| Error::parse(format!("train config key {key}"), e);
            let flag = |v: &str| match v {
                "on" | "true" | "1" => Ok(true),
                "off" | "false" | "0" => Ok(false),
                other => Err(Error::parse(format!("train config key {key}"), format!("expected on/off, got {other:?}"))),
            };
            match key.as_str() {
                "optimizer" => {
                    let base = match value.as_str() {
                        "adam" => Self::adam(),
                        "sgd" => Self::sgd(),
                        other => return Err(Error::parse("train config optimizer", format!("unknown {other:?}"))),
                    };
                    // Switching optimizer resets its hyperparameters to that optimizer's defaults.
                    self = TrainConfig {
                        optimizer: base.optimizer,
                        lr: base.lr,
                        weight_decay: base.weight_decay,
                        momentum: base.momentum,
                        gamma: base.gamma,
                        ..self
                    };
                }
                "lr" => self.lr = value.parse().map_err(|e| bad(&e))?,
                "weight_decay" => self.weight_decay = value.parse().map_err(|e| bad(&e))?,
                "momentum" => self.momentum = value.parse().map_err(|e| bad(&e))?,
                "gamma" => self.gamma = value.parse().map_err(|e| bad(&e))?,
                "max_epochs" => self.max_epochs = value.parse().map_err(|e| bad(&e))?,
                "patience" => self.patience = value.parse().map_err(|e| bad(&e))?,
                "batch_size" => self.batch_size = value.parse().map_err(|e| bad(&e))?,
                "seed" => self.seed = value.parse().map_err(|e| bad(&e))?,
                "pal" => self.pal = flag(&value)?,
                "flip_prob" => self.augment.flip_prob = value.parse().map_err(|e| bad(&e))?,
                "jitter_prob" => self.augment.jitter_prob = value.parse().map_err(|e| bad(&e))?,
                "jitter_magnitude" => self.augment.jitter_magnitude = value.parse().map_err(|e| bad(&e))?,
                _ => return Err(Error::parse("train config", format!("unknown key {key:?}"))),
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn load(path: &Path, base: TrainConfig) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        base.apply_text(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let opt = match self.optimizer {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        };
        writeln!(s, "optimizer = {opt}").unwrap();
        writeln!(s, "lr = {}", self.lr).unwrap();
        writeln!(s, "weight_decay = {}", self.weight_decay).unwrap();
        writeln!(s, "momentum = {}", self.momentum).unwrap();
        writeln!(s, "gamma = {}", self.gamma).unwrap();
        writeln!(s, "max_epochs = {}", self.max_epochs).unwrap();
        writeln!(s, "patience = {}", self.patience).unwrap();
        writeln!(s, "batch_size = {}", self.batch_size).unwrap();
        writeln!(s, "seed = {}", self.seed).unwrap();
        writeln!(s, "pal = {}", if self.pal { "on" } else { "off" }).unwrap();
        writeln!(s, "flip_prob = {}", self.augment.flip_prob).unwrap();
        writeln!(s, "jitter_prob = {}", self.augment.jitter_prob).unwrap();
        writeln!(s, "jitter_magnitude = {}", self.augment.jitter_magnitude).unwrap();
        s
    }
}

/// Loss multipliers for bona fide and attack samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassWeights {
    pub bona_fide: f64,
    pub attack: f64,
}

impl ClassWeights {
    /// `w_c = N / (2 N_c)`, so the two weights average to one over the data.
    pub fn from_counts(n_bona_fide: usize, n_attack: usize) -> Result<Self> {
        if n_bona_fide == 0 {
            return Err(Error::MissingClass("bona fide".into()));
        }
        if n_attack == 0 {
            return Err(Error::MissingClass("attack".into()));
        }
        let n = (n_bona_fide + n_attack) as f64;
        Ok(ClassWeights { bona_fide: n / (2.0 * n_bona_fide as f64), attack: n / (2.0 * n_attack as f64) })
    }

    pub fn of(&self, bona_fide: bool) -> f64 {
        if bona_fide {
            self.bona_fide
        } else {
            self.attack
        }
    }
}

/// Class weights from video counts of a (training) manifest.
pub fn class_weights(manifest: &Manifest) -> Result<ClassWeights> {
    if manifest.is_empty() {
        return Err(Error::EmptyInput("training manifest"));
    }
    let bf = manifest.entries.iter().filter(|e| e.category.is_bona_fide()).count();
    ClassWeights::from_counts(bf, manifest.len() - bf)
}

/// Optimizer state for one parameter store.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    weight_decay: f32,
    momentum: f32,
    step: i32,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

const ADAM_BETA1: f32 = 0.9;
const ADAM_BETA2: f32 = 0.999;
const ADAM_EPS: f32 = 1e-8;

impl Optimizer {
    pub fn new(cfg: &TrainConfig, params: &ParamStore<f32>) -> Self {
        let zeros = || params.params.iter().map(|p| vec![0.0f32; p.data.len()]).collect::<Vec<_>>();
        Optimizer {
            kind: cfg.optimizer,
            weight_decay: cfg.weight_decay as f32,
            momentum: cfg.momentum as f32,
            step: 0,
            first: zeros(),
            second: if cfg.optimizer == OptimizerKind::Adam { zeros() } else { Vec::new() },
        }
    }

    /// One update with learning rate `lr` from the data gradient `grads`.
    pub fn step(&mut self, params: &mut ParamStore<f32>, grads: &Grads<f32>, lr: f64) {
        self.step += 1;
        let lr = lr as f32;
        let wd = self.weight_decay;
        match self.kind {
            OptimizerKind::Adam => {
                let bc1 = 1.0 - ADAM_BETA1.powi(self.step);
                let bc2 = 1.0 - ADAM_BETA2.powi(self.step);
                for (p, ((g, m), v)) in params.params.iter_mut().zip(grads.data.iter().zip(&mut self.first).zip(&mut self.second)) {
                    for i in 0..p.data.len() {
                        let gi = g[i] + wd * p.data[i];
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
                        p.data[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + ADAM_EPS);
                    }
                }
            }
            OptimizerKind::Sgd => {
                let first_step = self.step == 1;
                for (p, (g, buf)) in params.params.iter_mut().zip(grads.data.iter().zip(&mut self.first)) {
                    for i in 0..p.data.len() {
                        let gi = g[i] + wd * p.data[i];
                        buf[i] = if first_step { gi } else { self.momentum * buf[i] + gi };
                        p.data[i] -= lr * buf[i];
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    /// NaN when the dev set lacks a class.
    pub dev_acer: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "train_loss", "dev_loss", "dev_acer", "lr"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.dev_loss.to_string(),
                e.dev_acer.to_string(),
                e.lr.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.get(self.best_epoch)
    }
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest dev loss.
    pub model: Model<f32>,
    pub log: TrainLog,
    pub class_weights: ClassWeights,
}

/// A sample at network resolution together with its label.
struct Prepared<'a> {
    sample: Cow<'a, Sample>,
    label: PixelLabel,
}

fn prepare<'a>(samples: &[&'a Sample], size: u32, mode: LabelMode, grid: usize) -> Result<Vec<Prepared<'a>>> {
    samples
        .par_iter()
        .map(|&s| {
            if s.image.dimensions() == (size, size) {
                Ok(Prepared { sample: Cow::Borrowed(s), label: s.pixel_label(mode, grid)? })
            } else {
                let (r, label) = resize_pair(s, size, mode, grid)?;
                Ok(Prepared { sample: Cow::Owned(r), label })
            }
        })
        .collect()
}

/// Mean class-weighted loss and video-level ACER (plain map mean scores,
/// threshold at 10% BPCER on the same set).
fn evaluate_dev(model: &Model<f32>, dev: &[Prepared], weights: ClassWeights) -> Result<(f64, f64)> {
    let per_frame: Vec<(f64, f64)> = dev
        .par_iter()
        .map(|p| {
            let out = model.forward(&p.sample.image)?;
            let cw = weights.of(p.sample.is_bona_fide());
            let loss = crate::network::overall_loss(&out, p.label.grid(), p.label.binary_label(), model.config().lambda, cw)?;
            Ok((loss, out.map.mean()))
        })
        .collect::<Result<_>>()?;
    let loss = per_frame.iter().map(|x| x.0).sum::<f64>() / per_frame.len() as f64;
    let samples: Vec<&Sample> = dev.iter().map(|p| p.sample.as_ref()).collect();
    let scores: Vec<f64> = per_frame.iter().map(|x| x.1).collect();
    let records = aggregate(&samples, &scores)?;
    let bf: Vec<f64> = records.iter().filter(|r| r.category.is_bona_fide()).map(|r| r.score).collect();
    let acer = if bf.is_empty() {
        f64::NAN
    } else {
        error_rates(&records, threshold_at_bpcer(&bf, 0.10)?).map(|r| r.2).unwrap_or(f64::NAN)
    };
    Ok((loss, acer))
}

/// Train a freshly initialised model; see [`train_with_progress`].
pub fn train(model_cfg: ModelConfig, train: &[&Sample], dev: &[&Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(model_cfg, train, dev, cfg, |_| {})
}

/// Mini-batch training. Batch order and augmentation draw from streams
/// keyed by (seed, epoch, sample index), and per-sample gradients are
/// summed in batch order, so results do not depend on thread count.
pub fn train_with_progress(
    model_cfg: ModelConfig,
    train: &[&Sample],
    dev: &[&Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training samples"));
    }
    if dev.is_empty() {
        return Err(Error::EmptyInput("dev samples"));
    }
    let mut model = Model::<f32>::new(model_cfg)?;
    let size = model.config().input_size as u32;
    let grid = model.config().map_size();
    let mode = cfg.label_mode();
    let train_set = prepare(train, size, mode, grid)?;
    let dev_set = prepare(dev, size, mode, grid)?;
    let n_bf = train.iter().filter(|s| s.is_bona_fide()).count();
    let weights = ClassWeights::from_counts(n_bf, train.len() - n_bf)?;

    let mut opt = Optimizer::new(cfg, &model.params);
    let mut log = TrainLog::default();
    let mut best = (f64::INFINITY, model.params.clone());
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.max_epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, epoch as u64])));
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<(f64, Grads<f32>)> = batch
                .par_iter()
                .map(|&i| {
                    let p = &train_set[i];
                    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, epoch as u64, i as u64]));
                    let (s, l) = augment(&p.sample, &p.label, &cfg.augment, &mut rng);
                    let x = model.prepare(&s.image)?;
                    model.loss_and_grad(x, l.grid(), l.binary_label(), weights.of(s.is_bona_fide()))
                })
                .collect::<Result<_>>()?;
            let mut iter = results.into_iter();
            let (first_loss, mut grads) = iter.next().expect("non-empty batch");
            loss_sum += first_loss;
            for (l, g) in iter {
                loss_sum += l;
                grads.add_assign(&g);
            }
            grads.scale(1.0 / batch.len() as f32);
            if !loss_sum.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged { epoch, detail: format!("non-finite loss or gradient (running loss {loss_sum})") });
            }
            opt.step(&mut model.params, &grads, lr);
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let (dev_loss, dev_acer) = evaluate_dev(&model, &dev_set, weights)?;
        if !dev_loss.is_finite() {
            return Err(Error::Diverged { epoch, detail: format!("dev loss {dev_loss}") });
        }
        let rec = EpochRecord { epoch, train_loss, dev_loss, dev_acer, lr };
        on_epoch(&rec);
        log.epochs.push(rec);
        if dev_loss < best.0 {
            best = (dev_loss, model.params.clone());
            log.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience.max(1) {
                break;
            }
        }
    }
    model.params = best.1;
    Ok(TrainOutcome { model, log, class_weights: weights })
}
