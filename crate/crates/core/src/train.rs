//! Training configurations and the training loop.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{self, Pair};
use crate::dataset::{batch_plan, Example, ExampleSource};
use crate::error::{Error, Result};
use crate::loss::{joint_loss, LossBreakdown};
use crate::model::ModelGraph;
use crate::optim::{Optimizer, OptimizerKind};
use crate::tensor::Tensor;
use crate::weights::save_weights;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Weight of the classification term, `alpha`.
    pub class_loss_weight: f64,
    pub fusion_enabled: bool,
    pub seed: u64,
}

pub const PRESETS: [&str; 5] = ["proposed1", "proposed2", "proposed3", "proposed4", "proposed2_nofusion"];

pub const KEYS: [&str; 7] = ["optimizer", "lr", "batch_size", "epochs", "class_loss_weight", "fusion_enabled", "seed"];

impl TrainConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let base = |optimizer, lr, batch_size, class_loss_weight| Self {
            optimizer,
            lr,
            batch_size,
            epochs: 10,
            class_loss_weight,
            fusion_enabled: true,
            seed: 0,
        };
        use OptimizerKind::{Adadelta, Adam};
        Ok(match name.trim() {
            "proposed1" => base(Adadelta, 0.03, 64, 1.0),
            "proposed2" => base(Adam, 0.01, 16, 1.0),
            "proposed3" => base(Adam, 0.01, 16, 0.01),
            "proposed4" => base(Adam, 0.01, 64, 1.0),
            "proposed2_nofusion" => Self { fusion_enabled: false, ..base(Adam, 0.01, 16, 0.0) },
            other => {
                return Err(Error::Config(format!("unknown preset `{other}`, expected one of {}", PRESETS.join(", "))))
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be at least 1".into()));
        }
        if !(self.class_loss_weight >= 0.0 && self.class_loss_weight.is_finite()) {
            return Err(Error::Config(format!("class_loss_weight must be non-negative, got {}", self.class_loss_weight)));
        }
        if (self.class_loss_weight == 0.0) == self.fusion_enabled {
            return Err(Error::Config(
                "class_loss_weight must be 0 exactly when fusion is disabled (the classifier exists only with fusion)".into(),
            ));
        }
        Ok(())
    }

    /// Reads the training keys of `pairs`. A `preset` key supplies
    /// defaults for the keys not given; without one every key is required.
    /// Other keys are ignored.
    pub fn from_pairs(pairs: &[Pair]) -> Result<Self> {
        let preset = match pairs.iter().find(|p| p.key == "preset") {
            Some(p) => Some(Self::preset(&p.value)?),
            None => None,
        };
        let c = Self {
            optimizer: pick("optimizer", config::get(pairs, "optimizer")?, preset.map(|p| p.optimizer))?,
            lr: pick("lr", config::get(pairs, "lr")?, preset.map(|p| p.lr))?,
            batch_size: pick("batch_size", config::get(pairs, "batch_size")?, preset.map(|p| p.batch_size))?,
            epochs: pick("epochs", config::get(pairs, "epochs")?, preset.map(|p| p.epochs))?,
            class_loss_weight: pick(
                "class_loss_weight",
                config::get(pairs, "class_loss_weight")?,
                preset.map(|p| p.class_loss_weight),
            )?,
            fusion_enabled: pick("fusion_enabled", config::get_bool(pairs, "fusion_enabled")?, preset.map(|p| p.fusion_enabled))?,
            seed: pick("seed", config::get(pairs, "seed")?, preset.map(|p| p.seed))?,
        };
        c.validate()?;
        Ok(c)
    }

    /// Parses `key = value` text holding only training keys and `preset`.
    pub fn parse(text: &str) -> Result<Self> {
        let pairs = config::parse_pairs(text)?;
        let mut known = KEYS.to_vec();
        known.push("preset");
        config::reject_unknown(&pairs, &known)?;
        Self::from_pairs(&pairs)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "optimizer = {}", self.optimizer).unwrap();
        writeln!(s, "lr = {}", self.lr).unwrap();
        writeln!(s, "batch_size = {}", self.batch_size).unwrap();
        writeln!(s, "epochs = {}", self.epochs).unwrap();
        writeln!(s, "class_loss_weight = {}", self.class_loss_weight).unwrap();
        writeln!(s, "fusion_enabled = {}", self.fusion_enabled).unwrap();
        writeln!(s, "seed = {}", self.seed).unwrap();
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Progress {
    pub epoch: usize,
    pub epochs: usize,
    pub step: usize,
    pub steps_per_epoch: usize,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    /// Sample-weighted mean of the step losses.
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
}

/// Stacks examples into `N x 3 x S x S` inputs, `N x 2 x S x S` targets and
/// labels.
pub fn collate(batch: &[Example]) -> Result<(Tensor<f32>, Tensor<f32>, Vec<usize>)> {
    let inputs: Vec<&Tensor<f32>> = batch.iter().map(|e| &e.input).collect();
    let targets: Vec<&Tensor<f32>> = batch.iter().map(|e| &e.target).collect();
    Ok((Tensor::stack(&inputs)?, Tensor::stack(&targets)?, batch.iter().map(|e| e.label).collect()))
}

/// Optimizer state plus the loss settings of one run.
pub struct Trainer {
    cfg: TrainConfig,
    opt: Optimizer,
}

impl Trainer {
    pub fn new(g: &ModelGraph<f32>, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if g.config().fusion_enabled != cfg.fusion_enabled {
            return Err(Error::Config(format!(
                "training config has fusion_enabled = {} but the model has {}",
                cfg.fusion_enabled,
                g.config().fusion_enabled
            )));
        }
        Ok(Self { cfg: *cfg, opt: Optimizer::new(cfg.optimizer, cfg.lr)? })
    }

    /// Forward, backward and one optimizer update on a batch.
    pub fn step(&mut self, g: &mut ModelGraph<f32>, batch: &[Example]) -> Result<LossBreakdown> {
        let (x, y, labels) = collate(batch)?;
        let out = g.forward_train(&x)?;
        let obj = joint_loss(&out.ab, &y, out.logits.as_ref(), &labels, self.cfg.class_loss_weight)?;
        if !obj.loss.total.is_finite() {
            return Err(Error::NonFinite { layer: "loss".into() });
        }
        g.zero_grad();
        g.backward(&obj.d_ab, obj.d_logits.as_ref())?;
        self.opt.step(g.params_mut())?;
        Ok(obj.loss)
    }
}

/// Runs `cfg.epochs` passes over `data`. With `checkpoints`, the weights
/// and the history so far are written after every epoch as
/// `epoch-NNN.unfw` and `history.json`.
pub fn train(
    g: &mut ModelGraph<f32>,
    data: &(impl ExampleSource + ?Sized),
    cfg: &TrainConfig,
    checkpoints: Option<&Path>,
    progress: &mut dyn FnMut(&Progress),
) -> Result<TrainHistory> {
    if data.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let mut trainer = Trainer::new(g, cfg)?;
    if let Some(dir) = checkpoints {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut history = TrainHistory { config: *cfg, epochs: Vec::with_capacity(cfg.epochs) };
    for epoch in 0..cfg.epochs {
        let plan = batch_plan(data.len(), cfg.batch_size, cfg.seed, epoch as u64);
        let mut sum = LossBreakdown::default();
        for (step, indices) in plan.iter().enumerate() {
            let batch = indices.par_iter().map(|&i| data.load(i)).collect::<Result<Vec<_>>>()?;
            let loss = trainer.step(g, &batch)?;
            let w = batch.len() as f64;
            sum.mse += w * loss.mse;
            sum.ce += w * loss.ce;
            sum.total += w * loss.total;
            progress(&Progress { epoch, epochs: cfg.epochs, step, steps_per_epoch: plan.len(), loss });
        }
        let n = data.len() as f64;
        let loss = LossBreakdown { mse: sum.mse / n, ce: sum.ce / n, total: sum.total / n };
        history.epochs.push(EpochRecord { epoch, steps: plan.len(), loss });
        if let Some(dir) = checkpoints {
            save_weights(g, &dir.join(format!("epoch-{:03}.unfw", epoch + 1)))?;
            write_history(&history, &dir.join("history.json"))?;
        }
    }
    Ok(history)
}

fn pick<T>(key: &str, given: Option<T>, preset: Option<T>) -> Result<T> {
    given.or(preset).ok_or_else(|| Error::Config(format!("missing key `{key}` (or give a preset)")))
}

pub fn write_history(history: &TrainHistory, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(history).expect("history serializes");
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}
