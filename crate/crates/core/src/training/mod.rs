//! Adam, the training loop with validation early stopping, evaluation and
//! OA/AA/Kappa.

mod adam;
mod metrics;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use metrics::{compute_metrics, Confusion, Metrics};

use serde::{Deserialize, Serialize};

use crate::backbone::Model;
use crate::data::{PatchSet, SplitSpec};
use crate::error::{Error, Result};
use crate::params::{Ctx, ParamStore};
use crate::rng::{streams, Rng};
use crate::tensor::Precision;

fn d_epochs() -> usize {
    80
}
fn d_batch() -> usize {
    32
}
fn d_patience() -> usize {
    20
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Epochs without a new best validation OA before stopping.
    #[serde(default = "d_patience")]
    pub patience: usize,
    #[serde(default)]
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: d_epochs(),
            adam: AdamConfig::default(),
            batch_size: d_batch(),
            seed: 0,
            patience: d_patience(),
            precision: Precision::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s).map_err(|e| Error::Config(format!("train config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be ≥ 1".into()));
        }
        if !(self.adam.lr >= 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be finite and ≥ 0, got {}", self.adam.lr)));
        }
        if self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config("batch_size and patience must be positive".into()));
        }
        for (n, b) in [("beta1", self.adam.beta1), ("beta2", self.adam.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{n} must be in [0, 1), got {b}")));
            }
        }
        if self.adam.eps.is_nan() || self.adam.eps <= 0.0 {
            return Err(Error::Config("eps must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_oa: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_oa\n");
    for r in history {
        s.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.val_oa));
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation OA.
    pub best: ParamStore,
    pub best_epoch: usize,
    pub best_val_oa: f64,
    pub history: Vec<EpochRecord>,
    /// Eval-mode mean cross-entropy on the training split before the first update.
    pub initial_loss: f64,
    /// Same quantity for `best`.
    pub final_loss: f64,
    pub stopped_early: bool,
}

fn batches(idx: &[usize], size: usize) -> impl Iterator<Item = &[usize]> {
    idx.chunks(size)
}

/// Eval-mode mean cross-entropy over `idx`.
pub fn mean_loss(model: &Model, store: &ParamStore, data: &PatchSet, idx: &[usize], batch: usize, precision: Precision) -> Result<f64> {
    let mut total = 0.0;
    for b in batches(idx, batch) {
        let mut ctx = Ctx::eval(store, precision);
        let x = ctx.tape.constant(data.batch(b))?;
        let logits = model.forward(&mut ctx, x)?;
        let loss = ctx.tape.cross_entropy(logits, &data.targets(b))?;
        total += ctx.tape.value(loss).data()[0] * b.len() as f64;
    }
    Ok(total / idx.len() as f64)
}

/// Arg-max class (zero-based) for each sample in `idx`.
pub fn predict(model: &Model, store: &ParamStore, data: &PatchSet, idx: &[usize], batch: usize, precision: Precision) -> Result<Vec<usize>> {
    let k = model.cfg.classes;
    let mut out = Vec::with_capacity(idx.len());
    for b in batches(idx, batch) {
        let logits = model.logits(store, &data.batch(b), precision)?;
        for row in logits.data().chunks(k) {
            let best = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
            out.push(best.0);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub metrics: Metrics,
    /// `H × W` map of the unpadded cube: predicted class (1-based) at every
    /// evaluated pixel, 0 elsewhere.
    pub map: Vec<u16>,
    pub height: usize,
    pub width: usize,
}

/// Metrics and prediction map over the samples `idx`.
pub fn evaluate(
    model: &Model,
    store: &ParamStore,
    data: &PatchSet,
    idx: &[usize],
    precision: Precision,
    shape: (usize, usize),
) -> Result<Evaluation> {
    if idx.is_empty() {
        return Err(Error::Data("nothing to evaluate: split is empty".into()));
    }
    let preds = predict(model, store, data, idx, 64, precision)?;
    let k = model.cfg.classes;
    let mut conf = Confusion::new(k);
    let (h, w) = shape;
    let mut map = vec![0u16; h * w];
    for (&i, &p) in idx.iter().zip(&preds) {
        let truth = data.labels()[i] as usize - 1;
        if truth >= k {
            return Err(Error::Data(format!("label {} exceeds model classes {k}", truth + 1)));
        }
        conf.add(truth, p);
        let (y, x) = data.origin(i);
        map[y * w + x] = p as u16 + 1;
    }
    Ok(Evaluation {
        metrics: compute_metrics(&conf)?,
        map,
        height: h,
        width: w,
    })
}

fn overall_accuracy(preds: &[usize], data: &PatchSet, idx: &[usize]) -> f64 {
    let right = idx
        .iter()
        .zip(preds)
        .filter(|(&i, &p)| data.labels()[i] as usize - 1 == p)
        .count();
    right as f64 / idx.len() as f64
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::Numeric { op, detail } => Error::Numeric {
            op,
            detail: format!("training diverged at epoch {epoch}: {detail}"),
        },
        other => other,
    }
}

/// Trains from a fresh initialisation. `on_epoch` sees every record as it is produced.
pub fn train(
    model: &Model,
    data: &PatchSet,
    split: &SplitSpec,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if split.train.is_empty() || split.val.is_empty() {
        return Err(Error::Data("train and validation splits must be nonempty".into()));
    }
    let prec = cfg.precision;
    let mut store = model.init(cfg.seed)?;
    if prec == Precision::F32 {
        store.round_f32();
    }
    let initial_loss = mean_loss(model, &store, data, &split.train, cfg.batch_size, prec)?;

    let mut shuffle = Rng::new(cfg.seed, streams::SHUFFLE);
    let dropout = Rng::new(cfg.seed, streams::DROPOUT);
    let mut adam = AdamState::new();
    let mut order = split.train.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = store.clone();
    let (mut best_epoch, mut best_oa) = (0, f64::NEG_INFINITY);
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut step = 0u64;

    for epoch in 1..=cfg.epochs {
        shuffle.shuffle(&mut order);
        let mut total = 0.0;
        for b in batches(&order, cfg.batch_size) {
            let grads = {
                let mut ctx = Ctx::train(&store, prec, dropout.fork(step));
                let run = |ctx: &mut Ctx| -> Result<f64> {
                    let x = ctx.tape.constant(data.batch(b))?;
                    let logits = model.forward(ctx, x)?;
                    let loss = ctx.tape.cross_entropy(logits, &data.targets(b))?;
                    ctx.tape.backward(loss)?;
                    Ok(ctx.tape.value(loss).data()[0])
                };
                let loss = run(&mut ctx).map_err(|e| diverged(epoch, e))?;
                if !loss.is_finite() {
                    return Err(Error::numeric("cross_entropy", format!("training diverged at epoch {epoch}: loss {loss}")));
                }
                total += loss * b.len() as f64;
                ctx.tape.param_grads()
            };
            adam_step(&mut store, &grads, &mut adam, &cfg.adam).map_err(|e| diverged(epoch, e))?;
            if prec == Precision::F32 {
                store.round_f32();
            }
            step += 1;
        }
        let preds = predict(model, &store, data, &split.val, 64, prec)?;
        let rec = EpochRecord {
            epoch,
            train_loss: total / order.len() as f64,
            val_oa: overall_accuracy(&preds, data, &split.val),
        };
        on_epoch(&rec);
        if rec.val_oa > best_oa {
            best_oa = rec.val_oa;
            best_epoch = epoch;
            best = store.clone();
            since_best = 0;
        } else {
            since_best += 1;
        }
        history.push(rec);
        if since_best >= cfg.patience && epoch < cfg.epochs {
            stopped_early = true;
            break;
        }
    }
    let final_loss = mean_loss(model, &best, data, &split.train, cfg.batch_size, prec)?;
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_val_oa: best_oa,
        history,
        initial_loss,
        final_loss,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::ModelConfig;
    use crate::data::{stratified_split, synthesize_dataset, PadMode, Ratios, SynthSpec};

    fn setup() -> (Model, PatchSet, SplitSpec) {
        let cube = synthesize_dataset(&SynthSpec {
            height: 8,
            width: 8,
            bands: 8,
            classes: 2,
            noise: 0.05,
            seed: 1,
        })
        .unwrap();
        let data = PatchSet::from_cube(&cube, 3, PadMode::Replicate).unwrap();
        let split = stratified_split(data.labels(), Ratios([6, 1, 3]), 0).unwrap();
        let mut cfg = ModelConfig::new(8, 2);
        cfg.block = 3;
        cfg.embed_dim = 4;
        cfg.stage_depths = [1, 0, 1, 0];
        cfg.heads = [1, 1, 1, 1];
        cfg.windows = [2, 2, 2, 2];
        cfg.channel_attention_reduction = 2;
        cfg.drop_rate = 0.0;
        (Model::new(cfg).unwrap(), data, split)
    }

    #[test]
    fn zero_lr_freezes_parameters_and_loss() {
        let (model, data, split) = setup();
        let cfg = TrainConfig {
            epochs: 3,
            adam: AdamConfig {
                lr: 0.0,
                ..AdamConfig::default()
            },
            precision: Precision::F64,
            ..TrainConfig::default()
        };
        let out = train(&model, &data, &split, &cfg, |_| {}).unwrap();
        assert_eq!(out.history.len(), 3);
        assert!(!out.stopped_early);
        for r in &out.history {
            assert!((r.train_loss - out.history[0].train_loss).abs() < 1e-7);
        }
        assert_eq!(out.best, model.init(cfg.seed).unwrap());
    }

    #[test]
    fn reproducible_and_early_stopping() {
        let (model, data, split) = setup();
        let cfg = TrainConfig {
            epochs: 30,
            patience: 2,
            batch_size: 8,
            precision: Precision::F64,
            ..TrainConfig::default()
        };
        let a = train(&model, &data, &split, &cfg, |_| {}).unwrap();
        let b = train(&model, &data, &split, &cfg, |_| {}).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.best, b.best);
        assert!(a.history.len() <= 30);
        if a.stopped_early {
            assert_eq!(a.history.len(), a.best_epoch + 2);
        }
    }

    #[test]
    fn evaluation_is_consistent() {
        let (model, data, split) = setup();
        let store = model.init(0).unwrap();
        let ev = evaluate(&model, &store, &data, &split.test, Precision::F64, (8, 8)).unwrap();
        assert_eq!(ev.map.len(), 64);
        assert_eq!(ev.map.iter().filter(|&&v| v > 0).count(), split.test.len());
        assert_eq!(compute_metrics(&ev.metrics.confusion).unwrap(), ev.metrics);
    }

    #[test]
    fn history_csv_layout() {
        let s = history_csv(&[EpochRecord {
            epoch: 1,
            train_loss: 0.5,
            val_oa: 0.25,
        }]);
        assert_eq!(s, "epoch,train_loss,val_oa\n1,0.5,0.25\n");
    }

    #[test]
    fn train_config_json() {
        let c = TrainConfig::default();
        assert_eq!(TrainConfig::from_json(&c.to_json()).unwrap(), c);
        assert_eq!(TrainConfig::from_json("{}").unwrap(), c);
        assert!(TrainConfig::from_json(r#"{"epochs": 0}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"lr": 0.1}"#).is_err());
    }
}
