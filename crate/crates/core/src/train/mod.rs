//! SGD training, evaluation and run reports.

mod config;
mod grid;
mod report;

pub use config::{LrSchedule, TrainConfig};
pub use grid::{run_grid, ArmResult, GridArm, GridReport, GridSpec};
pub use report::{EpochRecord, RunReport};

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{save_checkpoint, Checkpoint, Dataset, Split, Splits};
use crate::error::{Error, Result};
use crate::layers::{count_flops, Mode, Model, Params};
use crate::ops;
use crate::rng::{SeedRng, Stream};
use crate::tensor::Tensor4;

/// Steps between divergence checks.
pub const NAN_GUARD_INTERVAL: u64 = 50;
const EVAL_BATCH: usize = 500;

/// Training state that is not part of the model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub epochs_done: usize,
    pub step: u64,
    pub history: Vec<EpochRecord>,
    pub step_losses: Vec<f32>,
    pub initial_train_loss: Option<f64>,
    pub best_accuracy: Option<f64>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    /// Seconds spent in completed epochs, across resumptions.
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

/// Eval-mode loss, top-1 accuracy and predicted labels over a split.
pub fn evaluate(model: &mut Model<f32>, data: &Dataset) -> Result<EvalResult> {
    if data.is_empty() {
        return Err(Error::EmptySplit(data.split.to_string()));
    }
    let mut predictions = Vec::with_capacity(data.len());
    let mut loss = 0.0f64;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, y) = data.batch(chunk);
        let logits = model.forward(&x, Mode::Eval)?;
        let (l, _) = ops::softmax_cross_entropy(&logits, &y)?;
        loss += l as f64 * chunk.len() as f64;
        predictions.extend(ops::argmax_rows(&logits));
    }
    let correct = predictions.iter().zip(&data.labels).filter(|(p, l)| p == l).count();
    Ok(EvalResult {
        loss: loss / data.len() as f64,
        accuracy: correct as f64 / data.len() as f64,
        predictions,
    })
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Written after every epoch.
    pub checkpoint: Option<PathBuf>,
    /// Returns after this many epochs even if the run is not finished.
    pub max_epochs: Option<usize>,
    pub verbose: bool,
}

/// A training run that can be stepped epoch by epoch and checkpointed.
pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub model: Model<f32>,
    pub progress: Progress,
    splits: &'a Splits,
    momentum: Vec<(String, Tensor4<f32>)>,
    best: Vec<(String, Tensor4<f32>)>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, splits: &'a Splits) -> Result<Self> {
        config.validate()?;
        check_dataset(&config, splits)?;
        let mut model = Model::new(&config.model, config.seed)?;
        let mut momentum = Vec::new();
        model.visit_params("", &mut |name, _, p| momentum.push((name.to_string(), Tensor4::zeros(p.value.shape()))));
        Ok(Trainer {
            config,
            model,
            progress: Progress::default(),
            splits,
            momentum,
            best: Vec::new(),
        })
    }

    pub fn from_checkpoint(ck: Checkpoint, splits: &'a Splits) -> Result<Self> {
        let mut t = Trainer::new(ck.config, splits)?;
        t.model.load_state_dict(&ck.model)?;
        let names: Vec<_> = t.momentum.iter().map(|(n, _)| n.clone()).collect();
        let stored: Vec<_> = ck.momentum.iter().map(|(n, _)| n.clone()).collect();
        if names != stored {
            return Err(Error::InvalidArgument("checkpoint momentum buffers do not match the model".into()));
        }
        for ((_, dst), (name, src)) in t.momentum.iter_mut().zip(ck.momentum) {
            if dst.shape() != src.shape() {
                return Err(Error::shape("Trainer::from_checkpoint", format!("momentum '{name}'")));
            }
            *dst = src;
        }
        t.best = ck.best;
        t.progress = ck.progress;
        Ok(t)
    }

    pub fn checkpoint(&mut self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            progress: self.progress.clone(),
            model: self.model.state_dict(),
            momentum: self.momentum.clone(),
            best: self.best.clone(),
        }
    }

    pub fn is_finished(&self) -> bool {
        self.progress.stopped_early || self.progress.epochs_done >= self.config.epochs
    }

    fn train_len(&self) -> usize {
        let n = self.splits.train.len();
        self.config.train_limit.map_or(n, |l| l.min(n))
    }

    fn sgd_step(&mut self, lr: f64) {
        let (lr, mu) = (lr as f32, self.config.momentum as f32);
        let config = &self.config;
        let mut bufs = self.momentum.iter_mut();
        self.model.visit_params("", &mut |_, kind, p| {
            let wd = config.decay_for(kind) as f32;
            let (_, buf) = bufs.next().expect("one momentum buffer per parameter");
            for ((v, &g), b) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(buf.data_mut()) {
                *b = mu * *b + (g + wd * *v);
                *v -= lr * *b;
            }
        });
    }

    fn divergence(&mut self, x: &Tensor4<f32>) -> Error {
        Error::Divergence {
            step: self.progress.step as usize,
            layer: self.model.locate_non_finite(x).unwrap_or_else(|| "loss".into()),
        }
    }

    fn params_finite(&mut self) -> bool {
        let mut ok = true;
        self.model.visit_params("", &mut |_, _, p| ok &= p.value.all_finite());
        ok
    }

    /// One pass over the (shuffled) training split followed by a test
    /// evaluation.
    pub fn run_epoch(&mut self) -> Result<()> {
        let start = Instant::now();
        let epoch = self.progress.epochs_done;
        let rng = SeedRng::new(self.config.seed);
        let mut order: Vec<usize> = (0..self.train_len()).collect();
        order.shuffle(&mut rng.stream(Stream::Shuffle, epoch as u64));
        let mut aug_rng = rng.stream(Stream::Augment, epoch as u64);
        let lr = self.config.lr_at(epoch);

        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        let mut last_x = None;
        for chunk in order.chunks(self.config.batch_size) {
            let (mut x, y) = self.splits.train.batch(chunk);
            self.config.augment.apply(&mut x, &mut aug_rng);
            self.model.zero_grad();
            let logits = self.model.forward(&x, Mode::Train)?;
            let (loss, g) = ops::softmax_cross_entropy(&logits, &y)?;
            self.progress.initial_train_loss.get_or_insert(loss as f64);
            self.model.backward(&g)?;
            self.sgd_step(lr);
            self.progress.step += 1;
            self.progress.step_losses.push(loss);
            loss_sum += loss as f64 * chunk.len() as f64;
            correct += ops::argmax_rows(&logits).iter().zip(&y).filter(|(p, l)| p == l).count();
            if self.progress.step.is_multiple_of(NAN_GUARD_INTERVAL) && (!loss.is_finite() || !self.params_finite()) {
                return Err(self.divergence(&x));
            }
            last_x = Some(x);
        }
        let n = order.len().max(1) as f64;
        let train_loss = loss_sum / n;
        if !train_loss.is_finite() || !self.params_finite() {
            let x = last_x.unwrap_or_else(|| self.splits.test.batch(&[0]).0);
            return Err(self.divergence(&x));
        }

        let test = evaluate(&mut self.model, &self.splits.test)?;
        let epoch_no = epoch + 1;
        self.progress.history.push(EpochRecord {
            epoch: epoch_no,
            split: Split::Train,
            loss: train_loss,
            accuracy: correct as f64 / n,
        });
        self.progress.history.push(EpochRecord {
            epoch: epoch_no,
            split: Split::Test,
            loss: test.loss,
            accuracy: test.accuracy,
        });
        if self.progress.best_accuracy.is_none_or(|b| test.accuracy > b) {
            self.progress.best_accuracy = Some(test.accuracy);
            self.progress.best_epoch = Some(epoch_no);
            self.best = self.model.state_dict();
        }
        if self.config.target_accuracy.is_some_and(|t| test.accuracy >= t) {
            self.progress.stopped_early = true;
        }
        self.progress.epochs_done = epoch_no;
        self.progress.wall_clock_s += start.elapsed().as_secs_f64();
        Ok(())
    }

    /// Runs epochs until done (or `max_epochs` in this call), returning the
    /// best model by test accuracy and the report.
    pub fn run(mut self, opts: &TrainOptions) -> Result<(Model<f32>, RunReport)> {
        let mut ran = 0;
        while !self.is_finished() && opts.max_epochs.is_none_or(|m| ran < m) {
            self.run_epoch()?;
            ran += 1;
            if opts.verbose {
                let h = &self.progress.history[self.progress.history.len() - 2..];
                eprintln!(
                    "epoch {:>3}  train loss {:.4} acc {:.4}  test loss {:.4} acc {:.4}",
                    h[0].epoch, h[0].loss, h[0].accuracy, h[1].loss, h[1].accuracy
                );
            }
            if let Some(path) = &opts.checkpoint {
                save_checkpoint(path, &self.checkpoint())?;
            }
        }
        if let (Some(path), 0) = (&opts.checkpoint, ran) {
            save_checkpoint(path, &self.checkpoint())?;
        }
        let mut model = self.model;
        if !self.best.is_empty() {
            model.load_state_dict(&self.best)?;
        }
        let report = RunReport::new(&self.config, &self.progress, count_flops(&model)?);
        Ok((model, report))
    }
}

fn check_dataset(config: &TrainConfig, splits: &Splits) -> Result<()> {
    for d in [&splits.train, &splits.test] {
        if d.is_empty() {
            return Err(Error::EmptySplit(d.split.to_string()));
        }
        if d.sample_shape() != config.model.input || d.num_classes != config.model.num_classes {
            return Err(Error::InvalidArgument(format!(
                "{} split has samples {:?} over {} classes; model expects {:?} over {}",
                d.split,
                d.sample_shape(),
                d.num_classes,
                config.model.input,
                config.model.num_classes
            )));
        }
    }
    Ok(())
}

/// Trains from scratch.
pub fn train(config: TrainConfig, splits: &Splits) -> Result<(Model<f32>, RunReport)> {
    Trainer::new(config, splits)?.run(&TrainOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::toy_two_class;

    fn params(m: &mut Model<f32>) -> Vec<Tensor4<f32>> {
        let mut out = Vec::new();
        m.visit_params("", &mut |_, _, p| out.push(p.value.clone()));
        out
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let splits = toy_two_class(1);
        let config = TrainConfig {
            lr: 0.0,
            epochs: 1,
            ..TrainConfig::toy()
        };
        let mut t = Trainer::new(config, &splits).unwrap();
        let before = params(&mut t.model);
        t.run_epoch().unwrap();
        assert_eq!(params(&mut t.model), before);
    }

    #[test]
    fn empty_split_rejected() {
        let splits = toy_two_class(1);
        let mut m = Model::new(&TrainConfig::toy().model, 1).unwrap();
        let empty = splits.test.take(0);
        assert!(matches!(evaluate(&mut m, &empty).unwrap_err(), Error::EmptySplit(_)));
    }

    #[test]
    fn forced_correct_single_sample() {
        let splits = toy_two_class(1);
        let mut m = Model::new(&TrainConfig::toy().model, 1).unwrap();
        let one = splits.test.take(1);
        let label = one.labels[0];
        let classes = m.spec.num_classes;
        m.fc.weight.value.fill(0.0);
        let mut bias = vec![0.0; classes];
        bias[label] = 10.0;
        m.fc.bias.value = Tensor4::vector(bias);
        assert_eq!(evaluate(&mut m, &one).unwrap().accuracy, 1.0);
    }

    #[test]
    fn geometry_mismatch_rejected() {
        let splits = toy_two_class(1);
        assert!(Trainer::new(TrainConfig::mnist(), &splits).is_err());
    }
}
