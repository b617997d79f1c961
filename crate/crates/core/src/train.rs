//! Mini-batch Adam training with validation-loss early stopping.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Adam, Mlp, OutputKind, Target};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub dropout: f64,
    /// Epochs without a validation-loss improvement before stopping.
    pub patience: usize,
    /// Share of the training items held out to monitor early stopping.
    pub validation_fraction: f64,
    /// Width of the hidden layer, i.e. of the learned embedding.
    pub hidden_dim: usize,
    /// Inverse-frequency class weighting; off by default.
    pub class_weighting: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 4,
            max_epochs: 30,
            dropout: 0.2,
            patience: 5,
            validation_fraction: 0.1,
            hidden_dim: 256,
            class_weighting: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 || self.hidden_dim == 0 {
            return Err(Error::Config(
                "batch_size, max_epochs, patience and hidden_dim must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} is outside [0, 1)", self.dropout)));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

/// Per-epoch history; epoch 0 is the untrained model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainLog {
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for e in &self.epochs {
            serde_json::to_writer(&mut out, e)?;
            out.push(b'\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }
}

/// One supervised example.
#[derive(Clone, Debug)]
pub struct Example<T> {
    pub input: Vec<T>,
    pub target: Target,
}

impl<T> Example<T> {
    pub fn new(input: Vec<T>, target: Target) -> Self {
        Example { input, target }
    }
}

fn batch_refs<'a, T>(examples: &[&'a Example<T>]) -> Vec<(&'a [T], &'a Target)> {
    examples.iter().map(|e| (e.input.as_slice(), &e.target)).collect()
}

/// Fraction of correct decisions: arg-max for softmax heads, observed labels
/// at threshold 0.5 for sigmoid heads.
pub fn accuracy<T: Scalar>(model: &Mlp<T>, examples: &[&Example<T>]) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for e in examples {
        let p = model.predict(&e.input);
        match &e.target {
            Target::Class(c) => {
                total += 1;
                if argmax(&p) == *c {
                    hit += 1;
                }
            }
            Target::Labels(labels) => {
                for (prob, label) in p.iter().zip(labels) {
                    if let Some(y) = label {
                        total += 1;
                        if (*prob >= T::of(0.5)) == *y {
                            hit += 1;
                        }
                    }
                }
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

/// Index of the largest value; the first one on ties.
pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn weighted_loss<T: Scalar>(model: &Mlp<T>, examples: &[&Example<T>]) -> f64 {
    if examples.is_empty() {
        return f64::NAN;
    }
    model.loss(&batch_refs(examples)).to_f64_lossy()
}

/// Splits `examples` into a training part and a seeded validation slice of
/// `round(validation_fraction * n)` items (at least one when `n >= 2`).
pub fn validation_split<T>(examples: &[Example<T>], fraction: f64, seed: u64) -> (Vec<&Example<T>>, Vec<&Example<T>>) {
    let n = examples.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = if fraction > 0.0 && n >= 2 {
        ((fraction * n as f64).round() as usize).clamp(1, n - 1)
    } else {
        0
    };
    let val = order[..n_val].iter().map(|&i| &examples[i]).collect();
    let train = order[n_val..].iter().map(|&i| &examples[i]).collect();
    (train, val)
}

/// Trains a fresh head. Returns the weights with the lowest monitored loss
/// (validation loss, or training loss when no validation slice exists).
pub fn fit<T: Scalar>(
    input_dim: usize,
    output_dim: usize,
    output: OutputKind,
    examples: &[Example<T>],
    cfg: &TrainConfig,
) -> Result<(Mlp<T>, TrainLog)> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Config("no training examples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Mlp::new(input_dim, cfg.hidden_dim, output_dim, output, cfg.dropout, &mut rng);
    let (train, val) = validation_split(examples, cfg.validation_fraction, cfg.seed ^ 0x5eed);
    let weighted = cfg.class_weighting && output == OutputKind::Softmax;
    let class_weights: Vec<f64> = if weighted {
        let mut counts = vec![0usize; output_dim];
        for e in &train {
            if let Target::Class(c) = e.target {
                counts[c] += 1;
            }
        }
        let n = train.len() as f64;
        counts
            .iter()
            .map(|&c| {
                if c == 0 {
                    0.0
                } else {
                    n / (output_dim as f64 * c as f64)
                }
            })
            .collect()
    } else {
        Vec::new()
    };

    let mut opt = Adam::new(&model, cfg.learning_rate);
    let mut log = TrainLog::default();
    let record = |model: &Mlp<T>, epoch: usize| -> EpochRecord {
        EpochRecord {
            epoch,
            train_loss: weighted_loss(model, &train),
            train_acc: accuracy(model, &train),
            val_loss: weighted_loss(model, &val),
            val_acc: if val.is_empty() {
                f64::NAN
            } else {
                accuracy(model, &val)
            },
        }
    };
    let monitored = |r: &EpochRecord| if val.is_empty() { r.train_loss } else { r.val_loss };

    let first = record(&model, 0);
    if !monitored(&first).is_finite() {
        return Err(Error::Numeric {
            message: "loss is not finite before training".into(),
            last_stable_epoch: 0,
        });
    }
    let mut best = (monitored(&first), model.clone(), 0usize);
    log.epochs.push(first);
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example<T>> = chunk.iter().map(|&i| train[i]).collect();
            let weights: Option<Vec<T>> = weighted.then(|| {
                batch
                    .iter()
                    .map(|e| match e.target {
                        Target::Class(c) => T::of(class_weights[c]),
                        Target::Labels(_) => T::one(),
                    })
                    .collect()
            });
            let (_, grad) = model.weighted_loss_and_gradient(&batch_refs(&batch), weights.as_deref(), Some(&mut rng));
            opt.update(&mut model, &grad);
        }
        let rec = record(&model, epoch);
        let loss = monitored(&rec);
        if !loss.is_finite() || !model.is_finite() {
            return Err(Error::Numeric {
                message: format!("loss became {loss} at epoch {epoch}"),
                last_stable_epoch: epoch - 1,
            });
        }
        log.epochs.push(rec);
        if loss < best.0 {
            best = (loss, model.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    log.best_epoch = best.2;
    Ok((best.1, log))
}
