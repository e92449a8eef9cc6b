//! Mini-batch training by backpropagation through first-spike times.

pub mod backward;
pub mod gradcheck;
pub mod loss;
pub mod optim;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::model::{forward_model, ForwardTrace, Model};
use crate::scalar::Scalar;

pub use backward::{backward, Gradients};
pub use loss::{loss, regularization, LossValue};
pub use optim::{Optimizer, OptimizerKind};

fn default_l2() -> f64 {
    1e-4
}

fn default_penalty() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Multiplies the learning rate after every epoch.
    #[serde(default)]
    pub lr_decay: Option<f64>,
    pub batch_size: usize,
    #[serde(default = "default_l2")]
    pub l2_coeff: f64,
    #[serde(default = "default_penalty")]
    pub firing_penalty_coeff: f64,
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Stop once an epoch ends with at least this training accuracy.
    #[serde(default)]
    pub target_train_accuracy: Option<f64>,
    /// Rescale each sample's data gradient to at most this L2 norm before
    /// averaging, so one near-threshold neuron cannot swamp a batch.
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
}

impl TrainConfig {
    /// SGD, learning rate 1e-2, batch 60, per-sample gradients clipped to 10.
    pub fn simlidar() -> Self {
        Self {
            optimizer: OptimizerKind::Sgd,
            learning_rate: 1e-2,
            lr_decay: None,
            batch_size: 60,
            l2_coeff: default_l2(),
            firing_penalty_coeff: default_penalty(),
            epochs: 100,
            seed: 0,
            target_train_accuracy: None,
            max_grad_norm: Some(10.0),
        }
    }

    /// Adam, learning rate 1e-3, batch 10.
    pub fn dvs() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            batch_size: 10,
            epochs: 50,
            ..Self::simlidar()
        }
    }

    /// Adam, learning rate 1e-3 decayed by 0.95 per epoch, batch 10.
    pub fn kitti() -> Self {
        Self { lr_decay: Some(0.95), epochs: 200, ..Self::dvs() }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "simlidar" => Some(Self::simlidar()),
            "dvs" => Some(Self::dvs()),
            "kitti" => Some(Self::kitti()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        // A zero rate is allowed: it gives a dry run that leaves weights unchanged.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.l2_coeff >= 0.0) || !(self.firing_penalty_coeff >= 0.0) {
            return bad("regularization coefficients must be nonnegative".into());
        }
        if let Some(d) = self.lr_decay {
            if !(d > 0.0 && d <= 1.0) {
                return bad(format!("lr_decay must be in (0, 1], got {d}"));
            }
        }
        if let Some(n) = self.max_grad_norm {
            if !(n > 0.0) {
                return bad(format!("max_grad_norm must be positive, got {n}"));
            }
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Batch-averaged loss over the epoch.
    pub loss: LossValue<f64>,
    /// Accuracy of the predictions made during the epoch's forward passes.
    pub train_accuracy: f64,
    pub validation_accuracy: Option<f64>,
    /// Not serialized, so logs are reproducible byte for byte.
    #[serde(skip)]
    pub wall_time_s: f64,
}

/// Fraction of samples whose first output spike names the right class.
pub fn accuracy<T: Scalar>(model: &Model<T>, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let correct: Vec<bool> = samples
        .par_iter()
        .map(|s| forward_model(&s.frame, model).map(|t| t.predicted_class == Some(s.label)))
        .collect::<Result<_>>()?;
    Ok(correct.iter().filter(|&&c| c).count() as f64 / samples.len() as f64)
}

fn first_bad_layer<T: Scalar>(model: &Model<T>, trace: &ForwardTrace<T>, grads: &Gradients<T>) -> String {
    if let Some(i) = model.weights.iter().position(|w| w.iter().any(|v| !v.is_finite())) {
        return format!("layer {i} weights");
    }
    for (i, a) in trace.activations.iter().enumerate() {
        if a.values().iter().flatten().any(|z| !z.is_finite()) {
            return format!("layer {i} activations");
        }
    }
    for (i, g) in grads.iter().enumerate() {
        if g.iter().any(|v| !v.is_finite()) {
            return format!("layer {i} gradients");
        }
    }
    "output loss".into()
}

struct SampleResult<T> {
    loss: LossValue<T>,
    grads: Gradients<T>,
    correct: bool,
    bad_layer: Option<String>,
}

fn sample_gradient<T: Scalar>(model: &Model<T>, s: &Sample, penalty_coeff: f64) -> Result<SampleResult<T>> {
    let trace = forward_model(&s.frame, model)?;
    let mut grads = backward::zeros_like(model);
    let data = backward::accumulate_data_gradient(&trace, model, s.label, &mut grads)?;
    let silent = backward::silent_label_penalty(&trace, model, s.label, penalty_coeff, &mut grads);
    let loss = LossValue::new(data.cross_entropy, T::zero(), silent);
    let finite = loss.is_finite() && grads.iter().flatten().all(|g| g.is_finite());
    let bad_layer = (!finite).then(|| first_bad_layer(model, &trace, &grads));
    Ok(SampleResult { loss, grads, correct: trace.predicted_class == Some(s.label), bad_layer })
}

/// Factor that brings one sample's data gradient down to `max` norm.
fn clip_scale<T: Scalar>(grads: &[Vec<T>], max: Option<f64>) -> T {
    let Some(max) = max else { return T::one() };
    let norm = grads.iter().flatten().map(|g| g.to_f64_lossy().powi(2)).sum::<f64>().sqrt();
    if norm > max {
        T::lit(max / norm)
    } else {
        T::one()
    }
}

/// Trains `model` in place. `on_epoch` runs after every epoch with the
/// updated weights (checkpointing, logging). Per-sample gradients are
/// computed in parallel and reduced in sample order, so the trajectory does
/// not depend on the thread count.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    samples: &[Sample],
    validation: Option<&[Sample]>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&Model<T>, &EpochRecord) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    model.spec.validate()?;
    let classes = model.spec.classes();
    if let Some(s) = samples.iter().chain(validation.unwrap_or(&[])).find(|s| s.label >= classes) {
        return Err(Error::Config(format!("label {} exceeds the model's {classes} outputs", s.label)));
    }
    if samples.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer, &model.weights);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut lr = cfg.learning_rate;
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut sum_loss = LossValue::<f64>::default();
        let mut batches = 0usize;
        let mut correct = 0usize;

        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let model_ref: &Model<T> = model;
            let results: Vec<SampleResult<T>> = batch
                .par_iter()
                .map(|&i| sample_gradient(model_ref, &samples[i], cfg.firing_penalty_coeff))
                .collect::<Result<_>>()?;

            if let Some(layer) = results.iter().find_map(|r| r.bad_layer.clone()) {
                return Err(Error::NonFinite { epoch, batch: b, layer });
            }

            let inv = T::one() / T::lit(batch.len() as f64);
            let mut grads = backward::zeros_like(model);
            let mut ce = T::zero();
            let mut silent = T::zero();
            for r in &results {
                ce = ce + r.loss.cross_entropy;
                silent = silent + r.loss.firing_penalty;
                correct += r.correct as usize;
                let s = clip_scale(&r.grads, cfg.max_grad_norm);
                for (g, rg) in grads.iter_mut().zip(&r.grads) {
                    for (a, b) in g.iter_mut().zip(rg) {
                        *a = *a + *b * s;
                    }
                }
            }
            let (l2, pen) = loss::add_regularization(model, cfg.l2_coeff, cfg.firing_penalty_coeff, &mut grads, inv);
            let batch_loss = LossValue::new(ce * inv, l2, pen + silent * inv).to_f64();
            if !batch_loss.is_finite() {
                let layer = model
                    .weights
                    .iter()
                    .position(|w| w.iter().any(|v| !v.is_finite()))
                    .map_or_else(|| "regularizer".to_string(), |i| format!("layer {i} weights"));
                return Err(Error::NonFinite { epoch, batch: b, layer });
            }
            sum_loss.cross_entropy += batch_loss.cross_entropy;
            sum_loss.l2 += batch_loss.l2;
            sum_loss.firing_penalty += batch_loss.firing_penalty;
            batches += 1;

            opt.step(&mut model.weights, &grads, lr);
        }

        let n = batches as f64;
        let mean = LossValue::new(sum_loss.cross_entropy / n, sum_loss.l2 / n, sum_loss.firing_penalty / n);
        let validation_accuracy = match validation {
            Some(v) if !v.is_empty() => Some(accuracy(model, v)?),
            _ => None,
        };
        let record = EpochRecord {
            epoch,
            learning_rate: lr,
            loss: mean,
            train_accuracy: correct as f64 / samples.len() as f64,
            validation_accuracy,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.4} (ce {:.4}) train acc {:.4}{}",
            record.loss.total,
            record.loss.cross_entropy,
            record.train_accuracy,
            record.validation_accuracy.map(|a| format!(" val acc {a:.4}")).unwrap_or_default()
        );
        on_epoch(model, &record)?;
        log.push(record);

        if let Some(d) = cfg.lr_decay {
            lr *= d;
        }
        if let Some(target) = cfg.target_train_accuracy {
            // The running figure mixes weights from the whole epoch; confirm
            // with a clean pass before stopping.
            if log.last().unwrap().train_accuracy >= target && accuracy(model, samples)? >= target {
                break;
            }
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::PulseFrame;
    use crate::model::ModelSpec;

    /// Two classes over 8 channels: class 0 spikes early on channels 0..4,
    /// class 1 on channels 4..8; the other half spikes late.
    pub(crate) fn toy_set(n: usize, seed: u64) -> Vec<Sample> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = i % 2;
                let times = (0..8)
                    .map(|c| {
                        let early = (c < 4) == (label == 0);
                        let base = if early { 0.0 } else { 0.6 };
                        Some(base + rng.random_range(0.0..0.3f32))
                    })
                    .collect();
                Sample::new(PulseFrame::new(vec![8], times).unwrap(), label)
            })
            .collect()
    }

    fn toy_cfg() -> TrainConfig {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-2,
            batch_size: 5,
            epochs: 50,
            seed: 9,
            ..TrainConfig::simlidar()
        }
    }

    #[test]
    fn separable_toy_set_reaches_full_accuracy() {
        let data = toy_set(20, 1);
        let mut model = Model::<f64>::init(ModelSpec::mlp(vec![8], &[10, 2]), 4).unwrap();
        train(&mut model, &data, None, &toy_cfg(), |_, _| Ok(())).unwrap();
        assert_eq!(accuracy(&model, &data).unwrap(), 1.0);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let data = toy_set(20, 2);
        let run = || {
            let mut m = Model::<f32>::init(ModelSpec::mlp(vec![8], &[6, 2]), 4).unwrap();
            let cfg = TrainConfig { epochs: 2, ..toy_cfg() };
            let log = train(&mut m, &data, None, &cfg, |_, _| Ok(())).unwrap();
            (log[0].loss.total.to_bits(), m)
        };
        let (a, ma) = run();
        let (b, mb) = run();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
    }

    #[test]
    fn zero_learning_rate_leaves_weights() {
        let data = toy_set(10, 3);
        let init = Model::<f32>::init(ModelSpec::mlp(vec![8], &[6, 2]), 4).unwrap();
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut m = init.clone();
            let cfg = TrainConfig { optimizer: kind, learning_rate: 0.0, epochs: 1, ..toy_cfg() };
            train(&mut m, &data, None, &cfg, |_, _| Ok(())).unwrap();
            assert_eq!(m, init);
        }
    }

    #[test]
    fn rejects_out_of_range_labels() {
        let mut data = toy_set(4, 3);
        data[0].label = 5;
        let mut m = Model::<f32>::init(ModelSpec::mlp(vec![8], &[2]), 4).unwrap();
        assert!(train(&mut m, &data, None, &toy_cfg(), |_, _| Ok(())).is_err());
    }

    #[test]
    fn non_finite_loss_names_layer() {
        let data = toy_set(4, 3);
        let mut m = Model::<f32>::init(ModelSpec::mlp(vec![8], &[4, 2]), 4).unwrap();
        m.weights[1][0] = f32::NAN;
        let err = train(&mut m, &data, None, &toy_cfg(), |_, _| Ok(())).unwrap_err();
        match err {
            Error::NonFinite { layer, .. } => assert!(layer.contains("layer 1"), "{layer}"),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { batch_size: 0, ..toy_cfg() }.validate().is_err());
        assert!(TrainConfig { learning_rate: -1.0, ..toy_cfg() }.validate().is_err());
        assert!(TrainConfig { lr_decay: Some(1.5), ..toy_cfg() }.validate().is_err());
        assert_eq!(TrainConfig::kitti().lr_decay, Some(0.95));
        assert_eq!(TrainConfig::simlidar().batch_size, 60);
    }
}
