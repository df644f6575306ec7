//! Masked SGD with momentum and weight decay.

use serde::{Deserialize, Serialize};

use crate::data::{epoch_order, Dataset};
use crate::error::{Error, Result};
use crate::mask::{apply_mask, SparsityMask};
use crate::nn::{loss_and_grad, NetworkSpec, ParamVector};

/// Learning-rate schedule over epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SchedulerSpec {
    Constant,
    /// Multiply by `gamma` at every milestone epoch reached.
    #[serde(rename = "multistep")]
    MultiStep { milestones: Vec<usize>, gamma: f64 },
    /// Cosine annealing from `initial` to `final`; ignores the base rate.
    Cosine {
        initial: f64,
        #[serde(rename = "final")]
        final_lr: f64,
    },
}

impl SchedulerSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            SchedulerSpec::Constant => Ok(()),
            SchedulerSpec::MultiStep { milestones, gamma } => {
                if milestones.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Config(format!(
                        "milestones must be strictly increasing, got {milestones:?}"
                    )));
                }
                if !(*gamma > 0.0 && *gamma <= 1.0) {
                    return Err(Error::Config(format!("gamma must lie in (0, 1], got {gamma}")));
                }
                Ok(())
            }
            SchedulerSpec::Cosine { initial, final_lr } => {
                if !(*initial > 0.0 && *final_lr >= 0.0) {
                    return Err(Error::Config(format!(
                        "cosine schedule needs initial > 0 and final ≥ 0, got {initial} → {final_lr}"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Learning rate used throughout `epoch` (0-based) of a `total_epochs` run.
pub fn lr_at(scheduler: &SchedulerSpec, base_lr: f64, epoch: usize, total_epochs: usize) -> f64 {
    match scheduler {
        SchedulerSpec::Constant => base_lr,
        SchedulerSpec::MultiStep { milestones, gamma } => {
            let passed = milestones.iter().filter(|&&m| m <= epoch).count();
            base_lr * gamma.powi(passed as i32)
        }
        SchedulerSpec::Cosine { initial, final_lr } => {
            let t = epoch as f64 / total_epochs.max(1) as f64;
            final_lr + 0.5 * (initial - final_lr) * (1.0 + (std::f64::consts::PI * t).cos())
        }
    }
}

/// Unset fields take the defaults; the seed is never read from a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub scheduler: SchedulerSpec,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SgdConfig {
    /// MLP200 settings: lr 0.01, momentum 0.9, weight decay 1e-3, 60 epochs,
    /// ×0.1 at epochs 20 and 40.
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 1e-3,
            epochs: 60,
            batch_size: 128,
            scheduler: SchedulerSpec::MultiStep {
                milestones: vec![20, 40],
                gamma: 0.1,
            },
            seed: 0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be ≥ 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight_decay must be ≥ 0, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        self.scheduler.validate()
    }
}

/// Heavy-ball SGD state. Both the velocity and the parameters are projected
/// onto the mask after every step.
#[derive(Clone, Debug)]
pub struct Sgd {
    velocity: Vec<f64>,
    momentum: f64,
    weight_decay: f64,
}

impl Sgd {
    pub fn new(num_params: usize, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            velocity: vec![0.0; num_params],
            momentum,
            weight_decay,
        }
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    /// `v ← μv + (g + λ_wd θ)`, `θ ← m ⊙ (θ − lr·v)`.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], mask: &SparsityMask, lr: f64) {
        let bits = mask.bits();
        for k in 0..theta.len() {
            if !bits[k] {
                self.velocity[k] = 0.0;
                theta[k] = 0.0;
                continue;
            }
            self.velocity[k] = self.momentum * self.velocity[k] + (grad[k] + self.weight_decay * theta[k]);
            theta[k] -= lr * self.velocity[k];
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean of the minibatch losses seen during the epoch.
    pub train_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamVector,
    pub trace: Vec<EpochRecord>,
}

/// Train inside `mask` from `mask ⊙ params0`. Data is reshuffled every epoch.
pub fn sgd_train(
    net: &NetworkSpec,
    params0: &ParamVector,
    mask: &SparsityMask,
    dataset: &Dataset,
    config: &SgdConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.dim() != net.input_dim() {
        return Err(Error::Dimension(format!(
            "dataset has {} features, network expects {}",
            dataset.dim(),
            net.input_dim()
        )));
    }
    let mut params = apply_mask(params0, mask)?;
    let mut opt = Sgd::new(params.len(), config.momentum, config.weight_decay);
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = lr_at(&config.scheduler, config.learning_rate, epoch, config.epochs);
        let order = epoch_order(dataset.len(), config.seed, epoch);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch = dataset.batch(idx);
            let (loss, grad) = loss_and_grad(net, &params, Some(mask), &batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            opt.step(params.values_mut(), grad.values(), mask, lr);
            if !params.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            total += loss;
            batches += 1;
        }
        let train_loss = total / batches as f64;
        log::debug!("sgd epoch {epoch}: lr {lr:.3e}, loss {train_loss:.5}");
        trace.push(EpochRecord {
            epoch,
            lr,
            train_loss,
        });
    }
    Ok(TrainOutcome { params, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::nn::{logits, nll_loss};
    use crate::rng;
    use ndarray::Axis;

    fn mean_loss(net: &NetworkSpec, p: &ParamVector, d: &Dataset) -> f64 {
        let z = logits(net, p, None, d.features()).unwrap();
        nll_loss(&z, d.labels()).unwrap().0
    }

    fn accuracy(net: &NetworkSpec, p: &ParamVector, d: &Dataset) -> f64 {
        let z = logits(net, p, None, d.features()).unwrap();
        let hits = z
            .axis_iter(Axis(0))
            .zip(d.labels())
            .filter(|(row, &y)| {
                let mut best = 0;
                for c in 1..row.len() {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                best == y
            })
            .count();
        hits as f64 / d.len() as f64
    }

    #[test]
    fn multistep_schedule_mlp200_values() {
        let s = SchedulerSpec::MultiStep {
            milestones: vec![20, 40],
            gamma: 0.1,
        };
        assert_eq!(lr_at(&s, 0.01, 0, 60), 0.01);
        assert!((lr_at(&s, 0.01, 25, 60) - 0.001).abs() < 1e-15);
        assert!((lr_at(&s, 0.01, 45, 60) - 0.0001).abs() < 1e-15);
        assert!((lr_at(&s, 0.01, 20, 60) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let s = SchedulerSpec::Cosine {
            initial: 0.2,
            final_lr: 0.0,
        };
        assert_eq!(lr_at(&s, 123.0, 0, 50), 0.2);
        assert!((lr_at(&s, 0.0, 25, 50) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn invalid_schedules_rejected() {
        assert!(SchedulerSpec::MultiStep { milestones: vec![40, 20], gamma: 0.1 }.validate().is_err());
        assert!(SchedulerSpec::MultiStep { milestones: vec![20], gamma: 1.5 }.validate().is_err());
    }

    fn small_config() -> SgdConfig {
        SgdConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            epochs: 20,
            batch_size: 8,
            scheduler: SchedulerSpec::Constant,
            seed: 3,
        }
    }

    #[test]
    fn zero_learning_rate_only_masks() {
        let d = synth_blobs(2, 10, 3, 0.1, 1).unwrap();
        let net = NetworkSpec::mlp(&[3, 4, 2]).unwrap();
        let p0 = ParamVector::he_uniform(&net, &mut rng::stream(1, "i", 0));
        let mut mask = SparsityMask::full(&net);
        mask.set(0, false);
        mask.set(5, false);
        let cfg = SgdConfig {
            learning_rate: 0.0,
            epochs: 3,
            ..small_config()
        };
        let out = sgd_train(&net, &p0, &mask, &d, &cfg).unwrap();
        assert_eq!(out.params, apply_mask(&p0, &mask).unwrap());
    }

    #[test]
    fn masked_coordinates_stay_exactly_zero() {
        let d = synth_blobs(3, 10, 3, 0.2, 2).unwrap();
        let net = NetworkSpec::mlp(&[3, 5, 3]).unwrap();
        let p0 = ParamVector::he_uniform(&net, &mut rng::stream(2, "i", 0));
        let mask = crate::mask::random_global_mask(&net, 0.6, &mut rng::stream(2, "m", 0)).unwrap();
        let out = sgd_train(&net, &p0, &mask, &d, &SgdConfig { weight_decay: 0.01, ..small_config() }).unwrap();
        for (k, v) in out.params.values().iter().enumerate() {
            if !mask.is_active(k) {
                assert_eq!(v.to_bits(), 0.0f64.to_bits());
            }
        }
    }

    /// Perceptron: returns true if it finds a separating hyperplane.
    fn perceptron_separates(d: &Dataset) -> bool {
        let dim = d.dim();
        let mut w = vec![0.0; dim + 1];
        for _ in 0..1000 {
            let mut mistakes = 0;
            for (x, &y) in d.features().axis_iter(Axis(0)).zip(d.labels()) {
                let s = if y == 1 { 1.0 } else { -1.0 };
                let act: f64 = w[dim] + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
                if s * act <= 0.0 {
                    for j in 0..dim {
                        w[j] += s * x[j];
                    }
                    w[dim] += s;
                    mistakes += 1;
                }
            }
            if mistakes == 0 {
                return true;
            }
        }
        false
    }

    #[test]
    fn learns_separable_blobs() {
        let d = synth_blobs(2, 50, 2, 0.05, 7).unwrap();
        assert!(perceptron_separates(&d), "fixture must be linearly separable");
        let net = NetworkSpec::mlp(&[2, 8, 2]).unwrap();
        let p0 = ParamVector::he_uniform(&net, &mut rng::stream(7, "i", 0));
        let full = SparsityMask::full(&net);
        let out = sgd_train(&net, &p0, &full, &d, &small_config()).unwrap();
        assert!(accuracy(&net, &out.params, &d) >= 0.99);
        assert!(mean_loss(&net, &out.params, &d) < mean_loss(&net, &p0, &d));
        assert_eq!(out.trace.len(), 20);
    }

    #[test]
    fn training_is_deterministic() {
        let d = synth_blobs(3, 10, 4, 0.3, 5).unwrap();
        let net = NetworkSpec::mlp(&[4, 6, 3]).unwrap();
        let p0 = ParamVector::he_uniform(&net, &mut rng::stream(5, "i", 0));
        let full = SparsityMask::full(&net);
        let a = sgd_train(&net, &p0, &full, &d, &small_config()).unwrap();
        let b = sgd_train(&net, &p0, &full, &d, &small_config()).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn divergence_is_reported_with_location() {
        let d = synth_blobs(2, 10, 2, 0.3, 5).unwrap();
        let net = NetworkSpec::mlp(&[2, 4, 2]).unwrap();
        let p0 = ParamVector::he_uniform(&net, &mut rng::stream(5, "i", 0));
        let cfg = SgdConfig {
            learning_rate: 1e300,
            momentum: 0.0,
            ..small_config()
        };
        let err = sgd_train(&net, &p0, &SparsityMask::full(&net), &d, &cfg).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { .. } | Error::Numeric(_)), "{err}");
    }
}
