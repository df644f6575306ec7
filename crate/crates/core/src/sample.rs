//! Stochastic-gradient HMC restricted to a sparse substructure, and
//! orchestration of independent chains.
//!
//! Each step draws a minibatch, forms the masked energy gradient ∇Û and updates
//!
//! ```text
//! r ← (1 − η)·r − α·∇Û + ε·√(2ηα),   ε ~ N(0, I)
//! θ ← m ⊙ (θ + r)
//! ```
//!
//! Both updates act coordinate-wise, so pruned coordinates never leak into
//! active ones.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{epoch_order, Dataset};
use crate::error::{Error, Result};
use crate::mask::{apply_mask, MaskProvenance, SparsityMask};
use crate::metrics;
use crate::nn::{stochastic_grad_u, NetworkSpec, ParamVector, PriorConfig};
use crate::rng;
use crate::train::{lr_at, sgd_train, SchedulerSpec, SgdConfig};

/// How the configured step size maps onto α in the update rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepScaling {
    /// α = step / N: the step size is a per-example learning rate, as with
    /// SGD on the mean loss.
    PerDatum,
    /// α = step.
    Absolute,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SghmcConfig {
    pub step_size: f64,
    pub step_schedule: SchedulerSpec,
    pub step_scaling: StepScaling,
    /// Friction η ∈ (0, 1]; the momentum decay is 1 − η.
    pub friction: f64,
    pub prior_precision: f64,
    pub burn_in_epochs: usize,
    /// Set from the chain budget, never from a config file.
    #[serde(skip)]
    pub num_samples: usize,
    pub batch_size: usize,
    pub samples_per_epoch: usize,
    pub noise_enabled: bool,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SghmcConfig {
    /// MLP200 settings: constant step 0.01, η = 0.1, λ = 60, 50 burn-in
    /// epochs, 50 samples.
    fn default() -> Self {
        SghmcConfig {
            step_size: 0.01,
            step_schedule: SchedulerSpec::Constant,
            step_scaling: StepScaling::PerDatum,
            friction: 0.1,
            prior_precision: 60.0,
            burn_in_epochs: 50,
            num_samples: 50,
            batch_size: 128,
            samples_per_epoch: 1,
            noise_enabled: true,
            seed: 0,
        }
    }
}

impl SghmcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.friction > 0.0 && self.friction <= 1.0) {
            return Err(Error::Config(format!(
                "friction must lie in (0, 1], got {}",
                self.friction
            )));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!("step_size must be > 0, got {}", self.step_size)));
        }
        if let SchedulerSpec::Cosine { final_lr, .. } = self.step_schedule {
            // the last epoch is strictly before the end, so α stays positive
            // unless the schedule itself is degenerate
            if final_lr < 0.0 {
                return Err(Error::Config("cosine step schedule must end at ≥ 0".into()));
            }
        }
        self.step_schedule.validate()?;
        PriorConfig::new(self.prior_precision)?;
        if self.num_samples == 0 {
            return Err(Error::Config("num_samples must be positive".into()));
        }
        if self.batch_size == 0 || self.samples_per_epoch == 0 {
            return Err(Error::Config(
                "batch_size and samples_per_epoch must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Total epochs run: burn-in plus enough epochs to emit every sample.
    pub fn total_epochs(&self) -> usize {
        self.burn_in_epochs + self.num_samples.div_ceil(self.samples_per_epoch)
    }

    fn alpha(&self, epoch: usize, dataset_len: usize) -> f64 {
        let step = lr_at(&self.step_schedule, self.step_size, epoch, self.total_epochs());
        match self.step_scaling {
            StepScaling::PerDatum => step / dataset_len as f64,
            StepScaling::Absolute => step,
        }
    }
}

/// Position, momentum and noise stream of one chain.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub theta: Vec<f64>,
    pub momentum: Vec<f64>,
    rng: ChaCha8Rng,
    steps: u64,
}

impl ChainState {
    /// Start at `mask ⊙ theta0` with zero momentum.
    pub fn new(theta0: &[f64], mask: &SparsityMask, noise_seed: u64) -> Self {
        ChainState {
            theta: mask.apply_slice(theta0),
            momentum: vec![0.0; theta0.len()],
            rng: rng::stream(noise_seed, rng::CHAIN_NOISE, 0),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One SGHMC update given the energy gradient. One standard-normal draw
    /// is consumed per coordinate when noise is enabled.
    pub fn step(&mut self, grad: &[f64], mask: &SparsityMask, alpha: f64, friction: f64, noise: bool) {
        let decay = 1.0 - friction;
        let scale = (2.0 * friction * alpha).sqrt();
        let bits = mask.bits();
        for k in 0..self.theta.len() {
            let mut r = decay * self.momentum[k] - alpha * grad[k];
            if noise {
                let eps: f64 = StandardNormal.sample(&mut self.rng);
                r += eps * scale;
            }
            if bits[k] {
                self.momentum[k] = r;
                self.theta[k] += r;
            } else {
                self.momentum[k] = 0.0;
                self.theta[k] = 0.0;
            }
        }
        self.steps += 1;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub epoch: usize,
    pub inll: f64,
}

#[derive(Clone, Debug)]
pub struct ChainOutput {
    /// Active-coordinate values of each emitted sample.
    pub samples: Vec<Vec<f64>>,
    /// Test-set iNLL at the end of every epoch, when an evaluation set is given.
    pub trace: Vec<TraceRecord>,
}

/// Run one chain from `theta0` inside `mask`.
///
/// After `burn_in_epochs`, `samples_per_epoch` evenly spaced samples are
/// emitted per epoch until `num_samples` have been collected.
pub fn sghmc_chain(
    net: &NetworkSpec,
    theta0: &ParamVector,
    mask: &SparsityMask,
    train: &Dataset,
    config: &SghmcConfig,
    eval: Option<&Dataset>,
) -> Result<ChainOutput> {
    config.validate()?;
    if mask.len() != theta0.len() {
        return Err(Error::Dimension(format!(
            "mask has {} bits, parameters have {}",
            mask.len(),
            theta0.len()
        )));
    }
    let n = train.len();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    if config.samples_per_epoch > steps_per_epoch {
        return Err(Error::Config(format!(
            "{} samples per epoch requested but an epoch has only {steps_per_epoch} steps",
            config.samples_per_epoch
        )));
    }
    let prior = PriorConfig::new(config.prior_precision)?;
    let mut state = ChainState::new(theta0.values(), mask, config.seed);
    let mut params = apply_mask(theta0, mask)?;
    let mut samples = Vec::with_capacity(config.num_samples);
    let mut trace = Vec::new();

    let emit_at: Vec<usize> = (1..=config.samples_per_epoch)
        .map(|j| j * steps_per_epoch / config.samples_per_epoch - 1)
        .collect();

    for epoch in 0..config.total_epochs() {
        let alpha = config.alpha(epoch, n);
        let order = epoch_order(n, config.seed, epoch);
        let sampling = epoch >= config.burn_in_epochs;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch = train.batch(idx);
            let grad = stochastic_grad_u(net, &params, Some(mask), &batch, n, prior)?;
            state.step(grad.values(), mask, alpha, config.friction, config.noise_enabled);
            if state.theta.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteSample { step: state.steps() });
            }
            params.values_mut().copy_from_slice(&state.theta);
            if sampling && samples.len() < config.num_samples && emit_at.contains(&b) {
                samples.push(mask.gather(&state.theta));
            }
        }
        if let Some(test) = eval {
            let inll = metrics::inll(net, &params, Some(mask), test)?;
            log::debug!("sghmc epoch {epoch}: iNLL {inll:.5}");
            trace.push(TraceRecord { epoch, inll });
        }
    }
    debug_assert_eq!(samples.len(), config.num_samples);
    Ok(ChainOutput { samples, trace })
}

/// Starting point for a chain: SGD inside `mask`, either from
/// `mask ⊙ warm_start` or from a fresh He-uniform draw.
pub fn init_chain(
    net: &NetworkSpec,
    mask: &SparsityMask,
    dataset: &Dataset,
    sgd: &SgdConfig,
    seed: u64,
    warm_start: Option<&ParamVector>,
) -> Result<ParamVector> {
    let start = match warm_start {
        Some(w) => apply_mask(w, mask)?,
        None => {
            let fresh = ParamVector::he_uniform(net, &mut rng::stream(seed, rng::INIT, 0));
            apply_mask(&fresh, mask)?
        }
    };
    if sgd.epochs == 0 {
        return Ok(start);
    }
    Ok(sgd_train(net, &start, mask, dataset, sgd)?.params)
}

/// One chain's mask and samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainGroup {
    pub mask: SparsityMask,
    pub provenance: MaskProvenance,
    pub samples: Vec<Vec<f64>>,
}

/// Posterior samples grouped by chain, each group sharing one mask.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorEnsemble {
    net: NetworkSpec,
    groups: Vec<ChainGroup>,
    metadata: BTreeMap<String, String>,
}

impl PosteriorEnsemble {
    pub fn new(
        net: NetworkSpec,
        groups: Vec<ChainGroup>,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self> {
        for (g, group) in groups.iter().enumerate() {
            if group.mask.len() != net.num_params() {
                return Err(Error::Dimension(format!(
                    "chain {g} mask has {} bits, network has {} parameters",
                    group.mask.len(),
                    net.num_params()
                )));
            }
            let active = group.mask.active_count();
            if let Some(s) = group.samples.iter().position(|s| s.len() != active) {
                return Err(Error::Dimension(format!(
                    "chain {g} sample {s} stores {} values, mask has {active} active",
                    group.samples[s].len()
                )));
            }
        }
        Ok(PosteriorEnsemble {
            net,
            groups,
            metadata,
        })
    }

    pub fn net(&self) -> &NetworkSpec {
        &self.net
    }

    pub fn groups(&self) -> &[ChainGroup] {
        &self.groups
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn metadata_mut(&mut self) -> &mut BTreeMap<String, String> {
        &mut self.metadata
    }

    pub fn num_chains(&self) -> usize {
        self.groups.len()
    }

    pub fn num_samples(&self) -> usize {
        self.groups.iter().map(|g| g.samples.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.num_samples() == 0
    }

    /// Dense parameter vector of sample `s` in chain `g`.
    pub fn sample_params(&self, g: usize, s: usize) -> Result<ParamVector> {
        let group = &self.groups[g];
        ParamVector::from_values(&self.net, group.mask.scatter(&group.samples[s])?)
    }

    /// Every sample as `(chain, dense params)`, chain-major.
    pub fn iter_params(&self) -> impl Iterator<Item = Result<(usize, ParamVector)>> + '_ {
        self.groups.iter().enumerate().flat_map(move |(g, group)| {
            (0..group.samples.len()).map(move |s| self.sample_params(g, s).map(|p| (g, p)))
        })
    }

    /// Mean sparsity over chains.
    pub fn mean_sparsity(&self) -> f64 {
        if self.groups.is_empty() {
            return 0.0;
        }
        self.groups.iter().map(|g| g.mask.sparsity()).sum::<f64>() / self.groups.len() as f64
    }
}

/// Mask and optional warm start for one chain of [`parallel_chains`].
#[derive(Clone, Debug)]
pub struct ChainPlan {
    pub mask: SparsityMask,
    pub provenance: MaskProvenance,
    pub warm_start: Option<ParamVector>,
}

#[derive(Clone, Debug)]
pub struct ParallelConfig {
    pub sghmc: SghmcConfig,
    /// SGD run inside each chain's mask before sampling.
    pub init: SgdConfig,
    /// Maximum chains run at once.
    pub jobs: usize,
}

/// Result of [`parallel_chains`]: the merged ensemble and per-chain traces.
#[derive(Clone, Debug)]
pub struct ParallelOutput {
    pub ensemble: PosteriorEnsemble,
    pub traces: Vec<Vec<TraceRecord>>,
}

/// Seed of chain `index` under the master sampler seed.
pub fn chain_seed(master: u64, index: usize) -> u64 {
    master ^ index as u64
}

/// Run one chain end to end: SGD initialization followed by SGHMC.
pub fn run_chain(
    net: &NetworkSpec,
    plan: &ChainPlan,
    train: &Dataset,
    eval: Option<&Dataset>,
    sghmc: &SghmcConfig,
    init: &SgdConfig,
) -> Result<ChainOutput> {
    let init_cfg = SgdConfig {
        seed: rng::derive_seed(sghmc.seed, rng::INIT_SGD, 0),
        ..init.clone()
    };
    let theta0 = init_chain(net, &plan.mask, train, &init_cfg, sghmc.seed, plan.warm_start.as_ref())?;
    sghmc_chain(net, &theta0, &plan.mask, train, sghmc, eval)
}

/// Split `total_samples` evenly over one chain per plan. Chain i uses seed
/// `sghmc.seed ⊕ i`; results are merged in chain order.
pub fn parallel_chains(
    net: &NetworkSpec,
    plans: &[ChainPlan],
    train: &Dataset,
    eval: Option<&Dataset>,
    config: &ParallelConfig,
    total_samples: usize,
) -> Result<ParallelOutput> {
    let m = plans.len();
    if m == 0 {
        return Err(Error::Config("at least one chain is required".into()));
    }
    if total_samples == 0 || total_samples % m != 0 {
        return Err(Error::Config(format!(
            "sample budget {total_samples} is not divisible by {m} chains"
        )));
    }
    let per_chain = total_samples / m;
    let configs: Vec<SghmcConfig> = (0..m)
        .map(|i| SghmcConfig {
            num_samples: per_chain,
            seed: chain_seed(config.sghmc.seed, i),
            ..config.sghmc.clone()
        })
        .collect();
    configs[0].validate()?;

    let jobs = config.jobs.max(1);
    let mut results: Vec<Option<Result<ChainOutput>>> = (0..m).map(|_| None).collect();
    for wave in (0..m).collect::<Vec<_>>().chunks(jobs) {
        if wave.len() == 1 {
            let i = wave[0];
            results[i] = Some(run_chain(net, &plans[i], train, eval, &configs[i], &config.init));
            continue;
        }
        std::thread::scope(|scope| {
            let handles: Vec<_> = wave
                .iter()
                .map(|&i| {
                    let plan = &plans[i];
                    let cfg = &configs[i];
                    let init = &config.init;
                    (i, scope.spawn(move || run_chain(net, plan, train, eval, cfg, init)))
                })
                .collect();
            for (i, h) in handles {
                results[i] = Some(h.join().unwrap_or_else(|_| {
                    Err(Error::Usage(format!("chain {i} panicked")))
                }));
            }
        });
    }

    let mut groups = Vec::with_capacity(m);
    let mut traces = Vec::with_capacity(m);
    for (i, (res, plan)) in results.into_iter().zip(plans).enumerate() {
        let out = res
            .expect("every chain ran")
            .map_err(|e| Error::Chain {
                chain: i,
                source: Box::new(e),
            })?;
        groups.push(ChainGroup {
            mask: plan.mask.clone(),
            provenance: plan.provenance,
            samples: out.samples,
        });
        traces.push(out.trace);
    }
    let ensemble = PosteriorEnsemble::new(net.clone(), groups, BTreeMap::new())?;
    Ok(ParallelOutput { ensemble, traces })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::mask::{random_global_mask, MaskMethod};
    use crate::metrics::ess;

    #[test]
    fn reduces_to_heavy_ball_sgd_without_noise() {
        // Power-of-two N and learning rate make α·∇Û = lr·∇(mean nll) exact,
        // so the two trajectories must agree to the bit.
        let data = synth_blobs(2, 32, 3, 0.4, 1).unwrap();
        assert_eq!(data.len(), 64);
        let net = NetworkSpec::mlp(&[3, 5, 2]).unwrap();
        let theta0 = ParamVector::he_uniform(&net, &mut rng::stream(1, rng::INIT, 0));
        let mask = random_global_mask(&net, 0.3, &mut rng::stream(1, rng::MASK, 0)).unwrap();
        let lr = 0.0625;
        let sgd = SgdConfig {
            learning_rate: lr,
            momentum: 0.75,
            weight_decay: 0.0,
            epochs: 1,
            batch_size: 13, // 5 steps
            scheduler: SchedulerSpec::Constant,
            seed: 17,
        };
        let sghmc = SghmcConfig {
            step_size: lr,
            step_schedule: SchedulerSpec::Constant,
            step_scaling: StepScaling::PerDatum,
            friction: 0.25,
            prior_precision: 0.0,
            burn_in_epochs: 0,
            num_samples: 1,
            batch_size: 13,
            samples_per_epoch: 1,
            noise_enabled: false,
            seed: 17,
        };
        let trained = sgd_train(&net, &theta0, &mask, &data, &sgd).unwrap();
        let chain = sghmc_chain(&net, &theta0, &mask, &data, &sghmc, None).unwrap();
        let sampled = mask.scatter(&chain.samples[0]).unwrap();
        for (a, b) in trained.params.values().iter().zip(&sampled) {
            assert_eq!(a.to_bits(), b.to_bits(), "{a} vs {b}");
        }
    }

    #[test]
    fn pruned_coordinates_are_zero_in_every_sample() {
        let data = synth_blobs(3, 20, 4, 0.3, 2).unwrap();
        let net = NetworkSpec::mlp(&[4, 6, 3]).unwrap();
        let mask = random_global_mask(&net, 0.5, &mut rng::stream(2, rng::MASK, 0)).unwrap();
        let theta0 = ParamVector::he_uniform(&net, &mut rng::stream(2, rng::INIT, 0));
        let cfg = SghmcConfig {
            burn_in_epochs: 1,
            num_samples: 5,
            batch_size: 10,
            ..SghmcConfig::default()
        };
        let out = sghmc_chain(&net, &theta0, &mask, &data, &cfg, Some(&data)).unwrap();
        assert_eq!(out.samples.len(), 5);
        assert_eq!(out.trace.len(), cfg.total_epochs());
        for s in &out.samples {
            let dense = mask.scatter(s).unwrap();
            for (k, v) in dense.iter().enumerate() {
                if !mask.is_active(k) {
                    assert_eq!(v.to_bits(), 0);
                }
            }
        }
    }

    #[test]
    fn update_does_not_mix_coordinates() {
        let net = NetworkSpec::mlp(&[3, 2]).unwrap();
        let mask = SparsityMask::full(&net);
        let theta0: Vec<f64> = (0..8).map(|k| k as f64 * 0.1).collect();
        let grad: Vec<f64> = (0..8).map(|k| 1.0 - k as f64 * 0.2).collect();
        let mut perturbed = grad.clone();
        for g in perturbed.iter_mut().skip(1) {
            *g += 100.0;
        }
        let mut a = ChainState::new(&theta0, &mask, 5);
        let mut b = ChainState::new(&theta0, &mask, 5);
        for _ in 0..3 {
            a.step(&grad, &mask, 1e-3, 0.1, true);
            b.step(&perturbed, &mask, 1e-3, 0.1, true);
        }
        assert_eq!(a.theta[0].to_bits(), b.theta[0].to_bits());
        assert_eq!(a.momentum[0].to_bits(), b.momentum[0].to_bits());
        assert_ne!(a.theta[1], b.theta[1]);
    }

    #[test]
    fn noise_increments_have_variance_two_eta_alpha() {
        let k = 1000;
        let net = NetworkSpec::mlp(&[99, 10]).unwrap();
        assert_eq!(net.num_params(), k);
        let mask = SparsityMask::full(&net);
        let (alpha, eta) = (0.01, 0.3);
        let mut state = ChainState::new(&vec![0.0; k], &mask, 9);
        let zero = vec![0.0; k];
        let (mut sum, mut sq, mut n) = (0.0, 0.0, 0.0);
        for _ in 0..1000 {
            let before = state.momentum.clone();
            state.step(&zero, &mask, alpha, eta, true);
            for (r1, r0) in state.momentum.iter().zip(&before) {
                let inc = r1 - (1.0 - eta) * r0;
                sum += inc;
                sq += inc * inc;
                n += 1.0;
            }
        }
        let var = sq / n - (sum / n).powi(2);
        let expected = 2.0 * eta * alpha;
        assert!((var / expected - 1.0).abs() < 0.05, "{var} vs {expected}");
    }

    #[test]
    fn quadratic_target_moments() {
        // U(θ) = ½λ(θ − μ)², posterior N(μ, 1/λ)
        let (mu, lambda) = (1.5, 10.0);
        let (alpha, eta) = (1e-3, 0.1);
        let net = NetworkSpec::new(
            vec![crate::nn::LayerSpec::new(1, 1, crate::nn::Activation::Identity).unwrap()],
            1,
        )
        .unwrap();
        let mask = SparsityMask::full(&net);
        let mut state = ChainState::new(&[mu, 0.0], &mask, 3);
        let mut draws = Vec::with_capacity(50_000);
        for _ in 0..50_000 {
            let g = [lambda * (state.theta[0] - mu), lambda * state.theta[1]];
            state.step(&g, &mask, alpha, eta, true);
            draws.push(state.theta[0]);
        }
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let ess = ess(&[draws.clone()]).unwrap().ess;
        let se = (var / ess).sqrt();
        assert!((mean - mu).abs() < 3.0 * se, "mean {mean}, se {se}");
        assert!((var * lambda - 1.0).abs() < 0.1, "var {var}");
    }

    #[test]
    fn init_chain_paths() {
        let data = synth_blobs(2, 10, 3, 0.3, 4).unwrap();
        let net = NetworkSpec::mlp(&[3, 4, 2]).unwrap();
        let mask = random_global_mask(&net, 0.5, &mut rng::stream(4, rng::MASK, 0)).unwrap();
        let warm = ParamVector::he_uniform(&net, &mut rng::stream(4, "w", 0));
        let no_sgd = SgdConfig {
            epochs: 0,
            ..SgdConfig::default()
        };
        let theta = init_chain(&net, &mask, &data, &no_sgd, 1, Some(&warm)).unwrap();
        assert_eq!(theta, apply_mask(&warm, &mask).unwrap());

        let sgd = SgdConfig {
            epochs: 2,
            batch_size: 5,
            ..SgdConfig::default()
        };
        let a = init_chain(&net, &mask, &data, &sgd, 7, None).unwrap();
        let b = init_chain(&net, &mask, &data, &sgd, 7, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(apply_mask(&a, &mask).unwrap(), a);
    }

    fn small_parallel(seed: u64) -> (NetworkSpec, Dataset, ParallelConfig) {
        let data = synth_blobs(3, 12, 4, 0.3, 6).unwrap();
        let net = NetworkSpec::mlp(&[4, 5, 3]).unwrap();
        let cfg = ParallelConfig {
            sghmc: SghmcConfig {
                burn_in_epochs: 1,
                batch_size: 6,
                seed,
                ..SghmcConfig::default()
            },
            init: SgdConfig {
                epochs: 1,
                batch_size: 6,
                ..SgdConfig::default()
            },
            jobs: 2,
        };
        (net, data, cfg)
    }

    fn plans(net: &NetworkSpec, m: usize) -> Vec<ChainPlan> {
        (0..m)
            .map(|i| ChainPlan {
                mask: random_global_mask(net, 0.4, &mut rng::stream(3, rng::MASK, i as u64)).unwrap(),
                provenance: MaskProvenance::new(MaskMethod::Rgm, 3),
                warm_start: None,
            })
            .collect()
    }

    #[test]
    fn budget_is_split_evenly() {
        let (net, data, cfg) = small_parallel(11);
        let out = parallel_chains(&net, &plans(&net, 5), &data, None, &cfg, 50).unwrap();
        assert_eq!(out.ensemble.num_chains(), 5);
        assert!(out.ensemble.groups().iter().all(|g| g.samples.len() == 10));
        assert!(matches!(
            parallel_chains(&net, &plans(&net, 3), &data, None, &cfg, 50),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn single_chain_matches_direct_call() {
        let (net, data, cfg) = small_parallel(5);
        let p = plans(&net, 1);
        let out = parallel_chains(&net, &p, &data, None, &cfg, 4).unwrap();
        let direct = run_chain(
            &net,
            &p[0],
            &data,
            None,
            &SghmcConfig {
                num_samples: 4,
                ..cfg.sghmc.clone()
            },
            &cfg.init,
        )
        .unwrap();
        assert_eq!(out.ensemble.groups()[0].samples, direct.samples);
    }

    #[test]
    fn parallel_runs_are_reproducible_regardless_of_jobs() {
        let (net, data, mut cfg) = small_parallel(8);
        let p = plans(&net, 3);
        let a = parallel_chains(&net, &p, &data, None, &cfg, 6).unwrap();
        cfg.jobs = 1;
        let b = parallel_chains(&net, &p, &data, None, &cfg, 6).unwrap();
        assert_eq!(a.ensemble, b.ensemble);
    }

    #[test]
    fn too_many_samples_per_epoch_is_a_config_error() {
        let data = synth_blobs(2, 5, 2, 0.3, 1).unwrap();
        let net = NetworkSpec::mlp(&[2, 2]).unwrap();
        let cfg = SghmcConfig {
            batch_size: 10,
            samples_per_epoch: 2,
            ..SghmcConfig::default()
        };
        let theta = ParamVector::zeros(&net);
        let r = sghmc_chain(&net, &theta, &SparsityMask::full(&net), &data, &cfg, None);
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
