//! Sparse substructure selection.
//!
//! Masks are binary vectors over all K coordinates (weights and biases).
//! Magnitude pruning removes `⌊π · active⌋` of the currently active
//! coordinates per call; the random families place an exact number of zeros
//! uniformly without replacement, with the active count rounded half-up.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{LayerOffsets, NetworkSpec, ParamVector};
use crate::rng;
use crate::train::{sgd_train, EpochRecord, SgdConfig};

/// Binary vector m ∈ {0,1}^K; `true` marks an active coordinate.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SparsityMask {
    bits: Vec<bool>,
    offsets: Vec<LayerOffsets>,
}

impl SparsityMask {
    pub fn full(net: &NetworkSpec) -> Self {
        SparsityMask {
            bits: vec![true; net.num_params()],
            offsets: net.layout(),
        }
    }

    pub fn empty(net: &NetworkSpec) -> Self {
        SparsityMask {
            bits: vec![false; net.num_params()],
            offsets: net.layout(),
        }
    }

    pub fn from_bits(net: &NetworkSpec, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != net.num_params() {
            return Err(Error::Dimension(format!(
                "mask has {} bits, network has {} parameters",
                bits.len(),
                net.num_params()
            )));
        }
        Ok(SparsityMask {
            bits,
            offsets: net.layout(),
        })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn offsets(&self) -> &[LayerOffsets] {
        &self.offsets
    }

    pub fn is_active(&self, k: usize) -> bool {
        self.bits[k]
    }

    pub fn set(&mut self, k: usize, active: bool) {
        self.bits[k] = active;
    }

    pub fn active_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Fraction of zeros over all K coordinates.
    pub fn sparsity(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        (self.len() - self.active_count()) as f64 / self.len() as f64
    }

    /// Flat indices of the active coordinates, ascending.
    pub fn active_indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(k, &b)| b.then_some(k))
            .collect()
    }

    /// `m ⊙ values`, with exact `+0.0` at masked coordinates.
    pub fn apply_slice(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(&self.bits)
            .map(|(&v, &b)| if b { v } else { 0.0 })
            .collect()
    }

    /// Zero the masked coordinates of `values` in place.
    pub fn project(&self, values: &mut [f64]) {
        for (v, &b) in values.iter_mut().zip(&self.bits) {
            if !b {
                *v = 0.0;
            }
        }
    }

    /// Values at active coordinates, in ascending index order.
    pub fn gather(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(&self.bits)
            .filter_map(|(&v, &b)| b.then_some(v))
            .collect()
    }

    /// Inverse of [`gather`](Self::gather): a dense K-vector with `active`
    /// written to the active coordinates and zeros elsewhere.
    pub fn scatter(&self, active: &[f64]) -> Result<Vec<f64>> {
        if active.len() != self.active_count() {
            return Err(Error::Dimension(format!(
                "{} active values for a mask with {} active coordinates",
                active.len(),
                self.active_count()
            )));
        }
        let mut out = vec![0.0; self.len()];
        let mut it = active.iter();
        for (o, &b) in out.iter_mut().zip(&self.bits) {
            if b {
                *o = *it.next().expect("count checked");
            }
        }
        Ok(out)
    }

    /// True when every active bit of `self` is also active in `other`.
    pub fn is_subset_of(&self, other: &SparsityMask) -> bool {
        self.len() == other.len() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Active coordinates of layer `l` (weights and biases).
    pub fn layer_active_count(&self, l: usize) -> usize {
        self.bits[self.offsets[l].range()].iter().filter(|&&b| b).count()
    }

    /// Little-endian packed bitset, least-significant bit = lowest index.
    pub fn to_packed(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.len().div_ceil(8)];
        for (k, &b) in self.bits.iter().enumerate() {
            if b {
                out[k / 8] |= 1 << (k % 8);
            }
        }
        out
    }

    pub fn from_packed(net: &NetworkSpec, bytes: &[u8]) -> Result<Self> {
        let k = net.num_params();
        if bytes.len() != k.div_ceil(8) {
            return Err(Error::Format(format!(
                "packed mask of {} bytes cannot hold {k} bits",
                bytes.len()
            )));
        }
        if k % 8 != 0 && bytes[k / 8] >> (k % 8) != 0 {
            return Err(Error::Format("packed mask has padding bits set".into()));
        }
        let bits = (0..k).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect();
        SparsityMask::from_bits(net, bits)
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if self.len() != n {
            return Err(Error::Dimension(format!(
                "mask has {} bits, parameters have {n}",
                self.len()
            )));
        }
        Ok(())
    }
}

/// How a mask was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MaskMethod {
    #[serde(rename = "ip")]
    Ip,
    #[serde(rename = "ipr")]
    Ipr,
    #[serde(rename = "rlm-ip")]
    RlmIp,
    #[serde(rename = "rlm-ipr")]
    RlmIpr,
    #[serde(rename = "rlm-f")]
    RlmF,
    #[serde(rename = "rgm")]
    Rgm,
    #[serde(rename = "full")]
    Full,
}

impl MaskMethod {
    pub const ALL: [MaskMethod; 7] = [
        MaskMethod::Ip,
        MaskMethod::Ipr,
        MaskMethod::RlmIp,
        MaskMethod::RlmIpr,
        MaskMethod::RlmF,
        MaskMethod::Rgm,
        MaskMethod::Full,
    ];

    pub fn code(self) -> u8 {
        match self {
            MaskMethod::Ip => 0,
            MaskMethod::Ipr => 1,
            MaskMethod::RlmIp => 2,
            MaskMethod::RlmIpr => 3,
            MaskMethod::RlmF => 4,
            MaskMethod::Rgm => 5,
            MaskMethod::Full => 6,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        MaskMethod::ALL.into_iter().find(|m| m.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            MaskMethod::Ip => "ip",
            MaskMethod::Ipr => "ipr",
            MaskMethod::RlmIp => "rlm-ip",
            MaskMethod::RlmIpr => "rlm-ipr",
            MaskMethod::RlmF => "rlm-f",
            MaskMethod::Rgm => "rgm",
            MaskMethod::Full => "full",
        }
    }
}

impl fmt::Display for MaskMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MaskMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MaskMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mask method {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MaskProvenance {
    pub method: MaskMethod,
    pub seed: u64,
    pub source_iterations: Option<u32>,
}

impl MaskProvenance {
    pub fn new(method: MaskMethod, seed: u64) -> Self {
        MaskProvenance {
            method,
            seed,
            source_iterations: None,
        }
    }
}

/// `m ⊙ θ`.
pub fn apply_mask(params: &ParamVector, mask: &SparsityMask) -> Result<ParamVector> {
    mask.check_len(params.len())?;
    let mut out = params.clone();
    mask.project(out.values_mut());
    Ok(out)
}

fn floor_count(fraction: f64, n: usize) -> usize {
    // absorb representation error such as 0.29 * 100 = 28.999999999999996
    (fraction * n as f64 + 1e-9).floor() as usize
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Active coordinates kept when a block of `n` coordinates is sparsified at
/// `rate`: `round_half_up((1 − rate) · n)`.
pub fn kept_count(rate: f64, n: usize) -> usize {
    round_half_up((1.0 - rate) * n as f64).min(n)
}

/// Deactivate the `⌊fraction · active⌋` active coordinates with the smallest
/// `|θ_k|`; equal magnitudes go lowest index first. Inactive bits stay off.
pub fn prune_lowest_magnitude(
    params: &ParamVector,
    mask: &SparsityMask,
    fraction: f64,
) -> Result<SparsityMask> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!(
            "prune fraction must lie in [0, 1), got {fraction}"
        )));
    }
    mask.check_len(params.len())?;
    let mut active = mask.active_indices();
    if active.is_empty() {
        return Err(Error::Usage("cannot prune a mask with no active coordinates".into()));
    }
    let count = floor_count(fraction, active.len());
    let theta = params.values();
    active.sort_by(|&a, &b| {
        theta[a]
            .abs()
            .total_cmp(&theta[b].abs())
            .then(a.cmp(&b))
    });
    let mut out = mask.clone();
    for &k in &active[..count] {
        out.bits[k] = false;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneSchedule {
    /// Fraction π of the active coordinates removed per iteration.
    pub fraction: f64,
    /// Number of pruning iterations T.
    pub iterations: usize,
    pub epochs_per_iteration: usize,
}

impl PruneSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction < 1.0) {
            return Err(Error::Config(format!(
                "prune fraction must lie in (0, 1), got {}",
                self.fraction
            )));
        }
        if self.epochs_per_iteration == 0 && self.iterations > 0 {
            return Err(Error::Config("epochs_per_iteration must be positive".into()));
        }
        Ok(())
    }
}

/// One stage of an iterative pruning run.
#[derive(Clone, Debug)]
pub struct PruneStage {
    pub mask: SparsityMask,
    /// `θ^i ⊙ m^i`; for stage 0, the random initialization.
    pub params: ParamVector,
    /// Vector the stage's training started from (equal to `params` for stage 0).
    pub initial: ParamVector,
    pub train_seconds: f64,
    pub trace: Vec<EpochRecord>,
}

#[derive(Clone, Debug)]
pub struct PruneRun {
    pub method: MaskMethod,
    pub seed: u64,
    /// Stage 0 followed by one stage per pruning iteration.
    pub stages: Vec<PruneStage>,
}

impl PruneRun {
    /// θ^0, the random initialization.
    pub fn initial_params(&self) -> &ParamVector {
        &self.stages[0].params
    }

    pub fn last(&self) -> &PruneStage {
        self.stages.last().expect("stage 0 always exists")
    }
}

fn prune_pipeline(
    net: &NetworkSpec,
    data: &Dataset,
    schedule: &PruneSchedule,
    train: &SgdConfig,
    seed: u64,
    rewind: bool,
) -> Result<PruneRun> {
    schedule.validate()?;
    let theta0 = ParamVector::he_uniform(net, &mut rng::stream(seed, rng::INIT, 0));
    let full = SparsityMask::full(net);
    let mut stages = vec![PruneStage {
        mask: full,
        params: theta0.clone(),
        initial: theta0.clone(),
        train_seconds: 0.0,
        trace: Vec::new(),
    }];
    for i in 1..=schedule.iterations {
        let prev = stages.last().expect("nonempty");
        let start = if rewind {
            apply_mask(&theta0, &prev.mask)?
        } else {
            prev.params.clone()
        };
        let cfg = SgdConfig {
            epochs: schedule.epochs_per_iteration,
            seed: rng::derive_seed(seed, rng::PRUNE_TRAIN, i as u64),
            ..train.clone()
        };
        let clock = Instant::now();
        let out = sgd_train(net, &start, &prev.mask, data, &cfg)?;
        let train_seconds = clock.elapsed().as_secs_f64();
        let mask = prune_lowest_magnitude(&out.params, &prev.mask, schedule.fraction)?;
        let params = apply_mask(&out.params, &mask)?;
        log::info!(
            "{} iteration {i}/{}: sparsity {:.4}, final train loss {:.4}",
            if rewind { "ipr" } else { "ip" },
            schedule.iterations,
            mask.sparsity(),
            out.trace.last().map_or(f64::NAN, |r| r.train_loss)
        );
        stages.push(PruneStage {
            mask,
            params,
            initial: start,
            train_seconds,
            trace: out.trace,
        });
    }
    Ok(PruneRun {
        method: if rewind { MaskMethod::Ipr } else { MaskMethod::Ip },
        seed,
        stages,
    })
}

/// Iterative magnitude pruning. Iteration i trains inside `m^{i-1}` starting
/// from `θ^{i-1} ⊙ m^{i-1}`, then prunes to `m^i`.
pub fn iterative_prune(
    net: &NetworkSpec,
    data: &Dataset,
    schedule: &PruneSchedule,
    train: &SgdConfig,
    seed: u64,
) -> Result<PruneRun> {
    prune_pipeline(net, data, schedule, train, seed, false)
}

/// Iterative pruning with rewinding: every iteration restarts from
/// `θ^0 ⊙ m^{i-1}`.
pub fn iterative_prune_rewind(
    net: &NetworkSpec,
    data: &Dataset,
    schedule: &PruneSchedule,
    train: &SgdConfig,
    seed: u64,
) -> Result<PruneRun> {
    prune_pipeline(net, data, schedule, train, seed, true)
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config(format!("sparsity rate must lie in [0, 1], got {rate}")));
    }
    Ok(())
}

fn place_zeros<R: Rng + ?Sized>(bits: &mut [bool], zeros: usize, rng: &mut R) {
    for k in rand::seq::index::sample(rng, bits.len(), zeros) {
        bits[k] = false;
    }
}

/// Random layer-wise mask: layer l keeps exactly `round((1 − π_l)·K_l)`
/// coordinates chosen uniformly.
pub fn random_layerwise_mask<R: Rng + ?Sized>(
    net: &NetworkSpec,
    rates: &[f64],
    rng: &mut R,
) -> Result<SparsityMask> {
    if rates.len() != net.layers().len() {
        return Err(Error::Dimension(format!(
            "{} rates for {} layers",
            rates.len(),
            net.layers().len()
        )));
    }
    let mut mask = SparsityMask::full(net);
    for (&rate, off) in rates.iter().zip(net.layout()) {
        check_rate(rate)?;
        let n = off.len();
        let zeros = n - kept_count(rate, n);
        place_zeros(&mut mask.bits[off.range()], zeros, rng);
    }
    Ok(mask)
}

/// Per-layer sparsity `zeros_l / K_l`.
pub fn layerwise_rates_of(mask: &SparsityMask) -> Vec<f64> {
    mask.offsets
        .iter()
        .map(|off| {
            let zeros = mask.bits[off.range()].iter().filter(|&&b| !b).count();
            zeros as f64 / off.len() as f64
        })
        .collect()
}

/// Random global mask keeping exactly `round((1 − π)·K)` coordinates.
pub fn random_global_mask<R: Rng + ?Sized>(
    net: &NetworkSpec,
    rate: f64,
    rng: &mut R,
) -> Result<SparsityMask> {
    check_rate(rate)?;
    let mut mask = SparsityMask::full(net);
    let k = mask.len();
    place_zeros(&mut mask.bits, k - kept_count(rate, k), rng);
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::train::SchedulerSpec;
    use proptest::prelude::*;

    fn single_layer(in_dim: usize, out_dim: usize) -> NetworkSpec {
        NetworkSpec::mlp(&[in_dim, out_dim]).unwrap()
    }

    #[test]
    fn apply_mask_identity_zero_and_idempotence() {
        let net = NetworkSpec::mlp(&[3, 2, 2]).unwrap();
        let mut r = rng::stream(1, "t", 0);
        let p = ParamVector::he_uniform(&net, &mut r);
        assert_eq!(apply_mask(&p, &SparsityMask::full(&net)).unwrap(), p);
        let z = apply_mask(&p, &SparsityMask::empty(&net)).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
        let m = random_global_mask(&net, 0.5, &mut r).unwrap();
        let once = apply_mask(&p, &m).unwrap();
        assert_eq!(apply_mask(&once, &m).unwrap(), once);
    }

    #[test]
    fn apply_mask_rejects_length_mismatch() {
        let a = NetworkSpec::mlp(&[3, 2]).unwrap();
        let b = NetworkSpec::mlp(&[4, 2]).unwrap();
        assert!(apply_mask(&ParamVector::zeros(&a), &SparsityMask::full(&b)).is_err());
    }

    #[test]
    fn prune_zero_fraction_is_noop() {
        let net = single_layer(3, 1);
        let p = ParamVector::from_values(&net, vec![0.5, -0.1, 0.3, 0.05]).unwrap();
        let m = SparsityMask::full(&net);
        assert_eq!(prune_lowest_magnitude(&p, &m, 0.0).unwrap(), m);
    }

    #[test]
    fn prune_keeps_largest_magnitudes() {
        // sort-by-magnitude: |0.05| < |−0.1| < |0.3| < |0.5|, drop ⌊0.5·4⌋ = 2
        let net = single_layer(3, 1);
        let p = ParamVector::from_values(&net, vec![0.5, -0.1, 0.3, 0.05]).unwrap();
        let m = prune_lowest_magnitude(&p, &SparsityMask::full(&net), 0.5).unwrap();
        assert_eq!(m.bits(), &[true, false, true, false]);
    }

    #[test]
    fn prune_breaks_ties_by_lowest_index() {
        let net = single_layer(3, 1);
        let p = ParamVector::from_values(&net, vec![0.2, 0.2, -0.2, 0.9]).unwrap();
        let m = prune_lowest_magnitude(&p, &SparsityMask::full(&net), 0.5).unwrap();
        assert_eq!(m.bits(), &[false, false, true, true]);
    }

    #[test]
    fn prune_rejects_bad_fraction() {
        let net = single_layer(3, 1);
        let p = ParamVector::zeros(&net);
        let m = SparsityMask::full(&net);
        assert!(prune_lowest_magnitude(&p, &m, 1.0).is_err());
        assert!(prune_lowest_magnitude(&p, &m, -0.1).is_err());
    }

    #[test]
    fn repeated_pruning_follows_floor_rule() {
        // brute force: active ← active − ⌊0.2·active⌋, ten times from 10,000
        let mut expected = 10_000usize;
        for _ in 0..10 {
            expected -= expected / 5;
        }
        assert_eq!(expected, 1_076);

        let net = single_layer(999, 10); // K = 9,990 + 10 = 10,000
        assert_eq!(net.num_params(), 10_000);
        let p = ParamVector::he_uniform(&net, &mut rng::stream(3, "t", 0));
        let mut m = SparsityMask::full(&net);
        for _ in 0..10 {
            let next = prune_lowest_magnitude(&p, &m, 0.2).unwrap();
            assert!(next.is_subset_of(&m));
            m = next;
        }
        assert_eq!(m.active_count(), expected);
    }

    #[test]
    fn mlp200_ten_rounds_reach_about_89_percent() {
        let mut active = 199_210usize;
        for _ in 0..10 {
            active -= floor_count(0.2, active);
        }
        let sparsity = 1.0 - active as f64 / 199_210.0;
        assert!((sparsity - 0.893).abs() < 0.001, "{sparsity}");
    }

    #[test]
    fn random_layerwise_extremes() {
        let net = NetworkSpec::mlp(&[5, 4, 3]).unwrap();
        let mut r = rng::stream(0, "t", 0);
        assert_eq!(
            random_layerwise_mask(&net, &[0.0, 0.0], &mut r).unwrap(),
            SparsityMask::full(&net)
        );
        assert_eq!(
            random_layerwise_mask(&net, &[1.0, 1.0], &mut r).unwrap(),
            SparsityMask::empty(&net)
        );
        assert!(random_layerwise_mask(&net, &[1.5, 0.0], &mut r).is_err());
        assert!(random_layerwise_mask(&net, &[0.5], &mut r).is_err());
    }

    #[test]
    fn random_layerwise_is_uniform_over_positions() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        // 9→10 layer: K_l = 100
        let net = single_layer(9, 10);
        let mut r = rng::stream(42, rng::MASK, 0);
        let mut counts = [0u32; 100];
        for _ in 0..10_000 {
            let m = random_layerwise_mask(&net, &[0.9], &mut r).unwrap();
            assert_eq!(m.active_count(), 10);
            for k in m.active_indices() {
                counts[k] += 1;
            }
        }
        let expected = 10_000.0 * 10.0 / 100.0;
        let stat: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        let p = 1.0 - ChiSquared::new(99.0).unwrap().cdf(stat);
        assert!(p > 0.01, "chi-square {stat}, p = {p}");
    }

    #[test]
    fn layerwise_rates_extremes() {
        let net = NetworkSpec::mlp(&[5, 4, 3]).unwrap();
        assert_eq!(layerwise_rates_of(&SparsityMask::full(&net)), vec![0.0, 0.0]);
        assert_eq!(layerwise_rates_of(&SparsityMask::empty(&net)), vec![1.0, 1.0]);
    }

    #[test]
    fn random_global_counts() {
        let net = NetworkSpec::mlp200();
        let mut r = rng::stream(0, rng::MASK, 0);
        assert_eq!(random_global_mask(&net, 0.0, &mut r).unwrap(), SparsityMask::full(&net));
        let a = random_global_mask(&net, 0.95, &mut r).unwrap();
        assert_eq!(a.active_count(), 9_961);
        let b = random_global_mask(&net, 0.95, &mut rng::stream(1, rng::MASK, 0)).unwrap();
        assert_eq!(b.active_count(), 9_961);
        assert_ne!(a, b);
        assert!(random_global_mask(&net, -0.01, &mut r).is_err());
    }

    #[test]
    fn packed_bitset_is_lsb_first() {
        let net = single_layer(4, 2); // K = 10
        let mut m = SparsityMask::empty(&net);
        m.set(0, true);
        m.set(9, true);
        assert_eq!(m.to_packed(), vec![0b0000_0001, 0b0000_0010]);
        assert_eq!(SparsityMask::from_packed(&net, &m.to_packed()).unwrap(), m);
        assert!(SparsityMask::from_packed(&net, &[0, 0b0000_0100]).is_err());
    }

    fn tiny_setup() -> (NetworkSpec, Dataset, SgdConfig) {
        let data = synth_blobs(3, 20, 4, 0.3, 5).unwrap();
        let net = NetworkSpec::mlp(&[4, 8, 3]).unwrap();
        let cfg = SgdConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 1e-3,
            epochs: 2,
            batch_size: 16,
            scheduler: SchedulerSpec::Constant,
            seed: 0,
        };
        (net, data, cfg)
    }

    #[test]
    fn iterative_prune_masks_are_nested_and_monotone() {
        let (net, data, cfg) = tiny_setup();
        let schedule = PruneSchedule {
            fraction: 0.3,
            iterations: 4,
            epochs_per_iteration: 2,
        };
        for run in [
            iterative_prune(&net, &data, &schedule, &cfg, 9).unwrap(),
            iterative_prune_rewind(&net, &data, &schedule, &cfg, 9).unwrap(),
        ] {
            assert_eq!(run.stages.len(), 5);
            assert_eq!(run.stages[0].mask, SparsityMask::full(&net));
            for pair in run.stages.windows(2) {
                assert!(pair[1].mask.is_subset_of(&pair[0].mask));
                assert!(pair[1].mask.sparsity() > pair[0].mask.sparsity());
                assert_eq!(apply_mask(&pair[1].params, &pair[1].mask).unwrap(), pair[1].params);
            }
        }
    }

    #[test]
    fn rewinding_restarts_from_masked_initialization() {
        let (net, data, cfg) = tiny_setup();
        let schedule = PruneSchedule {
            fraction: 0.2,
            iterations: 3,
            epochs_per_iteration: 1,
        };
        let run = iterative_prune_rewind(&net, &data, &schedule, &cfg, 4).unwrap();
        let theta0 = run.initial_params();
        for i in 1..run.stages.len() {
            let expected = apply_mask(theta0, &run.stages[i - 1].mask).unwrap();
            assert_eq!(run.stages[i].initial, expected, "stage {i}");
        }
        let ip = iterative_prune(&net, &data, &schedule, &cfg, 4).unwrap();
        for i in 2..ip.stages.len() {
            assert_eq!(ip.stages[i].initial, ip.stages[i - 1].params);
        }
    }

    #[test]
    fn single_iteration_without_pruning_matches_between_ip_and_ipr() {
        let (net, data, cfg) = tiny_setup();
        // ⌊0.001·K⌋ = 0 for K = 67
        let schedule = PruneSchedule {
            fraction: 0.001,
            iterations: 1,
            epochs_per_iteration: 2,
        };
        let ip = iterative_prune(&net, &data, &schedule, &cfg, 2).unwrap();
        let ipr = iterative_prune_rewind(&net, &data, &schedule, &cfg, 2).unwrap();
        assert_eq!(ip.last().mask, SparsityMask::full(&net));
        assert_eq!(ip.last().mask, ipr.last().mask);
        assert_eq!(ip.last().params, ipr.last().params);
    }

    proptest! {
        #[test]
        fn pruning_is_nested_and_exact(seed in 0u64..1000, fraction in 0.0f64..0.95, rounds in 1usize..5) {
            let net = NetworkSpec::mlp(&[6, 5, 3]).unwrap();
            let p = ParamVector::he_uniform(&net, &mut rng::stream(seed, "p", 0));
            let mut m = SparsityMask::full(&net);
            for _ in 0..rounds {
                let before = m.active_count();
                let next = prune_lowest_magnitude(&p, &m, fraction).unwrap();
                prop_assert!(next.is_subset_of(&m));
                prop_assert_eq!(before - next.active_count(), floor_count(fraction, before));
                m = next;
                if m.active_count() == 0 { break; }
            }
        }

        #[test]
        fn layerwise_rates_round_trip(seed in 0u64..1000, r0 in 0.0f64..=1.0, r1 in 0.0f64..=1.0) {
            let net = NetworkSpec::mlp(&[7, 6, 4]).unwrap();
            let mut r = rng::stream(seed, rng::MASK, 0);
            let m = random_layerwise_mask(&net, &[r0, r1], &mut r).unwrap();
            let again = random_layerwise_mask(&net, &layerwise_rates_of(&m), &mut r).unwrap();
            for l in 0..2 {
                prop_assert_eq!(again.layer_active_count(l), m.layer_active_count(l));
            }
        }

        #[test]
        fn random_masks_are_deterministic(seed in 0u64..1000, rate in 0.0f64..=1.0) {
            let net = NetworkSpec::mlp(&[7, 6, 4]).unwrap();
            let a = random_global_mask(&net, rate, &mut rng::stream(seed, rng::MASK, 0)).unwrap();
            let b = random_global_mask(&net, rate, &mut rng::stream(seed, rng::MASK, 0)).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.active_count(), kept_count(rate, net.num_params()));
        }

        #[test]
        fn gather_scatter_round_trip(seed in 0u64..1000, rate in 0.0f64..=1.0) {
            let net = NetworkSpec::mlp(&[5, 4, 3]).unwrap();
            let mut r = rng::stream(seed, "g", 0);
            let p = ParamVector::he_uniform(&net, &mut r);
            let m = random_global_mask(&net, rate, &mut r).unwrap();
            let dense = m.scatter(&m.gather(p.values())).unwrap();
            prop_assert_eq!(dense, m.apply_slice(p.values()));
        }
    }
}
