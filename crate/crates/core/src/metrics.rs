//! Predictive metrics for ensembles and mixing diagnostics for chains.

use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mask::SparsityMask;
use crate::nn::{logits, log_softmax, predict_proba, NetworkSpec, ParamVector};
use crate::sample::PosteriorEnsemble;

/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;
pub const DEFAULT_ECE_BINS: usize = 15;

/// Averaged class probabilities, one row per test input.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveMatrix {
    probs: Array2<f64>,
}

impl PredictiveMatrix {
    /// Rows must be probability vectors (entries in [0,1], sums within 1e-9 of 1).
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        for (i, row) in probs.rows().into_iter().enumerate() {
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::Numeric(format!("row {i} has an entry outside [0,1]")));
            }
            let s = row.sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Numeric(format!("row {i} sums to {s}")));
            }
        }
        Ok(PredictiveMatrix { probs })
    }

    pub fn probs(&self) -> ArrayView2<'_, f64> {
        self.probs.view()
    }

    pub fn nrows(&self) -> usize {
        self.probs.nrows()
    }

    /// Predicted class per row; ties go to the lowest index.
    pub fn argmax(&self) -> Vec<usize> {
        self.probs.rows().into_iter().map(|r| argmax_row(r.iter().copied()).0).collect()
    }
}

fn argmax_row(row: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (c, p) in row.enumerate() {
        if p > best.1 {
            best = (c, p);
        }
    }
    best
}

/// Mean of per-sample softmax outputs, all chains pooled with equal weight.
pub fn posterior_predictive(
    ensemble: &PosteriorEnsemble,
    features: ArrayView2<'_, f64>,
) -> Result<PredictiveMatrix> {
    if ensemble.is_empty() {
        return Err(Error::Usage("posterior predictive of an empty ensemble".into()));
    }
    let net = ensemble.net();
    let mut sum = Array2::<f64>::zeros((features.nrows(), net.num_classes()));
    for item in ensemble.iter_params() {
        let (_, params) = item?;
        sum += &predict_proba(net, &params, None, features)?;
    }
    sum /= ensemble.num_samples() as f64;
    Ok(PredictiveMatrix { probs: sum })
}

fn check_labels(pred: &PredictiveMatrix, labels: &[usize]) -> Result<()> {
    if pred.nrows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} predictive rows but {} labels",
            pred.nrows(),
            labels.len()
        )));
    }
    if pred.nrows() == 0 {
        return Err(Error::Dimension("no rows to evaluate".into()));
    }
    Ok(())
}

pub fn accuracy(pred: &PredictiveMatrix, labels: &[usize]) -> Result<f64> {
    check_labels(pred, labels)?;
    let hits = pred.argmax().iter().zip(labels).filter(|(a, y)| a == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn nll(pred: &PredictiveMatrix, labels: &[usize]) -> Result<f64> {
    check_labels(pred, labels)?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -pred.probs[[i, y]].max(PROB_FLOOR).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

/// Bin of confidence `c` among `m` equal-width bins, bin b covering (b/m, (b+1)/m].
fn ece_bin(c: f64, m: usize) -> usize {
    let b = (c * m as f64).ceil() as usize;
    b.saturating_sub(1).min(m - 1)
}

/// Expected calibration error over `num_bins` equal-width confidence bins.
pub fn ece(pred: &PredictiveMatrix, labels: &[usize], num_bins: usize) -> Result<f64> {
    check_labels(pred, labels)?;
    if num_bins == 0 {
        return Err(Error::Config("ECE needs at least one bin".into()));
    }
    let mut count = vec![0usize; num_bins];
    let mut correct = vec![0usize; num_bins];
    let mut conf = vec![0.0; num_bins];
    for (row, &y) in pred.probs.rows().into_iter().zip(labels) {
        let (c, p) = argmax_row(row.iter().copied());
        let b = ece_bin(p, num_bins);
        count[b] += 1;
        conf[b] += p;
        if c == y {
            correct[b] += 1;
        }
    }
    let n = labels.len() as f64;
    Ok((0..num_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let nb = count[b] as f64;
            (nb / n) * (correct[b] as f64 / nb - conf[b] / nb).abs()
        })
        .sum())
}

/// Test-set negative log-likelihood of a single model.
pub fn inll(
    net: &NetworkSpec,
    params: &ParamVector,
    mask: Option<&SparsityMask>,
    test: &Dataset,
) -> Result<f64> {
    let logp = log_softmax(&logits(net, params, mask, test.features())?);
    let total: f64 = test
        .labels()
        .iter()
        .enumerate()
        .map(|(i, &y)| -logp[[i, y]].exp().max(PROB_FLOOR).ln())
        .sum();
    Ok(total / test.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Acf {
    /// ρ(0..=max_lag).
    pub rho: Vec<f64>,
    /// Set when the series has zero variance; ρ(t>0) is then 0.
    pub degenerate: bool,
}

/// Autocorrelation normalized by the total sum of squares, so |ρ(t)| ≤ 1.
pub fn acf(series: &[f64], max_lag: usize) -> Result<Acf> {
    if series.len() <= max_lag {
        return Err(Error::Usage(format!(
            "series of length {} is too short for lag {max_lag}",
            series.len()
        )));
    }
    check_finite(series)?;
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let denom: f64 = dev.iter().map(|d| d * d).sum();
    if denom == 0.0 {
        let mut rho = vec![0.0; max_lag + 1];
        rho[0] = 1.0;
        return Ok(Acf { rho, degenerate: true });
    }
    let rho = (0..=max_lag)
        .map(|t| (0..n - t).map(|s| dev[s] * dev[s + t]).sum::<f64>() / denom)
        .collect();
    Ok(Acf { rho, degenerate: false })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ess {
    pub ess: f64,
    /// Set when every chain is constant; `ess` is then M·L.
    pub degenerate: bool,
}

/// Multi-chain effective sample size with Geyer initial-positive truncation.
///
/// Within-chain autocovariances use the biased estimator; the combined
/// autocorrelation is `1 − (W − mean_m γ_t) / var⁺` with
/// `var⁺ = (L−1)/L · W + B`.
pub fn ess(chains: &[Vec<f64>]) -> Result<Ess> {
    let m = chains.len();
    if m == 0 {
        return Err(Error::Usage("ESS needs at least one chain".into()));
    }
    let l = chains[0].len();
    if l < 4 {
        return Err(Error::Usage(format!("ESS needs chains of length ≥ 4, got {l}")));
    }
    if chains.iter().any(|c| c.len() != l) {
        return Err(Error::Dimension("ESS chains differ in length".into()));
    }
    for c in chains {
        check_finite(c)?;
    }
    let total = (m * l) as f64;
    let lf = l as f64;

    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / lf).collect();
    // γ_t per chain, biased (divide by L)
    let autocov: Vec<Vec<f64>> = chains
        .iter()
        .zip(&means)
        .map(|(c, &mu)| {
            let d: Vec<f64> = c.iter().map(|x| x - mu).collect();
            (0..l)
                .map(|t| (0..l - t).map(|s| d[s] * d[s + t]).sum::<f64>() / lf)
                .collect()
        })
        .collect();
    let w = autocov.iter().map(|g| g[0] * lf / (lf - 1.0)).sum::<f64>() / m as f64;
    let b = if m > 1 {
        let grand = means.iter().sum::<f64>() / m as f64;
        means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>() / (m as f64 - 1.0)
    } else {
        0.0
    };
    let var_plus = (lf - 1.0) / lf * w + b;
    if var_plus <= 0.0 {
        return Ok(Ess {
            ess: total,
            degenerate: true,
        });
    }
    let rho = |t: usize| {
        let mean_gamma = autocov.iter().map(|g| g[t]).sum::<f64>() / m as f64;
        1.0 - (w - mean_gamma) / var_plus
    };

    // Geyer: sum ρ over pairs (2k, 2k+1) while the pair sum stays positive.
    let mut tau = -1.0;
    let mut k = 0;
    while 2 * k + 1 < l {
        let pair = rho(2 * k) + rho(2 * k + 1);
        if pair < 0.0 {
            break;
        }
        tau += 2.0 * pair;
        k += 1;
    }
    let ess = if tau > 0.0 { total / tau } else { total };
    Ok(Ess {
        ess: ess.clamp(1.0, total),
        degenerate: false,
    })
}

/// Centered cumulative sums `D_i = (1/S) Σ_{s≤i} (x_s − x̄)`; the last entry is 0.
pub fn cumsum_diag(series: &[f64]) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::Usage("CUMSUM of an empty series".into()));
    }
    let s = series.len() as f64;
    let mean = series.iter().sum::<f64>() / s;
    let mut acc = 0.0;
    Ok(series
        .iter()
        .map(|x| {
            acc += x - mean;
            acc / s
        })
        .collect())
}

fn check_finite(series: &[f64]) -> Result<()> {
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("series contains a non-finite value".into()));
    }
    Ok(())
}

/// Pooled metrics of an ensemble plus diagnostics of a scalar chain summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub nll: f64,
    pub ece: f64,
    pub ess_mean: f64,
    pub acf: Vec<f64>,
    pub cumsum: Vec<f64>,
}

impl MetricsReport {
    /// `chains` holds one iNLL series per chain; ACF and CUMSUM use their
    /// concatenation. Chains shorter than 4 give ESS = total length.
    pub fn compute(
        pred: &PredictiveMatrix,
        labels: &[usize],
        chains: &[Vec<f64>],
        num_bins: usize,
        max_lag: usize,
    ) -> Result<Self> {
        let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
        let ess_mean = if chains.first().is_some_and(|c| c.len() >= 4)
            && chains.iter().all(|c| c.len() == chains[0].len())
        {
            ess(chains)?.ess
        } else {
            pooled.len() as f64
        };
        let acf = if pooled.is_empty() {
            Vec::new()
        } else {
            self::acf(&pooled, max_lag.min(pooled.len() - 1))?.rho
        };
        let cumsum = if pooled.is_empty() {
            Vec::new()
        } else {
            cumsum_diag(&pooled)?
        };
        Ok(MetricsReport {
            accuracy: accuracy(pred, labels)?,
            nll: nll(pred, labels)?,
            ece: ece(pred, labels, num_bins)?,
            ess_mean,
            acf,
            cumsum,
        })
    }
}
