//! Compressed-sparse-row inference and the CPU latency harness.
//!
//! Weights are stored row-major `[out][in]`, so the active coordinates of a
//! layer in flat order are already in CSR order. A chain's samples therefore
//! share one structure and differ only in a contiguous value slice.

use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mask::{random_global_mask, MaskMethod, MaskProvenance, SparsityMask};
use crate::metrics::PredictiveMatrix;
use crate::nn::{Activation, NetworkSpec, ParamVector};
use crate::rng;
use crate::sample::{ChainGroup, PosteriorEnsemble};

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub rows: usize,
    pub cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Check the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Consistency(format!("CSR: {msg}")));
        if self.row_ptr.len() != self.rows + 1 || self.row_ptr[0] != 0 {
            return bad("row_ptr must have rows+1 entries starting at 0");
        }
        if self.row_ptr[self.rows] != self.col_idx.len() || self.col_idx.len() != self.vals.len() {
            return bad("row_ptr[rows], col_idx and vals disagree on nnz");
        }
        for r in 0..self.rows {
            let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
            if a > b {
                return bad("row_ptr decreases");
            }
            let cols = &self.col_idx[a..b];
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return bad("column indices not strictly increasing within a row");
            }
            if cols.iter().any(|&c| c as usize >= self.cols) {
                return bad("column index out of range");
            }
        }
        Ok(())
    }

    /// `y = A·x`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate().take(self.rows) {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.col_idx[k] as usize];
            }
            *out = acc;
        }
    }

    pub fn densify(&self) -> Array2<f64> {
        let mut d = Array2::zeros((self.rows, self.cols));
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                d[[r, self.col_idx[k] as usize]] = self.vals[k];
            }
        }
        d
    }
}

/// Shared sparsity structure of one layer (no values).
#[derive(Clone, Debug, PartialEq)]
struct CsrPattern {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    /// Output indices of the active biases.
    bias_idx: Vec<u32>,
    activation: Activation,
}

impl CsrPattern {
    fn of(net: &NetworkSpec, mask: &SparsityMask, layer: usize) -> Result<Self> {
        let spec = net
            .layers()
            .get(layer)
            .ok_or_else(|| Error::Dimension(format!("no layer {layer}")))?;
        if mask.len() != net.num_params() {
            return Err(Error::Dimension(format!(
                "mask has {} bits, network has {} parameters",
                mask.len(),
                net.num_params()
            )));
        }
        let off = &mask.offsets()[layer];
        let bits = mask.bits();
        let w = &bits[off.weights()];
        let mut row_ptr = Vec::with_capacity(spec.out_dim + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for r in 0..spec.out_dim {
            for c in 0..spec.in_dim {
                if w[r * spec.in_dim + c] {
                    col_idx.push(c as u32);
                }
            }
            row_ptr.push(col_idx.len());
        }
        let bias_idx = bits[off.biases()]
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i as u32)
            .collect();
        Ok(CsrPattern {
            rows: spec.out_dim,
            cols: spec.in_dim,
            row_ptr,
            col_idx,
            bias_idx,
            activation: spec.activation,
        })
    }

    fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// `y = act(W·x + b)` with weights `w` and active biases `b` in CSR order.
    fn apply(&self, w: &[f64], b: &[f64], x: &[f64], y: &mut [f64]) {
        for r in 0..self.rows {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += w[k] * x[self.col_idx[k] as usize];
            }
            y[r] = acc;
        }
        for (&i, &v) in self.bias_idx.iter().zip(b) {
            y[i as usize] += v;
        }
        if self.activation == Activation::Relu {
            for v in y.iter_mut() {
                if *v <= 0.0 {
                    *v = 0.0;
                }
            }
        }
    }
}

/// CSR copy of one layer's weights: exactly the coordinates where the mask
/// is set, including stored zeros.
pub fn to_csr(
    net: &NetworkSpec,
    params: &ParamVector,
    mask: &SparsityMask,
    layer: usize,
) -> Result<CsrMatrix> {
    if params.len() != mask.len() {
        return Err(Error::Dimension("parameter and mask lengths differ".into()));
    }
    let p = CsrPattern::of(net, mask, layer)?;
    let w = &params.values()[params.offsets()[layer].weights()];
    let mut vals = Vec::with_capacity(p.nnz());
    for r in 0..p.rows {
        for k in p.row_ptr[r]..p.row_ptr[r + 1] {
            vals.push(w[r * p.cols + p.col_idx[k] as usize]);
        }
    }
    Ok(CsrMatrix {
        rows: p.rows,
        cols: p.cols,
        row_ptr: p.row_ptr,
        col_idx: p.col_idx,
        vals,
    })
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// A single model as per-layer CSR weights and dense biases.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseModel {
    net: NetworkSpec,
    layers: Vec<(CsrMatrix, Vec<f64>)>,
}

impl SparseModel {
    /// Weights of `mask ⊙ params`; masked biases become 0.
    pub fn new(net: &NetworkSpec, params: &ParamVector, mask: &SparsityMask) -> Result<Self> {
        let mut layers = Vec::with_capacity(net.layers().len());
        for (l, off) in params.offsets().iter().enumerate() {
            let csr = to_csr(net, params, mask, l)?;
            let bias = off
                .biases()
                .map(|k| if mask.is_active(k) { params.values()[k] } else { 0.0 })
                .collect();
            layers.push((csr, bias));
        }
        Ok(SparseModel {
            net: net.clone(),
            layers,
        })
    }

    pub fn layers(&self) -> &[(CsrMatrix, Vec<f64>)] {
        &self.layers
    }

    pub fn logits(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.net.input_dim() {
            return Err(Error::Dimension(format!(
                "input has {} features, network expects {}",
                input.len(),
                self.net.input_dim()
            )));
        }
        let mut x = input.to_vec();
        for ((csr, bias), spec) in self.layers.iter().zip(self.net.layers()) {
            let mut y = vec![0.0; csr.rows];
            csr.matvec(&x, &mut y);
            for (v, b) in y.iter_mut().zip(bias) {
                *v += b;
            }
            if spec.activation == Activation::Relu {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            x = y;
        }
        Ok(x)
    }
}

/// Class probabilities of one model for one input.
pub fn spmv_forward(model: &SparseModel, input: &[f64]) -> Result<Vec<f64>> {
    let mut z = model.logits(input)?;
    softmax_in_place(&mut z);
    Ok(z)
}

/// One chain in CSR form: a shared pattern and per-sample active values.
#[derive(Clone, Debug)]
struct SparseChain {
    patterns: Vec<CsrPattern>,
    /// `(weight range, bias range)` of each layer within a sample's active values.
    slices: Vec<(std::ops::Range<usize>, std::ops::Range<usize>)>,
    samples: Vec<Vec<f64>>,
}

/// A posterior ensemble in CSR form, ready for batch-size-1 inference.
#[derive(Clone, Debug)]
pub struct SparseEnsemble {
    net: NetworkSpec,
    chains: Vec<SparseChain>,
    width: usize,
}

impl SparseEnsemble {
    pub fn new(ensemble: &PosteriorEnsemble) -> Result<Self> {
        let net = ensemble.net();
        let mut chains = Vec::with_capacity(ensemble.num_chains());
        for group in ensemble.groups() {
            let mut patterns = Vec::with_capacity(net.layers().len());
            let mut slices = Vec::with_capacity(net.layers().len());
            let mut pos = 0;
            for l in 0..net.layers().len() {
                let p = CsrPattern::of(net, &group.mask, l)?;
                let w = pos..pos + p.nnz();
                let b = w.end..w.end + p.bias_idx.len();
                pos = b.end;
                slices.push((w, b));
                patterns.push(p);
            }
            chains.push(SparseChain {
                patterns,
                slices,
                samples: group.samples.clone(),
            });
        }
        let width = net.widths().into_iter().max().unwrap_or(0);
        Ok(SparseEnsemble {
            net: net.clone(),
            chains,
            width,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.chains.iter().map(|c| c.samples.len()).sum()
    }

    /// Stored nonzeros summed over samples.
    pub fn stored_values(&self) -> usize {
        self.chains.iter().map(|c| c.samples.len() * c.samples.first().map_or(0, Vec::len)).sum()
    }

    /// Averaged class probabilities for one input, written to `out`.
    fn predict_into(&self, input: &[f64], bufs: &mut Buffers, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for chain in &self.chains {
            for sample in &chain.samples {
                bufs.a[..input.len()].copy_from_slice(input);
                let mut len = input.len();
                for (p, (w, b)) in chain.patterns.iter().zip(&chain.slices) {
                    p.apply(&sample[w.clone()], &sample[b.clone()], &bufs.a[..len], &mut bufs.b[..p.rows]);
                    std::mem::swap(&mut bufs.a, &mut bufs.b);
                    len = p.rows;
                }
                let z = &mut bufs.a[..len];
                softmax_in_place(z);
                for (o, p) in out.iter_mut().zip(z.iter()) {
                    *o += p;
                }
            }
        }
        let s = self.num_samples() as f64;
        out.iter_mut().for_each(|v| *v /= s);
    }

    fn buffers(&self) -> Buffers {
        Buffers::new(self.width)
    }
}

struct Buffers {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Buffers {
    fn new(width: usize) -> Self {
        Buffers {
            a: vec![0.0; width],
            b: vec![0.0; width],
        }
    }
}

/// Posterior predictive computed through the CSR kernels.
pub fn ensemble_predict_sparse(
    ensemble: &SparseEnsemble,
    inputs: ArrayView2<'_, f64>,
) -> Result<PredictiveMatrix> {
    if ensemble.num_samples() == 0 {
        return Err(Error::Usage("prediction with an empty ensemble".into()));
    }
    if inputs.ncols() != ensemble.net.input_dim() {
        return Err(Error::Dimension(format!(
            "inputs have {} features, network expects {}",
            inputs.ncols(),
            ensemble.net.input_dim()
        )));
    }
    let c = ensemble.net.num_classes();
    let mut probs = Array2::zeros((inputs.nrows(), c));
    let mut bufs = ensemble.buffers();
    let mut row = vec![0.0; c];
    for (i, x) in inputs.rows().into_iter().enumerate() {
        let x = x.to_vec();
        ensemble.predict_into(&x, &mut bufs, &mut row);
        probs.row_mut(i).assign(&ndarray::ArrayView1::from(&row));
    }
    PredictiveMatrix::new(probs)
}

/// Dense ensemble with plain row-major matrix-vector products; the timing
/// baseline uses the same loop structure as the CSR kernel.
#[derive(Clone, Debug)]
pub struct DenseModel {
    net: NetworkSpec,
    samples: Vec<Vec<f64>>,
    width: usize,
}

impl DenseModel {
    pub fn new(ensemble: &PosteriorEnsemble) -> Result<Self> {
        let samples = ensemble
            .iter_params()
            .map(|r| r.map(|(_, p)| p.into_values()))
            .collect::<Result<Vec<_>>>()?;
        let width = ensemble.net().widths().into_iter().max().unwrap_or(0);
        Ok(DenseModel {
            net: ensemble.net().clone(),
            samples,
            width,
        })
    }

    /// The first sample alone, as a single point estimate.
    pub fn first_only(&self) -> DenseModel {
        DenseModel {
            net: self.net.clone(),
            samples: self.samples.iter().take(1).cloned().collect(),
            width: self.width,
        }
    }

    pub fn num_samples(&self) -> usize {
        self.samples.len()
    }

    fn predict_into(&self, input: &[f64], bufs: &mut Buffers, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let layout = self.net.layout();
        for theta in &self.samples {
            bufs.a[..input.len()].copy_from_slice(input);
            let mut len = input.len();
            for (spec, off) in self.net.layers().iter().zip(&layout) {
                let w = &theta[off.weights()];
                let b = &theta[off.biases()];
                for r in 0..spec.out_dim {
                    let row = &w[r * spec.in_dim..(r + 1) * spec.in_dim];
                    let mut acc = 0.0;
                    for (wv, xv) in row.iter().zip(&bufs.a[..len]) {
                        acc += wv * xv;
                    }
                    let v = acc + b[r];
                    bufs.b[r] = if spec.activation == Activation::Relu && v <= 0.0 { 0.0 } else { v };
                }
                std::mem::swap(&mut bufs.a, &mut bufs.b);
                len = spec.out_dim;
            }
            let z = &mut bufs.a[..len];
            softmax_in_place(z);
            for (o, p) in out.iter_mut().zip(z.iter()) {
                *o += p;
            }
        }
        let s = self.samples.len() as f64;
        out.iter_mut().for_each(|v| *v /= s);
    }
}

/// One row of `bench.csv`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: String,
    pub sparsity: f64,
    pub num_samples: usize,
    pub latency_s: f64,
    pub speedup: f64,
    pub hardware: String,
    pub repetitions: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub hardware: String,
    pub repetitions: usize,
}

impl BenchReport {
    pub fn row(&self, method: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        for r in &self.rows {
            w.serialize(r).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::file(path, e))
    }
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::file(path, std::io::Error::other(e))
}

/// CPU model from `/proc/cpuinfo`, falling back to the target architecture.
pub fn hardware_description() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string());
    format!("{cpu}; 1 thread; batch size 1")
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Median over `repetitions` of the mean per-input latency, after one
/// untimed warm-up pass.
fn time_per_input(inputs: &[Vec<f64>], repetitions: usize, mut f: impl FnMut(&[f64])) -> f64 {
    for x in inputs.iter().take(4) {
        f(x);
    }
    let reps = (0..repetitions)
        .map(|_| {
            let start = Instant::now();
            for x in inputs {
                f(x);
            }
            start.elapsed().as_secs_f64() / inputs.len() as f64
        })
        .collect();
    median(reps)
}

/// Per-input latency of the dense ensemble, of its first sample alone
/// (`full-opt`), and of each named sparse ensemble; speedups are relative to
/// the dense ensemble. Single-threaded, batch size 1.
pub fn bench(
    dense: &PosteriorEnsemble,
    sparse: &[(String, &PosteriorEnsemble)],
    inputs: ArrayView2<'_, f64>,
    repetitions: usize,
) -> Result<BenchReport> {
    if repetitions < 3 {
        return Err(Error::Config(format!("benchmarks need ≥ 3 repetitions, got {repetitions}")));
    }
    if inputs.nrows() == 0 || dense.is_empty() {
        return Err(Error::Usage("benchmark needs inputs and a nonempty dense ensemble".into()));
    }
    if inputs.ncols() != dense.net().input_dim() {
        return Err(Error::Dimension("benchmark inputs do not match the network".into()));
    }
    let xs: Vec<Vec<f64>> = inputs.rows().into_iter().map(|r| r.to_vec()).collect();
    let hardware = hardware_description();
    let c = dense.net().num_classes();
    let mut out = vec![0.0; c];

    let dense_model = DenseModel::new(dense)?;
    let mut bufs = Buffers::new(dense_model.width);
    let dense_latency = time_per_input(&xs, repetitions, |x| {
        dense_model.predict_into(x, &mut bufs, &mut out);
        std::hint::black_box(&out);
    });
    let single = dense_model.first_only();
    let single_latency = time_per_input(&xs, repetitions, |x| {
        single.predict_into(x, &mut bufs, &mut out);
        std::hint::black_box(&out);
    });

    let row = |method: &str, sparsity: f64, s: usize, latency: f64| BenchRow {
        method: method.to_string(),
        sparsity,
        num_samples: s,
        latency_s: latency,
        speedup: dense_latency / latency,
        hardware: hardware.clone(),
        repetitions,
    };
    let mut rows = vec![
        row("dense", dense.mean_sparsity(), dense_model.num_samples(), dense_latency),
        row("full-opt", dense.mean_sparsity(), 1, single_latency),
    ];
    for (name, ens) in sparse {
        if ens.net() != dense.net() {
            return Err(Error::Dimension(format!("ensemble {name} has a different network")));
        }
        let sp = SparseEnsemble::new(ens)?;
        if sp.num_samples() == 0 {
            return Err(Error::Usage(format!("ensemble {name} is empty")));
        }
        let mut sbufs = sp.buffers();
        let latency = time_per_input(&xs, repetitions, |x| {
            sp.predict_into(x, &mut sbufs, &mut out);
            std::hint::black_box(&out);
        });
        rows.push(row(name, ens.mean_sparsity(), sp.num_samples(), latency));
    }
    Ok(BenchReport {
        rows,
        hardware,
        repetitions,
    })
}

/// Ensemble of `chains × samples` He-uniform draws, each chain inside its
/// own random global mask at `sparsity`. Used where only timing matters.
pub fn synthetic_ensemble(
    net: &NetworkSpec,
    sparsity: f64,
    chains: usize,
    samples: usize,
    seed: u64,
) -> Result<PosteriorEnsemble> {
    let mut groups = Vec::with_capacity(chains);
    for c in 0..chains {
        let mask = random_global_mask(net, sparsity, &mut rng::stream(seed, rng::MASK, c as u64))?;
        let mut g = rng::stream(seed, "synthetic-values", c as u64);
        let samples = (0..samples)
            .map(|_| mask.gather(ParamVector::he_uniform(net, &mut g).values()))
            .collect();
        groups.push(ChainGroup {
            mask,
            provenance: MaskProvenance::new(MaskMethod::Rgm, seed),
            samples,
        });
    }
    PosteriorEnsemble::new(net.clone(), groups, Default::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::posterior_predictive;
    use crate::nn::logits;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_model(net: &NetworkSpec, sparsity: f64, seed: u64) -> (ParamVector, SparsityMask) {
        let mask = random_global_mask(net, sparsity, &mut rng::stream(seed, rng::MASK, 0)).unwrap();
        let p = ParamVector::he_uniform(net, &mut rng::stream(seed, rng::INIT, 0));
        // nonzero biases so masking them is observable
        let mut v = p.into_values();
        let mut g = rng::stream(seed, "bias", 0);
        for off in net.layout() {
            for k in off.biases() {
                v[k] = g.random_range(-0.5..0.5);
            }
        }
        (ParamVector::from_values(net, v).unwrap(), mask)
    }

    #[test]
    fn full_and_empty_masks() {
        let net = NetworkSpec::mlp(&[5, 4, 3]).unwrap();
        let (p, _) = random_model(&net, 0.0, 1);
        let full = to_csr(&net, &p, &SparsityMask::full(&net), 0).unwrap();
        assert_eq!(full.nnz(), 20);
        full.validate().unwrap();

        let empty = SparsityMask::empty(&net);
        let csr = to_csr(&net, &p, &empty, 1).unwrap();
        assert_eq!(csr.nnz(), 0);
        let mut y = vec![1.0; 3];
        csr.matvec(&[1.0; 4], &mut y);
        assert_eq!(y, vec![0.0; 3]);
        let m = SparseModel::new(&net, &p, &empty).unwrap();
        let probs = spmv_forward(&m, &[0.3; 5]).unwrap();
        assert!(probs.iter().all(|&q| (q - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn structural_zeros_are_kept() {
        let net = NetworkSpec::mlp(&[2, 2]).unwrap();
        let p = ParamVector::zeros(&net);
        let csr = to_csr(&net, &p, &SparsityMask::full(&net), 0).unwrap();
        assert_eq!(csr.nnz(), 4);
    }

    #[test]
    fn single_nonzero_selects_an_input() {
        let net = NetworkSpec::new(
            vec![crate::nn::LayerSpec::new(4, 2, Activation::Identity).unwrap()],
            2,
        )
        .unwrap();
        let mut bits = vec![false; net.num_params()];
        bits[1 * 4 + 2] = true; // row 1, column 2
        let mask = SparsityMask::from_bits(&net, bits).unwrap();
        let p = ParamVector::from_values(&net, vec![1.0; 10]).unwrap();
        let m = SparseModel::new(&net, &p, &mask).unwrap();
        assert_eq!(m.logits(&[10.0, 20.0, 30.0, 40.0]).unwrap(), vec![0.0, 30.0]);
    }

    #[test]
    fn matches_dense_forward_on_mlp200() {
        let net = NetworkSpec::mlp200();
        let (p, mask) = random_model(&net, 0.95, 3);
        let m = SparseModel::new(&net, &p, &mask).unwrap();
        let mut g = rng::stream(3, "x", 0);
        let x: Vec<f64> = (0..784).map(|_| g.random_range(0.0..1.0)).collect();
        let dense = logits(&net, &p, Some(&mask), ArrayView2::from_shape((1, 784), &x).unwrap()).unwrap();
        let sparse = m.logits(&x).unwrap();
        for (a, b) in dense.iter().zip(&sparse) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn ensemble_predictive_matches_dense() {
        let net = NetworkSpec::mlp(&[6, 8, 4]).unwrap();
        let ens = synthetic_ensemble(&net, 0.6, 3, 4, 9).unwrap();
        let x = Array2::from_shape_fn((5, 6), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 11.0);
        let a = posterior_predictive(&ens, x.view()).unwrap();
        let b = ensemble_predict_sparse(&SparseEnsemble::new(&ens).unwrap(), x.view()).unwrap();
        for (u, v) in a.probs().iter().zip(b.probs().iter()) {
            assert!((u - v).abs() < 1e-10);
        }
        let empty = synthetic_ensemble(&net, 0.6, 1, 0, 9).unwrap();
        assert!(ensemble_predict_sparse(&SparseEnsemble::new(&empty).unwrap(), x.view()).is_err());
    }

    #[test]
    fn bench_reports_all_rows() {
        let net = NetworkSpec::mlp(&[8, 6, 3]).unwrap();
        let dense = synthetic_ensemble(&net, 0.0, 1, 3, 1).unwrap();
        let sparse = synthetic_ensemble(&net, 0.9, 1, 3, 1).unwrap();
        let x = Array2::from_elem((4, 8), 0.5);
        let r = bench(&dense, &[("ip".into(), &sparse)], x.view(), 3).unwrap();
        assert_eq!(r.rows.len(), 3);
        assert_eq!(r.row("dense").unwrap().speedup, 1.0);
        assert!(r.rows.iter().all(|row| row.latency_s > 0.0));
        assert!(bench(&dense, &[], x.view(), 2).is_err());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    proptest! {
        #[test]
        fn csr_invariants_and_densify_round_trip(seed in any::<u64>(), sparsity in 0.0f64..1.0) {
            let net = NetworkSpec::mlp(&[7, 5, 3]).unwrap();
            let (p, mask) = random_model(&net, sparsity, seed);
            for l in 0..2 {
                let csr = to_csr(&net, &p, &mask, l).unwrap();
                prop_assert!(csr.validate().is_ok());
                let d = csr.densify();
                let off = &p.offsets()[l];
                let spec = &net.layers()[l];
                for r in 0..spec.out_dim {
                    for c in 0..spec.in_dim {
                        let k = off.weight_offset + r * spec.in_dim + c;
                        let expected = if mask.is_active(k) { p.values()[k] } else { 0.0 };
                        prop_assert_eq!(d[[r, c]].to_bits(), expected.to_bits());
                    }
                }
            }
        }
    }
}
