//! In-memory labelled datasets and minibatch ordering.

use std::fmt;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::Minibatch;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Feature matrix (one row per example) with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
    split: Split,
    source: String,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        split: Split,
        source: impl Into<String>,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Consistency("dataset has no examples".into()));
        }
        if features.nrows() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Consistency(format!(
                "label {y} out of range for {num_classes} classes"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("dataset features contain a non-finite value".into()));
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
            split,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Rows `indices`, in that order.
    pub fn batch(&self, indices: &[usize]) -> Minibatch {
        Minibatch {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn full_batch(&self) -> Minibatch {
        Minibatch {
            features: self.features.clone(),
            labels: self.labels.clone(),
        }
    }

    /// First `n` examples (or all, if fewer).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            features: self.features.slice(ndarray::s![..n, ..]).to_owned(),
            labels: self.labels[..n].to_vec(),
            num_classes: self.num_classes,
            split: self.split,
            source: self.source.clone(),
        }
    }
}

/// Visiting order for `epoch`: a Fisher–Yates shuffle of `0..n` drawn from the
/// epoch's own data-shuffle stream.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, rng::DATA_SHUFFLE, epoch as u64));
    order
}

/// Gaussian clusters around seeded centers drawn from `U(0,1)^dim`; labels
/// are grouped by class.
pub fn synth_blobs(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    synth_blobs_draw(num_classes, per_class, dim, spread, seed, 0, Split::Train)
}

/// Train and test draws around the same centers.
pub fn synth_blobs_split(
    num_classes: usize,
    train_per_class: usize,
    test_per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    Ok((
        synth_blobs_draw(num_classes, train_per_class, dim, spread, seed, 0, Split::Train)?,
        synth_blobs_draw(num_classes, test_per_class, dim, spread, seed, 1, Split::Test)?,
    ))
}

fn synth_blobs_draw(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
    draw: u64,
    split: Split,
) -> Result<Dataset> {
    if num_classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::Config(
            "synthetic blobs need positive class count, per-class count and dimension".into(),
        ));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::Config(format!("spread must be ≥ 0, got {spread}")));
    }
    let mut centers_rng = rng::stream(seed, "blob-centers", 0);
    let centers = Array2::from_shape_fn((num_classes, dim), |_| {
        rand::Rng::random_range(&mut centers_rng, 0.0..1.0)
    });
    let mut points_rng = rng::stream(seed, "blob-points", draw);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n = num_classes * per_class;
    let mut features = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for c in 0..num_classes {
        for i in 0..per_class {
            let row = c * per_class + i;
            for j in 0..dim {
                features[[row, j]] = centers[[c, j]] + spread * normal.sample(&mut points_rng);
            }
            labels.push(c);
        }
    }
    Dataset::new(
        features,
        labels,
        num_classes,
        split,
        format!("blobs(classes={num_classes}, per_class={per_class}, dim={dim}, spread={spread}, seed={seed})"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_reproducible_and_exact_in_count() {
        let a = synth_blobs(3, 7, 4, 0.2, 11).unwrap();
        let b = synth_blobs(3, 7, 4, 0.2, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 21);
        for c in 0..3 {
            assert_eq!(a.labels().iter().filter(|&&y| y == c).count(), 7);
        }
        assert_ne!(a, synth_blobs(3, 7, 4, 0.2, 12).unwrap());
    }

    #[test]
    fn zero_spread_has_no_within_class_variance() {
        let d = synth_blobs(2, 5, 3, 0.0, 1).unwrap();
        for c in 0..2 {
            let first = d.features().row(c * 5).to_owned();
            for i in 0..5 {
                assert_eq!(d.features().row(c * 5 + i), first);
            }
        }
    }

    #[test]
    fn split_shares_centers() {
        let (tr, te) = synth_blobs_split(2, 4, 3, 2, 0.0, 8).unwrap();
        assert_eq!(tr.features().row(0), te.features().row(0));
        assert_eq!(te.split(), Split::Test);
    }

    #[test]
    fn epoch_order_is_a_permutation_and_varies_by_epoch() {
        let a = epoch_order(50, 3, 0);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_eq!(a, epoch_order(50, 3, 0));
        assert_ne!(a, epoch_order(50, 3, 1));
    }

    #[test]
    fn rejects_inconsistent_inputs() {
        assert!(Dataset::new(Array2::zeros((2, 2)), vec![0], 2, Split::Train, "x").is_err());
        assert!(Dataset::new(Array2::zeros((1, 2)), vec![3], 2, Split::Train, "x").is_err());
        assert!(Dataset::new(Array2::zeros((0, 2)), vec![], 2, Split::Train, "x").is_err());
    }
}
