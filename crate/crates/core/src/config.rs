//! Experiment configuration files (TOML).
//!
//! Every section is optional and falls back to the MLP200/FMNIST settings;
//! unknown keys are rejected. A single top-level `seed` drives every random
//! stream.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{synth_blobs_split, Dataset, Split};
use crate::error::{Error, Result};
use crate::mask::{MaskMethod, PruneSchedule};
use crate::nn::NetworkSpec;
use crate::sample::SghmcConfig;
use crate::store;
use crate::train::SgdConfig;

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Default output directory; `--out` overrides it.
    pub output: Option<PathBuf>,
    pub data: DataConfig,
    pub network: NetworkConfig,
    pub mask: MaskConfig,
    pub sgd: SgdConfig,
    pub sghmc: SghmcConfig,
    pub chains: ChainsConfig,
    pub eval: EvalConfig,
    pub bench: BenchConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    #[default]
    Fmnist,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// FMNIST directory; `--data-dir` and then `$SPARSE_POSTERIOR_DATA` are
    /// consulted when unset.
    pub dir: Option<PathBuf>,
    /// Use only the first N training / test examples.
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub dim: usize,
    pub spread: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Fmnist,
            dir: None,
            train_limit: None,
            test_limit: None,
            classes: 3,
            train_per_class: 40,
            test_per_class: 20,
            dim: 8,
            spread: 0.35,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Hidden widths; input and output widths come from the data.
    pub hidden: Vec<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig { hidden: vec![200, 200] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    pub method: MaskMethod,
    /// Target sparsity for `rgm` and `rlm-f`.
    pub sparsity: f64,
    /// Fraction of active coordinates removed per pruning iteration.
    pub prune_fraction: f64,
    pub iterations: usize,
    /// Training epochs per pruning iteration; defaults to `sgd.epochs`.
    pub epochs_per_iteration: Option<usize>,
    /// Output directory of a `prune` run, for `ip`, `ipr` and `rlm-ip*`.
    pub source: Option<PathBuf>,
    /// Stage of that run to use; defaults to the last one.
    pub stage: Option<usize>,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            method: MaskMethod::Full,
            sparsity: 0.0,
            prune_fraction: 0.2,
            iterations: 10,
            epochs_per_iteration: None,
            source: None,
            stage: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainsConfig {
    pub count: usize,
    /// Sample budget split evenly over the chains.
    pub total_samples: usize,
    /// SGD epochs inside the mask before sampling; defaults to `sgd.epochs`.
    pub init_epochs: Option<usize>,
}

impl Default for ChainsConfig {
    fn default() -> Self {
        ChainsConfig {
            count: 1,
            total_samples: 50,
            init_epochs: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ece_bins: usize,
    pub max_lag: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ece_bins: crate::metrics::DEFAULT_ECE_BINS,
            max_lag: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Sparsities of the synthetic ensembles timed when no files are given.
    pub sparsities: Vec<f64>,
    pub samples: usize,
    pub inputs: usize,
    pub repetitions: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sparsities: vec![0.89, 0.95, 0.995],
            samples: 50,
            inputs: 100,
            repetitions: 5,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let key = |k: &str, e: Error| match e {
            Error::Config(msg) => Error::Config(format!("{k}: {msg}")),
            other => other,
        };
        let d = &self.data;
        if d.source == DataSource::Synthetic
            && (d.classes < 2 || d.train_per_class == 0 || d.test_per_class == 0 || d.dim == 0)
        {
            return Err(Error::Config(
                "data: synthetic data needs ≥ 2 classes and positive sizes".into(),
            ));
        }
        if !(d.spread >= 0.0 && d.spread.is_finite()) {
            return Err(Error::Config("data.spread must be ≥ 0".into()));
        }
        if self.network.hidden.contains(&0) {
            return Err(Error::Config("network.hidden widths must be positive".into()));
        }
        let m = &self.mask;
        if !(0.0..1.0).contains(&m.sparsity) {
            return Err(Error::Config(format!(
                "mask.sparsity must lie in [0, 1), got {}",
                m.sparsity
            )));
        }
        self.prune_schedule().validate().map_err(|e| key("mask", e))?;
        self.sgd.validate().map_err(|e| key("sgd", e))?;
        self.sghmc.validate().map_err(|e| key("sghmc", e))?;
        let c = &self.chains;
        if c.count == 0 {
            return Err(Error::Config("chains.count must be positive".into()));
        }
        if c.total_samples == 0 || c.total_samples % c.count != 0 {
            return Err(Error::Config(format!(
                "chains.total_samples ({}) must be a positive multiple of chains.count ({})",
                c.total_samples, c.count
            )));
        }
        if self.eval.ece_bins == 0 {
            return Err(Error::Config("eval.ece_bins must be positive".into()));
        }
        let b = &self.bench;
        if b.repetitions < 3 || b.inputs == 0 || b.samples == 0 {
            return Err(Error::Config(
                "bench needs ≥ 3 repetitions and positive inputs and samples".into(),
            ));
        }
        if b.sparsities.iter().any(|s| !(0.0..1.0).contains(s)) {
            return Err(Error::Config("bench.sparsities must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn prune_schedule(&self) -> PruneSchedule {
        PruneSchedule {
            fraction: self.mask.prune_fraction,
            iterations: self.mask.iterations,
            epochs_per_iteration: self.mask.epochs_per_iteration.unwrap_or(self.sgd.epochs),
        }
    }

    /// SGD settings with their seed derived from the master seed.
    pub fn sgd_config(&self) -> SgdConfig {
        SgdConfig {
            seed: self.seed,
            ..self.sgd.clone()
        }
    }

    pub fn sghmc_config(&self) -> SghmcConfig {
        SghmcConfig {
            seed: self.seed,
            num_samples: self.chains.total_samples / self.chains.count.max(1),
            ..self.sghmc.clone()
        }
    }

    pub fn init_config(&self) -> SgdConfig {
        SgdConfig {
            epochs: self.chains.init_epochs.unwrap_or(self.sgd.epochs),
            ..self.sgd_config()
        }
    }

    /// Data directory: `flag`, then `data.dir`, then the environment.
    pub fn data_dir(&self, flag: Option<&Path>) -> Option<PathBuf> {
        flag.map(Path::to_path_buf)
            .or_else(|| self.data.dir.clone())
            .or_else(|| store::resolve_data_dir(None))
    }

    /// Train and test sets, after any limits.
    pub fn load_data(&self, data_dir: Option<&Path>) -> Result<(Dataset, Dataset)> {
        let d = &self.data;
        let (train, test) = match d.source {
            DataSource::Synthetic => synth_blobs_split(
                d.classes,
                d.train_per_class,
                d.test_per_class,
                d.dim,
                d.spread,
                self.seed,
            )?,
            DataSource::Fmnist => {
                let dir = self.data_dir(data_dir).ok_or_else(|| {
                    Error::Usage(format!(
                        "no FMNIST directory: set data.dir, pass --data-dir or export {}",
                        store::DATA_DIR_ENV
                    ))
                })?;
                (
                    store::load_fmnist(&dir, Split::Train)?,
                    store::load_fmnist(&dir, Split::Test)?,
                )
            }
        };
        let train = d.train_limit.map_or(train.clone(), |n| train.head(n));
        let test = d.test_limit.map_or(test.clone(), |n| test.head(n));
        Ok((train, test))
    }

    /// The network for data of the given input dimension and class count.
    pub fn network(&self, input_dim: usize, num_classes: usize) -> Result<NetworkSpec> {
        let mut widths = vec![input_dim];
        widths.extend(&self.network.hidden);
        widths.push(num_classes);
        NetworkSpec::mlp(&widths)
    }

    /// Input and class dimensions implied by the data section, without loading.
    pub fn data_shape(&self) -> (usize, usize) {
        match self.data.source {
            DataSource::Fmnist => (784, 10),
            DataSource::Synthetic => (self.data.dim, self.data.classes),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::SchedulerSpec;

    #[test]
    fn empty_document_gives_defaults() {
        let c = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        c.validate().unwrap();
        assert_eq!(c.sgd.epochs, 60);
        assert_eq!(c.sghmc.prior_precision, 60.0);
    }

    #[test]
    fn unknown_keys_are_rejected_with_context() {
        let e = ExperimentConfig::from_toml("[sgd]\nlearning_rat = 0.1\n").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("learning_rat") && msg.contains("line 2"), "{msg}");
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
        // the seed lives at the top level only
        assert!(ExperimentConfig::from_toml("[sghmc]\nseed = 3").is_err());
    }

    #[test]
    fn partial_sections_and_schedules() {
        let c = ExperimentConfig::from_toml(
            "seed = 4\n[sgd]\nepochs = 3\nscheduler = { kind = \"cosine\", initial = 0.1, final = 0.0 }\n",
        )
        .unwrap();
        assert_eq!(c.sgd.epochs, 3);
        assert_eq!(c.sgd.momentum, 0.9);
        assert!(matches!(c.sgd.scheduler, SchedulerSpec::Cosine { .. }));
        assert_eq!(c.sgd_config().seed, 4);
        assert_eq!(c.prune_schedule().epochs_per_iteration, 3);
    }

    #[test]
    fn validation_names_the_key() {
        let mut c = ExperimentConfig::default();
        c.mask.prune_fraction = 1.5;
        assert!(c.validate().unwrap_err().to_string().contains("mask"));
        let mut c = ExperimentConfig::default();
        c.chains.count = 3;
        assert!(c.validate().unwrap_err().to_string().contains("chains.total_samples"));
        let mut c = ExperimentConfig::default();
        c.sghmc.friction = 0.0;
        assert!(c.validate().unwrap_err().to_string().contains("sghmc"));
    }

    #[test]
    fn toml_round_trip() {
        let mut c = ExperimentConfig::default();
        c.mask.method = MaskMethod::RlmIp;
        c.output = Some("runs/x".into());
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn shipped_defaults_file_parses() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/mlp200-fmnist.cfg");
        let c = ExperimentConfig::load(&path).unwrap();
        c.validate().unwrap();
        assert_eq!(c.sgd, SgdConfig::default());
        assert_eq!(c.sghmc, SghmcConfig::default());
        assert_eq!(c.network.hidden, vec![200, 200]);
        assert_eq!(c.network(784, 10).unwrap().num_params(), 199_210);
    }
}
