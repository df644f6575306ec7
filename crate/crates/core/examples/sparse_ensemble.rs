//! End to end on synthetic data: prune, then run several SGHMC chains inside
//! random layer-wise masks that copy the pruned mask's per-layer rates.

use sparse_posterior::data::synth_blobs_split;
use sparse_posterior::mask::{iterative_prune, layerwise_rates_of, random_layerwise_mask, MaskMethod, MaskProvenance, PruneSchedule};
use sparse_posterior::metrics::{accuracy, ece, nll, posterior_predictive};
use sparse_posterior::nn::NetworkSpec;
use sparse_posterior::rng;
use sparse_posterior::sample::{parallel_chains, ChainPlan, ParallelConfig, SghmcConfig};
use sparse_posterior::train::SgdConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (train, test) = synth_blobs_split(3, 80, 40, 6, 0.45, 4)?;
    let net = NetworkSpec::mlp(&[6, 24, 3])?;
    let sgd = SgdConfig {
        epochs: 10,
        batch_size: 24,
        ..SgdConfig::default()
    };
    let schedule = PruneSchedule {
        fraction: 0.3,
        iterations: 4,
        epochs_per_iteration: 10,
    };
    let pruned = iterative_prune(&net, &train, &schedule, &sgd, 4)?;
    let rates = layerwise_rates_of(&pruned.last().mask);

    let plans: Vec<ChainPlan> = (0..4)
        .map(|i| {
            Ok(ChainPlan {
                mask: random_layerwise_mask(&net, &rates, &mut rng::stream(4, rng::MASK, i))?,
                provenance: MaskProvenance::new(MaskMethod::RlmIp, 4),
                warm_start: None,
            })
        })
        .collect::<sparse_posterior::Result<_>>()?;
    let config = ParallelConfig {
        sghmc: SghmcConfig {
            burn_in_epochs: 5,
            batch_size: 24,
            prior_precision: 1.0,
            seed: 4,
            ..SghmcConfig::default()
        },
        init: sgd,
        jobs: 2,
    };
    let out = parallel_chains(&net, &plans, &train, Some(&test), &config, 40)?;
    let p = posterior_predictive(&out.ensemble, test.features())?;
    println!(
        "{} chains × {} samples at sparsity {:.3}: acc {:.3}, nll {:.4}, ece {:.4}",
        out.ensemble.num_chains(),
        out.ensemble.num_samples() / out.ensemble.num_chains(),
        out.ensemble.mean_sparsity(),
        accuracy(&p, test.labels())?,
        nll(&p, test.labels())?,
        ece(&p, test.labels(), 15)?
    );
    Ok(())
}
