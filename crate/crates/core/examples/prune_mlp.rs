//! Iterative magnitude pruning with and without rewinding on synthetic blobs.

use sparse_posterior::data::synth_blobs;
use sparse_posterior::mask::{iterative_prune, iterative_prune_rewind, PruneSchedule};
use sparse_posterior::nn::NetworkSpec;
use sparse_posterior::train::SgdConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = synth_blobs(4, 60, 10, 0.3, 1)?;
    let net = NetworkSpec::mlp(&[10, 32, 32, 4])?;
    let schedule = PruneSchedule {
        fraction: 0.2,
        iterations: 6,
        epochs_per_iteration: 5,
    };
    let sgd = SgdConfig {
        epochs: 5,
        batch_size: 32,
        ..SgdConfig::default()
    };

    for (name, run) in [
        ("ip ", iterative_prune(&net, &data, &schedule, &sgd, 7)?),
        ("ipr", iterative_prune_rewind(&net, &data, &schedule, &sgd, 7)?),
    ] {
        let line: Vec<String> = run
            .stages
            .iter()
            .map(|s| format!("{:.3}", s.mask.sparsity()))
            .collect();
        let loss = run.last().trace.last().map_or(f64::NAN, |r| r.train_loss);
        println!("{name} sparsity by stage: {}  final train loss {loss:.4}", line.join(" "));
    }
    Ok(())
}
