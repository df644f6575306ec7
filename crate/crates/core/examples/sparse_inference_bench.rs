//! Dense against CSR inference for 50-sample MLP200 ensembles at several
//! sparsities; batch size 1, one thread.

use ndarray::Array2;
use rand::Rng;
use sparse_posterior::nn::NetworkSpec;
use sparse_posterior::rng;
use sparse_posterior::sparse::{bench, synthetic_ensemble};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = NetworkSpec::mlp200();
    let dense = synthetic_ensemble(&net, 0.0, 1, 50, 1)?;
    let levels = [0.83, 0.89, 0.95, 0.995];
    let sparse = levels
        .iter()
        .map(|&s| Ok((format!("rgm-{s}"), synthetic_ensemble(&net, s, 1, 50, 2)?)))
        .collect::<sparse_posterior::Result<Vec<_>>>()?;
    let refs: Vec<_> = sparse.iter().map(|(n, e)| (n.clone(), e)).collect();

    let mut g = rng::stream(0, "inputs", 0);
    let inputs = Array2::from_shape_fn((20, 784), |_| g.random_range(0.0..1.0));
    let report = bench(&dense, &refs, inputs.view(), 5)?;
    println!("{}", report.hardware);
    for r in &report.rows {
        println!("{:<10} S={:<3} {:.3e} s/input  {:.1}×", r.method, r.num_samples, r.latency_s, r.speedup);
    }
    Ok(())
}
