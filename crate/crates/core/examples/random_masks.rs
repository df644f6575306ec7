//! Random global and layer-wise masks, and copying per-layer rates from an
//! existing mask.

use sparse_posterior::mask::{layerwise_rates_of, random_global_mask, random_layerwise_mask};
use sparse_posterior::nn::NetworkSpec;
use sparse_posterior::rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = NetworkSpec::mlp200();
    let global = random_global_mask(&net, 0.89, &mut rng::stream(3, rng::MASK, 0))?;
    println!("global: {} of {} active", global.active_count(), net.num_params());
    println!("  per-layer sparsity {:?}", rounded(&layerwise_rates_of(&global)));

    let rates = [0.95, 0.8, 0.5];
    let layered = random_layerwise_mask(&net, &rates, &mut rng::stream(3, rng::MASK, 1))?;
    println!("layer-wise {rates:?}: overall sparsity {:.4}", layered.sparsity());
    for l in 0..net.layers().len() {
        println!("  layer {l}: {} active", layered.layer_active_count(l));
    }
    Ok(())
}

fn rounded(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e4).round() / 1e4).collect()
}
