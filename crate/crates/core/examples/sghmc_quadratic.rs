//! The sampler on U(θ) = λ/2 (θ − μ)², where the exact posterior is N(μ, 1/λ).

use sparse_posterior::mask::SparsityMask;
use sparse_posterior::metrics::ess;
use sparse_posterior::nn::NetworkSpec;
use sparse_posterior::sample::ChainState;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (mu, lambda) = (1.5, 10.0);
    // one weight and one bias; the bias is pinned by masking it out
    let net = NetworkSpec::mlp(&[1, 1])?;
    let mut mask = SparsityMask::full(&net);
    mask.set(1, false);

    let mut state = ChainState::new(&[0.0, 0.0], &mask, 42);
    let mut draws = Vec::new();
    for step in 0..60_000 {
        let grad = [lambda * (state.theta[0] - mu), 0.0];
        state.step(&grad, &mask, 1e-3, 0.1, true);
        if step >= 10_000 {
            draws.push(state.theta[0]);
        }
    }
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    println!("mean {mean:.4} (exact {mu}), variance {var:.5} (exact {:.5})", 1.0 / lambda);
    println!("ESS {:.0} of {} draws; pinned coordinate {}", ess(&[draws])?.ess, n, state.theta[1]);
    Ok(())
}
