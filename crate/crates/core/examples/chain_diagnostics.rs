//! ESS, autocorrelation and CUMSUM on an AR(1) series with known ESS.

use rand_distr::{Distribution, StandardNormal};
use sparse_posterior::metrics::{acf, cumsum_diag, ess};
use sparse_posterior::rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let phi: f64 = 0.8;
    let mut g = rng::stream(5, "ar1", 0);
    let chains: Vec<Vec<f64>> = (0..4)
        .map(|_| {
            let mut x = 0.0;
            (0..2_000)
                .map(|_| {
                    let e: f64 = StandardNormal.sample(&mut g);
                    x = phi * x + e;
                    x
                })
                .collect()
        })
        .collect();

    let total = 4.0 * 2_000.0;
    println!(
        "ESS {:.0}, theory {:.0}",
        ess(&chains)?.ess,
        total * (1.0 - phi) / (1.0 + phi)
    );
    let rho = acf(&chains[0], 5)?.rho;
    for (lag, r) in rho.iter().enumerate() {
        println!("  lag {lag}: ρ = {r:.3} (theory {:.3})", phi.powi(lag as i32));
    }
    let d = cumsum_diag(&chains[0])?;
    let peak = d.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    println!("max |CUMSUM| = {peak:.4}, final = {:.1e}", d[d.len() - 1]);
    Ok(())
}
