//! Save and reload an ensemble, at full and at half precision.

use sparse_posterior::nn::NetworkSpec;
use sparse_posterior::sparse::synthetic_ensemble;
use sparse_posterior::store::{load_ensemble, save_ensemble, save_ensemble_as, total_stored_params, ValueType};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("sparse-posterior-example");
    std::fs::create_dir_all(&dir)?;
    let net = NetworkSpec::mlp200();
    let mut ens = synthetic_ensemble(&net, 0.95, 2, 25, 8)?;
    ens.metadata_mut().insert("note".into(), "example".into());
    println!("stored parameters: {}", total_stored_params(&ens));

    let full = dir.join("ens64.spen");
    save_ensemble(&ens, &full)?;
    let back = load_ensemble(&full)?;
    println!("f64: {} bytes, identical after reload: {}", std::fs::metadata(&full)?.len(), back == ens);

    let half = dir.join("ens32.spen");
    save_ensemble_as(&ens, &half, ValueType::F32)?;
    let lossy = load_ensemble(&half)?;
    let err = ens.groups()[0].samples[0]
        .iter()
        .zip(&lossy.groups()[0].samples[0])
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("f32: {} bytes, max abs error {err:.2e}", std::fs::metadata(&half)?.len());
    Ok(())
}
