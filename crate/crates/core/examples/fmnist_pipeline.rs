//! SGD point estimate against a 50-sample SGHMC ensemble on Fashion-MNIST.
//! Reads the IDX files from $SPARSE_POSTERIOR_DATA (or the first argument).

use std::path::PathBuf;

use sparse_posterior::data::Split;
use sparse_posterior::mask::SparsityMask;
use sparse_posterior::metrics::{accuracy, nll, PredictiveMatrix};
use sparse_posterior::nn::{predict_proba, NetworkSpec, ParamVector};
use sparse_posterior::rng;
use sparse_posterior::sample::{sghmc_chain, SghmcConfig};
use sparse_posterior::store::{fmnist_available, load_fmnist, resolve_data_dir};
use sparse_posterior::train::{sgd_train, SgdConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let flag = std::env::args().nth(1).map(PathBuf::from);
    let Some(dir) = resolve_data_dir(flag.as_deref()).filter(|d| fmnist_available(d)) else {
        eprintln!("Fashion-MNIST not found; pass a directory or set SPARSE_POSTERIOR_DATA");
        return Ok(());
    };
    let train = load_fmnist(&dir, Split::Train)?;
    let test = load_fmnist(&dir, Split::Test)?;
    let net = NetworkSpec::mlp200();
    let mask = SparsityMask::full(&net);

    let theta0 = ParamVector::he_uniform(&net, &mut rng::stream(0, rng::INIT, 0));
    let point = sgd_train(&net, &theta0, &mask, &train, &SgdConfig::default())?.params;
    let p = PredictiveMatrix::new(predict_proba(&net, &point, None, test.features())?)?;
    println!("SGD:   acc {:.4}, nll {:.4}", accuracy(&p, test.labels())?, nll(&p, test.labels())?);

    let chain = sghmc_chain(&net, &point, &mask, &train, &SghmcConfig::default(), Some(&test))?;
    let mut sum = ndarray::Array2::<f64>::zeros((test.len(), 10));
    for s in &chain.samples {
        let theta = ParamVector::from_values(&net, mask.scatter(s)?)?;
        sum += &predict_proba(&net, &theta, None, test.features())?;
    }
    sum /= chain.samples.len() as f64;
    let p = PredictiveMatrix::new(sum)?;
    println!("SGHMC: acc {:.4}, nll {:.4}", accuracy(&p, test.labels())?, nll(&p, test.labels())?);
    Ok(())
}
