//! Forward pass, softmax NLL and backpropagation on a small MLP, with a
//! finite-difference spot check of one coordinate.

use ndarray::array;
use sparse_posterior::nn::{forward, loss_and_grad, nll_loss, Minibatch, NetworkSpec, ParamVector};
use sparse_posterior::rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = NetworkSpec::mlp(&[3, 4, 2])?;
    let params = ParamVector::he_uniform(&net, &mut rng::stream(0, rng::INIT, 0));
    let batch = Minibatch::new(array![[0.1, 0.5, -0.3], [0.9, -0.2, 0.4]], vec![0, 1])?;

    let (loss, grad) = loss_and_grad(&net, &params, None, &batch)?;
    println!("K = {}, mean NLL = {loss:.6}", net.num_params());

    let k = 5;
    let h = 1e-6;
    let mut up = params.clone();
    up.values_mut()[k] += h;
    let (z, _) = forward(&net, &up, None, &batch)?;
    let fd = (nll_loss(&z, &batch.labels)?.0 - loss) / h;
    println!("dL/dθ[{k}]: backprop {:.8}, forward difference {fd:.8}", grad.values()[k]);
    Ok(())
}
