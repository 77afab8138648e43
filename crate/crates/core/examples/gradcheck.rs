//! Reverse-mode gradients against central differences, first for a few
//! composite expressions and then for the loss of a small VAE.
//!
//! cargo run --example gradcheck

use llens::autodiff::{gradient_check, Bound, ParamSet, Tensor};
use llens::distributions::Family;
use llens::models::{Model, ModelSpec};
use llens::objectives::{vae_loss, Regularizer};
use llens::rng::stream;

fn main() -> llens::Result<()> {
    let mut rng = stream(0, "inputs");
    let a = Tensor::randn(vec![4, 3], 1.0, &mut rng);
    let b = Tensor::randn(vec![3, 2], 1.0, &mut rng);

    let cases: [(&str, f64); 3] = [
        ("tanh(a b) summed", gradient_check(|_, v| v[0].matmul(&v[1])?.tanh()?.sum(), &[a.clone(), b.clone()], 1e-6)?),
        (
            "softplus(a)^2 column means",
            gradient_check(|_, v| v[0].softplus()?.square()?.mean_axis(0)?.sum(), &[a.clone()], 1e-6)?,
        ),
        (
            "sigmoid(a) / (1 + exp(a))",
            gradient_check(|_, v| v[0].sigmoid()?.div(&v[0].exp()?.add_scalar(1.0)?)?.sum(), &[a], 1e-6)?,
        ),
    ];
    for (name, err) in cases {
        println!("{name:<30} max relative error {err:.2e}");
    }

    let mut spec = ModelSpec::new(Family::FactorizedBernoulli);
    spec.latent_dim = 2;
    spec.encoder_hidden = vec![6];
    spec.decoder_hidden = vec![6];
    let Model::Vae(vae) = spec.build(4)? else { unreachable!() };
    let mut params = ParamSet::new();
    vae.init(&mut params, &mut stream(0, "init"));
    let names: Vec<String> = params.iter().map(|(k, _)| k.clone()).collect();
    let values: Vec<Tensor> = params.iter().map(|(_, v)| v.clone()).collect();
    let batch = Tensor::from_rows(&[vec![1.0, 0.0, 1.0, 0.0], vec![0.0, 1.0, 1.0, 1.0], vec![1.0, 1.0, 0.0, 0.0]])?;

    let err = gradient_check(
        |tape, v| {
            let bound = Bound::from_vars(tape, names.iter().cloned().zip(v.iter().copied()));
            // Fresh stream per evaluation so every call sees the same noise.
            let mut eps = stream(0, "reparam");
            Ok(vae_loss(&bound, &batch, &vae.encoder, &vae.decoder, &Regularizer::elbo_kl(), &mut eps)?.total)
        },
        &values,
        1e-6,
    )?;
    println!("{:<30} max relative error {err:.2e} over {} parameters", "VAE negative ELBO", params.num_values());
    Ok(())
}
