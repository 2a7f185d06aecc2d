//! Objectives and their gradients. Adversarial losses take discriminator
//! logits (pre-head values).

use ndarray::{Array1, Array4};

use crate::nets::layers::{sigmoid, softplus};

/// Mean over all pixels of the squared reconstruction error, with its
/// gradient with respect to `output`.
pub fn mse_loss(output: &Array4<f64>, target: &Array4<f64>) -> (f64, Array4<f64>) {
    let n = output.len() as f64;
    let diff = output - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    (loss, diff * (2.0 / n))
}

/// Vanilla discriminator loss `-mean log D(x) - mean log(1 - D(x̂))` and its
/// gradients with respect to the real and fake logits.
pub fn vanilla_discriminator_loss(real: &Array1<f64>, fake: &Array1<f64>) -> (f64, Array1<f64>, Array1<f64>) {
    let (nr, nf) = (real.len() as f64, fake.len() as f64);
    let loss =
        real.iter().map(|&s| softplus(-s)).sum::<f64>() / nr + fake.iter().map(|&s| softplus(s)).sum::<f64>() / nf;
    let g_real = real.mapv(|s| (sigmoid(s) - 1.0) / nr);
    let g_fake = fake.mapv(|s| sigmoid(s) / nf);
    (loss, g_real, g_fake)
}

/// Non-saturating generator term `-mean log D(x̂)`.
pub fn vanilla_generator_loss(fake: &Array1<f64>) -> (f64, Array1<f64>) {
    let n = fake.len() as f64;
    let loss = fake.iter().map(|&s| softplus(-s)).sum::<f64>() / n;
    (loss, fake.mapv(|s| (sigmoid(s) - 1.0) / n))
}

/// Critic loss `mean C(x̂) - mean C(x)`; minimizing it maximizes the
/// critic's estimate of the Wasserstein distance.
pub fn critic_loss(real: &Array1<f64>, fake: &Array1<f64>) -> (f64, Array1<f64>, Array1<f64>) {
    let (nr, nf) = (real.len() as f64, fake.len() as f64);
    let loss = fake.sum() / nf - real.sum() / nr;
    (
        loss,
        Array1::from_elem(real.len(), -1.0 / nr),
        Array1::from_elem(fake.len(), 1.0 / nf),
    )
}

/// Generator side of the Wasserstein objective, `-mean C(x̂)`.
pub fn critic_generator_loss(fake: &Array1<f64>) -> (f64, Array1<f64>) {
    let n = fake.len() as f64;
    (-fake.sum() / n, Array1::from_elem(fake.len(), -1.0 / n))
}
