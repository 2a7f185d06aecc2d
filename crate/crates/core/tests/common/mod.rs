//! Shared finite-difference gradient checks.

use cxr_anomaly::nets::{Cae, Discriminator, DiscriminatorHead, ModelConfig, ParamStore};
use cxr_anomaly::training::mse_loss;
use ndarray::{Array1, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-3;
pub const COORDS: usize = 10;

fn batch(rng: &mut ChaCha8Rng, b: usize, side: usize) -> Array4<f64> {
    Array4::from_shape_fn((b, 1, side, side), |_| rng.random_range(0.0..1.0))
}

fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < 1e-10 {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

/// Picks `COORDS` (param index, element index) pairs whose analytic
/// gradient is not negligible, so the relative error is meaningful.
fn pick<M: ParamStore>(m: &M, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let params = m.params();
    let mut picked = Vec::new();
    while picked.len() < COORDS {
        let i = rng.random_range(0..params.len());
        let j = rng.random_range(0..params[i].1.len());
        if params[i].1.grad[j].abs() > 1e-7 && !picked.contains(&(i, j)) {
            picked.push((i, j));
        }
    }
    picked
}

fn check<M: ParamStore + Clone>(name: &str, model: &M, loss: impl Fn(&mut M) -> f64, rng: &mut ChaCha8Rng) {
    let names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
    for (i, j) in pick(model, rng) {
        let analytic = model.params()[i].1.grad[j];
        let eval = |delta: f64| {
            let mut m = model.clone();
            m.params_mut()[i].1.value[j] += delta;
            loss(&mut m)
        };
        let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
        let e = rel_err(analytic, numeric);
        assert!(
            e < REL_TOL,
            "{name} {}[{j}]: analytic {analytic:e}, numeric {numeric:e}, rel err {e:e}",
            names[i]
        );
    }
}

pub fn cae_check(cfg: ModelConfig, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = batch(&mut rng, 3, cfg.input_side);
    let mut cae = Cae::new(&cfg, 5).unwrap();
    let loss = |m: &mut Cae| {
        let (y, _) = m.forward_train(&x).unwrap();
        mse_loss(&y, &x).0
    };
    let base = cae.clone();
    let (y, cache) = cae.forward_train(&x).unwrap();
    let (_, g) = mse_loss(&y, &x);
    cae.zero_grad();
    cae.backward(&cache, &g);
    // Carry the gradients, but evaluate perturbations from the pre-step
    // state (running statistics do not affect training-mode outputs).
    let mut probe = base;
    for ((_, dst), (_, src)) in probe.params_mut().into_iter().zip(cae.params()) {
        dst.grad.clone_from(&src.grad);
    }
    check("cae", &probe, loss, &mut rng);
}

pub fn disc_check(head: DiscriminatorHead, seed: u64) {
    let cfg = ModelConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = batch(&mut rng, 3, cfg.input_side);
    let w = Array1::from_shape_fn(3, |_| rng.random_range(-1.0..1.0));
    let mut d = Discriminator::new(&cfg, head, seed).unwrap();
    let loss = |m: &mut Discriminator, x: &Array4<f64>| {
        let (logits, _) = m.forward_train(x).unwrap();
        logits.iter().zip(&w).map(|(l, w)| l * w).sum::<f64>()
    };
    d.zero_grad();
    let (_, cache) = d.forward_train(&x).unwrap();
    let gx = d.backward(&cache, &w);
    check("disc", &d, |m| loss(m, &x), &mut rng);

    for _ in 0..COORDS {
        let idx = (
            rng.random_range(0..3),
            0,
            rng.random_range(0..cfg.input_side),
            rng.random_range(0..cfg.input_side),
        );
        let eval = |delta: f64| {
            let mut xp = x.clone();
            xp[idx] += delta;
            loss(&mut d.clone(), &xp)
        };
        let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
        let e = rel_err(gx[idx], numeric);
        assert!(
            e < REL_TOL,
            "input {idx:?}: analytic {:e}, numeric {numeric:e}",
            gx[idx]
        );
    }
}
