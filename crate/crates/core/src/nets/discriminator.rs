use ndarray::{Array1, Array2, Array4, Axis};
use serde::{Deserialize, Serialize};

use super::blocks::{DownBlock, DownCache};
use super::config::{ModelConfig, ShapePlan};
use super::layers::{leaky_relu, leaky_relu_backward, sigmoid, Linear};
use super::param::{Param, ParamStore};
use crate::error::{Error, Result};
use crate::seed::{rng_for, STREAM_DISC_INIT};

/// Output head of the discriminator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscriminatorHead {
    /// Probability output, for the vanilla adversarial regime.
    Sigmoid,
    /// Raw scalar, for the Wasserstein critic.
    None,
}

/// CNN discriminator mirroring the encoder: three down blocks with plain
/// ReLU, then `flatten→fc_hidden→latent_dim→1` with ReLUs in between.
#[derive(Clone, Debug)]
pub struct Discriminator {
    config: ModelConfig,
    plan: ShapePlan,
    head: DiscriminatorHead,
    blocks: Vec<DownBlock>,
    fc1: Linear,
    fc2: Linear,
    fc3: Linear,
}

pub struct DiscriminatorCache {
    blocks: Vec<DownCache>,
    bottleneck_dim: (usize, usize, usize, usize),
    flat: Array2<f64>,
    fc1_pre: Array2<f64>,
    h1: Array2<f64>,
    fc2_pre: Array2<f64>,
    h2: Array2<f64>,
}

impl Discriminator {
    pub fn new(config: &ModelConfig, head: DiscriminatorHead, seed: u64) -> Result<Self> {
        let plan = config.shapes()?;
        let mut rng = rng_for(seed, &[STREAM_DISC_INIT]);
        let [c1, c2, c3] = config.conv_channels;
        let (k, p, pool) = (config.kernel, config.padding, config.pool);
        let blocks = vec![
            DownBlock::new(1, c1, k, p, 0.0, pool, &mut rng),
            DownBlock::new(c1, c2, k, p, 0.0, pool, &mut rng),
            DownBlock::new(c2, c3, k, p, 0.0, pool, &mut rng),
        ];
        Ok(Discriminator {
            fc1: Linear::new(plan.flatten, config.fc_hidden, &mut rng),
            fc2: Linear::new(config.fc_hidden, config.latent_dim, &mut rng),
            fc3: Linear::new(config.latent_dim, 1, &mut rng),
            config: config.clone(),
            plan,
            head,
            blocks,
        })
    }

    pub fn head(&self) -> DiscriminatorHead {
        self.head
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check(&self, x: &Array4<f64>, min_batch: usize) -> Result<()> {
        let s = self.config.input_side;
        let (b, c, h, w) = x.dim();
        if c != 1 || h != s || w != s || b < min_batch {
            return Err(Error::Shape {
                expected: format!("B×1×{s}×{s} with B ≥ {min_batch}"),
                actual: format!("{b}×{c}×{h}×{w}"),
            });
        }
        Ok(())
    }

    pub fn apply_head(&self, logit: f64) -> f64 {
        match self.head {
            DiscriminatorHead::Sigmoid => sigmoid(logit),
            DiscriminatorHead::None => logit,
        }
    }

    /// Inference-mode scores with the head applied.
    pub fn forward(&self, x: &Array4<f64>) -> Result<Array1<f64>> {
        self.check(x, 1)?;
        let mut h = x.clone();
        for block in &self.blocks {
            h = block.forward_eval(&h);
        }
        let flat = h.into_shape_with_order((x.dim().0, self.plan.flatten)).unwrap();
        let h1 = leaky_relu(&self.fc1.forward(&flat), 0.0);
        let h2 = leaky_relu(&self.fc2.forward(&h1), 0.0);
        let logits = self.fc3.forward(&h2).index_axis_move(Axis(1), 0);
        Ok(logits.mapv(|v| self.apply_head(v)))
    }

    /// Training-mode pass returning pre-head logits. Losses are computed on
    /// logits so the sigmoid head never saturates a log.
    pub fn forward_train(&mut self, x: &Array4<f64>) -> Result<(Array1<f64>, DiscriminatorCache)> {
        self.check(x, 2)?;
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(3);
        for block in &mut self.blocks {
            let (y, c) = block.forward_train(&h);
            caches.push(c);
            h = y;
        }
        let bottleneck_dim = h.dim();
        let flat = h.into_shape_with_order((x.dim().0, self.plan.flatten)).unwrap();
        let fc1_pre = self.fc1.forward(&flat);
        let h1 = leaky_relu(&fc1_pre, 0.0);
        let fc2_pre = self.fc2.forward(&h1);
        let h2 = leaky_relu(&fc2_pre, 0.0);
        let logits = self.fc3.forward(&h2).index_axis_move(Axis(1), 0);
        Ok((
            logits,
            DiscriminatorCache {
                blocks: caches,
                bottleneck_dim,
                flat,
                fc1_pre,
                h1,
                fc2_pre,
                h2,
            },
        ))
    }

    /// Accumulates parameter gradients for `grad_logits` and returns the
    /// gradient with respect to the input images.
    pub fn backward(&mut self, cache: &DiscriminatorCache, grad_logits: &Array1<f64>) -> Array4<f64> {
        let g3 = grad_logits.clone().insert_axis(Axis(1));
        let g_h2 = self.fc3.backward(&cache.h2, &g3);
        let g_fc2 = leaky_relu_backward(&cache.fc2_pre, &g_h2, 0.0);
        let g_h1 = self.fc2.backward(&cache.h1, &g_fc2);
        let g_fc1 = leaky_relu_backward(&cache.fc1_pre, &g_h1, 0.0);
        let g_flat = self.fc1.backward(&cache.flat, &g_fc1);
        let mut g = g_flat.into_shape_with_order(cache.bottleneck_dim).unwrap();
        for (block, c) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            g = block.backward(c, &g);
        }
        g
    }
}

impl ParamStore for Discriminator {
    fn params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect(&format!("disc.block{}", i + 1), &mut out);
        }
        self.fc1.collect("disc.fc1", &mut out);
        self.fc2.collect("disc.fc2", &mut out);
        self.fc3.collect("disc.fc3", &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.collect_mut(&format!("disc.block{}", i + 1), &mut out);
        }
        self.fc1.collect_mut("disc.fc1", &mut out);
        self.fc2.collect_mut("disc.fc2", &mut out);
        self.fc3.collect_mut("disc.fc3", &mut out);
        out
    }

    fn buffers(&self) -> Vec<(String, &Vec<f64>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect_buffers(&format!("disc.block{}", i + 1), &mut out);
        }
        out
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.collect_buffers_mut(&format!("disc.block{}", i + 1), &mut out);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn sigmoid_head_is_a_probability() {
        let d = Discriminator::new(&ModelConfig::tiny(), DiscriminatorHead::Sigmoid, 1).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let x = Array4::from_shape_fn((5, 1, 16, 16), |_| rng.random_range(0.0..1.0));
        let out = d.forward(&x).unwrap();
        assert_eq!(out.len(), 5);
        assert!(out.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn headless_critic_returns_raw_logits() {
        let mut d = Discriminator::new(&ModelConfig::tiny(), DiscriminatorHead::None, 1).unwrap();
        let x = Array4::from_elem((2, 1, 16, 16), 0.5);
        let (logits, _) = d.forward_train(&x).unwrap();
        assert_eq!(logits.len(), 2);
        assert_eq!(d.apply_head(-3.5), -3.5);
    }
}
