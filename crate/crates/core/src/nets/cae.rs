use ndarray::{Array2, Array4};

use super::blocks::{DownBlock, DownCache, UpBlock, UpCache};
use super::config::{ModelConfig, ShapePlan};
use super::layers::{leaky_relu, leaky_relu_backward, sigmoid, Linear};
use super::param::{Param, ParamStore};
use crate::error::{Error, Result};
use crate::seed::{rng_for, STREAM_CAE_INIT};

/// Convolutional autoencoder.
///
/// Encoder: three down blocks (1→c1→c2→c3 channels, each halving the side),
/// flatten, `flatten→fc_hidden→latent` with a leaky ReLU in between.
/// Decoder: `latent→fc_hidden→flatten` with leaky ReLUs, reshape, three up
/// blocks (c3→c2→c1→1 channels, each doubling the side), sigmoid. The last
/// up block skips its leaky ReLU unless `output_leaky` is set.
#[derive(Clone, Debug)]
pub struct Cae {
    config: ModelConfig,
    plan: ShapePlan,
    enc_blocks: Vec<DownBlock>,
    enc_fc1: Linear,
    enc_fc2: Linear,
    dec_fc1: Linear,
    dec_fc2: Linear,
    dec_blocks: Vec<UpBlock>,
}

pub struct EncoderCache {
    blocks: Vec<DownCache>,
    bottleneck_dim: (usize, usize, usize, usize),
    flat: Array2<f64>,
    fc1_pre: Array2<f64>,
    hidden: Array2<f64>,
}

pub struct DecoderCache {
    latent: Array2<f64>,
    fc1_pre: Array2<f64>,
    hidden: Array2<f64>,
    fc2_pre: Array2<f64>,
    blocks: Vec<UpCache>,
    output: Array4<f64>,
}

pub struct CaeCache {
    encoder: EncoderCache,
    decoder: DecoderCache,
}

impl Cae {
    /// Builds an autoencoder with parameters drawn deterministically from
    /// `seed`.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let plan = config.shapes()?;
        let mut rng = rng_for(seed, &[STREAM_CAE_INIT]);
        let [c1, c2, c3] = config.conv_channels;
        let (k, p, slope, pool) = (config.kernel, config.padding, config.leaky_slope, config.pool);
        let enc_blocks = vec![
            DownBlock::new(1, c1, k, p, slope, pool, &mut rng),
            DownBlock::new(c1, c2, k, p, slope, pool, &mut rng),
            DownBlock::new(c2, c3, k, p, slope, pool, &mut rng),
        ];
        let enc_fc1 = Linear::new(plan.flatten, config.fc_hidden, &mut rng);
        let enc_fc2 = Linear::new(config.fc_hidden, config.latent_dim, &mut rng);
        let dec_fc1 = Linear::new(config.latent_dim, config.fc_hidden, &mut rng);
        let dec_fc2 = Linear::new(config.fc_hidden, plan.flatten, &mut rng);
        let dec_blocks = vec![
            UpBlock::new(c3, c2, k, p, slope, pool, &mut rng),
            UpBlock::new(c2, c1, k, p, slope, pool, &mut rng),
            UpBlock::new(
                c1,
                1,
                k,
                p,
                if config.output_leaky { slope } else { 1.0 },
                pool,
                &mut rng,
            ),
        ];
        Ok(Cae {
            config: config.clone(),
            plan,
            enc_blocks,
            enc_fc1,
            enc_fc2,
            dec_fc1,
            dec_fc2,
            dec_blocks,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn shape_plan(&self) -> &ShapePlan {
        &self.plan
    }

    fn check_images(&self, x: &Array4<f64>, min_batch: usize) -> Result<()> {
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

    fn check_latents(&self, z: &Array2<f64>) -> Result<()> {
        let (b, d) = z.dim();
        if d != self.config.latent_dim || b == 0 {
            return Err(Error::Shape {
                expected: format!("B×{} with B ≥ 1", self.config.latent_dim),
                actual: format!("{b}×{d}"),
            });
        }
        Ok(())
    }

    fn bottleneck_dim(&self, batch: usize) -> (usize, usize, usize, usize) {
        let side = self.plan.encoder_sides[3];
        (batch, self.config.conv_channels[2], side, side)
    }

    /// Inference-mode encoding (BatchNorm running statistics).
    pub fn encode(&self, x: &Array4<f64>) -> Result<Array2<f64>> {
        self.check_images(x, 1)?;
        let mut h = x.clone();
        for block in &self.enc_blocks {
            h = block.forward_eval(&h);
        }
        let flat = h.into_shape_with_order((x.dim().0, self.plan.flatten)).unwrap();
        let hidden = leaky_relu(&self.enc_fc1.forward(&flat), self.config.leaky_slope);
        Ok(self.enc_fc2.forward(&hidden))
    }

    /// Inference-mode decoding; every output value lies in (0, 1).
    pub fn decode(&self, z: &Array2<f64>) -> Result<Array4<f64>> {
        self.check_latents(z)?;
        let slope = self.config.leaky_slope;
        let hidden = leaky_relu(&self.dec_fc1.forward(z), slope);
        let wide = leaky_relu(&self.dec_fc2.forward(&hidden), slope);
        let mut h = wide.into_shape_with_order(self.bottleneck_dim(z.nrows())).unwrap();
        for block in &self.dec_blocks {
            h = block.forward_eval(&h);
        }
        Ok(h.mapv(sigmoid))
    }

    pub fn reconstruct(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        self.decode(&self.encode(x)?)
    }

    /// Training-mode forward pass (batch statistics, running estimates
    /// updated). Needs at least two images.
    pub fn forward_train(&mut self, x: &Array4<f64>) -> Result<(Array4<f64>, CaeCache)> {
        self.check_images(x, 2)?;
        let batch = x.dim().0;
        let slope = self.config.leaky_slope;

        let mut h = x.clone();
        let mut enc_caches = Vec::with_capacity(3);
        for block in &mut self.enc_blocks {
            let (y, c) = block.forward_train(&h);
            enc_caches.push(c);
            h = y;
        }
        let bottleneck_dim = h.dim();
        let flat = h.into_shape_with_order((batch, self.plan.flatten)).unwrap();
        let fc1_pre = self.enc_fc1.forward(&flat);
        let hidden = leaky_relu(&fc1_pre, slope);
        let latent = self.enc_fc2.forward(&hidden);

        let d_fc1_pre = self.dec_fc1.forward(&latent);
        let d_hidden = leaky_relu(&d_fc1_pre, slope);
        let fc2_pre = self.dec_fc2.forward(&d_hidden);
        let wide = leaky_relu(&fc2_pre, slope);
        let mut h = wide.into_shape_with_order(bottleneck_dim).unwrap();
        let mut dec_caches = Vec::with_capacity(3);
        for block in &mut self.dec_blocks {
            let (y, c) = block.forward_train(&h);
            dec_caches.push(c);
            h = y;
        }
        let output = h.mapv(sigmoid);
        Ok((
            output.clone(),
            CaeCache {
                encoder: EncoderCache {
                    blocks: enc_caches,
                    bottleneck_dim,
                    flat,
                    fc1_pre,
                    hidden,
                },
                decoder: DecoderCache {
                    latent,
                    fc1_pre: d_fc1_pre,
                    hidden: d_hidden,
                    fc2_pre,
                    blocks: dec_caches,
                    output,
                },
            },
        ))
    }

    /// Backpropagates `grad_output` (gradient of the loss with respect to the
    /// reconstruction) and accumulates parameter gradients.
    pub fn backward(&mut self, cache: &CaeCache, grad_output: &Array4<f64>) {
        let slope = self.config.leaky_slope;
        let dec = &cache.decoder;
        let mut g = grad_output.clone();
        g.zip_mut_with(&dec.output, |g, &y| *g *= y * (1.0 - y));
        for (block, c) in self.dec_blocks.iter_mut().zip(&dec.blocks).rev() {
            g = block.backward(c, &g);
        }
        let batch = g.dim().0;
        let g_wide = g.into_shape_with_order((batch, self.plan.flatten)).unwrap();
        let g_fc2_pre = leaky_relu_backward(&dec.fc2_pre, &g_wide, slope);
        let g_hidden = self.dec_fc2.backward(&dec.hidden, &g_fc2_pre);
        let g_fc1_pre = leaky_relu_backward(&dec.fc1_pre, &g_hidden, slope);
        let g_latent = self.dec_fc1.backward(&dec.latent, &g_fc1_pre);

        let enc = &cache.encoder;
        let g_hidden = self.enc_fc2.backward(&enc.hidden, &g_latent);
        let g_fc1_pre = leaky_relu_backward(&enc.fc1_pre, &g_hidden, slope);
        let g_flat = self.enc_fc1.backward(&enc.flat, &g_fc1_pre);
        let mut g = g_flat.into_shape_with_order(enc.bottleneck_dim).unwrap();
        for (block, c) in self.enc_blocks.iter_mut().zip(&enc.blocks).rev() {
            g = block.backward(c, &g);
        }
    }
}

impl ParamStore for Cae {
    fn params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        for (i, b) in self.enc_blocks.iter().enumerate() {
            b.collect(&format!("encoder.block{}", i + 1), &mut out);
        }
        self.enc_fc1.collect("encoder.fc1", &mut out);
        self.enc_fc2.collect("encoder.fc2", &mut out);
        self.dec_fc1.collect("decoder.fc1", &mut out);
        self.dec_fc2.collect("decoder.fc2", &mut out);
        for (i, b) in self.dec_blocks.iter().enumerate() {
            b.collect(&format!("decoder.block{}", i + 1), &mut out);
        }
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        for (i, b) in self.enc_blocks.iter_mut().enumerate() {
            b.collect_mut(&format!("encoder.block{}", i + 1), &mut out);
        }
        self.enc_fc1.collect_mut("encoder.fc1", &mut out);
        self.enc_fc2.collect_mut("encoder.fc2", &mut out);
        self.dec_fc1.collect_mut("decoder.fc1", &mut out);
        self.dec_fc2.collect_mut("decoder.fc2", &mut out);
        for (i, b) in self.dec_blocks.iter_mut().enumerate() {
            b.collect_mut(&format!("decoder.block{}", i + 1), &mut out);
        }
        out
    }

    fn buffers(&self) -> Vec<(String, &Vec<f64>)> {
        let mut out = Vec::new();
        for (i, b) in self.enc_blocks.iter().enumerate() {
            b.collect_buffers(&format!("encoder.block{}", i + 1), &mut out);
        }
        for (i, b) in self.dec_blocks.iter().enumerate() {
            b.collect_buffers(&format!("decoder.block{}", i + 1), &mut out);
        }
        out
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut out = Vec::new();
        for (i, b) in self.enc_blocks.iter_mut().enumerate() {
            b.collect_buffers_mut(&format!("encoder.block{}", i + 1), &mut out);
        }
        for (i, b) in self.dec_blocks.iter_mut().enumerate() {
            b.collect_buffers_mut(&format!("decoder.block{}", i + 1), &mut out);
        }
        out
    }
}
