use ndarray::Array4;
use rand::Rng;

use super::layers::{
    leaky_relu, leaky_relu_backward, max_pool_backward, max_pool_forward, upsample_backward, upsample_forward,
    BatchNorm2d, BatchNormCache, Conv2d, ConvTranspose2d,
};
use super::param::{prefixed, Param};

/// BatchNorm → Conv → (leaky) ReLU → MaxPool.
#[derive(Clone, Debug)]
pub struct DownBlock {
    pub bn: BatchNorm2d,
    pub conv: Conv2d,
    slope: f64,
    pool: usize,
}

pub struct DownCache {
    bn: BatchNormCache,
    conv_in: Array4<f64>,
    pre_act: Array4<f64>,
    pool_idx: Vec<u32>,
}

impl DownBlock {
    pub fn new<R: Rng>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        pad: usize,
        slope: f64,
        pool: usize,
        rng: &mut R,
    ) -> Self {
        DownBlock {
            bn: BatchNorm2d::new(in_ch),
            conv: Conv2d::new(in_ch, out_ch, kernel, pad, rng),
            slope,
            pool,
        }
    }

    pub fn forward_train(&mut self, x: &Array4<f64>) -> (Array4<f64>, DownCache) {
        let (a, bn) = self.bn.forward_train(x);
        let z = self.conv.forward(&a);
        let act = leaky_relu(&z, self.slope);
        let (y, pool_idx) = max_pool_forward(&act, self.pool);
        (
            y,
            DownCache {
                bn,
                conv_in: a,
                pre_act: z,
                pool_idx,
            },
        )
    }

    pub fn forward_eval(&self, x: &Array4<f64>) -> Array4<f64> {
        let a = self.bn.forward_eval(x);
        let z = self.conv.forward(&a);
        max_pool_forward(&leaky_relu(&z, self.slope), self.pool).0
    }

    pub fn backward(&mut self, cache: &DownCache, gy: &Array4<f64>) -> Array4<f64> {
        let g_act = max_pool_backward(gy, &cache.pool_idx, cache.pre_act.dim());
        let g_z = leaky_relu_backward(&cache.pre_act, &g_act, self.slope);
        let g_a = self.conv.backward(&cache.conv_in, &g_z);
        self.bn.backward(&cache.bn, &g_a)
    }

    pub(crate) fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        self.bn.collect(&prefixed(prefix, "bn"), out);
        self.conv.collect(&prefixed(prefix, "conv"), out);
    }

    pub(crate) fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.bn.collect_mut(&prefixed(prefix, "bn"), out);
        self.conv.collect_mut(&prefixed(prefix, "conv"), out);
    }

    pub(crate) fn collect_buffers<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Vec<f64>)>) {
        self.bn.collect_buffers(&prefixed(prefix, "bn"), out);
    }

    pub(crate) fn collect_buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Vec<f64>)>) {
        self.bn.collect_buffers_mut(&prefixed(prefix, "bn"), out);
    }
}

/// BatchNorm → transposed Conv → leaky ReLU → nearest-neighbour upsample.
#[derive(Clone, Debug)]
pub struct UpBlock {
    pub bn: BatchNorm2d,
    pub tconv: ConvTranspose2d,
    slope: f64,
    factor: usize,
}

pub struct UpCache {
    bn: BatchNormCache,
    tconv_in: Array4<f64>,
    pre_act: Array4<f64>,
}

impl UpBlock {
    pub fn new<R: Rng>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        pad: usize,
        slope: f64,
        factor: usize,
        rng: &mut R,
    ) -> Self {
        UpBlock {
            bn: BatchNorm2d::new(in_ch),
            tconv: ConvTranspose2d::new(in_ch, out_ch, kernel, pad, rng),
            slope,
            factor,
        }
    }

    pub fn forward_train(&mut self, x: &Array4<f64>) -> (Array4<f64>, UpCache) {
        let (a, bn) = self.bn.forward_train(x);
        let z = self.tconv.forward(&a);
        let y = upsample_forward(&leaky_relu(&z, self.slope), self.factor);
        (
            y,
            UpCache {
                bn,
                tconv_in: a,
                pre_act: z,
            },
        )
    }

    pub fn forward_eval(&self, x: &Array4<f64>) -> Array4<f64> {
        let a = self.bn.forward_eval(x);
        let z = self.tconv.forward(&a);
        upsample_forward(&leaky_relu(&z, self.slope), self.factor)
    }

    pub fn backward(&mut self, cache: &UpCache, gy: &Array4<f64>) -> Array4<f64> {
        let g_act = upsample_backward(gy, self.factor);
        let g_z = leaky_relu_backward(&cache.pre_act, &g_act, self.slope);
        let g_a = self.tconv.backward(&cache.tconv_in, &g_z);
        self.bn.backward(&cache.bn, &g_a)
    }

    pub(crate) fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        self.bn.collect(&prefixed(prefix, "bn"), out);
        self.tconv.collect(&prefixed(prefix, "tconv"), out);
    }

    pub(crate) fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.bn.collect_mut(&prefixed(prefix, "bn"), out);
        self.tconv.collect_mut(&prefixed(prefix, "tconv"), out);
    }

    pub(crate) fn collect_buffers<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Vec<f64>)>) {
        self.bn.collect_buffers(&prefixed(prefix, "bn"), out);
    }

    pub(crate) fn collect_buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Vec<f64>)>) {
        self.bn.collect_buffers_mut(&prefixed(prefix, "bn"), out);
    }
}
