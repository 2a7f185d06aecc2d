use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters shared by the autoencoder and the
/// discriminator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_side: usize,
    pub conv_channels: [usize; 3],
    pub kernel: usize,
    pub stride: usize,
    /// Zero padding of every convolution. 3 keeps a 7×7 convolution
    /// size-preserving, which is what a 25088-wide flatten at 224×224 needs.
    pub padding: usize,
    pub pool: usize,
    pub latent_dim: usize,
    pub leaky_slope: f64,
    pub fc_hidden: usize,
    /// Keep the leaky ReLU of the last decoder block in front of the output
    /// sigmoid. Off by default: the slope-0.01 branch squeezes every negative
    /// pre-activation to about 0.5, so dark pixels become nearly unreachable.
    #[serde(default)]
    pub output_leaky: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_side: 224,
            conv_channels: [8, 16, 32],
            kernel: 7,
            stride: 1,
            padding: 3,
            pool: 2,
            latent_dim: 128,
            leaky_slope: 0.01,
            fc_hidden: 256,
            output_leaky: false,
        }
    }
}

/// Spatial sizes through the networks for one config.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapePlan {
    /// Side after each encoder stage, starting with the input side.
    pub encoder_sides: [usize; 4],
    /// Side after each decoder stage, starting with the bottleneck side.
    pub decoder_sides: [usize; 4],
    pub flatten: usize,
}

impl ModelConfig {
    /// Desk-scale architecture: 64×64 inputs, narrow layers.
    pub fn desk() -> Self {
        ModelConfig {
            input_side: 64,
            conv_channels: [4, 8, 16],
            latent_dim: 32,
            fc_hidden: 64,
            ..ModelConfig::default()
        }
    }

    /// Smallest useful config, for gradient checks and mechanics tests.
    pub fn tiny() -> Self {
        ModelConfig {
            input_side: 16,
            conv_channels: [2, 3, 4],
            latent_dim: 8,
            fc_hidden: 12,
            ..ModelConfig::default()
        }
    }

    pub fn shapes(&self) -> Result<ShapePlan> {
        let err = |m: String| Err(Error::Config(m));
        if self.stride != 1 {
            return err(format!("only stride 1 is supported, got {}", self.stride));
        }
        if self.kernel == 0 || self.pool == 0 {
            return err("kernel and pool must be positive".into());
        }
        if self.conv_channels.contains(&0) || self.latent_dim == 0 || self.fc_hidden == 0 {
            return err("channel counts and layer widths must be positive".into());
        }
        if !self.leaky_slope.is_finite() {
            return err("leaky_slope must be finite".into());
        }
        let cube = self.pool.pow(3);
        if self.input_side == 0 || !self.input_side.is_multiple_of(cube) {
            return err(format!(
                "input_side {} is not divisible by pool^3 = {cube}",
                self.input_side
            ));
        }
        let mut enc = [self.input_side; 4];
        for i in 0..3 {
            let conv_out = (enc[i] + 2 * self.padding + 1)
                .checked_sub(self.kernel)
                .filter(|&s| s >= self.pool)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "encoder stage {} collapses: side {} with kernel {} and padding {}",
                        i + 1,
                        enc[i],
                        self.kernel,
                        self.padding
                    ))
                })?;
            enc[i + 1] = conv_out / self.pool;
        }
        let mut dec = [enc[3]; 4];
        for i in 0..3 {
            let t_out = (dec[i] + self.kernel)
                .checked_sub(1 + 2 * self.padding)
                .filter(|&s| s > 0)
                .ok_or_else(|| Error::Config(format!("decoder stage {} collapses", i + 1)))?;
            dec[i + 1] = t_out * self.pool;
        }
        if dec[3] != self.input_side {
            return err(format!(
                "kernel {} with padding {} does not reproduce the input side: encoder {:?}, decoder {:?}",
                self.kernel, self.padding, enc, dec
            ));
        }
        Ok(ShapePlan {
            encoder_sides: enc,
            decoder_sides: dec,
            flatten: self.conv_channels[2] * enc[3] * enc[3],
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes().map(|_| ())
    }

    pub fn flatten_size(&self) -> Result<usize> {
        Ok(self.shapes()?.flatten)
    }
}
