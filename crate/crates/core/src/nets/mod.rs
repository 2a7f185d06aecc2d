//! Network definitions: the convolutional autoencoder, the CNN
//! discriminator, their layer kernels and the checkpoint archive format.

mod blocks;
pub mod cae;
pub mod checkpoint;
pub mod config;
pub mod discriminator;
pub mod kernel;
pub mod layers;
pub mod param;

pub use cae::{Cae, CaeCache};
pub use checkpoint::Archive;
pub use config::{ModelConfig, ShapePlan};
pub use discriminator::{Discriminator, DiscriminatorCache, DiscriminatorHead};
pub use kernel::{kernel_mode, KernelMode};
pub use param::{Param, ParamStore};
