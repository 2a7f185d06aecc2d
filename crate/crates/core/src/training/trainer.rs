use std::path::Path;

use ndarray::{Array1, Array4};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{lr_schedule, Regime, TrainConfig};
use super::loss::{critic_generator_loss, critic_loss, mse_loss, vanilla_discriminator_loss, vanilla_generator_loss};
use super::optim::Optimizer;
use crate::corpus::ImageSample;
use crate::error::{Error, Result};
use crate::nets::{Archive, Cae, Discriminator, DiscriminatorHead, ModelConfig, ParamStore};
use crate::seed::{rng_for, STREAM_SHUFFLE};

/// Losses averaged over the batches of one epoch. `loss` is always the
/// reconstruction MSE.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub disc_loss: Option<f64>,
}

/// Instrumentation hooks called from inside the training loop.
pub trait TrainObserver {
    /// Sample ids of a batch, before it is fed to any network.
    fn on_batch(&mut self, _epoch: usize, _ids: &[&str]) {}
    /// After every discriminator/critic update (and clipping).
    fn on_discriminator_update(&mut self, _disc: &Discriminator) {}
    /// Head-applied discriminator outputs on real and reconstructed images.
    fn on_discriminator_outputs(&mut self, _real: &[f64], _fake: &[f64]) {}
    /// After every autoencoder update.
    fn on_cae_update(&mut self, _cae: &Cae) {}
}

/// Observer that ignores everything.
pub struct NoObserver;

impl TrainObserver for NoObserver {}

/// Clamps every value into `[-limit, limit]`.
pub fn clip_values(values: &mut [f64], limit: f64) {
    assert!(limit > 0.0, "clip limit must be positive");
    for v in values {
        *v = v.clamp(-limit, limit);
    }
}

/// Clamps every trainable parameter of `module` into `[-limit, limit]`.
/// Normalization buffers are not parameters and are left alone.
pub fn clip_parameters<M: ParamStore>(module: &mut M, limit: f64) {
    for (_, p) in module.params_mut() {
        clip_values(&mut p.value, limit);
    }
}

/// Result of a finished training run.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub cae: Cae,
    pub discriminator: Option<Discriminator>,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub fold: usize,
    pub history: Vec<EpochRecord>,
}

impl TrainedModel {
    pub fn load(path: &Path) -> Result<Self> {
        let archive = Archive::load(path)?;
        let state = TrainState::from_archive(&archive, path)?;
        Ok(TrainedModel {
            cae: state.cae,
            discriminator: state.disc,
            model_config: state.model_config,
            train_config: state.train_config,
            fold: state.fold,
            history: state.history,
        })
    }
}

/// Everything needed to continue a run exactly where it stopped.
struct TrainState {
    model_config: ModelConfig,
    train_config: TrainConfig,
    fold: usize,
    cae: Cae,
    disc: Option<Discriminator>,
    cae_opt: Optimizer,
    disc_opt: Option<Optimizer>,
    history: Vec<EpochRecord>,
    critic_updates: u64,
}

impl TrainState {
    fn fresh(model_config: &ModelConfig, train_config: &TrainConfig, fold: usize) -> Result<Self> {
        let cae = Cae::new(model_config, train_config.seed)?;
        let head = match train_config.regime {
            Regime::Cae => None,
            Regime::VanillaAdv => Some(DiscriminatorHead::Sigmoid),
            Regime::WassersteinAdv => Some(DiscriminatorHead::None),
        };
        let disc = head
            .map(|h| Discriminator::new(model_config, h, train_config.seed))
            .transpose()?;
        let cae_opt = Optimizer::new(train_config.optimizer, &cae);
        let disc_opt = disc.as_ref().map(|d| Optimizer::new(train_config.optimizer, d));
        Ok(TrainState {
            model_config: model_config.clone(),
            train_config: train_config.clone(),
            fold,
            cae,
            disc,
            cae_opt,
            disc_opt,
            history: Vec::new(),
            critic_updates: 0,
        })
    }

    fn to_archive(&self) -> Archive {
        let mut a = Archive::new();
        a.put_module(&self.cae);
        self.cae_opt.save(&mut a, "optim.cae");
        if let (Some(d), Some(o)) = (&self.disc, &self.disc_opt) {
            a.put_module(d);
            o.save(&mut a, "optim.disc");
        }
        a.put_meta("model_config", serde_json::to_string(&self.model_config).unwrap());
        a.put_meta("train_config", serde_json::to_string(&self.train_config).unwrap());
        a.put_meta("seed", self.train_config.seed.to_string());
        a.put_meta("fold", self.fold.to_string());
        a.put_meta("epochs_done", self.history.len().to_string());
        a.put_meta("history", serde_json::to_string(&self.history).unwrap());
        a.put_meta("critic_updates", self.critic_updates.to_string());
        a
    }

    fn from_archive(a: &Archive, path: &Path) -> Result<Self> {
        let corrupt = |detail: String| Error::CorruptCheckpoint {
            path: path.to_path_buf(),
            detail,
        };
        let meta = |key: &str| a.meta(key).ok_or_else(|| corrupt(format!("missing metadata {key}")));
        let model_config: ModelConfig =
            serde_json::from_str(meta("model_config")?).map_err(|e| corrupt(format!("model_config: {e}")))?;
        let train_config: TrainConfig =
            serde_json::from_str(meta("train_config")?).map_err(|e| corrupt(format!("train_config: {e}")))?;
        let fold = meta("fold")?.parse().map_err(|_| corrupt("bad fold".into()))?;
        let history: Vec<EpochRecord> =
            serde_json::from_str(meta("history")?).map_err(|e| corrupt(format!("history: {e}")))?;
        let critic_updates = meta("critic_updates")?
            .parse()
            .map_err(|_| corrupt("bad critic_updates".into()))?;
        let mut state = TrainState::fresh(&model_config, &train_config, fold)?;
        a.load_module(&mut state.cae).map_err(&corrupt)?;
        state.cae_opt.load(a, "optim.cae").map_err(&corrupt)?;
        if let (Some(d), Some(o)) = (state.disc.as_mut(), state.disc_opt.as_mut()) {
            a.load_module(d).map_err(&corrupt)?;
            o.load(a, "optim.disc").map_err(&corrupt)?;
        }
        state.history = history;
        state.critic_updates = critic_updates;
        Ok(state)
    }
}

/// Epoch-by-epoch driver for all three regimes over one fold's training set.
pub struct Trainer<'a> {
    samples: Vec<&'a ImageSample>,
    state: TrainState,
}

impl<'a> Trainer<'a> {
    /// Starts a fresh run. Rejects training sets that contain anomalies,
    /// images of the wrong size, or fewer images than one batch.
    pub fn new(
        samples: &[&'a ImageSample],
        model_config: &ModelConfig,
        train_config: &TrainConfig,
        fold: usize,
    ) -> Result<Self> {
        model_config.validate()?;
        train_config.validate()?;
        let samples = Self::check_samples(samples, model_config, train_config)?;
        Ok(Trainer {
            samples,
            state: TrainState::fresh(model_config, train_config, fold)?,
        })
    }

    /// Continues from a checkpoint written by [`Trainer::save_checkpoint`].
    pub fn resume(samples: &[&'a ImageSample], checkpoint: &Path) -> Result<Self> {
        let archive = Archive::load(checkpoint)?;
        let state = TrainState::from_archive(&archive, checkpoint)?;
        let samples = Self::check_samples(samples, &state.model_config, &state.train_config)?;
        Ok(Trainer { samples, state })
    }

    fn check_samples(
        samples: &[&'a ImageSample],
        model: &ModelConfig,
        train: &TrainConfig,
    ) -> Result<Vec<&'a ImageSample>> {
        if samples.is_empty() {
            return Err(Error::Data("empty training set".into()));
        }
        for s in samples {
            if s.label.is_anomaly() {
                return Err(Error::Data(format!(
                    "training set contains anomaly sample {} ({})",
                    s.sample_id, s.label
                )));
            }
            if s.pixels.dim() != (model.input_side, model.input_side) {
                return Err(Error::Shape {
                    expected: format!("{0}×{0} pixels", model.input_side),
                    actual: format!("{:?} for {}", s.pixels.dim(), s.sample_id),
                });
            }
        }
        if train.batch_size > samples.len() {
            return Err(Error::Data(format!(
                "batch_size {} exceeds the {} training samples",
                train.batch_size,
                samples.len()
            )));
        }
        Ok(samples.to_vec())
    }

    pub fn epochs_done(&self) -> usize {
        self.state.history.len()
    }

    pub fn is_finished(&self) -> bool {
        self.epochs_done() >= self.state.train_config.epochs
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.state.history
    }

    pub fn cae(&self) -> &Cae {
        &self.state.cae
    }

    pub fn discriminator(&self) -> Option<&Discriminator> {
        self.state.disc.as_ref()
    }

    pub fn train_config(&self) -> &TrainConfig {
        &self.state.train_config
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.state.model_config
    }

    pub fn fold(&self) -> usize {
        self.state.fold
    }

    /// Total discriminator/critic updates so far.
    pub fn discriminator_updates(&self) -> u64 {
        self.state.critic_updates
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.samples.len() / self.state.train_config.batch_size
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        self.state.to_archive().save(path)
    }

    fn gather(&self, idx: &[usize]) -> Array4<f64> {
        let side = self.state.model_config.input_side;
        let mut x = Array4::<f64>::zeros((idx.len(), 1, side, side));
        for (b, &i) in idx.iter().enumerate() {
            let src = &self.samples[i].pixels;
            x.slice_mut(ndarray::s![b, 0, .., ..])
                .zip_mut_with(src, |d, &s| *d = s as f64);
        }
        x
    }

    fn numerical(&self, epoch: usize, detail: String) -> Error {
        Error::Numerical {
            fold: self.state.fold,
            epoch,
            detail,
        }
    }

    /// Runs one epoch: reshuffles with a stream keyed on (seed, epoch), drops
    /// the last incomplete batch, and updates per the regime.
    pub fn run_epoch(&mut self, observer: &mut dyn TrainObserver) -> Result<EpochRecord> {
        let epoch = self.epochs_done();
        let cfg = self.state.train_config.clone();
        let lr = lr_schedule(epoch, &cfg);
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, &[STREAM_SHUFFLE, epoch as u64]));

        let mut recon_sum = 0.0;
        let mut disc_sum = 0.0;
        let mut batches = 0usize;
        let mut saturated = 0usize;
        for idx in order.chunks_exact(cfg.batch_size) {
            let ids: Vec<&str> = idx.iter().map(|&i| self.samples[i].sample_id.as_str()).collect();
            observer.on_batch(epoch, &ids);
            let x = self.gather(idx);
            let (xhat, cache) = self.state.cae.forward_train(&x)?;
            let (recon, mut grad) = mse_loss(&xhat, &x);
            if !recon.is_finite() {
                return Err(self.numerical(epoch, format!("reconstruction loss is {recon}")));
            }

            match cfg.regime {
                Regime::Cae => {}
                Regime::VanillaAdv => {
                    let disc = self.state.disc.as_mut().unwrap();
                    disc.zero_grad();
                    let (real, c_real) = disc.forward_train(&x)?;
                    let (fake, c_fake) = disc.forward_train(&xhat)?;
                    let (d_loss, g_real, g_fake) = vanilla_discriminator_loss(&real, &fake);
                    let real_p: Vec<f64> = real.iter().map(|&s| disc.apply_head(s)).collect();
                    let fake_p: Vec<f64> = fake.iter().map(|&s| disc.apply_head(s)).collect();
                    observer.on_discriminator_outputs(&real_p, &fake_p);
                    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
                    if mean(&real_p) > 0.99 && mean(&fake_p) < 0.01 {
                        saturated += 1;
                    }
                    disc.backward(&c_real, &g_real);
                    disc.backward(&c_fake, &g_fake);
                    self.state.disc_opt.as_mut().unwrap().step(disc, lr);
                    self.state.critic_updates += 1;
                    observer.on_discriminator_update(disc);
                    if !d_loss.is_finite() {
                        return Err(self.numerical(epoch, format!("discriminator loss is {d_loss}")));
                    }
                    disc_sum += d_loss;

                    if cfg.adv_weight != 0.0 {
                        let g_img = adversarial_image_grad(disc, &xhat, cfg.adv_weight, vanilla_generator_loss)?;
                        grad += &g_img;
                    }
                }
                Regime::WassersteinAdv => {
                    let disc = self.state.disc.as_mut().unwrap();
                    let mut c_sum = 0.0;
                    for _ in 0..cfg.critic_ratio {
                        disc.zero_grad();
                        let (real, c_real) = disc.forward_train(&x)?;
                        let (fake, c_fake) = disc.forward_train(&xhat)?;
                        let (c_loss, g_real, g_fake) = critic_loss(&real, &fake);
                        observer.on_discriminator_outputs(real.as_slice().unwrap(), fake.as_slice().unwrap());
                        disc.backward(&c_real, &g_real);
                        disc.backward(&c_fake, &g_fake);
                        self.state.disc_opt.as_mut().unwrap().step(disc, lr);
                        clip_parameters(disc, cfg.clip_limit);
                        self.state.critic_updates += 1;
                        observer.on_discriminator_update(disc);
                        if !c_loss.is_finite() {
                            return Err(self.numerical(epoch, format!("critic loss is {c_loss}")));
                        }
                        c_sum += c_loss;
                    }
                    disc_sum += c_sum / cfg.critic_ratio as f64;

                    if cfg.adv_weight != 0.0 {
                        let g_img = adversarial_image_grad(disc, &xhat, cfg.adv_weight, critic_generator_loss)?;
                        grad += &g_img;
                    }
                }
            }

            self.state.cae.zero_grad();
            self.state.cae.backward(&cache, &grad);
            self.state.cae_opt.step(&mut self.state.cae, lr);
            observer.on_cae_update(&self.state.cae);
            recon_sum += recon;
            batches += 1;
        }
        if saturated > 0 {
            log::warn!(
                "fold {} epoch {epoch}: discriminator saturated on {saturated}/{batches} batches",
                self.state.fold
            );
        }
        let record = EpochRecord {
            epoch,
            loss: recon_sum / batches as f64,
            disc_loss: cfg.regime.is_adversarial().then(|| disc_sum / batches as f64),
        };
        log::debug!("fold {} epoch {epoch}: {record:?}", self.state.fold);
        self.state.history.push(record.clone());
        Ok(record)
    }

    /// Runs the remaining epochs.
    pub fn run(&mut self, observer: &mut dyn TrainObserver) -> Result<()> {
        while !self.is_finished() {
            self.run_epoch(observer)?;
        }
        Ok(())
    }

    pub fn into_model(self) -> TrainedModel {
        let s = self.state;
        TrainedModel {
            cae: s.cae,
            discriminator: s.disc,
            model_config: s.model_config,
            train_config: s.train_config,
            fold: s.fold,
            history: s.history,
        }
    }
}

/// Gradient of `weight · generator_loss(D(x̂))` with respect to the
/// reconstructed images. The discriminator's own gradients are discarded.
fn adversarial_image_grad(
    disc: &mut Discriminator,
    xhat: &Array4<f64>,
    weight: f64,
    loss: fn(&Array1<f64>) -> (f64, Array1<f64>),
) -> Result<Array4<f64>> {
    disc.zero_grad();
    let (logits, cache) = disc.forward_train(xhat)?;
    let (_, g) = loss(&logits);
    let g_img = disc.backward(&cache, &(g * weight));
    disc.zero_grad();
    Ok(g_img)
}

fn train_regime(
    samples: &[ImageSample],
    model: &ModelConfig,
    train: &TrainConfig,
    regime: Regime,
) -> Result<TrainedModel> {
    if train.regime != regime {
        return Err(Error::Config(format!(
            "expected a {regime} training config, got {}",
            train.regime
        )));
    }
    let refs: Vec<&ImageSample> = samples.iter().collect();
    let mut trainer = Trainer::new(&refs, model, train, 0)?;
    trainer.run(&mut NoObserver)?;
    Ok(trainer.into_model())
}

/// Plain autoencoder training on MSE.
pub fn train_cae(samples: &[ImageSample], model: &ModelConfig, train: &TrainConfig) -> Result<TrainedModel> {
    train_regime(samples, model, train, Regime::Cae)
}

/// Autoencoder plus sigmoid discriminator: one discriminator update and one
/// autoencoder update (MSE + weighted non-saturating generator term) per
/// batch.
pub fn train_vanilla_adversarial(
    samples: &[ImageSample],
    model: &ModelConfig,
    train: &TrainConfig,
) -> Result<TrainedModel> {
    train_regime(samples, model, train, Regime::VanillaAdv)
}

/// Autoencoder plus clipped critic: `critic_ratio` critic updates, then one
/// autoencoder update on MSE minus the weighted mean critic score.
pub fn train_wasserstein_adversarial(
    samples: &[ImageSample],
    model: &ModelConfig,
    train: &TrainConfig,
) -> Result<TrainedModel> {
    train_regime(samples, model, train, Regime::WassersteinAdv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ClassLabel;
    use crate::nets::Param;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};

    fn samples(n: usize, side: usize, seed: u64) -> Vec<ImageSample> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let a = rng.random_range(0.2..0.8);
                ImageSample {
                    sample_id: format!("s{i}"),
                    pixels: Array2::from_shape_fn((side, side), |(y, x)| {
                        (a * (1.0 + ((x + y) as f64 / side as f64).sin()) / 2.0) as f32
                    }),
                    label: ClassLabel::Healthy,
                }
            })
            .collect()
    }

    #[test]
    fn clipping_examples() {
        let mut p = Param::filled(&[3], 0.0);
        p.value = vec![0.5, -0.02, 0.005];
        clip_values(&mut p.value, 0.01);
        assert_eq!(p.value, vec![0.01, -0.01, 0.005]);
    }

    #[test]
    fn anomalies_are_refused_for_training() {
        let mut data = samples(4, 16, 0);
        data[2].label = ClassLabel::Covid;
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 2,
            ..TrainConfig::full(Regime::Cae)
        };
        let err = train_cae(&data, &ModelConfig::tiny(), &cfg).unwrap_err();
        assert!(matches!(err, Error::Data(ref m) if m.contains("s2")));
    }

    #[test]
    fn empty_or_undersized_sets_are_refused() {
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 8,
            ..TrainConfig::full(Regime::Cae)
        };
        assert!(train_cae(&[], &ModelConfig::tiny(), &cfg).is_err());
        assert!(train_cae(&samples(4, 16, 0), &ModelConfig::tiny(), &cfg).is_err());
    }

    #[test]
    fn regime_must_match_entry_point() {
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 2,
            ..TrainConfig::full(Regime::Cae)
        };
        assert!(train_vanilla_adversarial(&samples(4, 16, 0), &ModelConfig::tiny(), &cfg).is_err());
    }

    #[test]
    fn history_has_one_finite_entry_per_epoch() {
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 3,
            ..TrainConfig::full(Regime::VanillaAdv)
        };
        let m = train_vanilla_adversarial(&samples(7, 16, 1), &ModelConfig::tiny(), &cfg).unwrap();
        assert_eq!(m.history.len(), 3);
        assert!(m.discriminator.is_some());
        for (i, r) in m.history.iter().enumerate() {
            assert_eq!(r.epoch, i);
            assert!(r.loss.is_finite() && r.disc_loss.unwrap().is_finite());
        }
    }
}
