use super::config::{OptimizerKind, ADAM_BETAS, ADAM_EPS, RMSPROP_ALPHA, RMSPROP_EPS};
use crate::nets::{Archive, ParamStore};

/// Adam or RMSProp state for one network. Moment buffers follow the
/// network's canonical parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    step: u64,
    names: Vec<String>,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new<M: ParamStore>(kind: OptimizerKind, module: &M) -> Self {
        let params = module.params();
        let zeros = || params.iter().map(|(_, p)| vec![0.0; p.len()]).collect::<Vec<_>>();
        Optimizer {
            kind,
            step: 0,
            names: params.iter().map(|(n, _)| n.clone()).collect(),
            first: if kind == OptimizerKind::Adam {
                zeros()
            } else {
                Vec::new()
            },
            second: zeros(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients.
    pub fn step<M: ParamStore>(&mut self, module: &mut M, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let mut params = module.params_mut();
        debug_assert_eq!(params.len(), self.second.len());
        match self.kind {
            OptimizerKind::Adam => {
                let (b1, b2) = ADAM_BETAS;
                let bc1 = 1.0 - b1.powi(t);
                let bc2 = 1.0 - b2.powi(t);
                for (i, (_, p)) in params.iter_mut().enumerate() {
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for j in 0..p.value.len() {
                        let g = p.grad[j];
                        m[j] = b1 * m[j] + (1.0 - b1) * g;
                        v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                        let denom = (v[j] / bc2).sqrt() + ADAM_EPS;
                        p.value[j] -= lr * (m[j] / bc1) / denom;
                    }
                }
            }
            OptimizerKind::Rmsprop => {
                for (i, (_, p)) in params.iter_mut().enumerate() {
                    let v = &mut self.second[i];
                    for ((w, &g), v) in p.value.iter_mut().zip(&p.grad).zip(v.iter_mut()) {
                        *v = RMSPROP_ALPHA * *v + (1.0 - RMSPROP_ALPHA) * g * g;
                        *w -= lr * g / (v.sqrt() + RMSPROP_EPS);
                    }
                }
            }
        }
    }

    pub fn save(&self, archive: &mut Archive, prefix: &str) {
        archive.put_meta(&format!("{prefix}.step"), self.step.to_string());
        for (i, name) in self.names.iter().enumerate() {
            if let Some(m) = self.first.get(i) {
                archive.insert(format!("{prefix}.m.{name}"), vec![m.len()], m.clone());
            }
            archive.insert(
                format!("{prefix}.v.{name}"),
                vec![self.second[i].len()],
                self.second[i].clone(),
            );
        }
    }

    pub fn load(&mut self, archive: &Archive, prefix: &str) -> std::result::Result<(), String> {
        self.step = archive
            .meta(&format!("{prefix}.step"))
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("missing {prefix}.step"))?;
        for (i, name) in self.names.iter().enumerate() {
            let fetch = |slot: &str, len: usize| -> std::result::Result<Vec<f64>, String> {
                let key = format!("{prefix}.{slot}.{name}");
                match archive.tensors.get(&key) {
                    Some((_, d)) if d.len() == len => Ok(d.clone()),
                    Some(_) => Err(format!("{key} has the wrong length")),
                    None => Err(format!("missing {key}")),
                }
            };
            if !self.first.is_empty() {
                self.first[i] = fetch("m", self.first[i].len())?;
            }
            self.second[i] = fetch("v", self.second[i].len())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{Cae, ModelConfig};

    #[test]
    fn first_adam_step_moves_by_lr() {
        // With bias correction the first Adam update is lr·sign(g).
        let mut cae = Cae::new(&ModelConfig::tiny(), 0).unwrap();
        let before: Vec<f64> = cae.params()[0].1.value.clone();
        for (_, p) in cae.params_mut() {
            p.grad.iter_mut().for_each(|g| *g = 0.5);
        }
        let mut opt = Optimizer::new(OptimizerKind::Adam, &cae);
        opt.step(&mut cae, 1e-3);
        let after = &cae.params()[0].1.value;
        for (b, a) in before.iter().zip(after) {
            assert!((b - a - 1e-3).abs() < 1e-10);
        }
    }

    #[test]
    fn first_rmsprop_step_matches_formula() {
        let mut cae = Cae::new(&ModelConfig::tiny(), 0).unwrap();
        let before = cae.params()[0].1.value[0];
        for (_, p) in cae.params_mut() {
            p.grad.iter_mut().for_each(|g| *g = 2.0);
        }
        let mut opt = Optimizer::new(OptimizerKind::Rmsprop, &cae);
        opt.step(&mut cae, 1.5e-4);
        let v: f64 = (1.0 - RMSPROP_ALPHA) * 4.0;
        let expected = before - 1.5e-4 * 2.0 / (v.sqrt() + RMSPROP_EPS);
        assert!((cae.params()[0].1.value[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn state_round_trips_through_archive() {
        let mut cae = Cae::new(&ModelConfig::tiny(), 0).unwrap();
        for (_, p) in cae.params_mut() {
            p.grad.iter_mut().enumerate().for_each(|(i, g)| *g = i as f64 * 1e-3);
        }
        let mut opt = Optimizer::new(OptimizerKind::Adam, &cae);
        opt.step(&mut cae, 1e-3);
        opt.step(&mut cae, 1e-3);
        let mut a = Archive::new();
        opt.save(&mut a, "optim.cae");
        let mut fresh = Optimizer::new(OptimizerKind::Adam, &cae);
        fresh.load(&a, "optim.cae").unwrap();
        assert_eq!(fresh, opt);
    }
}
