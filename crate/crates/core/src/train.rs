//! Minibatch Adam training over clips.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{shuffled_indices, ImageClip};
use crate::error::{Error, Result};
use crate::loss::{l1_with, l2_with, LossKind};
use crate::network::{loss_and_grad, Network};
use crate::optim::{AdamConfig, AdamState};
use crate::repr::stack_images;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    /// Clips per optimiser step; gradients are averaged over the batch.
    pub batch_size: usize,
    pub loss: LossKind,
    pub adam: AdamConfig,
    /// Seeds the clip order.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 1,
            loss: LossKind::L1,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch_size must be positive".into()));
        }
        let a = &self.adam;
        if !(a.lr >= 0.0 && a.lr.is_finite()) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.epsilon <= 0.0 {
            return Err(Error::Invalid(format!("invalid Adam settings {a:?}")));
        }
        Ok(())
    }
}

/// Batch means recorded at one step, before the update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    /// 1-based.
    pub step: usize,
    pub objective: f64,
    pub l1: f64,
    pub l2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Stateful trainer: Adam moments and a reshuffled pass over the clips.
pub struct Trainer {
    config: TrainConfig,
    adam: AdamState,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    step: usize,
}

impl Trainer {
    pub fn new(net: &dyn Network, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = net.named_params();
        Ok(Self {
            config,
            adam: AdamState::new(config.adam, params.iter().map(|(_, t)| *t)),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            order: Vec::new(),
            cursor: 0,
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    fn next_clip(&mut self, n: usize) -> usize {
        if self.cursor >= self.order.len() {
            self.order = shuffled_indices(n, &mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    pub fn step(&mut self, net: &mut dyn Network, clips: &[ImageClip]) -> Result<StepLog> {
        if clips.is_empty() {
            return Err(Error::Invalid("no training clips".into()));
        }
        let b = self.config.batch_size;
        let mut grads: Option<Vec<Tensor>> = None;
        let (mut obj, mut l1, mut l2) = (0.0, 0.0, 0.0);
        for _ in 0..b {
            let clip = &clips[self.next_clip(clips.len())];
            let r = loss_and_grad(&*net, &clip.input, &clip.target, self.config.loss)?;
            let target = stack_images(&clip.target)?;
            let frames = clip.target.len();
            obj += r.loss / b as f64;
            l1 += l1_with(&r.prediction, &target, frames)? / b as f64;
            l2 += l2_with(&r.prediction, &target, frames)? / b as f64;
            match &mut grads {
                None => grads = Some(r.grads),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&r.grads) {
                        a.add_assign(g);
                    }
                }
            }
        }
        let mut grads = grads.expect("batch is non-empty");
        if b > 1 {
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|v| *v /= b as f64);
            }
        }
        if !obj.is_finite() {
            return Err(Error::Invalid(format!("objective diverged at step {}", self.step + 1)));
        }
        let mut params = net.params_mut();
        self.adam.step(&mut params, &grads)?;
        self.step += 1;
        Ok(StepLog {
            step: self.step,
            objective: obj,
            l1,
            l2,
        })
    }
}

/// Runs up to `config.steps` steps; `on_step` sees each log and the updated
/// network and may stop early.
pub fn train(
    net: &mut dyn Network,
    clips: &[ImageClip],
    config: TrainConfig,
    mut on_step: impl FnMut(&StepLog, &dyn Network) -> Result<Control>,
) -> Result<Vec<StepLog>> {
    let mut trainer = Trainer::new(&*net, config)?;
    let mut logs = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let log = trainer.step(net, clips)?;
        logs.push(log);
        if on_step(&log, &*net)? == Control::Stop {
            break;
        }
    }
    Ok(logs)
}

/// Mean objective over clips, in clip order.
pub fn mean_loss(net: &dyn Network, clips: &[ImageClip], loss: LossKind) -> Result<f64> {
    if clips.is_empty() {
        return Err(Error::Invalid("no clips".into()));
    }
    let mut total = 0.0;
    for c in clips {
        total += crate::network::clip_loss(net, &c.input, &c.target, loss)?;
    }
    Ok(total / clips.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Clip;
    use crate::repr::PseudoImage;
    use crate::ste::{SteConfig, SteModel};

    fn toy_clips() -> Vec<ImageClip> {
        (0..3)
            .map(|i| {
                let v = 0.2 * i as f64;
                Clip {
                    sequence: i,
                    start: 0,
                    input: vec![PseudoImage::new(vec![[v, -v, 0.5]; 2]); 2],
                    target: vec![PseudoImage::new(vec![[0.3, v, -0.1]; 2])],
                }
            })
            .collect()
    }

    fn toy_net() -> SteModel {
        SteModel::new(
            SteConfig {
                input_len: 2,
                output_len: 1,
                joints: 2,
                hidden: vec![6],
            },
            1,
        )
        .unwrap()
    }

    #[test]
    fn loss_falls_and_run_is_deterministic() {
        let cfg = TrainConfig {
            steps: 300,
            batch_size: 2,
            adam: AdamConfig {
                lr: 1e-2,
                ..Default::default()
            },
            ..Default::default()
        };
        let run = || {
            let mut net = toy_net();
            let logs = train(&mut net, &toy_clips(), cfg, |_, _| Ok(Control::Continue)).unwrap();
            (net, logs)
        };
        let (net_a, logs_a) = run();
        let (net_b, logs_b) = run();
        assert_eq!(logs_a, logs_b);
        assert_eq!(net_a, net_b);
        let before = mean_loss(&toy_net(), &toy_clips(), LossKind::L1).unwrap();
        let after = mean_loss(&net_a, &toy_clips(), LossKind::L1).unwrap();
        assert!(after < 0.2 * before, "{before} -> {after}");
    }

    #[test]
    fn logs_both_measures() {
        let mut net = toy_net();
        let cfg = TrainConfig {
            steps: 1,
            loss: LossKind::L2,
            ..Default::default()
        };
        let logs = train(&mut net, &toy_clips(), cfg, |_, _| Ok(Control::Continue)).unwrap();
        assert_eq!(logs[0].objective, logs[0].l2);
        assert!(logs[0].l1 > 0.0);
    }

    #[test]
    fn callback_can_stop() {
        let mut net = toy_net();
        let logs = train(&mut net, &toy_clips(), TrainConfig::default(), |l, _| {
            Ok(if l.step == 3 { Control::Stop } else { Control::Continue })
        })
        .unwrap();
        assert_eq!(logs.len(), 3);
    }

    #[test]
    fn every_clip_visited_once_per_pass() {
        let net = toy_net();
        let mut t = Trainer::new(&net, TrainConfig::default()).unwrap();
        let mut seen: Vec<usize> = (0..5).map(|_| t.next_clip(5)).collect();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn invalid_config_rejected() {
        let net = toy_net();
        assert!(Trainer::new(&net, TrainConfig { batch_size: 0, ..Default::default() }).is_err());
        let mut bad = TrainConfig::default();
        bad.adam.beta1 = 1.0;
        assert!(Trainer::new(&net, bad).is_err());
    }
}
