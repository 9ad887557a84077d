use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_and_grad, NoiseDraw, PreferencePair};
use super::net::RewardNet;
use super::{bt_from_sums, gaussian_entropy, RrlConfig};
use crate::error::{Error, Result};
use crate::label_transfer::PreferenceDataset;
use crate::trajectory::TrajectorySet;

const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub total_loss: f64,
    pub ce_loss: f64,
    pub reg_loss: f64,
    pub mean_entropy: f64,
    pub train_label_accuracy: f64,
}

struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    betas: (f64, f64),
    weight_decay: f64,
}

impl AdamW {
    fn new(n: usize, cfg: &RrlConfig) -> Self {
        AdamW {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            betas: cfg.betas,
            weight_decay: cfg.weight_decay,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let (b1, b2) = self.betas;
        let c1 = 1.0 - libm::pow(b1, self.t as f64);
        let c2 = 1.0 - libm::pow(b2, self.t as f64);
        for k in 0..params.len() {
            let g = grads[k];
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g;
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g;
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            params[k] *= 1.0 - lr * self.weight_decay;
            params[k] -= lr * m_hat / (libm::sqrt(v_hat) + ADAM_EPS);
        }
    }
}

fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    let frac = step as f64 / total.max(1) as f64;
    0.5 * base * (1.0 + libm::cos(core::f64::consts::PI * frac))
}

fn pairs<'a>(set: &'a TrajectorySet, dataset: &PreferenceDataset, order: &[usize]) -> Vec<PreferencePair<'a>> {
    order
        .iter()
        .map(|&k| {
            let r = dataset.records()[k];
            PreferencePair {
                first: &set.segments()[r.first],
                second: &set.segments()[r.second],
                label: r.label,
            }
        })
        .collect()
}

/// Mini-batch AdamW with cosine learning-rate decay over a fixed number of
/// epochs. The shuffle order and every noise draw come from `cfg.seed`.
pub fn train(
    net: &RewardNet,
    set: &TrajectorySet,
    dataset: &PreferenceDataset,
    cfg: &RrlConfig,
) -> Result<(RewardNet, Vec<EpochLog>)> {
    cfg.validate()?;
    net.validate()?;
    if dataset.is_empty() {
        return Err(Error::arg("cannot train on an empty preference dataset"));
    }
    if dataset.num_segments() != set.len() {
        return Err(Error::dim(format!(
            "preferences cover {} segments, trajectory set has {}",
            dataset.num_segments(),
            set.len()
        )));
    }
    if let Some(seg) = set.segments().first() {
        net.check_input(seg)?;
    }

    let mut net = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = net.params();
    let mut opt = AdamW::new(params.len(), cfg);
    let n = dataset.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = batches_per_epoch * cfg.epochs;
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut ce, mut reg) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = pairs(set, dataset, chunk);
            let noise = NoiseDraw::sample(&batch, cfg.k_samples, &mut rng);
            let (loss, grads) = loss_and_grad(&net, &batch, cfg, &noise).map_err(|e| Error::Training {
                epoch,
                reason: format!("{e}"),
            })?;
            if !loss.total.is_finite() {
                return Err(Error::Training {
                    epoch,
                    reason: "non-finite loss".into(),
                });
            }
            let w = chunk.len() as f64 / n as f64;
            total += w * loss.total;
            ce += w * loss.ce;
            reg += w * loss.reg;
            opt.step(&mut params, &grads.params(), cosine_lr(cfg.learning_rate, step, total_steps));
            net.set_params(&params)?;
            step += 1;
        }
        let (mean_entropy, accuracy) = epoch_diagnostics(&net, set, dataset)?;
        log.push(EpochLog {
            epoch,
            total_loss: total,
            ce_loss: ce,
            reg_loss: reg,
            mean_entropy,
            train_label_accuracy: accuracy,
        });
    }
    Ok((net, log))
}

/// Mean per-step entropy over the set and the fraction of non-tie training
/// labels the mean rewards reproduce.
fn epoch_diagnostics(net: &RewardNet, set: &TrajectorySet, dataset: &PreferenceDataset) -> Result<(f64, f64)> {
    let mut returns = Vec::with_capacity(set.len());
    let mut entropy = 0.0;
    let mut steps = 0usize;
    for seg in set.segments() {
        let out = net.forward(seg)?;
        returns.push(out.means.iter().sum::<f64>());
        entropy += out.variances.iter().map(|&v| gaussian_entropy(v)).sum::<f64>();
        steps += out.variances.len();
    }
    let (mut hit, mut count) = (0usize, 0usize);
    for r in dataset.records() {
        if r.label == 0.5 {
            continue;
        }
        count += 1;
        let p_first = bt_from_sums(returns[r.first], returns[r.second]);
        let predicted = if p_first > 0.5 { 0.0 } else { 1.0 };
        if predicted == r.label {
            hit += 1;
        }
    }
    let acc = if count == 0 { 0.0 } else { hit as f64 / count as f64 };
    Ok((entropy / steps as f64, acc))
}

/// Per-step mean rewards of every segment.
pub fn predict_rewards(net: &RewardNet, set: &TrajectorySet) -> Result<Vec<Vec<f64>>> {
    set.segments().iter().map(|s| net.forward(s).map(|o| o.means)).collect()
}

/// Predicted return (sum of mean rewards) of every segment.
pub fn predict_returns(net: &RewardNet, set: &TrajectorySet) -> Result<Vec<f64>> {
    Ok(predict_rewards(net, set)?.iter().map(|r| r.iter().sum()).collect())
}
