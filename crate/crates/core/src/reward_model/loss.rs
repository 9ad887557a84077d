use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use super::net::{clamp_logvar, RewardNet, StepTrace, LOGVAR_MAX, LOGVAR_MIN};
use super::{bt_from_sums, bt_probability, ce_loss, entropy_reg_loss, gaussian_entropy, reparameterize, RrlConfig};
use crate::error::{Error, Result};
use crate::trajectory::TrajectorySegment;

/// One labelled comparison. `label` is 0 when `first` is preferred.
#[derive(Debug, Clone, Copy)]
pub struct PreferencePair<'a> {
    pub first: &'a TrajectorySegment,
    pub second: &'a TrajectorySegment,
    pub label: f64,
}

/// Standard-normal draws for one pair: `K` rows of length `H` per segment.
#[derive(Debug, Clone, PartialEq)]
pub struct PairNoise {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

/// Noise for a whole batch. Holding it fixed makes the loss a deterministic
/// function of the parameters, which is what the gradient differentiates.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub pairs: Vec<PairNoise>,
}

impl NoiseDraw {
    /// Independent draws across samples, timesteps, segments and pairs.
    pub fn sample<R: Rng + ?Sized>(batch: &[PreferencePair<'_>], k: usize, rng: &mut R) -> Self {
        let mut draw = |h: usize| -> Vec<Vec<f64>> {
            (0..k)
                .map(|_| (0..h).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                .collect()
        };
        let pairs = batch
            .iter()
            .map(|p| PairNoise {
                first: draw(p.first.len()),
                second: draw(p.second.len()),
            })
            .collect();
        NoiseDraw { pairs }
    }

    pub fn zeros(batch: &[PreferencePair<'_>], k: usize) -> Self {
        let z = |h: usize| alloc::vec![alloc::vec![0.0; h]; k];
        NoiseDraw {
            pairs: batch
                .iter()
                .map(|p| PairNoise {
                    first: z(p.first.len()),
                    second: z(p.second.len()),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    /// Batch mean of the robust cross-entropy.
    pub ce: f64,
    /// Entropy hinge, before the `α` weight.
    pub reg: f64,
    pub mean_entropy: f64,
}

struct SegmentEval {
    traces: Vec<StepTrace>,
    means: Vec<f64>,
    variances: Vec<f64>,
}

fn eval_segment(net: &RewardNet, seg: &TrajectorySegment) -> Result<SegmentEval> {
    net.check_input(seg)?;
    let traces: Vec<StepTrace> = (0..seg.len()).map(|t| net.step_traced(&seg.step_input(t))).collect();
    let means = traces.iter().map(|s| s.mean_out).collect();
    let variances = traces.iter().map(|s| libm::exp(clamp_logvar(s.logvar_raw))).collect();
    Ok(SegmentEval {
        traces,
        means,
        variances,
    })
}

fn check_noise(noise: &PairNoise, pair: &PreferencePair<'_>, k: usize) -> Result<()> {
    let ok = |rows: &Vec<Vec<f64>>, h: usize| rows.len() == k && rows.iter().all(|r| r.len() == h);
    if !ok(&noise.first, pair.first.len()) || !ok(&noise.second, pair.second.len()) {
        return Err(Error::dim(format!("noise draw must be {k} x H for both segments")));
    }
    Ok(())
}

/// Robust cross-entropy of one pair and its partial derivatives with respect
/// to each step's mean and *clamped* log-variance.
struct PairTerms {
    loss: f64,
    d_mean: [Vec<f64>; 2],
    d_logvar: [Vec<f64>; 2],
}

fn pair_terms(evals: [&SegmentEval; 2], label: f64, noise: &PairNoise, cfg: &RrlConfig) -> PairTerms {
    let z = label;
    let p_mean = bt_probability(&evals[0].means, &evals[1].means);
    let mut loss = ce_loss(p_mean, z);
    let g_mean = p_mean - (1.0 - z);

    let k = cfg.k_samples;
    let scale = cfg.lambda / k as f64;
    let mut g_samples = Vec::with_capacity(k);
    let mut sampled = 0.0;
    for s in 0..k {
        let b0: f64 = reparameterize(&evals[0].means, &evals[0].variances, &noise.first[s]).iter().sum();
        let b1: f64 = reparameterize(&evals[1].means, &evals[1].variances, &noise.second[s]).iter().sum();
        let p = bt_from_sums(b0, b1);
        sampled += ce_loss(p, z);
        g_samples.push(p - (1.0 - z));
    }
    loss += scale * sampled;

    let g_sum: f64 = g_samples.iter().sum();
    let mut d_mean = [Vec::new(), Vec::new()];
    let mut d_logvar = [Vec::new(), Vec::new()];
    for side in 0..2 {
        let sign = if side == 0 { 1.0 } else { -1.0 };
        let eps = if side == 0 { &noise.first } else { &noise.second };
        let h = evals[side].means.len();
        d_mean[side] = alloc::vec![sign * (g_mean + scale * g_sum); h];
        d_logvar[side] = (0..h)
            .map(|t| {
                // dβ/d(logvar) = ε σ / 2
                let half_sd = 0.5 * libm::sqrt(evals[side].variances[t]);
                sign * scale * (0..k).map(|s| g_samples[s] * eps[s][t]).sum::<f64>() * half_sd
            })
            .collect();
    }
    PairTerms {
        loss,
        d_mean,
        d_logvar,
    }
}

fn evaluate(
    net: &RewardNet,
    batch: &[PreferencePair<'_>],
    cfg: &RrlConfig,
    noise: &NoiseDraw,
    mut grads: Option<&mut RewardNet>,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::arg("loss needs a nonempty batch"));
    }
    if noise.pairs.len() != batch.len() {
        return Err(Error::dim(format!("{} noise draws for {} pairs", noise.pairs.len(), batch.len())));
    }
    let mut evals = Vec::with_capacity(batch.len());
    for (pair, n) in batch.iter().zip(&noise.pairs) {
        check_noise(n, pair, cfg.k_samples)?;
        evals.push([eval_segment(net, pair.first)?, eval_segment(net, pair.second)?]);
    }
    let all_vars: Vec<f64> = evals
        .iter()
        .flat_map(|e| e.iter().flat_map(|s| s.variances.iter().copied()))
        .collect();
    let reg = entropy_reg_loss(&all_vars, cfg.eta);
    let mean_entropy = all_vars.iter().map(|&v| gaussian_entropy(v)).sum::<f64>() / all_vars.len() as f64;

    let inv_b = 1.0 / batch.len() as f64;
    let reg_step = -0.5 * cfg.alpha / all_vars.len() as f64;
    let mut ce = 0.0;
    for ((pair, n), ev) in batch.iter().zip(&noise.pairs).zip(&evals) {
        let terms = pair_terms([&ev[0], &ev[1]], pair.label, n, cfg);
        ce += terms.loss;
        let Some(g) = grads.as_deref_mut() else { continue };
        for side in 0..2 {
            let seg = &ev[side];
            for (t, trace) in seg.traces.iter().enumerate() {
                let mut d_lv = terms.d_logvar[side][t] * inv_b;
                if cfg.eta - gaussian_entropy(seg.variances[t]) > 0.0 {
                    d_lv += reg_step;
                }
                // the clamp is flat outside its range
                if !(trace.logvar_raw > LOGVAR_MIN && trace.logvar_raw < LOGVAR_MAX) {
                    d_lv = 0.0;
                }
                net.step_backward(trace, terms.d_mean[side][t] * inv_b, d_lv, g);
            }
        }
    }
    ce *= inv_b;
    Ok(LossBreakdown {
        total: ce + cfg.alpha * reg,
        ce,
        reg,
        mean_entropy,
    })
}

/// `CE(P(Σr̂⁰, Σr̂¹), z) + λ/K Σ_k CE(P(Σβ⁰_k, Σβ¹_k), z)` for one pair.
pub fn robust_ce_loss(net: &RewardNet, pair: &PreferencePair<'_>, cfg: &RrlConfig, noise: &PairNoise) -> Result<f64> {
    check_noise(noise, pair, cfg.k_samples)?;
    let e0 = eval_segment(net, pair.first)?;
    let e1 = eval_segment(net, pair.second)?;
    Ok(pair_terms([&e0, &e1], pair.label, noise, cfg).loss)
}

/// Batch mean of the robust cross-entropy plus `α` times the entropy hinge.
pub fn total_loss(net: &RewardNet, batch: &[PreferencePair<'_>], cfg: &RrlConfig, noise: &NoiseDraw) -> Result<LossBreakdown> {
    evaluate(net, batch, cfg, noise, None)
}

/// [`total_loss`] together with its exact gradient for the given noise.
pub fn loss_and_grad(
    net: &RewardNet,
    batch: &[PreferencePair<'_>],
    cfg: &RrlConfig,
    noise: &NoiseDraw,
) -> Result<(LossBreakdown, RewardNet)> {
    let mut grads = net.zeros_like();
    let loss = evaluate(net, batch, cfg, noise, Some(&mut grads))?;
    if let Some(bad) = grads.params().iter().position(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!("non-finite gradient at {}", net.param_path(bad))));
    }
    Ok((loss, grads))
}
