//! Synthetic source/target task pairs with known rewards, plus exhaustive
//! oracles used to check the solver and the label transfer.
//!
//! A segment is a point mass moving toward a goal. Its quality grades from a
//! straight approach to a random walk, so ground-truth returns are spread out
//! and all pairwise distances are distinct with probability one.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label_transfer::{Pair, PreferenceDataset, PreferenceRecord, TransferOutcome, ABSTAIN_THRESHOLD};
use crate::matrix::Matrix;
use crate::ot_align::TransportPlan;
use crate::trajectory::{pairwise_distance, DistanceMatrix, Metric, TrajectorySegment, TrajectorySet};

const DISTINCT_TOL: f64 = 1e-9;
const TIE_TOL: f64 = 1e-12;
const MAX_RESEEDS: u64 = 64;
const STEP: f64 = 0.3;
const NOISE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// Map from the source task's geometry to the target task's.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    Identity,
    /// Rotation by `angle` radians in the plane of the first two coordinates
    /// of states and actions.
    Rotation { angle: f64 },
    UniformScale { c: f64 },
    /// Appends `extra` zero coordinates to every state.
    DimPad { extra: usize },
}

impl Default for Transform {
    fn default() -> Self {
        Transform::Identity
    }
}

impl Transform {
    fn validate(&self, spec: &TaskSpec) -> Result<()> {
        match *self {
            Transform::Rotation { angle } if !angle.is_finite() => Err(Error::arg("rotation angle must be finite")),
            Transform::Rotation { .. } if spec.state_dim < 2 => {
                Err(Error::arg("rotation needs state_dim >= 2"))
            }
            Transform::UniformScale { c } if !(c > 0.0 && c.is_finite()) => {
                Err(Error::arg(format!("scale must be positive and finite, got {c}")))
            }
            _ => Ok(()),
        }
    }

    fn rotate(v: &mut [f64], angle: f64) {
        if v.len() < 2 {
            return;
        }
        let (s, c) = (libm::sin(angle), libm::cos(angle));
        let (x, y) = (v[0], v[1]);
        v[0] = c * x - s * y;
        v[1] = s * x + c * y;
    }

    /// Image of a state-space point.
    pub fn apply_point(&self, p: &[f64]) -> Vec<f64> {
        let mut v = p.to_vec();
        match *self {
            Transform::Identity => {}
            Transform::Rotation { angle } => Self::rotate(&mut v, angle),
            Transform::UniformScale { c } => v.iter_mut().for_each(|x| *x *= c),
            Transform::DimPad { extra } => v.extend(core::iter::repeat(0.0).take(extra)),
        }
        v
    }

    fn apply_action(&self, a: &[f64]) -> Vec<f64> {
        let mut v = a.to_vec();
        match *self {
            Transform::Rotation { angle } => Self::rotate(&mut v, angle),
            Transform::UniformScale { c } => v.iter_mut().for_each(|x| *x *= c),
            Transform::Identity | Transform::DimPad { .. } => {}
        }
        v
    }

    pub fn apply_segment(&self, seg: &TrajectorySegment) -> Result<TrajectorySegment> {
        let states: Vec<Vec<f64>> = (0..seg.len()).map(|t| self.apply_point(seg.state(t))).collect();
        let actions: Vec<Vec<f64>> = (0..seg.len()).map(|t| self.apply_action(seg.action(t))).collect();
        TrajectorySegment::from_rows(&states, &actions)
    }

    pub fn apply_set(&self, set: &TrajectorySet) -> Result<TrajectorySet> {
        let segs = set.segments().iter().map(|s| self.apply_segment(s)).collect::<Result<Vec<_>>>()?;
        TrajectorySet::new(segs, Some(set.weights().to_vec()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    pub goal: Vec<f64>,
    pub transform: Transform,
    /// Standard deviation of the target perturbation, as a fraction of the
    /// source data diameter.
    pub noise_scale: f64,
    pub seed: u64,
    /// Seed of the pre-transform target sample. Defaults to `seed`.
    pub target_seed: Option<u64>,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            state_dim: 2,
            action_dim: 2,
            horizon: 5,
            goal: vec![1.0, 1.0],
            transform: Transform::Identity,
            noise_scale: 0.0,
            seed: 0,
            target_seed: None,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.action_dim == 0 {
            return Err(Error::arg("state_dim and action_dim must be positive"));
        }
        if self.horizon < 2 {
            return Err(Error::arg(format!("horizon must be at least 2, got {}", self.horizon)));
        }
        if self.goal.len() != self.state_dim || self.goal.iter().any(|g| !g.is_finite()) {
            return Err(Error::arg(format!("goal must be a finite point of dimension {}", self.state_dim)));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::arg("noise_scale must be nonnegative"));
        }
        self.transform.validate(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    NegativeDistanceToGoal,
}

/// `r(s, a) = -‖s - goal‖`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthReward {
    pub kind: RewardKind,
    pub goal: Vec<f64>,
}

impl GroundTruthReward {
    pub fn new(goal: Vec<f64>) -> Self {
        GroundTruthReward {
            kind: RewardKind::NegativeDistanceToGoal,
            goal,
        }
    }

    pub fn reward(&self, state: &[f64], _action: &[f64]) -> f64 {
        let sq: f64 = state.iter().zip(&self.goal).map(|(s, g)| (s - g) * (s - g)).sum();
        -libm::sqrt(sq)
    }

    pub fn segment_return(&self, seg: &TrajectorySegment) -> f64 {
        (0..seg.len()).map(|t| self.reward(seg.state(t), seg.action(t))).sum()
    }

    pub fn returns(&self, set: &TrajectorySet) -> Vec<f64> {
        set.segments().iter().map(|s| self.segment_return(s)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskPair {
    pub source: TrajectorySet,
    pub source_reward: GroundTruthReward,
    pub target: TrajectorySet,
    pub target_reward: GroundTruthReward,
    /// The target sample after perturbation but before the transform.
    pub target_base: TrajectorySet,
    /// Reseeds needed to get distinct pairwise distances.
    pub reseeds: u64,
}

fn segment(spec: &TaskSpec, quality: f64, rng: &mut ChaCha8Rng) -> Result<TrajectorySegment> {
    let d = spec.state_dim;
    let mut s: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut states = Vec::with_capacity(spec.horizon);
    let mut actions = Vec::with_capacity(spec.horizon);
    for _ in 0..spec.horizon {
        let step: Vec<f64> = (0..d)
            .map(|k| {
                let wander: f64 = rng.sample(StandardNormal);
                STEP * (quality * (spec.goal[k] - s[k]) + (1.0 - quality) * wander)
            })
            .collect();
        let action: Vec<f64> = (0..spec.action_dim)
            .map(|k| if k < d { step[k] } else { rng.sample(StandardNormal) })
            .collect();
        states.push(s.clone());
        actions.push(action);
        s.iter_mut().zip(&step).for_each(|(x, dx)| *x += dx);
    }
    TrajectorySegment::from_rows(&states, &actions)
}

fn base_set(spec: &TaskSpec, count: usize, seed: u64) -> Result<TrajectorySet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let segs = (0..count)
        .map(|i| {
            let jitter: f64 = rng.random();
            let quality = ((i as f64 + jitter) / count as f64).min(1.0);
            segment(spec, quality, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    TrajectorySet::new(segs, None)
}

fn distinct_distances(d: &DistanceMatrix) -> bool {
    let n = d.len();
    let mut vals: Vec<f64> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| d.get(i, j)).collect();
    vals.sort_by(f64::total_cmp);
    vals.windows(2).all(|w| w[1] - w[0] > DISTINCT_TOL)
}

fn diameter(d: &DistanceMatrix) -> f64 {
    d.values().as_slice().iter().copied().fold(0.0, f64::max)
}

fn perturb(set: &TrajectorySet, sd: f64, seed: u64) -> Result<TrajectorySet> {
    if sd == 0.0 {
        return Ok(set.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ NOISE_STREAM);
    let mut noisy = |m: &Matrix| {
        let mut out = m.clone();
        out.as_mut_slice()
            .iter_mut()
            .for_each(|x| *x += sd * rng.sample::<f64, _>(StandardNormal));
        out
    };
    let segs = set
        .segments()
        .iter()
        .map(|s| {
            let states = noisy(s.states());
            let actions = noisy(s.actions());
            TrajectorySegment::new(states, actions)
        })
        .collect::<Result<Vec<_>>>()?;
    TrajectorySet::new(segs, Some(set.weights().to_vec()))
}

/// Source and target sets with `m` and `n` segments. The target is the
/// transform applied to a sample of the same construction (seeded by
/// `target_seed`, else `seed`). With `noise_scale > 0` every target
/// coordinate gets Gaussian noise of standard deviation
/// `noise_scale · diameter / sqrt(H (d_s + d_a))`, so the expected size of
/// each segment's perturbation is about `noise_scale` of the source diameter.
pub fn generate_task_pair(spec: &TaskSpec, m: usize, n: usize) -> Result<TaskPair> {
    spec.validate()?;
    if m < 2 || n < 2 {
        return Err(Error::arg(format!("need at least two segments per side, got m={m}, n={n}")));
    }
    let target_seed = spec.target_seed.unwrap_or(spec.seed);
    for attempt in 0..MAX_RESEEDS {
        let offset = attempt.wrapping_mul(0x1000_0000_01b3);
        let source = base_set(spec, m, spec.seed.wrapping_add(offset))?;
        let base = base_set(spec, n, target_seed.wrapping_add(offset))?;
        let c_s = pairwise_distance(&source, Metric::Euclidean)?;
        let dim = (spec.horizon * (spec.state_dim + spec.action_dim)) as f64;
        let sd = spec.noise_scale * diameter(&c_s) / libm::sqrt(dim);
        let target_base = perturb(&base, sd, target_seed.wrapping_add(offset))?;
        let c_t = pairwise_distance(&target_base, Metric::Euclidean)?;
        if !distinct_distances(&c_s) || !distinct_distances(&c_t) {
            continue;
        }
        return Ok(TaskPair {
            target: spec.transform.apply_set(&target_base)?,
            target_reward: GroundTruthReward::new(spec.transform.apply_point(&spec.goal)),
            source,
            source_reward: GroundTruthReward::new(spec.goal.clone()),
            target_base,
            reseeds: attempt,
        });
    }
    Err(Error::Degenerate(format!(
        "no sample with distinct pairwise distances after {MAX_RESEEDS} reseeds"
    )))
}

/// Labels every pair `a < b` from ground-truth returns.
pub fn scripted_labels(set: &TrajectorySet, reward: &GroundTruthReward) -> Result<PreferenceDataset> {
    labels_from_returns(&reward.returns(set))
}

/// `z = 0` if the first return is larger, `1` if smaller, `0.5` within `1e-12`.
pub fn labels_from_returns(returns: &[f64]) -> Result<PreferenceDataset> {
    let n = returns.len();
    let mut records = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for a in 0..n {
        for b in a + 1..n {
            let diff = returns[a] - returns[b];
            let z = if libm::fabs(diff) <= TIE_TOL {
                0.5
            } else if diff > 0.0 {
                0.0
            } else {
                1.0
            };
            records.push(PreferenceRecord::new(a, b, z));
        }
    }
    PreferenceDataset::new(records, n)
}

/// Complements `round(fraction · len)` binary labels picked by a seeded
/// shuffle. Tie labels are passed over in favour of the next binary record.
/// The pick depends only on the seed and on which records are binary, so
/// applying it twice with the same seed restores the input.
pub fn flip_labels(dataset: &PreferenceDataset, fraction: f64, seed: u64) -> Result<PreferenceDataset> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::arg(format!("flip fraction must lie in [0, 1], got {fraction}")));
    }
    let mut records = dataset.records().to_vec();
    let target = libm::round(fraction * records.len() as f64) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = rand::seq::index::sample(&mut rng, records.len(), records.len());
    let mut flipped = 0;
    for k in order.iter() {
        if flipped == target {
            break;
        }
        if records[k].label == 0.5 {
            continue;
        }
        records[k].label = 1.0 - records[k].label;
        flipped += 1;
    }
    PreferenceDataset::new(records, dataset.num_segments())
}

/// Result of [`brute_force_align`]: target `j` is matched to source
/// `permutation[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignOracle {
    pub permutation: Vec<usize>,
    pub objective: f64,
}

pub const BRUTE_FORCE_MAX: usize = 8;

fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else {
        return false;
    };
    let j = (i..p.len()).rev().find(|&j| p[j] > p[i - 1]).unwrap_or(i);
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// GW objective of the permutation coupling with mass `1/M` on each matched
/// pair: `M⁻² Σ_{j,j'} (C_s[π j, π j'] - C_t[j, j'])²`.
pub fn permutation_objective(c_s: &DistanceMatrix, c_t: &DistanceMatrix, perm: &[usize]) -> f64 {
    let m = perm.len();
    let mut total = 0.0;
    for j in 0..m {
        for j2 in 0..m {
            let d = c_s.get(perm[j], perm[j2]) - c_t.get(j, j2);
            total += d * d;
        }
    }
    total / (m * m) as f64
}

/// Minimizes the GW objective over all `M!` permutation couplings. Ties go to
/// the lexicographically smallest permutation.
pub fn brute_force_align(c_s: &DistanceMatrix, c_t: &DistanceMatrix) -> Result<AlignOracle> {
    let m = c_s.len();
    if m != c_t.len() {
        return Err(Error::arg(format!("brute force needs M = N, got {m} and {}", c_t.len())));
    }
    if m == 0 || m > BRUTE_FORCE_MAX {
        return Err(Error::arg(format!("brute force supports 1..={BRUTE_FORCE_MAX} points, got {m}")));
    }
    let mut perm: Vec<usize> = (0..m).collect();
    let mut best = AlignOracle {
        objective: permutation_objective(c_s, c_t, &perm),
        permutation: perm.clone(),
    };
    while next_permutation(&mut perm) {
        let obj = permutation_objective(c_s, c_t, &perm);
        if obj < best.objective {
            best = AlignOracle {
                objective: obj,
                permutation: perm.clone(),
            };
        }
    }
    Ok(best)
}

/// Raw transferred labels for every target pair `j < j'`, summed directly
/// over plan entries without building pair-matching matrices.
pub fn brute_force_transfer(plan: &TransportPlan, source: &PreferenceDataset) -> Result<Vec<(Pair, TransferOutcome)>> {
    let (m, n) = plan.shape();
    if source.num_segments() != m {
        return Err(Error::dim(format!(
            "plan has {m} rows but the source dataset covers {} segments",
            source.num_segments()
        )));
    }
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for j in 0..n {
        for j2 in j + 1..n {
            let mut peak = 0.0f64;
            let mut total = 0.0;
            let mut missing = None;
            for i in 0..m {
                for i2 in 0..m {
                    let w = plan.get(i, j) * plan.get(i2, j2);
                    peak = peak.max(w);
                    if i == i2 {
                        continue;
                    }
                    match source.label(i, i2) {
                        Some(z) => total += w * z,
                        None if w >= ABSTAIN_THRESHOLD && missing.is_none() => missing = Some((i, i2, w)),
                        None => {}
                    }
                }
            }
            let outcome = if peak < ABSTAIN_THRESHOLD {
                TransferOutcome::Abstain
            } else if let Some((first, second, mass)) = missing {
                return Err(Error::Coverage { first, second, mass });
            } else {
                TransferOutcome::Label(total)
            };
            out.push(((j, j2), outcome));
        }
    }
    Ok(out)
}
