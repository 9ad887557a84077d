//! Trajectory segments, weighted segment sets, intra-set distance matrices and
//! the K-means grouping used for balanced sampling.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

const WEIGHT_SUM_TOL: f64 = 1e-12;
const DISTANCE_TOL: f64 = 1e-10;

/// One length-`H` sequence of state/action pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySegment {
    states: Matrix,
    actions: Matrix,
}

impl TrajectorySegment {
    /// `states` is `H x d_s`, `actions` is `H x d_a`. `d_a` may be zero.
    pub fn new(states: Matrix, actions: Matrix) -> Result<Self> {
        if states.rows() == 0 {
            return Err(Error::arg("segment length must be at least 1"));
        }
        if states.rows() != actions.rows() {
            return Err(Error::dim(format!(
                "{} state rows but {} action rows",
                states.rows(),
                actions.rows()
            )));
        }
        if !states.is_finite() || !actions.is_finite() {
            return Err(Error::InvalidData("segment contains non-finite values".into()));
        }
        Ok(TrajectorySegment { states, actions })
    }

    pub fn from_rows(states: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<Self> {
        let s = Matrix::from_rows(states)?;
        let mut a = Matrix::from_rows(actions)?;
        // an all-empty action list still has one (empty) row per step
        if actions.is_empty() {
            a = Matrix::zeros(s.rows(), 0);
        }
        Self::new(s, a)
    }

    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn state_dim(&self) -> usize {
        self.states.cols()
    }

    pub fn action_dim(&self) -> usize {
        self.actions.cols()
    }

    pub fn states(&self) -> &Matrix {
        &self.states
    }

    pub fn actions(&self) -> &Matrix {
        &self.actions
    }

    pub fn state(&self, t: usize) -> &[f64] {
        self.states.row(t)
    }

    pub fn action(&self, t: usize) -> &[f64] {
        self.actions.row(t)
    }

    /// Concatenated `(s_t, a_t)` input for one timestep.
    pub fn step_input(&self, t: usize) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.state_dim() + self.action_dim());
        x.extend_from_slice(self.state(t));
        x.extend_from_slice(self.action(t));
        x
    }
}

/// Timestep-major concatenation `[s_1, a_1, s_2, a_2, ...]`.
pub fn flatten(segment: &TrajectorySegment) -> Vec<f64> {
    let mut out = Vec::with_capacity(segment.len() * (segment.state_dim() + segment.action_dim()));
    for t in 0..segment.len() {
        out.extend_from_slice(segment.state(t));
        out.extend_from_slice(segment.action(t));
    }
    out
}

/// Inverse of [`flatten`] for a known `(H, d_s, d_a)`.
pub fn reshape(flat: &[f64], horizon: usize, state_dim: usize, action_dim: usize) -> Result<TrajectorySegment> {
    let step = state_dim + action_dim;
    if flat.len() != horizon * step {
        return Err(Error::dim(format!(
            "flat vector of length {} does not match H={horizon}, d_s={state_dim}, d_a={action_dim}",
            flat.len()
        )));
    }
    let mut states = Matrix::zeros(horizon, state_dim);
    let mut actions = Matrix::zeros(horizon, action_dim);
    for t in 0..horizon {
        let chunk = &flat[t * step..(t + 1) * step];
        states.row_mut(t).copy_from_slice(&chunk[..state_dim]);
        actions.row_mut(t).copy_from_slice(&chunk[state_dim..]);
    }
    TrajectorySegment::new(states, actions)
}

/// Segments of one task together with their probability mass.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    segments: Vec<TrajectorySegment>,
    weights: Vec<f64>,
}

impl TrajectorySet {
    /// Validates shared dimensions and the weight simplex. Missing weights
    /// default to the uniform measure.
    pub fn new(segments: Vec<TrajectorySegment>, weights: Option<Vec<f64>>) -> Result<Self> {
        let first = segments
            .first()
            .ok_or_else(|| Error::arg("trajectory set must contain at least one segment"))?;
        let (h, ds, da) = (first.len(), first.state_dim(), first.action_dim());
        for (i, s) in segments.iter().enumerate() {
            if s.len() != h || s.state_dim() != ds || s.action_dim() != da {
                return Err(Error::dim(format!(
                    "segment {i} has shape (H={}, d_s={}, d_a={}), expected (H={h}, d_s={ds}, d_a={da})",
                    s.len(),
                    s.state_dim(),
                    s.action_dim()
                )));
            }
        }
        let n = segments.len();
        let weights = match weights {
            None => vec![1.0 / n as f64; n],
            Some(w) => {
                if w.len() != n {
                    return Err(Error::dim(format!("{} weights for {n} segments", w.len())));
                }
                if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                    return Err(Error::InvalidData("weights must be finite and nonnegative".into()));
                }
                let total: f64 = w.iter().sum();
                if libm::fabs(total - 1.0) > WEIGHT_SUM_TOL {
                    return Err(Error::InvalidData(format!("weights must sum to 1 (got {total})")));
                }
                w
            }
        };
        Ok(TrajectorySet { segments, weights })
    }

    pub fn segments(&self) -> &[TrajectorySegment] {
        &self.segments
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.segments[0].len()
    }

    pub fn state_dim(&self) -> usize {
        self.segments[0].state_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.segments[0].action_dim()
    }

    /// Segments at `indices`, re-weighted uniformly.
    pub fn subset(&self, indices: &[usize]) -> Result<TrajectorySet> {
        let mut segs = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = self
                .segments
                .get(i)
                .ok_or_else(|| Error::arg(format!("segment index {i} out of range")))?;
            segs.push(s.clone());
        }
        TrajectorySet::new(segs, None)
    }

    pub fn flattened(&self) -> Vec<Vec<f64>> {
        self.segments.iter().map(flatten).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    Cosine,
}

impl core::fmt::Display for Metric {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        })
    }
}

impl core::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::arg(format!("unknown metric `{other}`"))),
        }
    }
}

/// Symmetric, zero-diagonal, nonnegative matrix of intra-set distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    values: Matrix,
    metric: Metric,
}

impl DistanceMatrix {
    pub fn new(values: Matrix, metric: Metric) -> Result<Self> {
        let n = values.rows();
        if values.cols() != n {
            return Err(Error::dim(format!("distance matrix must be square, got {:?}", values.shape())));
        }
        for i in 0..n {
            if libm::fabs(values[(i, i)]) > DISTANCE_TOL {
                return Err(Error::InvalidData(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                let v = values[(i, j)];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidData(format!("entry ({i}, {j}) = {v} is not a distance")));
                }
                if libm::fabs(v - values[(j, i)]) > DISTANCE_TOL {
                    return Err(Error::InvalidData(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(DistanceMatrix { values, metric })
    }

    pub fn from_rows(rows: &[Vec<f64>], metric: Metric) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?, metric)
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    /// Relabels points so that new point `k` is old point `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<DistanceMatrix> {
        if perm.len() != self.len() {
            return Err(Error::dim("permutation length differs from matrix size"));
        }
        let values = Matrix::from_fn(self.len(), self.len(), |a, b| self.values[(perm[a], perm[b])]);
        Ok(DistanceMatrix { values, metric: self.metric })
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

fn norm(a: &[f64]) -> f64 {
    libm::sqrt(a.iter().map(|x| x * x).sum())
}

pub fn pairwise_distance(set: &TrajectorySet, metric: Metric) -> Result<DistanceMatrix> {
    let flat = set.flattened();
    let n = flat.len();
    let norms: Vec<f64> = flat.iter().map(|f| norm(f)).collect();
    if metric == Metric::Cosine {
        if let Some(i) = norms.iter().position(|&x| x == 0.0) {
            return Err(Error::Degenerate(format!(
                "segment {i} flattens to the zero vector; cosine distance is undefined"
            )));
        }
    }
    let mut values = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = match metric {
                Metric::Euclidean => euclidean(&flat[i], &flat[j]),
                Metric::Cosine => {
                    let dot: f64 = flat[i].iter().zip(&flat[j]).map(|(a, b)| a * b).sum();
                    (1.0 - dot / (norms[i] * norms[j])).clamp(0.0, 2.0)
                }
            };
            values[(i, j)] = d;
            values[(j, i)] = d;
        }
    }
    Ok(DistanceMatrix { values, metric })
}

/// Result of Lloyd's algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    /// `k x D` in flattened-segment space.
    pub centroids: Matrix,
    /// Within-cluster sum of squares after each completed Lloyd iteration.
    pub sse_trace: Vec<f64>,
}

impl ClusterAssignment {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == cluster)
            .map(|(i, _)| i)
            .collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn within_sse(points: &[Vec<f64>], labels: &[usize], centroids: &Matrix) -> f64 {
    points
        .iter()
        .zip(labels)
        .map(|(p, &c)| sq_dist(p, centroids.row(c)))
        .sum()
}

/// Lloyd's algorithm on flattened segments with seeded initial centroids
/// drawn from the data. A cluster that empties out is re-seeded with the point
/// farthest from its own centroid.
pub fn kmeans_cluster(set: &TrajectorySet, k: usize, max_iters: usize, seed: u64) -> Result<ClusterAssignment> {
    let points = set.flattened();
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::arg(format!("k = {k} must be in 1..={n}")));
    }
    if max_iters == 0 {
        return Err(Error::arg("max_iters must be positive"));
    }
    let dim = points[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = index::sample(&mut rng, n, k);
    let mut centroids = Matrix::zeros(k, dim);
    for (c, i) in init.iter().enumerate() {
        centroids.row_mut(c).copy_from_slice(&points[i]);
    }

    let mut labels: Vec<usize> = vec![usize::MAX; n];
    let mut sse_trace = Vec::new();
    for _ in 0..max_iters {
        let mut next: Vec<usize> = points
            .iter()
            .map(|p| {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for c in 0..k {
                    let d = sq_dist(p, centroids.row(c));
                    if d < best_d {
                        best_d = d;
                        best = c;
                    }
                }
                best
            })
            .collect();
        reseed_empty(&points, &mut next, &mut centroids, k);

        let changed = next != labels;
        labels = next;

        let mut sums = Matrix::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&labels) {
            counts[c] += 1;
            for (s, x) in sums.row_mut(c).iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            let inv = 1.0 / counts[c] as f64;
            for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                *dst = s * inv;
            }
        }
        sse_trace.push(within_sse(&points, &labels, &centroids));
        if !changed {
            break;
        }
    }
    Ok(ClusterAssignment {
        labels,
        centroids,
        sse_trace,
    })
}

fn reseed_empty(points: &[Vec<f64>], labels: &mut [usize], centroids: &mut Matrix, k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for &c in labels.iter() {
            counts[c] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        // farthest point among those whose cluster can spare a member
        let mut far = None;
        let mut far_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            let c = labels[i];
            if counts[c] < 2 {
                continue;
            }
            let d = sq_dist(p, centroids.row(c));
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let Some(i) = far else { return };
        labels[i] = empty;
        centroids.row_mut(empty).copy_from_slice(&points[i]);
    }
}

/// A balanced draw from a two-cluster grouping.
#[derive(Debug, Clone, PartialEq)]
pub struct BalancedSample {
    /// Positions in the original set; cluster 0 picks first, each block ascending.
    pub indices: Vec<usize>,
    pub set: TrajectorySet,
}

/// Draws `n / 2` segments without replacement from each of the two clusters.
pub fn sample_balanced(
    set: &TrajectorySet,
    assignment: &ClusterAssignment,
    n: usize,
    seed: u64,
) -> Result<BalancedSample> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::arg(format!("sample size {n} must be even and positive")));
    }
    if assignment.k() != 2 {
        return Err(Error::arg(format!("balanced sampling needs k = 2, got {}", assignment.k())));
    }
    if assignment.labels.len() != set.len() {
        return Err(Error::dim("assignment does not cover the trajectory set"));
    }
    let half = n / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = Vec::with_capacity(n);
    for cluster in 0..2 {
        let members = assignment.members(cluster);
        if members.len() < half {
            return Err(Error::Sampling {
                cluster,
                needed: half,
                available: members.len(),
            });
        }
        let mut picked: Vec<usize> = index::sample(&mut rng, members.len(), half)
            .iter()
            .map(|i| members[i])
            .collect();
        picked.sort_unstable();
        indices.extend(picked);
    }
    let set = set.subset(&indices)?;
    Ok(BalancedSample { indices, set })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_set(values: &[f64]) -> TrajectorySet {
        let segs = values
            .iter()
            .map(|&v| TrajectorySegment::from_rows(&[vec![v]], &[]).unwrap())
            .collect();
        TrajectorySet::new(segs, None).unwrap()
    }

    #[test]
    fn flatten_single_step() {
        let s = TrajectorySegment::from_rows(&[vec![2.0]], &[vec![3.0]]).unwrap();
        assert_eq!(flatten(&s), vec![2.0, 3.0]);
    }

    #[test]
    fn flatten_is_timestep_major() {
        let s = TrajectorySegment::from_rows(&[vec![1.0], vec![0.0]], &[vec![0.0], vec![1.0]]).unwrap();
        let f = flatten(&s);
        assert_eq!(f, vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(reshape(&f, 2, 1, 1).unwrap(), s);
    }

    #[test]
    fn segment_rejects_mismatched_rows() {
        let r = TrajectorySegment::from_rows(&[vec![1.0], vec![2.0]], &[vec![0.0]]);
        assert!(matches!(r, Err(Error::Dimension(_))));
        let r = TrajectorySegment::from_rows(&[vec![f64::NAN]], &[]);
        assert!(r.is_err());
    }

    #[test]
    fn set_defaults_to_uniform_weights() {
        let set = scalar_set(&[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(set.weights(), &[0.25, 0.25, 0.25, 0.25]);
        let one = scalar_set(&[5.0]);
        assert_eq!(one.weights(), &[1.0]);
    }

    #[test]
    fn set_rejects_bad_weights() {
        let segs = scalar_set(&[0.0, 1.0]).segments().to_vec();
        let err = TrajectorySet::new(segs.clone(), Some(vec![0.5, 0.4])).unwrap_err();
        assert!(alloc::format!("{err}").contains("weights must sum to 1"));
        assert!(TrajectorySet::new(segs, Some(vec![1.5, -0.5])).is_err());
    }

    #[test]
    fn set_rejects_mixed_lengths() {
        let a = TrajectorySegment::from_rows(&[vec![0.0]], &[]).unwrap();
        let b = TrajectorySegment::from_rows(&[vec![0.0], vec![1.0]], &[]).unwrap();
        assert!(matches!(TrajectorySet::new(vec![a, b], None), Err(Error::Dimension(_))));
    }

    #[test]
    fn euclidean_on_scalars() {
        let d = pairwise_distance(&scalar_set(&[0.0, 3.0, 4.0]), Metric::Euclidean).unwrap();
        assert_eq!(
            d.values().to_rows(),
            vec![vec![0.0, 3.0, 4.0], vec![3.0, 0.0, 1.0], vec![4.0, 1.0, 0.0]]
        );
    }

    #[test]
    fn identical_segments_have_zero_distance() {
        for metric in [Metric::Euclidean, Metric::Cosine] {
            let d = pairwise_distance(&scalar_set(&[2.0, 2.0]), metric).unwrap();
            assert_eq!(d.values().to_rows(), vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
        }
    }

    #[test]
    fn cosine_of_orthogonal_vectors() {
        let a = TrajectorySegment::from_rows(&[vec![1.0]], &[vec![0.0]]).unwrap();
        let b = TrajectorySegment::from_rows(&[vec![0.0]], &[vec![1.0]]).unwrap();
        let set = TrajectorySet::new(vec![a, b], None).unwrap();
        let d = pairwise_distance(&set, Metric::Cosine).unwrap();
        assert!((d.get(0, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_rejects_zero_segment() {
        let r = pairwise_distance(&scalar_set(&[0.0, 1.0]), Metric::Cosine);
        assert!(matches!(r, Err(Error::Degenerate(_))));
    }

    #[test]
    fn kmeans_separable_pair() {
        let a = kmeans_cluster(&scalar_set(&[0.0, 10.0]), 2, 10, 7).unwrap();
        assert_ne!(a.labels[0], a.labels[1]);
    }

    #[test]
    fn kmeans_four_points() {
        // exhaustive 2-partition search picks {0, 0.1} | {9.9, 10}
        let pts = [0.0, 0.1, 9.9, 10.0];
        let mut best = (f64::INFINITY, 0u32);
        for mask in 1u32..(1 << 3) {
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for (i, &p) in pts.iter().enumerate() {
                if mask >> i & 1 == 1 { a.push(p) } else { b.push(p) }
            }
            let sse = |v: &[f64]| {
                let m = v.iter().sum::<f64>() / v.len() as f64;
                v.iter().map(|x| (x - m) * (x - m)).sum::<f64>()
            };
            let total = sse(&a) + sse(&b);
            if total < best.0 {
                best = (total, mask);
            }
        }
        assert_eq!(best.1, 0b0011);

        for seed in 0..20 {
            let a = kmeans_cluster(&scalar_set(&pts), 2, 50, seed).unwrap();
            assert_eq!(a.labels[0], a.labels[1]);
            assert_eq!(a.labels[2], a.labels[3]);
            assert_ne!(a.labels[0], a.labels[2]);
        }
    }

    #[test]
    fn kmeans_single_cluster() {
        let a = kmeans_cluster(&scalar_set(&[1.0, 2.0, 6.0]), 1, 10, 0).unwrap();
        assert_eq!(a.labels, vec![0, 0, 0]);
        assert!((a.centroids[(0, 0)] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn kmeans_rejects_large_k() {
        assert!(matches!(kmeans_cluster(&scalar_set(&[1.0]), 2, 10, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn kmeans_never_returns_empty_clusters() {
        // duplicated points force an initial centroid collision
        let a = kmeans_cluster(&scalar_set(&[1.0, 1.0, 1.0, 1.0, 5.0]), 3, 20, 3).unwrap();
        for c in 0..3 {
            assert!(!a.members(c).is_empty());
        }
    }

    fn two_clusters(sizes: (usize, usize)) -> (TrajectorySet, ClusterAssignment) {
        let mut vals = Vec::new();
        for i in 0..sizes.0 {
            vals.push(i as f64 * 0.01);
        }
        for i in 0..sizes.1 {
            vals.push(100.0 + i as f64 * 0.01);
        }
        let set = scalar_set(&vals);
        let a = kmeans_cluster(&set, 2, 50, 1).unwrap();
        (set, a)
    }

    #[test]
    fn balanced_sampling_counts() {
        let (set, a) = two_clusters((2, 2));
        let s = sample_balanced(&set, &a, 4, 9).unwrap();
        let mut idx = s.indices.clone();
        idx.sort();
        assert_eq!(idx, vec![0, 1, 2, 3]);
        assert_eq!(s.set.weights(), &[0.25; 4]);

        let (set, a) = two_clusters((3, 3));
        let s = sample_balanced(&set, &a, 4, 9).unwrap();
        assert_eq!(s.indices.iter().filter(|&&i| i < 3).count(), 2);
        assert_eq!(s.indices.iter().filter(|&&i| i >= 3).count(), 2);
        assert_eq!(s, sample_balanced(&set, &a, 4, 9).unwrap());
    }

    #[test]
    fn balanced_sampling_underpopulated_cluster() {
        let (set, a) = two_clusters((1, 5));
        let err = sample_balanced(&set, &a, 4, 0).unwrap_err();
        assert!(matches!(err, Error::Sampling { needed: 2, available: 1, .. }));
    }
}
