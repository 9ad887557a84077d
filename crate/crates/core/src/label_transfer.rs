//! Turning a solved coupling plus source preferences into target preferences.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::ot_align::{entropic_gw, GwConfig, GwReport, TransportPlan};
use crate::trajectory::{pairwise_distance, Metric, TrajectorySet};

/// Pair-matching matrices whose largest entry falls below this carry no mass.
pub const ABSTAIN_THRESHOLD: f64 = 1e-12;

/// `label` is 0 when `first` is preferred, 1 when `second` is, 0.5 for a tie.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    #[serde(rename = "i")]
    pub first: usize,
    #[serde(rename = "j")]
    pub second: usize,
    #[serde(rename = "z")]
    pub label: f64,
}

impl PreferenceRecord {
    pub fn new(first: usize, second: usize, label: f64) -> Self {
        PreferenceRecord { first, second, label }
    }

    /// Key of the unordered pair.
    pub fn key(&self) -> (usize, usize) {
        (self.first.min(self.second), self.first.max(self.second))
    }

    /// Label for the `(min, max)` orientation.
    pub fn canonical_label(&self) -> f64 {
        if self.first < self.second {
            self.label
        } else {
            1.0 - self.label
        }
    }
}

/// Preference records over the segments of one trajectory set.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceDataset {
    records: Vec<PreferenceRecord>,
    num_segments: usize,
    index: BTreeMap<(usize, usize), usize>,
}

impl PreferenceDataset {
    pub fn new(records: Vec<PreferenceRecord>, num_segments: usize) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (k, r) in records.iter().enumerate() {
            if r.first == r.second {
                return Err(Error::InvalidData(format!("record {k} pairs segment {} with itself", r.first)));
            }
            if r.first >= num_segments || r.second >= num_segments {
                return Err(Error::InvalidData(format!(
                    "record {k} references ({}, {}) but only {num_segments} segments exist",
                    r.first, r.second
                )));
            }
            if !(0.0..=1.0).contains(&r.label) {
                return Err(Error::InvalidData(format!("record {k} has label {} outside [0, 1]", r.label)));
            }
            if index.insert(r.key(), k).is_some() {
                return Err(Error::InvalidData(format!(
                    "record {k} duplicates pair ({}, {})",
                    r.first, r.second
                )));
            }
        }
        Ok(PreferenceDataset {
            records,
            num_segments,
            index,
        })
    }

    pub fn empty(num_segments: usize) -> Self {
        PreferenceDataset {
            records: Vec::new(),
            num_segments,
            index: BTreeMap::new(),
        }
    }

    pub fn records(&self) -> &[PreferenceRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<PreferenceRecord> {
        self.records
    }

    pub fn num_segments(&self) -> usize {
        self.num_segments
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Ordered label `z(x_a, x_b)`; the reversed orientation of a stored pair
    /// reads `1 - z`.
    pub fn label(&self, a: usize, b: usize) -> Option<f64> {
        let rec = &self.records[*self.index.get(&(a.min(b), a.max(b)))?];
        Some(if rec.first == a { rec.label } else { 1.0 - rec.label })
    }

    pub fn contains_pair(&self, a: usize, b: usize) -> bool {
        self.index.contains_key(&(a.min(b), a.max(b)))
    }

    /// Records whose endpoints both lie in `indices`, renumbered so that
    /// segment `indices[k]` becomes `k`.
    pub fn restrict(&self, indices: &[usize]) -> Result<PreferenceDataset> {
        let mut position = BTreeMap::new();
        for (k, &i) in indices.iter().enumerate() {
            if i >= self.num_segments {
                return Err(Error::arg(format!("index {i} out of range for {} segments", self.num_segments)));
            }
            if position.insert(i, k).is_some() {
                return Err(Error::arg(format!("index {i} listed twice")));
            }
        }
        let records = self
            .records
            .iter()
            .filter_map(|r| {
                let (a, b) = (position.get(&r.first)?, position.get(&r.second)?);
                Some(PreferenceRecord::new(*a, *b, r.label))
            })
            .collect();
        PreferenceDataset::new(records, indices.len())
    }
}

/// `A^{jj'} = T_{·j} T_{·j'}ᵀ`, an `M x M` matrix over source pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMatchMatrix {
    pub values: Matrix,
    pub target_pair: (usize, usize),
}

pub fn pair_match(plan: &TransportPlan, j: usize, j_prime: usize) -> Result<PairMatchMatrix> {
    let (m, n) = plan.shape();
    if j == j_prime {
        return Err(Error::arg(format!("pair matching needs two distinct target segments, got ({j}, {j})")));
    }
    if j >= n || j_prime >= n {
        return Err(Error::arg(format!("target indices ({j}, {j_prime}) out of range for {n} columns")));
    }
    let a = plan.column(j);
    let b = plan.column(j_prime);
    Ok(PairMatchMatrix {
        values: Matrix::from_fn(m, m, |i, i2| a[i] * b[i2]),
        target_pair: (j, j_prime),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransferOutcome {
    Label(f64),
    Abstain,
}

impl TransferOutcome {
    pub fn value(self) -> Option<f64> {
        match self {
            TransferOutcome::Label(z) => Some(z),
            TransferOutcome::Abstain => None,
        }
    }
}

/// `Σ_i Σ_{i'≠i} A[i][i'] · z(x_i, x_{i'})`, or an abstention when `A` carries
/// no mass.
pub fn transfer_label(a: &PairMatchMatrix, source: &PreferenceDataset) -> Result<TransferOutcome> {
    let m = a.values.rows();
    if source.num_segments() != m {
        return Err(Error::dim(format!(
            "pair matrix is {m}x{m} but the source dataset covers {} segments",
            source.num_segments()
        )));
    }
    let max = a.values.as_slice().iter().copied().fold(0.0, f64::max);
    if max < ABSTAIN_THRESHOLD {
        return Ok(TransferOutcome::Abstain);
    }
    let mut total = 0.0;
    for i in 0..m {
        for i2 in 0..m {
            if i == i2 {
                continue;
            }
            let w = a.values[(i, i2)];
            match source.label(i, i2) {
                Some(z) => total += w * z,
                None if w < ABSTAIN_THRESHOLD => {}
                None => {
                    return Err(Error::Coverage {
                        first: i,
                        second: i2,
                        mass: w,
                    })
                }
            }
        }
    }
    Ok(TransferOutcome::Label(total))
}

pub type Pair = (usize, usize);

/// Min-max normalization over the non-abstained labels of one batch. A batch
/// with no spread normalizes to 0.5 everywhere.
pub fn normalize_labels(raw: &[(Pair, TransferOutcome)]) -> Result<Vec<(Pair, TransferOutcome)>> {
    if raw.is_empty() {
        return Err(Error::arg("cannot normalize an empty label batch"));
    }
    let values = raw.iter().filter_map(|(_, o)| o.value());
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), z| (lo.min(z), hi.max(z)));
    let range = hi - lo;
    Ok(raw
        .iter()
        .map(|&(pair, o)| {
            let out = match o {
                TransferOutcome::Abstain => TransferOutcome::Abstain,
                TransferOutcome::Label(_) if !(range > 0.0) => TransferOutcome::Label(0.5),
                TransferOutcome::Label(z) => TransferOutcome::Label(((z - lo) / range).clamp(0.0, 1.0)),
            };
            (pair, out)
        })
        .collect())
}

/// 1 for `z > 0.5`, otherwise 0.
pub fn binarize(z: f64) -> f64 {
    if z > 0.5 {
        1.0
    } else {
        0.0
    }
}

/// One target pair's path through transfer, normalization and binarization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferredRecord {
    pub i: usize,
    pub j: usize,
    /// Binary label, absent when abstained.
    pub z: Option<f64>,
    pub raw_label: Option<f64>,
    pub normalized_label: Option<f64>,
    pub abstained: bool,
}

#[derive(Debug, Clone)]
pub struct CpaLabels {
    pub records: Vec<TransferredRecord>,
    /// Binary labels over all non-abstained target pairs.
    pub dataset: PreferenceDataset,
    pub gw: GwReport,
}

impl CpaLabels {
    pub fn abstained(&self) -> usize {
        self.records.iter().filter(|r| r.abstained).count()
    }
}

/// Aligns `source_set` with `target_set` and transfers `source_prefs` onto
/// every target pair `j < j'`.
pub fn compute_cpa_labels(
    source_set: &TrajectorySet,
    source_prefs: &PreferenceDataset,
    target_set: &TrajectorySet,
    metric: Metric,
    gw_config: &GwConfig,
) -> Result<CpaLabels> {
    if source_prefs.num_segments() != source_set.len() {
        return Err(Error::dim(format!(
            "source preferences cover {} segments, source set has {}",
            source_prefs.num_segments(),
            source_set.len()
        )));
    }
    let c_s = pairwise_distance(source_set, metric)?;
    let c_t = pairwise_distance(target_set, metric)?;
    let gw = entropic_gw(&c_s, &c_t, source_set.weights(), target_set.weights(), gw_config)?;
    let n = target_set.len();

    let mut raw = Vec::new();
    for j in 0..n {
        for j2 in (j + 1)..n {
            let a = pair_match(&gw.plan, j, j2)?;
            raw.push(((j, j2), transfer_label(&a, source_prefs)?));
        }
    }
    if raw.is_empty() {
        return Ok(CpaLabels {
            records: Vec::new(),
            dataset: PreferenceDataset::empty(n),
            gw,
        });
    }
    let normalized = normalize_labels(&raw)?;
    let mut records = Vec::with_capacity(raw.len());
    let mut binary = Vec::new();
    for ((pair, r), (_, z)) in raw.iter().zip(&normalized) {
        let rec = match (r.value(), z.value()) {
            (Some(r), Some(z)) => {
                let b = binarize(z);
                binary.push(PreferenceRecord::new(pair.0, pair.1, b));
                TransferredRecord {
                    i: pair.0,
                    j: pair.1,
                    z: Some(b),
                    raw_label: Some(r),
                    normalized_label: Some(z),
                    abstained: false,
                }
            }
            _ => TransferredRecord {
                i: pair.0,
                j: pair.1,
                z: None,
                raw_label: None,
                normalized_label: None,
                abstained: true,
            },
        };
        records.push(rec);
    }
    Ok(CpaLabels {
        records,
        dataset: PreferenceDataset::new(binary, n)?,
        gw,
    })
}

/// Percentage of shared pairs whose binary labels agree. With `exclude_ties`,
/// pairs whose ground truth is 0.5 are left out of both counts.
pub fn cpa_accuracy(predicted: &PreferenceDataset, truth: &PreferenceDataset, exclude_ties: bool) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for rec in predicted.records() {
        let Some(t) = truth.label(rec.first, rec.second) else {
            continue;
        };
        if exclude_ties && t == 0.5 {
            continue;
        }
        total += 1;
        if binarize(rec.label) == t {
            correct += 1;
        }
    }
    if total == 0 {
        return Err(Error::arg("predicted and ground-truth datasets share no comparable pairs"));
    }
    Ok(100.0 * correct as f64 / total as f64)
}
