//! On-disk formats: trajectory datasets, label files, checkpoints and
//! training logs. Everything is JSON.

use std::fs;
use std::path::Path;

use pearl_core::reward_model::{EpochLog, RewardNet};
use pearl_core::{Matrix, PreferenceDataset, PreferenceRecord, TrajectorySegment, TrajectorySet};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{PearlError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRecord {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
}

/// A trajectory set with optional weights and pairwise preferences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub d_s: usize,
    pub d_a: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    pub segments: Vec<SegmentRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preferences: Option<Vec<PreferenceRecord>>,
}

/// Preference labels over the segments of some dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelsFile {
    pub num_segments: usize,
    pub preferences: Vec<PreferenceRecord>,
    /// Pairs that were visited but never received a label.
    #[serde(default)]
    pub abstained: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub input_dim: usize,
    pub embed_dim: usize,
    pub net: RewardNet,
}

const CHECKPOINT_FORMAT: &str = "pearl-reward-net/1";

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| PearlError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| PearlError::format(path, e.to_string()))
}

/// Pretty JSON with a trailing newline. Output is a pure function of `value`.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| PearlError::format(path, e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| PearlError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| PearlError::io(path, e))
}

impl DatasetFile {
    pub fn from_set(set: &TrajectorySet, preferences: Option<&PreferenceDataset>) -> Self {
        let weights = set.weights();
        let uniform = weights.iter().all(|&w| w == weights[0]);
        DatasetFile {
            d_s: set.state_dim(),
            d_a: set.action_dim(),
            horizon: set.horizon(),
            segments: set
                .segments()
                .iter()
                .map(|s| SegmentRecord {
                    states: s.states().to_rows(),
                    actions: s.actions().to_rows(),
                })
                .collect(),
            weights: (!uniform).then(|| weights.to_vec()),
            preferences: preferences.map(|p| p.records().to_vec()),
        }
    }

    /// Validates the file against its declared shapes. Errors name the
    /// offending segment or preference record.
    pub fn to_set(&self, path: &Path) -> Result<(TrajectorySet, Option<PreferenceDataset>)> {
        let bad = |msg: String| PearlError::format(path, msg);
        if self.segments.is_empty() {
            return Err(bad("dataset has no segments".into()));
        }
        let mut segments = Vec::with_capacity(self.segments.len());
        for (k, seg) in self.segments.iter().enumerate() {
            if seg.states.len() != self.horizon || seg.actions.len() != self.horizon {
                return Err(bad(format!(
                    "segment {k}: expected H = {} states and actions, got {} and {}",
                    self.horizon,
                    seg.states.len(),
                    seg.actions.len()
                )));
            }
            if let Some(t) = seg.states.iter().position(|s| s.len() != self.d_s) {
                return Err(bad(format!("segment {k}, step {t}: state must have d_s = {} entries", self.d_s)));
            }
            if let Some(t) = seg.actions.iter().position(|a| a.len() != self.d_a) {
                return Err(bad(format!("segment {k}, step {t}: action must have d_a = {} entries", self.d_a)));
            }
            let states = Matrix::from_vec(self.horizon, self.d_s, seg.states.concat());
            let actions = Matrix::from_vec(self.horizon, self.d_a, seg.actions.concat());
            let segment = states
                .and_then(|s| TrajectorySegment::new(s, actions?))
                .map_err(|e| bad(format!("segment {k}: {e}")))?;
            segments.push(segment);
        }
        let set = TrajectorySet::new(segments, self.weights.clone()).map_err(|e| bad(e.to_string()))?;
        let prefs = match &self.preferences {
            None => None,
            Some(records) => Some(preference_dataset(path, records, set.len())?),
        };
        Ok((set, prefs))
    }
}

fn preference_dataset(path: &Path, records: &[PreferenceRecord], n: usize) -> Result<PreferenceDataset> {
    for (k, r) in records.iter().enumerate() {
        if r.first >= n || r.second >= n || r.first == r.second || !(0.0..=1.0).contains(&r.label) {
            return Err(PearlError::format(
                path,
                format!(
                    "preference {k} (i = {}, j = {}, z = {}): indices must be distinct and below {n}, z in [0, 1]",
                    r.first, r.second, r.label
                ),
            ));
        }
    }
    PreferenceDataset::new(records.to_vec(), n).map_err(|e| PearlError::format(path, e.to_string()))
}

pub fn load_dataset(path: &Path) -> Result<(TrajectorySet, Option<PreferenceDataset>)> {
    read_json::<DatasetFile>(path)?.to_set(path)
}

pub fn save_dataset(path: &Path, set: &TrajectorySet, preferences: Option<&PreferenceDataset>) -> Result<()> {
    write_json(path, &DatasetFile::from_set(set, preferences))
}

pub fn load_labels(path: &Path) -> Result<(PreferenceDataset, usize)> {
    let file: LabelsFile = read_json(path)?;
    Ok((preference_dataset(path, &file.preferences, file.num_segments)?, file.abstained))
}

pub fn save_labels(path: &Path, labels: &PreferenceDataset, abstained: usize) -> Result<()> {
    write_json(
        path,
        &LabelsFile {
            num_segments: labels.num_segments(),
            preferences: labels.records().to_vec(),
            abstained,
        },
    )
}

pub fn save_checkpoint(path: &Path, net: &RewardNet) -> Result<()> {
    write_json(
        path,
        &Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            input_dim: net.input_dim(),
            embed_dim: net.embed_dim(),
            net: net.clone(),
        },
    )
}

pub fn load_checkpoint(path: &Path) -> Result<RewardNet> {
    let ck: Checkpoint = read_json(path)?;
    if ck.format != CHECKPOINT_FORMAT {
        return Err(PearlError::format(path, format!("unknown checkpoint format {:?}", ck.format)));
    }
    ck.net.validate().map_err(|e| PearlError::format(path, e.to_string()))?;
    if ck.net.input_dim() != ck.input_dim || ck.net.embed_dim() != ck.embed_dim {
        return Err(PearlError::format(path, "declared dimensions disagree with the stored layers"));
    }
    Ok(ck.net)
}

/// One JSON object per line, one line per epoch.
pub fn save_train_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut text = String::new();
    for rec in log {
        text.push_str(&serde_json::to_string(rec).map_err(|e| PearlError::format(path, e.to_string()))?);
        text.push('\n');
    }
    write_text(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> DatasetFile {
        DatasetFile {
            d_s: 1,
            d_a: 1,
            horizon: 2,
            segments: vec![
                SegmentRecord {
                    states: vec![vec![0.0], vec![1.0]],
                    actions: vec![vec![0.5], vec![0.5]],
                },
                SegmentRecord {
                    states: vec![vec![2.0], vec![3.0]],
                    actions: vec![vec![0.1], vec![0.2]],
                },
            ],
            weights: None,
            preferences: Some(vec![PreferenceRecord::new(0, 1, 1.0)]),
        }
    }

    #[test]
    fn round_trips_through_sets() {
        let file = tiny();
        let (set, prefs) = file.to_set(Path::new("x")).unwrap();
        assert_eq!(DatasetFile::from_set(&set, prefs.as_ref()), file);
    }

    #[test]
    fn errors_name_the_record() {
        let mut file = tiny();
        file.segments[1].states[1] = vec![1.0, 2.0];
        let err = file.to_set(Path::new("d.json")).unwrap_err().to_string();
        assert!(err.contains("segment 1, step 1"), "{err}");

        let mut file = tiny();
        file.preferences = Some(vec![PreferenceRecord::new(0, 1, 1.0), PreferenceRecord::new(0, 5, 0.0)]);
        let err = file.to_set(Path::new("d.json")).unwrap_err().to_string();
        assert!(err.contains("preference 1"), "{err}");
    }

    #[test]
    fn json_field_names() {
        let text = serde_json::to_string(&tiny()).unwrap();
        assert!(text.contains("\"H\":2") && text.contains("\"i\":0") && text.contains("\"z\":1.0"));
        assert!(!text.contains("weights"));
    }
}
