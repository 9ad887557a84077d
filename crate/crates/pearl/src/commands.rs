//! The five pipeline subcommands. Each takes a validated config and resolved
//! paths and writes its artifacts; nothing random escapes the config seeds.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use pearl_core::reward_model::{predict_returns, train};
use pearl_core::stats::{pairwise_agreement, spearman};
use pearl_core::synthetic_tasks::{flip_labels, generate_task_pair, scripted_labels};
use pearl_core::{
    compute_cpa_labels, cpa_accuracy, kmeans_cluster, sample_balanced, PreferenceDataset, PreferenceRecord,
    RewardNet, TrajectorySet,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{LabelSource, Mode, PipelineConfig, ResolvedPaths};
use crate::error::{PearlError, Result};
use crate::io;
use crate::report::{GwSummary, LabelCounts, MetricsReport, TrainingSummary};

pub const TRANSFER_REPORT: &str = "transfer_report.json";
pub const TRAIN_REPORT: &str = "train_report.json";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const MANIFEST: &str = "manifest.json";
pub const SWEEP_CSV: &str = "sweep.csv";

const STEP_SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

fn step_seed(seed: u64, step: usize) -> u64 {
    seed.wrapping_add((step as u64 + 1).wrapping_mul(STEP_SEED_STRIDE))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn finish(mut report: MetricsReport, cfg: &PipelineConfig, started: Instant) -> MetricsReport {
    if cfg.report_timing {
        report.wall_clock_seconds = Some(started.elapsed().as_secs_f64());
    }
    report
}

#[derive(Debug, Clone, Serialize)]
struct ManifestFiles {
    source: String,
    target: String,
    target_labels: String,
    holdout: String,
    holdout_returns: String,
}

#[derive(Debug, Clone, Serialize)]
struct Manifest {
    seed: u64,
    target_seed: u64,
    holdout_seed: u64,
    source_reseeds: u64,
    holdout_reseeds: u64,
    task: crate::config::TaskConfig,
    files: ManifestFiles,
}

/// Writes a synthetic source/target pair with scripted labels, a held-out
/// target sample with its true returns, and a manifest of the seeds used.
pub fn gen_tasks(cfg: &PipelineConfig, paths: &ResolvedPaths) -> Result<()> {
    let task = &cfg.task;
    let pair = generate_task_pair(&task.spec, task.source_segments, task.target_segments)?;
    let source_prefs = scripted_labels(&pair.source, &pair.source_reward)?;
    let target_labels = scripted_labels(&pair.target, &pair.target_reward)?;

    let holdout_seed = task.resolved_holdout_seed();
    let mut holdout_spec = task.spec.clone();
    holdout_spec.target_seed = Some(holdout_seed);
    let held = generate_task_pair(&holdout_spec, task.source_segments, task.holdout_segments)?;
    let holdout_returns = held.target_reward.returns(&held.target);

    io::save_dataset(&paths.source, &pair.source, Some(&source_prefs))?;
    io::save_dataset(&paths.target, &pair.target, None)?;
    io::save_labels(&paths.target_labels, &target_labels, 0)?;
    io::save_dataset(&paths.holdout, &held.target, None)?;
    io::write_json(&paths.holdout_returns, &holdout_returns)?;
    let manifest = Manifest {
        seed: task.spec.seed,
        target_seed: task.spec.target_seed.unwrap_or(task.spec.seed),
        holdout_seed,
        source_reseeds: pair.reseeds,
        holdout_reseeds: held.reseeds,
        task: task.clone(),
        files: ManifestFiles {
            source: file_name(&paths.source),
            target: file_name(&paths.target),
            target_labels: file_name(&paths.target_labels),
            holdout: file_name(&paths.holdout),
            holdout_returns: file_name(&paths.holdout_returns),
        },
    };
    io::write_json(&paths.out.join(MANIFEST), &manifest)?;
    log::info!(
        "wrote {} source and {} target segments to {}",
        pair.source.len(),
        pair.target.len(),
        paths.out.display()
    );
    Ok(())
}

/// Loads scripted target labels if they were named explicitly or exist at
/// the default location.
fn optional_truth(paths: &ResolvedPaths) -> Result<Option<PreferenceDataset>> {
    if paths.explicit_target_labels || paths.target_labels.exists() {
        Ok(Some(io::load_labels(&paths.target_labels)?.0))
    } else {
        Ok(None)
    }
}

/// Repeated balanced sampling, GW alignment and label transfer over the
/// target set. The first label written for a target pair is kept. Source
/// and target draws share seeds, so identical sets give identical draws.
pub fn transfer(cfg: &PipelineConfig, paths: &ResolvedPaths) -> Result<MetricsReport> {
    let started = Instant::now();
    let (source, source_prefs) = io::load_dataset(&paths.source)?;
    let source_prefs =
        source_prefs.ok_or_else(|| PearlError::format(&paths.source, "source dataset has no preferences"))?;
    let (target, _) = io::load_dataset(&paths.target)?;
    let s = &cfg.sampling;
    if s.group_size > target.len() || (!s.use_all_source && s.group_size > source.len()) {
        return Err(PearlError::Config(format!(
            "sampling.group_size {} exceeds the dataset size ({} source, {} target)",
            s.group_size,
            source.len(),
            target.len()
        )));
    }

    let target_clusters = kmeans_cluster(&target, s.kmeans_k, s.kmeans_iters, s.seed)?;
    let source_clusters = if s.use_all_source {
        None
    } else {
        Some(kmeans_cluster(&source, s.kmeans_k, s.kmeans_iters, s.seed)?)
    };

    let mut labels: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut visited: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut objectives = Vec::with_capacity(s.num_steps);
    let (mut converged, mut sinkhorn_converged) = (0, 0);
    for step in 0..s.num_steps {
        let seed = step_seed(s.seed, step);
        let drawn = sample_balanced(&target, &target_clusters, s.group_size, seed)?;
        let (src_set, src_prefs) = match &source_clusters {
            Some(clusters) => {
                let src = sample_balanced(&source, clusters, s.group_size, seed)?;
                let prefs = source_prefs.restrict(&src.indices)?;
                (src.set, prefs)
            }
            None => (source.clone(), source_prefs.clone()),
        };
        let cpa = compute_cpa_labels(&src_set, &src_prefs, &drawn.set, cfg.metric, &cfg.gw)?;
        objectives.push(cpa.gw.objective);
        converged += usize::from(cpa.gw.converged);
        sinkhorn_converged += usize::from(cpa.gw.sinkhorn_converged);
        for rec in &cpa.records {
            let (a, b) = (drawn.indices[rec.i], drawn.indices[rec.j]);
            let key = (a.min(b), a.max(b));
            visited.insert(key);
            if let Some(z) = rec.z {
                labels.entry(key).or_insert(if a < b { z } else { 1.0 - z });
            }
        }
        log::debug!("step {step}: objective {:.3e}, {} labels so far", cpa.gw.objective, labels.len());
    }

    let records = labels.iter().map(|(&(a, b), &z)| PreferenceRecord::new(a, b, z)).collect();
    let dataset = PreferenceDataset::new(records, target.len())?;
    let abstained = visited.len() - dataset.len();
    io::save_labels(&paths.transferred, &dataset, abstained)?;

    let mut report = MetricsReport::new("transfer", cfg);
    report.label_counts = LabelCounts {
        transferred: dataset.len(),
        abstained,
        oracle: 0,
    };
    if let Some(truth) = optional_truth(paths)? {
        if !dataset.is_empty() {
            report.cpa_accuracy = Some(cpa_accuracy(&dataset, &truth, cfg.exclude_ties)?);
        }
    }
    report.gw = Some(GwSummary {
        steps: objectives.len(),
        mean_objective: objectives.iter().sum::<f64>() / objectives.len() as f64,
        max_objective: objectives.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        converged_steps: converged,
        sinkhorn_converged_steps: sinkhorn_converged,
    });
    let report = finish(report, cfg, started);
    io::write_json(&paths.out.join(TRANSFER_REPORT), &report)?;
    log::info!(
        "transferred {} labels ({} abstained), accuracy {:?}",
        dataset.len(),
        abstained,
        report.cpa_accuracy
    );
    Ok(report)
}

/// Replaces `f_oracle` seeded picks among the training labels with scripted
/// ones.
fn substitute_oracle(
    labels: &PreferenceDataset,
    truth: &PreferenceDataset,
    f_oracle: usize,
    seed: u64,
    truth_path: &Path,
) -> Result<PreferenceDataset> {
    if f_oracle > labels.len() {
        return Err(PearlError::Config(format!(
            "mode.f_oracle = {f_oracle} exceeds the {} available labels",
            labels.len()
        )));
    }
    let mut records = labels.records().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in rand::seq::index::sample(&mut rng, records.len(), f_oracle).into_vec() {
        let rec = &mut records[k];
        rec.label = truth.label(rec.first, rec.second).ok_or_else(|| {
            PearlError::format(
                truth_path,
                format!("no scripted label for pair ({}, {})", rec.first, rec.second),
            )
        })?;
    }
    Ok(PreferenceDataset::new(records, labels.num_segments())?)
}

fn load_holdout(paths: &ResolvedPaths) -> Result<Option<(TrajectorySet, Vec<f64>)>> {
    if !(paths.explicit_holdout || (paths.holdout.exists() && paths.holdout_returns.exists())) {
        return Ok(None);
    }
    let (set, _) = io::load_dataset(&paths.holdout)?;
    let returns: Vec<f64> = io::read_json(&paths.holdout_returns)?;
    if returns.len() != set.len() {
        return Err(PearlError::format(
            &paths.holdout_returns,
            format!("{} returns for {} held-out segments", returns.len(), set.len()),
        ));
    }
    Ok(Some((set, returns)))
}

/// Trains the distributional reward model on transferred (or scripted)
/// labels and scores its return ranking on the held-out segments.
pub fn train_reward(cfg: &PipelineConfig, paths: &ResolvedPaths) -> Result<MetricsReport> {
    let started = Instant::now();
    let (target, _) = io::load_dataset(&paths.target)?;
    let (label_path, mut counts) = match cfg.training.label_source {
        LabelSource::Transferred => (&paths.transferred, LabelCounts::default()),
        LabelSource::Scripted => (&paths.target_labels, LabelCounts::default()),
    };
    let (mut labels, abstained) = io::load_labels(label_path)?;
    if labels.num_segments() != target.len() {
        return Err(PearlError::format(
            label_path,
            format!("labels cover {} segments, target has {}", labels.num_segments(), target.len()),
        ));
    }
    match cfg.training.label_source {
        LabelSource::Transferred => {
            counts.transferred = labels.len();
            counts.abstained = abstained;
        }
        LabelSource::Scripted => counts.oracle = labels.len(),
    }
    if let (Mode::FewShot { f_oracle }, LabelSource::Transferred) = (cfg.mode, cfg.training.label_source) {
        if f_oracle > 0 {
            let (truth, _) = io::load_labels(&paths.target_labels)?;
            labels = substitute_oracle(&labels, &truth, f_oracle, cfg.training.oracle_seed, &paths.target_labels)?;
            counts.transferred -= f_oracle;
            counts.oracle = f_oracle;
        }
    }
    if cfg.training.noise_fraction > 0.0 {
        labels = flip_labels(&labels, cfg.training.noise_fraction, cfg.training.noise_seed)?;
    }

    let input_dim = target.state_dim() + target.action_dim();
    let net = RewardNet::new(input_dim, &cfg.net, cfg.rrl.seed)?;
    let (net, log) = train(&net, &target, &labels, &cfg.rrl)?;
    io::save_checkpoint(&paths.out.join(CHECKPOINT), &net)?;
    io::save_train_log(&paths.out.join(TRAIN_LOG), &log)?;

    let mut report = MetricsReport::new("train-reward", cfg);
    report.label_counts = counts;
    let transfer_report = paths.out.join(TRANSFER_REPORT);
    if cfg.training.label_source == LabelSource::Transferred && transfer_report.exists() {
        let previous: MetricsReport = io::read_json(&transfer_report)?;
        report.cpa_accuracy = previous.cpa_accuracy;
        report.gw = previous.gw;
    }
    if let Some((set, truth)) = load_holdout(paths)? {
        if set.state_dim() + set.action_dim() != input_dim {
            return Err(PearlError::format(&paths.holdout, "held-out segments have a different input width"));
        }
        let predicted = predict_returns(&net, &set)?;
        report.reward_rank_correlation = Some(spearman(&predicted, &truth)?);
        report.heldout_pair_accuracy = pairwise_agreement(&predicted, &truth).ok();
    }
    report.training = log.last().map(|last| TrainingSummary {
        epochs: log.len(),
        log_file: TRAIN_LOG.into(),
        checkpoint: CHECKPOINT.into(),
        final_epoch: *last,
    });
    let report = finish(report, cfg, started);
    io::write_json(&paths.out.join(TRAIN_REPORT), &report)?;
    log::info!(
        "trained on {} labels; held-out rank correlation {:?}",
        labels.len(),
        report.reward_rank_correlation
    );
    Ok(report)
}

/// `transfer` followed by `train-reward` into the same directory.
pub fn pipeline(cfg: &PipelineConfig, paths: &ResolvedPaths) -> Result<MetricsReport> {
    transfer(cfg, paths)?;
    train_reward(cfg, paths)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub row: usize,
    pub parameter: String,
    pub value: String,
    pub status: String,
    pub error: String,
    pub cpa_accuracy: Option<f64>,
    pub transferred: Option<usize>,
    pub abstained: Option<usize>,
    pub oracle: Option<usize>,
    pub reward_rank_correlation: Option<f64>,
    pub heldout_pair_accuracy: Option<f64>,
    pub final_mean_entropy: Option<f64>,
    pub config: String,
}

fn sweep_row(cfg: &PipelineConfig, paths: &ResolvedPaths, row: usize, value: &crate::config::SweepValue) -> SweepRow {
    let mut out = SweepRow {
        row,
        parameter: serde_json::to_value(cfg.sweep.parameter)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default(),
        value: value.to_string(),
        status: "ok".into(),
        error: String::new(),
        cpa_accuracy: None,
        transferred: None,
        abstained: None,
        oracle: None,
        reward_rank_correlation: None,
        heldout_pair_accuracy: None,
        final_mean_entropy: None,
        config: String::new(),
    };
    let result = cfg.sweep.apply(cfg, value).and_then(|row_cfg| {
        out.config = serde_json::to_string(&row_cfg).unwrap_or_default();
        row_cfg.validate()?;
        let dir = paths.out.join(format!("row_{row:03}"));
        let row_paths = ResolvedPaths {
            transferred: dir.join("transferred.json"),
            out: dir,
            ..paths.clone()
        };
        if row_cfg.sweep.train {
            pipeline(&row_cfg, &row_paths)
        } else {
            transfer(&row_cfg, &row_paths)
        }
    });
    match result {
        Ok(report) => {
            out.cpa_accuracy = report.cpa_accuracy;
            out.transferred = Some(report.label_counts.transferred);
            out.abstained = Some(report.label_counts.abstained);
            out.oracle = Some(report.label_counts.oracle);
            out.reward_rank_correlation = report.reward_rank_correlation;
            out.heldout_pair_accuracy = report.heldout_pair_accuracy;
            out.final_mean_entropy = report.training.map(|t| t.final_epoch.mean_entropy);
        }
        Err(e) => {
            log::warn!("sweep row {row} ({value}) failed: {e}");
            out.status = "error".into();
            out.error = e.to_string();
        }
    }
    out
}

/// Runs one transfer (and optionally training) per grid value, each in its
/// own `row_NNN` directory, and writes one CSV row per value. Rows run
/// concurrently; a failing row is recorded and the rest continue.
pub fn sweep(cfg: &PipelineConfig, paths: &ResolvedPaths) -> Result<Vec<SweepRow>> {
    if cfg.sweep.values.is_empty() {
        return Err(PearlError::Config("sweep.values is empty".into()));
    }
    let rows: Vec<SweepRow> = std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .sweep
            .values
            .iter()
            .enumerate()
            .map(|(k, v)| scope.spawn(move || sweep_row(cfg, paths, k, v)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep row panicked"))
            .collect()
    });
    let csv_path: PathBuf = paths.out.join(SWEEP_CSV);
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        writer
            .serialize(row)
            .map_err(|e| PearlError::format(&csv_path, e.to_string()))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| PearlError::format(&csv_path, e.to_string()))?;
    io::write_text(&csv_path, &String::from_utf8_lossy(&bytes))?;
    Ok(rows)
}
