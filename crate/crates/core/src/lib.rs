//! Zero-shot cross-task preference transfer.
//!
//! Trajectory sets from a source and a target task are aligned with an
//! entropic Gromov-Wasserstein solver, source preference labels are pushed
//! through the solved coupling, and a distributional (mean + variance) reward
//! model is trained from the transferred labels.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, configuration
//! and the command-line pipeline live in the companion `pearl` crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

mod error;
pub mod label_transfer;
pub mod matrix;
pub mod ot_align;
pub mod reward_model;
pub mod stats;
pub mod synthetic_tasks;
pub mod trajectory;

pub use error::{Error, Result};
pub use label_transfer::{
    binarize, compute_cpa_labels, cpa_accuracy, normalize_labels, pair_match, transfer_label,
    CpaLabels, PairMatchMatrix, PreferenceDataset, PreferenceRecord, TransferOutcome,
    TransferredRecord,
};
pub use matrix::Matrix;
pub use ot_align::{
    constant_offset, entropic_gw, gw_cost_matrix, gw_objective, init_plan, sinkhorn, GwConfig,
    GwReport, SinkhornMode, SinkhornReport, TransportPlan,
};
pub use reward_model::{RewardNet, RrlConfig};
pub use trajectory::{
    flatten, kmeans_cluster, pairwise_distance, sample_balanced, ClusterAssignment,
    DistanceMatrix, Metric, TrajectorySegment, TrajectorySet,
};
