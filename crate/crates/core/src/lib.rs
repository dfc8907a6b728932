//! Direction-of-arrival estimation for a binaural hearing aid (H) assisted by
//! a calibrated external microphone array (E).
//!
//! Pipeline: STFT analysis, speech-presence gated covariance tracking,
//! covariance-whitening RTF estimation, and spatial spectra against
//! prototype RTF databases.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::manual_is_multiple_of)]

pub mod audio;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod linalg;
pub mod rtf;
pub mod sim;
pub mod spectrum;
pub mod stft;
pub mod track;

pub use error::{Error, Result};
pub use eval::{localization_accuracy, run_experiment, AlgorithmVariant, EvalReport, ExperimentConfig, Pipeline};
pub use geometry::{ArrayGeometry, PlacedArray, ScenePose};
pub use linalg::{HermitianMatrix, C64};
pub use rtf::{cw_estimate, estimate_g_cwe, estimate_gh_cw, RtfVector, SelectionOperator};
pub use sim::{PrototypeDb, SceneConfig};
pub use spectrum::{
    build_matched_pairs, phase_distance, pick_doa, spectrum_1d, spectrum_2d, spectrum_matched, DoaEstimate,
    MatchedPairSet, SpatialSpectrum1D, SpatialSpectrum2D,
};
pub use stft::{analyze, StftConfig, StftTensor};
pub use track::{CovTracker, SppGate, SppMode, TrackerConfig};
