//! Synthetic scenes and prototype databases under a shared free-field model.

pub mod atf;
pub mod db;
pub mod scene;
pub mod source;

pub use atf::{freefield_atf, plane_wave_delays};
pub use db::{build_prototype_db, normalize_angles, parse_angles, PrototypeDb};
pub use scene::{
    measured_snr_db, mix_seed, render_default, render_scene, true_theta_e, NoiseConfig, RenderedScene, Reverb, SceneConfig,
    SceneTruth, PREROLL_S,
};
pub use source::speech_shaped_noise;
