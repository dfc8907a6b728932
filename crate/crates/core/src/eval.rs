//! Four-way algorithm comparison and the frame-accuracy metric.
//!
//! All variants of one scene share a single tracker and a single set of
//! speech-presence decisions; only the RTF estimator and the spectrum differ.

use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::angular_distance_deg;
use crate::rtf::{estimate_g_cwe, estimate_gh_cw, RtfVector};
use crate::sim::{build_prototype_db, mix_seed, parse_angles, render_default, PrototypeDb, Reverb, SceneConfig};
use crate::spectrum::{
    build_matched_pairs, spectral_bins, spectrum_1d_with, spectrum_2d_with, spectrum_matched_with, DoaEstimate,
    JointEstimate, MatchedPairSet, PhasorTable, SpatialSpectrum1D, SpatialSpectrum2D, Spectrum,
};
use crate::stft::{analyze_with, StftConfig, StftTensor};
use crate::track::{CovTracker, OracleSpp, SppGate, SppMode, TrackerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AlgorithmVariant {
    /// CW on the H microphones, 1D spectrum.
    #[serde(rename = "hh")]
    HOverH,
    /// CW-E, H block, 1D spectrum.
    #[serde(rename = "heh")]
    HeOverH,
    /// CW-E, joint spectrum over both arrays.
    #[serde(rename = "he2d")]
    HeOverHe2d,
    /// CW-E, spectrum over geometrically matched pairs.
    #[serde(rename = "hematch")]
    HeOverHeMatch,
}

impl AlgorithmVariant {
    pub const ALL: [AlgorithmVariant; 4] = [Self::HOverH, Self::HeOverH, Self::HeOverHe2d, Self::HeOverHeMatch];

    pub fn cli_name(self) -> &'static str {
        match self {
            Self::HOverH => "hh",
            Self::HeOverH => "heh",
            Self::HeOverHe2d => "he2d",
            Self::HeOverHeMatch => "hematch",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::HOverH => "H/H",
            Self::HeOverH => "H+E/H",
            Self::HeOverHe2d => "H+E/H+E (2D)",
            Self::HeOverHeMatch => "H+E/H+E (match)",
        }
    }

    pub fn uses_external(self) -> bool {
        self != Self::HOverH
    }

    pub fn joint(self) -> bool {
        matches!(self, Self::HeOverHe2d | Self::HeOverHeMatch)
    }
}

impl FromStr for AlgorithmVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.cli_name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}' (expected hh, heh, he2d or hematch)")))
    }
}

impl std::fmt::Display for AlgorithmVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Fraction of estimates within `tol_deg` of `truth_deg` on the circle.
pub fn localization_accuracy(estimates_deg: &[f64], truth_deg: f64, tol_deg: f64) -> Result<f64> {
    if !(tol_deg > 0.0) {
        return Err(Error::Config(format!("tolerance {tol_deg} must be positive")));
    }
    if estimates_deg.is_empty() {
        return Err(Error::Undefined("accuracy over zero estimate-bearing frames".into()));
    }
    let hits = estimates_deg.iter().filter(|&&e| angular_distance_deg(e, truth_deg) <= tol_deg).count();
    Ok(hits as f64 / estimates_deg.len() as f64)
}

/// One frame of a variant trace; `estimate` is `None` during warm-up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    pub time_s: f64,
    pub estimate: Option<DoaEstimate>,
    /// Bins that entered the spectrum.
    pub bins_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantTrace {
    pub variant: AlgorithmVariant,
    pub frames: Vec<FrameRecord>,
}

impl VariantTrace {
    /// H-side angles of the estimate-bearing frames.
    pub fn estimates(&self) -> Vec<f64> {
        self.frames.iter().filter_map(|f| f.estimate.map(|e| e.theta_deg)).collect()
    }
}

/// A 1D or 2D spectrum of one variant, per frame or summed over frames.
#[derive(Debug, Clone, PartialEq)]
pub enum AggregateSpectrum {
    OneD(SpatialSpectrum1D),
    TwoD(SpatialSpectrum2D),
}

impl AggregateSpectrum {
    pub fn pick_doa(&self) -> Result<DoaEstimate> {
        match self {
            Self::OneD(s) => s.pick_doa(),
            Self::TwoD(s) => s.pick_doa(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub traces: Vec<VariantTrace>,
    /// `None` for variants without a single estimate-bearing frame.
    pub aggregates: Vec<Option<AggregateSpectrum>>,
    /// Per-frame spectra of each variant, filled when requested.
    pub spectra: Vec<Vec<AggregateSpectrum>>,
    /// Per-bin estimator failures that were skipped.
    pub failed_bins: usize,
}

/// Databases, pairs and tracker settings shared by all variants.
#[derive(Debug, Clone)]
pub struct Pipeline {
    table_h: PhasorTable,
    table_e: Option<PhasorTable>,
    pairs: Option<MatchedPairSet>,
    tracker: TrackerConfig,
    stft: StftConfig,
    m_h: usize,
    m_e: usize,
    keep_spectra: bool,
}

impl Pipeline {
    pub fn new(
        stft: StftConfig,
        db_h: &PrototypeDb,
        db_e: Option<&PrototypeDb>,
        pairs: Option<MatchedPairSet>,
        tracker: TrackerConfig,
    ) -> Result<Self> {
        db_h.check_grid(&stft)?;
        if let Some(e) = db_e {
            e.check_grid(&stft)?;
        }
        if db_h.reference() != 0 {
            return Err(Error::Config("the H database must use microphone 0 as reference".into()));
        }
        Ok(Self {
            table_h: PhasorTable::new(db_h),
            table_e: db_e.map(PhasorTable::new),
            pairs,
            tracker,
            stft,
            m_h: db_h.num_mics(),
            m_e: db_e.map_or(0, PrototypeDb::num_mics),
            keep_spectra: false,
        })
    }

    /// Also return every per-frame spectrum.
    pub fn with_spectra(mut self, keep: bool) -> Self {
        self.keep_spectra = keep;
        self
    }

    pub fn m_h(&self) -> usize {
        self.m_h
    }

    /// Snapped E angle of the matched pair steering H to `theta_h_deg`.
    pub fn matched_theta_e(&self, theta_h_deg: f64) -> Option<f64> {
        self.pairs.as_ref()?.pairs.iter().find(|p| p.theta_h_deg == theta_h_deg).map(|p| p.theta_e_deg)
    }

    fn check_variants(&self, variants: &[AlgorithmVariant], stft: &StftTensor) -> Result<()> {
        if variants.is_empty() {
            return Err(Error::Config("no variants requested".into()));
        }
        if *stft.config() != self.stft {
            return Err(Error::Config("audio STFT grid does not match the databases".into()));
        }
        let external = variants.iter().any(|v| v.uses_external());
        let needed = if external { self.m_h + self.m_e } else { self.m_h };
        if external && self.m_e == 0 {
            return Err(Error::Config("variants using E need an E database".into()));
        }
        if variants.contains(&AlgorithmVariant::HeOverHeMatch) && self.pairs.is_none() {
            return Err(Error::Config("the matched variant needs array poses".into()));
        }
        if stft.num_channels() < needed || (external && stft.num_channels() != needed) {
            return Err(Error::Config(format!(
                "audio has {} channels, databases expect {}",
                stft.num_channels(),
                needed
            )));
        }
        Ok(())
    }

    /// Runs every requested variant over one utterance.
    pub fn run(
        &self,
        stft: &StftTensor,
        mut gate: SppGate,
        oracle: Option<&OracleSpp>,
        variants: &[AlgorithmVariant],
    ) -> Result<PipelineOutput> {
        self.check_variants(variants, stft)?;
        let external = variants.iter().any(|v| v.uses_external());
        let stft_used;
        let stft = if external || stft.num_channels() == self.m_h {
            stft
        } else {
            stft_used = stft.channels(0..self.m_h)?;
            &stft_used
        };
        if gate.mode == SppMode::Blind {
            gate.prime(stft, 0..self.tracker.init_frames.min(stft.num_frames()).max(1))?;
        }
        let mut tracker = CovTracker::from_preroll(self.tracker, stft)?;
        let k_bins = stft.num_bins();
        let need_h = variants.contains(&AlgorithmVariant::HOverH);
        let mut traces: Vec<VariantTrace> =
            variants.iter().map(|&variant| VariantTrace { variant, frames: Vec::new() }).collect();
        let mut aggregates: Vec<Option<AggregateSpectrum>> = vec![None; variants.len()];
        let mut spectra: Vec<Vec<AggregateSpectrum>> = vec![Vec::new(); variants.len()];
        let mut failed_bins = 0;
        let hop_s = self.stft.hop_seconds();

        for l in self.tracker.init_frames..stft.num_frames() {
            let decisions = gate.decide(stft, l, oracle.map(|o| o.frame(l)))?;
            tracker.update_from(stft, l, &decisions)?;
            let live = spectral_bins(k_bins).any(|k| tracker.speech_seen(k));
            if !live {
                for t in &mut traces {
                    t.frames.push(FrameRecord { frame: l, time_s: l as f64 * hop_s, estimate: None, bins_used: 0 });
                }
                continue;
            }
            let mut cw_h: Vec<Option<RtfVector>> = vec![None; k_bins];
            let mut cw_e: Vec<Option<JointEstimate>> = vec![None; k_bins];
            for k in spectral_bins(k_bins) {
                if !tracker.speech_seen(k) {
                    continue;
                }
                let (py, pu) = (tracker.phi_y(k), tracker.phi_u(k));
                if need_h {
                    match estimate_gh_cw(py, pu, self.m_h) {
                        Ok(e) => cw_h[k] = Some(e.rtf),
                        Err(e) if e.is_numerical() => failed_bins += 1,
                        Err(e) => return Err(e.at_bin(k)),
                    }
                }
                if external {
                    match estimate_g_cwe(py, pu, self.m_h) {
                        Ok(e) => cw_e[k] = Some(JointEstimate { g_h: e.g_h, g_e: e.g_e }),
                        Err(e) if e.is_numerical() => failed_bins += 1,
                        Err(e) => return Err(e.at_bin(k)),
                    }
                }
            }
            for ((t, agg), kept) in traces.iter_mut().zip(aggregates.iter_mut()).zip(spectra.iter_mut()) {
                let (estimate, bins_used) = match t.variant {
                    AlgorithmVariant::HOverH | AlgorithmVariant::HeOverH => {
                        let est: Vec<Option<RtfVector>> = if t.variant == AlgorithmVariant::HOverH {
                            cw_h.clone()
                        } else {
                            cw_e.iter().map(|e| e.as_ref().map(|e| e.g_h.clone())).collect()
                        };
                        let used = est.iter().flatten().count();
                        let s = spectrum_1d_with(&est, &self.table_h, l)?;
                        let d = s.pick_doa()?;
                        self.keep(kept, AggregateSpectrum::OneD(s.clone()));
                        accumulate(agg, AggregateSpectrum::OneD(s))?;
                        (d, used)
                    }
                    AlgorithmVariant::HeOverHe2d => {
                        let te = self.table_e.as_ref().expect("checked");
                        let s = spectrum_2d_with(&cw_e, &self.table_h, te, l)?;
                        let d = s.pick_doa()?;
                        self.keep(kept, AggregateSpectrum::TwoD(s.clone()));
                        accumulate(agg, AggregateSpectrum::TwoD(s))?;
                        (d, cw_e.iter().flatten().count())
                    }
                    AlgorithmVariant::HeOverHeMatch => {
                        let te = self.table_e.as_ref().expect("checked");
                        let pairs = self.pairs.as_ref().expect("checked");
                        let s = spectrum_matched_with(&cw_e, &self.table_h, te, pairs, l)?;
                        let mut d = s.pick_doa()?;
                        d.theta_e_deg = self.matched_theta_e(d.theta_deg);
                        self.keep(kept, AggregateSpectrum::OneD(s.clone()));
                        accumulate(agg, AggregateSpectrum::OneD(s))?;
                        (d, cw_e.iter().flatten().count())
                    }
                };
                t.frames.push(FrameRecord { frame: l, time_s: l as f64 * hop_s, estimate: Some(estimate), bins_used });
            }
        }
        Ok(PipelineOutput { traces, aggregates, spectra, failed_bins })
    }

    fn keep(&self, kept: &mut Vec<AggregateSpectrum>, s: AggregateSpectrum) {
        if self.keep_spectra {
            kept.push(s);
        }
    }
}

fn accumulate(slot: &mut Option<AggregateSpectrum>, s: AggregateSpectrum) -> Result<()> {
    match (slot.as_mut(), s) {
        (None, s) => *slot = Some(s),
        (Some(AggregateSpectrum::OneD(a)), AggregateSpectrum::OneD(b)) => a.accumulate(&b)?,
        (Some(AggregateSpectrum::TwoD(a)), AggregateSpectrum::TwoD(b)) => a.accumulate(&b)?,
        _ => return Err(Error::Dimension("mixed spectrum kinds".into())),
    }
    Ok(())
}

/// Single-variant convenience wrapper around [`Pipeline::run`].
pub fn run_variant(
    variant: AlgorithmVariant,
    pipeline: &Pipeline,
    stft: &StftTensor,
    gate: SppGate,
    oracle: Option<&OracleSpp>,
) -> Result<VariantTrace> {
    let mut out = pipeline.run(stft, gate, oracle, &[variant])?;
    Ok(out.traces.remove(0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerSettings {
    pub tau_y_s: f64,
    pub tau_u_s: f64,
    pub init_frames: usize,
}

impl Default for TrackerSettings {
    fn default() -> Self {
        Self { tau_y_s: 0.25, tau_u_s: 0.5, init_frames: 10 }
    }
}

impl TrackerSettings {
    pub fn resolve(&self, stft: &StftConfig) -> Result<TrackerConfig> {
        TrackerConfig::from_time_constants(self.tau_y_s, self.tau_u_s, stft.hop_seconds(), self.init_frames)
    }
}

/// Scenes × variants experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; speech, noise and reverb seeds are derived from it.
    pub seed: u64,
    pub doas_deg: Vec<f64>,
    /// Independent noise realizations per DOA.
    pub noise_seeds: usize,
    /// Scene template; the speaker DOA and all seeds are overwritten.
    pub scene: SceneConfig,
    /// Database grid for both arrays.
    pub angles: String,
    pub stft: StftConfig,
    #[serde(default)]
    pub tracker: TrackerSettings,
    pub spp: SppMode,
    pub tolerance_deg: f64,
    pub pair_radius_m: f64,
    pub pair_count: usize,
    pub variants: Vec<AlgorithmVariant>,
    /// Store per-frame traces in the report.
    #[serde(default = "yes")]
    pub keep_traces: bool,
}

fn yes() -> bool {
    true
}

impl ExperimentConfig {
    /// Nine DOAs from −160° to 160°, three noise seeds, 0 dB SNR, a
    /// reverberant tail at 0 dB direct-to-reverb ratio and blind gating.
    pub fn desk_default(seed: u64) -> Self {
        let mut scene = SceneConfig::desk_default(0.0);
        scene.reverb = Reverb::Reverberant { tail_seconds: 0.5, direct_to_reverb_db: 0.0, seed: 0 };
        scene.noise = Some(crate::sim::NoiseConfig::new(0.0, 0));
        Self {
            seed,
            doas_deg: (0..9).map(|i| -160.0 + 40.0 * i as f64).collect(),
            noise_seeds: 3,
            scene,
            angles: "-180:5:175".into(),
            stft: StftConfig::standard(),
            tracker: TrackerSettings::default(),
            spp: SppMode::Blind,
            tolerance_deg: 5.0,
            pair_radius_m: 2.0,
            // 20° ring: lies on the 5° grid and contains every evaluated DOA
            pair_count: 18,
            variants: AlgorithmVariant::ALL.to_vec(),
            keep_traces: true,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        if self.doas_deg.is_empty() || self.noise_seeds == 0 || self.variants.is_empty() {
            return Err(Error::Config("need at least one DOA, noise seed and variant".into()));
        }
        if self.doas_deg.iter().any(|d| !d.is_finite()) {
            return Err(Error::Config("DOAs must be finite".into()));
        }
        if !(self.tolerance_deg > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        if self.stft.sample_rate != self.scene.sample_rate {
            return Err(Error::Config("STFT and scene sample rates differ".into()));
        }
        parse_angles(&self.angles)?;
        self.tracker.resolve(&self.stft)?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("serializable");
        Sha256::digest(&bytes).iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Scene for one DOA and noise realization.
    pub fn scene_for(&self, doa_deg: f64, realization: usize) -> SceneConfig {
        let mut scene = self.scene.clone();
        scene.speaker_doa_deg = doa_deg;
        scene.speech_seed = mix_seed(self.seed, 0x5EEC);
        let r = realization as u64;
        if let Some(n) = scene.noise.as_mut() {
            n.seed = mix_seed(self.seed, 0x1000 + r);
        }
        if let Reverb::Reverberant { seed, .. } = &mut scene.reverb {
            *seed = mix_seed(self.seed, 0x2000 + r);
        }
        scene
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: AlgorithmVariant,
    /// `None` when no frame bore an estimate.
    pub accuracy: Option<f64>,
    pub frames: usize,
    pub correct: usize,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub trace: Vec<FrameRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneResult {
    pub doa_deg: f64,
    pub realization: usize,
    pub theta_e_deg: Option<f64>,
    /// Error message of a failed scene.
    pub failure: Option<String>,
    pub variants: Vec<VariantResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCell {
    pub variant: AlgorithmVariant,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoaSummary {
    pub doa_deg: f64,
    pub accuracy: Vec<AccuracyCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: u64,
    pub config_hash: String,
    pub tolerance_deg: f64,
    pub denominator: String,
    pub failed_scenes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metadata: RunMetadata,
    pub config: ExperimentConfig,
    pub scenes: Vec<SceneResult>,
    pub per_doa: Vec<DoaSummary>,
    /// Mean over DOAs of the per-DOA accuracies.
    pub average: Vec<AccuracyCell>,
}

impl EvalReport {
    pub fn average_of(&self, variant: AlgorithmVariant) -> Option<f64> {
        self.average.iter().find(|c| c.variant == variant).and_then(|c| c.accuracy)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `doa_deg,variant,accuracy` rows followed by `average` rows.
    pub fn write_summary_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "doa_deg,variant,accuracy")?;
        let fmt = |a: Option<f64>| a.map_or_else(String::new, |v| v.to_string());
        for d in &self.per_doa {
            for c in &d.accuracy {
                writeln!(w, "{},{},{}", d.doa_deg, c.variant.cli_name(), fmt(c.accuracy))?;
            }
        }
        for c in &self.average {
            writeln!(w, "average,{},{}", c.variant.cli_name(), fmt(c.accuracy))?;
        }
        Ok(())
    }

    /// Per-frame estimates of every scene and variant.
    pub fn write_traces_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "doa_deg,realization,variant,frame,time_s,theta_hat,theta_e_hat,peak_score")?;
        for s in &self.scenes {
            for v in &s.variants {
                for f in &v.trace {
                    let Some(e) = f.estimate else { continue };
                    let te = e.theta_e_deg.map_or_else(String::new, |t| t.to_string());
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{},{}",
                        s.doa_deg,
                        s.realization,
                        v.variant.cli_name(),
                        f.frame,
                        f.time_s,
                        e.theta_deg,
                        te,
                        e.score
                    )?;
                }
            }
        }
        Ok(())
    }

    /// Plain-text table of the average accuracies.
    pub fn table(&self) -> String {
        let mut s = String::from("variant            accuracy\n");
        for c in &self.average {
            let a = c.accuracy.map_or_else(|| "n/a".to_string(), |a| format!("{:6.2} %", 100.0 * a));
            let _ = writeln!(s, "{:<18} {a}", c.variant.label());
        }
        s
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, sum) = values.fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    (n > 0).then(|| sum / n as f64)
}

fn run_scene(
    cfg: &ExperimentConfig,
    scene: &SceneConfig,
    pipeline: &Pipeline,
) -> Result<(f64, Vec<VariantResult>)> {
    let rendered = render_default(scene)?;
    let stft = analyze_with(&rendered.mixture, cfg.stft)?;
    let (gate, oracle) = match cfg.spp {
        SppMode::Oracle => {
            let clean = analyze_with(&rendered.clean_speech, cfg.stft)?;
            let noise = analyze_with(&rendered.noise, cfg.stft)?;
            (SppGate::oracle(rendered.m_h), Some(OracleSpp::from_components(&clean, &noise, rendered.m_h)?))
        }
        SppMode::Blind => (SppGate::blind(rendered.m_h), None),
    };
    let out = pipeline.run(&stft, gate, oracle.as_ref(), &cfg.variants)?;
    let truth = rendered.truth.theta_deg;
    let results = out
        .traces
        .into_iter()
        .map(|t| {
            let est = t.estimates();
            let correct =
                est.iter().filter(|&&e| angular_distance_deg(e, truth) <= cfg.tolerance_deg).count();
            VariantResult {
                variant: t.variant,
                accuracy: localization_accuracy(&est, truth, cfg.tolerance_deg).ok(),
                frames: est.len(),
                correct,
                trace: if cfg.keep_traces { t.frames } else { Vec::new() },
            }
        })
        .collect();
    Ok((rendered.truth.theta_e_deg, results))
}

/// Renders every (DOA, noise realization) scene and runs all variants on it.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let angles = parse_angles(&cfg.angles)?;
    let db_h = build_prototype_db(&cfg.scene.array_h.geometry, &angles, &cfg.stft)?;
    let db_e = build_prototype_db(&cfg.scene.array_e.geometry, &angles, &cfg.stft)?;
    let pairs = if cfg.variants.contains(&AlgorithmVariant::HeOverHeMatch) {
        Some(build_matched_pairs(
            db_h.angles_deg(),
            db_e.angles_deg(),
            &cfg.scene.array_h.pose,
            &cfg.scene.array_e.pose,
            cfg.pair_radius_m,
            cfg.pair_count,
        )?)
    } else {
        None
    };
    let pipeline = Pipeline::new(cfg.stft, &db_h, Some(&db_e), pairs, cfg.tracker.resolve(&cfg.stft)?)?;

    let mut scenes = Vec::new();
    for &doa in &cfg.doas_deg {
        for r in 0..cfg.noise_seeds {
            let scene = cfg.scene_for(doa, r);
            let result = match run_scene(cfg, &scene, &pipeline) {
                Ok((theta_e, variants)) => {
                    SceneResult { doa_deg: doa, realization: r, theta_e_deg: Some(theta_e), failure: None, variants }
                }
                Err(e) => {
                    log::warn!("scene at {doa}° (realization {r}) failed: {e}");
                    SceneResult { doa_deg: doa, realization: r, theta_e_deg: None, failure: Some(e.to_string()), variants: vec![] }
                }
            };
            scenes.push(result);
        }
    }

    let per_doa: Vec<DoaSummary> = cfg
        .doas_deg
        .iter()
        .map(|&doa| DoaSummary {
            doa_deg: doa,
            accuracy: cfg
                .variants
                .iter()
                .map(|&variant| AccuracyCell {
                    variant,
                    accuracy: mean(
                        scenes
                            .iter()
                            .filter(|s| s.doa_deg == doa)
                            .flat_map(|s| s.variants.iter())
                            .filter(|v| v.variant == variant)
                            .filter_map(|v| v.accuracy),
                    ),
                })
                .collect(),
        })
        .collect();
    let average = cfg
        .variants
        .iter()
        .enumerate()
        .map(|(i, &variant)| AccuracyCell {
            variant,
            accuracy: mean(per_doa.iter().filter_map(|d| d.accuracy[i].accuracy)),
        })
        .collect();
    Ok(EvalReport {
        metadata: RunMetadata {
            seed: cfg.seed,
            config_hash: cfg.hash(),
            tolerance_deg: cfg.tolerance_deg,
            denominator: "estimate-bearing frames after warm-up".into(),
            failed_scenes: scenes.iter().filter(|s| s.failure.is_some()).count(),
        },
        config: cfg.clone(),
        scenes,
        per_doa,
        average,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ArrayGeometry;
    use crate::linalg::{HermitianMatrix, C64};
    use crate::sim::render_scene;

    #[test]
    fn accuracy_examples() {
        assert_eq!(localization_accuracy(&[10.0, 10.0], 10.0, 5.0).unwrap(), 1.0);
        assert_eq!(localization_accuracy(&[178.0], -178.0, 5.0).unwrap(), 1.0);
        let a = localization_accuracy(&[0.0, 0.0, 10.0], 0.0, 5.0).unwrap();
        assert!((a - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(localization_accuracy(&[], 0.0, 5.0), Err(Error::Undefined(_))));
        assert!(localization_accuracy(&[0.0], 0.0, 0.0).is_err());
    }

    #[test]
    fn accuracy_monotone_in_tolerance() {
        let est: Vec<f64> = (0..50).map(|i| -180.0 + 7.3 * i as f64).collect();
        let mut last = 1.0;
        for tol in [180.0, 90.0, 30.0, 10.0, 5.0, 1.0, 0.1] {
            let a = localization_accuracy(&est, 3.0, tol).unwrap();
            assert!(a <= last);
            last = a;
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in AlgorithmVariant::ALL {
            assert_eq!(v.cli_name().parse::<AlgorithmVariant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{}\"", v.cli_name()));
        }
        assert!("x".parse::<AlgorithmVariant>().is_err());
    }

    fn dbs() -> (PrototypeDb, PrototypeDb) {
        let angles = parse_angles("-180:5:175").unwrap();
        let g = ArrayGeometry::default_binaural();
        let cfg = StftConfig::standard();
        (build_prototype_db(&g, &angles, &cfg).unwrap(), build_prototype_db(&g, &angles, &cfg).unwrap())
    }

    #[test]
    fn noise_only_gives_no_estimates() {
        let (db_h, db_e) = dbs();
        let mut scene = SceneConfig::desk_default(30.0);
        scene.noise = Some(crate::sim::NoiseConfig::new(0.0, 0));
        scene.speech_duration_s = 0.5;
        let r = render_scene(&scene, &vec![1e-3; 8000]).unwrap();
        let cfg = StftConfig::standard();
        let stft = analyze_with(&r.noise, cfg).unwrap();
        let silent = analyze_with(&vec![vec![0.0; r.num_samples()]; 8], cfg).unwrap();
        let oracle = OracleSpp::from_components(&silent, &stft, 4).unwrap();
        let p = Pipeline::new(cfg, &db_h, Some(&db_e), None, TrackerConfig::standard()).unwrap();
        let out = p.run(&stft, SppGate::oracle(4), Some(&oracle), &[AlgorithmVariant::HOverH, AlgorithmVariant::HeOverHe2d]).unwrap();
        for t in &out.traces {
            assert!(!t.frames.is_empty());
            assert!(t.frames.iter().all(|f| f.estimate.is_none()));
        }
        assert!(out.aggregates.iter().all(Option::is_none));
    }

    #[test]
    fn anechoic_scene_every_variant_exact() {
        let (db_h, db_e) = dbs();
        let mut scene = SceneConfig::desk_default(-120.0);
        scene.speech_duration_s = 0.6;
        let r = render_default(&scene).unwrap();
        let cfg = StftConfig::standard();
        let stft = analyze_with(&r.mixture, cfg).unwrap();
        let clean = analyze_with(&r.clean_speech, cfg).unwrap();
        let noise = analyze_with(&r.noise, cfg).unwrap();
        let oracle = OracleSpp::from_components(&clean, &noise, 4).unwrap();
        let pairs = build_matched_pairs(
            db_h.angles_deg(),
            db_e.angles_deg(),
            &scene.array_h.pose,
            &scene.array_e.pose,
            2.0,
            72,
        )
        .unwrap();
        let p = Pipeline::new(cfg, &db_h, Some(&db_e), Some(pairs), TrackerConfig::standard()).unwrap();
        let out = p.run(&stft, SppGate::oracle(4), Some(&oracle), &AlgorithmVariant::ALL).unwrap();
        for t in &out.traces {
            let est = t.estimates();
            assert!(!est.is_empty());
            assert_eq!(localization_accuracy(&est, -120.0, 5.0).unwrap(), 1.0, "{}", t.variant);
        }
        // frame counts agree across variants
        let n = out.traces[0].estimates().len();
        assert!(out.traces.iter().all(|t| t.estimates().len() == n));
        let two_d = out.aggregates[2].as_ref().unwrap().pick_doa().unwrap();
        assert!(angular_distance_deg(two_d.theta_e_deg.unwrap(), r.truth.theta_e_deg) <= 5.0);
    }

    #[test]
    fn variant_database_mismatch_is_config_error() {
        let (db_h, _) = dbs();
        let cfg = StftConfig::standard();
        let p = Pipeline::new(cfg, &db_h, None, None, TrackerConfig::standard()).unwrap();
        let stft = analyze_with(&vec![vec![0.0; 4096]; 4], cfg).unwrap();
        let err = p.run(&stft, SppGate::blind(4), None, &[AlgorithmVariant::HeOverHe2d]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let other = StftConfig { sample_rate: 16_000, window_len: 256, hop: 128 };
        assert!(Pipeline::new(other, &db_h, None, None, TrackerConfig::standard()).is_err());
    }

    #[test]
    fn hh_and_heh_agree_on_h_only_covariance() {
        // block-diagonal covariances with a speech term only in H: CW-E's H
        // block and CW on H coincide
        let (db_h, _) = dbs();
        let k = 40;
        let g: Vec<C64> = db_h.entry(db_h.index_of(35.0).unwrap(), k).to_vec();
        let mut y = HermitianMatrix::identity(8);
        let speech = HermitianMatrix::from_upper(8, |i, j| if i < 4 && j < 4 { g[i] * g[j].conj() * 3.0 } else { C64::new(0.0, 0.0) });
        y = y.add(&speech).unwrap();
        let u = HermitianMatrix::identity(8);
        let h = estimate_gh_cw(&y, &u, 4).unwrap().rtf;
        let e = estimate_g_cwe(&y, &u, 4).unwrap().g_h;
        for (a, b) in h.as_slice().iter().zip(e.as_slice()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn config_round_trip_and_hash() {
        let cfg = ExperimentConfig::desk_default(7);
        let json = serde_json::to_string(&cfg).unwrap();
        let back = ExperimentConfig::from_json(&json).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
        assert_ne!(ExperimentConfig::desk_default(8).hash(), cfg.hash());
        let s0 = cfg.scene_for(40.0, 0);
        let s1 = cfg.scene_for(-40.0, 0);
        assert_eq!(s0.noise.as_ref().unwrap().seed, s1.noise.as_ref().unwrap().seed);
        assert_ne!(s0.noise.as_ref().unwrap().seed, cfg.scene_for(40.0, 1).noise.unwrap().seed);
    }

    #[test]
    fn small_experiment_shape_and_determinism() {
        let mut cfg = ExperimentConfig::desk_default(3);
        cfg.doas_deg = vec![-40.0, 80.0];
        cfg.noise_seeds = 2;
        cfg.scene.speech_duration_s = 0.4;
        cfg.scene.noise.as_mut().unwrap().snr_db = 20.0;
        let a = run_experiment(&cfg).unwrap();
        assert_eq!(a.scenes.len(), 4);
        assert_eq!(a.per_doa.len(), 2);
        assert_eq!(a.average.len(), 4);
        for s in &a.scenes {
            assert!(s.failure.is_none());
            let n = s.variants[0].frames;
            assert!(s.variants.iter().all(|v| v.frames == n));
            for v in &s.variants {
                let acc = v.accuracy.unwrap();
                assert!((0.0..=1.0).contains(&acc));
            }
        }
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let mut csv = Vec::new();
        a.write_summary_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 4 + 4);
        assert!(a.table().contains("H+E/H+E (match)"));
    }
}
