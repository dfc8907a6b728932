//! Recursive covariance tracking with speech-presence gating.
//!
//! Per TF bin, speech-and-noise bins update `Φ̂y` and noise-only bins update
//! `Φ̂u`:
//!
//! ```text
//! Φ̂(k, l) = α Φ̂(k, l−1) + (1 − α) y(k, l) y(k, l)ᴴ
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{HermitianMatrix, C64};
use crate::stft::StftTensor;

/// `α = exp(−hop / τ)`.
pub fn alpha_from_time_constant(tau_s: f64, hop_s: f64) -> f64 {
    (-hop_s / tau_s).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub alpha_y: f64,
    pub alpha_u: f64,
    /// Leading frames averaged to initialize both matrices.
    pub init_frames: usize,
}

impl TrackerConfig {
    pub fn from_time_constants(tau_y_s: f64, tau_u_s: f64, hop_s: f64, init_frames: usize) -> Result<Self> {
        if !(tau_y_s > 0.0 && tau_u_s > 0.0 && hop_s > 0.0) {
            return Err(Error::Config("time constants and hop must be positive".into()));
        }
        Ok(Self {
            alpha_y: alpha_from_time_constant(tau_y_s, hop_s),
            alpha_u: alpha_from_time_constant(tau_u_s, hop_s),
            init_frames,
        })
    }

    /// 250 ms / 500 ms time constants at a 16 ms hop, 10 initialization frames.
    pub fn standard() -> Self {
        Self::from_time_constants(0.25, 0.5, 0.016, 10).expect("valid constants")
    }

    fn validate(&self) -> Result<()> {
        let ok = |a: f64| (0.0..1.0).contains(&a);
        if !ok(self.alpha_y) || !ok(self.alpha_u) {
            return Err(Error::Config("smoothing factors must lie in [0, 1)".into()));
        }
        if self.init_frames == 0 {
            return Err(Error::Config("need at least one initialization frame".into()));
        }
        Ok(())
    }
}

/// Per-bin noisy (`Φ̂y`) and undesired (`Φ̂u`) covariance estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct CovTracker {
    config: TrackerConfig,
    phi_y: Vec<HermitianMatrix>,
    phi_u: Vec<HermitianMatrix>,
    /// Speech-and-noise updates per bin since initialization.
    y_updates: Vec<usize>,
    u_updates: Vec<usize>,
}

impl CovTracker {
    /// Initializes both matrices of every bin from the same matrices.
    pub fn from_initial(config: TrackerConfig, initial: Vec<HermitianMatrix>) -> Result<Self> {
        config.validate()?;
        if initial.is_empty() {
            return Err(Error::Dimension("no frequency bins".into()));
        }
        let order = initial[0].order();
        if initial.iter().any(|m| m.order() != order) {
            return Err(Error::Dimension("bins have different orders".into()));
        }
        let n = initial.len();
        Ok(Self { config, phi_y: initial.clone(), phi_u: initial, y_updates: vec![0; n], u_updates: vec![0; n] })
    }

    /// Average outer product of the first `init_frames` frames.
    pub fn from_preroll(config: TrackerConfig, stft: &StftTensor) -> Result<Self> {
        config.validate()?;
        if stft.num_frames() < config.init_frames {
            return Err(Error::Dimension(format!(
                "need {} initialization frames, signal has {}",
                config.init_frames,
                stft.num_frames()
            )));
        }
        let m = stft.num_channels();
        let inv = 1.0 / config.init_frames as f64;
        let initial = (0..stft.num_bins())
            .map(|k| {
                let mut acc = vec![C64::new(0.0, 0.0); m * m];
                for l in 0..config.init_frames {
                    let y = stft.bin_vector(l, k);
                    for i in 0..m {
                        for j in i..m {
                            acc[i * m + j] += y[i] * y[j].conj();
                        }
                    }
                }
                HermitianMatrix::from_upper(m, |i, j| acc[i * m + j] * inv)
            })
            .collect();
        Self::from_initial(config, initial)
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn num_bins(&self) -> usize {
        self.phi_y.len()
    }

    pub fn order(&self) -> usize {
        self.phi_y[0].order()
    }

    pub fn phi_y(&self, k: usize) -> &HermitianMatrix {
        &self.phi_y[k]
    }

    pub fn phi_u(&self, k: usize) -> &HermitianMatrix {
        &self.phi_u[k]
    }

    pub fn y_updates(&self, k: usize) -> usize {
        self.y_updates[k]
    }

    pub fn u_updates(&self, k: usize) -> usize {
        self.u_updates[k]
    }

    /// True once `Φ̂y` of bin `k` has seen a speech-and-noise update.
    pub fn speech_seen(&self, k: usize) -> bool {
        self.y_updates[k] > 0
    }

    #[inline]
    fn update_bin(&mut self, k: usize, y: &[C64], speech: bool) {
        if speech {
            self.phi_y[k].smooth_outer(self.config.alpha_y, y);
            self.y_updates[k] += 1;
        } else {
            self.phi_u[k].smooth_outer(self.config.alpha_u, y);
            self.u_updates[k] += 1;
        }
    }

    /// Applies one frame given as `y_frame[k]`.
    pub fn update(&mut self, y_frame: &[Vec<C64>], decisions: &[bool]) -> Result<()> {
        self.check(y_frame.len(), decisions.len())?;
        let m = self.order();
        if y_frame.iter().any(|y| y.len() != m) {
            return Err(Error::Dimension(format!("frame vectors must have length {m}")));
        }
        for (k, (y, &d)) in y_frame.iter().zip(decisions).enumerate() {
            self.update_bin(k, y, d);
        }
        Ok(())
    }

    /// Applies frame `frame` of `stft`.
    pub fn update_from(&mut self, stft: &StftTensor, frame: usize, decisions: &[bool]) -> Result<()> {
        self.check(stft.num_bins(), decisions.len())?;
        if stft.num_channels() != self.order() || frame >= stft.num_frames() {
            return Err(Error::Dimension(format!(
                "tensor with {} channels / {} frames does not fit tracker of order {}",
                stft.num_channels(),
                stft.num_frames(),
                self.order()
            )));
        }
        for (k, &d) in decisions.iter().enumerate() {
            self.update_bin(k, stft.bin_vector(frame, k), d);
        }
        Ok(())
    }

    fn check(&self, bins: usize, decisions: usize) -> Result<()> {
        if bins != self.num_bins() || decisions != self.num_bins() {
            return Err(Error::Dimension(format!(
                "expected {} bins, got {bins} vectors and {decisions} decisions",
                self.num_bins()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SppMode {
    /// Uses the clean speech and noise components from the simulator.
    Oracle,
    /// A-posteriori SNR through a logistic, averaged over the H microphones.
    Blind,
}

/// Per-bin ground-truth powers for oracle gating.
#[derive(Debug, Clone, Copy)]
pub struct OracleFrame<'a> {
    /// Clean-speech power averaged over the H microphones.
    pub speech_power: &'a [f64],
    /// Noise floor per bin.
    pub noise_floor: &'a [f64],
}

/// Lowest speech level, relative to the long-term speech power over all
/// bins, that oracle gating still calls speech (−30 dB). Keeps noiseless scenes
/// from treating numerically tiny onset leakage as speech.
pub const ORACLE_DYNAMIC_RANGE: f64 = 1e-3;

/// Oracle powers for a whole utterance.
#[derive(Debug, Clone)]
pub struct OracleSpp {
    num_bins: usize,
    speech_power: Vec<f64>,
    noise_floor: Vec<f64>,
}

impl OracleSpp {
    /// Speech power per TF bin, and the long-term mean noise power per bin,
    /// both averaged over the first `m_h` channels. The floor never drops
    /// below [`ORACLE_DYNAMIC_RANGE`] times the speech power averaged over
    /// all bins and frames.
    pub fn from_components(clean: &StftTensor, noise: &StftTensor, m_h: usize) -> Result<Self> {
        if clean.num_bins() != noise.num_bins()
            || clean.num_frames() != noise.num_frames()
            || m_h == 0
            || m_h > clean.num_channels().min(noise.num_channels())
        {
            return Err(Error::Dimension("speech and noise tensors do not match".into()));
        }
        let k_bins = clean.num_bins();
        let h_power = |t: &StftTensor, l: usize, k: usize| {
            t.bin_vector(l, k)[..m_h].iter().map(|z| z.norm_sqr()).sum::<f64>() / m_h as f64
        };
        let mut speech_power = Vec::with_capacity(clean.num_frames() * k_bins);
        for l in 0..clean.num_frames() {
            for k in 0..k_bins {
                speech_power.push(h_power(clean, l, k));
            }
        }
        let speech_mean = speech_power.iter().sum::<f64>() / speech_power.len() as f64;
        let noise_floor = (0..k_bins)
            .map(|k| {
                let noise_mean = (0..noise.num_frames()).map(|l| h_power(noise, l, k)).sum::<f64>() / noise.num_frames() as f64;
                noise_mean.max(ORACLE_DYNAMIC_RANGE * speech_mean)
            })
            .collect();
        Ok(Self { num_bins: k_bins, speech_power, noise_floor })
    }

    pub fn frame(&self, l: usize) -> OracleFrame<'_> {
        OracleFrame {
            speech_power: &self.speech_power[l * self.num_bins..(l + 1) * self.num_bins],
            noise_floor: &self.noise_floor,
        }
    }
}

/// Smoothing of the a-posteriori SNR across frames.
const BLIND_SNR_SMOOTHING: f64 = 0.8;
/// Noise PSD smoothing during noise-only bins.
const BLIND_NOISE_SMOOTHING: f64 = 0.9;
const LOGISTIC_MIDPOINT: f64 = 2.0;
const LOGISTIC_SLOPE: f64 = 1.0;

#[derive(Debug, Clone)]
struct BlindState {
    noise_psd: Vec<f64>,
    smoothed_snr: Vec<f64>,
}

/// Binary per-bin speech-presence decisions.
#[derive(Debug, Clone)]
pub struct SppGate {
    pub mode: SppMode,
    pub threshold: f64,
    /// Oracle: speech present iff speech power > `gamma` × noise floor.
    pub gamma: f64,
    m_h: usize,
    blind: Option<BlindState>,
}

impl SppGate {
    pub fn new(mode: SppMode, threshold: f64, m_h: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::Config(format!("threshold {threshold} outside [0, 1]")));
        }
        if m_h == 0 {
            return Err(Error::Config("SPP needs at least one H microphone".into()));
        }
        Ok(Self { mode, threshold, gamma: 1.0, m_h, blind: None })
    }

    pub fn oracle(m_h: usize) -> Self {
        Self::new(SppMode::Oracle, 0.5, m_h).expect("valid")
    }

    pub fn blind(m_h: usize) -> Self {
        Self::new(SppMode::Blind, 0.5, m_h).expect("valid")
    }

    /// Seeds the blind noise PSD with the mean power of the given frames.
    pub fn prime(&mut self, stft: &StftTensor, frames: std::ops::Range<usize>) -> Result<()> {
        if frames.is_empty() || frames.end > stft.num_frames() || stft.num_channels() < self.m_h {
            return Err(Error::Dimension("cannot prime SPP from these frames".into()));
        }
        let (k_bins, m_h) = (stft.num_bins(), self.m_h);
        let mut psd = vec![0.0; k_bins * m_h];
        let n = frames.len() as f64;
        for l in frames {
            for k in 0..k_bins {
                for (m, z) in stft.bin_vector(l, k)[..m_h].iter().enumerate() {
                    psd[k * m_h + m] += z.norm_sqr() / n;
                }
            }
        }
        self.blind = Some(BlindState { noise_psd: psd, smoothed_snr: vec![1.0; k_bins * m_h] });
        Ok(())
    }

    /// Per-bin decision for frame `frame`: `true` = speech-and-noise.
    pub fn decide(&mut self, stft: &StftTensor, frame: usize, oracle: Option<OracleFrame<'_>>) -> Result<Vec<bool>> {
        let k_bins = stft.num_bins();
        if frame >= stft.num_frames() {
            return Err(Error::Dimension(format!("frame {frame} out of range")));
        }
        match self.mode {
            SppMode::Oracle => {
                let o = oracle.ok_or_else(|| Error::Config("oracle SPP requires clean-speech data".into()))?;
                if o.speech_power.len() != k_bins || o.noise_floor.len() != k_bins {
                    return Err(Error::Dimension("oracle data does not match the frame".into()));
                }
                Ok(o.speech_power.iter().zip(o.noise_floor).map(|(&s, &n)| s > n * self.gamma).collect())
            }
            SppMode::Blind => {
                if stft.num_channels() < self.m_h {
                    return Err(Error::Dimension("frame has fewer channels than M_H".into()));
                }
                if self.blind.is_none() {
                    self.prime(stft, frame..frame + 1)?;
                }
                let m_h = self.m_h;
                let threshold = self.threshold;
                let state = self.blind.as_mut().expect("primed");
                if state.noise_psd.len() != k_bins * m_h {
                    return Err(Error::Dimension("SPP was primed with a different grid".into()));
                }
                let mut out = Vec::with_capacity(k_bins);
                for k in 0..k_bins {
                    let y = &stft.bin_vector(frame, k)[..m_h];
                    let mut p = 0.0;
                    for (m, z) in y.iter().enumerate() {
                        let i = k * m_h + m;
                        let post = z.norm_sqr() / state.noise_psd[i].max(f64::MIN_POSITIVE);
                        state.smoothed_snr[i] = BLIND_SNR_SMOOTHING * state.smoothed_snr[i] + (1.0 - BLIND_SNR_SMOOTHING) * post;
                        p += 1.0 / (1.0 + (-LOGISTIC_SLOPE * (state.smoothed_snr[i] - LOGISTIC_MIDPOINT)).exp());
                    }
                    let speech = p / m_h as f64 > threshold;
                    if !speech {
                        for (m, z) in y.iter().enumerate() {
                            let i = k * m_h + m;
                            state.noise_psd[i] =
                                BLIND_NOISE_SMOOTHING * state.noise_psd[i] + (1.0 - BLIND_NOISE_SMOOTHING) * z.norm_sqr();
                        }
                    }
                    out.push(speech);
                }
                Ok(out)
            }
        }
    }
}

/// Free-function form of [`SppGate::decide`].
pub fn spp_decide(
    gate: &mut SppGate,
    stft: &StftTensor,
    frame: usize,
    oracle: Option<OracleFrame<'_>>,
) -> Result<Vec<bool>> {
    gate.decide(stft, frame, oracle)
}
