//! Multichannel STFT analysis with a square-root Hann window.
//!
//! Frames start at sample 0 with no padding, so
//! `L = floor((N − N_w) / hop) + 1`. The spectrum is one-sided with
//! `K = N_w / 2 + 1` bins.

use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::C64;

/// Analysis parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub window_len: usize,
    pub hop: usize,
}

impl StftConfig {
    pub fn new(sample_rate: u32, window_ms: f64, overlap_frac: f64) -> Result<Self> {
        if !(overlap_frac > 0.0 && overlap_frac < 1.0) {
            return Err(Error::Config(format!("overlap {overlap_frac} must lie in (0, 1)")));
        }
        let window = window_ms * f64::from(sample_rate) / 1000.0;
        let window_len = window.round() as usize;
        if (window - window_len as f64).abs() > 1e-9 || window_len < 2 {
            return Err(Error::Config(format!(
                "{window_ms} ms at {sample_rate} Hz is not an integral window length"
            )));
        }
        let hop_f = window_len as f64 * (1.0 - overlap_frac);
        let hop = hop_f.round() as usize;
        if (hop_f - hop as f64).abs() > 1e-9 || hop == 0 {
            return Err(Error::Config(format!("overlap {overlap_frac} gives a non-integral hop")));
        }
        Ok(Self { sample_rate, window_len, hop })
    }

    /// 16 kHz, 32 ms windows, 50 % overlap.
    pub fn standard() -> Self {
        Self { sample_rate: 16_000, window_len: 512, hop: 256 }
    }

    pub fn num_bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * f64::from(self.sample_rate) / self.window_len as f64
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop as f64 / f64::from(self.sample_rate)
    }

    pub fn num_frames(&self, num_samples: usize) -> usize {
        if num_samples < self.window_len {
            0
        } else {
            (num_samples - self.window_len) / self.hop + 1
        }
    }

    /// Periodic square-root Hann window.
    pub fn window(&self) -> Vec<f64> {
        let n = self.window_len as f64;
        (0..self.window_len)
            .map(|i| (std::f64::consts::PI * i as f64 / n).sin())
            .collect()
    }
}

/// Complex STFT of an M-channel signal.
#[derive(Debug, Clone, PartialEq)]
pub struct StftTensor {
    config: StftConfig,
    num_channels: usize,
    num_frames: usize,
    // layout [frame][bin][channel] so per-bin microphone vectors are contiguous
    data: Vec<C64>,
}

impl StftTensor {
    /// Builds a tensor from `frames[l][k][m]`.
    pub fn from_frames(config: StftConfig, frames: &[Vec<Vec<C64>>]) -> Result<Self> {
        let num_frames = frames.len();
        let k_bins = config.num_bins();
        let num_channels = frames.first().and_then(|f| f.first()).map_or(0, Vec::len);
        if num_frames == 0 || num_channels == 0 {
            return Err(Error::Dimension("empty tensor".into()));
        }
        let mut data = Vec::with_capacity(num_frames * k_bins * num_channels);
        for frame in frames {
            if frame.len() != k_bins || frame.iter().any(|v| v.len() != num_channels) {
                return Err(Error::Dimension("ragged frame data".into()));
            }
            for v in frame {
                data.extend_from_slice(v);
            }
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Dimension("non-finite STFT data".into()));
        }
        Ok(Self { config, num_channels, num_frames, data })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_bins(&self) -> usize {
        self.config.num_bins()
    }

    pub fn sample_rate(&self) -> u32 {
        self.config.sample_rate
    }

    #[inline]
    pub fn get(&self, channel: usize, frame: usize, bin: usize) -> C64 {
        self.data[(frame * self.num_bins() + bin) * self.num_channels + channel]
    }

    /// Microphone vector `y(k, l)`.
    #[inline]
    pub fn bin_vector(&self, frame: usize, bin: usize) -> &[C64] {
        let start = (frame * self.num_bins() + bin) * self.num_channels;
        &self.data[start..start + self.num_channels]
    }

    /// Restricts to a contiguous channel range.
    pub fn channels(&self, range: std::ops::Range<usize>) -> Result<StftTensor> {
        if range.end > self.num_channels || range.is_empty() {
            return Err(Error::Dimension(format!(
                "channels {range:?} out of {}",
                self.num_channels
            )));
        }
        let m = range.len();
        let mut data = Vec::with_capacity(self.num_frames * self.num_bins() * m);
        for chunk in self.data.chunks_exact(self.num_channels) {
            data.extend_from_slice(&chunk[range.clone()]);
        }
        Ok(StftTensor { config: self.config, num_channels: m, num_frames: self.num_frames, data })
    }
}

/// STFT analysis of equal-length channels.
pub fn analyze(signal: &[Vec<f64>], sample_rate: u32, window_ms: f64, overlap_frac: f64) -> Result<StftTensor> {
    analyze_with(signal, StftConfig::new(sample_rate, window_ms, overlap_frac)?)
}

pub fn analyze_with(signal: &[Vec<f64>], config: StftConfig) -> Result<StftTensor> {
    let num_channels = signal.len();
    if num_channels == 0 {
        return Err(Error::Dimension("no channels".into()));
    }
    let n = signal[0].len();
    if signal.iter().any(|c| c.len() != n) {
        return Err(Error::Dimension("channels have different lengths".into()));
    }
    if signal.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Dimension("signal contains non-finite samples".into()));
    }
    let num_frames = config.num_frames(n);
    if num_frames == 0 {
        return Err(Error::EmptyTensor { samples: n, window: config.window_len });
    }
    let k_bins = config.num_bins();
    let window = config.window();
    let fft = FftPlanner::new().plan_fft_forward(config.window_len);
    let mut buf = vec![C64::new(0.0, 0.0); config.window_len];
    let mut data = vec![C64::new(0.0, 0.0); num_frames * k_bins * num_channels];
    for (m, channel) in signal.iter().enumerate() {
        for l in 0..num_frames {
            let start = l * config.hop;
            for (b, (&x, &w)) in buf.iter_mut().zip(channel[start..start + config.window_len].iter().zip(&window)) {
                *b = C64::new(x * w, 0.0);
            }
            fft.process(&mut buf);
            for (k, &v) in buf[..k_bins].iter().enumerate() {
                data[(l * k_bins + k) * num_channels + m] = v;
            }
        }
    }
    Ok(StftTensor { config, num_channels, num_frames, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn direct_dft(frame: &[f64], k: usize) -> C64 {
        let n = frame.len() as f64;
        frame
            .iter()
            .enumerate()
            .map(|(i, &x)| C64::from_polar(x, -2.0 * std::f64::consts::PI * k as f64 * i as f64 / n))
            .sum()
    }

    #[test]
    fn standard_parameters() {
        let cfg = StftConfig::new(16_000, 32.0, 0.5).unwrap();
        assert_eq!(cfg.window_len, 512);
        assert_eq!(cfg.hop, 256);
        assert_eq!(cfg.num_bins(), 257);
        assert_eq!(cfg, StftConfig::standard());
    }

    #[test]
    fn invalid_parameters() {
        assert!(StftConfig::new(16_000, 32.0, 0.0).is_err());
        assert!(StftConfig::new(16_000, 32.0, 1.0).is_err());
        assert!(StftConfig::new(16_000, 32.03, 0.5).is_err());
        assert!(StftConfig::new(16_000, 32.0, 0.3).is_err());
    }

    #[test]
    fn frame_count() {
        let cfg = StftConfig::standard();
        let sig = vec![vec![0.0; 512 + 256 * 7 + 100]];
        let t = analyze_with(&sig, cfg).unwrap();
        assert_eq!(t.num_frames(), 8);
        assert!(t.data.iter().all(|z| *z == C64::new(0.0, 0.0)));
    }

    #[test]
    fn too_short_is_error() {
        let err = analyze(&[vec![0.0; 100]], 16_000, 32.0, 0.5).unwrap_err();
        assert!(matches!(err, Error::EmptyTensor { samples: 100, window: 512 }));
    }

    #[test]
    fn bin_centered_sinusoid_concentrates() {
        let cfg = StftConfig::standard();
        let k0 = 40;
        let f = cfg.bin_frequency(k0);
        let sig: Vec<f64> = (0..4096)
            .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / 16_000.0).cos())
            .collect();
        let t = analyze_with(std::slice::from_ref(&sig), cfg).unwrap();
        let w = cfg.window();
        for l in 0..t.num_frames() {
            let total: f64 = (0..t.num_bins()).map(|k| t.get(0, l, k).norm_sqr()).sum();
            // the sine window keeps 8/π² of a centred tone in its own bin and
            // the rest almost entirely in the two neighbours
            let e = t.get(0, l, k0).norm_sqr();
            let lobe: f64 = (k0 - 1..=k0 + 1).map(|k| t.get(0, l, k).norm_sqr()).sum();
            assert!((e / total - 8.0 / std::f64::consts::PI.powi(2)).abs() < 1e-3, "frame {l}: {}", e / total);
            assert!(lobe / total >= 0.9, "frame {l}: {}", lobe / total);
            // compare with a direct DFT of the windowed frame
            let frame: Vec<f64> = (0..512).map(|i| sig[l * 256 + i] * w[i]).collect();
            for k in [0, 7, k0, 256] {
                assert!((t.get(0, l, k) - direct_dft(&frame, k)).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn parseval_one_sided() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sig: Vec<f64> = (0..2048).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cfg = StftConfig::standard();
        let t = analyze_with(std::slice::from_ref(&sig), cfg).unwrap();
        let w = cfg.window();
        for l in 0..t.num_frames() {
            let frame_energy: f64 = (0..512).map(|i| (sig[l * 256 + i] * w[i]).powi(2)).sum();
            let k = t.num_bins();
            let mut spec: f64 = (0..k).map(|b| t.get(0, l, b).norm_sqr()).sum::<f64>() * 2.0;
            spec -= t.get(0, l, 0).norm_sqr() + t.get(0, l, k - 1).norm_sqr();
            spec /= 512.0;
            assert!((spec - frame_energy).abs() <= 1e-6 * frame_energy);
        }
    }

    #[test]
    fn channel_restriction() {
        let sig = vec![vec![1.0; 1024], vec![2.0; 1024], vec![3.0; 1024]];
        let t = analyze_with(&sig, StftConfig::standard()).unwrap();
        let e = t.channels(1..3).unwrap();
        assert_eq!(e.num_channels(), 2);
        assert_eq!(e.get(0, 1, 0), t.get(1, 1, 0));
        assert_eq!(e.get(1, 2, 0), t.get(2, 2, 0));
        assert!(t.channels(2..4).is_err());
    }
}
