//! Seeded speech-shaped source signals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Speech-shaped, syllable-rate modulated noise with unit RMS.
///
/// The carrier is white Gaussian noise through a first-order low-pass at
/// 800 Hz plus a −20 dB broadband component, so every STFT bin carries
/// energy. The sum goes through `(1 + z⁻¹)² / 4`, which puts a zero at
/// Nyquist where a real signal cannot be delayed fractionally.
/// The envelope is a raised-cosine interpolation of random levels drawn at
/// 8 Hz and mapped to [0.25, 1], with 10 ms raised-cosine fades at both ends.
pub fn speech_shaped_noise(num_samples: usize, sample_rate: u32, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = f64::from(sample_rate);
    let pole = (-2.0 * std::f64::consts::PI * 800.0 / fs).exp();
    let (mut lp, mut w1, mut w2) = (0.0, 0.0, 0.0);
    let carrier: Vec<f64> = (0..num_samples)
        .map(|_| {
            let w: f64 = rng.sample(StandardNormal);
            lp = pole * lp + (1.0 - pole) * w;
            let x = lp * 4.0 + 0.2 * w;
            let y = (x + 2.0 * w1 + w2) / 4.0;
            (w2, w1) = (w1, x);
            y
        })
        .collect();

    let knot_spacing = (fs / 8.0).max(1.0);
    let num_knots = (num_samples as f64 / knot_spacing).ceil() as usize + 2;
    let knots: Vec<f64> = (0..num_knots).map(|_| 0.25 + 0.75 * rng.random::<f64>()).collect();
    let mut out: Vec<f64> = carrier
        .iter()
        .enumerate()
        .map(|(n, &x)| {
            let pos = n as f64 / knot_spacing;
            let i = pos.floor() as usize;
            let frac = pos - i as f64;
            let w = 0.5 - 0.5 * (std::f64::consts::PI * frac).cos();
            x * (knots[i] * (1.0 - w) + knots[i + 1] * w)
        })
        .collect();
    let fade = ((0.01 * fs) as usize).min(num_samples / 2);
    for n in 0..fade {
        let g = 0.5 - 0.5 * (std::f64::consts::PI * (n as f64 + 0.5) / fade as f64).cos();
        out[n] *= g;
        out[num_samples - 1 - n] *= g;
    }
    let rms = (out.iter().map(|x| x * x).sum::<f64>() / num_samples.max(1) as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|x| *x /= rms);
    }
    out
}
