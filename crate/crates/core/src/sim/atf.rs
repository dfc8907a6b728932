use crate::geometry::{azimuth_unit, ArrayGeometry};
use crate::linalg::C64;

/// Propagation delays (seconds) of a far-field plane wave from `doa_deg`,
/// relative to the array origin. Microphones closer to the source get
/// negative delays.
pub fn plane_wave_delays(geom: &ArrayGeometry, doa_deg: f64, c: f64) -> Vec<f64> {
    let u = azimuth_unit(doa_deg);
    geom.mic_positions
        .iter()
        .map(|p| -(p[0] * u[0] + p[1] * u[1]) / c)
        .collect()
}

/// Far-field acoustic transfer function: unit magnitude, phase `−2π f τ_m`.
pub fn freefield_atf(geom: &ArrayGeometry, doa_deg: f64, freq_hz: f64, c: f64) -> Vec<C64> {
    plane_wave_delays(geom, doa_deg, c)
        .into_iter()
        .map(|tau| C64::from_polar(1.0, -2.0 * std::f64::consts::PI * freq_hz * tau))
        .collect()
}
