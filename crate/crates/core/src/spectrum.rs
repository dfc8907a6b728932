//! Spatial spectra built from estimated RTF vectors and prototype databases.
//!
//! Every spectrum scores a hypothesis by the negative sum, over bins
//! `1..K−1` (DC and Nyquist excluded), of the phase distance between the
//! estimate and the hypothesis prototype. Higher scores are better and 0 is
//! a perfect phase match.
//!
//! Per bin the concatenated distance satisfies `d² = d_H² + d_E²`, so the
//! joint and matched spectra are evaluated from per-block squared distances
//! (`I + J` block distances per bin instead of `I·J` full ones). The sum over
//! bins is still of the unsquared distance.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angular_distance_deg, azimuth_unit, ScenePose};
use crate::linalg::C64;
use crate::rtf::RtfVector;
use crate::sim::PrototypeDb;

#[inline]
fn phasor(z: C64) -> C64 {
    let n = z.norm();
    if n > 0.0 {
        z / n
    } else {
        C64::new(1.0, 0.0)
    }
}

/// `‖exp(i∠a) − exp(i∠b)‖₂`; zero entries have phase 0.
pub fn phase_distance(a: &[C64], b: &[C64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("lengths {} and {}", a.len(), b.len())));
    }
    Ok(squared_phase_distance(a, b).sqrt())
}

fn squared_phase_distance(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (phasor(x) - phasor(y)).norm_sqr()).sum()
}

/// Squared distance between already unit-modulus vectors.
#[inline]
fn unit_sq_dist(u: &[C64], p: &[C64]) -> f64 {
    u.iter().zip(p).map(|(a, b)| (a - b).norm_sqr()).sum()
}

/// Bins contributing to spectra.
pub fn spectral_bins(num_bins: usize) -> std::ops::Range<usize> {
    1..num_bins.saturating_sub(1)
}

/// Unit phasors of a database, laid out `[bin][angle][mic]`.
#[derive(Debug, Clone)]
pub struct PhasorTable {
    angles_deg: Vec<f64>,
    num_bins: usize,
    num_mics: usize,
    data: Vec<C64>,
}

impl PhasorTable {
    pub fn new(db: &PrototypeDb) -> Self {
        let (i_n, k_n, m_n) = (db.num_angles(), db.num_bins(), db.num_mics());
        let mut data = Vec::with_capacity(i_n * k_n * m_n);
        for k in 0..k_n {
            for i in 0..i_n {
                data.extend(db.entry(i, k).iter().map(|&z| phasor(z)));
            }
        }
        Self { angles_deg: db.angles_deg().to_vec(), num_bins: k_n, num_mics: m_n, data }
    }

    pub fn angles_deg(&self) -> &[f64] {
        &self.angles_deg
    }

    pub fn num_mics(&self) -> usize {
        self.num_mics
    }

    /// Squared phase distance from the unit vector `u` to every angle at bin `k`.
    fn sq_distances(&self, k: usize, u: &[C64], out: &mut [f64]) {
        let m = self.num_mics;
        let base = k * self.angles_deg.len() * m;
        for (i, o) in out.iter_mut().enumerate() {
            let p = &self.data[base + i * m..base + (i + 1) * m];
            *o = unit_sq_dist(u, p);
        }
    }

    fn check_estimates(&self, est: &[Option<RtfVector>], len: usize) -> Result<()> {
        if est.len() != self.num_bins {
            return Err(Error::Dimension(format!(
                "{} estimated bins vs {} database bins",
                est.len(),
                self.num_bins
            )));
        }
        if est.iter().flatten().any(|g| g.len() != len) {
            return Err(Error::Dimension(format!("estimated RTF vectors must have length {len}")));
        }
        Ok(())
    }
}

fn unit_vector(g: &RtfVector) -> Vec<C64> {
    g.as_slice().iter().map(|&z| phasor(z)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialSpectrum1D {
    pub frame: usize,
    pub angles_deg: Vec<f64>,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialSpectrum2D {
    pub frame: usize,
    pub angles_h_deg: Vec<f64>,
    pub angles_e_deg: Vec<f64>,
    /// Row-major `[θ_i][θ_E,j]`.
    pub scores: Vec<f64>,
}

impl SpatialSpectrum1D {
    /// Adds another spectrum on the same grid (utterance-level aggregation).
    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        if self.angles_deg != other.angles_deg {
            return Err(Error::Dimension("spectra are on different grids".into()));
        }
        self.scores.iter_mut().zip(&other.scores).for_each(|(a, b)| *a += b);
        Ok(())
    }
}

impl SpatialSpectrum2D {
    #[inline]
    pub fn score(&self, i: usize, j: usize) -> f64 {
        self.scores[i * self.angles_e_deg.len() + j]
    }

    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        if self.angles_h_deg != other.angles_h_deg || self.angles_e_deg != other.angles_e_deg {
            return Err(Error::Dimension("spectra are on different grids".into()));
        }
        self.scores.iter_mut().zip(&other.scores).for_each(|(a, b)| *a += b);
        Ok(())
    }
}

/// 1D spectrum from H-block estimates; `None` bins are skipped.
pub fn spectrum_1d(g_h: &[Option<RtfVector>], db_h: &PrototypeDb) -> Result<SpatialSpectrum1D> {
    spectrum_1d_with(g_h, &PhasorTable::new(db_h), 0)
}

pub fn spectrum_1d_with(g_h: &[Option<RtfVector>], table: &PhasorTable, frame: usize) -> Result<SpatialSpectrum1D> {
    table.check_estimates(g_h, table.num_mics)?;
    let n = table.angles_deg.len();
    let mut scores = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    for k in spectral_bins(table.num_bins) {
        if let Some(g) = &g_h[k] {
            table.sq_distances(k, &unit_vector(g), &mut d2);
            scores.iter_mut().zip(&d2).for_each(|(s, d)| *s -= d.sqrt());
        }
    }
    Ok(SpatialSpectrum1D { frame, angles_deg: table.angles_deg.clone(), scores })
}

/// Per-bin split of a concatenated estimate for the joint spectra.
/// `None` E parts drop the E term of that bin.
#[derive(Debug, Clone)]
pub struct JointEstimate {
    pub g_h: RtfVector,
    pub g_e: Option<RtfVector>,
}

impl JointEstimate {
    /// Splits `[g_H; g_E]` with `m_h` H entries.
    pub fn split(g_tilde: &RtfVector, m_h: usize) -> Result<Self> {
        let m_e = g_tilde.len().checked_sub(m_h).filter(|&e| e > 0 && m_h > 0).ok_or_else(|| {
            Error::Dimension(format!("cannot split length {} at {m_h}", g_tilde.len()))
        })?;
        let g_h = crate::rtf::extract_block(g_tilde, crate::rtf::SelectionOperator::h(m_h, m_e))?;
        let g_e = crate::rtf::extract_block(g_tilde, crate::rtf::SelectionOperator::e(m_h, m_e)).ok();
        Ok(Self { g_h, g_e })
    }
}

struct BlockDistances {
    /// `[bin][angle]`, only for bins with an estimate.
    dh: Vec<Option<Vec<f64>>>,
    de: Vec<Option<Vec<f64>>>,
}

fn block_distances(est: &[Option<JointEstimate>], th: &PhasorTable, te: &PhasorTable) -> Result<BlockDistances> {
    if est.len() != th.num_bins || th.num_bins != te.num_bins {
        return Err(Error::Dimension(format!(
            "{} estimated bins vs database bins {} / {}",
            est.len(),
            th.num_bins,
            te.num_bins
        )));
    }
    let mut dh = vec![None; est.len()];
    let mut de = vec![None; est.len()];
    for k in spectral_bins(th.num_bins) {
        let Some(e) = &est[k] else { continue };
        if e.g_h.len() != th.num_mics || e.g_e.as_ref().is_some_and(|g| g.len() != te.num_mics) {
            return Err(Error::Dimension("estimate blocks do not match the databases".into()));
        }
        let mut h = vec![0.0; th.angles_deg.len()];
        th.sq_distances(k, &unit_vector(&e.g_h), &mut h);
        dh[k] = Some(h);
        de[k] = e.g_e.as_ref().map(|g| {
            let mut v = vec![0.0; te.angles_deg.len()];
            te.sq_distances(k, &unit_vector(g), &mut v);
            v
        });
    }
    Ok(BlockDistances { dh, de })
}

/// Joint spectrum over all `(θ_i, θ_E,j)` pairs.
pub fn spectrum_2d(g_tilde: &[Option<RtfVector>], db_h: &PrototypeDb, db_e: &PrototypeDb) -> Result<SpatialSpectrum2D> {
    let m_h = db_h.num_mics();
    let est = g_tilde
        .iter()
        .map(|g| g.as_ref().map(|g| JointEstimate::split(g, m_h)).transpose())
        .collect::<Result<Vec<_>>>()?;
    spectrum_2d_with(&est, &PhasorTable::new(db_h), &PhasorTable::new(db_e), 0)
}

pub fn spectrum_2d_with(
    est: &[Option<JointEstimate>],
    th: &PhasorTable,
    te: &PhasorTable,
    frame: usize,
) -> Result<SpatialSpectrum2D> {
    let dist = block_distances(est, th, te)?;
    let (ni, nj) = (th.angles_deg.len(), te.angles_deg.len());
    let mut scores = vec![0.0; ni * nj];
    for (dh, de) in dist.dh.iter().zip(&dist.de) {
        let Some(dh) = dh else { continue };
        match de {
            Some(de) => {
                for (row, &h) in scores.chunks_exact_mut(nj).zip(dh) {
                    for (s, &e) in row.iter_mut().zip(de) {
                        *s -= (h + e).sqrt();
                    }
                }
            }
            None => {
                for (row, &h) in scores.chunks_exact_mut(nj).zip(dh) {
                    let d = h.sqrt();
                    row.iter_mut().for_each(|s| *s -= d);
                }
            }
        }
    }
    Ok(SpatialSpectrum2D { frame, angles_h_deg: th.angles_deg.clone(), angles_e_deg: te.angles_deg.clone(), scores })
}

/// One hypothesis pair steering both arrays to the same candidate position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub h_index: usize,
    pub e_index: usize,
    pub theta_h_deg: f64,
    /// Angle seen from E before snapping to its grid.
    pub theta_e_exact_deg: f64,
    pub theta_e_deg: f64,
    pub position: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPairSet {
    pub pairs: Vec<MatchedPair>,
}

impl MatchedPairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Largest half-gap between neighbouring grid angles on the circle.
fn coverage_half_gap(angles: &[f64]) -> f64 {
    if angles.len() < 2 {
        return 0.0;
    }
    let mut gap: f64 = 360.0 - (angles[angles.len() - 1] - angles[0]);
    for w in angles.windows(2) {
        gap = gap.min(w[1] - w[0]).max(0.0);
    }
    // use the regular spacing of the grid, not its largest hole
    gap / 2.0
}

/// Candidate positions on a ring of `radius` around H at `count` equally
/// spaced azimuths starting at `start_deg`, snapped to the H grid; the E
/// angle of each candidate follows from the poses and is snapped to the E
/// grid. Candidates whose E angle is further than half a grid step from
/// every E angle are dropped.
pub fn build_matched_pairs_from(
    angles_h: &[f64],
    angles_e: &[f64],
    pose_h: &ScenePose,
    pose_e: &ScenePose,
    radius: f64,
    count: usize,
    start_deg: f64,
) -> Result<MatchedPairSet> {
    if count == 0 || !(radius > 0.0) || angles_h.is_empty() || angles_e.is_empty() {
        return Err(Error::Config("matched pairs need positive radius, count and nonempty grids".into()));
    }
    let nearest = |angles: &[f64], a: f64| {
        let mut best = 0;
        for (i, &x) in angles.iter().enumerate() {
            if angular_distance_deg(x, a) < angular_distance_deg(angles[best], a) - 1e-12 {
                best = i;
            }
        }
        best
    };
    let e_half_gap = coverage_half_gap(angles_e);
    let mut pairs: Vec<MatchedPair> = Vec::new();
    for p in 0..count {
        let target = start_deg + 360.0 * p as f64 / count as f64;
        let h_index = nearest(angles_h, target);
        let theta_h = angles_h[h_index];
        let u = azimuth_unit(theta_h);
        let position = pose_h.local_to_global([u[0] * radius, u[1] * radius]);
        let theta_e_exact = match pose_e.bearing_to(position) {
            Ok((az, _)) => az,
            Err(_) => {
                log::warn!("candidate at {theta_h}° coincides with the E array; dropped");
                continue;
            }
        };
        let e_index = nearest(angles_e, theta_e_exact);
        if angles_e.len() > 1 && angular_distance_deg(angles_e[e_index], theta_e_exact) > e_half_gap + 1e-9 {
            log::warn!("candidate at {theta_h}° falls outside the E database coverage; dropped");
            continue;
        }
        if pairs.iter().any(|q| q.h_index == h_index && q.e_index == e_index) {
            continue;
        }
        pairs.push(MatchedPair {
            h_index,
            e_index,
            theta_h_deg: theta_h,
            theta_e_exact_deg: theta_e_exact,
            theta_e_deg: angles_e[e_index],
            position,
        });
    }
    if pairs.is_empty() {
        return Err(Error::Config("no matched pair survived".into()));
    }
    Ok(MatchedPairSet { pairs })
}

/// Ring starting at −180°.
pub fn build_matched_pairs(
    angles_h: &[f64],
    angles_e: &[f64],
    pose_h: &ScenePose,
    pose_e: &ScenePose,
    radius: f64,
    count: usize,
) -> Result<MatchedPairSet> {
    build_matched_pairs_from(angles_h, angles_e, pose_h, pose_e, radius, count, -180.0)
}

/// Matched spectrum; one score per pair, indexed by the pair's H angle.
pub fn spectrum_matched(
    g_tilde: &[Option<RtfVector>],
    db_h: &PrototypeDb,
    db_e: &PrototypeDb,
    pairs: &MatchedPairSet,
) -> Result<SpatialSpectrum1D> {
    let m_h = db_h.num_mics();
    let est = g_tilde
        .iter()
        .map(|g| g.as_ref().map(|g| JointEstimate::split(g, m_h)).transpose())
        .collect::<Result<Vec<_>>>()?;
    spectrum_matched_with(&est, &PhasorTable::new(db_h), &PhasorTable::new(db_e), pairs, 0)
}

pub fn spectrum_matched_with(
    est: &[Option<JointEstimate>],
    th: &PhasorTable,
    te: &PhasorTable,
    pairs: &MatchedPairSet,
    frame: usize,
) -> Result<SpatialSpectrum1D> {
    if pairs.is_empty() {
        return Err(Error::Config("matched spectrum needs at least one pair".into()));
    }
    if pairs.pairs.iter().any(|p| p.h_index >= th.angles_deg.len() || p.e_index >= te.angles_deg.len()) {
        return Err(Error::Dimension("pair indices exceed the databases".into()));
    }
    let dist = block_distances(est, th, te)?;
    let mut scores = vec![0.0; pairs.len()];
    for (dh, de) in dist.dh.iter().zip(&dist.de) {
        let Some(dh) = dh else { continue };
        for (s, p) in scores.iter_mut().zip(&pairs.pairs) {
            let e = de.as_ref().map_or(0.0, |de| de[p.e_index]);
            *s -= (dh[p.h_index] + e).sqrt();
        }
    }
    Ok(SpatialSpectrum1D { frame, angles_deg: pairs.pairs.iter().map(|p| p.theta_h_deg).collect(), scores })
}

/// Main peak of a spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoaEstimate {
    pub theta_deg: f64,
    pub theta_e_deg: Option<f64>,
    pub score: f64,
    /// All scores were equal.
    pub flat: bool,
}

/// Tie-break order: smaller |angle| first, then the smaller angle.
fn preferred(a: f64, b: f64) -> bool {
    (a.abs(), a) < (b.abs(), b)
}

pub trait Spectrum {
    fn pick_doa(&self) -> Result<DoaEstimate>;
}

impl Spectrum for SpatialSpectrum1D {
    fn pick_doa(&self) -> Result<DoaEstimate> {
        if self.scores.is_empty() || self.scores.len() != self.angles_deg.len() {
            return Err(Error::Dimension("empty or malformed spectrum".into()));
        }
        let mut best = 0;
        for i in 1..self.scores.len() {
            let (s, b) = (self.scores[i], self.scores[best]);
            if s > b || (s == b && preferred(self.angles_deg[i], self.angles_deg[best])) {
                best = i;
            }
        }
        let flat = self.scores.iter().all(|&s| s == self.scores[0]);
        Ok(DoaEstimate { theta_deg: self.angles_deg[best], theta_e_deg: None, score: self.scores[best], flat })
    }
}

impl Spectrum for SpatialSpectrum2D {
    fn pick_doa(&self) -> Result<DoaEstimate> {
        let (ni, nj) = (self.angles_h_deg.len(), self.angles_e_deg.len());
        if ni == 0 || nj == 0 || self.scores.len() != ni * nj {
            return Err(Error::Dimension("empty or malformed spectrum".into()));
        }
        let mut best = (0, 0);
        for i in 0..ni {
            for j in 0..nj {
                let (s, b) = (self.score(i, j), self.score(best.0, best.1));
                let tie_better = || {
                    let (ai, bi) = (self.angles_h_deg[i], self.angles_h_deg[best.0]);
                    preferred(ai, bi) || (ai == bi && preferred(self.angles_e_deg[j], self.angles_e_deg[best.1]))
                };
                if s > b || (s == b && tie_better()) {
                    best = (i, j);
                }
            }
        }
        let flat = self.scores.iter().all(|&s| s == self.scores[0]);
        Ok(DoaEstimate {
            theta_deg: self.angles_h_deg[best.0],
            theta_e_deg: Some(self.angles_e_deg[best.1]),
            score: self.score(best.0, best.1),
            flat,
        })
    }
}

pub fn pick_doa(spectrum: &impl Spectrum) -> Result<DoaEstimate> {
    spectrum.pick_doa()
}

/// `frame,<angle>...` header followed by one row per frame.
pub fn write_csv_1d(w: &mut impl Write, spectra: &[SpatialSpectrum1D]) -> Result<()> {
    let Some(first) = spectra.first() else { return Ok(()) };
    write!(w, "frame")?;
    for a in &first.angles_deg {
        write!(w, ",{a}")?;
    }
    writeln!(w)?;
    for s in spectra {
        if s.angles_deg != first.angles_deg {
            return Err(Error::Dimension("spectra on different grids".into()));
        }
        write!(w, "{}", s.frame)?;
        for v in &s.scores {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Long form: `frame,theta_h,theta_e,score`.
pub fn write_csv_2d(w: &mut impl Write, spectra: &[SpatialSpectrum2D]) -> Result<()> {
    writeln!(w, "frame,theta_h,theta_e,score")?;
    for s in spectra {
        for (i, a) in s.angles_h_deg.iter().enumerate() {
            for (j, b) in s.angles_e_deg.iter().enumerate() {
                writeln!(w, "{},{a},{b},{}", s.frame, s.score(i, j))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ArrayGeometry;
    use crate::sim::{build_prototype_db, parse_angles};
    use crate::stft::StftConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn grid_db(geom: &ArrayGeometry) -> PrototypeDb {
        build_prototype_db(geom, &parse_angles("-180:5:175").unwrap(), &StftConfig::standard()).unwrap()
    }

    fn db_estimates(db: &PrototypeDb, i: usize) -> Vec<Option<RtfVector>> {
        (0..db.num_bins()).map(|k| Some(db.rtf(i, k))).collect()
    }

    #[test]
    fn phase_distance_basics() {
        let a = [c(1.0, 2.0), c(-3.0, 0.5), c(0.0, 1.0), c(2.0, 2.0)];
        assert_eq!(phase_distance(&a, &a).unwrap(), 0.0);
        let neg: Vec<C64> = a.iter().map(|z| -z).collect();
        assert!((phase_distance(&a, &neg).unwrap() - 4.0).abs() < 1e-12);
        assert!(phase_distance(&a, &a[..3]).is_err());
        // zero entries take phase 0
        assert_eq!(phase_distance(&[c(0.0, 0.0)], &[c(5.0, 0.0)]).unwrap(), 0.0);
    }

    #[test]
    fn phase_distance_matches_naive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let n = rng.random_range(1..10);
            let a: Vec<C64> = (0..n).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            let b: Vec<C64> = (0..n).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            let mut naive = 0.0;
            for m in 0..n {
                let (pa, pb) = (a[m].arg(), b[m].arg());
                naive += (pa.cos() - pb.cos()).powi(2) + (pa.sin() - pb.sin()).powi(2);
            }
            assert!((phase_distance(&a, &b).unwrap() - naive.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_match_scores_zero() {
        let db = grid_db(&ArrayGeometry::default_binaural());
        let i = db.index_of(-120.0).unwrap();
        let s = spectrum_1d(&db_estimates(&db, i), &db).unwrap();
        assert_eq!(s.scores[i], 0.0);
        assert!(s.scores.iter().all(|&v| v <= 0.0));
        assert_eq!(s.pick_doa().unwrap().theta_deg, -120.0);
    }

    #[test]
    fn missing_bins_give_flat_spectrum() {
        let db = grid_db(&ArrayGeometry::default_binaural());
        let s = spectrum_1d(&vec![None; db.num_bins()], &db).unwrap();
        assert!(s.scores.iter().all(|&v| v == 0.0));
        let d = s.pick_doa().unwrap();
        assert!(d.flat);
        assert_eq!(d.theta_deg, 0.0);
        assert!(spectrum_1d(&vec![None; 3], &db).is_err());
    }

    #[test]
    fn joint_with_single_e_angle_is_column() {
        let geom = ArrayGeometry::default_binaural();
        let db_h = grid_db(&geom);
        let db_e = build_prototype_db(&geom, &[30.0], &StftConfig::standard()).unwrap();
        let (ih, ie) = (db_h.index_of(50.0).unwrap(), 0);
        let est: Vec<Option<RtfVector>> = (0..db_h.num_bins())
            .map(|k| Some(crate::rtf::concat_estimated(&db_h.rtf(ih, k), &db_e.rtf(ie, k))))
            .collect();
        let s2 = spectrum_2d(&est, &db_h, &db_e).unwrap();
        let h_only: Vec<Option<RtfVector>> = (0..db_h.num_bins()).map(|k| Some(db_h.rtf(ih, k))).collect();
        let s1 = spectrum_1d(&h_only, &db_h).unwrap();
        // the E term is zero here, so the column equals the 1D spectrum
        for i in 0..db_h.num_angles() {
            assert!((s2.score(i, 0) - s1.scores[i]).abs() < 1e-9);
        }
        let d = s2.pick_doa().unwrap();
        assert_eq!((d.theta_deg, d.theta_e_deg), (50.0, Some(30.0)));
    }

    #[test]
    fn joint_matches_naive_concatenated_distance() {
        let geom = ArrayGeometry::default_binaural();
        let cfg = StftConfig { sample_rate: 16_000, window_len: 16, hop: 8 };
        let angles = parse_angles("-180:30:150").unwrap();
        let db_h = build_prototype_db(&geom, &angles, &cfg).unwrap();
        let db_e = build_prototype_db(&ArrayGeometry::linear(3, 0.05), &angles, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let est: Vec<Option<RtfVector>> = (0..cfg.num_bins())
            .map(|_| {
                let mut v: Vec<C64> = (0..7).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
                v[0] = c(1.0, 0.0);
                v[4] = c(1.0, 0.0);
                Some(RtfVector::from_normalized(v, 0).unwrap())
            })
            .collect();
        let s2 = spectrum_2d(&est, &db_h, &db_e).unwrap();
        for i in 0..db_h.num_angles() {
            for j in 0..db_e.num_angles() {
                let mut naive = 0.0;
                for k in 1..cfg.num_bins() - 1 {
                    let mut proto = db_h.entry(i, k).to_vec();
                    proto.extend_from_slice(db_e.entry(j, k));
                    naive -= phase_distance(est[k].as_ref().unwrap().as_slice(), &proto).unwrap();
                }
                assert!((s2.score(i, j) - naive).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pick_doa_tie_breaks() {
        let s = SpatialSpectrum1D { frame: 0, angles_deg: vec![-40.0, 0.0, 40.0], scores: vec![-1.0, -2.0, -1.0] };
        assert_eq!(s.pick_doa().unwrap().theta_deg, -40.0);
        let s = SpatialSpectrum1D { frame: 0, angles_deg: vec![-120.0, 0.0, 40.0], scores: vec![-1.0, -2.0, -3.0] };
        let d = s.pick_doa().unwrap();
        assert_eq!(d.theta_deg, -120.0);
        assert!(!d.flat);
        let shifted = SpatialSpectrum1D { scores: s.scores.iter().map(|v| v + 10.0).collect(), ..s.clone() };
        assert_eq!(shifted.pick_doa().unwrap().theta_deg, -120.0);
        let empty = SpatialSpectrum1D { frame: 0, angles_deg: vec![], scores: vec![] };
        assert!(empty.pick_doa().is_err());
    }

    #[test]
    fn matched_pairs_for_identical_frames() {
        let angles = parse_angles("-180:5:175").unwrap();
        let angles = crate::sim::normalize_angles(&angles).unwrap();
        let pose = ScenePose::default();
        let pairs = build_matched_pairs(&angles, &angles, &pose, &pose, 2.0, 20).unwrap();
        assert_eq!(pairs.len(), 20);
        for p in &pairs.pairs {
            assert!(angular_distance_deg(p.theta_e_exact_deg, p.theta_h_deg) < 1e-9);
            assert_eq!(p.theta_e_deg, p.theta_h_deg);
        }
        assert!(build_matched_pairs(&angles, &angles, &pose, &pose, 2.0, 0).is_err());
    }

    #[test]
    fn matched_pairs_drop_uncovered_candidates() {
        let front: Vec<f64> = (-18..=18).map(|i| i as f64 * 5.0).collect();
        let all = crate::sim::normalize_angles(&parse_angles("-180:5:175").unwrap()).unwrap();
        let pose = ScenePose::default();
        let pairs = build_matched_pairs(&all, &front, &pose, &pose, 2.0, 36).unwrap();
        assert!(pairs.pairs.iter().all(|p| p.theta_e_exact_deg.abs() <= 92.5));
        assert!(pairs.len() < 36);
    }

    #[test]
    fn matched_with_colocated_arrays_is_diagonal_of_joint() {
        let geom = ArrayGeometry::default_binaural();
        let db = grid_db(&geom);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let est: Vec<Option<RtfVector>> = (0..db.num_bins())
            .map(|_| {
                let mut v: Vec<C64> = (0..8).map(|_| C64::from_polar(1.0, rng.random_range(-3.0..3.0))).collect();
                v[0] = c(1.0, 0.0);
                v[4] = c(1.0, 0.0);
                Some(RtfVector::from_normalized(v, 0).unwrap())
            })
            .collect();
        let pose = ScenePose::default();
        let pairs = build_matched_pairs(db.angles_deg(), db.angles_deg(), &pose, &pose, 2.0, 72).unwrap();
        assert_eq!(pairs.len(), 72);
        let m = spectrum_matched(&est, &db, &db, &pairs).unwrap();
        let j = spectrum_2d(&est, &db, &db).unwrap();
        for (p, s) in pairs.pairs.iter().zip(&m.scores) {
            assert!((j.score(p.h_index, p.e_index) - s).abs() < 1e-12);
        }
        let single = MatchedPairSet { pairs: vec![pairs.pairs[3].clone()] };
        let m1 = spectrum_matched(&est, &db, &db, &single).unwrap();
        assert_eq!(m1.pick_doa().unwrap().theta_deg, pairs.pairs[3].theta_h_deg);
        assert!(spectrum_matched(&est, &db, &db, &MatchedPairSet { pairs: vec![] }).is_err());
    }

    #[test]
    fn csv_dumps() {
        let s = SpatialSpectrum1D { frame: 3, angles_deg: vec![-5.0, 0.0], scores: vec![-1.5, -0.5] };
        let mut out = Vec::new();
        write_csv_1d(&mut out, &[s]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "frame,-5,0\n3,-1.5,-0.5\n");
        let s2 = SpatialSpectrum2D { frame: 1, angles_h_deg: vec![0.0, 5.0], angles_e_deg: vec![10.0], scores: vec![-1.0, -2.0] };
        let mut out = Vec::new();
        write_csv_2d(&mut out, &[s2]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "frame,theta_h,theta_e,score\n1,0,10,-1\n1,5,10,-2\n");
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use crate::geometry::ArrayGeometry;
    use crate::sim::{build_prototype_db, parse_angles};
    use crate::stft::StftConfig;
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn dbs() -> &'static (PrototypeDb, PrototypeDb) {
        static DBS: OnceLock<(PrototypeDb, PrototypeDb)> = OnceLock::new();
        DBS.get_or_init(|| {
            let cfg = StftConfig::standard();
            let angles = parse_angles("-180:20:160").unwrap();
            (
                build_prototype_db(&ArrayGeometry::default_binaural(), &angles, &cfg).unwrap(),
                build_prototype_db(&ArrayGeometry::linear(3, 0.05), &angles, &cfg).unwrap(),
            )
        })
    }

    fn cvec(n: usize) -> impl Strategy<Value = Vec<C64>> {
        prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64).prop_map(|(r, i)| C64::new(r, i)), n)
    }

    fn triple() -> impl Strategy<Value = (Vec<C64>, Vec<C64>, Vec<C64>)> {
        (1usize..9).prop_flat_map(|n| (cvec(n), cvec(n), cvec(n)))
    }

    fn estimates(m: usize, k: usize) -> impl Strategy<Value = Vec<Option<RtfVector>>> {
        prop::collection::vec(prop::option::weighted(0.9, cvec(m - 1)), k).prop_map(|bins| {
            bins.into_iter()
                .map(|b| {
                    b.map(|rest| {
                        let mut v = vec![C64::new(1.0, 0.0)];
                        v.extend(rest);
                        RtfVector::from_normalized(v, 0).unwrap()
                    })
                })
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pseudometric((a, b, c) in triple()) {
            let d = |x: &[C64], y: &[C64]| phase_distance(x, y).unwrap();
            prop_assert!((d(&a, &b) - d(&b, &a)).abs() <= 1e-12);
            prop_assert!(d(&a, &a) <= 1e-12);
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
        }

        #[test]
        fn positive_scaling_invariance((a, b, _) in triple(), s in prop::collection::vec(1e-3..1e3f64, 8)) {
            let scaled: Vec<C64> = a.iter().zip(&s).map(|(z, f)| z * f).collect();
            let d0 = phase_distance(&a, &b).unwrap();
            prop_assert!((phase_distance(&scaled, &b).unwrap() - d0).abs() <= 1e-12);
        }

        #[test]
        fn concat_distance_squares_add((h1, h2, _) in triple(), (e1, e2, _) in triple()) {
            let cat = |x: &[C64], y: &[C64]| [x, y].concat();
            let dc = phase_distance(&cat(&h1, &e1), &cat(&h2, &e2)).unwrap();
            let dh = phase_distance(&h1, &h2).unwrap();
            let de = phase_distance(&e1, &e2).unwrap();
            prop_assert!((dc * dc - dh * dh - de * de).abs() <= 1e-12);
        }

        #[test]
        fn spectrum_scores_bounded(est in estimates(7, 257)) {
            let (db_h, db_e) = dbs();
            let k = db_h.num_bins() as f64;
            let hs: Vec<Option<RtfVector>> = est
                .iter()
                .map(|g| g.as_ref().map(|g| RtfVector::normalize(g.as_slice()[..4].to_vec(), 0).unwrap()))
                .collect();
            let one = spectrum_1d(&hs, db_h).unwrap();
            let lo1 = -(k - 2.0) * 2.0 * 4f64.sqrt();
            prop_assert!(one.scores.iter().all(|&s| s <= 0.0 && s >= lo1 && s.is_finite()));
            let two = spectrum_2d(&est, db_h, db_e).unwrap();
            let lo2 = -(k - 2.0) * 2.0 * 7f64.sqrt();
            prop_assert_eq!(two.scores.len(), db_h.num_angles() * db_e.num_angles());
            prop_assert!(two.scores.iter().all(|&s| s <= 0.0 && s >= lo2 && s.is_finite()));
        }

        #[test]
        fn pick_doa_ignores_offsets(scores in prop::collection::vec(-50.0..0.0f64, 18), shift in -1e3..1e3f64) {
            let angles: Vec<f64> = (0..18).map(|i| -180.0 + 20.0 * i as f64).collect();
            let base = SpatialSpectrum1D { frame: 0, angles_deg: angles.clone(), scores: scores.clone() };
            let moved = SpatialSpectrum1D { frame: 0, angles_deg: angles, scores: scores.iter().map(|s| s + shift).collect() };
            let (a, b) = (pick_doa(&base).unwrap(), pick_doa(&moved).unwrap());
            // an offset can merge near-ties in floating point; only distinct maxima are comparable
            let mut sorted = scores.clone();
            sorted.sort_by(|x, y| y.total_cmp(x));
            prop_assume!(sorted[0] - sorted[1] > 1e-9);
            prop_assert_eq!(a.theta_deg, b.theta_deg);
        }
    }
}
