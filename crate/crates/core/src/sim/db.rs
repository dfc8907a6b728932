//! Prototype RTF databases and the RTFDB1 container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        6 bytes  "RTFDB1"
//! sample_rate  u32
//! window_len   u32
//! K            u32      number of one-sided bins
//! M_arr        u32      microphones per vector
//! I            u32      number of angles
//! angles       I × f64  degrees, ascending
//! data         I × K × M_arr × (f64 re, f64 im)   row-major [angle][bin][mic]
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{angular_distance_deg, wrap_deg, ArrayGeometry, SPEED_OF_SOUND};
use crate::linalg::C64;
use crate::rtf::RtfVector;
use crate::sim::atf::freefield_atf;
use crate::stft::StftConfig;

pub const MAGIC: &[u8; 6] = b"RTFDB1";

/// Anechoic prototype RTF vectors on an angular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeDb {
    angles_deg: Vec<f64>,
    sample_rate: u32,
    window_len: usize,
    num_bins: usize,
    num_mics: usize,
    reference: usize,
    data: Vec<C64>,
}

impl PrototypeDb {
    pub fn angles_deg(&self) -> &[f64] {
        &self.angles_deg
    }

    pub fn num_angles(&self) -> usize {
        self.angles_deg.len()
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn num_mics(&self) -> usize {
        self.num_mics
    }

    pub fn reference(&self) -> usize {
        self.reference
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    /// Prototype `ḡ(k, θ_i)` as a raw slice.
    #[inline]
    pub fn entry(&self, angle_index: usize, bin: usize) -> &[C64] {
        let start = (angle_index * self.num_bins + bin) * self.num_mics;
        &self.data[start..start + self.num_mics]
    }

    pub fn rtf(&self, angle_index: usize, bin: usize) -> RtfVector {
        RtfVector::from_normalized(self.entry(angle_index, bin).to_vec(), self.reference)
            .expect("database entries are reference-normalized")
    }

    /// Index of the grid angle closest (on the circle) to `angle_deg`.
    /// Ties go to the lower index.
    pub fn nearest_index(&self, angle_deg: f64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, &a) in self.angles_deg.iter().enumerate() {
            let d = angular_distance_deg(a, angle_deg);
            if d < best_d - 1e-12 {
                best = i;
                best_d = d;
            }
        }
        best
    }

    pub fn index_of(&self, angle_deg: f64) -> Option<usize> {
        self.angles_deg
            .iter()
            .position(|&a| angular_distance_deg(a, angle_deg) < 1e-9)
    }

    /// Errors unless the database was built for this STFT grid.
    pub fn check_grid(&self, cfg: &StftConfig) -> Result<()> {
        if self.sample_rate != cfg.sample_rate || self.window_len != cfg.window_len || self.num_bins != cfg.num_bins() {
            return Err(Error::Dimension(format!(
                "database grid ({} Hz, N_w={}, K={}) does not match STFT ({} Hz, N_w={}, K={})",
                self.sample_rate,
                self.window_len,
                self.num_bins,
                cfg.sample_rate,
                cfg.window_len,
                cfg.num_bins()
            )));
        }
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        for v in [
            self.sample_rate,
            self.window_len as u32,
            self.num_bins as u32,
            self.num_mics as u32,
            self.angles_deg.len() as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for a in &self.angles_deg {
            w.write_all(&a.to_le_bytes())?;
        }
        for z in &self.data {
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic).map_err(short)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic, not an RTFDB1 file".into()));
        }
        let mut u32s = [0u32; 5];
        for v in u32s.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(short)?;
            *v = u32::from_le_bytes(b);
        }
        let [sample_rate, window_len, num_bins, num_mics, num_angles] = u32s.map(|v| v as usize);
        if num_bins != window_len / 2 + 1 || num_mics == 0 || num_angles == 0 {
            return Err(Error::Format("inconsistent RTFDB1 header".into()));
        }
        let read_f64 = |r: &mut dyn Read| -> Result<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(short)?;
            Ok(f64::from_le_bytes(b))
        };
        let angles_deg = (0..num_angles).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
        let total = num_angles * num_bins * num_mics;
        let mut data = Vec::with_capacity(total);
        for _ in 0..total {
            let re = read_f64(r)?;
            let im = read_f64(r)?;
            data.push(C64::new(re, im));
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::Format("trailing bytes after RTFDB1 payload".into()));
        }
        let one = C64::new(1.0, 0.0);
        let reference = (0..num_mics)
            .find(|&m| data.chunks_exact(num_mics).all(|v| v[m] == one))
            .ok_or_else(|| Error::Format("no reference microphone with all-one entries".into()))?;
        validate_angles(&angles_deg)?;
        Ok(Self {
            angles_deg,
            sample_rate: sample_rate as u32,
            window_len,
            num_bins,
            num_mics,
            reference,
            data,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

fn short(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("truncated RTFDB1 file".into())
    } else {
        e.into()
    }
}

fn validate_angles(angles: &[f64]) -> Result<()> {
    if angles.is_empty() {
        return Err(Error::Config("angle list is empty".into()));
    }
    if angles.iter().any(|a| !a.is_finite() || *a <= -180.0 || *a > 180.0) {
        return Err(Error::Config("angles must lie in (-180, 180]".into()));
    }
    for w in angles.windows(2) {
        if w[1] - w[0] < 1e-9 {
            return Err(Error::Config(format!("angles must be unique and ascending near {}", w[0])));
        }
    }
    Ok(())
}

/// Wraps, sorts and de-duplicate-checks an angle list.
pub fn normalize_angles(angles_deg: &[f64]) -> Result<Vec<f64>> {
    let mut a: Vec<f64> = angles_deg.iter().map(|&x| wrap_deg(x)).collect();
    a.sort_by(f64::total_cmp);
    for w in a.windows(2) {
        if w[1] - w[0] < 1e-9 {
            return Err(Error::Config(format!("duplicate angle {}", w[0])));
        }
    }
    validate_angles(&a)?;
    Ok(a)
}

/// Parses `start:step:stop` (inclusive) or a comma-separated list.
pub fn parse_angles(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("cannot parse angle list '{spec}'"));
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() == 3 {
        let nums: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let (start, step, stop) = (nums[0], nums[1], nums[2]);
        if step == 0.0 || (stop - start) / step < 0.0 {
            return Err(bad());
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        return Ok((0..count).map(|i| start + step * i as f64).collect());
    }
    spec.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect()
}

/// Builds reference-normalized free-field RTFs for every angle and bin.
pub fn build_prototype_db(geom: &ArrayGeometry, angles_deg: &[f64], cfg: &StftConfig) -> Result<PrototypeDb> {
    geom.validate()?;
    let angles_deg = normalize_angles(angles_deg)?;
    let num_bins = cfg.num_bins();
    let num_mics = geom.num_mics();
    let mut data = Vec::with_capacity(angles_deg.len() * num_bins * num_mics);
    for &theta in &angles_deg {
        for k in 0..num_bins {
            let atf = freefield_atf(geom, theta, cfg.bin_frequency(k), SPEED_OF_SOUND);
            data.extend(RtfVector::normalize(atf, geom.reference_index)?.into_vec());
        }
    }
    Ok(PrototypeDb {
        angles_deg,
        sample_rate: cfg.sample_rate,
        window_len: cfg.window_len,
        num_bins,
        num_mics,
        reference: geom.reference_index,
        data,
    })
}
