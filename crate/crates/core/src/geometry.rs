//! Array geometry, poses and the azimuth convention.
//!
//! Azimuth 0° points along the local +y axis ("front"), positive angles turn
//! counter-clockwise, and all angles are wrapped to (−180°, 180°].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of sound used throughout, in m/s.
pub const SPEED_OF_SOUND: f64 = 343.0;

/// Wraps an angle in degrees to (−180, 180].
pub fn wrap_deg(angle: f64) -> f64 {
    let mut a = angle % 360.0;
    if a <= -180.0 {
        a += 360.0;
    } else if a > 180.0 {
        a -= 360.0;
    }
    a
}

/// Absolute angular difference on the circle, in [0, 180].
pub fn angular_distance_deg(a: f64, b: f64) -> f64 {
    wrap_deg(a - b).abs()
}

/// Unit vector in the azimuthal plane for the given azimuth.
pub fn azimuth_unit(azimuth_deg: f64) -> [f64; 2] {
    let r = azimuth_deg.to_radians();
    [-r.sin(), r.cos()]
}

/// Azimuth of a planar vector (inverse of [`azimuth_unit`]).
pub fn azimuth_of(v: [f64; 2]) -> f64 {
    wrap_deg((-v[0]).atan2(v[1]).to_degrees())
}

/// Microphone layout of one array in its local frame (origin at the array center).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub mic_positions: Vec<[f64; 3]>,
    #[serde(default)]
    pub reference_index: usize,
}

impl ArrayGeometry {
    pub fn new(mic_positions: Vec<[f64; 3]>, reference_index: usize) -> Result<Self> {
        let g = Self { mic_positions, reference_index };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mic_positions.is_empty() {
            return Err(Error::Config("array geometry needs at least one microphone".into()));
        }
        if self.reference_index >= self.mic_positions.len() {
            return Err(Error::Config(format!(
                "reference index {} out of range for {} microphones",
                self.reference_index,
                self.mic_positions.len()
            )));
        }
        if self.mic_positions.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Config("microphone positions must be finite".into()));
        }
        Ok(())
    }

    pub fn num_mics(&self) -> usize {
        self.mic_positions.len()
    }

    /// Behind-the-ear hearing aid pair: two microphones per ear, ears at
    /// x = ±`half_width`, front/rear microphones at y = ±`port_spacing`/2.
    /// Order: left-front, left-rear, right-front, right-rear.
    pub fn binaural(half_width: f64, port_spacing: f64) -> Self {
        let h = port_spacing / 2.0;
        Self {
            mic_positions: vec![
                [-half_width, h, 0.0],
                [-half_width, -h, 0.0],
                [half_width, h, 0.0],
                [half_width, -h, 0.0],
            ],
            reference_index: 0,
        }
    }

    /// The default hearing aid layout (16 cm head width, 1.2 cm port spacing).
    pub fn default_binaural() -> Self {
        Self::binaural(0.08, 0.012)
    }

    /// Uniform linear array along the local x axis, centered at the origin.
    pub fn linear(num_mics: usize, spacing: f64) -> Self {
        let offset = (num_mics as f64 - 1.0) / 2.0;
        Self {
            mic_positions: (0..num_mics)
                .map(|m| [(m as f64 - offset) * spacing, 0.0, 0.0])
                .collect(),
            reference_index: 0,
        }
    }
}

/// Position and orientation of an array's local frame in the global frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenePose {
    pub position: [f64; 2],
    /// Rotation of the local frame relative to the global frame, degrees.
    pub orientation_deg: f64,
}

impl Default for ScenePose {
    fn default() -> Self {
        Self { position: [0.0, 0.0], orientation_deg: 0.0 }
    }
}

impl ScenePose {
    pub fn new(position: [f64; 2], orientation_deg: f64) -> Self {
        Self { position, orientation_deg: wrap_deg(orientation_deg) }
    }

    /// Pose at `distance` along local azimuth `bearing_deg` of `origin`.
    pub fn relative_to(origin: &ScenePose, bearing_deg: f64, distance: f64, orientation_deg: f64) -> Self {
        let p = origin.local_to_global([
            azimuth_unit(bearing_deg)[0] * distance,
            azimuth_unit(bearing_deg)[1] * distance,
        ]);
        Self::new(p, origin.orientation_deg + orientation_deg)
    }

    /// Rotates a local planar vector into the global frame (no translation).
    pub fn rotate_to_global(&self, v: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.orientation_deg.to_radians().sin_cos();
        [c * v[0] - s * v[1], s * v[0] + c * v[1]]
    }

    pub fn local_to_global(&self, p: [f64; 2]) -> [f64; 2] {
        let r = self.rotate_to_global(p);
        [r[0] + self.position[0], r[1] + self.position[1]]
    }

    /// Azimuth (local frame) and distance of a global point as seen from this pose.
    pub fn bearing_to(&self, point: [f64; 2]) -> Result<(f64, f64)> {
        let d = [point[0] - self.position[0], point[1] - self.position[1]];
        let dist = d[0].hypot(d[1]);
        if dist < 1e-12 {
            return Err(Error::Undefined("point coincides with the array origin".into()));
        }
        Ok((wrap_deg(azimuth_of(d) - self.orientation_deg), dist))
    }
}

/// A geometry placed in the scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedArray {
    pub geometry: ArrayGeometry,
    pub pose: ScenePose,
}
