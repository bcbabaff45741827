//! Microphone array geometries.

use std::f64::consts::PI;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Rotation, Vec3};

const EM32_LAYOUT: &str = include_str!("../data/em32.csv");

/// Radius of the 32-capsule spherical layout at scale 1.
pub const EM32_RADIUS: f64 = 0.042;

/// Diameter of the stacked double-square array at scale 1.
pub const DOUBLE_SQUARE_DIAMETER: f64 = 0.375;

/// A rigid set of omnidirectional microphones, positioned in the array frame
/// with the centroid at the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct MicArray {
    name: String,
    positions: Vec<Vec3>,
}

impl MicArray {
    /// Builds an array from arbitrary positions, recentering them on their
    /// centroid. Requires at least four non-coplanar microphones.
    pub fn new(name: impl Into<String>, positions: Vec<Vec3>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::validation("microphone array is empty"));
        }
        let centroid = positions.iter().sum::<Vec3>() / positions.len() as f64;
        let positions = positions.into_iter().map(|p| p - centroid).collect();
        Self::from_centered(name, positions)
    }

    /// Builds an array from positions that are already centered; they are
    /// stored bit-for-bit.
    pub fn from_centered(name: impl Into<String>, positions: Vec<Vec3>) -> Result<Self> {
        if positions.len() < 4 {
            return Err(Error::validation(format!(
                "need at least 4 microphones, got {}",
                positions.len()
            )));
        }
        if positions.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::validation("microphone position is not finite"));
        }
        let centroid = positions.iter().sum::<Vec3>() / positions.len() as f64;
        let scale = positions.iter().map(|p| p.norm()).fold(0.0, f64::max);
        if centroid.norm() > 1e-9 * scale.max(1.0) {
            return Err(Error::validation(format!(
                "array is not centered (centroid at {:.3e} m)",
                centroid.norm()
            )));
        }
        let scatter: Matrix3<f64> = positions.iter().map(|p| p * p.transpose()).sum();
        let smallest = scatter.symmetric_eigenvalues().min().max(0.0).sqrt();
        if smallest <= 1e-9 {
            return Err(Error::validation(
                "microphone positions are coplanar (smallest singular value below 1e-9 m)",
            ));
        }
        Ok(MicArray {
            name: name.into(),
            positions,
        })
    }

    /// 32-capsule spherical layout of radius `4.2 cm * scale`.
    pub fn em32(scale: f64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::validation("array scale must be positive"));
        }
        let radius = EM32_RADIUS * scale;
        let positions = EM32_LAYOUT
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
            .map(|line| {
                let mut it = line.split(',').skip(1).map(|v| v.trim().parse::<f64>());
                let incl = it.next().and_then(|v| v.ok()).unwrap_or(0.0).to_radians();
                let azim = it.next().and_then(|v| v.ok()).unwrap_or(0.0).to_radians();
                radius * Vec3::new(incl.sin() * azim.cos(), incl.sin() * azim.sin(), incl.cos())
            })
            .collect();
        Self::new(format!("em32x{scale}"), positions)
    }

    /// Two horizontal squares stacked vertically, the top one rotated by
    /// pi/4. The circumscribed diameter is `37.5 cm * scale` and the vertical
    /// spacing is half the square side.
    pub fn double_square(scale: f64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::validation("array scale must be positive"));
        }
        let r = 0.5 * DOUBLE_SQUARE_DIAMETER * scale;
        let side = r * 2f64.sqrt();
        let h = 0.5 * side;
        let mut positions = Vec::with_capacity(8);
        for (z, offset) in [(-0.5 * h, 0.0), (0.5 * h, PI / 4.0)] {
            for k in 0..4 {
                let a = offset + k as f64 * PI / 2.0;
                positions.push(Vec3::new(r * a.cos(), r * a.sin(), z));
            }
        }
        Self::new(format!("double_square_x{scale}"), positions)
    }

    /// Looks up a built-in geometry by name (`em32` or `double_square`).
    pub fn builtin(name: &str, scale: f64) -> Result<Self> {
        match name {
            "em32" => Self::em32(scale),
            "double_square" => Self::double_square(scale),
            other => Err(Error::validation(format!("unknown array geometry '{other}'"))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Largest distance from the centroid to a microphone.
    pub fn radius(&self) -> f64 {
        self.positions.iter().map(|p| p.norm()).fold(0.0, f64::max)
    }

    /// Microphone positions after rotating the array and moving its center.
    pub fn placed(&self, center: &Vec3, rotation: &Rotation) -> Vec<Vec3> {
        self.positions
            .iter()
            .map(|p| center + rotation.apply(p))
            .collect()
    }
}

/// Serialized form of a [`MicArray`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArrayDoc {
    pub name: String,
    pub positions_m: Vec<[f64; 3]>,
}

impl From<&MicArray> for ArrayDoc {
    fn from(a: &MicArray) -> Self {
        ArrayDoc {
            name: a.name.clone(),
            positions_m: a.positions.iter().map(|p| [p.x, p.y, p.z]).collect(),
        }
    }
}

impl TryFrom<ArrayDoc> for MicArray {
    type Error = Error;

    fn try_from(doc: ArrayDoc) -> Result<Self> {
        MicArray::from_centered(
            doc.name,
            doc.positions_m.iter().map(|p| Vec3::from(*p)).collect(),
        )
    }
}
