//! Points, rotations and wall labels shared by every stage of the pipeline.
//!
//! All positions are `f64` meters. Unless a function says otherwise, points
//! live in the *array frame*: the frame in which the microphone positions are
//! known and whose origin is the array centroid.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point or direction in 3D space.
pub type Vec3 = Vector3<f64>;

/// Speed of sound in m/s.
pub const SPEED_OF_SOUND: f64 = 343.0;

const ORTHONORMAL_TOL: f64 = 1e-10;

/// A proper rotation. Its columns are the room basis vectors `e1, e2, e3`
/// expressed in the array frame, so `R * p_room` maps a room-frame direction
/// into the array frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    /// Validates `R^T R = I` and `det R = +1` to 1e-10.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("rotation has non-finite entries"));
        }
        let err = (m.transpose() * m - Matrix3::identity()).abs().max();
        if err > ORTHONORMAL_TOL {
            return Err(Error::validation(format!(
                "rotation is not orthonormal (max |R^T R - I| = {err:.3e})"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::validation(format!(
                "rotation has determinant {det}, expected +1"
            )));
        }
        Ok(Rotation(m))
    }

    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    pub fn from_columns(e1: Vec3, e2: Vec3, e3: Vec3) -> Result<Self> {
        Self::new(Matrix3::from_columns(&[e1, e2, e3]))
    }

    pub fn from_row_major(v: &[f64; 9]) -> Result<Self> {
        Self::new(Matrix3::from_row_slice(v))
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    /// Rotation about a unit axis by `angle` radians.
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Result<Self> {
        let axis = nalgebra::Unit::try_new(axis, 1e-12)
            .ok_or_else(|| Error::validation("rotation axis has zero length"))?;
        Ok(Rotation(
            UnitQuaternion::from_axis_angle(&axis, angle)
                .to_rotation_matrix()
                .into_inner(),
        ))
    }

    /// Uniformly distributed rotation (normalized Gaussian quaternion).
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let q = Quaternion::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            );
            if q.norm() > 1e-6 {
                let uq = UnitQuaternion::from_quaternion(q);
                return Rotation(uq.to_rotation_matrix().into_inner());
            }
        }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn column(&self, i: usize) -> Vec3 {
        self.0.column(i).into_owned()
    }

    /// Maps a room-frame vector into the array frame.
    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Maps an array-frame vector into the room frame.
    pub fn apply_inverse(&self, v: &Vec3) -> Vec3 {
        self.0.transpose() * v
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    /// `self * other`.
    pub fn compose(&self, other: &Rotation) -> Self {
        Rotation(self.0 * other.0)
    }
}

/// Side of a wall pair along one room axis. `Near` walls contain the room
/// corner used as origin of the room frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Near,
    Far,
}

/// One of the six room boundaries (floor and ceiling included).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Wall {
    pub axis: usize,
    pub side: Side,
}

impl Wall {
    pub const ALL: [Wall; 6] = [
        Wall::new(0, Side::Near),
        Wall::new(0, Side::Far),
        Wall::new(1, Side::Near),
        Wall::new(1, Side::Far),
        Wall::new(2, Side::Near),
        Wall::new(2, Side::Far),
    ];

    pub const fn new(axis: usize, side: Side) -> Self {
        Wall { axis, side }
    }

    /// Position in the canonical ordering `x-, x+, y-, y+, z-, z+`.
    pub fn index(&self) -> usize {
        2 * self.axis
            + match self.side {
                Side::Near => 0,
                Side::Far => 1,
            }
    }

    pub fn from_index(i: usize) -> Self {
        Wall::ALL[i]
    }
}

impl fmt::Display for Wall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let axis = ["x", "y", "z"].get(self.axis).copied().unwrap_or("?");
        let side = match self.side {
            Side::Near => '-',
            Side::Far => '+',
        };
        write!(f, "{axis}{side}")
    }
}

/// Unit vector from azimuth `theta` and polar angle `phi`.
pub fn spherical_to_unit(theta: f64, phi: f64) -> Vec3 {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Vec3::new(sp * ct, sp * st, cp)
}

/// Fibonacci lattice on the full unit sphere.
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let (s, c) = (golden * i as f64).sin_cos();
            Vec3::new(rho * c, rho * s, z)
        })
        .collect()
}

/// Fibonacci lattice on the upper half sphere `z >= 0`. Every direction is
/// represented up to sign, which is all an even score needs.
pub fn fibonacci_half_sphere(n: usize) -> Vec<Vec3> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (i as f64 + 0.5) / n as f64;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let (s, c) = (golden * i as f64).sin_cos();
            Vec3::new(rho * c, rho * s, z)
        })
        .collect()
}

/// Angle between two directions in radians, insensitive to rounding outside
/// `[-1, 1]`.
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    let c = a.dot(b) / (a.norm() * b.norm());
    c.clamp(-1.0, 1.0).acos()
}

/// Any unit vector orthogonal to `u`, completing a right-handed frame
/// `(a, b, u)` with the returned pair.
pub fn orthonormal_complement(u: &Vec3) -> (Vec3, Vec3) {
    let u = u.normalize();
    let helper = if u.x.abs() < 0.9 {
        Vec3::x()
    } else {
        Vec3::y()
    };
    let a = (helper - u * u.dot(&helper)).normalize();
    let b = u.cross(&a);
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_rotations_are_proper() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let r = Rotation::random(&mut rng);
            assert!(Rotation::new(*r.matrix()).is_ok());
        }
    }

    #[test]
    fn rejects_reflection() {
        let m = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(Rotation::new(m).is_err());
    }

    #[test]
    fn row_major_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r = Rotation::random(&mut rng);
        let back = Rotation::from_row_major(&r.to_row_major()).unwrap();
        assert_eq!(r, back);
    }

    #[test]
    fn wall_indexing() {
        for (i, w) in Wall::ALL.iter().enumerate() {
            assert_eq!(w.index(), i);
            assert_eq!(Wall::from_index(i), *w);
        }
        assert_eq!(Wall::new(1, Side::Far).to_string(), "y+");
    }

    #[test]
    fn half_sphere_mesh_is_unit_and_upper() {
        for u in fibonacci_half_sphere(500) {
            assert!((u.norm() - 1.0).abs() < 1e-12);
            assert!(u.z >= 0.0);
        }
    }
}
