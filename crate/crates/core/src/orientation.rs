//! Room orientation from an unlabeled image-source cloud.
//!
//! All image sources of a shoebox room sit on a (non-uniform) rectangular
//! lattice aligned with the wall normals. For a direction `u`, the score
//!
//! ```text
//! J3(u) = Σ_{s,p} exp(-(u · (s - p)/‖s - p‖)² / 2σ²)
//! ```
//!
//! counts (softly) the pairs of sources whose difference is orthogonal to
//! `u`; it peaks at a wall normal. Once `ê1` is known, the same score over
//! the in-plane unit vectors `v(θ)` of `ê1^⊥`, on pair differences projected
//! to that plane (`J2`), gives `ê2`, and `ê3 = ê1 × ê2`.
//!
//! Sums run over ordered pairs, including `s = p` (which contributes 1).
//! Coincident points and differences that project to zero count as 1.

use std::f64::consts::PI;

use log::debug;
use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fibonacci_half_sphere, orthonormal_complement, Rotation, Vec3};
use crate::image_source::ImageSourceCloud;
use crate::optim::{self, Options};

/// Exponents beyond this are treated as zero (`e^-40 ≈ 4e-18`).
const EXP_CUTOFF: f64 = 40.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrientationConfig {
    /// Strictly decreasing kernel widths.
    pub sigma_schedule: Vec<f64>,
    /// Initialization mesh on the half sphere; `None` sizes it so neighbors
    /// are about `1.5 σ₀` apart.
    pub sphere_mesh_size: Option<usize>,
    /// Initialization mesh on the half circle (the score is π-periodic).
    pub circle_mesh_size: usize,
    /// Distinct mesh maxima refined at the first kernel width.
    pub starts: usize,
    /// Angle-step tolerance of the local search (rad).
    pub step_tol: f64,
    pub max_iter: usize,
}

impl Default for OrientationConfig {
    fn default() -> Self {
        OrientationConfig {
            sigma_schedule: vec![0.01, 0.005, 0.0005],
            sphere_mesh_size: None,
            circle_mesh_size: 720,
            starts: 8,
            step_tol: 1e-10,
            max_iter: 100,
        }
    }
}

impl OrientationConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.sigma_schedule;
        if s.is_empty() || s.iter().any(|v| !(*v > 0.0)) || s.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::validation(
                "sigma_schedule must be nonempty, positive and strictly decreasing",
            ));
        }
        if self.circle_mesh_size < 4 || self.starts == 0 || self.sphere_mesh_size == Some(0) {
            return Err(Error::validation("mesh sizes and starts must be positive"));
        }
        Ok(())
    }

    fn sphere_mesh(&self) -> usize {
        self.sphere_mesh_size.unwrap_or_else(|| {
            let h = 1.5 * self.sigma_schedule[0];
            ((2.0 * PI / (h * h)).ceil() as usize).clamp(500, 200_000)
        })
    }
}

/// Orthonormal right-handed room basis `(ê1, ê2, ê3)` in the array frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Basis {
    pub e1: Vec3,
    pub e2: Vec3,
    pub e3: Vec3,
}

impl Basis {
    /// Completes `(e1, e2)`: `e2` loses its `e1` component and `e3 = e1 × e2`.
    pub fn from_two(e1: Vec3, e2: Vec3) -> Result<Self> {
        let e1 = e1.normalize();
        let e2 = e2 - e1 * e1.dot(&e2);
        if !(e2.norm() > 1e-12) || !e1.iter().all(|v| v.is_finite()) {
            return Err(Error::Degenerate("basis vectors are parallel".into()));
        }
        let e2 = e2.normalize();
        Ok(Basis {
            e1,
            e2,
            e3: e1.cross(&e2),
        })
    }

    pub fn from_rotation(r: &Rotation) -> Self {
        Basis {
            e1: r.column(0),
            e2: r.column(1),
            e3: r.column(2),
        }
    }

    pub fn axis(&self, i: usize) -> Vec3 {
        [self.e1, self.e2, self.e3][i]
    }

    pub fn axes(&self) -> [Vec3; 3] {
        [self.e1, self.e2, self.e3]
    }

    pub fn to_rotation(&self) -> Result<Rotation> {
        Rotation::from_columns(self.e1, self.e2, self.e3)
    }
}

/// Unit directions of all unordered pairs of a point set.
#[derive(Clone, Debug)]
struct Pairs {
    dirs: Vec<Vec3>,
    diffs: Vec<Vec3>,
    /// Points plus coincident pairs: the constant part of the score.
    points: usize,
    coincident: usize,
}

impl Pairs {
    fn new(points: &[Vec3]) -> Self {
        let n = points.len();
        let mut dirs = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        let mut diffs = Vec::with_capacity(dirs.capacity());
        let mut coincident = 0;
        for i in 0..n {
            for j in i + 1..n {
                let d = points[j] - points[i];
                let len = d.norm();
                if len > 0.0 {
                    dirs.push(d / len);
                    diffs.push(d);
                } else {
                    coincident += 1;
                }
            }
        }
        Pairs {
            dirs,
            diffs,
            points: n,
            coincident,
        }
    }

    fn base(&self) -> f64 {
        (self.points + 2 * self.coincident) as f64
    }

    fn j3(&self, u: &Vec3, sigma: f64) -> f64 {
        let k = 0.5 / (sigma * sigma);
        let mut s = 0.0;
        for v in &self.dirs {
            let c = u.dot(v);
            let x = k * c * c;
            if x < EXP_CUTOFF {
                s += (-x).exp();
            }
        }
        self.base() + 2.0 * s
    }

    /// Score and its gradient with respect to the (unconstrained) vector `u`.
    fn j3_grad(&self, u: &Vec3, sigma: f64) -> (f64, Vec3) {
        let k = 0.5 / (sigma * sigma);
        let mut s = 0.0;
        let mut g = Vec3::zeros();
        for v in &self.dirs {
            let c = u.dot(v);
            let x = k * c * c;
            if x < EXP_CUTOFF {
                let e = (-x).exp();
                s += e;
                g -= v * (e * 2.0 * k * c);
            }
        }
        (self.base() + 2.0 * s, g * 2.0)
    }

    /// Projections of the pair differences onto the plane `normal^⊥`,
    /// normalized. Pairs within `parallel_tol` (sine of the angle) of
    /// `normal` are counted apart: they are orthogonal to the whole plane,
    /// and their projected direction would only reflect the error in
    /// `normal`.
    fn projected(&self, normal: &Vec3, parallel_tol: f64) -> (Vec<Vec3>, usize) {
        let mut out = Vec::with_capacity(self.diffs.len());
        let mut degenerate = 0;
        for d in &self.diffs {
            let p = d - normal * normal.dot(d);
            let len = p.norm();
            if len > parallel_tol * d.norm() {
                out.push(p / len);
            } else {
                degenerate += 1;
            }
        }
        (out, degenerate)
    }
}

/// Relative projection length below which a pair counts as parallel to the
/// fixed axis in the public `J2` scores.
const EXACT_PARALLEL: f64 = 1e-12;

fn unit(u: &Vec3) -> Result<Vec3> {
    let n = u.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::validation("direction must be a nonzero finite vector"));
    }
    Ok(u / n)
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::validation("sigma must be positive"))
    }
}

/// Relaxed three-dimensional orthogonality score `J3^σ(u)`.
pub fn score_j3(cloud: &ImageSourceCloud, u: &Vec3, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    let u = unit(u)?;
    Ok(Pairs::new(&cloud.positions()).j3(&u, sigma))
}

/// Maps `(θ, φ)` to `sinφ cosθ a + sinφ sinθ b + cosφ c` and returns the
/// point with its two partial derivatives.
fn chart(frame: &[Vec3; 3], theta: f64, phi: f64) -> (Vec3, Vec3, Vec3) {
    let [a, b, c] = frame;
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    let u = a * (sp * ct) + b * (sp * st) + c * cp;
    let du_t = a * (-sp * st) + b * (sp * ct);
    let du_p = a * (cp * ct) + b * (cp * st) - c * sp;
    (u, du_t, du_p)
}

/// `J3^σ` at azimuth `theta` and polar angle `phi`, with its gradient in
/// `(theta, phi)`.
pub fn score_j3_angles(
    cloud: &ImageSourceCloud,
    theta: f64,
    phi: f64,
    sigma: f64,
) -> Result<(f64, [f64; 2])> {
    check_sigma(sigma)?;
    let pairs = Pairs::new(&cloud.positions());
    let (u, dt, dp) = chart(&[Vec3::x(), Vec3::y(), Vec3::z()], theta, phi);
    let (v, g) = pairs.j3_grad(&u, sigma);
    Ok((v, [g.dot(&dt), g.dot(&dp)]))
}

/// In-plane unit vector at angle `theta` of the plane orthogonal to
/// `u_fixed`, using the frame of [`orthonormal_complement`].
pub fn in_plane_direction(u_fixed: &Vec3, theta: f64) -> Vec3 {
    let (a, b) = orthonormal_complement(u_fixed);
    a * theta.cos() + b * theta.sin()
}

fn j2_value(proj: &[Vec3], degenerate: usize, base: f64, v: &Vec3, sigma: f64) -> f64 {
    let k = 0.5 / (sigma * sigma);
    let mut s = degenerate as f64;
    for p in proj {
        let c = v.dot(p);
        let x = k * c * c;
        if x < EXP_CUTOFF {
            s += (-x).exp();
        }
    }
    base + 2.0 * s
}

fn j2_value_grad(
    proj: &[Vec3],
    degenerate: usize,
    base: f64,
    v: &Vec3,
    dv: &Vec3,
    sigma: f64,
) -> (f64, f64) {
    let k = 0.5 / (sigma * sigma);
    let mut s = degenerate as f64;
    let mut g = 0.0;
    for p in proj {
        let c = v.dot(p);
        let x = k * c * c;
        if x < EXP_CUTOFF {
            let e = (-x).exp();
            s += e;
            g -= e * 2.0 * k * c * dv.dot(p);
        }
    }
    (base + 2.0 * s, 2.0 * g)
}

/// Relaxed in-plane score `J2^σ(θ)` on the plane orthogonal to `u_fixed`.
pub fn score_j2(cloud: &ImageSourceCloud, u_fixed: &Vec3, theta: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    let u = unit(u_fixed)?;
    let pairs = Pairs::new(&cloud.positions());
    let (proj, deg) = pairs.projected(&u, EXACT_PARALLEL);
    Ok(j2_value(&proj, deg, pairs.base(), &in_plane_direction(&u, theta), sigma))
}

/// `J2^σ(θ)` with its derivative in `θ`.
pub fn score_j2_grad(
    cloud: &ImageSourceCloud,
    u_fixed: &Vec3,
    theta: f64,
    sigma: f64,
) -> Result<(f64, f64)> {
    check_sigma(sigma)?;
    let u = unit(u_fixed)?;
    let pairs = Pairs::new(&cloud.positions());
    let (proj, deg) = pairs.projected(&u, EXACT_PARALLEL);
    let (a, b) = orthonormal_complement(&u);
    let v = a * theta.cos() + b * theta.sin();
    let dv = b * theta.cos() - a * theta.sin();
    Ok(j2_value_grad(&proj, deg, pairs.base(), &v, &dv, sigma))
}

/// `J3^σ` over the Fibonacci half-sphere mesh, for plots.
pub fn j3_mesh_scan(cloud: &ImageSourceCloud, mesh_size: usize, sigma: f64) -> Result<Vec<(Vec3, f64)>> {
    check_sigma(sigma)?;
    let pairs = Pairs::new(&cloud.positions());
    Ok(fibonacci_half_sphere(mesh_size)
        .into_par_iter()
        .map(|u| {
            let v = pairs.j3(&u, sigma);
            (u, v)
        })
        .collect())
}

/// Exact counting score: ordered pairs (diagonal included) with
/// `|u · (s - p)| <= tol ‖s - p‖`.
pub fn count_j3(points: &[Vec3], u: &Vec3, tol: f64) -> usize {
    let pairs = Pairs::new(points);
    let u = u.normalize();
    let hits = pairs.dirs.iter().filter(|v| u.dot(v).abs() <= tol).count();
    pairs.points + 2 * (pairs.coincident + hits)
}

/// Direction of the Fibonacci half-sphere mesh maximizing the counting score.
///
/// A mesh point is generally not exactly orthogonal to anything, so the
/// orthogonality test uses half the mesh spacing as its tolerance: a mesh
/// point then collects every pair that is orthogonal to some direction of
/// its cell.
pub fn brute_force_argmax_j3(cloud: &ImageSourceCloud, mesh_size: usize) -> Vec3 {
    let points = cloud.positions();
    let pairs = Pairs::new(&points);
    let tol = (0.5 * (2.0 * PI / mesh_size.max(1) as f64).sqrt()).sin();
    let scores: Vec<(Vec3, usize)> = fibonacci_half_sphere(mesh_size)
        .into_par_iter()
        .map(|u| {
            let hits = pairs.dirs.iter().filter(|v| u.dot(v).abs() <= tol).count();
            (u, hits)
        })
        .collect();
    // First maximum in mesh order, for determinism.
    let mut best = scores[0];
    for s in &scores[1..] {
        if s.1 > best.1 {
            best = *s;
        }
    }
    best.0
}

fn check_rank(points: &[Vec3]) -> Result<()> {
    if points.len() < 4 {
        return Err(Error::Degenerate(format!(
            "{} sources cannot span three dimensions",
            points.len()
        )));
    }
    let mean = points.iter().sum::<Vec3>() / points.len() as f64;
    let mut scatter = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        scatter += d * d.transpose();
    }
    let eig = SymmetricEigen::new(scatter).eigenvalues;
    let max = eig.max();
    let min = eig.min();
    if !(max > 0.0) || min <= 1e-12 * max {
        return Err(Error::Degenerate(
            "centered source positions have rank < 3".into(),
        ));
    }
    Ok(())
}

/// Picks up to `count` high-scoring mesh entries at least `min_angle` apart
/// (up to sign).
fn distinct_maxima(mut scored: Vec<(Vec3, f64)>, count: usize, min_angle: f64) -> Vec<Vec3> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    let cos_min = min_angle.cos();
    let mut picked: Vec<Vec3> = Vec::new();
    for (u, _) in scored {
        if picked.iter().all(|p| p.dot(&u).abs() < cos_min) {
            picked.push(u);
            if picked.len() == count {
                break;
            }
        }
    }
    picked
}

/// Local maximization of `J3^σ` in a spherical chart whose equator passes
/// through `u0` (away from the chart's poles).
fn refine_j3(pairs: &Pairs, u0: &Vec3, sigma: f64, cfg: &OrientationConfig) -> (Vec3, f64) {
    let (b, c) = orthonormal_complement(u0);
    let frame = [*u0, b, c];
    let f = |x: &[f64], g: &mut [f64]| {
        let (u, dt, dp) = chart(&frame, x[0], x[1]);
        let (v, grad) = pairs.j3_grad(&u, sigma);
        g[0] = -grad.dot(&dt);
        g[1] = -grad.dot(&dp);
        -v
    };
    let opts = Options {
        max_iter: cfg.max_iter,
        grad_tol: 0.0,
        step_tol: cfg.step_tol,
        rel_tol: 0.0,
        max_step: sigma,
    };
    let m = optim::bfgs(f, &[0.0, 0.5 * PI], &opts);
    let (u, _, _) = chart(&frame, m.x[0], m.x[1]);
    (u.normalize(), -m.value)
}

fn refine_j2(
    proj: &[Vec3],
    degenerate: usize,
    base: f64,
    plane: (Vec3, Vec3),
    theta0: f64,
    sigma: f64,
    cfg: &OrientationConfig,
) -> (f64, f64) {
    let (a, b) = plane;
    let f = |x: &[f64], g: &mut [f64]| {
        let v = a * x[0].cos() + b * x[0].sin();
        let dv = b * x[0].cos() - a * x[0].sin();
        let (val, d) = j2_value_grad(proj, degenerate, base, &v, &dv, sigma);
        g[0] = -d;
        -val
    };
    let opts = Options {
        max_iter: cfg.max_iter,
        grad_tol: 0.0,
        step_tol: cfg.step_tol,
        rel_tol: 0.0,
        max_step: sigma,
    };
    let m = optim::bfgs(f, &[theta0], &opts);
    (m.x[0], -m.value)
}

/// Estimates the room basis from an image-source cloud.
pub fn estimate_orientation(cloud: &ImageSourceCloud, cfg: &OrientationConfig) -> Result<Basis> {
    cfg.validate()?;
    let points = cloud.positions();
    if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::validation("cloud positions must be finite"));
    }
    check_rank(&points)?;
    let pairs = Pairs::new(&points);
    let sigmas = &cfg.sigma_schedule;
    let s0 = sigmas[0];

    // ê1: mesh scan, multi-start refinement at σ₀, then annealing.
    let mesh = fibonacci_half_sphere(cfg.sphere_mesh());
    let scored: Vec<(Vec3, f64)> = mesh
        .into_par_iter()
        .map(|u| {
            let v = pairs.j3(&u, s0);
            (u, v)
        })
        .collect();
    let starts = distinct_maxima(scored, cfg.starts, 5.0 * s0);
    let refined: Vec<(Vec3, f64)> = starts
        .par_iter()
        .map(|u| refine_j3(&pairs, u, s0, cfg))
        .collect();
    let (mut e1, mut best) = refined
        .iter()
        .copied()
        .fold((Vec3::z(), f64::NEG_INFINITY), |acc, r| if r.1 > acc.1 { r } else { acc });
    for &sigma in &sigmas[1..] {
        (e1, best) = refine_j3(&pairs, &e1, sigma, cfg);
    }
    debug!("e1 = {e1:?}, J3 = {best:.3}");

    // ê2: circle scan on ê1^⊥.
    // ê1 is only known to about the finest σ.
    let finest = sigmas.iter().copied().fold(f64::INFINITY, f64::min);
    let (proj, deg) = pairs.projected(&e1, finest.sin().max(EXACT_PARALLEL));
    let plane = orthonormal_complement(&e1);
    let base = pairs.base();
    let n = cfg.circle_mesh_size;
    let mut circle: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let t = PI * i as f64 / n as f64;
            let v = plane.0 * t.cos() + plane.1 * t.sin();
            (t, j2_value(&proj, deg, base, &v, s0))
        })
        .collect();
    circle.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut theta_starts: Vec<f64> = Vec::new();
    for &(t, _) in &circle {
        let far = theta_starts.iter().all(|s| {
            let d = (t - s).rem_euclid(PI);
            d.min(PI - d) > 5.0 * s0
        });
        if far {
            theta_starts.push(t);
            if theta_starts.len() == cfg.starts {
                break;
            }
        }
    }
    let (mut theta, _) = theta_starts
        .iter()
        .map(|t| refine_j2(&proj, deg, base, plane, *t, s0, cfg))
        .fold((0.0, f64::NEG_INFINITY), |acc, r| if r.1 > acc.1 { r } else { acc });
    for &sigma in &sigmas[1..] {
        theta = refine_j2(&proj, deg, base, plane, theta, sigma, cfg).0;
    }
    let e2 = plane.0 * theta.cos() + plane.1 * theta.sin();
    Basis::from_two(e1, e2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image_source::ImageSource;

    fn cloud(points: &[Vec3]) -> ImageSourceCloud {
        ImageSourceCloud::new(points.iter().map(|p| ImageSource::unlabeled(*p, 1.0)).collect())
    }

    fn cube() -> Vec<Vec3> {
        let mut v = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 2.0] {
                for z in [0.0, 3.0] {
                    v.push(Vec3::new(x, y, z));
                }
            }
        }
        v
    }

    #[test]
    fn counting_score_of_a_2x2x2_lattice() {
        assert_eq!(count_j3(&cube(), &Vec3::x(), 1e-12), 32);
        assert_eq!(count_j3(&cube(), &Vec3::y(), 1e-12), 32);
    }

    #[test]
    fn relaxed_score_tends_to_count() {
        let c = cloud(&cube());
        let v = score_j3(&c, &Vec3::x(), 1e-4).unwrap();
        assert!((v - 32.0).abs() < 1e-9);
        assert_eq!(score_j3(&c, &-Vec3::x(), 1e-4).unwrap(), v);
    }

    #[test]
    fn basis_from_two_is_orthonormal() {
        let b = Basis::from_two(Vec3::new(1.0, 0.1, 0.0), Vec3::new(0.0, 1.0, 0.2)).unwrap();
        assert!(b.e1.dot(&b.e2).abs() < 1e-15);
        assert!((b.e3 - b.e1.cross(&b.e2)).norm() == 0.0);
        assert!(b.to_rotation().is_ok());
    }

    #[test]
    fn planar_cloud_is_degenerate() {
        let pts: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, (i * i) as f64, 0.0)).collect();
        assert!(matches!(
            estimate_orientation(&cloud(&pts), &OrientationConfig::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn bad_schedule_is_rejected() {
        let cfg = OrientationConfig {
            sigma_schedule: vec![0.01, 0.02],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
