//! Gridless recovery of the image-source cloud from a multichannel RIR.
//!
//! The measurement is modelled as `x = Σ_k a_k γ(r_k)`, where the atom
//! `γ(r)` is the RIR of a unit source at `r`. Spikes are recovered by the
//! sliding Frank-Wolfe method applied to the weighted total-variation problem
//!
//! ```text
//! min_{a >= 0, r}  ½ ‖x - Σ_k a_k γ(r_k)‖² + λ Σ_k w(r_k) a_k
//! ```
//!
//! with `w(r) = (Σ_m (4π |r - r_m|)^-2)^½`, the norm of `γ(r)` over an
//! unbounded window. The weight makes the dual certificate
//! `η(r) = <x - Γψ, γ(r)> / (λ w(r))` a normalized correlation, so distant
//! (weaker) image sources are not drowned by the penalty.
//!
//! Each outer iteration:
//! 1. scans a spherical candidate grid for the certificate maximum and
//!    refines it with a local quasi-Newton ascent;
//! 2. stops when `max η <= 1 + tol` or when `max_spikes` spikes are in use;
//! 3. inserts the new spike and re-solves the nonnegative amplitudes with
//!    positions fixed (coordinate descent);
//! 4. slides all positions and amplitudes jointly (bounded L-BFGS);
//! 5. prunes spikes below the `amp_min_pre` floor.
//!
//! After the loop the support is pruned once more, refined by a final
//! unregularized descent that removes the amplitude shrinkage of the
//! penalty, and pruned with `amp_min_post`.

use std::f64::consts::PI;

use log::{debug, warn};
use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::array::MicArray;
use crate::error::{Error, Result};
use crate::geometry::{fibonacci_sphere, Vec3, SPEED_OF_SOUND};
use crate::image_source::{ImageSource, ImageSourceCloud};
use crate::kernel;
use crate::optim::{self, Options};
use crate::rir::{sample_count, MultichannelRir, MIN_DISTANCE};

/// Floor under which a spike amplitude is pruned.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum AmplitudeFloor {
    Absolute(f64),
    /// Fraction of the largest amplitude currently in the cloud.
    RelativeToMax(f64),
}

impl AmplitudeFloor {
    fn value(&self, max_amplitude: f64) -> f64 {
        match *self {
            AmplitudeFloor::Absolute(v) => v,
            AmplitudeFloor::RelativeToMax(f) => f * max_amplitude,
        }
    }

    fn is_valid(&self) -> bool {
        match *self {
            AmplitudeFloor::Absolute(v) | AmplitudeFloor::RelativeToMax(v) => v >= 0.0,
        }
    }
}

/// Spherical candidate grid around the array center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    /// Shell spacing in meters; `None` means half a sample of propagation.
    pub radial_step: Option<f64>,
    /// Direction spacing in radians; `None` derives it from `min_correlation`.
    pub angular_step: Option<f64>,
    /// Target correlation between neighboring grid atoms.
    pub min_correlation: f64,
    /// Oversampling of the residual interpolation tables.
    pub oversample: usize,
    /// Half width (samples) of the truncated interpolator used for the scan.
    pub interp_half_width: usize,
    pub max_directions: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            radial_step: None,
            angular_step: None,
            min_correlation: 0.9,
            oversample: 8,
            interp_half_width: 32,
            max_directions: 20_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SfwConfig {
    /// Regularization weight relative to the largest initial certificate.
    pub lambda_rel: f64,
    /// Absolute regularization weight; overrides `lambda_rel` when set.
    pub lambda: Option<f64>,
    pub max_spikes: usize,
    pub max_iterations: usize,
    pub grid: GridSpec,
    /// Stop when the certificate maximum is below `1 + certificate_tol`.
    pub certificate_tol: f64,
    /// Local ascent of the certificate.
    pub local_max_iter: usize,
    pub local_step_tol: f64,
    /// Coordinate-descent sweeps of the fixed-support amplitude solve.
    pub amplitude_sweeps: usize,
    /// L-BFGS iterations of the joint refinement inside the loop.
    pub joint_max_iter: usize,
    /// L-BFGS iterations of the final (unregularized) refinement.
    pub final_max_iter: usize,
    /// Relative objective decrease that ends a joint refinement.
    pub rel_tol: f64,
    pub amp_min_pre: AmplitudeFloor,
    pub amp_min_post: AmplitudeFloor,
    /// Outer grid radius; `None` means `c * duration`.
    pub max_radius: Option<f64>,
    /// Inner grid radius; `None` means `max(0.1 m, 2 * array radius)`.
    pub min_radius: Option<f64>,
    /// Run the final unregularized refinement.
    pub debias: bool,
}

impl Default for SfwConfig {
    fn default() -> Self {
        SfwConfig {
            lambda_rel: 0.03,
            lambda: None,
            max_spikes: 200,
            max_iterations: 400,
            grid: GridSpec::default(),
            certificate_tol: 1e-3,
            local_max_iter: 50,
            local_step_tol: 1e-9,
            amplitude_sweeps: 3,
            joint_max_iter: 20,
            final_max_iter: 200,
            rel_tol: 1e-8,
            amp_min_pre: AmplitudeFloor::RelativeToMax(0.02),
            amp_min_post: AmplitudeFloor::RelativeToMax(0.02),
            max_radius: None,
            min_radius: None,
            debias: true,
        }
    }
}

impl SfwConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_rel > 0.0) || self.lambda.is_some_and(|l| !(l > 0.0)) {
            return Err(Error::validation("lambda must be positive"));
        }
        if self.max_spikes == 0 || self.max_iterations == 0 {
            return Err(Error::validation("max_spikes and max_iterations must be >= 1"));
        }
        if !self.amp_min_pre.is_valid() || !self.amp_min_post.is_valid() {
            return Err(Error::validation("amplitude floors must be nonnegative"));
        }
        if self.certificate_tol < 0.0 || self.grid.oversample == 0 {
            return Err(Error::validation("invalid tolerance or oversampling"));
        }
        Ok(())
    }
}

/// Why the outer loop ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    /// The certificate fell below `1 + tol`.
    Certificate,
    MaxSpikes,
    /// Iteration budget exhausted: the result is the last iterate.
    IterationBudget,
    ZeroInput,
}

/// Diagnostics of one localization run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SfwReport {
    pub lambda: f64,
    pub iterations: usize,
    pub stop: StopReason,
    /// `false` only when the iteration budget ran out.
    pub converged: bool,
    pub final_certificate_max: f64,
    /// Regularized objective after each outer iteration.
    pub objective_trace: Vec<f64>,
    pub certificate_trace: Vec<f64>,
    pub spikes_before_final: usize,
}

impl SfwReport {
    /// CSV of `iteration,objective,certificate`.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iteration,objective,certificate\n");
        for (i, (o, c)) in self
            .objective_trace
            .iter()
            .zip(&self.certificate_trace)
            .enumerate()
        {
            s.push_str(&format!("{i},{o:e},{c:e}\n"));
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct SfwOutcome {
    pub cloud: ImageSourceCloud,
    pub report: SfwReport,
}

/// The forward operator of a fixed array, sampling rate and window.
#[derive(Clone, Debug)]
pub struct ForwardModel {
    mics: Vec<Vec3>,
    fs: f64,
    len: usize,
    /// Mean microphone position and RMS distance to it.
    center: Vec3,
    aperture: f64,
}

impl ForwardModel {
    pub fn new(array: &MicArray, fs: f64, duration: f64) -> Result<Self> {
        if !(fs > 0.0 && duration > 0.0) {
            return Err(Error::validation("fs and duration must be positive"));
        }
        let mics = array.positions().to_vec();
        let center = mics.iter().sum::<Vec3>() / mics.len().max(1) as f64;
        let aperture = (mics.iter().map(|m| (m - center).norm_squared()).sum::<f64>() / mics.len().max(1) as f64).sqrt();
        Ok(ForwardModel {
            mics,
            fs,
            len: sample_count(fs, duration),
            center,
            aperture,
        })
    }

    pub fn channels(&self) -> usize {
        self.mics.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn delay_scale(&self) -> f64 {
        self.fs / SPEED_OF_SOUND
    }

    fn check_distance(&self, r: &Vec3) -> Result<()> {
        for (m, mic) in self.mics.iter().enumerate() {
            let d = (r - mic).norm();
            if d < MIN_DISTANCE {
                return Err(Error::Singularity { mic: m, distance: d });
            }
        }
        Ok(())
    }

    /// RIR of a unit source at `r`, flattened channel-major.
    pub fn atom(&self, r: &Vec3) -> Result<Vec<f64>> {
        self.check_distance(r)?;
        let mut out = vec![0.0; self.mics.len() * self.len];
        self.add_atom(&mut out, r, 1.0);
        Ok(out)
    }

    fn add_atom(&self, out: &mut [f64], r: &Vec3, amplitude: f64) {
        let ks = self.delay_scale();
        for (mic, ch) in self.mics.iter().zip(out.chunks_exact_mut(self.len)) {
            let d = (r - mic).norm();
            kernel::add_shifted(ch, ks * d, amplitude / (4.0 * PI * d));
        }
    }

    /// `w(r)`: the atom norm over an unbounded window.
    pub fn weight(&self, r: &Vec3) -> f64 {
        self.mics
            .iter()
            .map(|mic| {
                let g = 1.0 / (4.0 * PI * (r - mic).norm());
                g * g
            })
            .sum::<f64>()
            .sqrt()
    }

    fn weight_and_grad(&self, r: &Vec3) -> (f64, Vec3) {
        let mut w2 = 0.0;
        let mut grad = Vec3::zeros();
        for mic in &self.mics {
            let diff = r - mic;
            let d = diff.norm();
            let g = 1.0 / (4.0 * PI * d);
            w2 += g * g;
            // g dg/dr = -g^2 (r - mic) / d^2
            grad -= diff * (g * g / (d * d));
        }
        let w = w2.sqrt();
        (w, grad / w)
    }

    /// `Σ_k a_k γ(r_k)`.
    pub fn render(&self, spikes: &[Spike]) -> Vec<f64> {
        let mut out = vec![0.0; self.mics.len() * self.len];
        for s in spikes {
            self.add_atom(&mut out, &s.position, s.amplitude);
        }
        out
    }

    /// Dual certificate `<residual, γ(r)> / (λ w(r))`.
    pub fn certificate(&self, residual: &[f64], r: &Vec3, lambda: f64) -> f64 {
        let ks = self.delay_scale();
        let num: f64 = self
            .mics
            .iter()
            .zip(residual.chunks_exact(self.len))
            .map(|(mic, ch)| {
                let d = (r - mic).norm();
                kernel::shifted_dot(ch, ks * d) / (4.0 * PI * d)
            })
            .sum();
        num / (lambda * self.weight(r))
    }

    /// Certificate and its gradient with respect to `r`.
    pub fn certificate_and_grad(&self, residual: &[f64], r: &Vec3, lambda: f64) -> (f64, Vec3) {
        let ks = self.delay_scale();
        let mut num = 0.0;
        let mut dnum = Vec3::zeros();
        for (mic, ch) in self.mics.iter().zip(residual.chunks_exact(self.len)) {
            let diff = r - mic;
            let d = diff.norm();
            let g = 1.0 / (4.0 * PI * d);
            let (dot, dot_d) = kernel::shifted_dots(ch, ks * d);
            num += g * dot;
            // d/dd [g(d) I(τ(d))] with dI/dτ = -<res, s'>.
            let dd = -g / d * dot - g * ks * dot_d;
            dnum += diff * (dd / d);
        }
        let (w, dw) = self.weight_and_grad(r);
        let eta = num / (lambda * w);
        let grad = (dnum / w - dw * (num / (w * w))) / lambda;
        (eta, grad)
    }

    /// Regularized objective `½‖Σ a γ - x‖² + λ Σ a w`.
    pub fn objective(&self, x: &[f64], spikes: &[Spike], lambda: f64) -> f64 {
        let model = self.render(spikes);
        let fit: f64 = model.iter().zip(x).map(|(m, v)| (m - v).powi(2)).sum();
        let pen: f64 = spikes
            .iter()
            .map(|s| s.amplitude * self.weight(&s.position))
            .sum();
        0.5 * fit + lambda * pen
    }

    /// Objective and gradient for packed parameters `[a, x, y, z]` per spike.
    pub fn objective_and_grad(
        &self,
        x: &[f64],
        params: &[f64],
        lambda: f64,
        grad: &mut [f64],
    ) -> f64 {
        let k = params.len() / 4;
        let ks = self.delay_scale();
        let unpack = |i: usize| {
            (
                params[4 * i],
                Vec3::new(params[4 * i + 1], params[4 * i + 2], params[4 * i + 3]),
            )
        };
        for i in 0..k {
            let (_, r) = unpack(i);
            if self.mics.iter().any(|m| (r - m).norm() < MIN_DISTANCE) {
                grad.fill(0.0);
                return f64::INFINITY;
            }
        }
        // Error signal e = model - x.
        let mut e: Vec<f64> = x.iter().map(|v| -v).collect();
        for (mic, ch) in self.mics.iter().zip(e.chunks_exact_mut(self.len)) {
            for i in 0..k {
                let (a, r) = unpack(i);
                if a == 0.0 {
                    continue;
                }
                let d = (r - mic).norm();
                kernel::add_shifted(ch, ks * d, a / (4.0 * PI * d));
            }
        }
        let mut f = 0.5 * e.iter().map(|v| v * v).sum::<f64>();
        grad.fill(0.0);
        for (mic, ch) in self.mics.iter().zip(e.chunks_exact(self.len)) {
            for i in 0..k {
                let (a, r) = unpack(i);
                let diff = r - mic;
                let d = diff.norm();
                let g = 1.0 / (4.0 * PI * d);
                let (dot, dot_d) = kernel::shifted_dots(ch, ks * d);
                grad[4 * i] += g * dot;
                let dd = a * (-g / d * dot - g * ks * dot_d);
                let gr = diff * (dd / d);
                grad[4 * i + 1] += gr.x;
                grad[4 * i + 2] += gr.y;
                grad[4 * i + 3] += gr.z;
            }
        }
        if lambda > 0.0 {
            for i in 0..k {
                let (a, r) = unpack(i);
                let (w, dw) = self.weight_and_grad(&r);
                f += lambda * a * w;
                grad[4 * i] += lambda * w;
                grad[4 * i + 1] += lambda * a * dw.x;
                grad[4 * i + 2] += lambda * a * dw.y;
                grad[4 * i + 3] += lambda * a * dw.z;
            }
        }
        f
    }
}

/// One Dirac of the current estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spike {
    pub position: Vec3,
    pub amplitude: f64,
}

/// RIR of a unit source at `r`, flattened channel-major. Positions beyond
/// `c * duration` from the array center are rejected.
pub fn atom_signature(r: &Vec3, array: &MicArray, fs: f64, duration: f64) -> Result<Vec<f64>> {
    let max_radius = SPEED_OF_SOUND * duration;
    if r.norm() > max_radius {
        return Err(Error::validation(format!(
            "atom at {:.3} m is beyond the {max_radius:.3} m recording range",
            r.norm()
        )));
    }
    ForwardModel::new(array, fs, duration)?.atom(r)
}

/// Dual certificate of `residual` (flattened channel-major) at `r`.
pub fn certificate(
    residual: &[f64],
    r: &Vec3,
    array: &MicArray,
    fs: f64,
    duration: f64,
    lambda: f64,
) -> Result<f64> {
    let model = ForwardModel::new(array, fs, duration)?;
    if residual.len() != model.channels() * model.len() {
        return Err(Error::validation("residual has the wrong length"));
    }
    if residual.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("residual is not finite"));
    }
    model.check_distance(r)?;
    Ok(model.certificate(residual, r, lambda))
}

/// Spherical shells times a Fibonacci direction mesh, scanned through
/// oversampled interpolation tables of the residual.
pub(crate) struct CandidateGrid {
    radii: Vec<f64>,
    dirs: Vec<Vec3>,
    /// `dirs[j] · mic[m]`, row-major by direction.
    projections: Vec<f64>,
    mic_sq: Vec<f64>,
    mic_norm: Vec<f64>,
    oversample: usize,
    half_width: usize,
    table_len: usize,
}

impl CandidateGrid {
    pub(crate) fn new(
        model: &ForwardModel,
        spec: &GridSpec,
        min_radius: f64,
        max_radius: f64,
    ) -> Result<Self> {
        if !(max_radius > min_radius && min_radius > 0.0) {
            return Err(Error::validation(format!(
                "invalid grid radii [{min_radius}, {max_radius}]"
            )));
        }
        let radial = spec
            .radial_step
            .unwrap_or(0.5 * SPEED_OF_SOUND / model.fs);
        let aperture = model.mics.iter().map(|m| m.norm()).fold(0.0, f64::max);
        // Largest delay shift (samples) keeping sinc correlation >= target.
        let shift = correlation_shift(spec.min_correlation);
        let angular = spec
            .angular_step
            .unwrap_or(shift * SPEED_OF_SOUND / (model.fs * aperture.max(1e-6)));
        let n_dirs = ((4.0 * PI / (angular * angular)).ceil() as usize).clamp(12, spec.max_directions);
        let dirs = fibonacci_sphere(n_dirs);
        let n_shells = ((max_radius - min_radius) / radial).floor() as usize + 1;
        let radii = (0..n_shells)
            .map(|i| min_radius + i as f64 * radial)
            .collect();
        let projections = dirs
            .iter()
            .flat_map(|u| model.mics.iter().map(move |m| u.dot(m)))
            .collect();
        let max_tau = model.delay_scale() * (max_radius + aperture) + 2.0;
        Ok(CandidateGrid {
            radii,
            dirs,
            projections,
            mic_sq: model.mics.iter().map(|m| m.norm_squared()).collect(),
            mic_norm: model.mics.iter().map(|m| m.norm()).collect(),
            oversample: spec.oversample,
            half_width: spec.interp_half_width,
            table_len: (max_tau * spec.oversample as f64).ceil() as usize + 2,
        })
    }

    pub(crate) fn size(&self) -> (usize, usize) {
        (self.radii.len(), self.dirs.len())
    }

    fn tables(&self, model: &ForwardModel, residual: &[f64]) -> Vec<Vec<f64>> {
        let p = self.oversample as f64;
        residual
            .chunks_exact(model.len)
            .map(|ch| {
                (0..self.table_len)
                    .map(|j| kernel::shifted_dot_window(ch, j as f64 / p, self.half_width))
                    .collect()
            })
            .collect()
    }

    #[inline]
    fn lookup(&self, table: &[f64], tau: f64) -> f64 {
        let x = tau * self.oversample as f64;
        let i = x.floor();
        let f = x - i;
        let i = i as usize;
        if i + 1 >= table.len() {
            return 0.0;
        }
        table[i] * (1.0 - f) + table[i + 1] * f
    }

    /// Grid point maximizing the (approximate) certificate.
    pub(crate) fn argmax(
        &self,
        model: &ForwardModel,
        residual: &[f64],
        lambda: f64,
    ) -> Option<(Vec3, f64)> {
        let tables = self.tables(model, residual);
        let ks = model.delay_scale();
        let p = self.oversample as f64;
        let m_count = model.mics.len();
        // Upper bound of the certificate on every shell.
        let mut bounds: Vec<(f64, usize)> = self
            .radii
            .iter()
            .enumerate()
            .map(|(si, &rho)| {
                let mut num = 0.0;
                let mut w_lo = 0.0;
                for m in 0..m_count {
                    let rm = self.mic_norm[m];
                    let lo = ((ks * (rho - rm) * p).floor().max(0.0)) as usize;
                    let hi = ((ks * (rho + rm) * p).ceil() as usize + 1).min(self.table_len - 1);
                    let peak = tables[m][lo..=hi].iter().fold(0.0f64, |a, v| a.max(*v));
                    num += peak / (4.0 * PI * (rho - rm).max(1e-9));
                    let g = 1.0 / (4.0 * PI * (rho + rm));
                    w_lo += g * g;
                }
                (num / (lambda * w_lo.sqrt()), si)
            })
            .collect();
        bounds.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut best: Option<(Vec3, f64)> = None;
        for (bound, si) in bounds {
            if bound <= 0.0 || best.is_some_and(|(_, v)| bound <= v) {
                break;
            }
            let rho = self.radii[si];
            let rho2 = rho * rho;
            for (j, u) in self.dirs.iter().enumerate() {
                let proj = &self.projections[j * m_count..(j + 1) * m_count];
                let mut num = 0.0;
                let mut w2 = 0.0;
                for m in 0..m_count {
                    let d = (rho2 - 2.0 * rho * proj[m] + self.mic_sq[m]).max(0.0).sqrt();
                    let g = 1.0 / (4.0 * PI * d);
                    num += g * self.lookup(&tables[m], ks * d);
                    w2 += g * g;
                }
                let eta = num / (lambda * w2.sqrt());
                if best.is_none_or(|(_, v)| eta > v) {
                    best = Some((u * rho, eta));
                }
            }
        }
        best
    }
}

/// Delay shift `t` (samples) with `sinc(t) = target`.
fn correlation_shift(target: f64) -> f64 {
    let target = target.clamp(0.0, 0.999_999);
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if kernel::sinc(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Locally maximizes the exact certificate from a grid point.
fn refine_candidate(
    model: &ForwardModel,
    residual: &[f64],
    start: Vec3,
    lambda: f64,
    cfg: &SfwConfig,
    radii: (f64, f64),
) -> (Vec3, f64) {
    let step = SPEED_OF_SOUND / model.fs;
    let opts = Options {
        max_iter: cfg.local_max_iter,
        grad_tol: 0.0,
        step_tol: cfg.local_step_tol,
        rel_tol: 1e-12,
        max_step: 0.5 * step,
    };
    let f = |p: &[f64], g: &mut [f64]| {
        let r = Vec3::new(p[0], p[1], p[2]);
        if model.mics.iter().any(|m| (r - m).norm() < 1e-3) {
            g.fill(0.0);
            return f64::INFINITY;
        }
        let (eta, grad) = model.certificate_and_grad(residual, &r, lambda);
        g[0] = -grad.x;
        g[1] = -grad.y;
        g[2] = -grad.z;
        -eta
    };
    let m = optim::bfgs(f, &[start.x, start.y, start.z], &opts);
    let r = Vec3::new(m.x[0], m.x[1], m.x[2]);
    let start_eta = model.certificate(residual, &start, lambda);
    if r.norm() < radii.0 || r.norm() > radii.1 || -m.value < start_eta {
        (start, start_eta)
    } else {
        (r, -m.value)
    }
}

fn unpack(params: &[f64]) -> Vec<Spike> {
    params
        .chunks_exact(4)
        .map(|c| Spike {
            amplitude: c[0],
            position: Vec3::new(c[1], c[2], c[3]),
        })
        .collect()
}

/// Per-spike change of variables for the joint descent: amplitude scaled by
/// `1 / w`, position expressed in a radial/tangential frame about the array
/// center. Seen from a small array, a lateral move changes the delays
/// `d / R` times less than a radial one, so the tangential axes are
/// stretched by that factor to even out the curvature.
struct SpikeFrame {
    amp: f64,
    /// Columns map scaled coordinates to a position offset.
    map: Matrix3<f64>,
}

impl SpikeFrame {
    fn new(model: &ForwardModel, s: &Spike) -> Self {
        let step = SPEED_OF_SOUND / model.fs;
        let w = model.weight(&s.position);
        let amp = s.amplitude.max(0.05);
        // Radial curvature is ~ (a w π / step)^2 / 3.
        let radial = step / (amp * w * PI / 3f64.sqrt());
        let rel = s.position - model.center;
        let d = rel.norm();
        let (u, t1, t2) = if d > 0.0 {
            let u = rel / d;
            let (t1, t2) = crate::geometry::orthonormal_complement(&u);
            (u, t1, t2)
        } else {
            (Vec3::x(), Vec3::y(), Vec3::z())
        };
        let stretch = if model.aperture > 0.0 {
            (3f64.sqrt() * d / model.aperture).max(1.0)
        } else {
            1.0
        };
        SpikeFrame {
            amp: 1.0 / w,
            map: Matrix3::from_columns(&[u * radial, t1 * (radial * stretch), t2 * (radial * stretch)]),
        }
    }
}

/// Joint descent over all positions and amplitudes (amplitudes >= 0), in
/// the coordinates of [`SpikeFrame`]. Returns the objective at the result.
fn joint_refine(
    model: &ForwardModel,
    x: &[f64],
    spikes: &mut Vec<Spike>,
    lambda: f64,
    max_iter: usize,
    rel_tol: f64,
) -> f64 {
    if spikes.is_empty() {
        return 0.5 * x.iter().map(|v| v * v).sum::<f64>();
    }
    let frames: Vec<SpikeFrame> = spikes.iter().map(|s| SpikeFrame::new(model, s)).collect();
    let origins: Vec<Vec3> = spikes.iter().map(|s| s.position).collect();
    let z0: Vec<f64> = spikes
        .iter()
        .zip(&frames)
        .flat_map(|(s, f)| [s.amplitude / f.amp, 0.0, 0.0, 0.0])
        .collect();
    let lower: Vec<f64> = (0..z0.len())
        .map(|i| if i % 4 == 0 { 0.0 } else { f64::NEG_INFINITY })
        .collect();
    let to_params = |z: &[f64], params: &mut [f64]| {
        for (k, f) in frames.iter().enumerate() {
            let c = &z[4 * k..4 * k + 4];
            let p = origins[k] + f.map * Vec3::new(c[1], c[2], c[3]);
            params[4 * k..4 * k + 4].copy_from_slice(&[c[0] * f.amp, p.x, p.y, p.z]);
        }
    };
    let mut params = vec![0.0; z0.len()];
    let mut grad_raw = vec![0.0; z0.len()];
    let f = |z: &[f64], g: &mut [f64]| {
        to_params(z, &mut params);
        let v = model.objective_and_grad(x, &params, lambda, &mut grad_raw);
        for (k, f) in frames.iter().enumerate() {
            let gp = Vec3::new(grad_raw[4 * k + 1], grad_raw[4 * k + 2], grad_raw[4 * k + 3]);
            let gz = f.map.transpose() * gp;
            g[4 * k..4 * k + 4].copy_from_slice(&[grad_raw[4 * k] * f.amp, gz.x, gz.y, gz.z]);
        }
        v
    };
    let opts = Options {
        max_iter,
        grad_tol: 0.0,
        step_tol: 0.0,
        rel_tol,
        max_step: f64::INFINITY,
    };
    let m = optim::lbfgs_bounded(f, &z0, &lower, 10, &opts);
    let mut out = vec![0.0; m.x.len()];
    to_params(&m.x, &mut out);
    *spikes = unpack(&out);
    m.value
}

/// Nonnegative, weighted-l1 least squares on fixed positions by cyclic
/// coordinate descent.
fn solve_amplitudes(
    model: &ForwardModel,
    x: &[f64],
    spikes: &mut [Spike],
    lambda: f64,
    sweeps: usize,
) {
    let atoms: Vec<Vec<f64>> = spikes
        .iter()
        .map(|s| {
            let mut a = vec![0.0; x.len()];
            model.add_atom(&mut a, &s.position, 1.0);
            a
        })
        .collect();
    let norms: Vec<f64> = atoms.iter().map(|a| a.iter().map(|v| v * v).sum()).collect();
    let weights: Vec<f64> = spikes.iter().map(|s| model.weight(&s.position)).collect();
    let mut e: Vec<f64> = x.iter().map(|v| -v).collect();
    for (s, a) in spikes.iter().zip(&atoms) {
        for (ei, ai) in e.iter_mut().zip(a) {
            *ei += s.amplitude * ai;
        }
    }
    for _ in 0..sweeps {
        for (k, s) in spikes.iter_mut().enumerate() {
            if norms[k] <= 0.0 {
                continue;
            }
            let corr: f64 = e.iter().zip(&atoms[k]).map(|(a, b)| a * b).sum();
            let new = (s.amplitude - (corr + lambda * weights[k]) / norms[k]).max(0.0);
            let delta = new - s.amplitude;
            if delta != 0.0 {
                for (ei, ai) in e.iter_mut().zip(&atoms[k]) {
                    *ei += delta * ai;
                }
                s.amplitude = new;
            }
        }
    }
}

fn max_amplitude(spikes: &[Spike]) -> f64 {
    spikes.iter().fold(0.0, |m, s| m.max(s.amplitude))
}

/// Recovers the weighted image-source cloud from a multichannel RIR.
pub fn sfw_localize(rir: &MultichannelRir, array: &MicArray, cfg: &SfwConfig) -> Result<SfwOutcome> {
    cfg.validate()?;
    if rir.channels() != array.len() {
        return Err(Error::validation(format!(
            "RIR has {} channels but the array has {} microphones",
            rir.channels(),
            array.len()
        )));
    }
    let model = ForwardModel::new(array, rir.fs(), rir.duration())?;
    let x = rir.as_slice();
    let empty = |stop| SfwOutcome {
        cloud: ImageSourceCloud::default(),
        report: SfwReport {
            lambda: 0.0,
            iterations: 0,
            stop,
            converged: true,
            final_certificate_max: 0.0,
            objective_trace: vec![],
            certificate_trace: vec![],
            spikes_before_final: 0,
        },
    };
    if x.iter().all(|v| *v == 0.0) {
        return Ok(empty(StopReason::ZeroInput));
    }
    let max_radius = cfg
        .max_radius
        .unwrap_or(SPEED_OF_SOUND * rir.duration());
    let min_radius = cfg
        .min_radius
        .unwrap_or_else(|| (2.0 * array.radius()).max(0.1));
    let grid = CandidateGrid::new(&model, &cfg.grid, min_radius, max_radius)?;
    debug!("candidate grid: {:?} (shells, directions)", grid.size());

    let lambda = match cfg.lambda {
        Some(l) => l,
        None => {
            let Some((_, peak)) = grid.argmax(&model, x, 1.0) else {
                return Ok(empty(StopReason::ZeroInput));
            };
            if peak <= 0.0 {
                return Ok(empty(StopReason::ZeroInput));
            }
            cfg.lambda_rel * peak
        }
    };
    debug!("lambda = {lambda:e}");

    let mut spikes: Vec<Spike> = Vec::new();
    let mut objective = 0.5 * x.iter().map(|v| v * v).sum::<f64>();
    let mut objective_trace = Vec::new();
    let mut certificate_trace = Vec::new();
    let mut stop = StopReason::IterationBudget;
    let mut last_cert = f64::INFINITY;
    let mut iterations = 0;
    let mut timing = [std::time::Duration::ZERO; 3];
    while iterations < cfg.max_iterations {
        let t0 = std::time::Instant::now();
        let model_sig = model.render(&spikes);
        let residual: Vec<f64> = x.iter().zip(&model_sig).map(|(a, b)| a - b).collect();
        let Some((grid_point, _)) = grid.argmax(&model, &residual, lambda) else {
            stop = StopReason::Certificate;
            break;
        };
        let (candidate, eta) =
            refine_candidate(&model, &residual, grid_point, lambda, cfg, (min_radius, max_radius));
        last_cert = eta;
        timing[0] += t0.elapsed();
        if eta <= 1.0 + cfg.certificate_tol {
            stop = StopReason::Certificate;
            break;
        }
        if spikes.len() >= cfg.max_spikes {
            stop = StopReason::MaxSpikes;
            break;
        }
        iterations += 1;
        spikes.push(Spike {
            position: candidate,
            amplitude: 0.0,
        });
        let t1 = std::time::Instant::now();
        solve_amplitudes(&model, x, &mut spikes, lambda, cfg.amplitude_sweeps);
        timing[1] += t1.elapsed();
        let t2 = std::time::Instant::now();
        let refined = joint_refine(&model, x, &mut spikes, lambda, cfg.joint_max_iter, cfg.rel_tol);
        timing[2] += t2.elapsed();

        // Prune only if the objective still improves on the previous
        // iteration, so the trace stays monotone.
        let floor = cfg.amp_min_pre.value(max_amplitude(&spikes));
        let kept: Vec<Spike> = spikes.iter().copied().filter(|s| s.amplitude >= floor).collect();
        objective = if kept.len() < spikes.len() {
            let pruned = model.objective(x, &kept, lambda);
            if pruned <= objective {
                spikes = kept;
                pruned
            } else {
                refined
            }
        } else {
            refined
        };
        objective_trace.push(objective);
        certificate_trace.push(eta);
        debug!(
            "sfw iteration {iterations}: {} spikes, eta {eta:.4}, objective {objective:e}",
            spikes.len()
        );
    }
    debug!("time in search/amplitudes/sliding: {timing:?}");
    if stop == StopReason::IterationBudget {
        warn!("sliding Frank-Wolfe stopped on its iteration budget ({iterations} iterations)");
    }

    let spikes_before_final = spikes.len();
    let floor = cfg.amp_min_pre.value(max_amplitude(&spikes));
    spikes.retain(|s| s.amplitude >= floor && s.amplitude > 0.0);
    if cfg.debias && !spikes.is_empty() {
        joint_refine(&model, x, &mut spikes, 0.0, cfg.final_max_iter, cfg.rel_tol * 1e-2);
    }
    let floor = cfg.amp_min_post.value(max_amplitude(&spikes));
    spikes.retain(|s| s.amplitude >= floor && s.amplitude > 0.0);

    let cloud = ImageSourceCloud::new(
        spikes
            .iter()
            .map(|s| ImageSource::unlabeled(s.position, s.amplitude))
            .collect(),
    );
    Ok(SfwOutcome {
        cloud,
        report: SfwReport {
            lambda,
            iterations,
            stop,
            converged: stop != StopReason::IterationBudget,
            final_certificate_max: last_cert,
            objective_trace,
            certificate_trace,
            spikes_before_final,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn em32() -> MicArray {
        MicArray::em32(1.0).unwrap()
    }

    #[test]
    fn atom_is_deterministic_and_scales_with_distance() {
        let a = em32();
        let r = Vec3::new(1.3, -0.4, 0.7);
        let g1 = atom_signature(&r, &a, 16_000.0, 0.05).unwrap();
        let g2 = atom_signature(&r, &a, 16_000.0, 0.05).unwrap();
        assert_eq!(g1, g2);
        // Per-channel peak near 1/(4π d) when the delay is close to a sample.
        let m = ForwardModel::new(&a, 16_000.0, 0.05).unwrap();
        for (ch, mic) in g1.chunks_exact(m.len()).zip(a.positions()) {
            let d = (r - mic).norm();
            let peak = ch.iter().fold(0.0f64, |x, v| x.max(v.abs()));
            let g = 1.0 / (4.0 * PI * d);
            assert!(peak <= g * (1.0 + 1e-12) && peak >= 0.6 * g);
        }
    }

    #[test]
    fn atom_beyond_range_is_rejected() {
        let far = Vec3::new(20.0, 0.0, 0.0);
        assert!(atom_signature(&far, &em32(), 16_000.0, 0.05).is_err());
    }

    #[test]
    fn zero_residual_gives_zero_certificate() {
        let a = em32();
        let m = ForwardModel::new(&a, 16_000.0, 0.05).unwrap();
        let res = vec![0.0; m.channels() * m.len()];
        assert_eq!(
            certificate(&res, &Vec3::new(1.0, 2.0, 0.5), &a, 16_000.0, 0.05, 0.1).unwrap(),
            0.0
        );
    }

    #[test]
    fn correlation_shift_value() {
        let t = correlation_shift(0.9);
        assert!((kernel::sinc(t) - 0.9).abs() < 1e-9);
        assert!((0.25..0.27).contains(&t));
    }

    #[test]
    fn zero_input_gives_empty_cloud() {
        let a = em32();
        let rir = MultichannelRir::zeros(a.len(), 16_000.0, 0.02, a.name()).unwrap();
        let out = sfw_localize(&rir, &a, &SfwConfig::default()).unwrap();
        assert!(out.cloud.is_empty());
        assert_eq!(out.report.stop, StopReason::ZeroInput);
    }
}
