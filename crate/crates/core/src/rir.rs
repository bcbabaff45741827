//! Discrete multichannel room impulse responses.
//!
//! Sample `n` of channel `m` is
//! `x[m][n] = Σ_k a_k s(n - f_s |r_m - r_k| / c) / (4π |r_m - r_k|)`
//! with the ideal low-pass kernel `s`. The sum is exact: every source
//! contributes its full (untruncated) sinc to every sample.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array::MicArray;
use crate::error::{Error, Result};
use crate::geometry::{Vec3, SPEED_OF_SOUND};
use crate::image_source::{enumerate_image_sources, ImageSourceCloud};
use crate::kernel;
use crate::recovery::RecoveredRoom;
use crate::scene::{Placement, Scene};

/// Reflection order used when simulating a scene.
pub const SIMULATION_MAX_ORDER: u32 = 20;

/// Extra enumeration radius, in samples of propagation, beyond `c * duration`.
pub const GUARD_SAMPLES: f64 = 10.0;

/// Closest allowed source-microphone distance.
pub const MIN_DISTANCE: f64 = 1e-6;

/// An `M x N` real signal stored channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MultichannelRir {
    samples: Vec<f64>,
    channels: usize,
    len: usize,
    fs: f64,
    duration: f64,
    array_name: String,
}

/// JSON sidecar written next to a raw `.f64` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RirSidecar {
    pub fs: f64,
    pub duration: f64,
    #[serde(rename = "M")]
    pub channels: usize,
    #[serde(rename = "N")]
    pub len: usize,
    pub scene_id: String,
    #[serde(default)]
    pub array: String,
}

/// Number of samples for a duration: `round(duration * fs)`.
pub fn sample_count(fs: f64, duration: f64) -> usize {
    (duration * fs).round() as usize
}

fn check_rate(fs: f64, duration: f64) -> Result<()> {
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(Error::validation(format!("sampling rate must be positive, got {fs}")));
    }
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::validation(format!("duration must be positive, got {duration}")));
    }
    Ok(())
}

impl MultichannelRir {
    pub fn from_samples(
        samples: Vec<f64>,
        channels: usize,
        fs: f64,
        duration: f64,
        array_name: impl Into<String>,
    ) -> Result<Self> {
        check_rate(fs, duration)?;
        let len = sample_count(fs, duration);
        if samples.len() != channels * len {
            return Err(Error::validation(format!(
                "expected {channels} x {len} samples, got {}",
                samples.len()
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("RIR contains non-finite samples"));
        }
        Ok(MultichannelRir {
            samples,
            channels,
            len,
            fs,
            duration,
            array_name: array_name.into(),
        })
    }

    pub fn zeros(channels: usize, fs: f64, duration: f64, array_name: &str) -> Result<Self> {
        let len = sample_count(fs, duration);
        Self::from_samples(vec![0.0; channels * len], channels, fs, duration, array_name)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn array_name(&self) -> &str {
        &self.array_name
    }

    pub fn channel(&self, m: usize) -> &[f64] {
        &self.samples[m * self.len..(m + 1) * self.len]
    }

    /// All samples, channel-major.
    pub fn as_slice(&self) -> &[f64] {
        &self.samples
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }

    pub fn channel_energy(&self, m: usize) -> f64 {
        self.channel(m).iter().map(|v| v * v).sum()
    }

    pub fn sidecar(&self, scene_id: &str) -> RirSidecar {
        RirSidecar {
            fs: self.fs,
            duration: self.duration,
            channels: self.channels,
            len: self.len,
            scene_id: scene_id.to_string(),
            array: self.array_name.clone(),
        }
    }

    /// Writes raw little-endian `f64` samples (channel-major) to `path` and
    /// the JSON sidecar to `path` with extension `.json`.
    pub fn save(&self, path: &Path, scene_id: &str) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.samples.len() * 8);
        for v in &self.samples {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        let side = path.with_extension("json");
        let json = serde_json::to_string_pretty(&self.sidecar(scene_id))?;
        std::fs::write(&side, json).map_err(|e| Error::io(&side, e))
    }

    /// Reads a `.f64` file and its sidecar.
    pub fn load(path: &Path) -> Result<(Self, RirSidecar)> {
        let side_path = path.with_extension("json");
        let side: RirSidecar = serde_json::from_str(
            &std::fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?,
        )?;
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::validation(format!(
                "{} is not a whole number of f64 values",
                path.display()
            )));
        }
        let samples = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let rir = Self::from_samples(samples, side.channels, side.fs, side.duration, &side.array)?;
        if rir.len != side.len {
            return Err(Error::validation("sidecar N disagrees with fs * duration"));
        }
        Ok((rir, side))
    }

    /// CSV with one column per channel.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = (0..self.channels).map(|m| format!("mic{m}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for n in 0..self.len {
            let row: Vec<String> = (0..self.channels)
                .map(|m| format!("{:e}", self.samples[m * self.len + n]))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Renders a point-source cloud through the array: the forward operator.
pub fn synthesize_rir(
    cloud: &ImageSourceCloud,
    array: &MicArray,
    fs: f64,
    duration: f64,
) -> Result<MultichannelRir> {
    check_rate(fs, duration)?;
    if cloud.is_empty() {
        return Err(Error::validation("cannot synthesize an empty cloud"));
    }
    let len = sample_count(fs, duration);
    for (m, mic) in array.positions().iter().enumerate() {
        for src in cloud.iter() {
            let d = (mic - src.position).norm();
            if d < MIN_DISTANCE {
                return Err(Error::Singularity { mic: m, distance: d });
            }
        }
    }
    let channels: Vec<Vec<f64>> = array
        .positions()
        .par_iter()
        .map(|mic| {
            let mut out = vec![0.0; len];
            for src in cloud.iter() {
                add_point_source(&mut out, mic, &src.position, src.amplitude, fs);
            }
            out
        })
        .collect();
    MultichannelRir::from_samples(channels.concat(), array.len(), fs, duration, array.name())
}

/// Adds one source's contribution to one channel.
#[inline]
pub(crate) fn add_point_source(out: &mut [f64], mic: &Vec3, src: &Vec3, amplitude: f64, fs: f64) {
    let d = (mic - src).norm();
    let tau = fs * d / SPEED_OF_SOUND;
    kernel::add_shifted(out, tau, amplitude / (4.0 * PI * d));
}

/// Enumeration radius that keeps every source able to reach a microphone
/// within the window, plus the guard margin.
pub fn simulation_radius(array: &MicArray, fs: f64, duration: f64) -> f64 {
    SPEED_OF_SOUND * duration + GUARD_SAMPLES * SPEED_OF_SOUND / fs + array.radius()
}

/// Simulates a scene with image sources up to order 20.
pub fn simulate_scene_rir(scene: &Scene, fs: f64, duration: f64) -> Result<MultichannelRir> {
    check_rate(fs, duration)?;
    let radius = simulation_radius(&scene.array, fs, duration);
    let cloud = enumerate_image_sources(scene, SIMULATION_MAX_ORDER, radius)?;
    synthesize_rir(&cloud, &scene.array, fs, duration)
}

/// Additive white noise at a given peak signal-to-noise ratio.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub psnr_db: f64,
    pub seed: u64,
}

/// Adds i.i.d. Gaussian noise with `σ = peak · 10^(-psnr/20)`. An infinite
/// PSNR returns the input unchanged.
pub fn add_noise_psnr(rir: &MultichannelRir, spec: &NoiseSpec) -> Result<MultichannelRir> {
    if spec.psnr_db.is_nan() {
        return Err(Error::validation("PSNR is NaN"));
    }
    let peak = rir.peak();
    if peak == 0.0 {
        return Err(Error::ZeroSignal);
    }
    if spec.psnr_db == f64::INFINITY {
        return Ok(rir.clone());
    }
    let sigma = peak * 10f64.powf(-spec.psnr_db / 20.0);
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::validation(format!("noise level: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = rir.clone();
    for v in out.samples.iter_mut() {
        *v += normal.sample(&mut rng);
    }
    Ok(out)
}

/// Re-simulates the recovered room for a new source and array placement,
/// given in the array frame of the original measurement.
pub fn extrapolate_rir(
    recovered: &RecoveredRoom,
    placement: &Placement,
    array: &MicArray,
    fs: f64,
    duration: f64,
) -> Result<MultichannelRir> {
    let scene = recovered.to_scene(array)?.reposition(placement)?;
    simulate_scene_rir(&scene, fs, duration)
}
