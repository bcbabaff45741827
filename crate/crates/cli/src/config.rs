use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use shoebox_inverse::array::MicArray;
use shoebox_inverse::orientation::OrientationConfig;
use shoebox_inverse::recovery::RecoveryConfig;
use shoebox_inverse::scene::SceneDistribution;
use shoebox_inverse::sfw::SfwConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArraySpec {
    /// `em32` or `double_square`.
    pub name: String,
    pub scale_factor: f64,
}

impl Default for ArraySpec {
    fn default() -> Self {
        ArraySpec {
            name: "em32".into(),
            scale_factor: 1.0,
        }
    }
}

impl ArraySpec {
    pub fn build(&self) -> anyhow::Result<MicArray> {
        Ok(MicArray::builtin(&self.name, self.scale_factor)?)
    }
}

/// Everything a batch study needs. Unset JSON fields take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub n_rooms: usize,
    pub seed: u64,
    pub fs: f64,
    pub duration: f64,
    pub array: ArraySpec,
    pub psnr_db: Option<f64>,
    /// Skip localization and feed the exact cloud (orders <= 2).
    pub oracle_cloud: bool,
    pub scenes: SceneDistribution,
    pub sfw: SfwConfig,
    pub orientation: OrientationConfig,
    pub recovery: RecoveryConfig,
    /// Dimension-recall thresholds in meters.
    pub recall_thresholds: Vec<f64>,
    pub output_dir: PathBuf,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            n_rooms: 10,
            seed: 0,
            fs: 16_000.0,
            duration: 0.05,
            array: ArraySpec::default(),
            psnr_db: None,
            oracle_cloud: false,
            scenes: SceneDistribution::default(),
            sfw: SfwConfig::default(),
            orientation: OrientationConfig::default(),
            recovery: RecoveryConfig::default(),
            recall_thresholds: shoebox_inverse::metrics::default_thresholds(),
            output_dir: PathBuf::from("study"),
        }
    }
}

impl StudyConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.n_rooms == 0 {
            bail!("n_rooms must be at least 1");
        }
        if !(self.fs > 0.0 && self.duration > 0.0) {
            bail!("fs and duration must be positive");
        }
        self.array.build()?;
        self.sfw.validate()?;
        self.orientation.validate()?;
        self.recovery.cone.validate()?;
        if !(self.recovery.mu > 0.0) {
            bail!("recovery.mu must be positive");
        }
        Ok(())
    }

    pub fn to_json(&self) -> anyhow::Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// SplitMix64 finalizer: a bijective mixer for counter-based seeding.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent seed streams of one room.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoomSeeds {
    pub room: u64,
    pub scene: u64,
    pub noise: u64,
    pub placement: u64,
}

impl RoomSeeds {
    /// Depends only on the master seed and the room index, so changing the
    /// number of rooms never reshuffles earlier rooms.
    pub fn derive(master: u64, index: usize) -> Self {
        let room = splitmix64(master ^ splitmix64(index as u64));
        RoomSeeds {
            room,
            scene: splitmix64(room ^ 1),
            noise: splitmix64(room ^ 2),
            placement: splitmix64(room ^ 3),
        }
    }
}
