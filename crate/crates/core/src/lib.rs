//! Simulation and full inversion of the shoebox image-source model.
//!
//! The forward direction turns a room (size, pose, wall absorptions), a
//! source and a microphone array into a band-limited multichannel RIR. The
//! inverse direction recovers the weighted image-source cloud from the RIR
//! ([`sfw`]), the room orientation from the cloud ([`orientation`]) and the
//! remaining parameters from the first-order images ([`recovery`]).
//!
//! ```
//! use shoebox_inverse::prelude::*;
//!
//! let array = MicArray::em32(1.0)?;
//! let scene = random_scene(&SceneDistribution::default(), &array, 7)?;
//! let cloud = enumerate_image_sources(&scene, 2, f64::INFINITY)?;
//! let basis = estimate_orientation(&cloud, &OrientationConfig::default())?;
//! let room = recover_room(&cloud, &basis, 0.05, &ConeSearchConfig::default())?;
//! let errors = room_errors(&scene, &room)?;
//! assert!(errors.dim_abs_errors_m.iter().all(|e| *e < 1e-9));
//! # Ok::<(), shoebox_inverse::Error>(())
//! ```

pub mod array;
pub mod error;
pub mod geometry;
pub mod image_source;
pub mod kernel;
pub mod metrics;
pub mod optim;
pub mod orientation;
pub mod recovery;
pub mod rir;
pub mod scene;
pub mod sfw;

pub use error::{Error, Result};

/// The types and entry points of a typical pipeline.
pub mod prelude {
    pub use crate::array::MicArray;
    pub use crate::error::{Error, Result};
    pub use crate::geometry::{Rotation, Vec3, Wall, SPEED_OF_SOUND};
    pub use crate::image_source::{enumerate_image_sources, ImageSource, ImageSourceCloud};
    pub use crate::metrics::{match_axes, recall_curve, room_errors, ser, EvalReport, SER_CAP_DB};
    pub use crate::orientation::{estimate_orientation, Basis, OrientationConfig};
    pub use crate::recovery::{recover_room, ConeSearchConfig, RecoveredRoom, RecoveryConfig};
    pub use crate::rir::{
        add_noise_psnr, extrapolate_rir, simulate_scene_rir, synthesize_rir, MultichannelRir,
        NoiseSpec,
    };
    pub use crate::scene::{random_placement, random_scene, Placement, Scene, SceneDistribution};
    pub use crate::sfw::{sfw_localize, SfwConfig};
}

/// The guide's listings, compiled and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/forward.md")]
    mod forward {}
    #[doc = include_str!("../../../book/src/localization.md")]
    mod localization {}
    #[doc = include_str!("../../../book/src/orientation.md")]
    mod orientation {}
    #[doc = include_str!("../../../book/src/recovery.md")]
    mod recovery {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/studies.md")]
    mod studies {}
}
