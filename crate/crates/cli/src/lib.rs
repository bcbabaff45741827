//! Batch studies: random rooms are simulated, inverted, evaluated and
//! re-simulated at new placements, one directory per room.

pub mod config;
pub mod plot;
pub mod study;

pub use config::{ArraySpec, RoomSeeds, StudyConfig};
pub use study::{Manifest, Study};
