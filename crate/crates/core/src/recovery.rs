//! Room parameters from an image-source cloud and an estimated basis.
//!
//! The true source is the cloud member closest to the array center, among
//! members not much weaker than the strongest. Its six first-order images
//! are found by casting a cone from it along `±ê_t`, and taking the nearest
//! member inside (the cone widens when empty). Each pick
//! is fused with its neighbors within `μ` to undo spike splitting. Then, with
//! `r±` the fused images along `±ê_t`:
//!
//! ```text
//! L_t = ê_t · (r+ - r-) / 2        τ_t = ê_t · (r0 - r-) / 2
//! α_w = 1 - (a_w / a_0)²
//! ```

use std::path::Path;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::array::MicArray;
use crate::error::{Error, Result};
use crate::geometry::{angle_between, Rotation, Side, Vec3, Wall};
use crate::image_source::{ImageSource, ImageSourceCloud};
use crate::orientation::Basis;
use crate::scene::{RoomBox, Scene, WallSet};

/// Two candidates closer than this in distance to the array center make the
/// direct path ambiguous.
pub const SOURCE_TIE_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConeSearchConfig {
    /// Radians.
    pub initial_half_angle: f64,
    pub widen_factor: f64,
    /// Radians.
    pub max_half_angle: f64,
    /// In-cone candidates farther than the nearest one by at most this
    /// (meters) are treated as equally near; the one closest to the cone
    /// axis wins. Zero gives the plain nearest-in-cone rule.
    pub distance_tie: f64,
    /// Members weaker than this fraction of the source amplitude are not
    /// reflection candidates (0.25 corresponds to an absorption of 0.94),
    /// and members weaker than it times the median cannot be the source.
    /// Keeps weak spurious spikes from shadowing a far wall.
    pub min_amplitude_ratio: f64,
}

impl Default for ConeSearchConfig {
    fn default() -> Self {
        ConeSearchConfig {
            initial_half_angle: 15f64.to_radians(),
            widen_factor: 1.5,
            max_half_angle: 90f64.to_radians(),
            distance_tie: 0.05,
            min_amplitude_ratio: 0.25,
        }
    }
}

impl ConeSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_half_angle > 0.0
            && self.initial_half_angle <= self.max_half_angle
            && self.widen_factor > 1.0
            && self.distance_tie >= 0.0
            && (0.0..1.0).contains(&self.min_amplitude_ratio))
        {
            return Err(Error::validation(
                "cone search needs 0 < initial <= max half angle, widen_factor > 1, \
                 distance_tie >= 0 and min_amplitude_ratio in [0, 1)",
            ));
        }
        Ok(())
    }
}

/// Fusion radius and cone schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoveryConfig {
    /// Fusion radius μ in meters.
    pub mu: f64,
    pub cone: ConeSearchConfig,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig {
            mu: 0.05,
            cone: ConeSearchConfig::default(),
        }
    }
}

/// Recovered room parameters, in the array frame.
#[derive(Clone, Debug, PartialEq)]
pub struct RecoveredRoom {
    pub basis: Basis,
    pub dims: Vec3,
    /// Source in room coordinates: its distances to the three near walls.
    pub source_room: Vec3,
    /// Fused true source `r̂0`.
    pub source: Vec3,
    pub source_amplitude: f64,
    /// Absorptions normalized by the source amplitude, clamped to `[0, 1]`.
    pub absorptions: [f64; 6],
    /// Same before clamping.
    pub absorptions_unclamped: [f64; 6],
    /// `1 - a²` with the raw fused amplitudes (no normalization).
    pub absorptions_raw: [f64; 6],
    /// Fused first-order images, wall order `x-, x+, y-, y+, z-, z+`.
    pub first_order: [ImageSource; 6],
    /// Final cone half angle (rad) at which each wall's image was found.
    pub cone_angles: [f64; 6],
}

impl RecoveredRoom {
    /// Parameters of a known scene, as if recovered exactly.
    pub fn from_scene(scene: &Scene) -> Self {
        let basis = Basis::from_rotation(&scene.room.pose);
        let refl = scene.walls.reflections();
        let first_order = std::array::from_fn(|w| {
            let wall = Wall::from_index(w);
            let e = basis.axis(wall.axis);
            let shift = match wall.side {
                Side::Near => -2.0 * scene.source_room[wall.axis],
                Side::Far => 2.0 * (scene.room.dims[wall.axis] - scene.source_room[wall.axis]),
            };
            ImageSource::unlabeled(scene.source + e * shift, refl[w])
        });
        let abs = scene.walls.absorptions();
        RecoveredRoom {
            basis,
            dims: scene.room.dims,
            source_room: scene.source_room,
            source: scene.source,
            source_amplitude: 1.0,
            absorptions: abs,
            absorptions_unclamped: abs,
            absorptions_raw: abs,
            first_order,
            cone_angles: [0.0; 6],
        }
    }

    pub fn rotation(&self) -> Result<Rotation> {
        self.basis.to_rotation()
    }

    /// Array-frame point to recovered room coordinates.
    pub fn array_to_room(&self, r: &Vec3) -> Vec3 {
        let d = r - self.source;
        Vec3::new(
            self.basis.e1.dot(&d),
            self.basis.e2.dot(&d),
            self.basis.e3.dot(&d),
        ) + self.source_room
    }

    /// Recovered room coordinates to the array frame.
    pub fn room_to_array(&self, p: &Vec3) -> Vec3 {
        let d = p - self.source_room;
        self.source + self.basis.e1 * d.x + self.basis.e2 * d.y + self.basis.e3 * d.z
    }

    /// Room corner shared by the three near walls, in the array frame.
    pub fn corner_origin(&self) -> Vec3 {
        self.room_to_array(&Vec3::zeros())
    }

    /// A scene that simulates the recovered room with `array`.
    pub fn to_scene(&self, array: &MicArray) -> Result<Scene> {
        let pose = self.rotation()?;
        let room = RoomBox::new(self.dims, pose, self.source - pose.apply(&self.source_room))?;
        let top = 1.0 - f64::EPSILON;
        let walls = WallSet::new(self.absorptions.map(|a| a.clamp(0.0, top)))?;
        Scene::new_relaxed(room, walls, self.source, self.source_room, array.clone())
    }

    pub fn to_doc(&self) -> RecoveredDoc {
        RecoveredDoc {
            dims_m: self.dims.into(),
            rotation: self.basis_matrix_row_major(),
            corner_origin_m: self.corner_origin().into(),
            absorptions: self.absorptions,
            source_m: self.source.into(),
            source_room_m: self.source_room.into(),
            basis: [self.basis.e1.into(), self.basis.e2.into(), self.basis.e3.into()],
            first_order: self
                .first_order
                .iter()
                .map(|s| FirstOrderEntry {
                    position_m: s.position.into(),
                    amplitude: s.amplitude,
                })
                .collect(),
            source_amplitude: self.source_amplitude,
            raw_amplitudes: self.first_order.map(|s| s.amplitude),
            diagnostics: Diagnostics {
                absorptions_unclamped: self.absorptions_unclamped,
                absorptions_unnormalized: self.absorptions_raw,
                cone_half_angles_deg: self.cone_angles.map(f64::to_degrees),
            },
        }
    }

    fn basis_matrix_row_major(&self) -> [f64; 9] {
        let [a, b, c] = self.basis.axes();
        [a.x, b.x, c.x, a.y, b.y, c.y, a.z, b.z, c.z]
    }

    pub fn from_doc(doc: RecoveredDoc) -> Result<Self> {
        if doc.first_order.len() != 6 {
            return Err(Error::validation("first_order must list six images"));
        }
        let [e1, e2, e3] = doc.basis.map(Vec3::from);
        let first_order = std::array::from_fn(|i| {
            let f = &doc.first_order[i];
            ImageSource::unlabeled(f.position_m.into(), f.amplitude)
        });
        Ok(RecoveredRoom {
            basis: Basis { e1, e2, e3 },
            dims: doc.dims_m.into(),
            source_room: doc.source_room_m.into(),
            source: doc.source_m.into(),
            source_amplitude: doc.source_amplitude,
            absorptions: doc.absorptions,
            absorptions_unclamped: doc.diagnostics.absorptions_unclamped,
            absorptions_raw: doc.diagnostics.absorptions_unnormalized,
            first_order,
            cone_angles: doc.diagnostics.cone_half_angles_deg.map(f64::to_radians),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        RecoveredRoom::from_doc(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RecoveredRoom::from_json(&s)
    }
}

/// On-disk layout: the scene fields first, then the recovery extras.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecoveredDoc {
    pub dims_m: [f64; 3],
    pub rotation: [f64; 9],
    pub corner_origin_m: [f64; 3],
    pub absorptions: [f64; 6],
    pub source_m: [f64; 3],
    pub source_room_m: [f64; 3],
    pub basis: [[f64; 3]; 3],
    pub first_order: Vec<FirstOrderEntry>,
    pub source_amplitude: f64,
    pub raw_amplitudes: [f64; 6],
    pub diagnostics: Diagnostics,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FirstOrderEntry {
    pub position_m: [f64; 3],
    pub amplitude: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Diagnostics {
    pub absorptions_unclamped: [f64; 6],
    pub absorptions_unnormalized: [f64; 6],
    pub cone_half_angles_deg: [f64; 6],
}

/// Index of the member closest to the array center.
pub fn identify_true_source(cloud: &ImageSourceCloud) -> Result<usize> {
    identify_true_source_above(cloud, 0.0)
}

/// As [`identify_true_source`], ignoring members weaker than `min_ratio`
/// times the median amplitude. With noise, SFW can place a faint spike
/// closer to the array than the direct path. The median, not the maximum:
/// a single spurious spike late in the window can be several times
/// stronger than any true image.
pub fn identify_true_source_above(cloud: &ImageSourceCloud, min_ratio: f64) -> Result<usize> {
    if cloud.is_empty() {
        return Err(Error::Degenerate("empty cloud".into()));
    }
    let mut amps: Vec<f64> = cloud.iter().map(|s| s.amplitude).collect();
    amps.sort_by(f64::total_cmp);
    let floor = min_ratio * amps[amps.len() / 2];
    let mut order: Vec<(f64, usize)> = cloud
        .iter()
        .enumerate()
        .filter(|(_, s)| min_ratio <= 0.0 || s.amplitude >= floor)
        .map(|(i, s)| (s.position.norm(), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    if order.len() > 1 && order[1].0 - order[0].0 <= SOURCE_TIE_TOLERANCE {
        return Err(Error::AmbiguousSource(order[1].0 - order[0].0));
    }
    Ok(order[0].1)
}

fn fusion_members(candidate: usize, cloud: &ImageSourceCloud, mu: f64) -> Vec<usize> {
    let c = cloud.sources[candidate].position;
    (0..cloud.len())
        .filter(|&i| i == candidate || (cloud.sources[i].position - c).norm() <= mu)
        .collect()
}

fn fuse(members: &[usize], cloud: &ImageSourceCloud) -> (f64, Vec3) {
    let total: f64 = members.iter().map(|&i| cloud.sources[i].amplitude).sum();
    let centroid = members
        .iter()
        .map(|&i| cloud.sources[i].position * (cloud.sources[i].amplitude / total))
        .sum();
    (total, centroid)
}

/// Merges every member within `mu` of the candidate: summed amplitude and
/// amplitude-weighted centroid.
pub fn fusion(candidate: usize, cloud: &ImageSourceCloud, mu: f64) -> Result<(f64, Vec3)> {
    if !(mu > 0.0) {
        return Err(Error::validation("fusion radius must be positive"));
    }
    if candidate >= cloud.len() {
        return Err(Error::validation("candidate index out of range"));
    }
    Ok(fuse(&fusion_members(candidate, cloud, mu), cloud))
}

fn cone_search(
    origin: &Vec3,
    direction: &Vec3,
    cloud: &ImageSourceCloud,
    excluded: &[bool],
    min_amplitude: f64,
    cfg: &ConeSearchConfig,
) -> Option<(usize, f64)> {
    let mut half = cfg.initial_half_angle;
    loop {
        // (index, distance, angle) of every member inside the cone.
        let inside: Vec<(usize, f64, f64)> = cloud
            .iter()
            .enumerate()
            .filter(|(i, s)| !excluded.get(*i).copied().unwrap_or(false) && s.amplitude >= min_amplitude)
            .filter_map(|(i, s)| {
                let d = s.position - origin;
                let dist = d.norm();
                let angle = angle_between(&d, direction);
                (dist > 0.0 && angle <= half).then_some((i, dist, angle))
            })
            .collect();
        if let Some(nearest) = inside.iter().map(|c| c.1).reduce(f64::min) {
            let best = inside
                .iter()
                .filter(|c| c.1 <= nearest + cfg.distance_tie)
                .min_by(|a, b| a.2.total_cmp(&b.2).then(a.1.total_cmp(&b.1)))
                .map(|c| c.0)?;
            return Some((best, half));
        }
        if half >= cfg.max_half_angle {
            return None;
        }
        half = (half * cfg.widen_factor).min(cfg.max_half_angle);
    }
}

/// Nearest member inside the cone of apex `origin`, axis `direction`; the cone
/// widens until something is found or `max_half_angle` is exhausted. Near
/// ties (see [`ConeSearchConfig::distance_tie`]) go to the member closest to
/// the axis. No amplitude floor applies here.
pub fn closest_in_cone(
    origin: &Vec3,
    direction: &Vec3,
    cloud: &ImageSourceCloud,
    cfg: &ConeSearchConfig,
) -> Option<usize> {
    cone_search(origin, &direction.normalize(), cloud, &[], f64::NEG_INFINITY, cfg).map(|(i, _)| i)
}

/// Recovers dimensions, translation, source and absorptions.
pub fn recover_room(
    cloud: &ImageSourceCloud,
    basis: &Basis,
    mu: f64,
    cone: &ConeSearchConfig,
) -> Result<RecoveredRoom> {
    cone.validate()?;
    if !(mu > 0.0) {
        return Err(Error::validation("fusion radius must be positive"));
    }
    let k0 = identify_true_source_above(cloud, cone.min_amplitude_ratio)?;
    let src_members = fusion_members(k0, cloud, mu);
    let (a0, r0) = fuse(&src_members, cloud);
    if !(a0 > 0.0) {
        return Err(Error::Degenerate("true source has no positive amplitude".into()));
    }
    let mut excluded = vec![false; cloud.len()];
    for &i in &src_members {
        excluded[i] = true;
    }

    let mut first_order = [ImageSource::unlabeled(Vec3::zeros(), 0.0); 6];
    let mut cone_angles = [0.0; 6];
    for wall in Wall::ALL {
        let e = basis.axis(wall.axis);
        let dir = match wall.side {
            Side::Near => -e,
            Side::Far => e,
        };
        let (hit, half) =
            cone_search(&r0, &dir, cloud, &excluded, cone.min_amplitude_ratio * a0, cone).ok_or(Error::MissingReflection(wall))?;
        let (a, r) = fuse(&fusion_members(hit, cloud, mu), cloud);
        first_order[wall.index()] = ImageSource::unlabeled(r, a);
        cone_angles[wall.index()] = half;
        if half > cone.initial_half_angle {
            debug!("wall {wall}: cone widened to {:.1} deg", half.to_degrees());
        }
    }

    let mut dims = Vec3::zeros();
    let mut source_room = Vec3::zeros();
    for t in 0..3 {
        let e = basis.axis(t);
        let near = first_order[Wall::new(t, Side::Near).index()].position;
        let far = first_order[Wall::new(t, Side::Far).index()].position;
        dims[t] = e.dot(&(far - near)) / 2.0;
        source_room[t] = e.dot(&(r0 - near)) / 2.0;
        if !(dims[t] > 0.0) {
            return Err(Error::InconsistentBasis {
                axis: t,
                length: dims[t],
            });
        }
        if !(0.0..=dims[t]).contains(&source_room[t]) {
            warn!(
                "recovered source coordinate {:.4} m outside [0, {:.4}] on axis {t}",
                source_room[t], dims[t]
            );
        }
    }

    let unclamped = first_order.map(|s| 1.0 - (s.amplitude / a0).powi(2));
    let raw = first_order.map(|s| 1.0 - s.amplitude * s.amplitude);
    for (w, a) in unclamped.iter().enumerate() {
        if !(0.0..=1.0).contains(a) {
            debug!("wall {}: raw absorption {a:.4} clamped", Wall::from_index(w));
        }
    }
    Ok(RecoveredRoom {
        basis: *basis,
        dims,
        source_room,
        source: r0,
        source_amplitude: a0,
        absorptions: unclamped.map(|a| a.clamp(0.0, 1.0)),
        absorptions_unclamped: unclamped,
        absorptions_raw: raw,
        first_order,
        cone_angles,
    })
}

/// Center of the recovered room in the array frame.
pub fn room_center_in_array_frame(recovered: &RecoveredRoom) -> Vec3 {
    recovered.room_to_array(&(recovered.dims * 0.5))
}
