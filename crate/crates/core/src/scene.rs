//! Ground-truth scenes: a shoebox room, its wall absorptions, one source and
//! a microphone array.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::array::{ArrayDoc, MicArray};
use crate::error::{Error, Result};
use crate::geometry::{Rotation, Vec3, Wall};

/// Minimum source to array-center distance used by the random protocol.
pub const MIN_SOURCE_ARRAY_DISTANCE: f64 = 1.0;
/// Minimum array-center to wall distance used by the random protocol.
pub const ARRAY_WALL_MARGIN: f64 = 0.25;
/// Minimum source to wall distance used by the random protocol.
pub const SOURCE_WALL_MARGIN: f64 = 0.01;

const SLACK: f64 = 1e-12;

/// A cuboid room posed in the array frame.
///
/// `corner_origin` is the room corner shared by the three `Near` walls and
/// `pose` holds the wall normals as columns, so a room-frame point `p` sits at
/// `corner_origin + pose * p` in the array frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoomBox {
    pub dims: Vec3,
    pub pose: Rotation,
    pub corner_origin: Vec3,
}

impl RoomBox {
    pub fn new(dims: Vec3, pose: Rotation, corner_origin: Vec3) -> Result<Self> {
        if !dims.iter().all(|d| d.is_finite() && *d > 0.0) {
            return Err(Error::validation(format!(
                "room dimensions must be positive, got {dims:?}"
            )));
        }
        if !corner_origin.iter().all(|v| v.is_finite()) {
            return Err(Error::validation("room corner is not finite"));
        }
        Ok(RoomBox {
            dims,
            pose,
            corner_origin,
        })
    }

    pub fn to_room(&self, r: &Vec3) -> Vec3 {
        self.pose.apply_inverse(&(r - self.corner_origin))
    }

    pub fn to_array(&self, p: &Vec3) -> Vec3 {
        self.corner_origin + self.pose.apply(p)
    }

    /// Smallest distance from a room-frame point to the six walls; negative
    /// when the point is outside.
    pub fn wall_clearance(&self, p_room: &Vec3) -> f64 {
        (0..3)
            .map(|i| p_room[i].min(self.dims[i] - p_room[i]))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Absorption coefficients of the six walls in the order `x-, x+, y-, y+,
/// z-, z+`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WallSet {
    absorption: [f64; 6],
}

impl WallSet {
    pub fn new(absorption: [f64; 6]) -> Result<Self> {
        for (i, a) in absorption.iter().enumerate() {
            if !(0.0..1.0).contains(a) {
                return Err(Error::validation(format!(
                    "absorption of wall {} is {a}, expected [0, 1)",
                    Wall::from_index(i)
                )));
            }
        }
        Ok(WallSet { absorption })
    }

    /// Walls with reflection amplitudes `a`; absorption is `1 - a^2`.
    pub fn from_reflections(reflection: [f64; 6]) -> Result<Self> {
        for a in &reflection {
            if !(*a > 0.0 && *a <= 1.0) {
                return Err(Error::validation(format!(
                    "reflection amplitude {a} outside (0, 1]"
                )));
            }
        }
        Self::new(reflection.map(|a| 1.0 - a * a))
    }

    pub fn uniform(absorption: f64) -> Result<Self> {
        Self::new([absorption; 6])
    }

    pub fn rigid() -> Self {
        WallSet {
            absorption: [0.0; 6],
        }
    }

    pub fn absorption(&self, wall: Wall) -> f64 {
        self.absorption[wall.index()]
    }

    pub fn absorptions(&self) -> [f64; 6] {
        self.absorption
    }

    /// Reflection amplitude `sqrt(1 - alpha)`.
    pub fn reflection(&self, wall: Wall) -> f64 {
        (1.0 - self.absorption(wall)).sqrt()
    }

    pub fn reflections(&self) -> [f64; 6] {
        self.absorption.map(|a| (1.0 - a).sqrt())
    }
}

/// A complete simulation input: 18 room parameters plus the array.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub room: RoomBox,
    pub walls: WallSet,
    /// Source position in the array frame.
    pub source: Vec3,
    /// Source position in the room frame: its distances to the near walls.
    pub source_room: Vec3,
    pub array: MicArray,
}

/// A new source and array pose, expressed in a scene's array frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Placement {
    pub source: Vec3,
    pub array_center: Vec3,
    pub array_rotation: Rotation,
}

impl Placement {
    /// The placement that leaves a scene unchanged.
    pub fn unchanged(scene: &Scene) -> Self {
        Placement {
            source: scene.source,
            array_center: Vec3::zeros(),
            array_rotation: Rotation::identity(),
        }
    }
}

impl Scene {
    /// Builds a scene from room-frame coordinates of the array center and of
    /// the source, enforcing the random-scene protocol constraints (1 m
    /// source-array separation, 25 cm array-wall margin, 1 cm source-wall
    /// margin, microphones inside).
    pub fn from_room_coords(
        dims: Vec3,
        pose: Rotation,
        array_center_room: Vec3,
        source_room: Vec3,
        walls: WallSet,
        array: MicArray,
    ) -> Result<Self> {
        let corner = -pose.apply(&array_center_room);
        let room = RoomBox::new(dims, pose, corner)?;
        let source = room.to_array(&source_room);
        let scene = Scene {
            room,
            walls,
            source,
            source_room,
            array,
        };
        scene.validate_protocol()?;
        Ok(scene)
    }

    /// Builds a scene from a posed room and an array-frame source position,
    /// enforcing the protocol constraints.
    pub fn new(room: RoomBox, walls: WallSet, source: Vec3, array: MicArray) -> Result<Self> {
        let source_room = room.to_room(&source);
        let scene = Scene {
            room,
            walls,
            source,
            source_room,
            array,
        };
        scene.validate_protocol()?;
        Ok(scene)
    }

    /// Builds a scene that only needs the source and microphones strictly
    /// inside the room. `source` and `source_room` are stored as given and
    /// must describe the same point.
    pub fn new_relaxed(
        room: RoomBox,
        walls: WallSet,
        source: Vec3,
        source_room: Vec3,
        array: MicArray,
    ) -> Result<Self> {
        let scene = Scene {
            room,
            walls,
            source,
            source_room,
            array,
        };
        scene.validate_containment()?;
        let drift = (room.to_array(&source_room) - source).norm();
        if drift > 1e-9 * (1.0 + source.norm()) {
            return Err(Error::validation(format!(
                "source array/room coordinates disagree by {drift:.3e} m"
            )));
        }
        Ok(scene)
    }

    /// Array center (array-frame origin) in room coordinates.
    pub fn array_center_room(&self) -> Vec3 {
        self.room.to_room(&Vec3::zeros())
    }

    /// Room center in the array frame.
    pub fn room_center(&self) -> Vec3 {
        self.room.to_array(&(self.room.dims * 0.5))
    }

    pub fn validate_containment(&self) -> Result<()> {
        if !self.source.iter().all(|v| v.is_finite()) {
            return Err(Error::validation("source is not finite"));
        }
        if self.room.wall_clearance(&self.source_room) <= 0.0 {
            return Err(Error::validation("source is not strictly inside the room"));
        }
        if self.room.wall_clearance(&self.array_center_room()) <= 0.0 {
            return Err(Error::validation("array center is outside the room"));
        }
        for (m, p) in self.array.positions().iter().enumerate() {
            if self.room.wall_clearance(&self.room.to_room(p)) <= 0.0 {
                return Err(Error::validation(format!(
                    "microphone {m} is not strictly inside the room"
                )));
            }
        }
        Ok(())
    }

    pub fn validate_protocol(&self) -> Result<()> {
        self.validate_containment()?;
        if self.source.norm() < MIN_SOURCE_ARRAY_DISTANCE - SLACK {
            return Err(Error::validation(format!(
                "source is {:.3} m from the array center, need {MIN_SOURCE_ARRAY_DISTANCE} m",
                self.source.norm()
            )));
        }
        if self.room.wall_clearance(&self.array_center_room()) < ARRAY_WALL_MARGIN - SLACK {
            return Err(Error::validation(format!(
                "array center closer than {ARRAY_WALL_MARGIN} m to a wall"
            )));
        }
        if self.room.wall_clearance(&self.source_room) < SOURCE_WALL_MARGIN - SLACK {
            return Err(Error::validation(format!(
                "source closer than {SOURCE_WALL_MARGIN} m to a wall"
            )));
        }
        Ok(())
    }

    /// Moves to the array frame of a new placement. The room and walls are
    /// unchanged; only the frame in which they are expressed moves. When the
    /// placement is [`Placement::unchanged`] the result is bit-identical.
    pub fn reposition(&self, placement: &Placement) -> Result<Scene> {
        let q = &placement.array_rotation;
        let c = placement.array_center;
        let pose = q.inverse().compose(&self.room.pose);
        let corner = q.apply_inverse(&(self.room.corner_origin - c));
        let source = q.apply_inverse(&(placement.source - c));
        let source_room =
            self.source_room + self.room.pose.apply_inverse(&(placement.source - self.source));
        let room = RoomBox::new(self.room.dims, pose, corner)?;
        Scene::new_relaxed(room, self.walls, source, source_room, self.array.clone())
    }

    pub fn to_doc(&self) -> SceneDoc {
        SceneDoc {
            dims_m: self.room.dims.into(),
            rotation: self.room.pose.to_row_major(),
            corner_origin_m: self.room.corner_origin.into(),
            absorptions: self.walls.absorptions(),
            source_m: self.source.into(),
            array: ArrayDoc::from(&self.array),
        }
    }

    pub fn from_doc(doc: SceneDoc) -> Result<Self> {
        let pose = Rotation::from_row_major(&doc.rotation)?;
        let room = RoomBox::new(doc.dims_m.into(), pose, doc.corner_origin_m.into())?;
        let walls = WallSet::new(doc.absorptions)?;
        let array = MicArray::try_from(doc.array)?;
        let source: Vec3 = doc.source_m.into();
        let source_room = room.to_room(&source);
        Scene::new_relaxed(room, walls, source, source_room, array)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Scene::from_doc(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Scene::from_json(&s)
    }
}

/// On-disk scene layout. Fields serialize in declaration order; floats use
/// the shortest representation that round-trips exactly.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneDoc {
    pub dims_m: [f64; 3],
    pub rotation: [f64; 9],
    pub corner_origin_m: [f64; 3],
    pub absorptions: [f64; 6],
    pub source_m: [f64; 3],
    pub array: ArrayDoc,
}

/// Parameter ranges of the randomized room protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneDistribution {
    pub length_x: (f64, f64),
    pub length_y: (f64, f64),
    pub length_z: (f64, f64),
    pub absorption: (f64, f64),
    pub min_source_array: f64,
    pub array_wall_margin: f64,
    pub source_wall_margin: f64,
    pub max_attempts: usize,
}

impl Default for SceneDistribution {
    fn default() -> Self {
        SceneDistribution {
            length_x: (2.0, 10.0),
            length_y: (2.0, 10.0),
            length_z: (2.0, 5.0),
            absorption: (0.01, 0.3),
            min_source_array: MIN_SOURCE_ARRAY_DISTANCE,
            array_wall_margin: ARRAY_WALL_MARGIN,
            source_wall_margin: SOURCE_WALL_MARGIN,
            max_attempts: 10_000,
        }
    }
}

impl SceneDistribution {
    fn validate(&self) -> Result<()> {
        let ranges = [
            ("length_x", self.length_x),
            ("length_y", self.length_y),
            ("length_z", self.length_z),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::validation(format!("invalid range for {name}")));
            }
        }
        let (lo, hi) = self.absorption;
        if !(0.0..1.0).contains(&lo) || !(lo..1.0).contains(&hi) {
            return Err(Error::validation("invalid absorption range"));
        }
        if self.max_attempts == 0 {
            return Err(Error::validation("max_attempts must be positive"));
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Draws a deterministic random scene for `seed`.
pub fn random_scene(cfg: &SceneDistribution, array: &MicArray, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = Vec3::new(
        uniform(&mut rng, cfg.length_x),
        uniform(&mut rng, cfg.length_y),
        uniform(&mut rng, cfg.length_z),
    );
    let mut absorption = [0.0; 6];
    for a in absorption.iter_mut() {
        *a = uniform(&mut rng, cfg.absorption);
    }
    let walls = WallSet::new(absorption)?;
    let pose = Rotation::random(&mut rng);
    let (center, source) = draw_positions(cfg, &dims, &pose.inverse(), array, &mut rng)?;
    Scene::from_room_coords(dims, pose, center, source, walls, array.clone())
}

/// Draws an array center and source in room coordinates satisfying `cfg`.
fn draw_positions<R: Rng + ?Sized>(
    cfg: &SceneDistribution,
    dims: &Vec3,
    array_pose: &Rotation,
    array: &MicArray,
    rng: &mut R,
) -> Result<(Vec3, Vec3)> {
    let box_with_margin = |rng: &mut R, m: f64| -> Option<Vec3> {
        if dims.iter().any(|d| *d <= 2.0 * m) {
            return None;
        }
        Some(Vec3::new(
            rng.random_range(m..dims.x - m),
            rng.random_range(m..dims.y - m),
            rng.random_range(m..dims.z - m),
        ))
    };
    for _ in 0..cfg.max_attempts {
        let Some(center) = box_with_margin(rng, cfg.array_wall_margin) else {
            break;
        };
        let Some(source) = box_with_margin(rng, cfg.source_wall_margin) else {
            break;
        };
        if (source - center).norm() < cfg.min_source_array {
            continue;
        }
        // `array_pose` maps array-frame vectors into the room frame here.
        let inside = array.positions().iter().all(|p| {
            let q = center + array_pose.apply(p);
            (0..3).all(|i| q[i] > 0.0 && q[i] < dims[i])
        });
        if inside {
            return Ok((center, source));
        }
    }
    Err(Error::Generation {
        attempts: cfg.max_attempts,
    })
}

/// Draws a new source and array pose inside `scene`'s room under the same
/// constraints as [`random_scene`], expressed in `scene`'s array frame.
pub fn random_placement(cfg: &SceneDistribution, scene: &Scene, seed: u64) -> Result<Placement> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Orientation of the new array relative to the room frame.
    let in_room = Rotation::random(&mut rng);
    let (center_room, source_room) =
        draw_positions(cfg, &scene.room.dims, &in_room, &scene.array, &mut rng)?;
    Ok(Placement {
        source: scene.room.to_array(&source_room),
        array_center: scene.room.to_array(&center_room),
        array_rotation: scene.room.pose.compose(&in_room),
    })
}
