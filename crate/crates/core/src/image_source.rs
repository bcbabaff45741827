//! Image-source lattice of a shoebox room.
//!
//! In the room frame, the image of the source with lattice index
//! `(q, eps)` sits at `eps ⊙ d + 2 q ⊙ L`, where `d` is the source position
//! and `L` the room size. Along one axis the image reflects `|q - p|` times
//! on the near wall and `|q|` times on the far wall, with `p = (1 - eps)/2`.
//! Writing `j = 2q - p` gives a one-to-one map from `(q, eps)` to `j ∈ ℤ`
//! whose reflection order along that axis is `|j|`; enumeration walks `j`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Side, Vec3, Wall};
use crate::scene::Scene;

/// Lattice label of an image source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeIndex {
    pub q: [i64; 3],
    pub eps: [i8; 3],
}

impl LatticeIndex {
    fn from_axis_codes(j: [i64; 3]) -> Self {
        let mut q = [0; 3];
        let mut eps = [1; 3];
        for i in 0..3 {
            let p = j[i].rem_euclid(2);
            eps[i] = if p == 0 { 1 } else { -1 };
            q[i] = (j[i] + p) / 2;
        }
        LatticeIndex { q, eps }
    }

    fn p(&self, axis: usize) -> i64 {
        i64::from((1 - self.eps[axis]) / 2)
    }

    /// Reflection counts on the `(near, far)` walls of `axis`.
    pub fn counts(&self, axis: usize) -> (u32, u32) {
        let q = self.q[axis];
        ((q - self.p(axis)).unsigned_abs() as u32, q.unsigned_abs() as u32)
    }

    /// Total number of wall reflections.
    pub fn order(&self) -> u32 {
        (0..3)
            .map(|i| {
                let (n, f) = self.counts(i);
                n + f
            })
            .sum()
    }

    /// Room-frame position.
    pub fn room_position(&self, source_room: &Vec3, dims: &Vec3) -> Vec3 {
        Vec3::from_fn(|i, _| {
            f64::from(self.eps[i]) * source_room[i] + 2.0 * self.q[i] as f64 * dims[i]
        })
    }

    /// Room-frame offset from the source to the image.
    fn room_offset(&self, source_room: &Vec3, dims: &Vec3) -> Vec3 {
        Vec3::from_fn(|i, _| {
            if self.eps[i] == 1 {
                2.0 * self.q[i] as f64 * dims[i]
            } else {
                2.0 * (self.q[i] as f64 * dims[i] - source_room[i])
            }
        })
    }

    /// Product of wall reflection amplitudes along the path.
    pub fn amplitude(&self, reflections: &[f64; 6]) -> f64 {
        (0..3)
            .map(|i| {
                let (n, f) = self.counts(i);
                let near = reflections[Wall::new(i, Side::Near).index()];
                let far = reflections[Wall::new(i, Side::Far).index()];
                near.powi(n as i32) * far.powi(f as i32)
            })
            .product()
    }
}

/// A weighted point source in the array frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageSource {
    pub position: Vec3,
    pub amplitude: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<LatticeIndex>,
}

impl ImageSource {
    pub fn unlabeled(position: Vec3, amplitude: f64) -> Self {
        ImageSource {
            position,
            amplitude,
            order: None,
            lattice: None,
        }
    }
}

/// Coordinate frame of a cloud.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    #[default]
    Array,
    Room,
}

/// A set of weighted point sources, labeled (ground truth) or not (estimates).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImageSourceCloud {
    pub sources: Vec<ImageSource>,
    #[serde(default)]
    pub frame: Frame,
}

impl ImageSourceCloud {
    pub fn new(sources: Vec<ImageSource>) -> Self {
        ImageSourceCloud {
            sources,
            frame: Frame::Array,
        }
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.sources.iter().map(|s| s.position).collect()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ImageSource> {
        self.sources.iter()
    }

    /// JSON list of `{position_m, amplitude}`.
    pub fn to_json(&self) -> Result<String> {
        let entries: Vec<CloudEntry> = self
            .sources
            .iter()
            .map(|s| CloudEntry {
                position_m: s.position.into(),
                amplitude: s.amplitude,
            })
            .collect();
        Ok(serde_json::to_string_pretty(&entries)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let entries: Vec<CloudEntry> = serde_json::from_str(s)?;
        Ok(ImageSourceCloud::new(
            entries
                .into_iter()
                .map(|e| ImageSource::unlabeled(e.position_m.into(), e.amplitude))
                .collect(),
        ))
    }
}

#[derive(Serialize, Deserialize)]
struct CloudEntry {
    position_m: [f64; 3],
    amplitude: f64,
}

/// Every image source of `scene` with reflection order at most `max_order`
/// and distance to the array center at most `max_radius`, positioned in the
/// array frame.
pub fn enumerate_image_sources(
    scene: &Scene,
    max_order: u32,
    max_radius: f64,
) -> Result<ImageSourceCloud> {
    scene.validate_containment()?;
    if !(max_radius > 0.0) {
        return Err(Error::validation("max_radius must be positive"));
    }
    let dims = scene.room.dims;
    let d = scene.source_room;
    let reflections = scene.walls.reflections();
    let n = i64::from(max_order);
    let mut sources = Vec::new();
    for jx in -n..=n {
        for jy in -(n - jx.abs())..=(n - jx.abs()) {
            let rest = n - jx.abs() - jy.abs();
            for jz in -rest..=rest {
                let idx = LatticeIndex::from_axis_codes([jx, jy, jz]);
                let offset = idx.room_offset(&d, &dims);
                let position = scene.source + scene.room.pose.apply(&offset);
                if position.norm() > max_radius {
                    continue;
                }
                sources.push(ImageSource {
                    position,
                    amplitude: idx.amplitude(&reflections),
                    order: Some(idx.order()),
                    lattice: Some(idx),
                });
            }
        }
    }
    Ok(ImageSourceCloud::new(sources))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::MicArray;
    use crate::geometry::Rotation;
    use crate::scene::WallSet;

    fn box_scene(dims: Vec3, source: Vec3, center: Vec3, walls: WallSet) -> Scene {
        Scene::from_room_coords(
            dims,
            Rotation::identity(),
            center,
            source,
            walls,
            MicArray::em32(1.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn axis_codes_cover_both_parities() {
        assert_eq!(
            LatticeIndex::from_axis_codes([-1, 1, 2]),
            LatticeIndex {
                q: [0, 1, 1],
                eps: [-1, -1, 1]
            }
        );
        for j in -5..=5 {
            let idx = LatticeIndex::from_axis_codes([j, 0, 0]);
            assert_eq!(idx.order() as i64, j.abs());
        }
    }

    #[test]
    fn order_zero_is_the_source() {
        let s = box_scene(
            Vec3::new(2.0, 2.0, 2.0),
            Vec3::new(1.0, 1.0, 1.0),
            Vec3::new(0.3, 0.3, 0.3),
            WallSet::uniform(0.2).unwrap(),
        );
        let c = enumerate_image_sources(&s, 0, 100.0).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.sources[0].amplitude, 1.0);
        assert_eq!(c.sources[0].order, Some(0));
        assert!((c.sources[0].position - s.source).norm() < 1e-15);
    }

    #[test]
    fn first_order_matches_mirror_images() {
        let a = 0.9;
        let s = box_scene(
            Vec3::new(4.0, 5.0, 3.0),
            Vec3::new(1.0, 2.0, 1.0),
            Vec3::new(2.5, 3.5, 1.5),
            WallSet::from_reflections([a; 6]).unwrap(),
        );
        let c = enumerate_image_sources(&s, 1, 100.0).unwrap();
        assert_eq!(c.len(), 7);
        // Mirror of (1,2,1) across x=0, x=4, y=0, y=5, z=0, z=3.
        let expected = [
            Vec3::new(-1.0, 2.0, 1.0),
            Vec3::new(7.0, 2.0, 1.0),
            Vec3::new(1.0, -2.0, 1.0),
            Vec3::new(1.0, 8.0, 1.0),
            Vec3::new(1.0, 2.0, -1.0),
            Vec3::new(1.0, 2.0, 5.0),
        ];
        for e in expected {
            let hit = c
                .iter()
                .find(|src| (s.room.to_room(&src.position) - e).norm() < 1e-12)
                .expect("missing mirror image");
            assert_eq!(hit.order, Some(1));
            assert!((hit.amplitude - a).abs() < 1e-15);
        }
    }

    #[test]
    fn far_x_reflection_by_hand() {
        let idx = LatticeIndex {
            q: [1, 0, 0],
            eps: [-1, 1, 1],
        };
        let p = idx.room_position(&Vec3::new(1.0, 2.0, 1.0), &Vec3::new(4.0, 5.0, 3.0));
        assert_eq!(p, Vec3::new(7.0, 2.0, 1.0));
        assert_eq!(idx.counts(0), (0, 1));
        assert_eq!(idx.counts(1), (0, 0));
        assert_eq!(idx.order(), 1);
        let refl = [0.5, 0.7, 1.0, 1.0, 1.0, 1.0];
        assert_eq!(idx.amplitude(&refl), 0.7);
    }

    #[test]
    fn radius_filter() {
        let s = box_scene(
            Vec3::new(4.0, 5.0, 3.0),
            Vec3::new(1.0, 2.0, 1.0),
            Vec3::new(2.5, 3.5, 1.5),
            WallSet::rigid(),
        );
        let all = enumerate_image_sources(&s, 3, 1e3).unwrap();
        let near = enumerate_image_sources(&s, 3, 6.0).unwrap();
        assert!(near.len() < all.len());
        assert!(near.iter().all(|x| x.position.norm() <= 6.0));
        assert_eq!(
            near.len(),
            all.iter().filter(|x| x.position.norm() <= 6.0).count()
        );
    }
}
