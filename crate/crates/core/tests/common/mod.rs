#![allow(dead_code)]

use shoebox_inverse::prelude::*;
use shoebox_inverse::scene::WallSet;

/// Axis-aligned (4, 5, 3) room, source at (1, 2, 1), array at (3, 3.5, 2).
pub fn box_scene(reflection: f64) -> Scene {
    Scene::from_room_coords(
        Vec3::new(4.0, 5.0, 3.0),
        Rotation::identity(),
        Vec3::new(3.0, 3.5, 2.0),
        Vec3::new(1.0, 2.0, 1.0),
        WallSet::from_reflections([reflection; 6]).unwrap(),
        MicArray::em32(1.0).unwrap(),
    )
    .unwrap()
}

/// Complete `n1 x n2 x n3` grid with spacings `l`, offset `d`, posed by `rot`.
pub fn grid(n: [usize; 3], l: Vec3, d: Vec3, rot: &Rotation) -> ImageSourceCloud {
    let mut out = Vec::new();
    for i in 0..n[0] {
        for j in 0..n[1] {
            for k in 0..n[2] {
                let p = d + Vec3::new(i as f64 * l.x, j as f64 * l.y, k as f64 * l.z);
                out.push(ImageSource::unlabeled(rot.apply(&p), 1.0));
            }
        }
    }
    ImageSourceCloud::new(out)
}

/// Smallest angle between `u` and `±v`, in degrees.
pub fn line_angle_deg(u: &Vec3, v: &Vec3) -> f64 {
    let c = (u.dot(v).abs() / (u.norm() * v.norm())).min(1.0);
    c.acos().to_degrees()
}

/// Largest relative deviation between an analytic and a central-difference
/// derivative, with an absolute floor for near-zero gradients.
pub fn rel_err(analytic: f64, numeric: f64, scale: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(scale)
}
