mod common;

use std::collections::HashSet;

use approx::assert_abs_diff_eq;
use common::box_scene;
use proptest::prelude::*;
use shoebox_inverse::image_source::LatticeIndex;
use shoebox_inverse::prelude::*;
use shoebox_inverse::scene::{RoomBox, WallSet};

/// Mirror of `p` across the wall plane `axis = value`.
fn mirror(p: &Vec3, axis: usize, value: f64) -> Vec3 {
    let mut q = *p;
    q[axis] = 2.0 * value - p[axis];
    q
}

#[test]
fn first_order_images_are_wall_mirrors() {
    let scene = box_scene(0.9);
    let cloud = enumerate_image_sources(&scene, 1, f64::INFINITY).unwrap();
    assert_eq!(cloud.len(), 7);
    let d = scene.source_room;
    let l = scene.room.dims;
    let mut expected = vec![(d, 1.0)];
    for axis in 0..3 {
        expected.push((mirror(&d, axis, 0.0), 0.9));
        expected.push((mirror(&d, axis, l[axis]), 0.9));
    }
    let listed = [
        Vec3::new(-1.0, 2.0, 1.0),
        Vec3::new(7.0, 2.0, 1.0),
        Vec3::new(1.0, -2.0, 1.0),
        Vec3::new(1.0, 8.0, 1.0),
        Vec3::new(1.0, 2.0, -1.0),
        Vec3::new(1.0, 2.0, 5.0),
    ];
    for (p, e) in listed.iter().zip(&expected[1..]) {
        assert_abs_diff_eq!(*p, e.0, epsilon = 1e-15);
    }
    for (pos, amp) in expected {
        let hit = cloud
            .iter()
            .find(|s| (scene.room.to_room(&s.position) - pos).norm() < 1e-12)
            .unwrap_or_else(|| panic!("no image at {pos:?}"));
        assert_abs_diff_eq!(hit.amplitude, amp, epsilon = 1e-15);
    }
}

#[test]
fn lattice_index_by_hand() {
    let idx = LatticeIndex {
        q: [1, 0, 0],
        eps: [-1, 1, 1],
    };
    let p = idx.room_position(&Vec3::new(1.0, 2.0, 1.0), &Vec3::new(4.0, 5.0, 3.0));
    assert_eq!(p, Vec3::new(7.0, 2.0, 1.0));
    assert_eq!(idx.counts(0), (0, 1));
    assert_eq!(idx.counts(1), (0, 0));
    assert_eq!(idx.order(), 1);
    let refl = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
    assert_eq!(idx.amplitude(&refl), 0.2);
}

/// Independent enumeration: scan `(q, ε)` boxes, count reflections with the
/// mirror recursion (each wall crossing is one bounce), keep order ≤ n.
fn brute_force_lattice(d: &Vec3, l: &Vec3, n: i64) -> Vec<(Vec3, u32)> {
    let mut per_axis: Vec<Vec<(f64, u32)>> = Vec::new();
    for axis in 0..3 {
        let mut v = Vec::new();
        for q in -n..=n {
            for eps in [1.0, -1.0] {
                let x = eps * d[axis] + 2.0 * q as f64 * l[axis];
                // Image lies in cell floor(x / L); reaching cell c takes |c| bounces.
                let cell = (x / l[axis]).floor() as i64;
                v.push((x, cell.unsigned_abs() as u32));
            }
        }
        per_axis.push(v);
    }
    let mut out = Vec::new();
    for (x, ox) in &per_axis[0] {
        for (y, oy) in &per_axis[1] {
            for (z, oz) in &per_axis[2] {
                let order = ox + oy + oz;
                if i64::from(order) <= n {
                    out.push((Vec3::new(*x, *y, *z), order));
                }
            }
        }
    }
    out
}

#[test]
fn order_twenty_count_matches_brute_force() {
    let scene = box_scene(0.9);
    let n = 20;
    let cloud = enumerate_image_sources(&scene, n as u32, f64::INFINITY).unwrap();
    let oracle = brute_force_lattice(&scene.source_room, &scene.room.dims, n);
    // Points of the ℓ1 ball of radius n in ℤ³: (2n+1)(2n²+2n+3)/3.
    let closed_form = (2 * n + 1) * (2 * n * n + 2 * n + 3) / 3;
    assert_eq!(closed_form, 11_521);
    assert_eq!(oracle.len() as i64, closed_form);
    assert_eq!(cloud.len() as i64, closed_form);

    let key = |p: &Vec3| (p * 1e6).map(|v| v.round() as i64);
    let truth: HashSet<_> = oracle.iter().map(|(p, o)| (key(p), *o)).collect();
    for s in cloud.iter() {
        let p = scene.room.to_room(&s.position);
        assert!(truth.contains(&(key(&p), s.order.unwrap())), "unexpected image {p:?}");
    }
}

#[test]
fn random_scenes_follow_the_protocol() {
    let array = MicArray::em32(1.0).unwrap();
    let cfg = SceneDistribution::default();
    let mut min_source = f64::INFINITY;
    let mut min_margin = f64::INFINITY;
    for seed in 0..200 {
        let s = random_scene(&cfg, &array, seed).unwrap();
        let l = s.room.dims;
        assert!((2.0..=10.0).contains(&l.x) && (2.0..=10.0).contains(&l.y) && (2.0..=5.0).contains(&l.z));
        assert!(s.walls.absorptions().iter().all(|a| (0.01..=0.3).contains(a)));
        min_source = min_source.min(s.source.norm());
        min_margin = min_margin.min(s.room.wall_clearance(&s.array_center_room()));
    }
    assert!(min_source >= 1.0 - 1e-12, "{min_source}");
    assert!(min_margin >= 0.25 - 1e-12, "{min_margin}");
}

fn rotation_strategy() -> impl Strategy<Value = Rotation> {
    (prop::array::uniform3(-1.0f64..1.0), 0.0f64..std::f64::consts::PI)
        .prop_filter("nonzero axis", |(a, _)| Vec3::from(*a).norm() > 1e-3)
        .prop_map(|(a, t)| Rotation::from_axis_angle(Vec3::from(a), t).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn room_and_array_frames_are_inverse(
        rot in rotation_strategy(),
        corner in prop::array::uniform3(-5.0f64..5.0),
        r in prop::array::uniform3(-20.0f64..20.0),
    ) {
        let room = RoomBox::new(Vec3::new(4.0, 5.0, 3.0), rot, corner.into()).unwrap();
        let r = Vec3::from(r);
        prop_assert!((room.to_array(&room.to_room(&r)) - r).norm() < 1e-12);
    }

    /// Turning the array inside a fixed room rotates the whole cloud and
    /// leaves every amplitude alone.
    #[test]
    fn cloud_rotates_with_the_array(rot in rotation_strategy()) {
        let scene = box_scene(0.8);
        let placement = Placement {
            source: scene.source,
            array_center: Vec3::zeros(),
            array_rotation: rot,
        };
        let turned = scene.reposition(&placement).unwrap();
        let a = enumerate_image_sources(&scene, 3, f64::INFINITY).unwrap();
        let b = enumerate_image_sources(&turned, 3, f64::INFINITY).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b.iter()) {
            prop_assert_eq!(x.lattice, y.lattice);
            prop_assert!((rot.apply(&y.position) - x.position).norm() < 1e-9);
            prop_assert!((x.amplitude - y.amplitude).abs() < 1e-15);
        }
    }

    /// Amplitudes are the product of the reflection coefficients met.
    #[test]
    fn amplitudes_multiply_reflections(refl in prop::array::uniform6(0.1f64..1.0)) {
        let scene = Scene::from_room_coords(
            Vec3::new(4.0, 5.0, 3.0),
            Rotation::identity(),
            Vec3::new(3.0, 3.5, 2.0),
            Vec3::new(1.0, 2.0, 1.0),
            WallSet::from_reflections(refl).unwrap(),
            MicArray::em32(1.0).unwrap(),
        ).unwrap();
        let cloud = enumerate_image_sources(&scene, 2, f64::INFINITY).unwrap();
        for s in cloud.iter() {
            let idx = s.lattice.unwrap();
            let mut expected = 1.0;
            for axis in 0..3 {
                let (near, far) = idx.counts(axis);
                expected *= refl[2 * axis].powi(near as i32) * refl[2 * axis + 1].powi(far as i32);
            }
            prop_assert!((s.amplitude - expected).abs() < 1e-15);
        }
    }
}
