mod common;

use common::box_scene;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shoebox_inverse::metrics::match_axes;
use shoebox_inverse::prelude::*;
use shoebox_inverse::recovery::{
    closest_in_cone, fusion, identify_true_source, room_center_in_array_frame,
};

#[test]
fn cone_from_the_source_finds_the_far_x_image() {
    let scene = box_scene(0.9);
    let cloud = enumerate_image_sources(&scene, 1, f64::INFINITY).unwrap();
    let hit = closest_in_cone(&scene.source, &Vec3::x(), &cloud, &ConeSearchConfig::default()).unwrap();
    let p = scene.room.to_room(&cloud.sources[hit].position);
    assert!((p - Vec3::new(7.0, 2.0, 1.0)).norm() < 1e-12);
}

#[test]
fn exact_cloud_recovers_the_room_to_rounding() {
    let scene = box_scene(0.9);
    let cloud = enumerate_image_sources(&scene, 2, f64::INFINITY).unwrap();
    let basis = Basis::from_rotation(&Rotation::identity());
    let rec = recover_room(&cloud, &basis, 0.05, &ConeSearchConfig::default()).unwrap();
    assert!((rec.dims - Vec3::new(4.0, 5.0, 3.0)).norm() < 1e-12);
    assert!((rec.source_room - Vec3::new(1.0, 2.0, 1.0)).norm() < 1e-12);
    for a in rec.absorptions {
        assert!((a - 0.19).abs() < 1e-12, "{a}");
    }
    let expected = scene.room.corner_origin + scene.room.pose.apply(&(scene.room.dims / 2.0));
    assert!((room_center_in_array_frame(&rec) - expected).norm() < 1e-12);
    assert!((scene.room_center() - expected).norm() < 1e-12);
}

/// Oracle round trip through the estimated orientation.
#[test]
fn oracle_pipeline_on_random_rooms() {
    let array = MicArray::em32(1.0).unwrap();
    for seed in 0..10 {
        let scene = random_scene(&SceneDistribution::default(), &array, seed).unwrap();
        let cloud = enumerate_image_sources(&scene, 2, f64::INFINITY).unwrap();
        let basis = estimate_orientation(&cloud, &OrientationConfig::default()).unwrap();
        let rec = recover_room(&cloud, &basis, 0.05, &ConeSearchConfig::default()).unwrap();
        let e = room_errors(&scene, &rec).unwrap();
        assert!(e.axis_angular_errors_deg.iter().all(|v| *v < 1e-3), "{seed}: {e:?}");
        assert!(e.dim_abs_errors_m.iter().all(|v| *v < 1e-4), "{seed}: {e:?}");
        assert!(e.absorption_abs_errors.iter().all(|v| *v < 1e-6), "{seed}: {e:?}");
        assert!(e.source_error_m < 1e-4, "{seed}: {e:?}");
    }
}

/// With at least 1 m between source and array, a few millimeters of jitter
/// never hands the direct path to another member.
#[test]
fn true_source_survives_jitter() {
    let array = MicArray::em32(1.0).unwrap();
    for seed in 0..100 {
        let scene = random_scene(&SceneDistribution::default(), &array, seed).unwrap();
        let cloud = enumerate_image_sources(&scene, 2, f64::INFINITY).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jittered = ImageSourceCloud::new(
            cloud
                .iter()
                .map(|s| {
                    let j = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                    ImageSource::unlabeled(s.position + j * (0.005 / 3f64.sqrt()), s.amplitude)
                })
                .collect(),
        );
        let k = identify_true_source(&jittered).unwrap();
        assert_eq!(cloud.sources[k].order, Some(0), "seed {seed}");
    }
}

#[test]
fn missing_wall_is_reported() {
    let scene = box_scene(0.9);
    let cloud = enumerate_image_sources(&scene, 1, f64::INFINITY).unwrap();
    // Keep the source and the near-x image only: nothing lies ahead of the
    // far x wall, even in a 90° cone.
    let kept = ImageSourceCloud::new(
        cloud.iter().filter(|s| scene.room.to_room(&s.position).x < 1.0 - 1e-9 || s.order == Some(0)).copied().collect(),
    );
    let basis = Basis::from_rotation(&Rotation::identity());
    let err = recover_room(&kept, &basis, 0.05, &ConeSearchConfig::default()).unwrap_err();
    assert!(matches!(err, Error::MissingReflection(w) if w.index() == 1), "{err}");
}

#[test]
fn recovered_room_json_round_trip_is_exact() {
    let array = MicArray::em32(1.0).unwrap();
    let scene = random_scene(&SceneDistribution::default(), &array, 11).unwrap();
    let rec = RecoveredRoom::from_scene(&scene);
    let back = RecoveredRoom::from_json(&rec.to_json().unwrap()).unwrap();
    assert_eq!(back, rec);
}

#[test]
fn recovered_scene_reproduces_the_original() {
    let array = MicArray::em32(1.0).unwrap();
    let scene = random_scene(&SceneDistribution::default(), &array, 12).unwrap();
    let again = RecoveredRoom::from_scene(&scene).to_scene(&array).unwrap();
    assert!((again.room.dims - scene.room.dims).norm() < 1e-12);
    assert!((again.source - scene.source).norm() < 1e-12);
    assert!((again.room.corner_origin - scene.room.corner_origin).norm() < 1e-12);
}

#[test]
fn perturbed_basis_reports_the_perturbation() {
    let rot = Rotation::from_axis_angle(Vec3::new(0.2, 0.3, 0.9), 0.7).unwrap();
    // A 0.05° turn about ground-truth axis k moves the other two by 0.05°.
    for k in 0..3 {
        let tilt = Rotation::from_axis_angle(rot.column(k), 0.05f64.to_radians()).unwrap();
        let b = Basis::from_rotation(&tilt.compose(&rot));
        let m = match_axes(&b, &rot).unwrap();
        for (i, e) in m.errors_deg.iter().enumerate() {
            if i == k {
                assert!(*e < 1e-5, "{e}");
            } else {
                assert!((e - 0.05).abs() < 0.005, "{e}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Fusion keeps total amplitude and lands inside the members' hull box.
    #[test]
    fn fusion_conserves_amplitude(
        amps in prop::collection::vec(0.1f64..2.0, 1..6),
        offsets in prop::collection::vec(prop::array::uniform3(-0.02f64..0.02), 6),
    ) {
        let c = Vec3::new(1.0, 2.0, 3.0);
        let members: Vec<ImageSource> = amps
            .iter()
            .zip(&offsets)
            .map(|(a, o)| ImageSource::unlabeled(c + Vec3::from(*o), *a))
            .collect();
        let mut all = members.clone();
        all.push(ImageSource::unlabeled(c + Vec3::new(1.0, 0.0, 0.0), 5.0));
        let cloud = ImageSourceCloud::new(all);
        // Every member is within 0.04·√3 of member 0; a 0.1 m radius
        // catches them all and nothing else.
        let (a, r) = fusion(0, &cloud, 0.1).unwrap();
        prop_assert!((a - amps.iter().sum::<f64>()).abs() < 1e-12);
        for i in 0..3 {
            let lo = members.iter().map(|s| s.position[i]).fold(f64::INFINITY, f64::min);
            let hi = members.iter().map(|s| s.position[i]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(r[i] >= lo - 1e-12 && r[i] <= hi + 1e-12);
        }
    }

    /// A lone member fuses to itself.
    #[test]
    fn fusion_of_a_lone_member_is_identity(p in prop::array::uniform3(-5.0f64..5.0), a in 0.01f64..3.0) {
        let cloud = ImageSourceCloud::new(vec![
            ImageSource::unlabeled(p.into(), a),
            ImageSource::unlabeled(Vec3::from(p) + Vec3::new(0.5, 0.0, 0.0), 1.0),
        ]);
        let (fa, fr) = fusion(0, &cloud, 0.05).unwrap();
        prop_assert_eq!(fa, a);
        prop_assert_eq!(fr, Vec3::from(p));
    }

    /// Exact clouds with any axis order and sign of the basis give the same
    /// room up to relabeling of the walls.
    #[test]
    fn recovery_is_invariant_to_basis_relabeling(perm in 0usize..6, signs in prop::array::uniform3(prop::bool::ANY)) {
        let scene = box_scene(0.85);
        let cloud = enumerate_image_sources(&scene, 2, f64::INFINITY).unwrap();
        let order = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]][perm];
        let axes = [Vec3::x(), Vec3::y(), Vec3::z()];
        let s = |b: bool| if b { -1.0 } else { 1.0 };
        let e1 = axes[order[0]] * s(signs[0]);
        let e2 = axes[order[1]] * s(signs[1]);
        let basis = Basis::from_two(e1, e2).unwrap();
        let rec = recover_room(&cloud, &basis, 0.05, &ConeSearchConfig::default()).unwrap();
        let e = room_errors(&scene, &rec).unwrap();
        prop_assert!(e.dim_abs_errors_m.iter().all(|v| *v < 1e-12));
        prop_assert!(e.absorption_abs_errors.iter().all(|v| *v < 1e-12));
        prop_assert!(e.center_error_m < 1e-12);
    }
}
