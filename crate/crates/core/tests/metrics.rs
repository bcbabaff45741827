use proptest::prelude::*;
use shoebox_inverse::metrics::*;
use shoebox_inverse::orientation::Basis;
use shoebox_inverse::prelude::*;

#[test]
fn recall_counts_errors_within_threshold() {
    let r = recall_curve(&[0.001, 0.004, 0.02, 0.2], &[0.0, 0.005, 0.05, 1.0]);
    assert_eq!(r, vec![0.0, 0.5, 0.75, 1.0]);
}

#[test]
fn absorption_mae_ignores_walls_off_the_threshold() {
    let m = absorption_metrics(&[0.1, 0.2, 0.9, 0.3, 0.1, 0.1], &[0.11, 0.2, 0.1, 0.28, 0.1, 0.1], 0.3).unwrap();
    assert_eq!(m.recall, 5.0 / 6.0);
    assert_eq!(m.recalled, vec![true, true, false, true, true, true]);
    let mae = m.mae_over_recalled.unwrap();
    assert!((mae - 0.03 / 5.0).abs() < 1e-12, "{mae}");
}

#[test]
fn ser_caps_exact_matches() {
    let x = MultichannelRir::from_samples(vec![1.0, -2.0, 0.5, 0.25], 1, 4.0, 1.0, "t").unwrap();
    assert_eq!(ser(&x, &x, SER_CAP_DB).unwrap(), SER_CAP_DB);
    let zero = MultichannelRir::zeros(1, 4.0, 1.0, "t").unwrap();
    assert!(ser(&x, &zero, SER_CAP_DB).is_err());
}

#[test]
fn report_aggregates_are_independent_of_room_order() {
    let rot = Rotation::identity();
    let make = |name: &str, tilt: f64| {
        let b = Basis::from_rotation(&Rotation::from_axis_angle(Vec3::z(), tilt).unwrap());
        let m = match_axes(&b, &rot).unwrap();
        RoomRecord {
            room: name.into(),
            errors: Some(RoomErrors {
                axis_angular_errors_deg: m.errors_deg,
                dim_abs_errors_m: [tilt, 2.0 * tilt, 0.0],
                center_error_m: tilt,
                absorption_abs_errors: [0.01; 6],
                absorption_recall_flags: [true; 6],
                source_error_m: 0.0,
                axis_match: m,
            }),
            ser_db: Some(20.0 + tilt),
            oracle_ser_db: Some(SER_CAP_DB),
            failure: None,
            flags: Vec::new(),
        }
    };
    let a = vec![make("b", 0.01), make("a", 0.02), make("c", 0.005)];
    let mut b = a.clone();
    b.reverse();
    let t = default_thresholds();
    let ra = EvalReport::new(a, &t);
    let rb = EvalReport::new(b, &t);
    assert_eq!(ra.to_json().unwrap(), rb.to_json().unwrap());
    assert_eq!(ra.to_csv(), rb.to_csv());
    assert_eq!(ra.rooms[0].room, "a");
}

#[test]
fn one_room_report_has_every_column() {
    let failed = RoomRecord {
        room: "room_000".into(),
        errors: None,
        ser_db: None,
        oracle_ser_db: None,
        failure: Some("no reflection found for wall x+".into()),
        flags: Vec::new(),
    };
    let r = EvalReport::new(vec![failed], &default_thresholds());
    let csv = r.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
    assert_eq!(r.aggregates.failed, 1);
    assert!(r.aggregates.dim_error_m.is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn recall_curve_is_monotone(errors in prop::collection::vec(0.0f64..0.2, 1..40)) {
        let t = default_thresholds();
        let r = recall_curve(&errors, &t);
        prop_assert!(r.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(r.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    /// Relabeling or flipping the recovered axes does not change the
    /// reported angular errors.
    #[test]
    fn axis_matching_ignores_labels_and_signs(
        axis in prop::array::uniform3(-1.0f64..1.0),
        angle in 0.0f64..3.0,
        tilt in 0.0f64..0.02,
        perm in 0usize..6,
        flip in prop::array::uniform3(prop::bool::ANY),
    ) {
        prop_assume!(Vec3::from(axis).norm() > 1e-2);
        let gt = Rotation::from_axis_angle(Vec3::from(axis), angle).unwrap();
        let est = gt.compose(&Rotation::from_axis_angle(Vec3::new(0.3, 0.1, 1.0), tilt).unwrap());
        let base = match_axes(&Basis::from_rotation(&est), &gt).unwrap();
        let order = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]][perm];
        let s = |b: bool| if b { -1.0 } else { 1.0 };
        let cols: Vec<Vec3> = (0..3).map(|i| est.column(order[i]) * s(flip[i])).collect();
        let relabeled = Basis { e1: cols[0], e2: cols[1], e3: cols[2] };
        let m = match_axes(&relabeled, &gt).unwrap();
        let mut a = base.errors_deg;
        let mut b = m.errors_deg;
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}
