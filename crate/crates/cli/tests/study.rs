use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use shoebox_cli::study::{Extrapolation, StageStatus};
use shoebox_cli::{Study, StudyConfig};
use shoebox_inverse::prelude::*;
use shoebox_inverse::rir::RirSidecar;

fn oracle_config(dir: &Path, rooms: usize) -> StudyConfig {
    StudyConfig {
        n_rooms: rooms,
        seed: 7,
        oracle_cloud: true,
        output_dir: dir.to_path_buf(),
        ..StudyConfig::default()
    }
}

/// A config whose localization is cut short, to keep SFW runs cheap.
fn quick_sfw_config(dir: &Path, rooms: usize) -> StudyConfig {
    let mut cfg = oracle_config(dir, rooms);
    cfg.oracle_cloud = false;
    cfg.fs = 8_000.0;
    cfg.duration = 0.03;
    cfg.sfw.max_spikes = 4;
    cfg.sfw.max_iterations = 4;
    cfg
}

/// Every file under `dir` except the timing logs, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "log.txt" {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn status(study: &Study, room: usize, stage: &str) -> StageStatus {
    let p = study.room_dir(room).join(format!("status_{stage}.json"));
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn oracle_batch_is_bitwise_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("study");
    let run = || {
        let study = Study::create(oracle_config(&dir, 2)).unwrap();
        study.run_all().unwrap();
        shoebox_cli::plot::plot(std::slice::from_ref(&study), &dir.join("plots")).unwrap();
        snapshot(&dir)
    };
    let first = run();
    std::fs::remove_dir_all(&dir).unwrap();
    let second = run();
    assert!(first.len() > 20);
    assert_eq!(first.keys().collect::<Vec<_>>(), second.keys().collect::<Vec<_>>());
    for (k, v) in &first {
        assert!(second[k] == *v, "{} differs", k.display());
    }
}

#[test]
fn localization_batch_is_bitwise_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("study");
    let run = || {
        let study = Study::create(quick_sfw_config(&dir, 2)).unwrap();
        study.simulate().unwrap();
        study.invert().unwrap();
        snapshot(&dir)
    };
    let first = run();
    std::fs::remove_dir_all(&dir).unwrap();
    assert_eq!(first, run());
}

#[test]
fn config_is_echoed_and_rooms_are_prefix_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let a = Study::create(oracle_config(&tmp.path().join("a"), 2)).unwrap();
    a.simulate().unwrap();
    let b = Study::create(oracle_config(&tmp.path().join("b"), 3)).unwrap();
    b.simulate().unwrap();
    let echoed = StudyConfig::load(&a.dir.join("config.json")).unwrap();
    assert_eq!(echoed, a.cfg);
    for i in 0..2 {
        let sa = std::fs::read(a.room_dir(i).join("rir.f64")).unwrap();
        let sb = std::fs::read(b.room_dir(i).join("rir.f64")).unwrap();
        assert!(sa == sb, "room {i} changed with n_rooms");
    }
}

#[test]
fn noisy_runs_keep_the_clean_rir() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = oracle_config(&tmp.path().join("s"), 1);
    cfg.psnr_db = Some(25.0);
    let study = Study::create(cfg).unwrap();
    study.simulate().unwrap();
    let dir = study.room_dir(0);
    let (noisy, side) = MultichannelRir::load(&dir.join("rir.f64")).unwrap();
    let (clean, _) = MultichannelRir::load(&dir.join("rir_clean.f64")).unwrap();
    assert_eq!(side.len, 800);
    assert_ne!(noisy, clean);
    let raw: RirSidecar = serde_json::from_str(&std::fs::read_to_string(dir.join("rir.json")).unwrap()).unwrap();
    assert_eq!((raw.channels, raw.len), (32, 800));
}

#[test]
fn empty_rir_fails_one_room_only() {
    let tmp = tempfile::tempdir().unwrap();
    let clean_dir = tmp.path().join("clean");
    let reference = Study::create(quick_sfw_config(&clean_dir, 2)).unwrap();
    reference.simulate().unwrap();
    let expected = reference.invert().unwrap();

    let dir = tmp.path().join("broken");
    let study = Study::create(quick_sfw_config(&dir, 2)).unwrap();
    study.simulate().unwrap();
    let (rir, side) = MultichannelRir::load(&study.room_dir(1).join("rir.f64")).unwrap();
    let zeros = MultichannelRir::zeros(rir.channels(), rir.fs(), rir.duration(), rir.array_name()).unwrap();
    zeros.save(&study.room_dir(1).join("rir.f64"), &side.scene_id).unwrap();
    let manifest = study.invert().unwrap();

    // The cut-short solver may fail room 0 on its own; room 1 must fail.
    let room0_failed = expected.hard_failures.contains(&"room_000".to_string());
    let mut want = if room0_failed { vec!["room_000".to_string()] } else { vec![] };
    want.push("room_001".to_string());
    assert_eq!(manifest.hard_failures, want);
    let s = status(&study, 1, "invert");
    assert!(!s.ok && s.error.unwrap().contains("empty RIR"));
    // Room 0 is untouched by room 1's failure.
    let a = snapshot(&reference.room_dir(0));
    let b = snapshot(&study.room_dir(0));
    assert_eq!(a, b);

    let report = study.evaluate().unwrap();
    assert_eq!(report.aggregates.failed, want.len());
    assert!(report.rooms[1].failure.is_some());
}

#[test]
fn oracle_mode_recovers_exact_parameters() {
    let tmp = tempfile::tempdir().unwrap();
    let study = Study::create(oracle_config(&tmp.path().join("s"), 4)).unwrap();
    let (manifest, report) = study.run_all().unwrap();
    assert!(manifest.hard_failures.is_empty());
    for r in &report.rooms {
        let e = r.errors.as_ref().unwrap();
        assert!(e.axis_angular_errors_deg.iter().all(|v| v.to_radians() <= 1e-4), "{e:?}");
        assert!(e.dim_abs_errors_m.iter().all(|v| *v <= 1e-4 && *v >= 0.0), "{e:?}");
        assert_eq!(r.oracle_ser_db, Some(SER_CAP_DB));
    }
    for i in 0..4 {
        let x: Extrapolation =
            serde_json::from_str(&std::fs::read_to_string(study.room_dir(i).join("extrapolation.json")).unwrap()).unwrap();
        assert!(x.oracle_max_abs_diff < 1e-10);
    }
    let csv = std::fs::read_to_string(study.dir.join("report.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "dim_mae_m").unwrap();
    for line in csv.lines().skip(1) {
        let v: f64 = line.split(',').nth(col).unwrap().parse().unwrap();
        assert!(v >= 0.0);
    }
}

#[test]
fn plots_from_a_one_room_study() {
    let tmp = tempfile::tempdir().unwrap();
    let study = Study::create(oracle_config(&tmp.path().join("s"), 1)).unwrap();
    study.run_all().unwrap();
    let out = tmp.path().join("plots");
    let files = shoebox_cli::plot::plot(std::slice::from_ref(&study), &out).unwrap();
    for f in &files {
        if f.ends_with(".svg") {
            assert!(files.contains(&f.replace(".svg", ".csv")), "{f} has no CSV");
        }
    }
    let bars = std::fs::read_to_string(out.join("dim_error_bars.svg")).unwrap();
    assert_eq!(bars.matches("<rect").count(), 2);
    let recall = std::fs::read_to_string(out.join("dim_recall.csv")).unwrap();
    let values: Vec<f64> = recall.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert!(values.windows(2).all(|w| w[0] <= w[1]));
    let overlay = std::fs::read_to_string(out.join("overlay_0_oracle.svg")).unwrap();
    let note = overlay.split("max |difference| over all channels: ").nth(1).unwrap();
    let diff: f64 = note.split('<').next().unwrap().parse().unwrap();
    assert!(diff < 1e-10);
}

#[test]
fn invalid_configs_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = oracle_config(tmp.path(), 0);
    assert!(Study::create(cfg.clone()).is_err());
    cfg.n_rooms = 1;
    cfg.array.name = "nope".into();
    assert!(Study::create(cfg).is_err());
}

#[test]
fn missing_inputs_are_validation_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let study = Study::create(oracle_config(&tmp.path().join("s"), 1)).unwrap();
    assert!(study.evaluate().is_err());
    let m = study.invert().unwrap();
    assert_eq!(m.hard_failures.len(), 1);
}

#[test]
fn binary_exit_code_tracks_hard_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("s");
    let bin = env!("CARGO_BIN_EXE_shoebox");
    let ok = Command::new(bin)
        .args(["all", "--oracle-cloud", "--rooms", "2", "--seed", "3", "--output"])
        .arg(&dir)
        .env("RUST_LOG", "error")
        .output()
        .unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    for f in ["config.json", "manifest.json", "report.json", "report.csv", "ser.csv", "plots/dim_recall.svg"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    std::fs::remove_file(dir.join("rooms/room_001/scene.json")).unwrap();
    let failed = Command::new(bin)
        .args(["invert", "--output"])
        .arg(&dir)
        .env("RUST_LOG", "error")
        .output()
        .unwrap();
    assert_eq!(failed.status.code(), Some(1));
}
