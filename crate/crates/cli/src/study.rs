//! The pipeline stages over a directory of rooms.
//!
//! Layout of a study directory:
//!
//! ```text
//! config.json            resolved configuration
//! manifest.json          seeds and per-stage status of every room
//! report.json/.csv       evaluation
//! ser.csv                extrapolation table
//! rooms/room_000/        scene.json, rir.f64(+json), rir_clean.f64, cloud.json,
//!                        sfw_report.json, sfw_trace.csv, recovered.json,
//!                        placement.json, extrapolation.json, rir_*.f64,
//!                        status_<stage>.json, log.txt
//! ```
//!
//! Everything except `log.txt` is a deterministic function of the config.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use shoebox_inverse::prelude::*;
use shoebox_inverse::metrics::RoomRecord;
use shoebox_inverse::sfw::StopReason;

use crate::config::{RoomSeeds, StudyConfig};

pub const STAGES: [&str; 3] = ["simulate", "invert", "extrapolate"];

/// Order up to which oracle mode enumerates the ground-truth cloud.
pub const ORACLE_ORDER: u32 = 2;

/// Outcome of one stage on one room.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageStatus {
    pub ok: bool,
    pub error: Option<String>,
    /// Soft warnings: the stage produced output, but with caveats.
    pub flags: Vec<String>,
}

impl StageStatus {
    fn ok(flags: Vec<String>) -> Self {
        StageStatus {
            ok: true,
            error: None,
            flags,
        }
    }

    fn failed(err: &anyhow::Error) -> Self {
        StageStatus {
            ok: false,
            error: Some(format!("{err:#}")),
            flags: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomEntry {
    pub id: String,
    pub seeds: RoomSeeds,
    /// Stage name to status, for the stages that ran.
    pub stages: Vec<(String, StageStatus)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub n_rooms: usize,
    pub oracle_cloud: bool,
    pub rooms: Vec<RoomEntry>,
    /// Rooms with at least one failed stage.
    pub hard_failures: Vec<String>,
    /// `(room, flag)` soft warnings from every stage.
    pub soft_flags: Vec<(String, String)>,
}

/// Serialized form of a [`Placement`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementDoc {
    pub source_m: [f64; 3],
    pub array_center_m: [f64; 3],
    pub array_rotation: [f64; 9],
}

impl PlacementDoc {
    pub fn from_placement(p: &Placement) -> Self {
        PlacementDoc {
            source_m: p.source.into(),
            array_center_m: p.array_center.into(),
            array_rotation: p.array_rotation.to_row_major(),
        }
    }

    pub fn to_placement(&self) -> anyhow::Result<Placement> {
        Ok(Placement {
            source: self.source_m.into(),
            array_center: self.array_center_m.into(),
            array_rotation: Rotation::from_row_major(&self.array_rotation)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extrapolation {
    pub ser_db: f64,
    pub oracle_ser_db: f64,
    /// Largest sample difference between the oracle re-simulation and the
    /// ground truth.
    pub oracle_max_abs_diff: f64,
}

/// A study directory and its resolved configuration.
pub struct Study {
    pub cfg: StudyConfig,
    pub dir: PathBuf,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    write(path, serde_json::to_string_pretty(value)?)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    serde_json::from_str(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

pub fn room_id(index: usize) -> String {
    format!("room_{index:03}")
}

impl Study {
    /// Validates the config and writes it to the output directory.
    pub fn create(cfg: StudyConfig) -> anyhow::Result<Self> {
        cfg.validate()?;
        let dir = cfg.output_dir.clone();
        std::fs::create_dir_all(dir.join("rooms"))
            .with_context(|| format!("creating {}", dir.display()))?;
        write(&dir.join("config.json"), cfg.to_json()?)?;
        Ok(Study { cfg, dir })
    }

    /// Opens an existing study; its `config.json` is authoritative.
    pub fn open(dir: &Path) -> anyhow::Result<Self> {
        let mut cfg = StudyConfig::load(&dir.join("config.json"))?;
        cfg.output_dir = dir.to_path_buf();
        cfg.validate()?;
        Ok(Study {
            cfg,
            dir: dir.to_path_buf(),
        })
    }

    pub fn room_dir(&self, index: usize) -> PathBuf {
        self.dir.join("rooms").join(room_id(index))
    }

    fn log(&self, index: usize, line: &str) {
        use std::io::Write;
        log::info!("{}: {line}", room_id(index));
        let path = self.room_dir(index).join("log.txt");
        if let Ok(mut f) = std::fs::OpenOptions::new().create(true).append(true).open(path) {
            let _ = writeln!(f, "{line}");
        }
    }

    /// Runs `stage` on every room in parallel, isolating failures, then
    /// rewrites the manifest.
    fn run_stage<F>(&self, stage: &str, f: F) -> anyhow::Result<Manifest>
    where
        F: Fn(usize, &Path) -> anyhow::Result<Vec<String>> + Sync,
    {
        (0..self.cfg.n_rooms).into_par_iter().for_each(|i| {
            let dir = self.room_dir(i);
            let t = Instant::now();
            let status = match std::fs::create_dir_all(&dir)
                .with_context(|| format!("creating {}", dir.display()))
                .and_then(|_| f(i, &dir))
            {
                Ok(flags) => StageStatus::ok(flags),
                Err(e) => StageStatus::failed(&e),
            };
            let verdict = status.error.as_deref().unwrap_or("ok");
            self.log(i, &format!("{stage}: {verdict} in {:.2} s", t.elapsed().as_secs_f64()));
            if let Err(e) = write_json(&dir.join(format!("status_{stage}.json")), &status) {
                log::error!("{}: {e:#}", room_id(i));
            }
        });
        self.write_manifest()
    }

    /// Collects the per-room status files into `manifest.json`.
    pub fn write_manifest(&self) -> anyhow::Result<Manifest> {
        let mut rooms = Vec::new();
        let mut hard_failures = Vec::new();
        let mut soft_flags = Vec::new();
        for i in 0..self.cfg.n_rooms {
            let id = room_id(i);
            let mut stages = Vec::new();
            for stage in STAGES {
                let path = self.room_dir(i).join(format!("status_{stage}.json"));
                if path.exists() {
                    let s: StageStatus = read_json(&path)?;
                    soft_flags.extend(s.flags.iter().map(|f| (id.clone(), format!("{stage}: {f}"))));
                    stages.push((stage.to_string(), s));
                }
            }
            if stages.iter().any(|(_, s)| !s.ok) {
                hard_failures.push(id.clone());
            }
            rooms.push(RoomEntry {
                id,
                seeds: RoomSeeds::derive(self.cfg.seed, i),
                stages,
            });
        }
        let manifest = Manifest {
            seed: self.cfg.seed,
            n_rooms: self.cfg.n_rooms,
            oracle_cloud: self.cfg.oracle_cloud,
            rooms,
            hard_failures,
            soft_flags,
        };
        write_json(&self.dir.join("manifest.json"), &manifest)?;
        Ok(manifest)
    }

    fn array(&self) -> anyhow::Result<MicArray> {
        self.cfg.array.build()
    }

    fn seeds(&self, index: usize) -> RoomSeeds {
        RoomSeeds::derive(self.cfg.seed, index)
    }

    /// Draws each room and writes its scene and RIR (plus the clean RIR when
    /// noise is added).
    pub fn simulate(&self) -> anyhow::Result<Manifest> {
        let array = self.array()?;
        self.run_stage("simulate", |i, dir| {
            let seeds = self.seeds(i);
            let scene = random_scene(&self.cfg.scenes, &array, seeds.scene)?;
            scene.save(&dir.join("scene.json"))?;
            let clean = simulate_scene_rir(&scene, self.cfg.fs, self.cfg.duration)?;
            let id = room_id(i);
            match self.cfg.psnr_db {
                Some(psnr_db) => {
                    let noisy = add_noise_psnr(&clean, &NoiseSpec { psnr_db, seed: seeds.noise })?;
                    clean.save(&dir.join("rir_clean.f64"), &id)?;
                    noisy.save(&dir.join("rir.f64"), &id)?;
                }
                None => clean.save(&dir.join("rir.f64"), &id)?,
            }
            Ok(Vec::new())
        })
    }

    /// Localization, orientation and room recovery for every room.
    pub fn invert(&self) -> anyhow::Result<Manifest> {
        let array = self.array()?;
        self.run_stage("invert", |i, dir| {
            remove_stale(dir, &["cloud.json", "sfw_report.json", "sfw_trace.csv", "recovered.json"]);
            let mut flags = Vec::new();
            let cloud = if self.cfg.oracle_cloud {
                let scene = Scene::load(&dir.join("scene.json"))?;
                enumerate_image_sources(&scene, ORACLE_ORDER, f64::INFINITY)?
            } else {
                let (rir, _) = MultichannelRir::load(&dir.join("rir.f64"))?;
                let t = Instant::now();
                let out = sfw_localize(&rir, &array, &self.cfg.sfw)?;
                self.log(
                    i,
                    &format!(
                        "sfw: {} spikes, {} iterations, {:?}, {:.1} s",
                        out.cloud.len(),
                        out.report.iterations,
                        out.report.stop,
                        t.elapsed().as_secs_f64()
                    ),
                );
                write_json(&dir.join("sfw_report.json"), &out.report)?;
                write(&dir.join("sfw_trace.csv"), out.report.trace_csv())?;
                match out.report.stop {
                    StopReason::Certificate => {}
                    StopReason::ZeroInput => bail!("empty RIR: nothing to localize"),
                    other => flags.push(format!("sfw stopped early: {other:?}")),
                }
                out.cloud
            };
            write(&dir.join("cloud.json"), cloud.to_json()?)?;
            let basis = estimate_orientation(&cloud, &self.cfg.orientation)?;
            let room = recover_room(&cloud, &basis, self.cfg.recovery.mu, &self.cfg.recovery.cone)?;
            for (w, a) in room.absorptions_unclamped.iter().enumerate() {
                if !(0.0..=1.0).contains(a) {
                    flags.push(format!("absorption of wall {} clamped from {a:.4}", Wall::from_index(w)));
                }
            }
            for (w, h) in room.cone_angles.iter().enumerate() {
                if *h > self.cfg.recovery.cone.initial_half_angle {
                    flags.push(format!("cone widened to {h:.1} deg for wall {}", Wall::from_index(w)));
                }
            }
            room.save(&dir.join("recovered.json"))?;
            Ok(flags)
        })
    }

    /// One new random placement per room; re-simulates it with the
    /// recovered and with the true parameters.
    pub fn extrapolate(&self) -> anyhow::Result<Manifest> {
        let array = self.array()?;
        let manifest = self.run_stage("extrapolate", |i, dir| {
            remove_stale(dir, &["placement.json", "extrapolation.json"]);
            let scene = Scene::load(&dir.join("scene.json"))?;
            let recovered = RecoveredRoom::load(&dir.join("recovered.json"))?;
            let placement = random_placement(&self.cfg.scenes, &scene, self.seeds(i).placement)?;
            write_json(&dir.join("placement.json"), &PlacementDoc::from_placement(&placement))?;
            let (fs, dur) = (self.cfg.fs, self.cfg.duration);
            let truth = simulate_scene_rir(&scene.reposition(&placement)?, fs, dur)?;
            let estimate = extrapolate_rir(&recovered, &placement, &array, fs, dur)?;
            let oracle = extrapolate_rir(&RecoveredRoom::from_scene(&scene), &placement, &array, fs, dur)?;
            let id = room_id(i);
            truth.save(&dir.join("rir_new_truth.f64"), &id)?;
            estimate.save(&dir.join("rir_new_estimate.f64"), &id)?;
            oracle.save(&dir.join("rir_new_oracle.f64"), &id)?;
            let result = Extrapolation {
                ser_db: ser(&estimate, &truth, SER_CAP_DB)?,
                oracle_ser_db: ser(&oracle, &truth, SER_CAP_DB)?,
                oracle_max_abs_diff: max_abs_diff(&oracle, &truth),
            };
            write_json(&dir.join("extrapolation.json"), &result)?;
            Ok(Vec::new())
        })?;
        let mut csv = String::from("room,ser_db,oracle_ser_db,oracle_max_abs_diff\n");
        for i in 0..self.cfg.n_rooms {
            let path = self.room_dir(i).join("extrapolation.json");
            if let Ok(e) = read_json::<Extrapolation>(&path) {
                let _ = writeln!(csv, "{},{},{},{}", room_id(i), e.ser_db, e.oracle_ser_db, e.oracle_max_abs_diff);
            }
        }
        write(&self.dir.join("ser.csv"), csv)?;
        Ok(manifest)
    }

    /// Compares every recovered room with its scene.
    pub fn evaluate(&self) -> anyhow::Result<EvalReport> {
        let records: Vec<RoomRecord> = (0..self.cfg.n_rooms)
            .into_par_iter()
            .map(|i| self.record(i))
            .collect::<anyhow::Result<_>>()?;
        let report = EvalReport::new(records, &self.cfg.recall_thresholds);
        write(&self.dir.join("report.json"), report.to_json()?)?;
        write(&self.dir.join("report.csv"), report.to_csv())?;
        let mut csv = String::from("threshold_m,dim_recall\n");
        let agg = &report.aggregates;
        for (t, r) in agg.dim_recall_thresholds_m.iter().zip(&agg.dim_recall) {
            let _ = writeln!(csv, "{t},{r}");
        }
        write(&self.dir.join("recall.csv"), csv)?;
        self.write_manifest()?;
        Ok(report)
    }

    fn record(&self, i: usize) -> anyhow::Result<RoomRecord> {
        let dir = self.room_dir(i);
        let scene_path = dir.join("scene.json");
        if !scene_path.exists() {
            bail!("{} missing: run simulate first", scene_path.display());
        }
        let scene = Scene::load(&scene_path)?;
        let mut record = RoomRecord {
            room: room_id(i),
            errors: None,
            ser_db: None,
            oracle_ser_db: None,
            failure: None,
            flags: Vec::new(),
        };
        let invert_status = dir.join("status_invert.json");
        if !invert_status.exists() {
            bail!("{} missing: run invert first", invert_status.display());
        }
        let status: StageStatus = read_json(&invert_status)?;
        record.flags = status.flags;
        if let Some(e) = status.error {
            record.failure = Some(e);
            return Ok(record);
        }
        let recovered = RecoveredRoom::load(&dir.join("recovered.json"))?;
        match room_errors(&scene, &recovered) {
            Ok(e) => record.errors = Some(e),
            Err(e) => record.failure = Some(e.to_string()),
        }
        if let Ok(x) = read_json::<Extrapolation>(&dir.join("extrapolation.json")) {
            record.ser_db = Some(x.ser_db);
            record.oracle_ser_db = Some(x.oracle_ser_db);
        }
        Ok(record)
    }

    /// simulate, invert, extrapolate (rooms that inverted), evaluate.
    pub fn run_all(&self) -> anyhow::Result<(Manifest, EvalReport)> {
        self.simulate()?;
        self.invert()?;
        self.extrapolate()?;
        let report = self.evaluate()?;
        Ok((self.write_manifest()?, report))
    }
}

/// Outputs of a previous run must not survive a failed rerun.
fn remove_stale(dir: &Path, names: &[&str]) {
    for n in names {
        let _ = std::fs::remove_file(dir.join(n));
    }
}

pub fn max_abs_diff(a: &MultichannelRir, b: &MultichannelRir) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
