//! Evaluation against ground truth: axis matching, geometric and absorption
//! errors, recall curves and the signal-to-error ratio of RIRs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Rotation, Side, Wall};
use crate::orientation::Basis;
use crate::recovery::{room_center_in_array_frame, RecoveredRoom};
use crate::rir::MultichannelRir;
use crate::scene::Scene;

/// SER reported when the error energy vanishes.
pub const SER_CAP_DB: f64 = 300.0;
/// Absorption estimates within this of the truth count as recalled.
pub const ABSORPTION_RECALL_THRESHOLD: f64 = 0.3;

/// Correspondence between recovered and ground-truth axes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisMatch {
    /// `permutation[i]` is the ground-truth axis of recovered axis `i`.
    pub permutation: [usize; 3],
    /// `+1` or `-1`: recovered axis `i` ≈ `signs[i]` × its ground-truth axis.
    pub signs: [f64; 3],
    pub errors_deg: [f64; 3],
}

impl AxisMatch {
    /// Ground-truth wall of each recovered wall (both in `x-, x+, ...` order).
    pub fn wall_map(&self) -> [usize; 6] {
        std::array::from_fn(|w| {
            let wall = Wall::from_index(w);
            let side = if self.signs[wall.axis] > 0.0 {
                wall.side
            } else {
                match wall.side {
                    Side::Near => Side::Far,
                    Side::Far => Side::Near,
                }
            };
            Wall::new(self.permutation[wall.axis], side).index()
        })
    }
}

/// Expresses each recovered axis in the ground-truth room frame and assigns
/// it to its largest-magnitude component.
pub fn match_axes(recovered: &Basis, gt_rotation: &Rotation) -> Result<AxisMatch> {
    let mut permutation = [0; 3];
    let mut signs = [1.0; 3];
    let mut errors_deg = [0.0; 3];
    for (i, e) in recovered.axes().iter().enumerate() {
        let local = gt_rotation.apply_inverse(&e.normalize());
        let j = local.iamax();
        permutation[i] = j;
        signs[i] = local[j].signum();
        errors_deg[i] = local[j].abs().clamp(-1.0, 1.0).acos().to_degrees();
    }
    let mut seen = [false; 3];
    for &j in &permutation {
        if seen[j] {
            return Err(Error::AxisMatching(permutation));
        }
        seen[j] = true;
    }
    Ok(AxisMatch {
        permutation,
        signs,
        errors_deg,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionMetrics {
    /// Mean absolute error over the recalled coefficients; `None` if none.
    pub mae_over_recalled: Option<f64>,
    pub recall: f64,
    pub recalled: Vec<bool>,
    pub abs_errors: Vec<f64>,
}

/// A coefficient is recalled when `|α̂ - α| < threshold`.
pub fn absorption_metrics(estimated: &[f64], truth: &[f64], threshold: f64) -> Result<AbsorptionMetrics> {
    if estimated.len() != truth.len() || truth.is_empty() {
        return Err(Error::validation("absorption vectors must be nonempty and of equal length"));
    }
    let abs_errors: Vec<f64> = estimated.iter().zip(truth).map(|(a, b)| (a - b).abs()).collect();
    let recalled: Vec<bool> = abs_errors.iter().map(|e| *e < threshold).collect();
    let kept: Vec<f64> = abs_errors
        .iter()
        .zip(&recalled)
        .filter(|(_, r)| **r)
        .map(|(e, _)| *e)
        .collect();
    Ok(AbsorptionMetrics {
        mae_over_recalled: (!kept.is_empty()).then(|| kept.iter().sum::<f64>() / kept.len() as f64),
        recall: kept.len() as f64 / truth.len() as f64,
        recalled,
        abs_errors,
    })
}

/// `10 log10(Σx² / Σ(x̂ - x)²)` in dB, capped at `cap`.
pub fn ser(estimate: &MultichannelRir, truth: &MultichannelRir, cap: f64) -> Result<f64> {
    if estimate.channels() != truth.channels() || estimate.len() != truth.len() {
        return Err(Error::validation(format!(
            "SER needs equal shapes, got {}x{} and {}x{}",
            estimate.channels(),
            estimate.len(),
            truth.channels(),
            truth.len()
        )));
    }
    if estimate.fs() != truth.fs() {
        return Err(Error::validation("SER needs equal sampling rates"));
    }
    let signal: f64 = truth.as_slice().iter().map(|v| v * v).sum();
    if signal == 0.0 {
        return Err(Error::ZeroSignal);
    }
    let error: f64 = estimate
        .as_slice()
        .iter()
        .zip(truth.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    if error <= f64::MIN_POSITIVE || error <= signal * 1e-300 {
        return Ok(cap);
    }
    Ok((10.0 * (signal / error).log10()).min(cap))
}

/// Fraction of `errors` at most each threshold.
pub fn recall_curve(errors: &[f64], thresholds: &[f64]) -> Vec<f64> {
    if errors.is_empty() {
        return vec![0.0; thresholds.len()];
    }
    thresholds
        .iter()
        .map(|t| errors.iter().filter(|e| **e <= *t).count() as f64 / errors.len() as f64)
        .collect()
}

/// Errors of one recovered room against its ground-truth scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomErrors {
    pub axis_angular_errors_deg: [f64; 3],
    /// Indexed by ground-truth axis.
    pub dim_abs_errors_m: [f64; 3],
    pub center_error_m: f64,
    /// Ground-truth wall order.
    pub absorption_abs_errors: [f64; 6],
    pub absorption_recall_flags: [bool; 6],
    pub source_error_m: f64,
    pub axis_match: AxisMatch,
}

pub fn room_errors(scene: &Scene, recovered: &RecoveredRoom) -> Result<RoomErrors> {
    let m = match_axes(&recovered.basis, &scene.room.pose)?;
    let mut dim_abs_errors_m = [0.0; 3];
    for (i, &j) in m.permutation.iter().enumerate() {
        dim_abs_errors_m[j] = (recovered.dims[i] - scene.room.dims[j]).abs();
    }
    let walls = m.wall_map();
    let gt = scene.walls.absorptions();
    let mut est = [0.0; 6];
    for (w, &g) in walls.iter().enumerate() {
        est[g] = recovered.absorptions[w];
    }
    let abs = absorption_metrics(&est, &gt, ABSORPTION_RECALL_THRESHOLD)?;
    Ok(RoomErrors {
        axis_angular_errors_deg: m.errors_deg,
        dim_abs_errors_m,
        center_error_m: (room_center_in_array_frame(recovered) - scene.room_center()).norm(),
        absorption_abs_errors: std::array::from_fn(|i| abs.abs_errors[i]),
        absorption_recall_flags: std::array::from_fn(|i| abs.recalled[i]),
        source_error_m: (recovered.source - scene.source).norm(),
        axis_match: m,
    })
}

/// Per-room entry of a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomRecord {
    pub room: String,
    /// `None` when the room failed before evaluation.
    pub errors: Option<RoomErrors>,
    pub ser_db: Option<f64>,
    pub oracle_ser_db: Option<f64>,
    /// Failure label (missing reflection, matching failure, ...).
    pub failure: Option<String>,
    #[serde(default)]
    pub flags: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub count: usize,
}

impl Summary {
    /// Order-independent: values are sorted before any reduction.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let mid = v.len() / 2;
        let median = if v.len() % 2 == 1 {
            v[mid]
        } else {
            0.5 * (v[mid - 1] + v[mid])
        };
        Some(Summary {
            mean,
            std: var.sqrt(),
            median,
            count: v.len(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub rooms: usize,
    pub failed: usize,
    pub axis_error_deg: Option<Summary>,
    pub dim_error_m: Option<Summary>,
    pub center_error_m: Option<Summary>,
    pub absorption_mae_over_recalled: Option<f64>,
    pub absorption_recall: Option<f64>,
    pub ser_db: Option<Summary>,
    pub oracle_ser_db: Option<Summary>,
    pub dim_recall_thresholds_m: Vec<f64>,
    pub dim_recall: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rooms: Vec<RoomRecord>,
    pub aggregates: Aggregates,
}

/// Default dimension-recall thresholds: 0 to 10 cm by 5 mm.
pub fn default_thresholds() -> Vec<f64> {
    (0..=20).map(|i| i as f64 * 0.005).collect()
}

impl EvalReport {
    pub fn new(mut rooms: Vec<RoomRecord>, thresholds: &[f64]) -> Self {
        rooms.sort_by(|a, b| a.room.cmp(&b.room));
        let ok: Vec<&RoomErrors> = rooms.iter().filter_map(|r| r.errors.as_ref()).collect();
        let axis: Vec<f64> = ok.iter().flat_map(|e| e.axis_angular_errors_deg).collect();
        let dims: Vec<f64> = ok.iter().flat_map(|e| e.dim_abs_errors_m).collect();
        let center: Vec<f64> = ok.iter().map(|e| e.center_error_m).collect();
        let mut recalled = Vec::new();
        let mut flags = 0usize;
        for e in &ok {
            for (err, f) in e.absorption_abs_errors.iter().zip(e.absorption_recall_flags) {
                if f {
                    recalled.push(*err);
                }
                flags += 1;
            }
        }
        let ser: Vec<f64> = rooms.iter().filter_map(|r| r.ser_db).collect();
        let oracle: Vec<f64> = rooms.iter().filter_map(|r| r.oracle_ser_db).collect();
        let aggregates = Aggregates {
            rooms: rooms.len(),
            failed: rooms.iter().filter(|r| r.failure.is_some()).count(),
            axis_error_deg: Summary::of(&axis),
            dim_error_m: Summary::of(&dims),
            center_error_m: Summary::of(&center),
            absorption_mae_over_recalled: Summary::of(&recalled).map(|s| s.mean),
            absorption_recall: (flags > 0).then(|| recalled.len() as f64 / flags as f64),
            ser_db: Summary::of(&ser),
            oracle_ser_db: Summary::of(&oracle),
            dim_recall_thresholds_m: thresholds.to_vec(),
            dim_recall: recall_curve(&dims, thresholds),
        };
        EvalReport { rooms, aggregates }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per room with a fixed column order; empty cells for missing
    /// values.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "room,status,axis_err_deg_1,axis_err_deg_2,axis_err_deg_3,\
             dim_err_m_x,dim_err_m_y,dim_err_m_z,dim_mae_m,center_err_m,source_err_m,\
             abs_err_x-,abs_err_x+,abs_err_y-,abs_err_y+,abs_err_z-,abs_err_z+,\
             abs_recall,ser_db,oracle_ser_db\n",
        );
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        for r in &self.rooms {
            let status = r.failure.as_deref().unwrap_or("ok");
            let mut cells = vec![r.room.clone(), status.to_string()];
            match &r.errors {
                Some(e) => {
                    cells.extend(e.axis_angular_errors_deg.iter().map(|v| format!("{v}")));
                    cells.extend(e.dim_abs_errors_m.iter().map(|v| format!("{v}")));
                    cells.push(format!("{}", e.dim_abs_errors_m.iter().sum::<f64>() / 3.0));
                    cells.push(format!("{}", e.center_error_m));
                    cells.push(format!("{}", e.source_error_m));
                    cells.extend(e.absorption_abs_errors.iter().map(|v| format!("{v}")));
                    let n = e.absorption_recall_flags.iter().filter(|f| **f).count();
                    cells.push(format!("{}", n as f64 / 6.0));
                }
                None => cells.extend(std::iter::repeat_n(String::new(), 16)),
            }
            cells.push(opt(r.ser_db));
            cells.push(opt(r.oracle_ser_db));
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    #[test]
    fn identity_match() {
        let r = Rotation::identity();
        let m = match_axes(&Basis::from_rotation(&r), &r).unwrap();
        assert_eq!(m.permutation, [0, 1, 2]);
        assert_eq!(m.signs, [1.0; 3]);
        assert_eq!(m.errors_deg, [0.0; 3]);
    }

    #[test]
    fn permuted_with_flip() {
        let b = Basis {
            e1: Vec3::y(),
            e2: -Vec3::z(),
            e3: -Vec3::x(),
        };
        let m = match_axes(&b, &Rotation::identity()).unwrap();
        assert_eq!(m.permutation, [1, 2, 0]);
        assert_eq!(m.signs, [1.0, -1.0, -1.0]);
        // Recovered y+ points along -z: the ground-truth z- wall.
        assert_eq!(m.wall_map()[3], 4);
        assert_eq!(m.wall_map()[0], 2);
    }

    #[test]
    fn non_permutation_fails() {
        let b = Basis {
            e1: Vec3::new(1.0, 0.1, 0.0),
            e2: Vec3::new(1.0, -0.1, 0.0),
            e3: Vec3::z(),
        };
        assert!(matches!(
            match_axes(&b, &Rotation::identity()),
            Err(Error::AxisMatching(_))
        ));
    }

    #[test]
    fn absorption_definitions() {
        let t = [0.1, 0.2, 0.3, 0.1, 0.2, 0.3];
        let m = absorption_metrics(&t, &t, 0.3).unwrap();
        assert_eq!((m.mae_over_recalled, m.recall), (Some(0.0), 1.0));
        let mut e = t;
        e[0] += 0.5;
        e[1] += 0.01;
        let m = absorption_metrics(&e, &t, 0.3).unwrap();
        assert!((m.recall - 5.0 / 6.0).abs() < 1e-15);
        assert!((m.mae_over_recalled.unwrap() - 0.002).abs() < 1e-12);
    }

    #[test]
    fn recall_curve_by_hand() {
        let c = recall_curve(&[0.01, 0.02, 0.03], &[0.0, 0.02, 0.05]);
        assert_eq!(c[0], 0.0);
        assert!((c[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c[2], 1.0);
    }

    #[test]
    fn summary_ignores_order() {
        let a = Summary::of(&[0.1, 0.7, 0.2, 1e-9]).unwrap();
        let b = Summary::of(&[1e-9, 0.2, 0.7, 0.1]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.median, 0.15000000000000002);
    }
}
