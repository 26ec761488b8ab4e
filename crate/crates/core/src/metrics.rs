//! Rotation, translation and joint errors of a rollout against its reference,
//! and the binary per-sequence success test.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::geodesic_distance;
use crate::scenario::Trajectory;

/// Per-frame failure thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub rotation_deg: f64,
    pub translation_cm: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            rotation_deg: 30.0,
            translation_cm: 3.0,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.rotation_deg > 0.0 && self.translation_cm > 0.0) {
            return Err(Error::InvalidValue("metric thresholds must be positive".into()));
        }
        Ok(())
    }
}

/// Errors in degrees and centimeters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub frames: usize,
    pub e_r: f64,
    pub e_t: f64,
    pub e_j: f64,
    pub e_ft: f64,
    pub max_e_r: f64,
    pub max_e_t: f64,
    pub max_e_j: f64,
    pub max_e_ft: f64,
    pub success: bool,
    /// Absolute frame indices over either threshold.
    pub failing_frames: Vec<usize>,
}

pub const CSV_HEADER: &str = "name,frames,e_r,e_t,e_j,e_ft,max_e_r,max_e_t,success,failing_frames";

impl MetricReport {
    /// One CSV row; failing frames are joined with `;`.
    pub fn csv_row(&self, name: &str) -> String {
        let failing: Vec<String> = self.failing_frames.iter().map(usize::to_string).collect();
        format!(
            "{name},{},{},{},{},{},{},{},{},{}",
            self.frames,
            self.e_r,
            self.e_t,
            self.e_j,
            self.e_ft,
            self.max_e_r,
            self.max_e_t,
            self.success,
            failing.join(";")
        )
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

/// Compares `sim` with the reference frames at the same absolute indices.
/// `fingertips` indexes the keypoints counted in `e_ft`.
pub fn evaluate(sim: &Trajectory, reference: &Trajectory, fingertips: &[usize], thresholds: &Thresholds) -> Result<MetricReport> {
    thresholds.validate()?;
    if sim.is_empty() {
        return Err(Error::LengthMismatch("simulated trajectory is empty".into()));
    }
    let reference = reference.window(sim.start_frame, sim.len()).map_err(|_| {
        Error::LengthMismatch(format!(
            "frames {}..{} are not all in the reference ({}..{})",
            sim.start_frame,
            sim.start_frame + sim.len(),
            reference.start_frame,
            reference.start_frame + reference.len()
        ))
    })?;
    let mut rot = Vec::with_capacity(sim.len());
    let mut trans = Vec::with_capacity(sim.len());
    let mut joint = Vec::new();
    let mut tips = Vec::new();
    let mut frame_joint = Vec::with_capacity(sim.len());
    let mut frame_tip = Vec::with_capacity(sim.len());
    for (a, b) in sim.frames.iter().zip(&reference.frames) {
        if a.keypoints.len() != b.keypoints.len() {
            return Err(Error::JointSetMismatch(format!(
                "{} simulated keypoints, {} reference",
                a.keypoints.len(),
                b.keypoints.len()
            )));
        }
        if let Some(&k) = fingertips.iter().find(|&&k| k >= a.keypoints.len()) {
            return Err(Error::JointSetMismatch(format!("fingertip keypoint {k} does not exist")));
        }
        rot.push(geodesic_distance(&a.object.rotation, &b.object.rotation));
        trans.push((a.object.translation - b.object.translation).norm());
        let d: Vec<f64> = a.keypoints.iter().zip(&b.keypoints).map(|(p, q)| (p - q).norm()).collect();
        let t: Vec<f64> = fingertips.iter().map(|&k| d[k]).collect();
        frame_joint.push(mean(&d));
        frame_tip.push(mean(&t));
        joint.extend(d);
        tips.extend(t);
    }
    let (deg, cm) = (180.0 / std::f64::consts::PI, 100.0);
    let failing_frames: Vec<usize> = rot
        .iter()
        .zip(&trans)
        .enumerate()
        .filter(|(_, (r, t))| **r * deg > thresholds.rotation_deg || **t * cm > thresholds.translation_cm)
        .map(|(i, _)| sim.start_frame + i)
        .collect();
    Ok(MetricReport {
        frames: sim.len(),
        e_r: mean(&rot) * deg,
        e_t: mean(&trans) * cm,
        e_j: mean(&joint) * cm,
        e_ft: mean(&tips) * cm,
        max_e_r: max(&rot) * deg,
        max_e_t: max(&trans) * cm,
        max_e_j: max(&frame_joint) * cm,
        max_e_ft: max(&frame_tip) * cm,
        success: failing_frames.is_empty(),
        failing_frames,
    })
}

/// Means over sequences; `success_rate` in percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub sequences: usize,
    pub e_r: f64,
    pub e_t: f64,
    pub e_j: f64,
    pub e_ft: f64,
    pub success_rate: f64,
}

pub fn aggregate(reports: &[MetricReport]) -> Result<Summary> {
    if reports.is_empty() {
        return Err(Error::EmptyList);
    }
    let avg = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / reports.len() as f64;
    Ok(Summary {
        sequences: reports.len(),
        e_r: avg(|r| r.e_r),
        e_t: avg(|r| r.e_t),
        e_j: avg(|r| r.e_j),
        e_ft: avg(|r| r.e_ft),
        success_rate: 100.0 * reports.iter().filter(|r| r.success).count() as f64 / reports.len() as f64,
    })
}
