//! Scenario files: scene, synergy basis, initial state and a reference
//! trajectory, plus contact export.

mod corrupt;
mod synth;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};
use crate::sim::{ContactRecord, Rollout, Scene, SimState, Simulator, CSV_HEADER};
use crate::synergy::{HandControl, SynergyBasis};

pub use corrupt::{corrupt, CorruptionKind, CorruptionSpec};
pub use synth::{synthesize_demo, Task, DEMO_FRAMES, FRAME_RATE};

pub const FORMAT_VERSION: u64 = 1;

/// One recorded frame: the state reached after applying `control`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub object: Pose,
    pub control: HandControl,
    /// Hand keypoints in world coordinates, see [`crate::sim::GripperModel::keypoints`].
    pub keypoints: Vec<Vec3>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Hz
    pub frame_rate: f64,
    /// Index of `frames[0]` within the full sequence.
    pub start_frame: usize,
    pub frames: Vec<Frame>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_dt(&self) -> f64 {
        1.0 / self.frame_rate
    }

    pub fn controls(&self) -> Vec<HandControl> {
        self.frames.iter().map(|f| f.control.clone()).collect()
    }

    pub fn object_poses(&self) -> Vec<Pose> {
        self.frames.iter().map(|f| f.object).collect()
    }

    /// Records a rollout driven by `controls`, frames numbered from `start_frame`.
    pub fn from_rollout(sim: &Simulator, rollout: &Rollout, controls: &[HandControl], frame_rate: f64, start_frame: usize) -> Trajectory {
        let frames = rollout
            .states
            .iter()
            .zip(controls)
            .map(|(s, c)| Frame {
                object: s.object,
                control: c.clone(),
                keypoints: sim.keypoints(s),
            })
            .collect();
        Trajectory {
            frame_rate,
            start_frame,
            frames,
        }
    }

    /// Frames `first..first + len` of the full sequence, if contained.
    pub fn window(&self, first: usize, len: usize) -> Result<Trajectory> {
        let end = first + len;
        if first < self.start_frame || end > self.start_frame + self.len() {
            return Err(Error::SpanOutOfRange {
                from: first,
                to: end,
                len: self.start_frame + self.len(),
            });
        }
        Ok(Trajectory {
            frame_rate: self.frame_rate,
            start_frame: first,
            frames: self.frames[first - self.start_frame..end - self.start_frame].to_vec(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub format_version: u64,
    pub name: String,
    pub seed: u64,
    /// Corruptions applied after recording, in order.
    #[serde(default)]
    pub corruptions: Vec<CorruptionSpec>,
    pub scene: Scene,
    pub basis: SynergyBasis,
    /// State before the first frame.
    pub initial: SimState,
    pub trajectory: Trajectory,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u64,
}

impl Scenario {
    pub fn simulator(&self) -> Result<Simulator> {
        Simulator::new(self.scene.clone(), self.basis.clone())
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::VersionUnsupported {
                found: self.format_version,
                supported: FORMAT_VERSION,
            });
        }
        self.scene.validate()?;
        let sim_rate = 1.0 / self.scene.timestep;
        let ratio = sim_rate / self.trajectory.frame_rate;
        if !(ratio >= 1.0) || (ratio - ratio.round()).abs() > 1e-6 {
            return Err(Error::InvalidValue(format!(
                "frame rate {} does not divide the simulation rate {sim_rate}",
                self.trajectory.frame_rate
            )));
        }
        let nk = self.scene.gripper.n_keypoints();
        let nc = self.basis.n_coeffs();
        if self.basis.n_joints() != self.scene.gripper.n_joints() || self.initial.joints.len() != self.scene.gripper.n_joints() {
            return Err(Error::SceneMismatch("basis, gripper and initial state disagree on joint count".into()));
        }
        for (i, f) in self.trajectory.frames.iter().enumerate() {
            if f.keypoints.len() != nk || f.control.coeffs.len() != nc {
                return Err(Error::SceneMismatch(format!(
                    "frame {i} has {} keypoints and {} coefficients, scene expects {nk} and {nc}",
                    f.keypoints.len(),
                    f.control.coeffs.len()
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidValue(e.to_string()))
    }

    pub fn from_json(text: &str, context: &str) -> Result<Scenario> {
        let parse = |e: serde_json::Error| Error::Parse {
            context: context.to_string(),
            message: e.to_string(),
        };
        let probe: VersionProbe = serde_json::from_str(text).map_err(parse)?;
        if probe.format_version != FORMAT_VERSION {
            return Err(Error::VersionUnsupported {
                found: probe.format_version,
                supported: FORMAT_VERSION,
            });
        }
        let scenario: Scenario = serde_json::from_str(text).map_err(parse)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Scenario::from_json(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Plays the recorded controls from the initial state.
    pub fn replay(&self) -> Result<Rollout> {
        let t = &self.trajectory;
        self.simulator()?.rollout(&self.initial, &t.controls(), t.frame_dt(), t.start_frame)
    }
}

/// Writes contact records as CSV, one row per contact, in the given order.
pub fn export_contacts(records: &[ContactRecord], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in records {
            writeln!(w, "{}", r.csv_row())?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn read_contacts(path: &Path) -> Result<Vec<ContactRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        _ => {
            return Err(Error::Parse {
                context: path.display().to_string(),
                message: "missing contact CSV header".into(),
            })
        }
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(ContactRecord::from_csv_row)
        .collect()
}
