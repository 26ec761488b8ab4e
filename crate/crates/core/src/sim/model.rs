//! Scene description: gripper, object, and physical constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};
use crate::sim::shape::Shape;
use crate::synergy::{make_grasp_basis, SynergyBasis};

/// One planar finger with a proximal and a distal flexion joint.
///
/// At zero flexion the finger hangs along the wrist's -z axis. Positive
/// flexion swings it toward `inward`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FingerSpec {
    /// Proximal joint position in the wrist frame, meters.
    pub base: Vec3,
    /// Horizontal unit direction in the wrist frame.
    pub inward: Vec3,
    pub link_lengths: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: Vec3,
    pub radius: f64,
}

/// Rigid body of the gripper that can touch the object.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HandBody {
    Palm,
    /// `segment` 0 is proximal, 1 is distal.
    Link { finger: usize, segment: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GripperModel {
    pub fingers: Vec<FingerSpec>,
    /// Two entries per finger: proximal then distal.
    pub joint_lower: Vec<f64>,
    pub joint_upper: Vec<f64>,
    pub link_radius: f64,
    pub tip_radius: f64,
    pub palm_spheres: Vec<Sphere>,
    /// Rotor inertia of every joint, kg m^2.
    pub joint_armature: f64,
}

impl Default for GripperModel {
    fn default() -> Self {
        let finger = |x: f64, y: f64| FingerSpec {
            base: Vec3::new(x, y, 0.0),
            inward: Vec3::new(0.0, -y.signum(), 0.0),
            link_lengths: [0.05, 0.04],
        };
        let palm = |y: f64| Sphere {
            center: Vec3::new(0.0, y, 0.015),
            radius: 0.015,
        };
        GripperModel {
            fingers: vec![finger(-0.015, 0.045), finger(0.015, 0.045), finger(0.0, -0.045)],
            joint_lower: [-0.5, 0.0].repeat(3),
            joint_upper: [1.5, 1.6].repeat(3),
            link_radius: 0.007,
            tip_radius: 0.008,
            palm_spheres: vec![palm(-0.03), palm(0.0), palm(0.03)],
            joint_armature: 2e-4,
        }
    }
}

/// World-frame kinematics of one finger.
#[derive(Clone, Copy, Debug)]
pub struct FingerKinematics {
    /// Proximal joint, distal joint, fingertip center.
    pub points: [Vec3; 3],
    /// Flexion axis shared by both joints.
    pub axis: Vec3,
}

impl GripperModel {
    pub fn n_fingers(&self) -> usize {
        self.fingers.len()
    }

    pub fn n_joints(&self) -> usize {
        2 * self.fingers.len()
    }

    /// Wrist plus proximal joint, distal joint and tip of every finger.
    pub fn n_keypoints(&self) -> usize {
        1 + 3 * self.fingers.len()
    }

    /// Keypoint indices of the fingertips.
    pub fn fingertip_keypoints(&self) -> Vec<usize> {
        (0..self.fingers.len()).map(|f| 3 + 3 * f).collect()
    }

    /// Palm followed by the two links of every finger.
    pub fn bodies(&self) -> Vec<HandBody> {
        let mut out = vec![HandBody::Palm];
        for finger in 0..self.fingers.len() {
            for segment in 0..2 {
                out.push(HandBody::Link { finger, segment });
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.fingers.is_empty() {
            return Err(Error::InvalidValue("gripper has no fingers".into()));
        }
        let n = self.n_joints();
        if self.joint_lower.len() != n || self.joint_upper.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.joint_lower.len().min(self.joint_upper.len()),
            });
        }
        for (lo, hi) in self.joint_lower.iter().zip(&self.joint_upper) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidValue(format!("joint limits [{lo}, {hi}]")));
            }
        }
        for f in &self.fingers {
            if (f.inward.norm() - 1.0).abs() > 1e-9 || f.inward.z.abs() > 1e-9 {
                return Err(Error::InvalidValue("finger inward direction must be a horizontal unit vector".into()));
            }
            if f.link_lengths.iter().any(|l| !(*l > 0.0)) {
                return Err(Error::InvalidValue("finger link lengths must be positive".into()));
            }
        }
        let radii = [self.link_radius, self.tip_radius, self.joint_armature];
        if radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) || self.palm_spheres.iter().any(|s| !(s.radius > 0.0)) {
            return Err(Error::InvalidValue("radii and armature must be positive".into()));
        }
        Ok(())
    }

    pub fn finger_kinematics(&self, wrist: &Pose, joints: &[f64]) -> Vec<FingerKinematics> {
        let rot = &wrist.rotation;
        self.fingers
            .iter()
            .enumerate()
            .map(|(f, spec)| {
                let down = rot.rotate(&-Vec3::z());
                let inward = rot.rotate(&spec.inward);
                let dir = |phi: f64| down * phi.cos() + inward * phi.sin();
                let (q1, q2) = (joints[2 * f], joints[2 * f + 1]);
                let p0 = wrist.transform_point(&spec.base);
                let p1 = p0 + dir(q1) * spec.link_lengths[0];
                let p2 = p1 + dir(q1 + q2) * spec.link_lengths[1];
                FingerKinematics {
                    points: [p0, p1, p2],
                    axis: down.cross(&inward),
                }
            })
            .collect()
    }

    /// World positions of all keypoints for a wrist pose and joint vector.
    pub fn keypoints(&self, wrist: &Pose, joints: &[f64]) -> Vec<Vec3> {
        let mut out = Vec::with_capacity(self.n_keypoints());
        out.push(wrist.translation);
        for k in self.finger_kinematics(wrist, joints) {
            out.extend_from_slice(&k.points);
        }
        out
    }

    /// A synergy basis over this gripper's joints with the open hand as mean.
    pub fn synergy_basis(&self, n_coeffs: usize, seed: u64) -> Result<SynergyBasis> {
        let mean = self
            .joint_lower
            .iter()
            .zip(&self.joint_upper)
            .map(|(lo, hi)| 0.0f64.clamp(*lo, *hi))
            .collect();
        make_grasp_basis(self.n_joints(), n_coeffs, seed)?.with_mean_and_limits(
            mean,
            self.joint_lower.clone(),
            self.joint_upper.clone(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectModel {
    pub shape: Shape,
    /// kg
    pub mass: f64,
}

impl Default for ObjectModel {
    fn default() -> Self {
        ObjectModel {
            shape: Shape::cube(0.05),
            mass: 0.066,
        }
    }
}

impl ObjectModel {
    pub fn inertia(&self) -> Vec3 {
        self.shape.inertia(self.mass)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return Err(Error::InvalidValue(format!("object mass {}", self.mass)));
        }
        self.shape.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactParams {
    /// N/m
    pub stiffness: f64,
    pub damping_ratio: f64,
    pub friction: f64,
    /// Slip speed below which friction scales linearly, m/s.
    pub friction_reg_velocity: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        ContactParams {
            stiffness: 5000.0,
            damping_ratio: 1.0,
            friction: 0.8,
            friction_reg_velocity: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServoParams {
    pub kp: f64,
    pub kv: f64,
}

impl Default for ServoParams {
    fn default() -> Self {
        ServoParams { kp: 50.0, kv: 3.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub gripper: GripperModel,
    pub object: ObjectModel,
    pub gravity: Vec3,
    /// Height of the ground plane; `None` removes it.
    pub ground: Option<f64>,
    pub contact: ContactParams,
    pub servo: ServoParams,
    /// Control step, seconds.
    pub timestep: f64,
    /// Integration substeps per control step.
    pub substeps: usize,
    /// Natural frequency of the wrist's tracking of its command, rad/s.
    pub wrist_tracking: f64,
}

impl Default for Scene {
    fn default() -> Self {
        Scene {
            gripper: GripperModel::default(),
            object: ObjectModel::default(),
            gravity: Vec3::new(0.0, 0.0, -9.81),
            ground: Some(0.0),
            contact: ContactParams::default(),
            servo: ServoParams::default(),
            timestep: 1.0 / 240.0,
            substeps: 8,
            wrist_tracking: 60.0,
        }
    }
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        self.gripper.validate()?;
        self.object.validate()?;
        let c = &self.contact;
        let positive = [c.stiffness, c.friction_reg_velocity, self.timestep, self.wrist_tracking];
        let non_negative = [c.damping_ratio, c.friction, self.servo.kp, self.servo.kv];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0))
            || non_negative.iter().any(|v| !(v.is_finite() && *v >= 0.0))
            || self.substeps == 0
            || !self.gravity.iter().all(|g| g.is_finite())
        {
            return Err(Error::InvalidValue("scene constants out of range".into()));
        }
        Ok(())
    }

    /// Integration step, seconds.
    pub fn substep(&self) -> f64 {
        self.timestep / self.substeps as f64
    }
}
