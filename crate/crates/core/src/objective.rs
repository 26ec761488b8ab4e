//! Sequence loss comparing a simulated rollout with a reference window.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{finite_difference_twist, geodesic_distance, Pose, Twist, Vec3};
use crate::scenario::Trajectory;
use crate::sim::{GripperModel, Rollout, SimState, Simulator};
use crate::sim::shape::Shape;
use crate::spline::KeyframeTrack;
use crate::synergy::HandControl;

pub const DEFAULT_CONTACT_THRESHOLD: f64 = 0.025;

/// Weights of the six loss terms. Velocity terms carry their own linear and
/// angular sub-weights under an overall factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Object pose.
    pub op: f64,
    /// Rotation share of the object pose loss, in `[0, 1]`.
    pub eta: f64,
    /// Object velocity.
    pub ov: f64,
    pub ov_linear: f64,
    pub ov_angular: f64,
    /// Hand keypoints.
    pub hj: f64,
    /// Weight of fingertip keypoints relative to the others.
    pub w_tip: f64,
    /// Fingertip contact targets.
    pub ct: f64,
    /// Frame-to-frame control change.
    pub hc: f64,
    /// Hand body velocity.
    pub hv: f64,
    pub hv_linear: f64,
    pub hv_angular: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            op: 1.0,
            eta: 0.2,
            ov: 1.0,
            ov_linear: 1.0,
            ov_angular: 1.0,
            hj: 1.0,
            w_tip: 2.0,
            ct: 3.0,
            hc: 1e-3,
            hv: 1e-3,
            hv_linear: 1.0,
            hv_angular: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.op, self.eta, self.ov, self.ov_linear, self.ov_angular, self.hj, self.w_tip, self.ct, self.hc,
            self.hv, self.hv_linear, self.hv_angular,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidValue("loss weights must be finite and non-negative".into()));
        }
        if self.eta > 1.0 {
            return Err(Error::InvalidValue(format!("eta {} outside [0, 1]", self.eta)));
        }
        if self.w_tip < 1.0 {
            return Err(Error::InvalidValue(format!("w_tip {} below 1", self.w_tip)));
        }
        Ok(())
    }

    /// Sets one weight by its key, as used in config files and `--weight`.
    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        let slot = match key {
            "op" => &mut self.op,
            "eta" => &mut self.eta,
            "ov" => &mut self.ov,
            "ov_linear" => &mut self.ov_linear,
            "ov_angular" => &mut self.ov_angular,
            "hj" => &mut self.hj,
            "w_tip" => &mut self.w_tip,
            "ct" => &mut self.ct,
            "hc" => &mut self.hc,
            "hv" => &mut self.hv,
            "hv_linear" => &mut self.hv_linear,
            "hv_angular" => &mut self.hv_angular,
            _ => return Err(Error::InvalidValue(format!("unknown weight '{key}'"))),
        };
        *slot = value;
        self.validate()
    }

    pub fn scaled(&self, c: f64) -> LossWeights {
        LossWeights {
            op: self.op * c,
            ov: self.ov * c,
            hj: self.hj * c,
            ct: self.ct * c,
            hc: self.hc * c,
            hv: self.hv * c,
            ..self.clone()
        }
    }
}

/// `eta * geodesic + (1 - eta) * translation distance`.
pub fn object_pose_loss(sim: &Pose, reference: &Pose, eta: f64) -> f64 {
    eta * geodesic_distance(&sim.rotation, &reference.rotation)
        + (1.0 - eta) * (sim.translation - reference.translation).norm()
}

pub fn object_velocity_loss(sim: &Twist, reference: &Twist, linear: f64, angular: f64) -> f64 {
    linear * (sim.linear - reference.linear).norm_squared() + angular * (sim.angular - reference.angular).norm_squared()
}

/// Weighted mean keypoint distance, fingertips weighted by `w_tip`.
pub fn hand_joint_loss(sim: &[Vec3], reference: &[Vec3], fingertips: &[usize], w_tip: f64) -> Result<f64> {
    if sim.len() != reference.len() {
        return Err(Error::JointCountMismatch {
            sim: sim.len(),
            reference: reference.len(),
        });
    }
    if sim.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    let mut weight = 0.0;
    for (i, (a, b)) in sim.iter().zip(reference).enumerate() {
        let w = if fingertips.contains(&i) { w_tip } else { 1.0 };
        total += w * (a - b).norm();
        weight += w;
    }
    Ok(total / weight)
}

/// A fingertip expected to touch the object at a point fixed in the object frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactTarget {
    /// Finger index.
    pub fingertip: usize,
    /// Object-local target for the fingertip center.
    pub local: Vec3,
}

/// Mean distance from each targeted fingertip to its target under the
/// simulated object pose; zero without targets.
pub fn contact_loss(fingertips: &[Vec3], object: &Pose, targets: &[ContactTarget]) -> Result<f64> {
    let mut total = 0.0;
    for t in targets {
        let tip = fingertips.get(t.fingertip).ok_or(Error::UnknownFingertip(t.fingertip))?;
        total += (tip - object.transform_point(&t.local)).norm();
    }
    Ok(total / targets.len().max(1) as f64)
}

/// `|theta_t - theta_prev|^2` plus the wrist's geodesic rotation change.
pub fn hand_consistency_loss(control: &HandControl, previous: &HandControl) -> Result<f64> {
    if control.coeffs.len() != previous.coeffs.len() {
        return Err(Error::DimensionMismatch {
            expected: previous.coeffs.len(),
            got: control.coeffs.len(),
        });
    }
    let d: f64 = control
        .coeffs
        .iter()
        .zip(&previous.coeffs)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(d + geodesic_distance(&control.wrist.rotation, &previous.wrist.rotation))
}

pub fn hand_velocity_loss(bodies: &[Twist], linear: f64, angular: f64) -> f64 {
    bodies
        .iter()
        .map(|t| linear * t.linear.norm_squared() + angular * t.angular.norm_squared())
        .sum()
}

/// Fingertips whose center lies within `threshold` of the object surface
/// inflated by the fingertip radius, each paired with the closest point of
/// that inflated surface in object coordinates.
pub fn contact_targets_for_frame(
    gripper: &GripperModel,
    shape: &Shape,
    object: &Pose,
    keypoints: &[Vec3],
    threshold: f64,
) -> Vec<ContactTarget> {
    gripper
        .fingertip_keypoints()
        .iter()
        .enumerate()
        .filter_map(|(fingertip, &k)| {
            let q = shape.closest(&object.inverse_transform_point(keypoints.get(k)?));
            (q.distance - gripper.tip_radius <= threshold).then(|| ContactTarget {
                fingertip,
                local: q.point + q.normal * gripper.tip_radius,
            })
        })
        .collect()
}

/// Per-frame contact targets of a reference trajectory.
pub fn extract_contact_targets(
    trajectory: &Trajectory,
    gripper: &GripperModel,
    shape: &Shape,
    threshold: f64,
) -> Result<Vec<Vec<ContactTarget>>> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidValue(format!("contact threshold {threshold} must be positive")));
    }
    Ok(trajectory
        .frames
        .iter()
        .map(|f| contact_targets_for_frame(gripper, shape, &f.object, &f.keypoints, threshold))
        .collect())
}

/// Reference quantities for frames `first_frame..first_frame + len()`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceWindow {
    pub first_frame: usize,
    pub frame_dt: f64,
    /// Object pose at the frame before the window, if any.
    pub prior_pose: Option<Pose>,
    pub poses: Vec<Pose>,
    pub twists: Vec<Twist>,
    pub keypoints: Vec<Vec<Vec3>>,
    pub targets: Vec<Vec<ContactTarget>>,
    pub fingertips: Vec<usize>,
}

impl ReferenceWindow {
    /// Frames `first..first + len` of `trajectory`. Twists are finite
    /// differences with the same stencil the simulated side uses.
    pub fn new(
        trajectory: &Trajectory,
        gripper: &GripperModel,
        shape: &Shape,
        first: usize,
        len: usize,
        threshold: f64,
    ) -> Result<ReferenceWindow> {
        let frames = trajectory.window(first, len)?;
        let prior_pose = (first > trajectory.start_frame)
            .then(|| trajectory.frames[first - 1 - trajectory.start_frame].object);
        let poses = frames.object_poses();
        let twists = window_twists(prior_pose.as_ref(), &poses, trajectory.frame_dt())?;
        Ok(ReferenceWindow {
            first_frame: first,
            frame_dt: trajectory.frame_dt(),
            prior_pose,
            twists,
            keypoints: frames.frames.iter().map(|f| f.keypoints.clone()).collect(),
            targets: extract_contact_targets(&frames, gripper, shape, threshold)?,
            poses,
            fingertips: gripper.fingertip_keypoints(),
        })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn last_frame(&self) -> usize {
        self.first_frame + self.len() - 1
    }
}

/// Finite-difference twists of `poses`, using `prior` as the preceding frame.
fn window_twists(prior: Option<&Pose>, poses: &[Pose], dt: f64) -> Result<Vec<Twist>> {
    match (prior, poses.len()) {
        (_, 0) => Ok(Vec::new()),
        (None, 1) => Ok(vec![Twist::zero()]),
        (None, _) => finite_difference_twist(poses, dt),
        (Some(p), _) => {
            let mut all = Vec::with_capacity(poses.len() + 1);
            all.push(*p);
            all.extend_from_slice(poses);
            Ok(finite_difference_twist(&all, dt)?.split_off(1))
        }
    }
}

/// Simulated quantities matching a reference window frame by frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SimFrames {
    pub poses: Vec<Pose>,
    pub twists: Vec<Twist>,
    pub keypoints: Vec<Vec<Vec3>>,
    pub fingertips: Vec<Vec<Vec3>>,
    pub body_twists: Vec<Vec<Twist>>,
}

impl SimFrames {
    pub fn from_rollout(sim: &Simulator, snapshot: &SimState, rollout: &Rollout, prior: bool, dt: f64) -> Result<SimFrames> {
        let poses: Vec<Pose> = rollout.states.iter().map(|s| s.object).collect();
        let prior_pose = prior.then_some(snapshot.object);
        Ok(SimFrames {
            twists: window_twists(prior_pose.as_ref(), &poses, dt)?,
            keypoints: rollout.states.iter().map(|s| sim.keypoints(s)).collect(),
            fingertips: rollout.states.iter().map(|s| sim.fingertips(s)).collect(),
            body_twists: rollout.states.iter().map(|s| sim.body_twists(s)).collect(),
            poses,
        })
    }
}

/// Unweighted sums of each term over a window.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WindowLoss {
    /// Object pose term, already mixed by `eta`.
    pub pose: f64,
    /// Object velocity term, already sub-weighted.
    pub velocity: f64,
    pub joints: f64,
    pub contact: f64,
    pub consistency: f64,
    /// Hand velocity term, already sub-weighted.
    pub hand_velocity: f64,
}

impl WindowLoss {
    pub fn total(&self, w: &LossWeights) -> f64 {
        w.op * self.pose
            + w.ov * self.velocity
            + w.hj * self.joints
            + w.ct * self.contact
            + w.hc * self.consistency
            + w.hv * self.hand_velocity
    }
}

/// Sums all per-frame terms. `previous` is the control before the window.
pub fn score(
    sim: &SimFrames,
    controls: &[HandControl],
    previous: Option<&HandControl>,
    window: &ReferenceWindow,
    weights: &LossWeights,
) -> Result<WindowLoss> {
    let n = window.len();
    if sim.poses.len() != n || controls.len() != n {
        return Err(Error::LengthMismatch(format!(
            "window has {n} frames, simulation {} and controls {}",
            sim.poses.len(),
            controls.len()
        )));
    }
    let mut loss = WindowLoss::default();
    for t in 0..n {
        loss.pose += object_pose_loss(&sim.poses[t], &window.poses[t], weights.eta);
        loss.velocity += object_velocity_loss(&sim.twists[t], &window.twists[t], weights.ov_linear, weights.ov_angular);
        loss.joints += hand_joint_loss(&sim.keypoints[t], &window.keypoints[t], &window.fingertips, weights.w_tip)?;
        loss.contact += contact_loss(&sim.fingertips[t], &sim.poses[t], &window.targets[t])?;
        let prev = if t == 0 { previous } else { Some(&controls[t - 1]) };
        if let Some(p) = prev {
            loss.consistency += hand_consistency_loss(&controls[t], p)?;
        }
        loss.hand_velocity += hand_velocity_loss(&sim.body_twists[t], weights.hv_linear, weights.hv_angular);
    }
    Ok(loss)
}

/// Loss terms of the dense controls `controls` applied from `snapshot`, the
/// state before the window's first frame. `None` if the simulation diverges.
pub fn evaluate_controls(
    sim: &Simulator,
    controls: &[HandControl],
    previous: Option<&HandControl>,
    window: &ReferenceWindow,
    snapshot: &SimState,
    weights: &LossWeights,
) -> Result<Option<(WindowLoss, Rollout)>> {
    let rollout = match sim.rollout(snapshot, controls, window.frame_dt, window.first_frame) {
        Ok(r) => r,
        Err(Error::SimDiverged { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let frames = SimFrames::from_rollout(sim, snapshot, &rollout, window.prior_pose.is_some(), window.frame_dt)?;
    let loss = score(&frames, controls, previous, window, weights)?;
    Ok(Some((loss, rollout)))
}

/// Scalar fitness of a keyframe track over a window; divergence maps to
/// `+inf`. The track must cover every window frame.
pub fn window_fitness(
    sim: &Simulator,
    track: &KeyframeTrack,
    window: &ReferenceWindow,
    snapshot: &SimState,
    weights: &LossWeights,
) -> Result<f64> {
    let interp = track.interpolator()?;
    let controls = (window.first_frame..=window.last_frame())
        .map(|f| interp.eval(f))
        .collect::<Result<Vec<_>>>()?;
    let previous = window.first_frame.checked_sub(1).and_then(|f| interp.eval(f).ok());
    Ok(
        match evaluate_controls(sim, &controls, previous.as_ref(), window, snapshot, weights)? {
            Some((loss, _)) => {
                let total = loss.total(weights);
                if total.is_nan() {
                    f64::INFINITY
                } else {
                    total
                }
            }
            None => f64::INFINITY,
        },
    )
}
