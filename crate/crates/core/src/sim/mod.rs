//! Deterministic contact simulation of a position-servoed gripper and one
//! free rigid object resting on a ground plane.
//!
//! Contacts are penalty springs with critical damping along the normal and
//! regularized Coulomb friction tangentially. Damping and friction use the
//! contact's effective mass so that both stay stable at the integration step.

pub mod contact;
pub mod model;
pub mod shape;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rotation_vector_exp, rotation_vector_log, Pose, Twist, Vec3};
use crate::synergy::{HandControl, SynergyBasis};

pub use contact::{net_object_wrench, tangent_basis, BodyRef, ContactRecord, CSV_HEADER};
pub use model::{ContactParams, GripperModel, HandBody, ObjectModel, Scene, ServoParams};
pub use shape::Shape;

use model::FingerKinematics;

const DIVERGENCE_LIMIT: f64 = 1e6;

/// Full restorable simulator state. Twists are in world coordinates; the
/// object's twist refers to its center of mass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub joints: Vec<f64>,
    pub joint_velocities: Vec<f64>,
    pub wrist: Pose,
    pub wrist_twist: Twist,
    pub object: Pose,
    pub object_twist: Twist,
    pub time: f64,
}

impl SimState {
    /// Hand at rest at `wrist` with the given joints, object at rest.
    pub fn at_rest(joints: Vec<f64>, wrist: Pose, object: Pose) -> SimState {
        SimState {
            joint_velocities: vec![0.0; joints.len()],
            joints,
            wrist,
            wrist_twist: Twist::zero(),
            object,
            object_twist: Twist::zero(),
            time: 0.0,
        }
    }

    fn max_magnitude(&self) -> f64 {
        let vecs = [
            self.wrist.translation,
            self.wrist_twist.linear,
            self.wrist_twist.angular,
            self.object.translation,
            self.object_twist.linear,
            self.object_twist.angular,
        ];
        let mut m = self.time.abs();
        for v in self.joints.iter().chain(&self.joint_velocities).chain(vecs.iter().flat_map(|v| v.iter())) {
            if !v.is_finite() {
                return f64::INFINITY;
            }
            m = m.max(v.abs());
        }
        m
    }
}

/// Per-frame states and contacts of a rollout. Entry `i` is the state after
/// applying control `i`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Rollout {
    pub states: Vec<SimState>,
    pub contacts: Vec<Vec<ContactRecord>>,
}

/// Contact found during one integration step.
struct ActiveContact {
    hand: Option<HandBody>,
    point: Vec3,
    normal: Vec3,
    depth: f64,
}

#[derive(Clone, Debug)]
pub struct Simulator {
    scene: Scene,
    basis: SynergyBasis,
    inertia: Vec3,
}

impl Simulator {
    pub fn new(scene: Scene, basis: SynergyBasis) -> Result<Simulator> {
        scene.validate()?;
        if basis.n_joints() != scene.gripper.n_joints() {
            return Err(Error::DimensionMismatch {
                expected: scene.gripper.n_joints(),
                got: basis.n_joints(),
            });
        }
        let inertia = scene.object.inertia();
        Ok(Simulator { scene, basis, inertia })
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn basis(&self) -> &SynergyBasis {
        &self.basis
    }

    /// Advances one control step. `frame` labels the emitted records, which
    /// describe the contacts at the end of the step.
    pub fn step(&self, state: &mut SimState, control: &HandControl, frame: usize) -> Result<Vec<ContactRecord>> {
        let n = self.scene.gripper.n_joints();
        if state.joints.len() != n || state.joint_velocities.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: state.joints.len(),
            });
        }
        let target = self.basis.decode_coeffs(&control.coeffs)?;
        let mut contacts = Vec::new();
        for sub in 0..self.scene.substeps {
            let record = sub + 1 == self.scene.substeps;
            self.substep(state, &target, &control.wrist, record.then_some(&mut contacts), frame);
        }
        if state.max_magnitude() > DIVERGENCE_LIMIT {
            return Err(Error::SimDiverged { frame });
        }
        Ok(contacts)
    }

    /// Holds each control for one frame of `frame_dt` seconds. Frames are
    /// numbered from `first_frame`.
    pub fn rollout(
        &self,
        initial: &SimState,
        controls: &[HandControl],
        frame_dt: f64,
        first_frame: usize,
    ) -> Result<Rollout> {
        let steps = self.steps_per_frame(frame_dt)?;
        let mut state = initial.clone();
        let mut out = Rollout {
            states: Vec::with_capacity(controls.len()),
            contacts: Vec::with_capacity(controls.len()),
        };
        for (i, control) in controls.iter().enumerate() {
            let frame = first_frame + i;
            let mut records = Vec::new();
            for _ in 0..steps {
                records = self.step(&mut state, control, frame)?;
            }
            out.states.push(state.clone());
            out.contacts.push(records);
        }
        Ok(out)
    }

    pub fn steps_per_frame(&self, frame_dt: f64) -> Result<usize> {
        let ratio = frame_dt / self.scene.timestep;
        let steps = ratio.round();
        if !(steps >= 1.0) || (ratio - steps).abs() > 1e-6 {
            return Err(Error::InvalidValue(format!(
                "frame time {frame_dt} is not a multiple of the step {}",
                self.scene.timestep
            )));
        }
        Ok(steps as usize)
    }

    pub fn keypoints(&self, state: &SimState) -> Vec<Vec3> {
        self.scene.gripper.keypoints(&state.wrist, &state.joints)
    }

    pub fn fingertips(&self, state: &SimState) -> Vec<Vec3> {
        self.scene
            .gripper
            .finger_kinematics(&state.wrist, &state.joints)
            .iter()
            .map(|k| k.points[2])
            .collect()
    }

    /// Twist of every hand body, in the order of [`GripperModel::bodies`].
    /// Link twists refer to the link midpoint.
    pub fn body_twists(&self, state: &SimState) -> Vec<Twist> {
        let kin = self.scene.gripper.finger_kinematics(&state.wrist, &state.joints);
        let mut out = vec![state.wrist_twist];
        for (f, k) in kin.iter().enumerate() {
            for segment in 0..2 {
                let mid = (k.points[segment] + k.points[segment + 1]) * 0.5;
                let v = self.hand_point_velocity(state, k, f, segment, &mid);
                let rate: f64 = state.joint_velocities[2 * f..=2 * f + segment].iter().sum();
                out.push(Twist::new(v, state.wrist_twist.angular + k.axis * rate));
            }
        }
        out
    }

    /// Kinetic energy of object and joints plus elastic contact energy.
    pub fn energy(&self, state: &SimState) -> f64 {
        let obj = &self.scene.object;
        let r = state.object.rotation.matrix();
        let w_body = r.transpose() * state.object_twist.angular;
        let mut e = 0.5 * obj.mass * state.object_twist.linear.norm_squared()
            + 0.5 * w_body.component_mul(&w_body).dot(&self.inertia)
            - obj.mass * self.scene.gravity.dot(&state.object.translation);
        e += 0.5
            * self.scene.gripper.joint_armature
            * state.joint_velocities.iter().map(|v| v * v).sum::<f64>();
        let kin = self.scene.gripper.finger_kinematics(&state.wrist, &state.joints);
        for c in self.find_contacts(state, &kin) {
            e += 0.5 * self.scene.contact.stiffness * c.depth * c.depth;
        }
        e
    }

    fn hand_point_velocity(&self, state: &SimState, k: &FingerKinematics, finger: usize, segment: usize, p: &Vec3) -> Vec3 {
        let w = &state.wrist_twist;
        let mut v = w.linear + w.angular.cross(&(p - state.wrist.translation));
        for j in 0..=segment {
            v += (k.axis * state.joint_velocities[2 * finger + j]).cross(&(p - k.points[j]));
        }
        v
    }

    fn find_contacts(&self, state: &SimState, kin: &[FingerKinematics]) -> Vec<ActiveContact> {
        let g = &self.scene.gripper;
        let obj = &state.object;
        let shape = &self.scene.object.shape;
        let reach = shape.bounding_radius();
        let mut out = Vec::new();
        let mut sphere = |hand: Option<HandBody>, center: Vec3, radius: f64| {
            if (center - obj.translation).norm() > reach + radius {
                return;
            }
            let q = shape.closest(&obj.inverse_transform_point(&center));
            if q.distance < radius {
                out.push(ActiveContact {
                    hand,
                    point: obj.transform_point(&q.point),
                    normal: obj.rotation.rotate(&q.normal),
                    depth: radius - q.distance,
                });
            }
        };
        for s in &g.palm_spheres {
            sphere(Some(HandBody::Palm), state.wrist.transform_point(&s.center), s.radius);
        }
        for (finger, k) in kin.iter().enumerate() {
            let [p0, p1, p2] = k.points;
            let proximal = Some(HandBody::Link { finger, segment: 0 });
            let distal = Some(HandBody::Link { finger, segment: 1 });
            sphere(proximal, p0 + (p1 - p0) * 0.5, g.link_radius);
            sphere(proximal, p1, g.link_radius);
            sphere(distal, p1 + (p2 - p1) * 0.5, g.link_radius);
            sphere(distal, p2, g.tip_radius);
        }
        if let Some(height) = self.scene.ground {
            for p in shape.support_points() {
                let w = obj.transform_point(&p);
                if w.z < height {
                    out.push(ActiveContact {
                        hand: None,
                        point: w,
                        normal: -Vec3::z(),
                        depth: height - w.z,
                    });
                }
            }
        }
        out
    }

    fn substep(
        &self,
        state: &mut SimState,
        target: &[f64],
        command: &Pose,
        mut records: Option<&mut Vec<ContactRecord>>,
        frame: usize,
    ) {
        let h = self.scene.substep();
        let g = &self.scene.gripper;
        let cp = &self.scene.contact;
        let obj = &self.scene.object;
        let com = state.object.translation;
        let rot = state.object.rotation.matrix();
        let inv_inertia = rot * nalgebra::Matrix3::from_diagonal(&self.inertia.map(|v| 1.0 / v)) * rot.transpose();

        let kin = g.finger_kinematics(&state.wrist, &state.joints);
        let mut obj_force = Vec3::zeros();
        let mut obj_torque = Vec3::zeros();
        let mut joint_torque = vec![0.0; g.n_joints()];

        for c in self.find_contacts(state, &kin) {
            let r = c.point - com;
            let v_obj = state.object_twist.linear + state.object_twist.angular.cross(&r);
            // Hand point velocity and the joint lever arms along a direction.
            let (v_other, levers): (Vec3, Vec<(usize, Vec3)>) = match c.hand {
                Some(HandBody::Link { finger, segment }) => {
                    let k = &kin[finger];
                    let levers = (0..=segment)
                        .map(|j| (2 * finger + j, k.axis.cross(&(c.point - k.points[j]))))
                        .collect();
                    (self.hand_point_velocity(state, k, finger, segment, &c.point), levers)
                }
                Some(HandBody::Palm) => {
                    let w = &state.wrist_twist;
                    (w.linear + w.angular.cross(&(c.point - state.wrist.translation)), Vec::new())
                }
                None => (Vec3::zeros(), Vec::new()),
            };
            let inv_mass = |u: &Vec3| {
                let ru = r.cross(u);
                let hand: f64 = levers.iter().map(|(_, l)| l.dot(u).powi(2)).sum::<f64>() / g.joint_armature;
                1.0 / obj.mass + ru.dot(&(inv_inertia * ru)) + hand
            };

            let n = c.normal;
            let rel = v_other - v_obj;
            let vn = rel.dot(&n);
            let m_n = 1.0 / inv_mass(&n);
            let c_n = 2.0 * cp.damping_ratio * (cp.stiffness * m_n).sqrt();
            let c_n = c_n / (1.0 + c_n * h / m_n);
            let f_n = (cp.stiffness * c.depth - c_n * vn).max(0.0);

            let slip = -(rel - n * vn);
            let slip_speed = slip.norm();
            let mut f_t = Vec3::zeros();
            if f_n > 0.0 && cp.friction > 0.0 {
                let dir = if slip_speed > 0.0 { slip / slip_speed } else { n };
                let m_t = 1.0 / inv_mass(&dir);
                let c_t = cp.friction * f_n / slip_speed.max(cp.friction_reg_velocity);
                let c_t = c_t / (1.0 + c_t * h / m_t);
                f_t = -slip * c_t;
            }
            let force = -n * f_n + f_t;
            let torque = r.cross(&force);
            obj_force += force;
            obj_torque += torque;
            for (j, lever) in &levers {
                joint_torque[*j] -= lever.dot(&force);
            }
            if let Some(out) = records.as_deref_mut() {
                let (t1, t2) = tangent_basis(&n);
                out.push(ContactRecord {
                    frame,
                    body_a: c.hand.map_or(BodyRef::Ground, BodyRef::Hand),
                    body_b: BodyRef::Object,
                    point: c.point,
                    normal: n,
                    normal_force: f_n,
                    tangential_force: [f_t.dot(&t1), f_t.dot(&t2)],
                    force,
                    torque,
                });
            }
        }

        // Joints: implicit PD servo toward the decoded target.
        let sp = &self.scene.servo;
        let arm = g.joint_armature;
        for j in 0..g.n_joints() {
            let (q, qd) = (state.joints[j], state.joint_velocities[j]);
            let num = arm * qd + h * (sp.kp * (target[j] - q) + joint_torque[j]);
            let mut qd_new = num / (arm + h * sp.kv + h * h * sp.kp);
            let mut q_new = q + h * qd_new;
            if q_new < g.joint_lower[j] || q_new > g.joint_upper[j] {
                q_new = q_new.clamp(g.joint_lower[j], g.joint_upper[j]);
                qd_new = 0.0;
            }
            state.joints[j] = q_new;
            state.joint_velocities[j] = qd_new;
        }

        // Object: semi-implicit Euler.
        let tw = &mut state.object_twist;
        tw.linear += (obj_force / obj.mass + self.scene.gravity) * h;
        let w_body = rot.transpose() * tw.angular;
        let gyro = rot * w_body.cross(&w_body.component_mul(&self.inertia));
        tw.angular += inv_inertia * (obj_torque - gyro) * h;
        state.object.translation += tw.linear * h;
        state.object.rotation = rotation_vector_exp(tw.angular * h).compose(&state.object.rotation);

        // Wrist: critically damped tracking of the commanded pose.
        let wn = self.scene.wrist_tracking;
        let w = &mut state.wrist_twist;
        let e_t = command.translation - state.wrist.translation;
        let e_r = rotation_vector_log(&command.rotation.compose(&state.wrist.rotation.inverse()));
        w.linear += (e_t * (wn * wn) - w.linear * (2.0 * wn)) * h;
        w.angular += (e_r * (wn * wn) - w.angular * (2.0 * wn)) * h;
        state.wrist.translation += w.linear * h;
        state.wrist.rotation = rotation_vector_exp(w.angular * h).compose(&state.wrist.rotation);

        state.time += h;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation;

    fn sim(scene: Scene) -> Simulator {
        let basis = scene.gripper.synergy_basis(4, 0).unwrap();
        Simulator::new(scene, basis).unwrap()
    }

    fn far_hand() -> HandControl {
        HandControl::new(vec![0.0; 4], Pose::from_translation(Vec3::new(0.0, 0.0, 1.0)))
    }

    fn resting(scene: &Scene, z: f64) -> SimState {
        SimState::at_rest(vec![0.0; 6], far_hand().wrist, Pose::from_translation(Vec3::new(0.0, 0.0, z + scene.object.shape.half_height())))
    }

    #[test]
    fn ballistic_drop() {
        let scene = Scene {
            ground: None,
            ..Scene::default()
        };
        let s = sim(scene);
        let mut st = resting(s.scene(), 0.0);
        let z0 = st.object.translation.z;
        for _ in 0..240 {
            s.step(&mut st, &far_hand(), 0).unwrap();
        }
        let fall = z0 - st.object.translation.z;
        assert!((fall - 4.905).abs() / 4.905 < 0.01, "fell {fall}");
    }

    #[test]
    fn free_momentum_is_conserved() {
        let scene = Scene {
            ground: None,
            gravity: Vec3::zeros(),
            ..Scene::default()
        };
        let s = sim(scene);
        let mut st = resting(s.scene(), 0.5);
        st.object_twist = Twist::new(Vec3::new(0.3, -0.1, 0.2), Vec3::new(1.0, 2.0, -0.5));
        let p0 = st.object_twist.linear * s.scene().object.mass;
        for _ in 0..240 {
            s.step(&mut st, &far_hand(), 0).unwrap();
            let p = st.object_twist.linear * s.scene().object.mass;
            assert!((p - p0).norm() < 1e-10);
        }
    }

    #[test]
    fn resting_object_settles_on_ground() {
        let s = sim(Scene::default());
        let mut st = resting(s.scene(), 0.0);
        let start = st.object.translation;
        let mut records = Vec::new();
        for _ in 0..240 {
            records = s.step(&mut st, &far_hand(), 7).unwrap();
        }
        assert!((st.object.translation - start).norm() < 1e-4);
        let m = s.scene().object.mass;
        let (f, _) = net_object_wrench(&records).unwrap();
        assert!((f.z - m * 9.81).abs() / (m * 9.81) < 0.02, "support {}", f.z);
        let depth = -(st.object.translation.z - s.scene().object.shape.half_height());
        let predicted = m * 9.81 / s.scene().contact.stiffness;
        assert!(depth <= predicted * 1.1, "depth {depth} vs {predicted}");
        assert!(records.iter().all(|r| r.frame == 7 && r.body_a == BodyRef::Ground));
    }

    #[test]
    fn tilted_drop_obeys_friction_cone() {
        let s = sim(Scene::default());
        let mut st = resting(s.scene(), 0.02);
        st.object.rotation = Rotation::from_axis_angle(Vec3::new(1.0, 1.0, 0.0), 0.4);
        st.object_twist.linear = Vec3::new(0.5, 0.0, 0.0);
        let mu = s.scene().contact.friction;
        for _ in 0..480 {
            for r in s.step(&mut st, &far_hand(), 0).unwrap() {
                assert!(r.normal_force >= 0.0);
                let ft = r.tangential_force[0].hypot(r.tangential_force[1]);
                assert!(ft <= mu * r.normal_force + 1e-9);
            }
        }
        assert!(st.object.translation.z > 0.0 && st.object.translation.z < 0.05);
    }

    #[test]
    fn rollout_matches_chained_steps() {
        let s = sim(Scene::default());
        let st = resting(s.scene(), 0.0);
        let controls = vec![far_hand(); 6];
        let ro = s.rollout(&st, &controls, 1.0 / 30.0, 3).unwrap();
        let mut chained = st.clone();
        for _ in 0..48 {
            s.step(&mut chained, &far_hand(), 0).unwrap();
        }
        assert_eq!(ro.states[5], chained);
        assert_eq!(ro.contacts[5][0].frame, 8);
        assert!(s.rollout(&st, &[], 1.0 / 30.0, 0).unwrap().states.is_empty());
        assert!(s.rollout(&st, &controls, 0.01, 0).is_err());
    }

    #[test]
    fn rollout_splits_at_snapshots() {
        let s = sim(Scene::default());
        let st = resting(s.scene(), 0.03);
        let mut controls = vec![far_hand(); 10];
        for (i, c) in controls.iter_mut().enumerate() {
            c.coeffs[0] = 0.1 * i as f64;
        }
        let whole = s.rollout(&st, &controls, 1.0 / 30.0, 0).unwrap();
        let a = s.rollout(&st, &controls[..4], 1.0 / 30.0, 0).unwrap();
        let b = s.rollout(&a.states[3], &controls[4..], 1.0 / 30.0, 4).unwrap();
        assert_eq!(&whole.states[4..], &b.states[..]);
        assert_eq!(&whole.contacts[4..], &b.contacts[..]);
    }

    #[test]
    fn wrist_tracks_command() {
        let s = sim(Scene::default());
        let mut st = resting(s.scene(), 0.0);
        let target = Pose::new(Rotation::from_axis_angle(Vec3::z(), 0.5), Vec3::new(0.1, 0.0, 0.8));
        let c = HandControl::new(vec![0.0; 4], target);
        for _ in 0..240 {
            s.step(&mut st, &c, 0).unwrap();
        }
        assert!((st.wrist.translation - target.translation).norm() < 1e-6);
        assert!(crate::geometry::geodesic_distance(&st.wrist.rotation, &target.rotation) < 1e-6);
    }

    #[test]
    fn servo_reaches_target_joints() {
        let s = sim(Scene::default());
        let mut st = resting(s.scene(), 0.0);
        let c = HandControl::new(vec![0.5, 0.0, 0.0, 0.0], far_hand().wrist);
        for _ in 0..480 {
            s.step(&mut st, &c, 0).unwrap();
        }
        let target = s.basis().decode_coeffs(&c.coeffs).unwrap();
        for (q, t) in st.joints.iter().zip(&target) {
            assert!((q - t).abs() < 1e-3, "{q} vs {t}");
        }
    }

    #[test]
    fn divergence_is_reported() {
        let s = sim(Scene::default());
        let mut st = resting(s.scene(), 0.0);
        st.object_twist.linear.x = 1e7;
        assert!(matches!(s.step(&mut st, &far_hand(), 12), Err(Error::SimDiverged { frame: 12 })));
    }

    #[test]
    fn body_twists_of_still_hand_are_zero() {
        let s = sim(Scene::default());
        let st = resting(s.scene(), 0.0);
        let tw = s.body_twists(&st);
        assert_eq!(tw.len(), 7);
        assert!(tw.iter().all(|t| t.linear.norm() == 0.0 && t.angular.norm() == 0.0));
    }
}
