//! Scripted demonstrations recorded from the simulator.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{geodesic_distance, Pose, Rotation, Vec3};
use crate::scenario::{Scenario, Trajectory, FORMAT_VERSION};
use crate::sim::{Rollout, Scene, SimState, Simulator};
use crate::synergy::{HandControl, SynergyBasis};

pub const FRAME_RATE: f64 = 30.0;
pub const DEMO_FRAMES: usize = 65;
const N_COEFFS: usize = 4;
const MAX_RETRIES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    GraspLift,
    PressStabilize,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::GraspLift => "grasp_lift",
            Task::PressStabilize => "press_stabilize",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Task> {
        match s {
            "grasp_lift" => Ok(Task::GraspLift),
            "press_stabilize" => Ok(Task::PressStabilize),
            _ => Err(Error::InvalidValue(format!("unknown task '{s}'"))),
        }
    }
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Constants of one scripted attempt.
#[derive(Clone, Debug)]
struct Script {
    object_xy: (f64, f64),
    yaw: f64,
    wrist_yaw: f64,
    /// Commanded fingertip overlap with the surface, meters.
    overshoot: f64,
    approach_height: f64,
    close_start: f64,
    close_frames: f64,
    lift_start: f64,
    lift_frames: f64,
    lift_height: f64,
}

impl Script {
    fn sample(rng: &mut ChaCha8Rng, attempt: usize) -> Script {
        let yaw = rng.random_range(-0.4..0.4);
        Script {
            object_xy: (rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01)),
            yaw,
            wrist_yaw: yaw + rng.random_range(-0.03..0.03),
            overshoot: rng.random_range(0.0008..0.0015) + 0.0005 * attempt as f64,
            approach_height: rng.random_range(0.05..0.07),
            close_start: 15.0 + rng.random_range(-1.0..1.0f64).round(),
            close_frames: 10.0,
            lift_start: 31.0 + rng.random_range(-1.0..1.0f64).round(),
            lift_frames: 16.0,
            lift_height: 0.10,
        }
    }
}

/// Smallest clearance between a fingertip sphere and the object surface.
fn tip_clearance(scene: &Scene, basis: &SynergyBasis, object: &Pose, wrist: &Pose, coeffs: &[f64]) -> Result<f64> {
    let q = basis.decode_coeffs(coeffs)?;
    let g = &scene.gripper;
    Ok(g.finger_kinematics(wrist, &q)
        .iter()
        .map(|k| scene.object.shape.signed_distance(&object.inverse_transform_point(&k.points[2])) - g.tip_radius)
        .fold(f64::INFINITY, f64::min))
}

/// Solves `f(x) = target` for `f` decreasing on `[lo, hi]`.
fn bisect(mut lo: f64, mut hi: f64, target: f64, f: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if f(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn resting_object(scene: &Scene, xy: (f64, f64), yaw: f64) -> Pose {
    let settle = scene.object.mass * scene.gravity.norm() / (4.0 * scene.contact.stiffness);
    let z = scene.ground.unwrap_or(0.0) + scene.object.shape.half_height() - settle;
    Pose::new(Rotation::from_axis_angle(Vec3::z(), yaw), Vec3::new(xy.0, xy.1, z))
}

fn curl(basis: &SynergyBasis, amount: f64) -> Vec<f64> {
    let mut c = vec![0.0; basis.n_coeffs()];
    c[0] = amount;
    c
}

fn grasp_lift_controls(scene: &Scene, basis: &SynergyBasis, s: &Script, object: &Pose) -> Result<Vec<HandControl>> {
    let rot = Rotation::from_axis_angle(Vec3::z(), s.wrist_yaw);
    let grasp = Pose::new(rot, object.translation + Vec3::new(0.0, 0.0, 0.085));
    let closed = bisect(0.0, 1.5, -s.overshoot, |a| tip_clearance(scene, basis, object, &grasp, &curl(basis, a)))?;
    Ok((0..DEMO_FRAMES)
        .map(|i| {
            let t = i as f64;
            let z = s.approach_height * (1.0 - smoothstep(t / (s.close_start - 2.0)))
                + s.lift_height * smoothstep((t - s.lift_start) / s.lift_frames);
            let amount = closed * smoothstep((t - s.close_start) / s.close_frames);
            let wrist = Pose::new(rot, grasp.translation + Vec3::new(0.0, 0.0, z));
            HandControl::new(curl(basis, amount), wrist)
        })
        .collect())
}

fn press_controls(scene: &Scene, basis: &SynergyBasis, s: &Script, object: &Pose) -> Result<Vec<HandControl>> {
    let rot = Rotation::from_axis_angle(Vec3::z(), s.wrist_yaw);
    let flex = 0.55;
    let above = |h: f64| Pose::new(rot, object.translation + Vec3::new(0.0, 0.0, h));
    let press = bisect(0.0, 0.3, -s.overshoot, |h| {
        tip_clearance(scene, basis, object, &above(0.3 - h), &curl(basis, flex))
    })?;
    let press_height = 0.3 - press;
    Ok((0..DEMO_FRAMES)
        .map(|i| {
            let t = i as f64;
            let amount = flex * smoothstep(t / s.close_start);
            let descend = smoothstep((t - s.close_start) / s.lift_frames);
            let h = press_height + s.approach_height * (1.0 - descend);
            HandControl::new(curl(basis, amount), above(h))
        })
        .collect())
}

/// Checks a scripted rollout; `Err` carries the reason it is unusable.
fn check(task: Task, initial: &SimState, ro: &Rollout, s: &Script) -> std::result::Result<(), String> {
    let last = ro.states.last().ok_or("empty rollout")?;
    let start = &initial.object;
    match task {
        Task::GraspLift => {
            let rise = last.object.translation.z - start.translation.z;
            if rise < 0.09 {
                return Err(format!("object rose {rise:.4} m"));
            }
            let hold = (s.lift_start + s.lift_frames) as usize + 2;
            let rel = |st: &SimState| st.wrist.inverse().compose(&st.object);
            let r0 = rel(&ro.states[hold]);
            for st in &ro.states[hold..] {
                let r = rel(st);
                let slip = (r.translation - r0.translation).norm();
                if slip > 0.003 || geodesic_distance(&r.rotation, &r0.rotation) > 0.1 {
                    return Err(format!("object slipped {slip:.4} m during hold"));
                }
            }
            if ro.contacts.last().is_none_or(|c| c.iter().all(|r| r.body_a == crate::sim::BodyRef::Ground)) {
                return Err("no hand contact at the end".into());
            }
        }
        Task::PressStabilize => {
            let moved = (last.object.translation - start.translation).norm();
            if moved > 0.005 || geodesic_distance(&last.object.rotation, &start.rotation) > 0.05 {
                return Err(format!("object moved {moved:.4} m while pressed"));
            }
            let hand_contacts = ro.contacts.last().map_or(0, |c| {
                c.iter().filter(|r| r.body_a != crate::sim::BodyRef::Ground).count()
            });
            if hand_contacts == 0 {
                return Err("hand never touches the object".into());
            }
        }
    }
    Ok(())
}

/// Records a physically valid demonstration of `task`, deterministic in `seed`.
pub fn synthesize_demo(task: Task, seed: u64) -> Result<Scenario> {
    let scene = Scene::default();
    let basis = scene.gripper.synergy_basis(N_COEFFS, seed)?;
    let sim = Simulator::new(scene.clone(), basis.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reason = String::new();
    for attempt in 0..=MAX_RETRIES {
        let script = Script::sample(&mut rng, attempt);
        let object = resting_object(&scene, script.object_xy, script.yaw);
        let controls = match task {
            Task::GraspLift => grasp_lift_controls(&scene, &basis, &script, &object)?,
            Task::PressStabilize => press_controls(&scene, &basis, &script, &object)?,
        };
        let joints = basis.decode_coeffs(&controls[0].coeffs)?;
        let initial = SimState::at_rest(joints, controls[0].wrist, object);
        let ro = match sim.rollout(&initial, &controls, 1.0 / FRAME_RATE, 0) {
            Ok(ro) => ro,
            Err(e) => {
                reason = e.to_string();
                continue;
            }
        };
        if let Err(r) = check(task, &initial, &ro, &script) {
            reason = r;
            continue;
        }
        return Ok(Scenario {
            format_version: FORMAT_VERSION,
            name: format!("{task}_{seed}"),
            seed,
            corruptions: Vec::new(),
            trajectory: Trajectory::from_rollout(&sim, &ro, &controls, FRAME_RATE, 0),
            scene,
            basis,
            initial,
        });
    }
    Err(Error::TaskScriptFailed {
        attempts: MAX_RETRIES + 1,
        reason,
    })
}
