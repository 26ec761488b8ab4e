//! Shared fixtures for the criterion benchmarks.

use gripforge_core::scenario::{synthesize_demo, Scenario, Task};
use gripforge_core::sim::{SimState, Simulator};
use gripforge_core::HandControl;

/// A recorded grasp-and-lift together with the state and control at the
/// start of its hold phase, where every finger touches the object.
pub struct HoldFixture {
    pub scenario: Scenario,
    pub sim: Simulator,
    pub state: SimState,
    pub control: HandControl,
}

pub const HOLD_FRAME: usize = 50;

pub fn hold_fixture(seed: u64) -> HoldFixture {
    let scenario = synthesize_demo(Task::GraspLift, seed).expect("scripted demo");
    let sim = scenario.simulator().expect("valid scene");
    let controls = scenario.trajectory.controls();
    let rollout = sim
        .rollout(&scenario.initial, &controls[..HOLD_FRAME], scenario.trajectory.frame_dt(), 0)
        .expect("replay");
    HoldFixture {
        state: rollout.states.last().cloned().expect("frames"),
        control: controls[HOLD_FRAME].clone(),
        scenario,
        sim,
    }
}

pub fn sphere(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn rosenbrock(x: &[f64]) -> f64 {
    x.windows(2)
        .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
        .sum()
}
