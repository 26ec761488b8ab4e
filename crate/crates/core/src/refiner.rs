//! Sliding-window refinement of a keyframe track.
//!
//! Each window spans four consecutive keyframes. The first two and the last
//! are held fixed while CMA-ES searches over the third; the window then
//! slides forward by one keyframe. Dense controls inside a window come from
//! a spline over that window's four keyframes only, so frames finalized by
//! earlier windows never change.

use std::time::Instant;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cmaes::{minimize, params_with_population, Bounds, Budget, CmaState, TraceRecord};
use crate::error::{Error, Result};
use crate::geometry::{Rotation, Vec3};
use crate::objective::{evaluate_controls, LossWeights, ReferenceWindow, DEFAULT_CONTACT_THRESHOLD};
use crate::scenario::{Scenario, Trajectory};
use crate::sim::{ContactRecord, Rollout, SimState, Simulator};
use crate::spline::{resample_from_dense, KeyframeTrack, DEFAULT_KEYFRAME_INTERVAL};
use crate::synergy::{HandControl, DEFAULT_COEFF_LIMIT};

/// Four consecutive keyframes, by position in the track, and which of them
/// is optimized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub keys: [usize; 4],
    /// Position within `keys` of the free keyframe: 2 normally, 3 for the
    /// tail window.
    pub free: usize,
}

impl Window {
    pub fn free_key(&self) -> usize {
        self.keys[self.free]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub windows: Vec<Window>,
}

impl WindowPlan {
    /// Appends a window over the last four keyframes that frees the final one.
    pub fn with_tail(mut self) -> WindowPlan {
        if let Some(last) = self.windows.last().copied() {
            self.windows.push(Window { keys: last.keys, free: 3 });
        }
        self
    }
}

/// Windows `(0,1,2,3), (1,2,3,4), ...` until `k4` is the final keyframe.
pub fn plan_windows(track: &KeyframeTrack) -> Result<WindowPlan> {
    let k = track.len();
    if k < 4 {
        return Err(Error::TooFewKeyframes(k));
    }
    Ok(WindowPlan {
        windows: (0..k - 3).map(|i| Window { keys: [i, i + 1, i + 2, i + 3], free: 2 }).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinementConfig {
    /// Frames between keyframes.
    pub keyframe_interval: usize,
    /// CMA-ES generations per window.
    pub generations: usize,
    /// CMA-ES population size.
    pub population: usize,
    pub sigma_coeffs: f64,
    /// Radians.
    pub sigma_rotation: f64,
    /// Meters.
    pub sigma_translation: f64,
    /// Leading frames replayed with the reference controls and not refined.
    pub skip_initial_frames: usize,
    pub seed: u64,
    pub contact_threshold: f64,
    pub coeff_limit: f64,
    /// Also optimize the final keyframe in an extra window.
    pub refine_last_keyframe: bool,
    /// Carry each accepted keyframe offset to all later keyframes.
    pub propagate_offsets: bool,
    #[serde(skip)]
    pub weights: LossWeights,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        RefinementConfig {
            keyframe_interval: DEFAULT_KEYFRAME_INTERVAL,
            generations: 40,
            population: 40,
            sigma_coeffs: 0.05,
            sigma_rotation: 0.03,
            sigma_translation: 0.003,
            skip_initial_frames: 10,
            seed: 0,
            contact_threshold: DEFAULT_CONTACT_THRESHOLD,
            coeff_limit: DEFAULT_COEFF_LIMIT,
            refine_last_keyframe: true,
            propagate_offsets: true,
            weights: LossWeights::default(),
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<()> {
        if self.keyframe_interval == 0 {
            return Err(Error::InvalidValue("keyframe_interval must be positive".into()));
        }
        if self.population < 2 {
            return Err(Error::InvalidValue("population must be at least 2".into()));
        }
        for (name, v) in [
            ("sigma_coeffs", self.sigma_coeffs),
            ("sigma_rotation", self.sigma_rotation),
            ("sigma_translation", self.sigma_translation),
            ("contact_threshold", self.contact_threshold),
            ("coeff_limit", self.coeff_limit),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidValue(format!("{name} must be positive, got {v}")));
            }
        }
        self.weights.validate()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub index: usize,
    /// Absolute frames of the four keyframes.
    pub keyframes: [usize; 4],
    /// Absolute frame of the optimized keyframe.
    pub free_frame: usize,
    pub incumbent_fitness: f64,
    pub best_fitness: f64,
    pub evaluations: usize,
    pub generations: usize,
    /// Candidates whose rollout diverged or scored NaN.
    pub diverged: usize,
    pub improved: bool,
    /// Zero budget: nothing was searched.
    pub no_op: bool,
    /// Every candidate diverged; the keyframe was left unchanged.
    pub all_diverged: bool,
    pub wall_seconds: f64,
    #[serde(skip)]
    pub trace: Vec<TraceRecord>,
}

/// Result of refining a whole scenario.
#[derive(Clone, Debug)]
pub struct Refinement {
    pub track: KeyframeTrack,
    /// Refined frames from `skip_initial_frames` on.
    pub trajectory: Trajectory,
    /// State before the first refined frame.
    pub initial: SimState,
    pub reports: Vec<WindowReport>,
    /// Contact records of the refined frames, frame-sorted.
    pub contacts: Vec<ContactRecord>,
}

impl Refinement {
    /// The input scenario with its trajectory replaced by the refined one.
    pub fn scenario(&self, input: &Scenario) -> Scenario {
        Scenario {
            initial: self.initial.clone(),
            trajectory: self.trajectory.clone(),
            ..input.clone()
        }
    }
}

/// Shared context for refining the windows of one scenario.
pub struct Refiner<'a> {
    sim: Simulator,
    reference: &'a Trajectory,
    config: &'a RefinementConfig,
    pool: Option<&'a rayon::ThreadPool>,
}

fn window_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64 + 1).wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

impl<'a> Refiner<'a> {
    pub fn new(scenario: &'a Scenario, config: &'a RefinementConfig, pool: Option<&'a rayon::ThreadPool>) -> Result<Self> {
        config.validate()?;
        scenario.validate()?;
        Ok(Refiner {
            sim: scenario.simulator()?,
            reference: &scenario.trajectory,
            config,
            pool,
        })
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    /// Control obtained from `incumbent` by the scaled decision vector `x`.
    pub fn decode(&self, incumbent: &HandControl, x: &DVector<f64>) -> HandControl {
        let n = incumbent.coeffs.len();
        let c = self.config;
        let coeffs = incumbent.coeffs.iter().enumerate().map(|(i, v)| v + c.sigma_coeffs * x[i]).collect();
        let spin = Vec3::new(x[n], x[n + 1], x[n + 2]) * c.sigma_rotation;
        let shift = Vec3::new(x[n + 3], x[n + 4], x[n + 5]) * c.sigma_translation;
        let mut wrist = incumbent.wrist;
        wrist.rotation = Rotation::exp(&spin).compose(&wrist.rotation);
        wrist.translation += shift;
        HandControl::new(coeffs, wrist)
    }

    fn bounds(&self, incumbent: &HandControl) -> Bounds {
        let n = incumbent.coeffs.len();
        let (l, s) = (self.config.coeff_limit, self.config.sigma_coeffs);
        let lower = DVector::from_fn(n + 6, |i, _| if i < n { ((-l - incumbent.coeffs[i]) / s).min(0.0) } else { -1e6 });
        let upper = DVector::from_fn(n + 6, |i, _| if i < n { ((l - incumbent.coeffs[i]) / s).max(0.0) } else { 1e6 });
        Bounds { lower, upper, penalty: 1.0 }
    }

    /// Keyframes moved by the decision vector `x`: the free one, and with
    /// offset propagation every later one too.
    fn moved_keys(&self, window: &Window, end: usize) -> std::ops::Range<usize> {
        let from = window.free_key();
        if self.config.propagate_offsets {
            from..end
        } else {
            from..from + 1
        }
    }

    fn apply(&self, track: &KeyframeTrack, window: &Window, x: &DVector<f64>) -> KeyframeTrack {
        let mut out = track.clone();
        for k in self.moved_keys(window, track.len()) {
            out.controls[k] = self.decode(&track.controls[k], x);
        }
        out
    }

    /// Dense controls over the window's frames with the decision vector `x` applied.
    fn window_controls(&self, track: &KeyframeTrack, window: &Window, x: &DVector<f64>) -> Result<Vec<HandControl>> {
        let mut local = track.sub_track(window.keys[0]..window.keys[3] + 1)?;
        for k in self.moved_keys(window, window.keys[3] + 1) {
            let j = k - window.keys[0];
            local.controls[j] = self.decode(&local.controls[j], x);
        }
        local.dense()
    }

    fn fitness(
        &self,
        controls: &[HandControl],
        previous: Option<&HandControl>,
        reference: &ReferenceWindow,
        snapshot: &SimState,
    ) -> Result<f64> {
        let w = &self.config.weights;
        Ok(match evaluate_controls(&self.sim, controls, previous, reference, snapshot, w)? {
            Some((loss, _)) => {
                let total = loss.total(w);
                if total.is_nan() {
                    f64::INFINITY
                } else {
                    total
                }
            }
            None => f64::INFINITY,
        })
    }

    /// Optimizes the free keyframe of `window`. `snapshot` is the state
    /// before the window's first frame and `previous` the control applied
    /// just before it.
    pub fn refine_window(
        &self,
        index: usize,
        window: &Window,
        track: &KeyframeTrack,
        snapshot: &SimState,
        previous: Option<&HandControl>,
    ) -> Result<(KeyframeTrack, WindowReport)> {
        let started = Instant::now();
        let frames = window.keys.map(|k| track.indices[k]);
        let reference = ReferenceWindow::new(
            self.reference,
            &self.sim.scene().gripper,
            &self.sim.scene().object.shape,
            frames[0],
            frames[3] - frames[0] + 1,
            self.config.contact_threshold,
        )?;
        let incumbent = track.controls[window.free_key()].clone();
        let dim = incumbent.coeffs.len() + 6;
        let zero = DVector::zeros(dim);
        let incumbent_fitness = self.fitness(&self.window_controls(track, window, &zero)?, previous, &reference, snapshot)?;
        let mut report = WindowReport {
            index,
            keyframes: frames,
            free_frame: frames[window.free],
            incumbent_fitness,
            best_fitness: incumbent_fitness,
            evaluations: 1,
            ..Default::default()
        };

        let params = params_with_population(dim, self.config.population);
        let lambda = params.lambda;
        if self.config.generations == 0 {
            report.no_op = true;
            report.wall_seconds = started.elapsed().as_secs_f64();
            return Ok((track.clone(), report));
        }

        let state = CmaState::with_params(vec![0.0; dim], 1.0, params)?.with_bounds(self.bounds(&incumbent))?;
        let objective = |x: &DVector<f64>| {
            self.window_controls(track, window, x)
                .and_then(|c| self.fitness(&c, previous, &reference, snapshot))
                .unwrap_or(f64::INFINITY)
        };
        let budget = Budget::evaluations(self.config.generations * lambda);
        let mut rng = ChaCha8Rng::seed_from_u64(window_seed(self.config.seed, index));
        let (outcome, _) = minimize(state, objective, &budget, std::slice::from_ref(&zero), &mut rng, self.pool)?;
        report.evaluations += outcome.evaluations;
        report.generations = outcome.generations;
        report.diverged = outcome.non_finite;
        report.all_diverged = outcome.non_finite == outcome.evaluations;
        report.trace = outcome.trace;

        let mut out = track.clone();
        if outcome.best_fitness.is_finite() {
            // The penalized best can hide a cheaper clamped point; score what
            // would actually be written.
            let best = objective(&outcome.best_x);
            report.evaluations += 1;
            if best < incumbent_fitness {
                out = self.apply(track, window, &outcome.best_x);
                report.best_fitness = best;
                report.improved = true;
            }
        }
        report.wall_seconds = started.elapsed().as_secs_f64();
        Ok((out, report))
    }

    /// Refines every window of the scenario in order. `progress` sees each
    /// report as soon as its window is done.
    pub fn refine_sequence(&self, initial: &SimState, mut progress: impl FnMut(&WindowReport)) -> Result<Refinement> {
        let reference = self.reference;
        let skip = self.config.skip_initial_frames;
        if skip >= reference.len() {
            return Err(Error::TooFewKeyframes(0));
        }
        let controls = reference.controls();
        let dt = reference.frame_dt();
        let start = reference.start_frame;
        let lead = self.sim.rollout(initial, &controls[..skip], dt, start)?;
        let mut snapshot = lead.states.last().cloned().unwrap_or_else(|| initial.clone());
        let initial_refined = snapshot.clone();
        let mut previous = skip.checked_sub(1).map(|i| controls[i].clone());

        let mut track = resample_from_dense(&controls[skip..], self.config.keyframe_interval)?;
        for i in &mut track.indices {
            *i += start + skip;
        }
        let mut plan = plan_windows(&track)?;
        if self.config.refine_last_keyframe {
            plan = plan.with_tail();
        }

        let mut dense = Vec::with_capacity(reference.len() - skip);
        let mut rollout = Rollout::default();
        let mut reports = Vec::with_capacity(plan.windows.len());
        for (index, window) in plan.windows.iter().enumerate() {
            let (updated, report) = self.refine_window(index, window, &track, &snapshot, previous.as_ref())?;
            track = updated;
            progress(&report);
            reports.push(report);

            // Finalize frames up to the next window's start, or to the end.
            let first = track.indices[window.keys[0]];
            let end = match plan.windows.get(index + 1) {
                Some(next) => track.indices[next.keys[0]],
                None => track.indices[window.keys[3]] + 1,
            };
            if end > first {
                let segment = self.window_controls(&track, window, &DVector::zeros(track.controls[0].coeffs.len() + 6))?;
                let segment = &segment[..end - first];
                let part = self.sim.rollout(&snapshot, segment, dt, first)?;
                snapshot = part.states.last().cloned().expect("non-empty segment");
                previous = segment.last().cloned();
                dense.extend_from_slice(segment);
                rollout.states.extend(part.states);
                rollout.contacts.extend(part.contacts);
            }
        }

        let trajectory = Trajectory::from_rollout(&self.sim, &rollout, &dense, reference.frame_rate, start + skip);
        Ok(Refinement {
            track,
            trajectory,
            initial: initial_refined,
            reports,
            contacts: rollout.contacts.into_iter().flatten().collect(),
        })
    }
}

/// Refines `scenario` with `config`; candidate evaluations run on `pool` if given.
pub fn refine_sequence(
    scenario: &Scenario,
    config: &RefinementConfig,
    pool: Option<&rayon::ThreadPool>,
    progress: impl FnMut(&WindowReport),
) -> Result<Refinement> {
    Refiner::new(scenario, config, pool)?.refine_sequence(&scenario.initial, progress)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;

    fn track(k: usize) -> KeyframeTrack {
        let c = HandControl::new(vec![0.0], Pose::identity());
        KeyframeTrack::new((0..k).map(|i| 5 * i).collect(), vec![c; k], 5).unwrap()
    }

    #[test]
    fn window_plan_examples() {
        let p = plan_windows(&track(4)).unwrap();
        assert_eq!(p.windows, vec![Window { keys: [0, 1, 2, 3], free: 2 }]);
        assert_eq!(plan_windows(&track(13)).unwrap().windows.len(), 10);
        assert!(matches!(plan_windows(&track(3)), Err(Error::TooFewKeyframes(3))));
    }

    #[test]
    fn windows_advance_by_one_and_cover_interior_keyframes_once() {
        for k in 4..20 {
            let p = plan_windows(&track(k)).unwrap();
            for w in p.windows.windows(2) {
                assert_eq!(w[1].keys[0], w[0].keys[0] + 1);
            }
            let free: Vec<usize> = p.windows.iter().map(Window::free_key).collect();
            assert_eq!(free, (2..k - 1).collect::<Vec<_>>());
            let tail = p.clone().with_tail();
            assert_eq!(tail.windows.last().unwrap().free_key(), k - 1);
            assert_eq!(tail.windows.len(), p.windows.len() + 1);
        }
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(RefinementConfig::default().validate().is_ok());
        let bad = [
            RefinementConfig { keyframe_interval: 0, ..Default::default() },
            RefinementConfig { sigma_coeffs: 0.0, ..Default::default() },
            RefinementConfig { population: 1, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }
}
