//! Controlled injection of vision-style flaws into a recorded demonstration.
//!
//! The object stream is never made consistent with the corrupted hand: the
//! corrupted scenario looks plausible frame by frame but fails on replay.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Rotation, Vec3};
use crate::scenario::Scenario;
use crate::synergy::HandControl;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    FingertipGap,
    Interpenetration,
    Jitter,
    PoseDrift,
}

impl CorruptionKind {
    fn name(self) -> &'static str {
        match self {
            CorruptionKind::FingertipGap => "fingertip_gap",
            CorruptionKind::Interpenetration => "interpenetration",
            CorruptionKind::Jitter => "jitter",
            CorruptionKind::PoseDrift => "pose_drift",
        }
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            CorruptionKind::FingertipGap,
            CorruptionKind::Interpenetration,
            CorruptionKind::Jitter,
            CorruptionKind::PoseDrift,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| Error::InvalidValue(format!("unknown corruption '{s}'")))
    }
}

/// `kind:magnitude[:from-to]`; the span is inclusive and defaults to every frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    /// Meters, or radians for rotational noise.
    pub magnitude: f64,
    #[serde(default)]
    pub span: Option<(usize, usize)>,
}

impl fmt::Display for CorruptionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.name(), self.magnitude)?;
        if let Some((a, b)) = self.span {
            write!(f, ":{a}-{b}")?;
        }
        Ok(())
    }
}

impl FromStr for CorruptionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidValue(format!("corruption '{s}' is not kind:magnitude[:from-to]"));
        let mut parts = s.split(':');
        let kind = parts.next().ok_or_else(bad)?.parse()?;
        let magnitude: f64 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let span = match parts.next() {
            None => None,
            Some(r) => {
                let (a, b) = r.split_once('-').ok_or_else(bad)?;
                Some((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
            }
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        let spec = CorruptionSpec { kind, magnitude, span };
        spec.validate()?;
        Ok(spec)
    }
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.magnitude.is_finite() && self.magnitude > 0.0) {
            return Err(Error::InvalidValue(format!("corruption magnitude {} must be positive", self.magnitude)));
        }
        if let Some((a, b)) = self.span {
            if a > b {
                return Err(Error::InvalidValue(format!("corruption span {a}-{b} is reversed")));
            }
        }
        Ok(())
    }
}

/// Mean fingertip displacement caused by adding `delta` to the curl coefficient.
fn tip_shift(s: &Scenario, control: &HandControl, delta: f64) -> Result<f64> {
    let g = &s.scene.gripper;
    let before = g.keypoints(&control.wrist, &s.basis.decode_coeffs(&control.coeffs)?);
    let mut moved = control.coeffs.clone();
    moved[0] += delta;
    let after = g.keypoints(&control.wrist, &s.basis.decode_coeffs(&moved)?);
    let tips = g.fingertip_keypoints();
    Ok(tips.iter().map(|&k| (after[k] - before[k]).norm()).sum::<f64>() / tips.len() as f64)
}

/// Curl offset that moves the fingertips by `distance` at the frame where
/// they are closest to the object. `sign` selects closing (+) or opening (-).
fn curl_offset(s: &Scenario, frames: std::ops::RangeInclusive<usize>, distance: f64, sign: f64) -> Result<f64> {
    let g = &s.scene.gripper;
    let shape = &s.scene.object.shape;
    let tips = g.fingertip_keypoints();
    let clearance = |i: usize| {
        let f = &s.trajectory.frames[i];
        tips.iter()
            .map(|&k| shape.signed_distance(&f.object.inverse_transform_point(&f.keypoints[k])))
            .fold(f64::INFINITY, f64::min)
    };
    let frame = frames
        .min_by(|a, b| clearance(*a).total_cmp(&clearance(*b)))
        .ok_or(Error::EmptySequence)?;
    let control = &s.trajectory.frames[frame].control;
    let (mut lo, mut hi) = (0.0, 3.0);
    if tip_shift(s, control, sign * hi)? < distance {
        return Ok(sign * hi);
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if tip_shift(s, control, sign * mid)? < distance {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(sign * 0.5 * (lo + hi))
}

fn stream_seed(seed: u64, kind: CorruptionKind) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (kind as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Applies one corruption to the recorded trajectory.
pub fn corrupt(scenario: &Scenario, spec: &CorruptionSpec) -> Result<Scenario> {
    spec.validate()?;
    let traj = &scenario.trajectory;
    if traj.is_empty() {
        return Err(Error::EmptySequence);
    }
    let first = traj.start_frame;
    let last = first + traj.len() - 1;
    let (from, to) = spec.span.unwrap_or((first, last));
    if from < first || to > last {
        return Err(Error::SpanOutOfRange { from, to, len: last + 1 });
    }
    let local = (from - first)..=(to - first);
    let mut out = scenario.clone();
    let g = &scenario.scene.gripper;
    let m = spec.magnitude;

    match spec.kind {
        CorruptionKind::FingertipGap | CorruptionKind::Interpenetration => {
            let sign = if spec.kind == CorruptionKind::FingertipGap { -1.0 } else { 1.0 };
            let delta = curl_offset(scenario, local.clone(), m, sign)?;
            for i in local {
                let f = &mut out.trajectory.frames[i];
                let before = g.keypoints(&f.control.wrist, &scenario.basis.decode_coeffs(&f.control.coeffs)?);
                f.control.coeffs[0] += delta;
                let after = g.keypoints(&f.control.wrist, &scenario.basis.decode_coeffs(&f.control.coeffs)?);
                for ((k, a), b) in f.keypoints.iter_mut().zip(&after).zip(&before) {
                    *k += a - b;
                }
            }
        }
        CorruptionKind::Jitter => {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(scenario.seed, spec.kind));
            let normal = Normal::new(0.0, m).map_err(|e| Error::InvalidValue(e.to_string()))?;
            let noise3 = |rng: &mut ChaCha8Rng| Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
            for i in local {
                let f = &mut out.trajectory.frames[i];
                for c in &mut f.control.coeffs {
                    *c += normal.sample(&mut rng);
                }
                f.control.wrist.translation += noise3(&mut rng);
                let spin = noise3(&mut rng);
                f.control.wrist.rotation = Rotation::exp(&spin).compose(&f.control.wrist.rotation);
                for k in &mut f.keypoints {
                    *k += noise3(&mut rng);
                }
            }
        }
        CorruptionKind::PoseDrift => {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(scenario.seed, spec.kind));
            let angle = Uniform::new(0.0, std::f64::consts::TAU)
                .map_err(|e| Error::InvalidValue(e.to_string()))?
                .sample(&mut rng);
            let dir = Vec3::new(angle.cos(), angle.sin(), 0.0);
            let span = (to - from).max(1) as f64;
            for i in local {
                let u = ((i + first - from) as f64 / span).clamp(0.0, 1.0);
                let ramp = u * u * (3.0 - 2.0 * u);
                let ramp = if to == from { 1.0 } else { ramp };
                out.trajectory.frames[i].object.translation += dir * (m * ramp);
            }
        }
    }
    out.corruptions.push(spec.clone());
    Ok(out)
}
