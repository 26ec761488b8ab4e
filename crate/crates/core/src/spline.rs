//! Cubic-spline interpolation of hand controls over sparse keyframes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{geodesic_distance, Pose, Rotation, Vec3};
use crate::synergy::HandControl;

pub const DEFAULT_KEYFRAME_INTERVAL: usize = 5;

/// Keyframes further than this from the chart anchor trigger re-anchoring.
const CHART_LIMIT: f64 = 0.9 * std::f64::consts::PI;

/// Scalar cubic spline with prescribed second derivatives at both ends.
#[derive(Clone, Debug)]
pub struct CubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    m: Vec<f64>,
}

impl CubicSpline {
    /// Natural spline: zero curvature at both ends.
    pub fn natural(xs: &[f64], ys: &[f64]) -> Result<Self> {
        Self::with_end_curvature(xs, ys, 0.0, 0.0)
    }

    pub fn with_end_curvature(xs: &[f64], ys: &[f64], left: f64, right: f64) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::EmptySequence);
        }
        if xs.len() != ys.len() {
            return Err(Error::LengthMismatch(format!(
                "{} knots, {} values",
                xs.len(),
                ys.len()
            )));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidValue("spline knots must be strictly increasing".into()));
        }
        let n = xs.len();
        let mut m = vec![0.0; n];
        if n >= 2 {
            m[0] = left;
            m[n - 1] = right;
        }
        if n >= 3 {
            // Tridiagonal system for interior second derivatives (Thomas algorithm).
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut upper = vec![0.0; k];
            let mut lower = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for j in 0..k {
                let i = j + 1;
                let h0 = xs[i] - xs[i - 1];
                let h1 = xs[i + 1] - xs[i];
                lower[j] = h0;
                diag[j] = 2.0 * (h0 + h1);
                upper[j] = h1;
                rhs[j] = 6.0 * ((ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0);
            }
            rhs[0] -= lower[0] * left;
            rhs[k - 1] -= upper[k - 1] * right;
            for j in 1..k {
                let w = lower[j] / diag[j - 1];
                diag[j] -= w * upper[j - 1];
                rhs[j] -= w * rhs[j - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for j in (0..k - 1).rev() {
                m[j + 1] = (rhs[j] - upper[j] * m[j + 2]) / diag[j];
            }
        }
        Ok(CubicSpline {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            m,
        })
    }

    /// Evaluates the spline; `x` is clamped into the knot range.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if n == 1 {
            return self.ys[0];
        }
        let x = x.clamp(self.xs[0], self.xs[n - 1]);
        let i = match self.xs.partition_point(|v| *v <= x) {
            0 => 0,
            p => (p - 1).min(n - 2),
        };
        let h = self.xs[i + 1] - self.xs[i];
        let a = (self.xs[i + 1] - x) / h;
        let b = (x - self.xs[i]) / h;
        a * self.ys[i]
            + b * self.ys[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

/// Sparse keyframes of a hand-control trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyframeTrack {
    pub indices: Vec<usize>,
    pub controls: Vec<HandControl>,
    pub interval: usize,
}

impl KeyframeTrack {
    pub fn new(indices: Vec<usize>, controls: Vec<HandControl>, interval: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptySequence);
        }
        if indices.len() != controls.len() {
            return Err(Error::LengthMismatch(format!(
                "{} keyframe indices, {} controls",
                indices.len(),
                controls.len()
            )));
        }
        if indices.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidValue("keyframe indices must be strictly increasing".into()));
        }
        let dim = controls[0].coeffs.len();
        if let Some(c) = controls.iter().find(|c| c.coeffs.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: c.coeffs.len(),
            });
        }
        Ok(KeyframeTrack {
            indices,
            controls,
            interval,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn first(&self) -> usize {
        self.indices[0]
    }

    pub fn last(&self) -> usize {
        *self.indices.last().expect("non-empty track")
    }

    /// Consecutive keyframes `range` as a standalone track.
    pub fn sub_track(&self, range: std::ops::Range<usize>) -> Result<KeyframeTrack> {
        KeyframeTrack::new(
            self.indices[range.clone()].to_vec(),
            self.controls[range].to_vec(),
            self.interval,
        )
    }

    pub fn interpolator(&self) -> Result<TrackInterpolator> {
        TrackInterpolator::new(self)
    }

    /// Dense controls for every frame from first to last keyframe.
    pub fn dense(&self) -> Result<Vec<HandControl>> {
        let it = self.interpolator()?;
        (self.first()..=self.last()).map(|f| it.eval(f)).collect()
    }
}

/// Precomputed per-channel splines of a [`KeyframeTrack`].
#[derive(Clone, Debug)]
pub struct TrackInterpolator {
    indices: Vec<usize>,
    controls: Vec<HandControl>,
    coeffs: Vec<CubicSpline>,
    translation: [CubicSpline; 3],
    anchor: Rotation,
    rotation: [CubicSpline; 3],
}

impl TrackInterpolator {
    fn new(track: &KeyframeTrack) -> Result<Self> {
        let xs: Vec<f64> = track.indices.iter().map(|&i| i as f64).collect();
        let n_coeffs = track.controls[0].coeffs.len();
        let coeffs = (0..n_coeffs)
            .map(|c| {
                let ys: Vec<f64> = track.controls.iter().map(|k| k.coeffs[c]).collect();
                CubicSpline::natural(&xs, &ys)
            })
            .collect::<Result<Vec<_>>>()?;
        let channel = |f: &dyn Fn(&HandControl) -> f64| {
            let ys: Vec<f64> = track.controls.iter().map(f).collect();
            CubicSpline::natural(&xs, &ys)
        };
        let translation = [
            channel(&|k| k.wrist.translation.x)?,
            channel(&|k| k.wrist.translation.y)?,
            channel(&|k| k.wrist.translation.z)?,
        ];
        let rotations: Vec<Rotation> = track.controls.iter().map(|k| k.wrist.rotation).collect();
        let anchor = choose_anchor(&rotations);
        let inv = anchor.inverse();
        let local: Vec<Vec3> = rotations.iter().map(|r| inv.compose(r).log()).collect();
        let rot = |axis: usize| {
            let ys: Vec<f64> = local.iter().map(|v| v[axis]).collect();
            CubicSpline::natural(&xs, &ys)
        };
        Ok(TrackInterpolator {
            indices: track.indices.clone(),
            controls: track.controls.clone(),
            coeffs,
            translation,
            anchor,
            rotation: [rot(0)?, rot(1)?, rot(2)?],
        })
    }

    pub fn first(&self) -> usize {
        self.indices[0]
    }

    pub fn last(&self) -> usize {
        *self.indices.last().expect("non-empty track")
    }

    pub fn eval(&self, frame: usize) -> Result<HandControl> {
        let (first, last) = (self.first(), self.last());
        if frame < first || frame > last {
            return Err(Error::OutOfRange { frame, first, last });
        }
        if let Ok(k) = self.indices.binary_search(&frame) {
            return Ok(self.controls[k].clone());
        }
        let x = frame as f64;
        let coeffs = self.coeffs.iter().map(|s| s.eval(x)).collect();
        let t = Vec3::new(
            self.translation[0].eval(x),
            self.translation[1].eval(x),
            self.translation[2].eval(x),
        );
        let v = Vec3::new(
            self.rotation[0].eval(x),
            self.rotation[1].eval(x),
            self.rotation[2].eval(x),
        );
        let r = self.anchor.compose(&Rotation::exp(&v));
        Ok(HandControl::new(coeffs, Pose::new(r, t)))
    }
}

/// First keyframe, unless some keyframe lies too far from it for a single
/// rotation-vector chart; then the keyframe with the smallest worst-case
/// distance to the rest.
fn choose_anchor(rotations: &[Rotation]) -> Rotation {
    let worst = |a: &Rotation| {
        rotations
            .iter()
            .map(|r| geodesic_distance(a, r))
            .fold(0.0, f64::max)
    };
    if worst(&rotations[0]) <= CHART_LIMIT {
        return rotations[0];
    }
    let mut best = (f64::INFINITY, rotations[0]);
    for r in rotations {
        let w = worst(r);
        if w < best.0 {
            best = (w, *r);
        }
    }
    best.1
}

pub fn interpolate(track: &KeyframeTrack, frame: usize) -> Result<HandControl> {
    track.interpolator()?.eval(frame)
}

/// Keyframes every `interval` frames from 0, always including the last frame.
pub fn resample_from_dense(controls: &[HandControl], interval: usize) -> Result<KeyframeTrack> {
    if controls.is_empty() {
        return Err(Error::EmptySequence);
    }
    if interval == 0 {
        return Err(Error::InvalidValue("keyframe interval must be >= 1".into()));
    }
    let last = controls.len() - 1;
    let mut indices: Vec<usize> = (0..=last).step_by(interval).collect();
    if *indices.last().unwrap() != last {
        indices.push(last);
    }
    let ks = indices.iter().map(|&i| controls[i].clone()).collect();
    KeyframeTrack::new(indices, ks, interval)
}
