//! Convex collision shapes centered at the body origin.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

const RIM_SAMPLES: usize = 16;

/// Collision geometry in the body frame. Cylinders run along the local z axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    Box { half_extents: Vec3 },
    Cylinder { radius: f64, half_height: f64 },
}

/// Closest surface point to a query point, in the body frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceQuery {
    /// Negative inside the shape.
    pub distance: f64,
    pub point: Vec3,
    /// Outward unit normal at `point`.
    pub normal: Vec3,
}

impl Shape {
    pub fn cube(side: f64) -> Shape {
        Shape::Box {
            half_extents: Vec3::repeat(side / 2.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Shape::Box { half_extents } => half_extents.iter().all(|h| h.is_finite() && *h > 0.0),
            Shape::Cylinder { radius, half_height } => {
                radius.is_finite() && half_height.is_finite() && *radius > 0.0 && *half_height > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidValue(format!("degenerate shape {self:?}")))
        }
    }

    /// Diagonal inertia of a solid of uniform density.
    pub fn inertia(&self, mass: f64) -> Vec3 {
        match self {
            Shape::Box { half_extents: h } => {
                let (a, b, c) = (4.0 * h.x * h.x, 4.0 * h.y * h.y, 4.0 * h.z * h.z);
                Vec3::new(b + c, a + c, a + b) * (mass / 12.0)
            }
            Shape::Cylinder { radius, half_height } => {
                let r2 = radius * radius;
                let h2 = 4.0 * half_height * half_height;
                let side = mass * (3.0 * r2 + h2) / 12.0;
                Vec3::new(side, side, mass * r2 / 2.0)
            }
        }
    }

    /// Distance from the center to the farthest surface point.
    pub fn bounding_radius(&self) -> f64 {
        match self {
            Shape::Box { half_extents } => half_extents.norm(),
            Shape::Cylinder { radius, half_height } => radius.hypot(*half_height),
        }
    }

    /// Lowest point of the shape along local z, relative to the center.
    pub fn half_height(&self) -> f64 {
        match self {
            Shape::Box { half_extents } => half_extents.z,
            Shape::Cylinder { half_height, .. } => *half_height,
        }
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.closest(p).distance
    }

    pub fn closest(&self, p: &Vec3) -> SurfaceQuery {
        match self {
            Shape::Box { half_extents } => box_closest(half_extents, p),
            Shape::Cylinder { radius, half_height } => cylinder_closest(*radius, *half_height, p),
        }
    }

    /// Points tested against the ground plane.
    pub fn support_points(&self) -> Vec<Vec3> {
        match self {
            Shape::Box { half_extents: h } => {
                let mut out = Vec::with_capacity(8);
                for sx in [-1.0, 1.0] {
                    for sy in [-1.0, 1.0] {
                        for sz in [-1.0, 1.0] {
                            out.push(Vec3::new(sx * h.x, sy * h.y, sz * h.z));
                        }
                    }
                }
                out
            }
            Shape::Cylinder { radius, half_height } => {
                let mut out = Vec::with_capacity(2 * RIM_SAMPLES);
                for sz in [-1.0, 1.0] {
                    for i in 0..RIM_SAMPLES {
                        let a = std::f64::consts::TAU * i as f64 / RIM_SAMPLES as f64;
                        out.push(Vec3::new(radius * a.cos(), radius * a.sin(), sz * half_height));
                    }
                }
                out
            }
        }
    }
}

fn sign(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn box_closest(h: &Vec3, p: &Vec3) -> SurfaceQuery {
    let q = p.abs() - h;
    let (axis, depth) = q.argmax();
    if depth > 0.0 {
        let point = Vec3::new(p.x.clamp(-h.x, h.x), p.y.clamp(-h.y, h.y), p.z.clamp(-h.z, h.z));
        let d = p - point;
        let distance = d.norm();
        return SurfaceQuery {
            distance,
            point,
            normal: d / distance,
        };
    }
    let s = sign(p[axis]);
    let mut point = *p;
    point[axis] = s * h[axis];
    let mut normal = Vec3::zeros();
    normal[axis] = s;
    SurfaceQuery {
        distance: depth,
        point,
        normal,
    }
}

fn cylinder_closest(radius: f64, half_height: f64, p: &Vec3) -> SurfaceQuery {
    let rho = p.x.hypot(p.y);
    let radial = if rho > 1e-12 {
        Vec3::new(p.x / rho, p.y / rho, 0.0)
    } else {
        Vec3::x()
    };
    let dr = rho - radius;
    let dz = p.z.abs() - half_height;
    if dr > 0.0 || dz > 0.0 {
        let z = p.z.clamp(-half_height, half_height);
        let point = radial * rho.min(radius) + Vec3::new(0.0, 0.0, z);
        let d = p - point;
        let distance = d.norm();
        return SurfaceQuery {
            distance,
            point,
            normal: d / distance,
        };
    }
    if dr > dz {
        SurfaceQuery {
            distance: dr,
            point: radial * radius + Vec3::new(0.0, 0.0, p.z),
            normal: radial,
        }
    } else {
        let s = sign(p.z);
        SurfaceQuery {
            distance: dz,
            point: Vec3::new(p.x, p.y, s * half_height),
            normal: Vec3::new(0.0, 0.0, s),
        }
    }
}
