//! Per-contact force records and their CSV form.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::sim::model::HandBody;

pub const CSV_HEADER: &str = "frame,body_a,body_b,px,py,pz,nx,ny,nz,fn,ft1,ft2,wfx,wfy,wfz,wtx,wty,wtz";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BodyRef {
    Hand(HandBody),
    Object,
    Ground,
}

impl fmt::Display for BodyRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BodyRef::Hand(HandBody::Palm) => write!(f, "palm"),
            BodyRef::Hand(HandBody::Link { finger, segment }) => {
                let seg = if *segment == 0 { "proximal" } else { "distal" };
                write!(f, "finger{finger}_{seg}")
            }
            BodyRef::Object => write!(f, "object"),
            BodyRef::Ground => write!(f, "ground"),
        }
    }
}

impl FromStr for BodyRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "palm" => return Ok(BodyRef::Hand(HandBody::Palm)),
            "object" => return Ok(BodyRef::Object),
            "ground" => return Ok(BodyRef::Ground),
            _ => {}
        }
        let bad = || Error::InvalidValue(format!("unknown body '{s}'"));
        let rest = s.strip_prefix("finger").ok_or_else(bad)?;
        let (idx, seg) = rest.split_once('_').ok_or_else(bad)?;
        let finger = idx.parse().map_err(|_| bad())?;
        let segment = match seg {
            "proximal" => 0,
            "distal" => 1,
            _ => return Err(bad()),
        };
        Ok(BodyRef::Hand(HandBody::Link { finger, segment }))
    }
}

impl Serialize for BodyRef {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BodyRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One active contact between the object and another body.
///
/// `body_b` is always the object. The normal points out of the object, the
/// wrench is the one acting on the object, expressed at its center of mass;
/// the other body receives the opposite force at `point`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactRecord {
    pub frame: usize,
    pub body_a: BodyRef,
    pub body_b: BodyRef,
    pub point: Vec3,
    pub normal: Vec3,
    pub normal_force: f64,
    /// Components along the contact's tangent basis, see [`tangent_basis`].
    pub tangential_force: [f64; 2],
    pub force: Vec3,
    pub torque: Vec3,
}

impl ContactRecord {
    pub fn csv_row(&self) -> String {
        let v = |x: &Vec3| format!("{},{},{}", x.x, x.y, x.z);
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.frame,
            self.body_a,
            self.body_b,
            v(&self.point),
            v(&self.normal),
            self.normal_force,
            self.tangential_force[0],
            self.tangential_force[1],
            v(&self.force),
            v(&self.torque)
        )
    }

    pub fn from_csv_row(line: &str) -> Result<ContactRecord> {
        let fields: Vec<&str> = line.trim().split(',').collect();
        let parse_err = |m: String| Error::Parse {
            context: "contact row".into(),
            message: m,
        };
        if fields.len() != 18 {
            return Err(parse_err(format!("expected 18 fields, got {}", fields.len())));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| parse_err(format!("column {i}: {e}")))
        };
        let v = |i: usize| -> Result<Vec3> { Ok(Vec3::new(num(i)?, num(i + 1)?, num(i + 2)?)) };
        Ok(ContactRecord {
            frame: fields[0]
                .parse()
                .map_err(|e| parse_err(format!("frame: {e}")))?,
            body_a: fields[1].parse()?,
            body_b: fields[2].parse()?,
            point: v(3)?,
            normal: v(6)?,
            normal_force: num(9)?,
            tangential_force: [num(10)?, num(11)?],
            force: v(12)?,
            torque: v(15)?,
        })
    }
}

/// Deterministic orthonormal pair spanning the plane orthogonal to `n`.
pub fn tangent_basis(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let t1 = n.cross(&helper).normalize();
    let t2 = n.cross(&t1);
    (t1, t2)
}

/// Net force and torque on the object at its center of mass.
pub fn net_object_wrench(records: &[ContactRecord]) -> Result<(Vec3, Vec3)> {
    let mut force = Vec3::zeros();
    let mut torque = Vec3::zeros();
    let Some(first) = records.first() else {
        return Ok((force, torque));
    };
    for r in records {
        if r.frame != first.frame {
            return Err(Error::MixedFrames {
                first: first.frame,
                other: r.frame,
            });
        }
        force += r.force;
        torque += r.torque;
    }
    Ok((force, torque))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(frame: usize) -> ContactRecord {
        ContactRecord {
            frame,
            body_a: BodyRef::Hand(HandBody::Link { finger: 2, segment: 1 }),
            body_b: BodyRef::Object,
            point: Vec3::new(0.1, -0.2, 0.3),
            normal: Vec3::new(0.0, 1.0, 0.0),
            normal_force: 1.5,
            tangential_force: [0.1, -0.2],
            force: Vec3::new(0.1, -1.5, 0.2),
            torque: Vec3::new(0.01, 0.0, -0.03),
        }
    }

    #[test]
    fn body_names_round_trip() {
        for b in [
            BodyRef::Object,
            BodyRef::Ground,
            BodyRef::Hand(HandBody::Palm),
            BodyRef::Hand(HandBody::Link { finger: 1, segment: 0 }),
        ] {
            assert_eq!(b.to_string().parse::<BodyRef>().unwrap(), b);
        }
        assert!("finger1_middle".parse::<BodyRef>().is_err());
    }

    #[test]
    fn csv_row_round_trips() {
        let r = record(4);
        assert_eq!(r.csv_row().split(',').count(), CSV_HEADER.split(',').count());
        assert_eq!(ContactRecord::from_csv_row(&r.csv_row()).unwrap(), r);
    }

    #[test]
    fn tangent_basis_is_orthonormal() {
        for n in [Vec3::x(), Vec3::z(), Vec3::new(1.0, 2.0, -3.0).normalize()] {
            let (a, b) = tangent_basis(&n);
            assert!(a.dot(&n).abs() < 1e-15 && b.dot(&n).abs() < 1e-15 && a.dot(&b).abs() < 1e-15);
            assert!((a.norm() - 1.0).abs() < 1e-15 && (b.norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn net_wrench_sums_and_checks_frames() {
        assert_eq!(net_object_wrench(&[]).unwrap(), (Vec3::zeros(), Vec3::zeros()));
        let (f, t) = net_object_wrench(&[record(1), record(1)]).unwrap();
        assert_eq!(f, record(1).force * 2.0);
        assert_eq!(t, record(1).torque * 2.0);
        assert!(matches!(
            net_object_wrench(&[record(1), record(2)]),
            Err(Error::MixedFrames { first: 1, other: 2 })
        ));
    }
}
