//! Low-dimensional hand control: synergy coefficients plus a wrist pose,
//! decoded to gripper joint angles through a fixed linear basis.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;

/// Default bound on the magnitude of each synergy coefficient.
pub const DEFAULT_COEFF_LIMIT: f64 = 3.0;

/// Hand control at one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandControl {
    pub coeffs: Vec<f64>,
    pub wrist: Pose,
}

impl HandControl {
    pub fn new(coeffs: Vec<f64>, wrist: Pose) -> Self {
        HandControl { coeffs, wrist }
    }

    pub fn clamp_coeffs(&mut self, limit: f64) {
        for c in &mut self.coeffs {
            *c = c.clamp(-limit, limit);
        }
    }
}

/// `q = clamp(mean + basis * coeffs, lo, hi)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BasisRepr", into = "BasisRepr")]
pub struct SynergyBasis {
    basis: DMatrix<f64>,
    mean: DVector<f64>,
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl SynergyBasis {
    pub fn new(basis: DMatrix<f64>, mean: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let n = basis.nrows();
        if basis.ncols() == 0 || basis.ncols() > n {
            return Err(Error::InvalidDimensions(format!(
                "basis is {}x{}; need 1 <= n_coeffs <= n_joints",
                n,
                basis.ncols()
            )));
        }
        for (name, v) in [("mean", &mean), ("lower", &lower), ("upper", &upper)] {
            if v.len() != n {
                return Err(Error::InvalidDimensions(format!(
                    "{name} has {} entries, basis has {n} rows",
                    v.len()
                )));
            }
        }
        for i in 0..n {
            if !(lower[i] < upper[i]) || !lower[i].is_finite() || !upper[i].is_finite() {
                return Err(Error::InvalidValue(format!("joint {i} has invalid limits")));
            }
            if mean[i] < lower[i] || mean[i] > upper[i] {
                return Err(Error::InvalidValue(format!("mean of joint {i} outside its limits")));
            }
        }
        let gram = basis.transpose() * &basis;
        let dev = (gram - DMatrix::identity(basis.ncols(), basis.ncols())).amax();
        if dev > 1e-8 {
            return Err(Error::InvalidValue(format!(
                "basis columns not orthonormal (max deviation {dev:.3e})"
            )));
        }
        Ok(SynergyBasis {
            basis,
            mean: DVector::from_vec(mean),
            lower: DVector::from_vec(lower),
            upper: DVector::from_vec(upper),
        })
    }

    /// Replaces the mean pose and joint limits, keeping the directions.
    pub fn with_mean_and_limits(&self, mean: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        SynergyBasis::new(self.basis.clone(), mean, lower, upper)
    }

    pub fn n_joints(&self) -> usize {
        self.basis.nrows()
    }

    pub fn n_coeffs(&self) -> usize {
        self.basis.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn lower(&self) -> &[f64] {
        self.lower.as_slice()
    }

    pub fn upper(&self) -> &[f64] {
        self.upper.as_slice()
    }

    pub fn decode_coeffs(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        if coeffs.len() != self.n_coeffs() {
            return Err(Error::DimensionMismatch {
                expected: self.n_coeffs(),
                got: coeffs.len(),
            });
        }
        let q = &self.mean + &self.basis * DVector::from_column_slice(coeffs);
        Ok(q.iter()
            .enumerate()
            .map(|(i, v)| v.clamp(self.lower[i], self.upper[i]))
            .collect())
    }

    pub fn encode(&self, q: &[f64]) -> Result<Vec<f64>> {
        if q.len() != self.n_joints() {
            return Err(Error::DimensionMismatch {
                expected: self.n_joints(),
                got: q.len(),
            });
        }
        let d = DVector::from_column_slice(q) - &self.mean;
        Ok((self.basis.transpose() * d).iter().copied().collect())
    }
}

pub fn decode(basis: &SynergyBasis, control: &HandControl) -> Result<Vec<f64>> {
    basis.decode_coeffs(&control.coeffs)
}

pub fn encode(basis: &SynergyBasis, q: &[f64]) -> Result<Vec<f64>> {
    basis.encode(q)
}

/// Deterministic synthetic synergy basis.
///
/// Column 0 is the uniform closing direction (every joint flexes together).
/// The remaining columns are seeded Gaussian draws orthonormalized against
/// the previous ones. The mean pose is zero and joint limits are `±pi`;
/// use [`SynergyBasis::with_mean_and_limits`] to attach a gripper's values.
pub fn make_grasp_basis(n_joints: usize, n_coeffs: usize, seed: u64) -> Result<SynergyBasis> {
    if n_coeffs == 0 || n_coeffs > n_joints {
        return Err(Error::InvalidDimensions(format!(
            "need 1 <= n_coeffs ({n_coeffs}) <= n_joints ({n_joints})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n_coeffs);
    cols.push(DVector::from_element(n_joints, 1.0 / (n_joints as f64).sqrt()));
    while cols.len() < n_coeffs {
        let mut v = DVector::from_fn(n_joints, |_, _| StandardNormal.sample(&mut rng));
        // Two Gram-Schmidt passes keep the Gram matrix at machine precision.
        for _ in 0..2 {
            for c in &cols {
                let p = c.dot(&v);
                v -= c * p;
            }
        }
        let n = v.norm();
        if n > 1e-6 {
            cols.push(v / n);
        }
    }
    let basis = DMatrix::from_columns(&cols);
    let pi = std::f64::consts::PI;
    SynergyBasis::new(
        basis,
        vec![0.0; n_joints],
        vec![-pi; n_joints],
        vec![pi; n_joints],
    )
}

#[derive(Serialize, Deserialize)]
struct BasisRepr {
    /// Row-major, `n_joints` rows of `n_coeffs` entries.
    rows: Vec<Vec<f64>>,
    mean: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl From<SynergyBasis> for BasisRepr {
    fn from(b: SynergyBasis) -> Self {
        BasisRepr {
            rows: (0..b.n_joints())
                .map(|r| b.basis.row(r).iter().copied().collect())
                .collect(),
            mean: b.mean.iter().copied().collect(),
            lower: b.lower.iter().copied().collect(),
            upper: b.upper.iter().copied().collect(),
        }
    }
}

impl TryFrom<BasisRepr> for SynergyBasis {
    type Error = Error;

    fn try_from(r: BasisRepr) -> Result<Self> {
        let n = r.rows.len();
        let m = r.rows.first().map_or(0, Vec::len);
        if r.rows.iter().any(|row| row.len() != m) {
            return Err(Error::InvalidDimensions("ragged basis rows".into()));
        }
        let basis = DMatrix::from_fn(n, m, |i, j| r.rows[i][j]);
        SynergyBasis::new(basis, r.mean, r.lower, r.upper)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn gripper_basis() -> SynergyBasis {
        make_grasp_basis(6, 4, 5)
            .unwrap()
            .with_mean_and_limits(vec![0.1; 6], vec![-0.5; 6], vec![1.5; 6])
            .unwrap()
    }

    #[test]
    fn zero_coeffs_decode_to_mean() {
        let b = gripper_basis();
        assert_eq!(b.decode_coeffs(&[0.0; 4]).unwrap(), vec![0.1; 6]);
    }

    #[test]
    fn unit_coeff_adds_column() {
        let b = gripper_basis();
        let q = b.decode_coeffs(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        for i in 0..6 {
            let expected = (0.1 + b.matrix()[(i, 0)]).clamp(-0.5, 1.5);
            assert_eq!(q[i], expected);
        }
    }

    #[test]
    fn decode_matches_dense_matmul_oracle() {
        let b = gripper_basis();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let th: Vec<f64> = (0..4).map(|_| rng.random_range(-0.3..0.3)).collect();
            let q = b.decode_coeffs(&th).unwrap();
            for i in 0..6 {
                let mut acc = b.mean()[i];
                for j in 0..4 {
                    acc += b.matrix()[(i, j)] * th[j];
                }
                assert!((q[i] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encode_cases() {
        let b = gripper_basis();
        assert!(b.encode(&[0.1; 6]).unwrap().iter().all(|v| v.abs() < 1e-15));
        let th = vec![0.2, -0.1, 0.05, 0.3];
        let back = b.encode(&b.decode_coeffs(&th).unwrap()).unwrap();
        for (a, e) in back.iter().zip(&th) {
            assert!((a - e).abs() < 1e-12);
        }
        assert!(matches!(b.encode(&[0.0; 3]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(
            b.decode_coeffs(&[0.0; 3]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn encode_matches_normal_equations_oracle() {
        let b = gripper_basis();
        let q = vec![0.7, -0.2, 0.4, 0.9, -0.1, 0.3];
        let th = b.encode(&q).unwrap();
        // Normal equations: (B^T B) th = B^T (q - mu), solved by LU.
        let bm = b.matrix();
        let rhs = bm.transpose() * (DVector::from_vec(q.clone()) - DVector::from_vec(b.mean().to_vec()));
        let sol = (bm.transpose() * bm).lu().solve(&rhs).unwrap();
        for j in 0..4 {
            assert!((th[j] - sol[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn basis_construction_cases() {
        let full = make_grasp_basis(6, 6, 1).unwrap();
        let bbt = full.matrix() * full.matrix().transpose();
        assert!((bbt - DMatrix::identity(6, 6)).amax() < 1e-8);
        let b = make_grasp_basis(6, 4, 123).unwrap();
        assert!(b.matrix().column(0).iter().all(|v| *v > 0.0));
        let g = b.matrix().transpose() * b.matrix();
        assert!((g - DMatrix::identity(4, 4)).amax() < 1e-8);
        assert_eq!(make_grasp_basis(6, 4, 123).unwrap(), b);
        assert!(matches!(make_grasp_basis(3, 4, 0), Err(Error::InvalidDimensions(_))));
        assert!(matches!(make_grasp_basis(3, 0, 0), Err(Error::InvalidDimensions(_))));
    }

    #[test]
    fn serde_roundtrip() {
        let b = gripper_basis();
        let s = serde_json::to_string(&b).unwrap();
        let back: SynergyBasis = serde_json::from_str(&s).unwrap();
        assert_eq!(back, b);
    }

    proptest! {
        #[test]
        fn decode_respects_limits(th in proptest::collection::vec(-3.0f64..3.0, 4)) {
            let b = gripper_basis();
            let q = b.decode_coeffs(&th).unwrap();
            for (i, v) in q.iter().enumerate() {
                prop_assert!(*v >= b.lower()[i] && *v <= b.upper()[i]);
            }
        }

        #[test]
        fn encode_inverts_unclamped_decode(th in proptest::collection::vec(-0.25f64..0.25, 4)) {
            let b = gripper_basis();
            let q = b.decode_coeffs(&th).unwrap();
            let back = b.encode(&q).unwrap();
            for (a, e) in back.iter().zip(&th) {
                prop_assert!((a - e).abs() < 1e-10);
            }
        }
    }
}
