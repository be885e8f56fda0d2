// SPDX-License-Identifier: MIT OR Apache-2.0

//! Geometry of PCA subspaces: principal angles, Grassmann geodesic distance,
//! and the order-sensitive mean cosine between corresponding components.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, symmetric_eigen, Matrix};
use crate::pca::PcaModel;

#[derive(Debug, Clone, Copy)]
pub struct SubspacePair<'a> {
    a: &'a PcaModel,
    b: &'a PcaModel,
}

impl<'a> SubspacePair<'a> {
    pub fn new(a: &'a PcaModel, b: &'a PcaModel) -> Result<Self> {
        if a.d() != b.d() {
            return Err(Error::DimensionMismatch {
                expected: a.d(),
                found: b.d(),
            });
        }
        if a.k() != b.k() {
            return Err(Error::DimensionMismatch {
                expected: a.k(),
                found: b.k(),
            });
        }
        Ok(Self { a, b })
    }

    pub fn k(&self) -> usize {
        self.a.k()
    }

    /// Principal angles in `[0, pi/2]`, non-decreasing.
    pub fn principal_angles(&self) -> Result<Vec<f64>> {
        principal_angles_of(self.a.components(), self.b.components())
    }

    /// `sqrt(sum theta_i^2)`.
    pub fn geodesic_distance(&self) -> Result<f64> {
        let angles = self.principal_angles()?;
        Ok(libm::sqrt(angles.iter().map(|t| t * t).sum()))
    }

    /// Mean cosine between the i-th component of each side.
    pub fn mean_pc_cosine(&self) -> Result<f64> {
        let (wa, wb) = (self.a.components(), self.b.components());
        let k = wa.rows();
        if k == 0 {
            return Err(Error::Empty("subspace"));
        }
        let total: f64 = (0..k)
            .map(|i| {
                let (u, v) = (wa.row(i), wb.row(i));
                dot(u, v) / (norm(u) * norm(v))
            })
            .sum();
        Ok((total / k as f64).clamp(-1.0, 1.0))
    }
}

pub fn principal_angles(a: &PcaModel, b: &PcaModel) -> Result<Vec<f64>> {
    SubspacePair::new(a, b)?.principal_angles()
}

pub fn geodesic_distance(a: &PcaModel, b: &PcaModel) -> Result<f64> {
    SubspacePair::new(a, b)?.geodesic_distance()
}

pub fn mean_pc_cosine(a: &PcaModel, b: &PcaModel) -> Result<f64> {
    SubspacePair::new(a, b)?.mean_pc_cosine()
}

/// Principal angles between the row spaces of two orthonormal bases.
///
/// Cosines come from the singular values of `A B^T` and sines from those of
/// the part of `B` orthogonal to `A`. Angles whose cosine exceeds
/// `1/sqrt(2)` are taken from the sine, where `arcsin` is well conditioned;
/// `arccos` of a cosine within an ulp of 1 would otherwise leave an error of
/// order 1e-8. The pair is put in a canonical order first so swapping the
/// arguments gives bitwise-identical output.
pub fn principal_angles_of(a: &Matrix, b: &Matrix) -> Result<Vec<f64>> {
    if a.cols() != b.cols() || a.rows() != b.rows() {
        return Err(Error::DimensionMismatch {
            expected: a.rows() * a.cols(),
            found: b.rows() * b.cols(),
        });
    }
    let (a, b) = match cmp_bits(a.as_slice(), b.as_slice()) {
        Ordering::Greater => (b, a),
        _ => (a, b),
    };
    let k = a.rows();
    let cross = a.mul_transpose(b)?; // k x k, entry (i, j) = a_i . b_j

    let cross_gram = cross.transpose().mul_transpose(&cross.transpose())?;
    let (cos2, _) = symmetric_eigen(&cross_gram)?;

    // b_perp_j = b_j - sum_i (a_i . b_j) a_i
    let mut b_perp = b.clone();
    for j in 0..k {
        let row = b_perp.row_mut(j);
        for i in 0..k {
            let c = cross.get(i, j);
            for (r, ai) in row.iter_mut().zip(a.row(i)) {
                *r -= c * ai;
            }
        }
    }
    let (sin2, _) = symmetric_eigen(&b_perp.mul_transpose(&b_perp)?)?;

    // cos2 is descending, sin2 descending as well: pair cos_i with sin_{k-1-i}.
    let mut angles: Vec<f64> = (0..k)
        .map(|i| {
            let c = libm::sqrt(cos2[i].max(0.0)).clamp(0.0, 1.0);
            let s = libm::sqrt(sin2[k - 1 - i].max(0.0)).clamp(0.0, 1.0);
            if c * c >= 0.5 {
                libm::asin(s)
            } else {
                libm::acos(c)
            }
        })
        .collect();
    angles.sort_by(f64::total_cmp);
    Ok(angles)
}

fn cmp_bits(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use core::f64::consts::FRAC_PI_2;

    fn model(rows: Vec<Vec<f64>>) -> PcaModel {
        let k = rows.len();
        let d = rows[0].len();
        PcaModel::new(
            vec![0.0; d],
            Matrix::from_rows(&rows).unwrap(),
            vec![1.0 / k as f64; k],
        )
        .unwrap()
    }

    fn e(i: usize, d: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    #[test]
    fn identical_subspaces() {
        let a = model(vec![e(0, 4), e(2, 4)]);
        assert_eq!(principal_angles(&a, &a).unwrap(), vec![0.0, 0.0]);
        assert_eq!(geodesic_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(mean_pc_cosine(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn orthogonal_axes() {
        let a = model(vec![e(0, 3)]);
        let b = model(vec![e(1, 3)]);
        let angles = principal_angles(&a, &b).unwrap();
        assert!((angles[0] - FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn shared_and_orthogonal_axis() {
        let a = model(vec![e(0, 3), e(1, 3)]);
        let b = model(vec![e(0, 3), e(2, 3)]);
        let angles = principal_angles(&a, &b).unwrap();
        assert!(angles[0].abs() < 1e-15);
        assert!((angles[1] - FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn reversed_rows_have_zero_mean_cosine() {
        let a = model(vec![e(0, 3), e(1, 3)]);
        let b = model(vec![e(1, 3), e(0, 3)]);
        assert_eq!(mean_pc_cosine(&a, &b).unwrap(), 0.0);
        // same subspace, so the angles do not see the reordering
        assert_eq!(geodesic_distance(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        let a = model(vec![e(0, 3)]);
        let b = model(vec![e(0, 4)]);
        assert!(SubspacePair::new(&a, &b).is_err());
        let c = model(vec![e(0, 3), e(1, 3)]);
        assert!(geodesic_distance(&a, &c).is_err());
    }
}
