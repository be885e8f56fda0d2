// SPDX-License-Identifier: MIT OR Apache-2.0

//! Principal component analysis fitted on a training split, projection to
//! `k` coordinates, explained-variance diagnostics, and the exact map from
//! PCA-space linear scorers back to the full hidden space.
//!
//! Component signs are canonicalised so the largest-magnitude entry of each
//! loading row is positive; two fits on identical data are then identical.

use alloc::vec;
use alloc::vec::Vec;

use crate::activation::LabeledMatrix;
use crate::direction::{DirectionSpace, ProbeDirection};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, orthonormalize_rows, symmetric_eigen, Matrix};

pub const DEFAULT_K: usize = 64;

/// Above this width the covariance route is skipped in favour of the
/// `n x n` Gram matrix even when `n > d`.
const MAX_COVARIANCE_DIM: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: Vec<f64>,
    components: Matrix,
    evr: Vec<f64>,
}

impl PcaModel {
    /// Assembles a model, checking orthonormality and the variance ratios.
    pub fn new(mean: Vec<f64>, components: Matrix, evr: Vec<f64>) -> Result<Self> {
        let m = Self {
            mean,
            components,
            evr,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let (k, d) = (self.components.rows(), self.components.cols());
        if self.mean.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: self.mean.len(),
            });
        }
        if self.evr.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: self.evr.len(),
            });
        }
        if !self.components.is_finite() || self.mean.iter().chain(&self.evr).any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("PCA model"));
        }
        for i in 0..k {
            let ri = self.components.row(i);
            if (norm(ri) - 1.0).abs() > 1e-8 {
                return Err(Error::InvalidConfig(alloc::format!(
                    "loading row {i} is not unit length"
                )));
            }
            for j in 0..i {
                if dot(ri, self.components.row(j)).abs() > 1e-6 {
                    return Err(Error::InvalidConfig(alloc::format!(
                        "loading rows {j} and {i} are not orthogonal"
                    )));
                }
            }
        }
        if self.evr.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidConfig(
                "explained-variance ratios must be non-increasing".into(),
            ));
        }
        if self.evr.iter().sum::<f64>() > 1.0 + 1e-9 || self.evr.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidConfig(
                "explained-variance ratios must lie in [0, 1] and sum to at most 1".into(),
            ));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.components.rows()
    }

    pub fn d(&self) -> usize {
        self.components.cols()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Loading matrix `[k x d]`, orthonormal rows.
    pub fn components(&self) -> &Matrix {
        &self.components
    }

    pub fn explained_variance_ratio(&self) -> &[f64] {
        &self.evr
    }

    /// `Z = (X - mu) W^T`.
    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                found: x.cols(),
            });
        }
        let k = self.k();
        let mut z = Matrix::zeros(x.rows(), k);
        let mut centered = vec![0.0; self.d()];
        for i in 0..x.rows() {
            for ((c, v), m) in centered.iter_mut().zip(x.row(i)).zip(&self.mean) {
                *c = v - m;
            }
            let zi = z.row_mut(i);
            for (j, zij) in zi.iter_mut().enumerate() {
                *zij = dot(&centered, self.components.row(j));
            }
        }
        Ok(z)
    }

    /// Projects the labelled rows, keeping labels and ids.
    pub fn transform_labeled(&self, m: &LabeledMatrix) -> Result<LabeledMatrix> {
        m.with_x(self.transform(&m.x)?)
    }
}

/// A fitted model plus the conditions met while fitting it.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaFit {
    pub model: PcaModel,
    /// Set when the data rank forced `k` below the requested value.
    pub requested_k: Option<usize>,
    /// Adjacent component pairs `(i, i + 1)` with numerically equal variance.
    pub tied_components: Vec<(usize, usize)>,
    /// All eigenvalues of the sample covariance, descending.
    pub eigenvalues: Vec<f64>,
}

pub fn fit_pca(train: &LabeledMatrix, k: usize) -> Result<PcaFit> {
    fit_pca_matrix(&train.x, k)
}

/// Fits on the rows of `x`. Requires `n >= 2` and `1 <= k <= min(n - 1, d)`.
pub fn fit_pca_matrix(x: &Matrix, k: usize) -> Result<PcaFit> {
    let (n, d) = (x.rows(), x.cols());
    if n < 2 {
        return Err(Error::Empty("PCA needs at least two rows"));
    }
    let max_k = (n - 1).min(d);
    if k == 0 || k > max_k {
        return Err(Error::KTooLarge { k, max: max_k });
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("PCA input"));
    }
    let mean = x.column_means();
    let mut xc = x.clone();
    for i in 0..n {
        for (v, m) in xc.row_mut(i).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let scale = 1.0 / (n - 1) as f64;

    let (eigenvalues, mut components, total) = if d <= MAX_COVARIANCE_DIM && n > d {
        let cov = covariance(&xc, scale);
        let total: f64 = (0..d).map(|i| cov.get(i, i)).sum();
        let (vals, vecs) = symmetric_eigen(&cov)?;
        let top = vecs.select_rows(&(0..k.min(d)).collect::<Vec<_>>());
        (vals, top, total)
    } else {
        let mut gram = xc.mul_transpose(&xc)?;
        gram.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
        let total: f64 = (0..n).map(|i| gram.get(i, i)).sum();
        let (vals, u) = symmetric_eigen(&gram)?;
        // v_i = Xc^T u_i / sqrt((n - 1) lambda_i)
        let mut top = Matrix::zeros(k, d);
        for (i, lam) in vals.iter().take(k).enumerate() {
            let denom = libm::sqrt(lam.max(0.0) / scale);
            if denom == 0.0 {
                continue;
            }
            let ui = u.row(i);
            let row = top.row_mut(i);
            for (r, &uir) in xc.row_iter().zip(ui) {
                for (t, v) in row.iter_mut().zip(r) {
                    *t += uir * v;
                }
            }
            row.iter_mut().for_each(|t| *t /= denom);
        }
        orthonormalize_rows(&mut top);
        (vals, top, total)
    };

    let lam_max = eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    let rank_tol = lam_max * (n.max(d) as f64) * f64::EPSILON * 16.0;
    let rank = eigenvalues.iter().filter(|&&l| l > rank_tol).count();
    if rank == 0 {
        return Err(Error::KTooLarge { k, max: 0 });
    }
    let mut requested_k = None;
    let k_eff = if k > rank {
        requested_k = Some(k);
        rank
    } else {
        k
    };
    if k_eff < components.rows() {
        components = components.select_rows(&(0..k_eff).collect::<Vec<_>>());
    }

    canonicalize_signs(&mut components);

    let evr: Vec<f64> = if total > 0.0 {
        eigenvalues
            .iter()
            .take(k_eff)
            .map(|l| (l.max(0.0) / total).min(1.0))
            .collect()
    } else {
        vec![0.0; k_eff]
    };
    // Floating-point noise can nudge ratios up at exact ties.
    let mut evr = evr;
    for i in 1..evr.len() {
        if evr[i] > evr[i - 1] {
            evr[i] = evr[i - 1];
        }
    }

    let tie_tol = 1e-12 * lam_max.max(f64::MIN_POSITIVE);
    let tied_components = (0..k_eff)
        .filter(|&i| i + 1 < eigenvalues.len())
        .filter(|&i| (eigenvalues[i] - eigenvalues[i + 1]).abs() <= tie_tol)
        .map(|i| (i, i + 1))
        .collect();

    Ok(PcaFit {
        model: PcaModel::new(mean, components, evr)?,
        requested_k,
        tied_components,
        eigenvalues,
    })
}

fn covariance(xc: &Matrix, scale: f64) -> Matrix {
    let d = xc.cols();
    let mut cov = Matrix::zeros(d, d);
    for r in xc.row_iter() {
        for i in 0..d {
            let ri = r[i];
            if ri == 0.0 {
                continue;
            }
            let row = &mut cov.as_mut_slice()[i * d..i * d + i + 1];
            for (c, v) in row.iter_mut().zip(&r[..=i]) {
                *c += ri * v;
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            let v = cov.get(i, j) * scale;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    cov
}

/// Flips each row so its largest-magnitude entry (first on ties) is positive.
pub fn canonicalize_signs(m: &mut Matrix) {
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let mut best = 0;
        for (j, v) in row.iter().enumerate() {
            if v.abs() > row[best].abs() {
                best = j;
            }
        }
        if row[best] < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvrRow {
    /// 1-based component index.
    pub component: usize,
    pub evr: f64,
    pub cumulative: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvrReport {
    pub rows: Vec<EvrRow>,
    /// The last retained component explains less than 1% of the variance.
    pub last_below_one_percent: bool,
    /// The first component explains at least 99% of the variance.
    pub leading_dominant: bool,
}

pub fn explained_variance_report(model: &PcaModel) -> EvrReport {
    let mut cumulative = 0.0;
    let rows: Vec<EvrRow> = model
        .evr
        .iter()
        .enumerate()
        .map(|(i, &evr)| {
            cumulative += evr;
            EvrRow {
                component: i + 1,
                evr,
                cumulative,
            }
        })
        .collect();
    EvrReport {
        last_below_one_percent: model.evr.last().is_some_and(|&v| v < 0.01),
        leading_dominant: model.evr.first().is_some_and(|&v| v >= 0.99),
        rows,
    }
}

/// Re-expresses a PCA-space scorer in the hidden space:
/// `w_x = W^T w_z`, `b_x = b - w_x . mu`.
pub fn map_back(dir: &ProbeDirection, model: &PcaModel) -> Result<ProbeDirection> {
    match dir.space {
        DirectionSpace::Pca(k) if k == model.k() && dir.w.len() == k => {}
        DirectionSpace::Pca(k) => {
            return Err(Error::DimensionMismatch {
                expected: model.k(),
                found: k,
            })
        }
        DirectionSpace::Embedding(_) => {
            return Err(Error::SpaceMismatch(
                "map_back expects a PCA-space direction".into(),
            ))
        }
    }
    let d = model.d();
    let mut w = vec![0.0; d];
    for (wz, row) in dir.w.iter().zip(model.components.row_iter()) {
        for (wx, c) in w.iter_mut().zip(row) {
            *wx += wz * c;
        }
    }
    let bias = dir.bias - dot(&w, &model.mean);
    Ok(ProbeDirection {
        w,
        bias,
        space: DirectionSpace::Embedding(d),
        ..dir.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::direction::ProbeKind;
    use alloc::string::String;

    fn dir(w: Vec<f64>, bias: f64) -> ProbeDirection {
        ProbeDirection {
            space: DirectionSpace::Pca(w.len()),
            w,
            bias,
            kind: ProbeKind::Logistic,
            layer: 0,
            source_setting: String::new(),
        }
    }

    #[test]
    fn collinear_points() {
        let rows: Vec<Vec<f64>> = (0..6).map(|t| vec![t as f64, t as f64, 0.0]).collect();
        let fit = fit_pca_matrix(&Matrix::from_rows(&rows).unwrap(), 1).unwrap();
        let w = fit.model.components().row(0);
        let s = core::f64::consts::FRAC_1_SQRT_2;
        assert!((w[0] - s).abs() < 1e-12 && (w[1] - s).abs() < 1e-12 && w[2].abs() < 1e-12);
        assert!((fit.model.explained_variance_ratio()[0] - 1.0).abs() < 1e-12);
        assert!(explained_variance_report(&fit.model).leading_dominant);
    }

    #[test]
    fn rank_deficient_reduces_k() {
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|t| vec![t as f64, 2.0 * t as f64, 0.0])
            .collect();
        let fit = fit_pca_matrix(&Matrix::from_rows(&rows).unwrap(), 2).unwrap();
        assert_eq!(fit.model.k(), 1);
        assert_eq!(fit.requested_k, Some(2));
    }

    #[test]
    fn k_bounds() {
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(
            fit_pca_matrix(&x, 3).unwrap_err(),
            Error::KTooLarge { k: 3, max: 2 }
        );
        assert!(fit_pca_matrix(&x, 0).is_err());
        let one = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(fit_pca_matrix(&one, 1).is_err());
    }

    #[test]
    fn wide_and_tall_routes_agree() {
        // n = 5 > d = 4 uses the covariance; n = 4 <= d = 4 uses the Gram matrix.
        let data = [
            [1.0, 2.0, -0.5, 0.3],
            [0.2, -1.0, 1.5, 2.0],
            [-1.3, 0.4, 0.8, -0.7],
            [2.1, 1.1, -1.9, 0.5],
            [0.0, -0.6, 0.2, -1.4],
        ];
        let tall = Matrix::from_rows(&data.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
        let wide = tall.select_rows(&[0, 1, 2, 3]);
        let a = fit_pca_matrix(&tall, 3).unwrap();
        assert_eq!(a.model.k(), 3);
        let b = fit_pca_matrix(&wide, 3).unwrap();
        // compare against the covariance route on the same 4 rows, forced via
        // an explicit eigendecomposition
        let mu = wide.column_means();
        let mut xc = wide.clone();
        for i in 0..4 {
            for (v, m) in xc.row_mut(i).iter_mut().zip(&mu) {
                *v -= m;
            }
        }
        let (vals, mut vecs) = symmetric_eigen(&covariance(&xc, 1.0 / 3.0)).unwrap();
        canonicalize_signs(&mut vecs);
        for (i, val) in vals.iter().take(3).enumerate() {
            assert!((val - b.eigenvalues[i]).abs() < 1e-10);
            for (x, y) in vecs.row(i).iter().zip(b.model.components().row(i)) {
                assert!((x - y).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn transform_basics() {
        let x = Matrix::from_rows(&[
            vec![1.0, 0.0, 0.5],
            vec![-1.0, 0.3, 0.0],
            vec![0.0, -2.0, 1.0],
            vec![2.0, 1.0, -1.0],
        ])
        .unwrap();
        let m = fit_pca_matrix(&x, 2).unwrap().model;
        let mu = Matrix::from_vec(1, 3, m.mean().to_vec()).unwrap();
        assert!(m
            .transform(&mu)
            .unwrap()
            .as_slice()
            .iter()
            .all(|v| v.abs() < 1e-12));
        let step: Vec<f64> = m
            .mean()
            .iter()
            .zip(m.components().row(0))
            .map(|(a, b)| a + b)
            .collect();
        let z = m.transform(&Matrix::from_vec(1, 3, step).unwrap()).unwrap();
        assert!((z.get(0, 0) - 1.0).abs() < 1e-12 && z.get(0, 1).abs() < 1e-12);
        assert!(m.transform(&Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn evr_report_cumulative() {
        let m = PcaModel::new(vec![0.0; 3], Matrix::identity(3), vec![0.6, 0.3, 0.1]).unwrap();
        let r = explained_variance_report(&m);
        let cum: Vec<f64> = r.rows.iter().map(|r| r.cumulative).collect();
        assert!((cum[0] - 0.6).abs() < 1e-15);
        assert!((cum[1] - 0.9).abs() < 1e-15);
        assert!((cum[2] - 1.0).abs() < 1e-15);
        assert!(!r.last_below_one_percent);
        assert!(!r.leading_dominant);
    }

    #[test]
    fn model_validation() {
        let bad = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert!(PcaModel::new(vec![0.0; 2], bad, vec![0.5, 0.5]).is_err());
        assert!(PcaModel::new(vec![0.0; 2], Matrix::identity(2), vec![0.2, 0.5]).is_err());
        assert!(PcaModel::new(vec![0.0; 2], Matrix::identity(2), vec![0.7, 0.5]).is_err());
    }

    #[test]
    fn map_back_trivial_cases() {
        let w = Matrix::from_rows(&[vec![0.6, 0.8, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let m = PcaModel::new(vec![0.0; 3], w.clone(), vec![0.5, 0.3]).unwrap();
        let e1 = map_back(&dir(vec![1.0, 0.0], 0.0), &m).unwrap();
        assert_eq!(e1.w, w.row(0).to_vec());
        assert_eq!(e1.bias, 0.0);
        assert_eq!(e1.space, DirectionSpace::Embedding(3));

        let m2 = PcaModel::new(vec![1.0, -2.0, 3.0], w, vec![0.5, 0.3]).unwrap();
        let c = map_back(&dir(vec![0.0, 0.0], 2.5), &m2).unwrap();
        assert_eq!(c.w, vec![0.0; 3]);
        assert_eq!(c.bias, 2.5);

        assert!(map_back(&dir(vec![1.0], 0.0), &m2).is_err());
    }

    #[test]
    fn sign_canonicalization() {
        let mut m = Matrix::from_rows(&[vec![0.1, -0.9], vec![0.5, -0.5]]).unwrap();
        canonicalize_signs(&mut m);
        assert_eq!(m.row(0), &[-0.1, 0.9]);
        assert_eq!(m.row(1), &[0.5, -0.5]);
    }
}
