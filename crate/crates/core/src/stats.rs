//! Dense numerical kernels shared by the statistical modules.
//!
//! Every routine accumulates in `f64`. The symmetric eigendecomposition is the
//! single backend for PCA, the clamped pseudo-inverse and the log-determinant.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

/// ln(2π)
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Default eigenvalue floor, relative to the largest eigenvalue.
pub const DEFAULT_RELATIVE_FLOOR: f64 = 1e-6;

const SYMMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedMoments {
    pub mass: f64,
    pub mean: DVector<f64>,
    /// Normalized by the total mass (not mass - 1).
    pub cov: DMatrix<f64>,
}

/// Weighted first and second moments of the rows of `x`.
pub fn weighted_moments(x: &DMatrix<f64>, w: &[f64]) -> Result<WeightedMoments> {
    let (n, d) = x.shape();
    if w.len() != n {
        return Err(Error::DimensionMismatch {
            context: "weighted_moments weights",
            expected: n,
            found: w.len(),
        });
    }
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument(
            "weights must be finite and non-negative".into(),
        ));
    }
    ensure_finite(x, "weighted_moments input")?;
    let mass: f64 = w.iter().sum();
    if mass <= 0.0 {
        return Err(Error::ZeroWeight);
    }

    let mut mean = DVector::zeros(d);
    for (i, &wi) in w.iter().enumerate() {
        if wi > 0.0 {
            mean.axpy(wi, &x.row(i).transpose(), 1.0);
        }
    }
    mean /= mass;

    let mut cov = DMatrix::zeros(d, d);
    for (i, &wi) in w.iter().enumerate() {
        if wi > 0.0 {
            let dev = x.row(i).transpose() - &mean;
            cov.ger(wi, &dev, &dev, 1.0);
        }
    }
    cov /= mass;
    Ok(WeightedMoments { mass, mean, cov })
}

/// A fitted principal-component projection.
#[derive(Debug, Clone)]
pub struct PcaProjection {
    /// `d × D`, orthonormal rows ordered by descending eigenvalue.
    pub component_basis: DMatrix<f64>,
    pub data_mean: DVector<f64>,
    /// Eigenvalues of the (1/N) sample covariance for the retained components.
    pub explained_variance: DVector<f64>,
    pub total_variance: f64,
}

impl PcaProjection {
    pub fn fit(x: &DMatrix<f64>, retained_dim: usize) -> Result<Self> {
        let (n, d) = x.shape();
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "PCA needs at least 2 rows, got {n}"
            )));
        }
        let bound = n.min(d);
        if retained_dim == 0 || retained_dim > bound {
            return Err(Error::RankBound {
                requested: retained_dim,
                bound,
            });
        }
        let moments = weighted_moments(x, &vec![1.0; n])?;
        let total_variance = moments.cov.trace();
        if total_variance <= f64::EPSILON * moments.mean.norm_squared().max(1.0) {
            return Err(Error::ZeroVariance);
        }

        let (values, vectors) = sorted_eigen(&moments.cov);
        let mut basis = DMatrix::zeros(retained_dim, d);
        for r in 0..retained_dim {
            let mut v = vectors.column(r).into_owned();
            // deterministic sign: largest-magnitude coordinate positive
            let imax = v.iamax();
            if v[imax] < 0.0 {
                v.neg_mut();
            }
            basis.set_row(r, &v.transpose());
        }
        Ok(PcaProjection {
            component_basis: basis,
            data_mean: moments.mean,
            explained_variance: DVector::from_iterator(
                retained_dim,
                values.iter().take(retained_dim).copied(),
            ),
            total_variance,
        })
    }

    pub fn retained_dim(&self) -> usize {
        self.component_basis.nrows()
    }

    /// `(x - mean) · basisᵀ` for every row of `x`.
    pub fn project(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.data_mean.len() {
            return Err(Error::DimensionMismatch {
                context: "PCA projection",
                expected: self.data_mean.len(),
                found: x.ncols(),
            });
        }
        let mut centered = x.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.data_mean.transpose();
        }
        Ok(centered * self.component_basis.transpose())
    }
}

/// Eigen-pairs of a symmetric matrix, sorted by descending eigenvalue.
pub(crate) fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    (values, vectors)
}

/// A symmetric matrix whose spectrum has been clamped from below, with the
/// log-determinant and (pseudo-)inverse cached.
#[derive(Debug, Clone)]
pub struct SpdSummary {
    matrix: DMatrix<f64>,
    inverse: DMatrix<f64>,
    log_det: f64,
    floor: f64,
    clamped: bool,
}

impl SpdSummary {
    /// Clamp eigenvalues below `floor` (absolute) up to `floor`.
    pub fn regularized(m: &DMatrix<f64>, floor: f64) -> Result<Self> {
        if !(floor > 0.0 && floor.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "eigenvalue floor must be positive, got {floor}"
            )));
        }
        let sym = symmetrized(m)?;
        let eig = SymmetricEigen::new(sym.clone());
        Ok(Self::from_eigen(sym, eig, floor))
    }

    /// Like [`SpdSummary::regularized`] with the floor taken relative to the
    /// largest eigenvalue.
    pub fn with_relative_floor(m: &DMatrix<f64>, relative: f64) -> Result<Self> {
        if !(relative > 0.0 && relative.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "relative floor must be positive, got {relative}"
            )));
        }
        let sym = symmetrized(m)?;
        let eig = SymmetricEigen::new(sym.clone());
        let top = eig.eigenvalues.max();
        let floor = if top > 0.0 { relative * top } else { relative };
        Ok(Self::from_eigen(sym, eig, floor))
    }

    fn from_eigen(sym: DMatrix<f64>, eig: SymmetricEigen<f64, nalgebra::Dyn>, floor: f64) -> Self {
        let clamped = eig.eigenvalues.iter().any(|&v| v < floor);
        let values = eig.eigenvalues.map(|v| v.max(floor));
        let log_det = values.iter().map(|v| v.ln()).sum();
        let q = &eig.eigenvectors;
        let inv_values = values.map(|v| 1.0 / v);
        let mut inverse = q * DMatrix::from_diagonal(&inv_values) * q.transpose();
        symmetrize_in_place(&mut inverse);
        let matrix = if clamped {
            let mut rebuilt = q * DMatrix::from_diagonal(&values) * q.transpose();
            symmetrize_in_place(&mut rebuilt);
            rebuilt
        } else {
            sym
        };
        SpdSummary {
            matrix,
            inverse,
            log_det,
            floor,
            clamped,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Whether any eigenvalue was raised to the floor, i.e. the cached inverse
    /// is a pseudo-inverse of the input rather than its exact inverse.
    pub fn is_clamped(&self) -> bool {
        self.clamped
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `vᵀ Σ⁻¹ v`
    pub fn mahalanobis_sq(&self, v: &DVector<f64>) -> f64 {
        (&self.inverse * v).dot(v)
    }
}

fn symmetrized(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            context: "square matrix",
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "symmetric matrix".into(),
        });
    }
    let scale = m.amax().max(1.0);
    let deviation = (m - m.transpose()).amax();
    if deviation > SYMMETRY_TOL * scale {
        return Err(Error::Asymmetric { deviation });
    }
    let mut sym = m.clone();
    symmetrize_in_place(&mut sym);
    Ok(sym)
}

pub(crate) fn symmetrize_in_place(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Log-density of `N(mean, cov)` at `z`.
pub fn gaussian_logpdf(z: &DVector<f64>, mean: &DVector<f64>, cov: &SpdSummary) -> Result<f64> {
    let d = cov.dim();
    for (context, len) in [("logpdf point", z.len()), ("logpdf mean", mean.len())] {
        if len != d {
            return Err(Error::DimensionMismatch {
                context,
                expected: d,
                found: len,
            });
        }
    }
    let dev = z - mean;
    Ok(-0.5 * d as f64 * LN_2PI - 0.5 * cov.log_det() - 0.5 * cov.mahalanobis_sq(&dev))
}

/// Closed-form `KL(N(mean0, cov0) ‖ N(mean1, cov1))`.
pub fn gaussian_kl(
    mean0: &DVector<f64>,
    cov0: &DMatrix<f64>,
    mean1: &DVector<f64>,
    cov1: &DMatrix<f64>,
) -> Result<f64> {
    let d = mean0.len();
    for (context, len) in [
        ("kl mean1", mean1.len()),
        ("kl cov0", cov0.nrows()),
        ("kl cov1", cov1.nrows()),
    ] {
        if len != d {
            return Err(Error::DimensionMismatch {
                context,
                expected: d,
                found: len,
            });
        }
    }
    let chol0 = Cholesky::new(cov0.clone()).ok_or(Error::NotPositiveDefinite)?;
    let chol1 = Cholesky::new(cov1.clone()).ok_or(Error::NotPositiveDefinite)?;
    let log_det = |c: &Cholesky<f64, nalgebra::Dyn>| -> f64 {
        2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    };
    let trace_term = chol1.solve(cov0).trace();
    let diff = mean1 - mean0;
    let maha = diff.dot(&chol1.solve(&diff));
    let kl = 0.5 * (trace_term + maha - d as f64 + log_det(&chol1) - log_det(&chol0));
    Ok(kl.max(0.0))
}

/// CDF of the F distribution with `(d1, d2)` degrees of freedom.
pub fn f_cdf(x: f64, d1: f64, d2: f64) -> Result<f64> {
    check_dof(d1, d2)?;
    if x.is_nan() {
        return Err(Error::InvalidArgument("F CDF at NaN".into()));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    let t = d1 * x / (d1 * x + d2);
    Ok(beta_reg(0.5 * d1, 0.5 * d2, t))
}

/// Quantile of the F distribution: the `x` with `CDF(x; d1, d2) = p`.
pub fn f_quantile(p: f64, d1: f64, d2: f64) -> Result<f64> {
    check_dof(d1, d2)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "quantile level must lie in (0, 1), got {p}"
        )));
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while f_cdf(hi, d1, d2)? < p {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::InvalidArgument("F quantile diverged".into()));
        }
    }
    while hi - lo > 1e-10 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if f_cdf(mid, d1, d2)? < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn check_dof(d1: f64, d2: f64) -> Result<()> {
    if d1 > 0.0 && d2 > 0.0 && d1.is_finite() && d2.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "F degrees of freedom must be positive and finite, got ({d1}, {d2})"
        )))
    }
}

pub(crate) fn ensure_finite(x: &DMatrix<f64>, context: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: context.to_string(),
        })
    }
}

/// Numerically stable `ln Σ exp(v)`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Rowwise softmax of `logits / temperature`.
pub fn softmax_rows(logits: &DMatrix<f64>, temperature: f64) -> DMatrix<f64> {
    let mut out = logits / temperature;
    for mut row in out.row_iter_mut() {
        let values: Vec<f64> = row.iter().copied().collect();
        let lse = log_sum_exp(&values);
        row.apply(|v| *v = (*v - lse).exp());
    }
    out
}

/// L2-normalize every row; errors on a zero-norm row.
pub fn normalize_rows(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = x.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let norm = row.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::ZeroNorm { row: i });
        }
        row /= norm;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
        let a = random_matrix(rng, d, d);
        &a * a.transpose() + DMatrix::identity(d, d) * 0.5
    }

    #[test]
    fn two_point_moments() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 3.0, 0.0]);
        let m = weighted_moments(&x, &[1.0, 1.0]).unwrap();
        assert_eq!(m.mass, 2.0);
        assert_eq!(m.mean, DVector::from_vec(vec![2.0, 0.0]));
        assert_eq!(m.cov, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn one_hot_weights_select_a_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_matrix(&mut rng, 6, 3);
        let mut w = vec![0.0; 6];
        w[4] = 2.5;
        let m = weighted_moments(&x, &w).unwrap();
        assert_relative_eq!(m.mean, x.row(4).transpose(), epsilon = 1e-15);
        assert_relative_eq!(m.cov, DMatrix::zeros(3, 3), epsilon = 1e-28);
    }

    #[test]
    fn moments_match_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_matrix(&mut rng, 50, 4);
        let w: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..1.0)).collect();
        let m = weighted_moments(&x, &w).unwrap();

        let mass: f64 = w.iter().sum();
        let mut mean = [0.0; 4];
        for i in 0..50 {
            for j in 0..4 {
                mean[j] += w[i] * x[(i, j)] / mass;
            }
        }
        let mut cov = [[0.0; 4]; 4];
        for i in 0..50 {
            for a in 0..4 {
                for b in 0..4 {
                    cov[a][b] += w[i] * (x[(i, a)] - mean[a]) * (x[(i, b)] - mean[b]) / mass;
                }
            }
        }
        assert_relative_eq!(m.mass, mass, epsilon = 1e-12);
        for a in 0..4 {
            assert!((m.mean[a] - mean[a]).abs() < 1e-10);
            for b in 0..4 {
                assert!((m.cov[(a, b)] - cov[a][b]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_weight_is_rejected() {
        let x = DMatrix::from_element(3, 2, 1.0);
        assert!(matches!(
            weighted_moments(&x, &[0.0, 0.0, 0.0]),
            Err(Error::ZeroWeight)
        ));
    }

    #[test]
    fn pca_recovers_axis() {
        let x = DMatrix::from_row_slice(4, 3, &[
            -2.0, 0.0, 0.0, //
            -1.0, 0.0, 0.0, //
            1.0, 0.0, 0.0, //
            3.0, 0.0, 0.0,
        ]);
        let pca = PcaProjection::fit(&x, 1).unwrap();
        let row = pca.component_basis.row(0);
        assert_relative_eq!(row[0].abs(), 1.0, epsilon = 1e-12);
        assert!(row[1].abs() < 1e-12 && row[2].abs() < 1e-12);
    }

    #[test]
    fn full_pca_preserves_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_matrix(&mut rng, 30, 5);
        let pca = PcaProjection::fit(&x, 5).unwrap();
        let projected = pca.project(&x).unwrap();
        let var: f64 = weighted_moments(&projected, &vec![1.0; 30]).unwrap().cov.trace();
        assert_relative_eq!(var, pca.total_variance, epsilon = 1e-8);
        // basis orthonormal
        let gram = &pca.component_basis * pca.component_basis.transpose();
        assert_relative_eq!(gram, DMatrix::identity(5, 5), epsilon = 1e-8);
    }

    #[test]
    fn pca_errors() {
        let x = DMatrix::from_element(5, 3, 0.7);
        assert!(matches!(PcaProjection::fit(&x, 1), Err(Error::ZeroVariance)));
        let y = DMatrix::from_fn(3, 4, |i, j| (i * j) as f64);
        assert!(matches!(
            PcaProjection::fit(&y, 4),
            Err(Error::RankBound { requested: 4, bound: 3 })
        ));
    }

    #[test]
    fn regularized_identity() {
        let s = SpdSummary::regularized(&DMatrix::identity(3, 3), 1e-6).unwrap();
        assert_relative_eq!(s.log_det(), 0.0, epsilon = 1e-14);
        assert_relative_eq!(*s.inverse(), DMatrix::identity(3, 3), epsilon = 1e-14);
        assert!(!s.is_clamped());
    }

    #[test]
    fn regularized_clamps_spectrum() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        let s = SpdSummary::regularized(&m, 1e-6).unwrap();
        assert_relative_eq!(s.log_det(), 1e-6f64.ln(), epsilon = 1e-9);
        assert_relative_eq!(s.inverse()[(0, 0)], 1.0, epsilon = 1e-9);
        assert_relative_eq!(s.inverse()[(1, 1)], 1e6, max_relative = 1e-9);
        assert!(s.is_clamped());
        let rel = SpdSummary::with_relative_floor(&m, 1e-6).unwrap();
        assert_relative_eq!(rel.log_det(), 1e-6f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn regularized_inverse_matches_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_spd(&mut rng, 8);
        let s = SpdSummary::regularized(&m, 1e-6).unwrap();
        let b = DVector::from_fn(8, |i, _| i as f64 - 3.0);
        let direct = m.clone().lu().solve(&b).unwrap();
        assert_relative_eq!(s.inverse() * &b, direct, epsilon = 1e-8);
        // above the floor the matrix is untouched
        assert_eq!(*s.matrix(), m);
    }

    #[test]
    fn asymmetric_input_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            SpdSummary::regularized(&m, 1e-6),
            Err(Error::Asymmetric { .. })
        ));
    }

    #[test]
    fn standard_normal_at_mode() {
        let s = SpdSummary::regularized(&DMatrix::identity(1, 1), 1e-6).unwrap();
        let v = gaussian_logpdf(&DVector::zeros(1), &DVector::zeros(1), &s).unwrap();
        assert_relative_eq!(v, -0.918_938_533_204_672_7, epsilon = 1e-15);
    }

    #[test]
    fn logpdf_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cov = random_spd(&mut rng, 5);
        let mean = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        let z = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        let s = SpdSummary::regularized(&cov, 1e-9).unwrap();
        let got = gaussian_logpdf(&z, &mean, &s).unwrap();

        let det = cov.clone().determinant();
        let inv = cov.clone().try_inverse().unwrap();
        let dev = &z - &mean;
        let quad = (dev.transpose() * inv * &dev)[(0, 0)];
        let density = (-0.5 * quad).exp() / ((2.0 * std::f64::consts::PI).powi(5) * det).sqrt();
        assert_relative_eq!(got, density.ln(), epsilon = 1e-10);

        let at_mode = gaussian_logpdf(&mean, &mean, &s).unwrap();
        assert_relative_eq!(at_mode, -2.5 * LN_2PI - 0.5 * s.log_det(), epsilon = 1e-12);
    }

    #[test]
    fn logpdf_dimension_mismatch() {
        let s = SpdSummary::regularized(&DMatrix::identity(2, 2), 1e-6).unwrap();
        assert!(gaussian_logpdf(&DVector::zeros(3), &DVector::zeros(2), &s).is_err());
    }

    #[test]
    fn kl_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cov = random_spd(&mut rng, 4);
        let mean = DVector::from_fn(4, |i, _| i as f64);
        assert!(gaussian_kl(&mean, &cov, &mean, &cov).unwrap() < 1e-12);

        let eye = DMatrix::identity(3, 3);
        let m = DVector::from_vec(vec![0.3, -1.2, 2.0]);
        let kl = gaussian_kl(&DVector::zeros(3), &eye, &m, &eye).unwrap();
        assert_relative_eq!(kl, 0.5 * m.norm_squared(), epsilon = 1e-14);

        let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0, 1.0]));
        assert!(matches!(
            gaussian_kl(&DVector::zeros(3), &bad, &m, &eye),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn f_quantile_table_values() {
        // F(0.95; 1, 10) = 4.9646 in standard tables
        let q = f_quantile(0.95, 1.0, 10.0).unwrap();
        assert!((q - 4.9646).abs() < 5e-4, "{q}");
        // F(0.95; 5, 20) = 2.7109
        let q = f_quantile(0.95, 5.0, 20.0).unwrap();
        assert!((q - 2.7109).abs() < 5e-4, "{q}");
        for d in [1.0, 3.0, 17.5, 200.0] {
            assert!((f_quantile(0.5, d, d).unwrap() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn f_quantile_rejects_bad_levels() {
        assert!(f_quantile(0.0, 2.0, 3.0).is_err());
        assert!(f_quantile(1.0, 2.0, 3.0).is_err());
        assert!(f_quantile(0.5, -2.0, 3.0).is_err());
    }

    #[test]
    fn f_cdf_matches_quadrature() {
        // independent oracle: Simpson integration of the F density
        let density = |x: f64, a: f64, b: f64| -> f64 {
            use statrs::function::gamma::ln_gamma;
            let ln = 0.5 * a * (a / b).ln() + (0.5 * a - 1.0) * x.ln()
                - 0.5 * (a + b) * (1.0 + a * x / b).ln()
                - (ln_gamma(0.5 * a) + ln_gamma(0.5 * b) - ln_gamma(0.5 * (a + b)));
            ln.exp()
        };
        let (a, b, x) = (4.0, 9.0, 2.3);
        let n = 20_000;
        let h = x / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let t = i as f64 * h;
            let f = if t == 0.0 { 0.0 } else { density(t, a, b) };
            let weight = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += weight * f;
        }
        let integral = acc * h / 3.0;
        assert_relative_eq!(f_cdf(x, a, b).unwrap(), integral, epsilon = 1e-8);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1000.0, 0.0, 1000.0]);
        let p = softmax_rows(&logits, 0.5);
        for row in p.row_iter() {
            assert_relative_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
    }
}
