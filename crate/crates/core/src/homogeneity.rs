//! Covariance homogeneity test: sketch-weighted class moments in a PCA
//! subspace, Box's M with an F-distribution correction, and the resulting
//! choice between a shared (LDA) and per-class (QDA) covariance model.

use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::stats::{f_quantile, weighted_moments, PcaProjection, SpdSummary, DEFAULT_RELATIVE_FLOOR};

pub const DEFAULT_PCA_DIM: usize = 10;
pub const DEFAULT_KAPPA: f64 = 0.05;
/// Guard added to λ before dividing.
pub const LAMBDA_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CovarianceMode {
    /// One covariance shared by all classes (LDA).
    Homogeneous,
    /// One covariance per class (QDA).
    Heterogeneous,
}

impl CovarianceMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CovarianceMode::Homogeneous => "homogeneous",
            CovarianceMode::Heterogeneous => "heterogeneous",
        }
    }
}

impl fmt::Display for CovarianceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Soft per-class moments in the projected space.
#[derive(Debug, Clone)]
pub struct ClassMoments {
    pub counts: Vec<f64>,
    /// `K × d`
    pub means: DMatrix<f64>,
    /// 1/n̂-normalized per-class covariances (zero for empty classes).
    pub covariances: Vec<DMatrix<f64>>,
    /// (n̂_k − 1)-weighted average over included classes.
    pub pooled: DMatrix<f64>,
    pub included: Vec<bool>,
}

impl ClassMoments {
    /// Estimate moments with `sketch_probs[i, k]` as the weight of row `i` in class `k`.
    ///
    /// Classes whose soft count does not exceed `max(min_count, d + 1)` are
    /// masked out. Fewer than two surviving classes is reported as
    /// [`Error::TestInfeasible`].
    pub fn estimate(projected: &DMatrix<f64>, sketch_probs: &DMatrix<f64>, min_count: f64) -> Result<Self> {
        let (n, d) = projected.shape();
        if d == 0 {
            return Err(Error::InvalidArgument("projected dimension is zero".into()));
        }
        if sketch_probs.nrows() != n {
            return Err(Error::DimensionMismatch {
                context: "sketch probabilities rows",
                expected: n,
                found: sketch_probs.nrows(),
            });
        }
        for (i, row) in sketch_probs.row_iter().enumerate() {
            if (row.sum() - 1.0).abs() > 1e-6 || row.iter().any(|p| *p < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "sketch probabilities row {i} is not on the simplex"
                )));
            }
        }
        let k = sketch_probs.ncols();
        let mut counts = Vec::with_capacity(k);
        let mut means = DMatrix::zeros(k, d);
        let mut covariances = Vec::with_capacity(k);
        for c in 0..k {
            let w: Vec<f64> = sketch_probs.column(c).iter().copied().collect();
            let mass: f64 = w.iter().sum();
            counts.push(mass);
            if mass > 0.0 {
                let m = weighted_moments(projected, &w)?;
                means.set_row(c, &m.mean.transpose());
                covariances.push(m.cov);
            } else {
                covariances.push(DMatrix::zeros(d, d));
            }
        }
        Self::from_parts(counts, means, covariances, min_count)
    }

    /// Assemble moments from per-class statistics and compute the pooled covariance.
    pub fn from_parts(
        counts: Vec<f64>,
        means: DMatrix<f64>,
        covariances: Vec<DMatrix<f64>>,
        min_count: f64,
    ) -> Result<Self> {
        let k = counts.len();
        if covariances.len() != k || means.nrows() != k {
            return Err(Error::DimensionMismatch {
                context: "class moment parts",
                expected: k,
                found: covariances.len(),
            });
        }
        let d = means.ncols();
        let threshold = min_count.max(d as f64 + 1.0);
        let included: Vec<bool> = counts.iter().map(|&c| c > threshold).collect();
        let n_included = included.iter().filter(|&&b| b).count();
        if n_included < 2 {
            return Err(Error::TestInfeasible {
                included: n_included,
            });
        }
        let mut pooled = DMatrix::zeros(d, d);
        let mut dof = 0.0;
        for c in (0..k).filter(|&c| included[c]) {
            pooled += &covariances[c] * (counts[c] - 1.0);
            dof += counts[c] - 1.0;
        }
        pooled /= dof;
        Ok(ClassMoments {
            counts,
            means,
            covariances,
            pooled,
            included,
        })
    }

    pub fn dim(&self) -> usize {
        self.pooled.nrows()
    }

    pub fn included_count(&self) -> usize {
        self.included.iter().filter(|&&b| b).count()
    }
}

/// Every statistic produced by the Box's M / F pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneityReport {
    pub m_statistic: f64,
    pub scaling_factor: f64,
    pub corrected_m: f64,
    pub lambda: f64,
    pub d1: f64,
    pub d2: f64,
    pub f_statistic: f64,
    pub critical_value: f64,
    pub kappa: f64,
    pub classes_tested: usize,
    pub dim: usize,
    pub decision: CovarianceMode,
}

impl fmt::Display for HomogeneityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "box_m={:.12e}", self.m_statistic)?;
        writeln!(f, "scaling_c={:.12e}", self.scaling_factor)?;
        writeln!(f, "m_star={:.12e}", self.corrected_m)?;
        writeln!(f, "lambda={:.12e}", self.lambda)?;
        writeln!(f, "d1={:.12e}", self.d1)?;
        writeln!(f, "d2={:.12e}", self.d2)?;
        writeln!(f, "f_statistic={:.12e}", self.f_statistic)?;
        writeln!(f, "f_critical={:.12e}", self.critical_value)?;
        writeln!(f, "kappa={}", self.kappa)?;
        writeln!(f, "classes_tested={}", self.classes_tested)?;
        writeln!(f, "pca_dim={}", self.dim)?;
        writeln!(f, "decision={}", self.decision)
    }
}

/// Box's M test with the F-distribution correction at significance `kappa`.
pub fn box_m_test(moments: &ClassMoments, kappa: f64) -> Result<HomogeneityReport> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "significance level must lie in (0, 1), got {kappa}"
        )));
    }
    let d = moments.dim();
    let classes: Vec<usize> = (0..moments.counts.len())
        .filter(|&c| moments.included[c])
        .collect();
    if classes.len() < 2 {
        return Err(Error::TestInfeasible {
            included: classes.len(),
        });
    }
    let k = classes.len() as f64;
    let df = d as f64;

    let pooled = SpdSummary::with_relative_floor(&moments.pooled, DEFAULT_RELATIVE_FLOOR)?;
    let mut weighted_logdet = 0.0;
    let mut dof_sum = 0.0;
    let mut inv_dof_sum = 0.0;
    let mut total = 0.0;
    for &c in &classes {
        let n = moments.counts[c];
        let cov = SpdSummary::with_relative_floor(&moments.covariances[c], DEFAULT_RELATIVE_FLOOR)?;
        weighted_logdet += (n - 1.0) * cov.log_det();
        dof_sum += n - 1.0;
        inv_dof_sum += 1.0 / (n - 1.0);
        total += n;
    }
    let m_statistic = dof_sum * pooled.log_det() - weighted_logdet;

    let scaling_factor = 1.0
        - (2.0 * df * df + 3.0 * df - 1.0) / (6.0 * (df + 1.0) * (k - 1.0))
            * (inv_dof_sum - 1.0 / (total - k));
    if !(scaling_factor > 0.0) {
        return Err(Error::TestInfeasible {
            included: classes.len(),
        });
    }
    let corrected_m = m_statistic / scaling_factor;
    let lambda = df * (df + 1.0) * (k - 1.0) * (k + 1.0) / (6.0 * (total - k - (k - 1.0)));
    let d1 = df * (df + 1.0) * (k - 1.0) / 2.0;
    let d2 = (d1 + 2.0) / (lambda + LAMBDA_EPS);
    let f_statistic = corrected_m / (d1 * (1.0 + corrected_m / d2));
    let critical_value = f_quantile(1.0 - kappa, d1, d2)?;
    let decision = if f_statistic > critical_value {
        CovarianceMode::Heterogeneous
    } else {
        CovarianceMode::Homogeneous
    };
    Ok(HomogeneityReport {
        m_statistic,
        scaling_factor,
        corrected_m,
        lambda,
        d1,
        d2,
        f_statistic,
        critical_value,
        kappa,
        classes_tested: classes.len(),
        dim: d,
        decision,
    })
}

/// Outcome of the first-batch covariance structure selection.
#[derive(Debug, Clone)]
pub struct ModeSelection {
    pub mode: CovarianceMode,
    pub report: Option<HomogeneityReport>,
    /// Set when the test could not run and the homogeneous default was used.
    pub fallback: Option<String>,
}

impl ModeSelection {
    pub fn fixed(mode: CovarianceMode, reason: impl Into<String>) -> Self {
        ModeSelection {
            mode,
            report: None,
            fallback: Some(reason.into()),
        }
    }
}

impl fmt::Display for ModeSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "covariance_mode={}", self.mode)?;
        if let Some(reason) = &self.fallback {
            writeln!(f, "mode_fallback={reason}")?;
        }
        if let Some(report) = &self.report {
            write!(f, "{report}")?;
        }
        Ok(())
    }
}

/// Fit PCA on `features`, estimate sketch-weighted moments and run the test.
/// Any infeasibility (too few samples, too little mass per class, degenerate
/// data) falls back to [`CovarianceMode::Homogeneous`].
pub fn select_covariance_mode(
    features: &DMatrix<f64>,
    sketch_probs: &DMatrix<f64>,
    pca_dim: usize,
    kappa: f64,
) -> Result<ModeSelection> {
    let pca = match PcaProjection::fit(features, pca_dim) {
        Ok(p) => p,
        Err(e @ (Error::RankBound { .. } | Error::ZeroVariance | Error::InvalidArgument(_))) => {
            return Ok(ModeSelection::fixed(
                CovarianceMode::Homogeneous,
                format!("pca infeasible ({e})"),
            ))
        }
        Err(e) => return Err(e),
    };
    let projected = pca.project(features)?;
    let moments = match ClassMoments::estimate(&projected, sketch_probs, 0.0) {
        Ok(m) => m,
        Err(e @ Error::TestInfeasible { .. }) => {
            return Ok(ModeSelection::fixed(CovarianceMode::Homogeneous, e.to_string()))
        }
        Err(e) => return Err(e),
    };
    match box_m_test(&moments, kappa) {
        Ok(report) => Ok(ModeSelection {
            mode: report.decision,
            report: Some(report),
            fallback: None,
        }),
        Err(e @ Error::TestInfeasible { .. }) => {
            Ok(ModeSelection::fixed(CovarianceMode::Homogeneous, e.to_string()))
        }
        Err(e) => Err(e),
    }
}
