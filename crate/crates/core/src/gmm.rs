//! Incrementally estimated class-conditional Gaussian mixture.
//!
//! The state carries cumulative soft counts `s_k` as sufficient statistics, so
//! each M-step folds one batch into a running weighted average without
//! revisiting past data.

use std::io::{self, Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::homogeneity::CovarianceMode;
use crate::stats::{ensure_finite, log_sum_exp, SpdSummary, DEFAULT_RELATIVE_FLOOR, LN_2PI};
use crate::stream::ClassPrototypes;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GDAS";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmConfig {
    /// Ridge strength ϵ in `Σ ← (1−ϵ)Σ + ϵ·σ²·I`.
    pub reg_strength: f64,
    /// σ² of the ridge target.
    pub prior_variance: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig {
            reg_strength: 0.01,
            prior_variance: 0.1,
        }
    }
}

impl GmmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.reg_strength) {
            return Err(Error::Config(format!(
                "reg_strength must lie in [0, 1], got {}",
                self.reg_strength
            )));
        }
        if !(self.prior_variance > 0.0 && self.prior_variance.is_finite()) {
            return Err(Error::Config(format!(
                "prior_variance must be positive, got {}",
                self.prior_variance
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Covariances {
    Shared(DMatrix<f64>),
    PerClass(Vec<DMatrix<f64>>),
}

impl Covariances {
    pub fn mode(&self) -> CovarianceMode {
        match self {
            Covariances::Shared(_) => CovarianceMode::Homogeneous,
            Covariances::PerClass(_) => CovarianceMode::Heterogeneous,
        }
    }

    pub fn stored(&self) -> usize {
        match self {
            Covariances::Shared(_) => 1,
            Covariances::PerClass(v) => v.len(),
        }
    }

    fn iter_mut(&mut self) -> impl Iterator<Item = &mut DMatrix<f64>> {
        match self {
            Covariances::Shared(m) => std::slice::from_mut(m).iter_mut(),
            Covariances::PerClass(v) => v.iter_mut(),
        }
    }

    fn iter(&self) -> impl Iterator<Item = &DMatrix<f64>> {
        match self {
            Covariances::Shared(m) => std::slice::from_ref(m).iter(),
            Covariances::PerClass(v) => v.iter(),
        }
    }
}

/// Soft assignments `γ_ik`; rows lie on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities(DMatrix<f64>);

impl Responsibilities {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        for (i, row) in matrix.row_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("responsibility row {i}"),
                });
            }
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) || (row.sum() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "responsibility row {i} is not on the simplex"
                )));
            }
        }
        Ok(Responsibilities(matrix))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmState {
    means: DMatrix<f64>,
    covariances: Covariances,
    priors: DVector<f64>,
    counts: DVector<f64>,
    step: u64,
    config: GmmConfig,
}

impl GmmState {
    /// Means at the L2-normalized prototypes, identity covariance(s), unit
    /// soft counts and uniform priors.
    pub fn init(prototypes: &ClassPrototypes, mode: CovarianceMode, config: GmmConfig) -> Result<Self> {
        config.validate()?;
        let means = prototypes.normalized();
        let (k, d) = means.shape();
        let eye = DMatrix::identity(d, d);
        let covariances = match mode {
            CovarianceMode::Homogeneous => Covariances::Shared(eye),
            CovarianceMode::Heterogeneous => Covariances::PerClass(vec![eye; k]),
        };
        Ok(GmmState {
            means,
            covariances,
            priors: DVector::from_element(k, 1.0 / k as f64),
            counts: DVector::from_element(k, 1.0),
            step: 0,
            config,
        })
    }

    /// Assemble a state from explicit parameters; priors are derived from counts.
    pub fn from_parts(
        means: DMatrix<f64>,
        covariances: Covariances,
        counts: DVector<f64>,
        step: u64,
        config: GmmConfig,
    ) -> Result<Self> {
        config.validate()?;
        let (k, d) = means.shape();
        if counts.len() != k {
            return Err(Error::DimensionMismatch {
                context: "soft counts",
                expected: k,
                found: counts.len(),
            });
        }
        if let Covariances::PerClass(v) = &covariances {
            if v.len() != k {
                return Err(Error::DimensionMismatch {
                    context: "per-class covariances",
                    expected: k,
                    found: v.len(),
                });
            }
        }
        for c in covariances.iter() {
            if c.shape() != (d, d) {
                return Err(Error::DimensionMismatch {
                    context: "covariance shape",
                    expected: d,
                    found: c.nrows(),
                });
            }
        }
        if counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) || counts.sum() <= 0.0 {
            return Err(Error::InvalidArgument("soft counts must be non-negative with positive total".into()));
        }
        ensure_finite(&means, "means")?;
        let priors = &counts / counts.sum();
        Ok(GmmState {
            means,
            covariances,
            priors,
            counts,
            step,
            config,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.means.nrows()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn mode(&self) -> CovarianceMode {
        self.covariances.mode()
    }

    pub fn means(&self) -> &DMatrix<f64> {
        &self.means
    }

    pub fn covariances(&self) -> &Covariances {
        &self.covariances
    }

    /// Covariance used for class `k` (the shared one in homogeneous mode).
    pub fn covariance(&self, k: usize) -> &DMatrix<f64> {
        match &self.covariances {
            Covariances::Shared(m) => m,
            Covariances::PerClass(v) => &v[k],
        }
    }

    pub fn priors(&self) -> &DVector<f64> {
        &self.priors
    }

    pub fn counts(&self) -> &DVector<f64> {
        &self.counts
    }

    pub fn total_count(&self) -> f64 {
        self.counts.sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> GmmConfig {
        self.config
    }

    /// Clamped spectral summaries: one per stored covariance.
    pub fn covariance_summaries(&self) -> Result<Vec<SpdSummary>> {
        self.covariances
            .iter()
            .map(|c| SpdSummary::with_relative_floor(c, DEFAULT_RELATIVE_FLOOR))
            .collect()
    }

    fn check_features(&self, features: &DMatrix<f64>) -> Result<()> {
        if features.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "features vs mixture dimension",
                expected: self.dim(),
                found: features.ncols(),
            });
        }
        ensure_finite(features, "mixture input")
    }

    /// `ln π_k + ln N(z_i | μ_k, Σ_k)` for every sample and class.
    pub fn log_joint(&self, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_features(features)?;
        let summaries = self.covariance_summaries()?;
        let (n, k) = (features.nrows(), self.num_classes());
        let constant = -0.5 * self.dim() as f64 * LN_2PI;
        let mut out = DMatrix::zeros(n, k);
        for c in 0..k {
            let cov = if summaries.len() == 1 { &summaries[0] } else { &summaries[c] };
            let mean = self.means.row(c);
            let log_prior = self.priors[c].ln();
            for i in 0..n {
                let dev = (features.row(i) - mean).transpose();
                out[(i, c)] = log_prior + constant - 0.5 * cov.log_det() - 0.5 * cov.mahalanobis_sq(&dev);
            }
        }
        Ok(out)
    }

    /// Posterior responsibilities under the current (previous-step) parameters.
    pub fn e_step(&self, features: &DMatrix<f64>) -> Result<Responsibilities> {
        let mut joint = self.log_joint(features)?;
        for (i, mut row) in joint.row_iter_mut().enumerate() {
            let values: Vec<f64> = row.iter().copied().collect();
            let lse = log_sum_exp(&values);
            if !lse.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("log-evidence of sample {i}"),
                });
            }
            row.apply(|v| *v = (*v - lse).exp());
        }
        Ok(Responsibilities(joint))
    }

    /// Fold one batch into the sufficient statistics: counts, means,
    /// covariances and priors, without the ridge step.
    pub fn accumulate(&mut self, features: &DMatrix<f64>, resp: &Responsibilities) -> Result<()> {
        self.check_features(features)?;
        let gamma = resp.matrix();
        if gamma.shape() != (features.nrows(), self.num_classes()) {
            return Err(Error::DimensionMismatch {
                context: "responsibilities shape",
                expected: features.nrows() * self.num_classes(),
                found: gamma.len(),
            });
        }
        if gamma.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "responsibilities".into(),
            });
        }
        let (n, k) = gamma.shape();
        let d = self.dim();
        let previous_counts = self.counts.clone();
        let previous_total = previous_counts.sum();

        let batch_mass = gamma.row_sum().transpose();
        let counts = &previous_counts + &batch_mass;
        let mut means = DMatrix::zeros(k, d);
        for c in 0..k {
            let mut acc = self.means.row(c).transpose() * previous_counts[c];
            for i in 0..n {
                if gamma[(i, c)] != 0.0 {
                    acc.axpy(gamma[(i, c)], &features.row(i).transpose(), 1.0);
                }
            }
            means.set_row(c, &(acc / counts[c]).transpose());
        }

        // scatter of each class around its updated mean
        let scatter = |c: usize| -> DMatrix<f64> {
            let mut s = DMatrix::zeros(d, d);
            let mean = means.row(c).transpose();
            for i in 0..n {
                let g = gamma[(i, c)];
                if g != 0.0 {
                    let dev = features.row(i).transpose() - &mean;
                    s.ger(g, &dev, &dev, 1.0);
                }
            }
            s
        };
        match &mut self.covariances {
            Covariances::Shared(sigma) => {
                let mut acc = &*sigma * previous_total;
                for c in 0..k {
                    acc += scatter(c);
                }
                *sigma = acc / (previous_total + n as f64);
            }
            Covariances::PerClass(sigmas) => {
                for (c, sigma) in sigmas.iter_mut().enumerate() {
                    let acc = &*sigma * previous_counts[c] + scatter(c);
                    *sigma = acc / counts[c];
                }
            }
        }
        for sigma in self.covariances.iter_mut() {
            crate::stats::symmetrize_in_place(sigma);
        }
        self.priors = &counts / counts.sum();
        self.counts = counts;
        self.means = means;
        Ok(())
    }

    /// `Σ ← (1−ϵ)Σ + ϵ·σ²_prior·I` on every stored covariance.
    pub fn regularize(&mut self) {
        let GmmConfig {
            reg_strength,
            prior_variance,
        } = self.config;
        for sigma in self.covariances.iter_mut() {
            *sigma *= 1.0 - reg_strength;
            for j in 0..sigma.nrows() {
                sigma[(j, j)] += reg_strength * prior_variance;
            }
        }
    }

    /// One incremental M-step: accumulate, regularize, advance the step counter.
    pub fn m_step(&mut self, features: &DMatrix<f64>, resp: &Responsibilities) -> Result<()> {
        self.accumulate(features, resp)?;
        self.regularize();
        self.step += 1;
        Ok(())
    }

    /// E-step with the current state followed by the M-step.
    pub fn update(&mut self, features: &DMatrix<f64>) -> Result<Responsibilities> {
        let resp = self.e_step(features)?;
        self.m_step(features, &resp)?;
        Ok(resp)
    }

    /// Mean over samples of `ln Σ_k π_k N(z | μ_k, Σ_k)`.
    pub fn marginal_loglik(&self, features: &DMatrix<f64>) -> Result<f64> {
        let joint = self.log_joint(features)?;
        let total: f64 = joint
            .row_iter()
            .map(|row| log_sum_exp(&row.iter().copied().collect::<Vec<_>>()))
            .sum();
        Ok(total / features.nrows() as f64)
    }

    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&[match self.mode() {
            CovarianceMode::Homogeneous => 0u8,
            CovarianceMode::Heterogeneous => 1u8,
        }])?;
        w.write_all(&(self.num_classes() as u32).to_le_bytes())?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        w.write_all(&self.step.to_le_bytes())?;
        write_f64_rows(w, &self.means)?;
        for sigma in self.covariances.iter() {
            write_f64_rows(w, sigma)?;
        }
        for v in self.priors.iter().chain(self.counts.iter()) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(r: &mut R, config: GmmConfig) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::UnrecognizedFormat("<state checkpoint>".into()));
        }
        let mut mode = [0u8; 1];
        read_exact(r, &mut mode)?;
        let k = read_u32(r)? as usize;
        let d = read_u32(r)? as usize;
        let mut step = [0u8; 8];
        read_exact(r, &mut step)?;
        let step = u64::from_le_bytes(step);
        let means = read_f64_rows(r, k, d)?;
        let covariances = match mode[0] {
            0 => Covariances::Shared(read_f64_rows(r, d, d)?),
            1 => Covariances::PerClass((0..k).map(|_| read_f64_rows(r, d, d)).collect::<Result<_>>()?),
            other => {
                return Err(Error::Checksum(format!("unknown covariance mode byte {other}")));
            }
        };
        let priors = read_f64_rows(r, 1, k)?.transpose();
        let counts = DVector::from_column_slice(read_f64_rows(r, 1, k)?.as_slice());
        let state = GmmState::from_parts(means, covariances, counts, step, config)?;
        if (0..k).any(|c| (state.priors[c] - priors[c]).abs() > 1e-12) {
            return Err(Error::Checksum("stored priors disagree with soft counts".into()));
        }
        Ok(state)
    }
}

pub(crate) fn write_f64_rows<W: Write>(w: &mut W, m: &DMatrix<f64>) -> io::Result<()> {
    for row in m.row_iter() {
        for v in row.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Truncated("<checkpoint>".into()),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f64_rows<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let mut buf = vec![0u8; rows * cols * 8];
    read_exact(r, &mut buf)?;
    Ok(DMatrix::from_row_iterator(
        rows,
        cols,
        buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())),
    ))
}
