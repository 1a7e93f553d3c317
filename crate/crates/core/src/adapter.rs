//! Per-dimension affine feature adapter trained by self-paced soft
//! cross-entropy, with an exponential moving average shadow.

use std::io::{self, Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gmm::{read_exact, read_f64_rows};
use crate::stats::{ensure_finite, normalize_rows, softmax_rows};
use crate::stream::ClassPrototypes;

pub const ADAPTER_MAGIC: &[u8; 4] = b"GDAA";
pub const DEFAULT_LR: f64 = 0.005;
pub const DEFAULT_EMA_DECAY: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdapterConfig {
    pub lr: f64,
    pub ema_decay: f64,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        AdapterConfig {
            lr: DEFAULT_LR,
            ema_decay: DEFAULT_EMA_DECAY,
        }
    }
}

impl AdapterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(Error::Config(format!("ema decay must lie in [0, 1], got {}", self.ema_decay)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSet {
    Live,
    Ema,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    SkippedNonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineLoss {
    pub value: f64,
    pub grad_scale: DVector<f64>,
    pub grad_shift: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterState {
    scale: DVector<f64>,
    shift: DVector<f64>,
    ema_scale: DVector<f64>,
    ema_shift: DVector<f64>,
    config: AdapterConfig,
    steps: u64,
    skipped: u64,
}

impl AdapterState {
    pub fn new(dim: usize, config: AdapterConfig) -> Result<Self> {
        config.validate()?;
        if dim == 0 {
            return Err(Error::InvalidArgument("adapter dimension must be positive".into()));
        }
        Ok(AdapterState {
            scale: DVector::from_element(dim, 1.0),
            shift: DVector::zeros(dim),
            ema_scale: DVector::from_element(dim, 1.0),
            ema_shift: DVector::zeros(dim),
            config,
            steps: 0,
            skipped: 0,
        })
    }

    /// Build from explicit live parameters; the shadow starts equal to them.
    pub fn from_params(scale: DVector<f64>, shift: DVector<f64>, config: AdapterConfig) -> Result<Self> {
        let mut s = AdapterState::new(scale.len(), config)?;
        if shift.len() != scale.len() {
            return Err(Error::DimensionMismatch {
                context: "adapter shift",
                expected: scale.len(),
                found: shift.len(),
            });
        }
        if scale.iter().chain(shift.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "adapter parameters".into(),
            });
        }
        s.ema_scale = scale.clone();
        s.ema_shift = shift.clone();
        s.scale = scale;
        s.shift = shift;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn scale(&self) -> &DVector<f64> {
        &self.scale
    }

    pub fn shift(&self) -> &DVector<f64> {
        &self.shift
    }

    pub fn config(&self) -> AdapterConfig {
        self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn skipped_steps(&self) -> u64 {
        self.skipped
    }

    pub fn ema_snapshot(&self) -> (DVector<f64>, DVector<f64>) {
        (self.ema_scale.clone(), self.ema_shift.clone())
    }

    fn params(&self, set: ParamSet) -> (&DVector<f64>, &DVector<f64>) {
        match set {
            ParamSet::Live => (&self.scale, &self.shift),
            ParamSet::Ema => (&self.ema_scale, &self.ema_shift),
        }
    }

    fn check_input(&self, raw: &DMatrix<f64>) -> Result<()> {
        if raw.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "adapter input",
                expected: self.dim(),
                found: raw.ncols(),
            });
        }
        ensure_finite(raw, "adapter input")
    }

    fn affine(&self, raw: &DMatrix<f64>, set: ParamSet) -> DMatrix<f64> {
        let (g, b) = self.params(set);
        let mut u = raw.clone();
        for mut row in u.row_iter_mut() {
            for j in 0..row.len() {
                row[j] = g[j] * row[j] + b[j];
            }
        }
        u
    }

    /// `g ⊙ x + b`, then rowwise L2 normalization.
    pub fn forward(&self, raw: &DMatrix<f64>, set: ParamSet) -> Result<DMatrix<f64>> {
        self.check_input(raw)?;
        normalize_rows(&self.affine(raw, set))
    }

    /// Loss and analytic gradient at the live parameters. `target` holds the
    /// fixed adapted distribution, one simplex row per sample.
    pub fn loss_and_gradient(
        &self,
        raw: &DMatrix<f64>,
        prototypes: &ClassPrototypes,
        target: &DMatrix<f64>,
    ) -> Result<RefineLoss> {
        self.check_input(raw)?;
        let (n, k) = (raw.nrows(), prototypes.num_classes());
        if prototypes.dim() != self.dim() || target.shape() != (n, k) {
            return Err(Error::DimensionMismatch {
                context: "adapter target",
                expected: n * k,
                found: target.len(),
            });
        }
        let tau = prototypes.temperature();
        let w = prototypes.normalized();
        let u = self.affine(raw, ParamSet::Live);
        let z = normalize_rows(&u)?;
        let logits = &z * w.transpose();
        let p = softmax_rows(&logits, tau);

        let mut value = 0.0;
        let mut grad_scale = DVector::zeros(self.dim());
        let mut grad_shift = DVector::zeros(self.dim());
        for i in 0..n {
            let mut row_grad = DVector::zeros(k);
            for c in 0..k {
                if target[(i, c)] > 0.0 {
                    value -= target[(i, c)] * p[(i, c)].ln();
                }
                row_grad[c] = (p[(i, c)] - target[(i, c)]) / (tau * n as f64);
            }
            let a = w.transpose() * row_grad;
            let zi = z.row(i).transpose();
            let du = (&a - &zi * zi.dot(&a)) / u.row(i).norm();
            for j in 0..self.dim() {
                grad_scale[j] += du[j] * raw[(i, j)];
                grad_shift[j] += du[j];
            }
        }
        Ok(RefineLoss {
            value: value / n as f64,
            grad_scale,
            grad_shift,
        })
    }

    /// One descent step on the live parameters followed by the EMA update.
    /// A non-finite gradient leaves every parameter untouched.
    pub fn backward_and_step(
        &mut self,
        raw: &DMatrix<f64>,
        prototypes: &ClassPrototypes,
        target: &DMatrix<f64>,
    ) -> Result<StepOutcome> {
        let loss = self.loss_and_gradient(raw, prototypes, target)?;
        if loss
            .grad_scale
            .iter()
            .chain(loss.grad_shift.iter())
            .any(|v| !v.is_finite())
        {
            self.skipped += 1;
            return Ok(StepOutcome::SkippedNonFinite);
        }
        self.scale -= &loss.grad_scale * self.config.lr;
        self.shift -= &loss.grad_shift * self.config.lr;
        self.ema_update();
        self.steps += 1;
        Ok(StepOutcome::Applied)
    }

    /// `θ_ema ← β θ_ema + (1 − β) θ`.
    pub fn ema_update(&mut self) {
        let beta = self.config.ema_decay;
        if beta == 1.0 {
            return;
        }
        self.ema_scale = &self.ema_scale * beta + &self.scale * (1.0 - beta);
        self.ema_shift = &self.ema_shift * beta + &self.shift * (1.0 - beta);
    }

    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(ADAPTER_MAGIC)?;
        for v in [&self.scale, &self.shift, &self.ema_scale, &self.ema_shift] {
            for x in v.iter() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(r: &mut R, dim: usize, config: AdapterConfig) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != ADAPTER_MAGIC {
            return Err(Error::UnrecognizedFormat("<adapter checkpoint>".into()));
        }
        let mut read_vec = || -> Result<DVector<f64>> {
            let m = read_f64_rows(r, 1, dim)?;
            Ok(DVector::from_column_slice(m.as_slice()))
        };
        let (scale, shift, ema_scale, ema_shift) = (read_vec()?, read_vec()?, read_vec()?, read_vec()?);
        let mut s = AdapterState::from_params(scale, shift, config)?;
        if ema_scale.iter().chain(ema_shift.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "adapter ema parameters".into(),
            });
        }
        s.ema_scale = ema_scale;
        s.ema_shift = ema_shift;
        Ok(s)
    }
}

/// `−(1/N) Σ_i Σ_k softmax(ℓ^adapt_i)_k · ln softmax(ℓ^sketch_i / τ)_k`.
pub fn refine_loss(sketch_logits: &DMatrix<f64>, adapted_logits: &DMatrix<f64>, tau: f64) -> Result<f64> {
    if sketch_logits.shape() != adapted_logits.shape() {
        return Err(Error::DimensionMismatch {
            context: "refine loss logits",
            expected: sketch_logits.len(),
            found: adapted_logits.len(),
        });
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    let q = softmax_rows(adapted_logits, 1.0);
    let p = softmax_rows(sketch_logits, tau);
    let mut total = 0.0;
    for (qi, pi) in q.iter().zip(p.iter()) {
        if *qi > 0.0 {
            total -= qi * pi.ln();
        }
    }
    Ok(total / sketch_logits.nrows().max(1) as f64)
}
