//! Prediction calibration: cosine sketch, Gaussian discriminant scores and
//! logit fusion.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gmm::GmmState;
use crate::stats::{ensure_finite, softmax_rows};
use crate::stream::ClassPrototypes;

pub const DEFAULT_ALPHA: f64 = 1.0;

/// Zero-shot estimate: cosine logits and their temperature softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Sketch {
    pub logits: DMatrix<f64>,
    pub probs: DMatrix<f64>,
}

pub fn sketch(features: &DMatrix<f64>, prototypes: &ClassPrototypes) -> Result<Sketch> {
    if features.ncols() != prototypes.dim() {
        return Err(Error::DimensionMismatch {
            context: "features vs prototypes",
            expected: prototypes.dim(),
            found: features.ncols(),
        });
    }
    ensure_finite(features, "sketch input")?;
    let w = prototypes.normalized();
    let mut logits = features * w.transpose();
    for (i, mut row) in logits.row_iter_mut().enumerate() {
        let norm = features.row(i).norm();
        if !(norm > 0.0) {
            return Err(Error::ZeroNorm { row: i });
        }
        row.apply(|v| *v = (*v / norm).clamp(-1.0, 1.0));
    }
    let probs = softmax_rows(&logits, prototypes.temperature());
    Ok(Sketch { logits, probs })
}

/// `D_k(z) = ln π_k − ½ Δzᵀ Σ_k⁺ Δz − ½ ln|Σ_k|` with the shared covariance
/// substituted for every class in homogeneous mode.
pub fn discriminant_scores(state: &GmmState, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if features.ncols() != state.dim() {
        return Err(Error::DimensionMismatch {
            context: "features vs mixture dimension",
            expected: state.dim(),
            found: features.ncols(),
        });
    }
    ensure_finite(features, "discriminant input")?;
    let summaries = state.covariance_summaries()?;
    let (n, k) = (features.nrows(), state.num_classes());
    let mut scores = DMatrix::zeros(n, k);
    for c in 0..k {
        let cov = if summaries.len() == 1 { &summaries[0] } else { &summaries[c] };
        let mean = state.means().row(c);
        let base = state.priors()[c].ln() - 0.5 * cov.log_det();
        for i in 0..n {
            let dev = (features.row(i) - mean).transpose();
            scores[(i, c)] = base - 0.5 * cov.mahalanobis_sq(&dev);
        }
    }
    Ok(scores)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fusion {
    pub adapted_logits: DMatrix<f64>,
    pub predictions: Vec<usize>,
}

/// `ℓ_adapt = ℓ_sketch + α·D`, then rowwise argmax.
pub fn fuse_and_predict(sketch_logits: &DMatrix<f64>, scores: &DMatrix<f64>, alpha: f64) -> Result<Fusion> {
    if sketch_logits.shape() != scores.shape() {
        return Err(Error::DimensionMismatch {
            context: "sketch logits vs discriminant scores",
            expected: sketch_logits.len(),
            found: scores.len(),
        });
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("fusion weight must be >= 0, got {alpha}")));
    }
    let adapted_logits = if alpha == 0.0 {
        sketch_logits.clone()
    } else {
        sketch_logits + scores * alpha
    };
    let predictions = argmax_rows(&adapted_logits);
    Ok(Fusion {
        adapted_logits,
        predictions,
    })
}

/// Rowwise argmax; ties go to the lowest class index.
pub fn argmax_rows(m: &DMatrix<f64>) -> Vec<usize> {
    m.row_iter()
        .map(|row| {
            let mut best = 0;
            for (k, v) in row.iter().enumerate().skip(1) {
                if *v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Everything produced by one calibration pass over a batch.
#[derive(Debug, Clone)]
pub struct LogitBundle {
    pub sketch_logits: DMatrix<f64>,
    pub sketch_probs: DMatrix<f64>,
    pub discriminant_scores: DMatrix<f64>,
    pub adapted_logits: DMatrix<f64>,
    pub predictions: Vec<usize>,
    pub alpha: f64,
}

impl LogitBundle {
    pub fn compute(
        state: &GmmState,
        features: &DMatrix<f64>,
        prototypes: &ClassPrototypes,
        alpha: f64,
    ) -> Result<Self> {
        let Sketch { logits, probs } = sketch(features, prototypes)?;
        let scores = discriminant_scores(state, features)?;
        let Fusion {
            adapted_logits,
            predictions,
        } = fuse_and_predict(&logits, &scores, alpha)?;
        Ok(LogitBundle {
            sketch_logits: logits,
            sketch_probs: probs,
            discriminant_scores: scores,
            adapted_logits,
            predictions,
            alpha,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::{Covariances, GmmConfig};
    use crate::homogeneity::CovarianceMode;
    use crate::stats::{gaussian_logpdf, SpdSummary, LN_2PI};
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn orthogonal_prototypes() -> ClassPrototypes {
        ClassPrototypes::unnamed(DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]), 0.01).unwrap()
    }

    fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(d, d) * 0.3
    }

    #[test]
    fn aligned_vector_sketch() {
        let s = sketch(&DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]), &orthogonal_prototypes()).unwrap();
        assert_eq!(s.logits.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0]);
        assert_relative_eq!(s.probs[(0, 0)], 1.0, epsilon = 1e-15);
        assert_relative_eq!(s.probs[(0, 1)], (-100.0f64).exp(), max_relative = 1e-6);
    }

    #[test]
    fn orthogonal_vector_is_uniform() {
        let s = sketch(&DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 2.0]), &orthogonal_prototypes()).unwrap();
        assert_eq!(s.logits.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0]);
        assert_eq!(s.probs[(0, 0)], 0.5);
    }

    #[test]
    fn sketch_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let protos = ClassPrototypes::unnamed(DMatrix::from_fn(4, 5, |_, _| rng.random_range(-1.0f32..1.0)), 0.07)
            .unwrap();
        let x = DMatrix::from_fn(6, 5, |_, _| rng.random_range(-1.0..1.0));
        let s = sketch(&x, &protos).unwrap();
        for i in 0..6 {
            let z = x.row(i);
            let cos: Vec<f64> = (0..4)
                .map(|k| {
                    let w = protos.matrix().row(k).map(f64::from);
                    z.dot(&w) / (z.norm() * w.norm())
                })
                .collect();
            let denom: f64 = cos.iter().map(|c| (c / 0.07).exp()).sum();
            for k in 0..4 {
                assert_relative_eq!(s.logits[(i, k)], cos[k], epsilon = 1e-12);
                assert_relative_eq!(s.probs[(i, k)], (cos[k] / 0.07).exp() / denom, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn zero_row_is_rejected() {
        let x = DMatrix::zeros(1, 3);
        assert!(matches!(sketch(&x, &orthogonal_prototypes()), Err(Error::ZeroNorm { row: 0 })));
    }

    #[test]
    fn identity_covariance_scores() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 0.5]);
        let s = GmmState::from_parts(
            m.clone(),
            Covariances::PerClass(vec![DMatrix::identity(2, 2); 2]),
            DVector::from_element(2, 4.0),
            0,
            GmmConfig::default(),
        )
        .unwrap();
        let d = discriminant_scores(&s, &m.rows(0, 1).into_owned()).unwrap();
        let gap = (m.row(0) - m.row(1)).norm_squared();
        assert_relative_eq!(d[(0, 0)], 0.5f64.ln(), epsilon = 1e-14);
        assert_relative_eq!(d[(0, 1)], 0.5f64.ln() - 0.5 * gap, epsilon = 1e-14);
    }

    #[test]
    fn scores_are_logpdf_plus_log_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let (k, d) = (3, 4);
        let means = DMatrix::from_fn(k, d, |_, _| rng.random_range(-1.0..1.0));
        let covs: Vec<_> = (0..k).map(|_| random_spd(&mut rng, d)).collect();
        let counts = DVector::from_fn(k, |_, _| rng.random_range(1.0..10.0));
        let s = GmmState::from_parts(means.clone(), Covariances::PerClass(covs.clone()), counts, 0, GmmConfig::default())
            .unwrap();
        let x = DMatrix::from_fn(5, d, |_, _| rng.random_range(-1.0..1.0));
        let scores = discriminant_scores(&s, &x).unwrap();
        for i in 0..5 {
            for c in 0..k {
                let spd = SpdSummary::regularized(&covs[c], 1e-12).unwrap();
                let lp = gaussian_logpdf(&x.row(i).transpose(), &means.row(c).transpose(), &spd).unwrap();
                let expected = lp + s.priors()[c].ln() + 0.5 * d as f64 * LN_2PI;
                assert_relative_eq!(scores[(i, c)], expected, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn fusion_identities() {
        let sk = DMatrix::from_row_slice(2, 3, &[0.2, 0.5, 0.1, 0.9, -0.3, 0.4]);
        let ds = DMatrix::from_row_slice(2, 3, &[-1.0, -3.0, 0.2, -2.0, -1.5, -2.5]);
        let f0 = fuse_and_predict(&sk, &ds, 0.0).unwrap();
        assert_eq!(f0.adapted_logits, sk);
        assert_eq!(f0.predictions, vec![1, 0]);

        let pure = fuse_and_predict(&DMatrix::zeros(2, 3), &ds, 1.0).unwrap();
        assert_eq!(pure.predictions, argmax_rows(&ds));

        // hand computation at α = 0.5:
        // row 0: [0.2-0.5, 0.5-1.5, 0.1+0.1] = [-0.3, -1.0, 0.2] -> 2
        // row 1: [0.9-1.0, -0.3-0.75, 0.4-1.25] = [-0.1, -1.05, -0.85] -> 0
        let half = fuse_and_predict(&sk, &ds, 0.5).unwrap();
        let expected = DMatrix::from_row_slice(2, 3, &[-0.3, -1.0, 0.2, -0.1, -1.05, -0.85]);
        assert_relative_eq!(half.adapted_logits, expected, epsilon = 1e-15);
        assert_eq!(half.predictions, vec![2, 0]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
        assert_eq!(argmax_rows(&m), vec![0, 1]);
    }

    #[test]
    fn homogeneous_score_differences_are_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let d = 3;
        let s = GmmState::from_parts(
            DMatrix::from_fn(3, d, |_, _| rng.random_range(-1.0..1.0)),
            Covariances::Shared(random_spd(&mut rng, d)),
            DVector::from_vec(vec![2.0, 5.0, 3.0]),
            0,
            GmmConfig::default(),
        )
        .unwrap();
        assert_eq!(s.mode(), CovarianceMode::Homogeneous);
        // affine ⇔ f(a) + f(b) = f(a + t) + f(b - t) style midpoint identity
        let a = DMatrix::from_fn(1, d, |_, _| rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(1, d, |_, _| rng.random_range(-1.0..1.0));
        let mid = (&a + &b) * 0.5;
        let diff = |x: &DMatrix<f64>| {
            let sc = discriminant_scores(&s, x).unwrap();
            sc[(0, 0)] - sc[(0, 1)]
        };
        assert_relative_eq!(diff(&mid), 0.5 * (diff(&a) + diff(&b)), epsilon = 1e-10);
    }
}
