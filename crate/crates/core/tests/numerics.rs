use approx::assert_relative_eq;
use gda_stream::stats::{f_quantile, gaussian_kl, gaussian_logpdf, weighted_moments, PcaProjection, SpdSummary};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal))
}

/// Cyclic Jacobi rotations on a symmetric matrix; returns the eigenvalues.
fn jacobi_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| m[(i, j)]).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut values: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    values.sort_by(|x, y| y.total_cmp(x));
    values
}

#[test]
fn pca_variance_matches_jacobi_eigenvalues() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mix = gaussian(&mut rng, 16, 16);
    let x = gaussian(&mut rng, 200, 16) * mix;
    let pca = PcaProjection::fit(&x, 10).unwrap();

    let n = x.nrows() as f64;
    let mean = x.row_mean();
    let mut cov = DMatrix::zeros(16, 16);
    for i in 0..x.nrows() {
        for r in 0..16 {
            for c in 0..16 {
                cov[(r, c)] += (x[(i, r)] - mean[r]) * (x[(i, c)] - mean[c]) / n;
            }
        }
    }
    let top10: f64 = jacobi_eigenvalues(&cov).iter().take(10).sum();

    let projected = pca.project(&x).unwrap();
    let captured: f64 = (0..10).map(|j| projected.column(j).map(|v| v * v).sum() / n).sum();
    assert_relative_eq!(captured, top10, max_relative = 1e-10);
    assert_relative_eq!(pca.explained_variance.sum(), top10, max_relative = 1e-10);
}

#[test]
fn kl_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let d = 3;
    let a0 = gaussian(&mut rng, d, d);
    let a1 = gaussian(&mut rng, d, d);
    let cov0 = &a0 * a0.transpose() + DMatrix::identity(d, d) * 0.5;
    let cov1 = &a1 * a1.transpose() + DMatrix::identity(d, d) * 0.5;
    let mean0 = DVector::from_vec(vec![0.2, -0.1, 0.4]);
    let mean1 = DVector::from_vec(vec![-0.3, 0.5, 0.0]);
    let closed = gaussian_kl(&mean0, &cov0, &mean1, &cov1).unwrap();

    let l0 = cov0.clone().cholesky().unwrap().l();
    let s0 = SpdSummary::regularized(&cov0, 1e-12).unwrap();
    let s1 = SpdSummary::regularized(&cov1, 1e-12).unwrap();
    let samples = 100_000;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..samples {
        let z = &mean0 + &l0 * DVector::from_fn(d, |_, _| rng.sample(StandardNormal));
        let r = gaussian_logpdf(&z, &mean0, &s0).unwrap() - gaussian_logpdf(&z, &mean1, &s1).unwrap();
        sum += r;
        sum_sq += r * r;
    }
    let m = sum / samples as f64;
    let se = ((sum_sq / samples as f64 - m * m) / samples as f64).sqrt();
    assert!((m - closed).abs() < 3.0 * se, "closed {closed}, monte carlo {m} ± {se}");
}

#[test]
fn logpdf_integrates_to_one() {
    let cov = DMatrix::from_row_slice(2, 2, &[0.8, 0.3, 0.3, 0.5]);
    let mean = DVector::from_vec(vec![0.4, -0.2]);
    let spd = SpdSummary::regularized(&cov, 1e-12).unwrap();
    let (lo, hi, steps) = (-7.0, 7.0, 700);
    let h = (hi - lo) / steps as f64;
    let mut total = 0.0;
    for i in 0..steps {
        for j in 0..steps {
            let z = DVector::from_vec(vec![lo + (i as f64 + 0.5) * h, lo + (j as f64 + 0.5) * h]);
            total += gaussian_logpdf(&z, &mean, &spd).unwrap().exp() * h * h;
        }
    }
    assert!((total - 1.0).abs() < 1e-3, "{total}");
}

proptest! {
    #[test]
    fn moments_ignore_weight_scale(seed in 0u64..1000, scale in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian(&mut rng, 12, 3);
        let w: Vec<f64> = (0..12).map(|_| rng.random_range(0.1..2.0)).collect();
        let scaled: Vec<f64> = w.iter().map(|v| v * scale).collect();
        let a = weighted_moments(&x, &w).unwrap();
        let b = weighted_moments(&x, &scaled).unwrap();
        prop_assert!((b.mass - a.mass * scale).abs() <= 1e-9 * b.mass);
        prop_assert!((a.mean - b.mean).amax() < 1e-10);
        prop_assert!((a.cov - b.cov).amax() < 1e-10);
    }

    #[test]
    fn f_quantile_increases_with_level(p in 0.01f64..0.98, dp in 0.001f64..0.01, d1 in 0.5f64..50.0, d2 in 0.5f64..500.0) {
        let lo = f_quantile(p, d1, d2).unwrap();
        let hi = f_quantile(p + dp, d1, d2).unwrap();
        prop_assert!(hi > lo);
    }

    #[test]
    fn floor_leaves_well_conditioned_matrices_alone(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = gaussian(&mut rng, 5, 5);
        let m = &a * a.transpose() + DMatrix::identity(5, 5);
        let s = SpdSummary::regularized(&m, 1e-6).unwrap();
        prop_assert!(!s.is_clamped());
        prop_assert!((s.matrix() - &m).amax() < 1e-10);
        prop_assert!((s.log_det() - m.determinant().ln()).abs() < 1e-10);
    }
}
