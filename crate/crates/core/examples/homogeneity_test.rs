// Box's M test on shared and on unequal class covariances.

use gda_stream::homogeneity::{box_m_test, ClassMoments, CovarianceMode};
use gda_stream::stats::weighted_moments;
use gda_stream::Result;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn moments(rng: &mut ChaCha8Rng, scales: &[f64], n: usize, d: usize) -> Result<ClassMoments> {
    let mut counts = Vec::new();
    let mut means = DMatrix::zeros(scales.len(), d);
    let mut covs = Vec::new();
    for (k, s) in scales.iter().enumerate() {
        let x = DMatrix::from_fn(n, d, |_, _| s.sqrt() * rng.sample::<f64, _>(StandardNormal));
        let m = weighted_moments(&x, &vec![1.0; n])?;
        counts.push(m.mass);
        means.set_row(k, &m.mean.transpose());
        covs.push(m.cov);
    }
    ClassMoments::from_parts(counts, means, covs, 0.0)
}

pub fn run_example() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let shared = box_m_test(&moments(&mut rng, &[1.0, 1.0, 1.0], 200, 5)?, 0.05)?;
    println!("shared covariance\n{shared}");
    let unequal = box_m_test(&moments(&mut rng, &[1.0, 4.0, 1.0], 200, 5)?, 0.05)?;
    println!("unequal covariance\n{unequal}");
    assert_eq!(unequal.decision, CovarianceMode::Heterogeneous);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
