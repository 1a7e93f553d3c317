// Track three Gaussian classes with the streaming EM updates.

use gda_stream::gmm::{GmmConfig, GmmState};
use gda_stream::homogeneity::CovarianceMode;
use gda_stream::stats::normalize_rows;
use gda_stream::stream::ClassPrototypes;
use gda_stream::Result;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn run_example() -> Result<()> {
    let centers = DMatrix::from_row_slice(3, 4, &[1.0, 0.0, 0.0, 0.2, 0.0, 1.0, 0.0, 0.2, 0.0, 0.0, 1.0, 0.2]);
    // Prototypes start slightly off the true centers.
    let protos = ClassPrototypes::unnamed(
        DMatrix::from_row_slice(3, 4, &[1.0, 0.3, 0.0, 0.0, 0.0, 1.0, 0.3, 0.0, 0.3, 0.0, 1.0, 0.0]),
        0.01,
    )?;
    let mut state = GmmState::init(&protos, CovarianceMode::Homogeneous, GmmConfig::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for t in 1..=10 {
        let mut x = DMatrix::zeros(60, 4);
        for i in 0..60 {
            let k = i % 3;
            for j in 0..4 {
                x[(i, j)] = centers[(k, j)] + 0.05 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let x = normalize_rows(&x)?;
        let resp = state.update(&x)?;
        let on_true = (0..60).map(|i| resp.matrix()[(i, i % 3)]).sum::<f64>() / 60.0;
        println!("step {t}: counts {:.1?} mass on true class {on_true:.3}", state.counts().as_slice());
    }
    println!("means {:.3}", state.means());
    println!("priors {:.3?}", state.priors().as_slice());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
