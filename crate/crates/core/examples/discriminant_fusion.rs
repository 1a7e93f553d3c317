// Sketch logits, discriminant scores and their fusion at several weights.

use gda_stream::gda_head::{discriminant_scores, fuse_and_predict, sketch};
use gda_stream::gmm::{Covariances, GmmConfig, GmmState};
use gda_stream::stats::normalize_rows;
use gda_stream::stream::ClassPrototypes;
use gda_stream::Result;
use nalgebra::{DMatrix, DVector};

pub fn run_example() -> Result<()> {
    let protos = ClassPrototypes::unnamed(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]), 0.01)?;
    // The target distribution has rotated: class 0 now sits near 60 degrees.
    let means = normalize_rows(&DMatrix::from_row_slice(2, 2, &[0.5, 0.87, -0.87, 0.5]))?;
    let state = GmmState::from_parts(
        means,
        Covariances::Shared(DMatrix::identity(2, 2) * 0.05),
        DVector::from_element(2, 50.0),
        1,
        GmmConfig::default(),
    )?;
    let z = normalize_rows(&DMatrix::from_row_slice(3, 2, &[0.55, 0.83, 0.95, 0.3, -0.7, 0.7]))?;
    let sk = sketch(&z, &protos)?;
    let scores = discriminant_scores(&state, &z)?;
    println!("sketch logits {:.3}", sk.logits);
    println!("discriminant scores {:.3}", scores);
    for alpha in [0.0, 0.01, 0.1, 1.0] {
        let fused = fuse_and_predict(&sk.logits, &scores, alpha)?;
        println!("alpha {alpha}: predictions {:?}", fused.predictions);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
