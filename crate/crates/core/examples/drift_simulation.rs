// Generate drifting streams and verify their per-step KL budget.

use gda_stream::drift_sim::{generate, minimal_domains, verify_drift_bound, DriftSpec, Trajectory};
use gda_stream::{Error, Result};
use nalgebra::DVector;

pub fn run_example() -> Result<()> {
    let spec = DriftSpec::default();
    print!("{spec}");
    let stream = generate(&spec)?;
    let report = verify_drift_bound(&stream.truth, spec.delta)?;
    print!("{report}");
    assert!(report.passed);

    let translation = DriftSpec {
        trajectory: Trajectory::MeanTranslation {
            direction: DVector::from_fn(spec.dim, |i, _| if i == 2 { 1.0 } else { 0.0 }),
            magnitude: 0.4,
        },
        ..DriftSpec::default()
    };
    let report = verify_drift_bound(&generate(&translation)?.truth, translation.delta)?;
    println!("translation max kl {:.6}", report.max_kl);

    let rushed = DriftSpec {
        domains: 4,
        ..DriftSpec::default()
    };
    match generate(&rushed) {
        Err(Error::InfeasibleDrift { minimal_domains: n, .. }) => println!("4 domains infeasible, need {n}"),
        other => panic!("expected an infeasible spec, got {other:?}"),
    }
    println!("default spec needs at least {} domains", minimal_domains(&spec)?);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
