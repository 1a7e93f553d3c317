// Zero-shot versus the full adaptation pipeline on the rotating stream.

use gda_stream::drift_sim::{bayes_accuracy, generate, DriftSpec};
use gda_stream::pipeline::{run_stream, run_zero_shot, PipelineConfig};
use gda_stream::Result;

pub fn run_example() -> Result<()> {
    let stream = generate(&DriftSpec::default())?;
    let zero_shot = run_zero_shot(&stream.batches, &stream.prototypes)?;
    let run = run_stream(
        stream.batches.iter().cloned().map(Ok),
        &stream.prototypes,
        &PipelineConfig::default(),
    )?;
    println!("domain  zero-shot  adapted");
    for (z, a) in zero_shot.per_domain.iter().zip(&run.summary.per_domain) {
        println!("{:>6}  {:>9.3}  {:>7.3}", z.domain_id, z.accuracy, a.accuracy);
    }
    println!(
        "weighted: zero-shot {:.3}, adapted {:.3}, bayes {:.3}",
        zero_shot.weighted_accuracy,
        run.summary.weighted_accuracy,
        bayes_accuracy(&stream.truth, &stream.batches)?
    );
    if let Some(sel) = &run.summary.selection {
        println!("{sel}");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
