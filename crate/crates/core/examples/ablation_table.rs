// Weighted accuracy with each component switched off in turn.

use gda_stream::drift_sim::{generate, DriftSpec};
use gda_stream::pipeline::{run_stream, Component, PipelineConfig};
use gda_stream::Result;

pub fn run_example() -> Result<()> {
    let seeds = 0..2;
    let mut rows = vec![("full".to_string(), PipelineConfig::default())];
    rows.extend(
        Component::ALL
            .iter()
            .map(|c| (format!("w/o {c}"), PipelineConfig::default().without(*c))),
    );
    let streams: Vec<_> = seeds.map(|s| generate(&DriftSpec::default().with_seed(s))).collect::<Result<_>>()?;
    for (name, config) in rows {
        let mut total = 0.0;
        for s in &streams {
            total += run_stream(s.batches.iter().cloned().map(Ok), &s.prototypes, &config)?
                .summary
                .weighted_accuracy;
        }
        println!("{name:<20} {:.4}", total / streams.len() as f64);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
