// Replay the stream three times with and without continual carry.

use gda_stream::drift_sim::{generate, DriftSpec};
use gda_stream::pipeline::{run_longterm, Component, PipelineConfig};
use gda_stream::Result;

pub fn run_example() -> Result<()> {
    let stream = generate(&DriftSpec::default().with_seed(1))?;
    let carry = PipelineConfig {
        rounds: 3,
        ..PipelineConfig::default()
    };
    let reset = carry.clone().without(Component::ContinualReset);
    for (name, config) in [("carry", carry), ("reset", reset)] {
        let run = run_longterm(&stream.batches, &stream.prototypes, &config)?;
        let rounds: Vec<String> = run.round_accuracies().iter().map(|a| format!("{a:.3}")).collect();
        println!("{name}: {}", rounds.join(" "));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
