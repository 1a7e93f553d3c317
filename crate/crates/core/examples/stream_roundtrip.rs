// Write a small labelled stream to disk and read it back lazily.

use gda_stream::drift_sim::{generate, DriftSpec};
use gda_stream::stream::{read_stream, write_stream};
use gda_stream::Result;

pub fn run_example() -> Result<()> {
    let spec = DriftSpec {
        classes: 3,
        dim: 6,
        domains: 2,
        batches_per_domain: 2,
        batch_size: 8,
        trajectory: gda_stream::drift_sim::Trajectory::Rotation {
            plane: (0, 1),
            total_angle_deg: 10.0,
        },
        ..DriftSpec::default()
    };
    let generated = generate(&spec)?;
    let dir = std::env::temp_dir().join(format!("gda-stream-roundtrip-{}", std::process::id()));
    let manifest = write_stream(&generated.batches, &generated.prototypes, &dir)?;
    print!("{manifest}");

    let source = read_stream(&dir)?;
    for (written, read) in generated.batches.iter().zip(source.batches()) {
        let read = read?;
        assert_eq!(written, &read);
        println!(
            "step {} domain {}: {} x {}",
            read.step_index(),
            read.domain_id(),
            read.len(),
            read.dim()
        );
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
