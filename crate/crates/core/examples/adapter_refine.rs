// Repeated self-paced steps pull the sketch toward a fixed target.

use gda_stream::adapter::{AdapterConfig, AdapterState, ParamSet};
use gda_stream::stats::softmax_rows;
use gda_stream::stream::ClassPrototypes;
use gda_stream::Result;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let protos = ClassPrototypes::unnamed(DMatrix::from_fn(4, 8, |_, _| rng.random_range(-1.0f32..1.0)), 0.1)?;
    let x = DMatrix::from_fn(32, 8, |_, _| rng.random_range(-1.0..1.0));
    let target = softmax_rows(&DMatrix::from_fn(32, 4, |i, k| if i % 4 == k { 3.0 } else { 0.0 }), 1.0);

    let mut adapter = AdapterState::new(8, AdapterConfig { lr: 0.05, ema_decay: 0.9 })?;
    let first = adapter.loss_and_gradient(&x, &protos, &target)?.value;
    for step in 1..=50 {
        adapter.backward_and_step(&x, &protos, &target)?;
        if step % 10 == 0 {
            let loss = adapter.loss_and_gradient(&x, &protos, &target)?.value;
            println!("step {step}: loss {loss:.4}");
        }
    }
    let last = adapter.loss_and_gradient(&x, &protos, &target)?.value;
    assert!(last < first);
    let (g, b) = adapter.ema_snapshot();
    println!("ema scale {:.3?}\nema shift {:.3?}", g.as_slice(), b.as_slice());
    let z = adapter.forward(&x, ParamSet::Ema)?;
    println!("first adapted row {:.3}", z.row(0));
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
