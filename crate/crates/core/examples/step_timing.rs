//! Times training steps of the default network on generated samples.
//!
//! `cargo run --release -p fcnroute --example step_timing -- [batch] [steps] [first_filter]`

use std::time::Instant;

use fcnroute::dataset::{generate_samples, stack};
use fcnroute::router::ResistanceModel;
use fcnroute::{FcnConfig, FcnModel, GridDims};

fn main() -> fcnroute::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let batch = args.first().copied().unwrap_or(10);
    let steps = args.get(1).copied().unwrap_or(20);
    let first = args.get(2).copied().unwrap_or(33);

    let samples = generate_samples(batch, 1, &ResistanceModel::default(), GridDims::default())?;
    let b = stack(&samples, (0..batch).collect())?;
    let mut model = FcnModel::new(FcnConfig::default().with_first_filter(first), 0)?;
    model.train_step(&b.data, &b.labels, 5e-5)?;

    let t = Instant::now();
    for _ in 0..steps {
        model.train_step(&b.data, &b.labels, 5e-5)?;
    }
    let step = t.elapsed().as_secs_f64() / steps as f64;

    let t = Instant::now();
    for _ in 0..steps {
        model.predict(&b.data)?;
    }
    let fwd = t.elapsed().as_secs_f64() / steps as f64;
    println!("batch {batch}, F1 {first}: {:.1} ms/step, {:.1} ms/forward", step * 1e3, fwd * 1e3);
    Ok(())
}
