//! Fits the default network to a handful of samples and reports when the
//! evaluation-mode F1 first reaches 1.
//!
//! `cargo run --release -p fcnroute --example overfit -- [seed] [samples] [max_steps]`

use fcnroute::dataset::{generate_samples, stack};
use fcnroute::router::ResistanceModel;
use fcnroute::{FcnConfig, FcnModel, GridDims};

fn main() -> fcnroute::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let seed = args.first().copied().unwrap_or(0);
    let n = args.get(1).copied().unwrap_or(4) as usize;
    let max_steps = args.get(2).copied().unwrap_or(2000) as usize;

    let samples = generate_samples(n, seed, &ResistanceModel::default(), GridDims::default())?;
    let batch = stack(&samples, (0..n).collect())?;
    let mut model = FcnModel::new(FcnConfig::default(), seed)?;
    for step in 1..=max_steps {
        let r = model.train_step(&batch.data, &batch.labels, 5e-5)?;
        if step % 25 == 0 || r.counts.summarize().f1 == 1.0 {
            let e = model.evaluate(&samples, n)?;
            println!(
                "step {step}: loss {:.4}, batch-stat f1 {:.4}, eval f1 {:.4}",
                r.loss,
                r.counts.summarize().f1,
                e.summary.f1
            );
            if e.summary.f1 == 1.0 {
                println!("reached F1 = 1 at step {step}");
                return Ok(());
            }
        }
    }
    println!("did not reach F1 = 1 in {max_steps} steps");
    let pred = model.predict(&batch.data)?;
    let [_, layers, h, w] = pred.shape();
    for i in 0..n {
        for l in 0..layers {
            for y in 0..h {
                for x in 0..w {
                    let (p, t) = (pred.get(i, l, y, x), batch.labels.get(i, l, y, x) as u8);
                    if p != t {
                        println!("sample {i} layer {l} ({x},{y}): predicted {p}, truth {t}");
                    }
                }
            }
        }
    }
    for (i, s) in samples.iter().enumerate() {
        println!("sample {i}: pins {:?}", s.pins.pins());
    }
    Ok(())
}
