//! Trains on generated samples and prints one line per epoch.
//!
//! `cargo run --release -p fcnroute --example train_curve -- [first_filter] [seed] [samples] [epochs] [data_seed]`

use fcnroute::dataset::{generate_samples, stack};
use fcnroute::fcn::{train, TrainSettings};
use fcnroute::metrics::ConfusionCounts;
use fcnroute::router::ResistanceModel;
use fcnroute::{FcnConfig, FcnModel, GridDims};

fn main() -> fcnroute::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let first_filter = args.first().copied().unwrap_or(33) as usize;
    let seed = args.get(1).copied().unwrap_or(0);
    let n = args.get(2).copied().unwrap_or(200) as usize;
    let epochs = args.get(3).copied().unwrap_or(60) as usize;
    let data_seed = args.get(4).copied().unwrap_or(1000 + seed);

    let samples = generate_samples(n, data_seed, &ResistanceModel::default(), GridDims::default())?;
    let mut model = FcnModel::new(FcnConfig::default().with_first_filter(first_filter), seed)?;
    let settings = TrainSettings {
        epochs,
        batch_size: 10,
        learning_rate: 5e-5,
        shuffle_seed: seed,
    };
    let probe = stack(&samples[..10], (0..10).collect())?;
    train(&mut model, &samples, None, &settings, |r, m| {
        let pred = m.predict(&probe.data)?;
        let positives = pred.as_slice().iter().filter(|&&v| v == 1).count();
        let mut per_layer = Vec::new();
        for layer in 0..8 {
            let mut c = ConfusionCounts::default();
            for i in 0..10 {
                for (p, t) in pred.plane(i, layer).iter().zip(probe.labels.plane(i, layer)) {
                    c.record(*p == 1, *t == 1.0);
                }
            }
            per_layer.push(format!("{:.2}", c.summarize().f1));
        }
        println!(
            "epoch {:>3}: step loss {:.4}, eval loss {:.4}, f1 {:.4}, probe positives {positives}, probe f1 by layer [{}]",
            r.epoch,
            r.mean_step_loss,
            r.train.loss,
            r.train.summary.f1,
            per_layer.join(" ")
        );
        Ok(())
    })?;
    Ok(())
}
