use fcnroute::dataset::{generate_samples, stack, Sample};
use fcnroute::fcn::checkpoint;
use fcnroute::fcn::{FcnConfig, FcnModel, Network};
use fcnroute::router::ResistanceModel;
use fcnroute::GridDims;

fn samples(seed: u64, count: usize) -> Vec<Sample> {
    generate_samples(count, seed, &ResistanceModel::default(), GridDims::default()).unwrap()
}

#[test]
fn pipeline_preserves_the_grid() {
    let set = samples(4, 3);
    let batch = stack(&set, vec![0, 1, 2]).unwrap();
    assert_eq!(batch.data.shape(), [3, 1, 32, 32]);
    assert_eq!(batch.labels.shape(), [3, 8, 32, 32]);
    for first in [3, 33] {
        let model = FcnModel::new(FcnConfig::default().with_first_filter(first), 1).unwrap();
        let scores = model.net.forward(&batch.data).unwrap();
        assert_eq!(scores.shape(), [3, 16, 32, 32]);
        assert_eq!(model.predict(&batch.data).unwrap().shape(), [3, 8, 32, 32]);
    }
}

#[test]
fn resumed_checkpoint_continues_identically() {
    let set = samples(9, 8);
    let batch = stack(&set[..4], vec![0, 1, 2, 3]).unwrap();
    let next = stack(&set[4..], vec![4, 5, 6, 7]).unwrap();
    let mut model = FcnModel::new(FcnConfig::default(), 3).unwrap();
    for _ in 0..3 {
        model.train_step(&batch.data, &batch.labels, 5e-5).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.drck");
    checkpoint::save(&model, &path).unwrap();
    let mut resumed = checkpoint::load(&path).unwrap();
    assert_eq!(resumed, model);

    let a = model.train_step(&next.data, &next.labels, 5e-5).unwrap();
    let b = resumed.train_step(&next.data, &next.labels, 5e-5).unwrap();
    assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    assert_eq!(checkpoint::to_bytes(&model), checkpoint::to_bytes(&resumed));
}

#[test]
fn penalty_matches_a_direct_sum() {
    let set = samples(2, 2);
    let batch = stack(&set, vec![0, 1]).unwrap();
    let net = Network::<f64>::build(FcnConfig::default(), 5).unwrap();
    let obj = net
        .objective(&batch.data.map(f64::from), &batch.labels.map(f64::from))
        .unwrap();
    let mut sum = 0.0;
    for stage in net.stages() {
        for w in stage.conv.weights.as_slice() {
            sum += w * w;
        }
    }
    let expected = 1e-5 * sum;
    assert!((obj.penalty - expected).abs() <= 1e-12 * expected.max(1.0), "{} vs {expected}", obj.penalty);
    assert!((obj.loss - obj.data_loss - obj.penalty).abs() < 1e-12);
}

#[test]
fn loss_falls_on_a_fixed_batch() {
    let mut fell = 0;
    for seed in 0..5 {
        let set = samples(100 + seed, 4);
        let batch = stack(&set, vec![0, 1, 2, 3]).unwrap();
        let mut model = FcnModel::new(FcnConfig::default(), seed).unwrap();
        let first = model.train_step(&batch.data, &batch.labels, 1e-3).unwrap().loss;
        let mut last = first;
        for _ in 0..30 {
            last = model.train_step(&batch.data, &batch.labels, 1e-3).unwrap().loss;
        }
        if last < first {
            fell += 1;
        }
    }
    assert!(fell >= 3, "loss fell for {fell} of 5 seeds");
}
