//! End-to-end acceptance checks, one line of output per criterion.
//!
//! Runs without the libtest harness so every line is printed. Positional
//! arguments select criteria by substring, e.g.
//! `cargo test -p fcnroute --test acceptance -- overfit`.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fcnroute::dataset::{self, generate_samples, sample_pinset, sample_rng, stack, DatasetReader, Sample};
use fcnroute::drc::run_drc;
use fcnroute::fcn::{checkpoint, gradcheck, min_stages, train, Network, TrainSettings};
use fcnroute::layout::{pack_cell, store_cell, unpack_cell};
use fcnroute::metrics::{accumulate, ConfusionCounts};
use fcnroute::nn::{weighted_xent, LossConfig, ScoreMatrix};
use fcnroute::router::{choose_combo, route_detailed, ResistanceModel, WireClassCombo};
use fcnroute::{FcnConfig, FcnModel, GridDims, LayoutGrid, Result, Tensor4};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        pass,
        detail: detail.into(),
    })
}

fn dims() -> GridDims {
    GridDims::default()
}

fn encoding_round_trip() -> Result<Outcome> {
    let mut grid = LayoutGrid::new(dims());
    let mut masks_ok = 0;
    for mask in 0..=255u8 {
        let (x, y) = (mask as usize % 32, mask as usize / 32);
        store_cell(&mut grid, x, y, mask)?;
        let bits = unpack_cell(mask);
        let rebuilt = bits.iter().enumerate().fold(0u8, |m, (i, &b)| m | (u8::from(b) << i));
        if pack_cell(&grid, x, y)? == mask && rebuilt == mask {
            masks_ok += 1;
        }
    }

    let dir = tempfile::tempdir()?;
    let (a, b) = (dir.path().join("a.drtn"), dir.path().join("b.drtn"));
    let samples = generate_samples(64, 17, &ResistanceModel::default(), dims())?;
    dataset::write(&a, dims(), &samples)?;
    let back = DatasetReader::open(&a)?.samples()?;
    dataset::write(&b, dims(), &back)?;
    let same_samples = back.len() == samples.len()
        && back
            .iter()
            .zip(&samples)
            .all(|(x, y)| x.data == y.data && x.label == y.label && x.pins == y.pins);
    let same_bytes = std::fs::read(&a)? == std::fs::read(&b)?;
    outcome(
        masks_ok == 256 && same_samples && same_bytes,
        format!("{masks_ok}/256 masks, samples equal: {same_samples}, rewrite identical: {same_bytes}"),
    )
}

fn route_samples(count: usize, seed: u64) -> Result<Vec<(Sample, WireClassCombo)>> {
    let model = ResistanceModel::default();
    (0..count as u64)
        .map(|i| {
            let pins = sample_pinset(&mut sample_rng(seed, i), dims())?;
            let net = route_detailed(&pins, &model, dims())?;
            let sample = Sample::from_pins(pins, &model, dims())?;
            Ok((sample, net.combo))
        })
        .collect()
}

fn router_drc_closure() -> Result<Outcome> {
    let routed = route_samples(10_000, 2024)?;
    let mut failures = 0;
    for (s, _) in &routed {
        if !run_drc(&s.label, &s.pins).passed() {
            failures += 1;
        }
    }
    outcome(failures == 0, format!("{} of {} layouts pass DRC", routed.len() - failures, routed.len()))
}

fn wire_class_regimes() -> Result<Outcome> {
    let model = ResistanceModel::default();
    let breaks = [
        (1, WireClassCombo::M3M4),
        (11, WireClassCombo::M3M4),
        (12, WireClassCombo::M4M5),
        (22, WireClassCombo::M4M5),
        (23, WireClassCombo::M5M6),
        (200, WireClassCombo::M5M6),
    ];
    let mut breaks_ok = true;
    for (len, want) in breaks {
        breaks_ok &= choose_combo(len, &model)? == want;
    }
    let routed = route_samples(10_000, 99)?;
    let mut freq = [0usize; 3];
    for (_, combo) in &routed {
        freq[combo.index()] += 1;
    }
    let share: Vec<f64> = freq.iter().map(|&c| c as f64 / routed.len() as f64).collect();
    let balanced = share.iter().all(|&f| (0.20..=0.45).contains(&f));
    outcome(
        breaks_ok && balanced,
        format!(
            "break-evens at 11/22: {breaks_ok}, shares M3M4 {:.3} M4M5 {:.3} M5M6 {:.3}",
            share[0], share[1], share[2]
        ),
    )
}

fn gradient_checks() -> Result<Outcome> {
    let checks = gradcheck::suite(0)?;
    let pass = checks.iter().all(|c| c.passed());
    let detail = checks
        .iter()
        .map(|c| format!("{} {:.2e}", c.name, c.report.max_rel_error))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(pass, detail)
}

/// Plain cross-entropy straight from the score tensor, pairing channels
/// `2l` and `2l + 1` for layer `l` without any reshape.
fn plain_xent(scores: &Tensor4<f64>, labels: &Tensor4<f64>) -> f64 {
    let [n, ch, h, w] = scores.shape();
    let mut total = 0.0;
    let mut count = 0.0;
    for b in 0..n {
        for l in 0..ch / 2 {
            for y in 0..h {
                for x in 0..w {
                    let s0 = scores.get(b, 2 * l, y, x);
                    let s1 = scores.get(b, 2 * l + 1, y, x);
                    let target = if labels.get(b, l, y, x) == 1.0 { s1 } else { s0 };
                    total += (s0.exp() + s1.exp()).ln() - target;
                    count += 1.0;
                }
            }
        }
    }
    total / count
}

fn loss_arithmetic() -> Result<Outcome> {
    let cfg = LossConfig::default();
    let one = |label| {
        let m = ScoreMatrix {
            rows: 1,
            cols: 2,
            data: vec![0.0f64, 0.0],
        };
        weighted_xent(&m, &[label], &cfg).map(|r| r.0)
    };
    let e1 = (one(1)? - 3.0 * 2f64.ln()).abs();
    let e0 = (one(0)? - 2f64.ln()).abs();

    let plain = FcnConfig {
        loss: LossConfig::new(1.0, 1.0, 0.0)?,
        ..gradcheck::small_config()
    };
    let net = Network::<f64>::build(plain, 11)?;
    let samples = generate_samples(3, 5, &ResistanceModel::default(), plain.dims)?;
    let batch = stack(&samples, vec![0, 1, 2])?;
    let (data, labels) = (batch.data.map(f64::from), batch.labels.map(f64::from));
    let obj = net.objective(&data, &labels)?;
    let oracle = plain_xent(&obj.scores, &labels);
    let e_net = (obj.loss - oracle).abs();
    outcome(
        e1 <= 1e-6 && e0 <= 1e-6 && e_net <= 1e-6,
        format!("|3ln2 - L| {e1:.1e}, |ln2 - L| {e0:.1e}, network vs plain recount {e_net:.1e}"),
    )
}

fn metric_oracle() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut exact = 0;
    for _ in 0..100 {
        let shape = [rng.random_range(1..4), 8, rng.random_range(1..33), rng.random_range(1..33)];
        let len = shape.iter().product();
        let density = rng.random_range(0.0..1.0);
        let mut draw = || (0..len).map(|_| u8::from(rng.random_bool(density))).collect::<Vec<_>>();
        let pred = Tensor4::from_vec(shape, draw())?;
        let truth = Tensor4::from_vec(shape, draw())?;
        let mut brute = ConfusionCounts::default();
        for (p, t) in pred.as_slice().iter().zip(truth.as_slice()) {
            match (p, t) {
                (1, 1) => brute.tp += 1,
                (1, 0) => brute.fp += 1,
                (0, 1) => brute.fn_ += 1,
                _ => brute.tn += 1,
            }
        }
        let got = accumulate(&pred, &truth)?;
        let s = got.summarize();
        let (tp, fp, fn_) = (brute.tp as f64, brute.fp as f64, brute.fn_ as f64);
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        if got == brute && (brute.tp + brute.fp + brute.fn_ == 0 || (s.precision == p && s.recall == r && s.f1 == f1)) {
            exact += 1;
        }
    }

    let samples = generate_samples(500, 8, &ResistanceModel::default(), dims())?;
    let mut counts = ConfusionCounts::default();
    for s in &samples {
        let truth = Tensor4::from_vec([1, 8, 32, 32], s.label.cells().to_vec())?;
        counts += accumulate(&Tensor4::filled([1, 8, 32, 32], 0u8), &truth)?;
    }
    let s = counts.summarize();
    outcome(
        exact == 100 && (0.95..=1.0).contains(&s.accuracy) && s.f1 == 0.0,
        format!(
            "{exact}/100 exact recounts; all-background predictor accuracy {:.4}, f1 {}",
            s.accuracy, s.f1
        ),
    )
}

fn overfit_capacity() -> Result<Outcome> {
    let mut reached = Vec::new();
    for seed in 0..5u64 {
        let samples = generate_samples(4, seed, &ResistanceModel::default(), dims())?;
        let batch = stack(&samples, (0..4).collect())?;
        let mut model = FcnModel::new(FcnConfig::default(), seed)?;
        let mut hit = None;
        for step in 1..=2000 {
            model.train_step(&batch.data, &batch.labels, 5e-5)?;
            if model.evaluate(&samples, 4)?.summary.f1 == 1.0 {
                hit = Some(step);
                break;
            }
        }
        reached.push(hit);
    }
    let ok = reached.iter().filter(|h| h.is_some()).count();
    let detail = reached
        .iter()
        .enumerate()
        .map(|(s, h)| match h {
            Some(step) => format!("seed {s}: step {step}"),
            None => format!("seed {s}: not within 2000"),
        })
        .collect::<Vec<_>>()
        .join(", ");
    outcome(ok >= 4, format!("{ok}/5 seeds reach F1 = 1 ({detail})"))
}

fn train_f1(first_filter: usize, seed: u64, samples: &[Sample], epochs: usize) -> Result<f64> {
    let mut model = FcnModel::new(FcnConfig::default().with_first_filter(first_filter), seed)?;
    let settings = TrainSettings {
        epochs,
        batch_size: 10,
        learning_rate: 5e-5,
        shuffle_seed: seed,
    };
    let records = train(&mut model, samples, None, &settings, |_, _| Ok(()))?;
    Ok(records.last().expect("at least one epoch").train.summary.f1)
}

fn first_stage_experiment() -> Result<Outcome> {
    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in 0..3u64 {
        let samples = generate_samples(200, 1000 + seed, &ResistanceModel::default(), dims())?;
        let wide = train_f1(33, seed, &samples, 60)?;
        let narrow = train_f1(3, seed, &samples, 60)?;
        let gap = 100.0 * (wide - narrow);
        if gap >= 20.0 {
            wins += 1;
        }
        detail.push(format!("seed {seed}: F=33 {:.1}%, F=3 {:.1}%", 100.0 * wide, 100.0 * narrow));
    }
    outcome(wins >= 2, format!("{wins}/3 seeds with gap >= 20 pts ({})", detail.join("; ")))
}

fn scaled_training() -> Result<Outcome> {
    let train_set = generate_samples(1000, 500, &ResistanceModel::default(), dims())?;
    let val_set = generate_samples(200, 501, &ResistanceModel::default(), dims())?;
    let mut model = FcnModel::new(FcnConfig::default(), 0)?;
    let settings = TrainSettings {
        epochs: 200,
        batch_size: 10,
        learning_rate: 5e-5,
        shuffle_seed: 0,
    };
    let records = train(&mut model, &train_set, Some(&val_set), &settings, |_, _| Ok(()))?;
    let last = records.last().expect("200 epochs");
    let gaps: Vec<String> = [50, 100, 150, 200]
        .iter()
        .map(|&e| {
            let r = &records[e - 1];
            let v = r.validation.expect("validation set").summary.f1;
            format!("epoch {e}: train {:.1}% val {:.1}%", 100.0 * r.train.summary.f1, 100.0 * v)
        })
        .collect();
    outcome(
        last.train.summary.f1 >= 0.80,
        format!("final train F1 {:.1}% ({})", 100.0 * last.train.summary.f1, gaps.join("; ")),
    )
}

fn receptive_field() -> Result<Outcome> {
    let n = min_stages(3, 3, 32);
    outcome(n == 15, format!("min_stages(3, 3, 32) = {n}"))
}

fn determinism() -> Result<Outcome> {
    let run = |threads: usize| -> Result<(Vec<u8>, Vec<u8>, Vec<String>)> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| fcnroute::Error::Internal(e.to_string()))?;
        pool.install(|| {
            let dir = tempfile::tempdir()?;
            let path = dir.path().join("train.drtn");
            dataset::generate(&path, 30, 3, &ResistanceModel::default(), dims())?;
            let samples = DatasetReader::open(&path)?.samples()?;
            let mut model = FcnModel::new(FcnConfig::default(), 3)?;
            let settings = TrainSettings {
                epochs: 2,
                batch_size: 10,
                learning_rate: 5e-5,
                shuffle_seed: 3,
            };
            let mut csv = Vec::new();
            train(&mut model, &samples[..20], Some(&samples[20..]), &settings, |r, _| {
                csv.extend(r.csv_rows());
                Ok(())
            })?;
            let eval = model.evaluate(&samples, 7)?;
            csv.push(eval.csv_row(0, "eval"));
            let batch = stack(&samples[..5], (0..5).collect())?;
            let scores = model.net.forward(&batch.data)?;
            csv.push(format!("{:?}", scores.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()));
            Ok((std::fs::read(&path)?, checkpoint::to_bytes(&model), csv))
        })
    };
    let one = run(1)?;
    let four = run(4)?;
    let again = run(1)?;
    let same = one == four && one == again;
    outcome(
        same,
        format!("dataset, checkpoint and metrics identical across 1/4/1 threads: {same}"),
    )
}

fn main() -> ExitCode {
    type Check = fn() -> Result<Outcome>;
    let criteria: [(u32, &str, Check); 11] = [
        (1, "encoding_round_trip", encoding_round_trip),
        (2, "router_drc_closure", router_drc_closure),
        (3, "wire_class_regimes", wire_class_regimes),
        (4, "gradient_checks", gradient_checks),
        (5, "loss_arithmetic", loss_arithmetic),
        (6, "metric_oracle", metric_oracle),
        (7, "overfit_capacity", overfit_capacity),
        (8, "first_stage_experiment", first_stage_experiment),
        (9, "receptive_field", receptive_field),
        (10, "scaled_training", scaled_training),
        (11, "determinism", determinism),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (n, name, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match check() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {n:>2} {name}: {} [{:.1}s] {detail}",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
