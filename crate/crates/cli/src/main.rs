//! `fcnroute`: dataset generation, DRC audits, training, evaluation,
//! single-net routing and rendering.

mod manifest;
mod pins;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use fcnroute::dataset::{self, DatasetReader};
use fcnroute::drc::run_drc;
use fcnroute::fcn::{checkpoint, gradcheck, train, TrainSettings, CSV_HEADER};
use fcnroute::layout::{decode_to_rgb, encode_pins};
use fcnroute::nn::LossConfig;
use fcnroute::router::{route_detailed, ResistanceModel};
use fcnroute::{FcnConfig, FcnModel, GridDims, LayoutGrid, PinSet, Tensor4};

use manifest::{beside, RunManifest};
use pins::parse_pins;

#[derive(Debug, Parser)]
#[command(name = "fcnroute", version, about = "Single-net routing with a fully convolutional network")]
struct Cli {
    /// Worker threads for the numeric kernels (outputs do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
enum Command {
    /// Generate a dataset of routed nets.
    Gen(GenArgs),
    /// Check every stored label against the design rules.
    Drc(DrcArgs),
    /// Train a network, checkpointing after every epoch.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Route one net with the network and/or the reference router.
    Route(RouteArgs),
    /// Write the data and label images of one dataset sample.
    Render(RenderArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args, Serialize)]
struct GenArgs {
    #[arg(long)]
    count: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 32)]
    height: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
}

#[derive(Debug, Args, Serialize)]
struct DrcArgs {
    /// Dataset file to audit.
    #[arg(long)]
    data: PathBuf,
    /// Failing samples to list.
    #[arg(long, default_value_t = 10)]
    show: usize,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Validation dataset.
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 10)]
    batch: usize,
    #[arg(long, default_value_t = 5e-5)]
    lr: f64,
    /// L2 coefficient on convolution weights.
    #[arg(long, default_value_t = 1e-5)]
    lambda: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Filter size of the first stage.
    #[arg(long, default_value_t = 33, value_parser = parse_first_filter)]
    first_filter: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

fn parse_first_filter(s: &str) -> Result<usize, String> {
    match s {
        "3" => Ok(3),
        "33" => Ok(33),
        _ => Err(format!("{s:?} is not a supported first-stage filter; use 3 or 33")),
    }
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 10)]
    batch: usize,
    /// Also write the metrics as CSV to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct RouteArgs {
    /// Pins as `x,y;x,y;...`.
    #[arg(long)]
    pins: String,
    /// Render the reference router's layout.
    #[arg(long)]
    oracle: bool,
    /// Predict the layout with this checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Image of the prediction, or of the reference route without `--checkpoint`.
    #[arg(long)]
    out: PathBuf,
    /// Image of the reference route when `--checkpoint` and `--oracle` are both given.
    #[arg(long)]
    oracle_out: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    height: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
}

#[derive(Debug, Args, Serialize)]
struct RenderArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    index: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args, Serialize)]
struct ReplayArgs {
    manifest: PathBuf,
}

/// How a command ended, mapped onto the process exit code.
enum Failure {
    /// Bad input, missing file, malformed data: exit 1.
    Usage(String),
    /// The audit ran and found problems: exit 2.
    Check(String),
}

impl From<fcnroute::Error> for Failure {
    fn from(e: fcnroute::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type CmdResult = Result<Outcome, Failure>;

/// What a successful command produced.
struct Outcome {
    seeds: Vec<u64>,
    artifacts: Vec<PathBuf>,
    /// Where to write the manifest; `None` for commands without file outputs.
    manifest: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    run(&args)
}

fn run(args: &[String]) -> ExitCode {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        // Fails only if the pool already exists, as under `replay`; results
        // do not depend on the thread count, so the existing pool is fine.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }

    let start = Instant::now();
    let name = command_name(&cli.command);
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Drc(a) => cmd_drc(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Route(a) => cmd_route(a),
        Command::Render(a) => cmd_render(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Replay(a) => return cmd_replay(a, &args[0]),
    };
    match result {
        Ok(out) => {
            if let Some(path) = &out.manifest {
                let m = RunManifest {
                    command: name.to_string(),
                    args: args[1..].to_vec(),
                    flags: serde_json::to_value(&cli.command).unwrap_or_default(),
                    seeds: out.seeds,
                    artifacts: out.artifacts,
                    wall_clock_seconds: start.elapsed().as_secs_f64(),
                    version: env!("CARGO_PKG_VERSION").to_string(),
                };
                if let Err(e) = m.write(path) {
                    eprintln!("error: cannot write manifest {}: {e}", path.display());
                    return ExitCode::from(1);
                }
            }
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(2)
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Gen(_) => "gen",
        Command::Drc(_) => "drc",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Route(_) => "route",
        Command::Render(_) => "render",
        Command::Gradcheck(_) => "gradcheck",
        Command::Replay(_) => "replay",
    }
}

fn open_dataset(path: &Path) -> Result<DatasetReader, Failure> {
    DatasetReader::open(path).map_err(|e| Failure::Usage(format!("cannot open dataset {}: {e}", path.display())))
}

fn cmd_gen(a: &GenArgs) -> CmdResult {
    let dims = GridDims::new(a.height, a.width)?;
    dataset::generate(&a.out, a.count, a.seed, &ResistanceModel::default(), dims)?;
    println!("wrote {} samples to {}", a.count, a.out.display());
    Ok(Outcome {
        seeds: vec![a.seed],
        artifacts: vec![a.out.clone()],
        manifest: Some(beside(&a.out)),
    })
}

fn cmd_drc(a: &DrcArgs) -> CmdResult {
    let reader = open_dataset(&a.data)?;
    let mut failures = Vec::new();
    for i in 0..reader.len() {
        let s = reader.sample(i)?;
        let report = run_drc(&s.label, &s.pins);
        let pin_plane_ok = s.label.pin_plane() == s.data;
        if !report.passed() || !pin_plane_ok {
            let mut why: Vec<String> = report.violations.iter().map(|v| v.message.clone()).collect();
            if !pin_plane_ok {
                why.push("label pin plane differs from data plane".into());
            }
            failures.push((i, why));
        }
    }
    let n = reader.len();
    let passed = n - failures.len();
    println!(
        "checked {n} samples: {passed} pass ({:.2}%)",
        100.0 * passed as f64 / n as f64
    );
    for (i, why) in failures.iter().take(a.show) {
        println!("sample {i}: {}", why.join("; "));
    }
    if failures.is_empty() {
        Ok(Outcome {
            seeds: vec![],
            artifacts: vec![],
            manifest: None,
        })
    } else {
        Err(Failure::Check(format!("{} samples failed DRC", failures.len())))
    }
}

fn cmd_train(a: &TrainArgs) -> CmdResult {
    let train_reader = open_dataset(&a.data)?;
    let train_set = train_reader.samples()?;
    let val_set = match &a.val {
        Some(p) => {
            let r = open_dataset(p)?;
            if r.dims() != train_reader.dims() {
                return Err(Failure::Usage(format!(
                    "validation grid {:?} differs from training grid {:?}",
                    r.dims(),
                    train_reader.dims()
                )));
            }
            Some(r.samples()?)
        }
        None => None,
    };
    let default = FcnConfig::default();
    let config = FcnConfig {
        first_filter: a.first_filter,
        dims: train_reader.dims(),
        loss: LossConfig::new(default.loss.class_weights[0], default.loss.class_weights[1], a.lambda)?,
        ..default
    };
    let mut model = FcnModel::new(config, a.seed)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let csv_path = a.out_dir.join("metrics.csv");
    let mut csv = BufWriter::new(File::create(&csv_path)?);
    writeln!(csv, "{CSV_HEADER}")?;
    println!("{CSV_HEADER}");
    let settings = TrainSettings {
        epochs: a.epochs,
        batch_size: a.batch,
        learning_rate: a.lr,
        shuffle_seed: a.seed,
    };
    let mut artifacts = vec![csv_path.clone()];
    train(&mut model, &train_set, val_set.as_deref(), &settings, |record, m| {
        for row in record.csv_rows() {
            writeln!(csv, "{row}")?;
            println!("{row}");
        }
        csv.flush()?;
        let ckpt = a.out_dir.join(format!("epoch-{:03}.drck", record.epoch));
        checkpoint::save(m, &ckpt)?;
        artifacts.push(ckpt);
        Ok(())
    })?;
    Ok(Outcome {
        seeds: vec![a.seed],
        artifacts,
        manifest: Some(a.out_dir.join("manifest.json")),
    })
}

fn load_checkpoint(path: &Path) -> Result<FcnModel, Failure> {
    checkpoint::load(path).map_err(|e| Failure::Usage(format!("cannot load checkpoint {}: {e}", path.display())))
}

fn cmd_eval(a: &EvalArgs) -> CmdResult {
    let model = load_checkpoint(&a.checkpoint)?;
    let reader = open_dataset(&a.data)?;
    if reader.dims() != model.config().dims {
        return Err(Failure::Usage(format!(
            "dataset grid {:?} differs from the checkpoint's {:?}",
            reader.dims(),
            model.config().dims
        )));
    }
    let eval = model.evaluate(&reader.samples()?, a.batch)?;
    let row = eval.csv_row(0, "eval");
    println!("{CSV_HEADER}\n{row}");
    match &a.out {
        Some(out) => {
            std::fs::write(out, format!("{CSV_HEADER}\n{row}\n"))?;
            Ok(Outcome {
                seeds: vec![],
                artifacts: vec![out.clone()],
                manifest: Some(beside(out)),
            })
        }
        None => Ok(Outcome {
            seeds: vec![],
            artifacts: vec![],
            manifest: None,
        }),
    }
}

fn predicted_layout(model: &FcnModel, pins: &PinSet) -> Result<LayoutGrid, Failure> {
    let dims = model.config().dims;
    let plane = encode_pins(pins, dims)?;
    let data = Tensor4::from_vec([1, 1, dims.height, dims.width], plane.cells().iter().map(|&v| f32::from(v)).collect())?;
    let pred = model.predict(&data)?;
    Ok(LayoutGrid::from_cells(dims, pred.into_vec())?)
}

fn cmd_route(a: &RouteArgs) -> CmdResult {
    if a.checkpoint.is_none() && !a.oracle {
        return Err(Failure::Usage("route needs --checkpoint, --oracle, or both".into()));
    }
    if a.checkpoint.is_some() && a.oracle && a.oracle_out.is_none() {
        return Err(Failure::Usage(
            "with both --checkpoint and --oracle, give --oracle-out for the reference image".into(),
        ));
    }
    let model = a.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let dims = match &model {
        Some(m) => m.config().dims,
        None => GridDims::new(a.height, a.width)?,
    };
    let pins = parse_pins(&a.pins, dims).map_err(Failure::Usage)?;
    let mut artifacts = Vec::new();
    if let Some(m) = &model {
        let layout = predicted_layout(m, &pins)?;
        decode_to_rgb(&layout).write_ppm(&a.out)?;
        let report = run_drc(&layout, &pins);
        println!(
            "predicted layout written to {} ({} DRC violations)",
            a.out.display(),
            report.violations.len()
        );
        artifacts.push(a.out.clone());
    }
    if a.oracle {
        let net = route_detailed(&pins, &ResistanceModel::default(), dims)?;
        let path = a.oracle_out.as_ref().unwrap_or(&a.out);
        decode_to_rgb(&net.layout).write_ppm(path)?;
        println!(
            "reference route ({}, length {}) written to {}",
            net.combo.name(),
            net.plan.total_length,
            path.display()
        );
        artifacts.push(path.clone());
    }
    Ok(Outcome {
        seeds: vec![],
        manifest: Some(beside(&a.out)),
        artifacts,
    })
}

fn cmd_render(a: &RenderArgs) -> CmdResult {
    let reader = open_dataset(&a.data)?;
    if a.index >= reader.len() {
        return Err(Failure::Usage(format!(
            "sample index {} out of range; the dataset has {} samples",
            a.index,
            reader.len()
        )));
    }
    let s = reader.sample(a.index)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let mut data_only = LayoutGrid::new(reader.dims());
    data_only.set_pin_plane(&s.data)?;
    let data_path = a.out_dir.join(format!("sample-{}-data.ppm", a.index));
    let label_path = a.out_dir.join(format!("sample-{}-label.ppm", a.index));
    decode_to_rgb(&data_only).write_ppm(&data_path)?;
    decode_to_rgb(&s.label).write_ppm(&label_path)?;
    println!("wrote {} and {}", data_path.display(), label_path.display());
    Ok(Outcome {
        seeds: vec![],
        artifacts: vec![data_path, label_path],
        manifest: Some(a.out_dir.join(format!("sample-{}.manifest.json", a.index))),
    })
}

fn cmd_gradcheck(a: &GradcheckArgs) -> CmdResult {
    let checks = gradcheck::suite(a.seed)?;
    let mut failed = 0;
    for c in &checks {
        let status = if c.passed() { "ok" } else { "FAIL" };
        if !c.passed() {
            failed += 1;
        }
        println!(
            "{:<14} {status:<4} max relative error {:.3e} over {} coordinates",
            c.name, c.report.max_rel_error, c.report.checked
        );
    }
    if failed == 0 {
        Ok(Outcome {
            seeds: vec![a.seed],
            artifacts: vec![],
            manifest: None,
        })
    } else {
        Err(Failure::Check(format!(
            "{failed} gradient checks above tolerance {:e}",
            gradcheck::TOLERANCE
        )))
    }
}

fn cmd_replay(a: &ReplayArgs, program: &str) -> ExitCode {
    let m = match RunManifest::read(&a.manifest) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if m.command == "replay" {
        eprintln!("error: manifest records a replay");
        return ExitCode::from(1);
    }
    let mut args = vec![program.to_string()];
    args.extend(m.args);
    run(&args)
}
