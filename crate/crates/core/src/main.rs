//! Command-line interface for the walking-assistance pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use walkaid::blob::{connected_components, extract_leg_midpoints, to_robot_frame, LegFilter};
use walkaid::control::{run_follow, ControllerConfig};
use walkaid::eval::{
    baseline_segment, format_table, run_protocol, summarize, EvalReport, Thresholds,
};
use walkaid::gait::{estimate_gait, track_legs};
use walkaid::geometry::{transforms_from_json, FrameId, RigidTransform};
use walkaid::nn::{load_model, save_model, train, unet_forward, TrainConfig, UNetConfig};
use walkaid::raster::{rasterize, read_grid_bytes, write_grid_file, GridSpec, OccupancyGrid};
use walkaid::scan::{read_scan_log, write_scan_log};
use walkaid::sim::{gen_protocol_trials, gen_training_set, gen_walker_scan_log};

#[derive(Parser)]
#[command(name = "walkaid", version, about = "Leg detection, gait estimation and person following from 2D laser scans")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scan logs or labeled training grids
    Simulate(SimulateArgs),
    /// Rasterize a scan log into occupancy-grid PGM files
    Rasterize {
        /// JSONL scan log
        #[arg(long = "in")]
        input: PathBuf,
        /// Directory for grid_NNNN.pgm outputs
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a segmentation model on grid/mask PGM pairs
    Train {
        /// Directory with grid_NNNN.pgm and mask_NNNN.pgm pairs
        #[arg(long)]
        data: PathBuf,
        /// Output model file
        #[arg(long)]
        out: PathBuf,
        /// Optional training-config JSON
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training seed (overrides the config file)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Segment one occupancy grid with a trained model
    Segment {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        /// Output mask PGM (a JSON sidecar records the threshold)
        #[arg(long)]
        out: PathBuf,
        /// Binarization threshold; defaults to the model's stored value
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Estimate gait parameters from a scan log
    Gait {
        /// JSONL scan log
        #[arg(long)]
        scans: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// JSON file with the laser-to-robot transform
        #[arg(long)]
        transforms: PathBuf,
        /// Output gait-report JSON
        #[arg(long)]
        out: PathBuf,
        /// Binarization threshold; defaults to the model's stored value
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Run the closed-loop person-following simulation
    Follow {
        /// Reserved for future sensor noise; the simulation is deterministic
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Simulated time in seconds
        #[arg(long, default_value_t = 30.0)]
        duration: f64,
        #[arg(long, default_value_t = 0.5)]
        speed: f64,
        #[arg(long, default_value_t = 1.0)]
        stride: f64,
        /// Output trajectory JSONL
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the 18-trial standing protocol and report detection rates
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optional JSON report path
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SimulateArgs {
    #[command(subcommand)]
    mode: SimulateMode,
}

#[derive(Subcommand)]
enum SimulateMode {
    /// Scan log of a person walking through the laser's field of view
    Walk {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.25)]
        speed: f64,
        #[arg(long, default_value_t = 0.4)]
        stride: f64,
        #[arg(long, default_value_t = 6.0)]
        duration: f64,
        /// Scan rate in Hz
        #[arg(long, default_value_t = 10.0)]
        rate: f64,
        /// Output scan-log JSONL
        #[arg(long)]
        out: PathBuf,
    },
    /// Labeled grid/mask training pairs from randomized scenes
    Dataset {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

enum AppError {
    Usage(String),
    Data(String),
}

impl From<walkaid::Error> for AppError {
    fn from(e: walkaid::Error) -> Self {
        match e {
            walkaid::Error::InvalidArgument(_) => AppError::Usage(e.to_string()),
            _ => AppError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for AppError {
    fn from(e: serde_json::Error) -> Self {
        AppError::Data(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(AppError::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Rasterize { input, out_dir } => cmd_rasterize(&input, &out_dir),
        Command::Train { data, out, config, seed } => cmd_train(&data, &out, config.as_deref(), seed),
        Command::Segment { model, input, out, threshold } => {
            cmd_segment(&model, &input, &out, threshold)
        }
        Command::Gait { scans, model, transforms, out, threshold } => {
            cmd_gait(&scans, &model, &transforms, &out, threshold)
        }
        Command::Follow { seed: _, duration, speed, stride, out } => {
            cmd_follow(duration, speed, stride, &out)
        }
        Command::Eval { model, seed, out } => cmd_eval(&model, seed, out.as_deref()),
    }
}

fn simulate(args: SimulateArgs) -> Result<(), AppError> {
    match args.mode {
        SimulateMode::Walk { seed, speed, stride, duration, rate, out } => {
            let log = gen_walker_scan_log(speed, stride, duration, rate, seed)?;
            let f = fs::File::create(&out)?;
            write_scan_log(std::io::BufWriter::new(f), &log)?;
            println!("wrote {} scans to {}", log.len(), out.display());
            Ok(())
        }
        SimulateMode::Dataset { seed, count, out_dir } => {
            let pairs = gen_training_set(count, seed)?;
            fs::create_dir_all(&out_dir)?;
            for (i, (grid, mask)) in pairs.iter().enumerate() {
                write_grid_file(&out_dir.join(format!("grid_{i:04}.pgm")), grid)?;
                write_grid_file(&out_dir.join(format!("mask_{i:04}.pgm")), mask)?;
            }
            println!("wrote {} grid/mask pairs to {}", pairs.len(), out_dir.display());
            Ok(())
        }
    }
}

fn cmd_rasterize(input: &Path, out_dir: &Path) -> Result<(), AppError> {
    let f = fs::File::open(input)?;
    let scans = read_scan_log(BufReader::new(f))?;
    let spec = GridSpec::default();
    fs::create_dir_all(out_dir)?;
    for (i, scan) in scans.iter().enumerate() {
        scan.validate()?;
        let grid = rasterize(scan, &spec);
        write_grid_file(&out_dir.join(format!("grid_{i:04}.pgm")), &grid)?;
    }
    println!("wrote {} grids to {}", scans.len(), out_dir.display());
    Ok(())
}

fn load_dataset(dir: &Path) -> Result<Vec<(OccupancyGrid, OccupancyGrid)>, AppError> {
    let mut pairs = Vec::new();
    for i in 0.. {
        let grid_path = dir.join(format!("grid_{i:04}.pgm"));
        let mask_path = dir.join(format!("mask_{i:04}.pgm"));
        if !grid_path.exists() {
            break;
        }
        let grid = read_grid_bytes(&fs::read(&grid_path)?)?;
        let mask = read_grid_bytes(&fs::read(&mask_path).map_err(|_| {
            AppError::Data(format!("missing mask for {}", grid_path.display()))
        })?)?;
        pairs.push((grid, mask));
    }
    if pairs.is_empty() {
        return Err(AppError::Data(format!(
            "no grid_NNNN.pgm files found in {}",
            dir.display()
        )));
    }
    Ok(pairs)
}

fn cmd_train(
    data: &Path,
    out: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
) -> Result<(), AppError> {
    let dataset = load_dataset(data)?;
    let mut cfg: TrainConfig = match config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let (model, history) = train(&dataset, &UNetConfig::default(), &cfg)?;
    save_model(out, &model)?;
    println!(
        "trained on {} samples, {} steps, loss {:.4} -> {:.4}; model written to {}",
        dataset.len(),
        history.len(),
        history.first().copied().unwrap_or(f64::NAN),
        history.last().copied().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

fn cmd_segment(
    model: &Path,
    input: &Path,
    out: &Path,
    threshold: Option<f64>,
) -> Result<(), AppError> {
    if let Some(t) = threshold {
        if !(0.0..1.0).contains(&t) || t <= 0.0 {
            return Err(AppError::Usage(format!("threshold {t} outside (0, 1)")));
        }
    }
    let model = load_model(model)?;
    let grid = read_grid_bytes(&fs::read(input)?)?;
    let mut mask = unet_forward(&grid, &model)?;
    if let Some(t) = threshold {
        mask.threshold = t;
    }
    walkaid::nn::write_mask_file(out, &mask)?;
    println!("wrote mask to {}", out.display());
    Ok(())
}

fn laser_to_robot(transforms: &[RigidTransform]) -> Result<RigidTransform, AppError> {
    transforms
        .iter()
        .find(|m| m.source == FrameId::Laser && m.target == FrameId::RobotBase)
        .copied()
        .ok_or_else(|| AppError::Data("no laser-to-robot (L -> R) transform in config".into()))
}

fn cmd_gait(
    scans: &Path,
    model: &Path,
    transforms: &Path,
    out: &Path,
    threshold: Option<f64>,
) -> Result<(), AppError> {
    if let Some(t) = threshold {
        if !(0.0..1.0).contains(&t) || t <= 0.0 {
            return Err(AppError::Usage(format!("threshold {t} outside (0, 1)")));
        }
    }
    let f = fs::File::open(scans)?;
    let log = read_scan_log(BufReader::new(f))?;
    let model = load_model(model)?;
    let l_to_r = laser_to_robot(&transforms_from_json(&fs::read_to_string(transforms)?)?)?;
    let spec = GridSpec::default();
    let filter = LegFilter::default();
    let mut observations = Vec::with_capacity(log.len());
    for scan in &log {
        scan.validate()?;
        let grid = rasterize(scan, &spec);
        let mut mask = unet_forward(&grid, &model)?;
        if let Some(t) = threshold {
            mask.threshold = t;
        }
        let blobs = connected_components(&mask, mask.threshold);
        let obs = extract_leg_midpoints(&blobs, &spec, &filter, scan.timestamp);
        observations.push(to_robot_frame(&obs, &l_to_r)?);
    }
    let tracks = track_legs(&observations)?;
    let report = estimate_gait(&tracks)?;
    fs::write(out, serde_json::to_string_pretty(&report)?)?;
    println!(
        "stride length {:.3} m, stride velocity {:.3} m/s, cadence {:.3} Hz ({} strides)",
        report.stride_length, report.stride_velocity, report.cadence, report.strides_observed
    );
    Ok(())
}

fn cmd_follow(duration: f64, speed: f64, stride: f64, out: &Path) -> Result<(), AppError> {
    let log = run_follow(&ControllerConfig::default(), speed, stride, duration, 0.05)?;
    let mut text = String::new();
    for rec in &log {
        text.push_str(&serde_json::to_string(rec)?);
        text.push('\n');
    }
    fs::write(out, text)?;
    println!("wrote {} trajectory records to {}", log.len(), out.display());
    Ok(())
}

fn cmd_eval(model_path: &Path, seed: u64, out: Option<&Path>) -> Result<(), AppError> {
    let model = load_model(model_path)?;
    let trials = gen_protocol_trials(seed);
    let thresholds = Thresholds::default();
    let results = run_protocol(&trials, &thresholds, |g| unet_forward(g, &model))?;
    let summary = summarize(&results)?;
    println!("model: {}", model_path.display());
    print!("{}", format_table(&summary));
    println!(
        "Legs detected {}/{}\nFalse Positives {}/{}",
        summary.n_s, summary.n_t, summary.n_f, summary.n_t
    );

    let baseline_results = run_protocol(&trials, &thresholds, |g| Ok(baseline_segment(g)))?;
    let baseline_summary = summarize(&baseline_results)?;
    println!("\nbaseline (clutter-naive):");
    print!("{}", format_table(&baseline_summary));

    if let Some(path) = out {
        let report = EvalReport {
            model: model_path.display().to_string(),
            seed,
            thresholds,
            trials: results,
            summary,
        };
        fs::write(path, serde_json::to_string_pretty(&report)?)?;
        println!("\nreport written to {}", path.display());
    }
    Ok(())
}
