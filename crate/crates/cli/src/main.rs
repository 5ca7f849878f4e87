mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use depthduet::config::{Settings, KEYS};
use depthduet::data::{generate_dataset, load_dataset, load_depth_png, load_rgb_png, quantize_depth, save_dataset, save_depth_png};
use depthduet::metrics::{evaluate, DepthPredictor, NearestNeighbor, Task};
use depthduet::trainer::{read_loss_csv, write_loss_csv, TrainState};
use depthduet::Error;

const EXIT_CODES: &str = "\
Exit codes:
  0   success
  2   usage error (bad flags or arguments)
  3   configuration error (unknown key, bad value, invalid settings)
  4   I/O error (missing or unwritable file)
  5   malformed input file (PNG, CSV)
  6   shape mismatch (image size vs model, indivisible size)
  7   checkpoint error (version mismatch or corruption)
  8   empty or unusable dataset, or no valid ground-truth pixels
  9   non-finite value during training
  10  unsupported request (e.g. completion with a single-network model)";

#[derive(Parser)]
#[command(name = "depthduet", version, about = "Two-stage monocular depth estimation and sparse depth completion")]
#[command(after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Config file of `key = value` lines (see `depthduet keys`)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; all randomness derives from it [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output path (directory for gen-data and train, file otherwise)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Input path (dataset directory, image, or loss CSV depending on the verb)
    #[arg(long, global = true)]
    input: Option<PathBuf>,

    /// Model checkpoint to load
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,

    /// Training steps (overrides the config)
    #[arg(long, global = true)]
    steps: Option<u64>,

    /// Named ablation: sn-l1, sn-l1-adv, sn-ac, fn-r, full
    #[arg(long, global = true)]
    ablation: Option<String>,

    /// Config override, repeatable; wins over the config file
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a mixed synthetic/real toy dataset (rgb/, sparse/, dense/ PNGs and manifest.txt)
    GenData,
    /// Train (or resume with --checkpoint); writes model.ckpt, loss.csv and periodic checkpoints
    Train,
    /// Dense depth PNG from an RGB PNG through both networks
    Estimate {
        /// Also write the intermediate sparse depth PNG here
        #[arg(long)]
        sparse_out: Option<PathBuf>,
    },
    /// Dense depth PNG from a sparse depth PNG through the completion network alone
    Complete,
    /// Score a model or baseline on a dataset and write a metrics CSV
    Eval {
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
        /// Evaluate the nearest-neighbour completion baseline instead of a checkpoint
        #[arg(long)]
        baseline: bool,
    },
    /// Loss-curve SVG from a loss CSV
    Plot,
    /// List the accepted config keys
    Keys,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Estimation,
    Completion,
}

#[derive(Debug)]
enum CliError {
    Core(Error),
    Usage(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                Error::UnknownKey(_) | Error::ConfigValue { .. } | Error::InvalidConfig(_) => 3,
                Error::Io { .. } => 4,
                Error::Format { .. } => 5,
                Error::Shape(_) => 6,
                Error::Version { .. } | Error::Corrupt(_) => 7,
                Error::Dataset(_) | Error::EmptyEvaluation => 8,
                Error::NonFinite { .. } => 9,
                Error::Range(_) | Error::Inconsistent(_) | Error::Unsupported(_) => 10,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(m) => write!(f, "{m}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn settings(cli: &Cli) -> CliResult<Settings> {
    let mut s = match &cli.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    s.apply_overrides(&cli.overrides)?;
    if let Some(seed) = cli.seed {
        s.set("seed", &seed.to_string())?;
    }
    if let Some(steps) = cli.steps {
        s.set("steps", &steps.to_string())?;
    }
    if let Some(a) = &cli.ablation {
        s.set("ablation", a)?;
    }
    Ok(s)
}

fn data_root() -> PathBuf {
    std::env::var_os("DEPTHDUET_DATA_ROOT").map_or_else(|| PathBuf::from("data"), PathBuf::from)
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str, verb: &str) -> CliResult<&'a Path> {
    value.as_deref().ok_or_else(|| CliError::Usage(format!("{verb} needs --{flag}")))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| {
        Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::GenData => {
            let s = settings(cli)?;
            let out = cli.out.clone().unwrap_or_else(data_root);
            let samples = generate_dataset(&s.dataset_config()?)?;
            save_dataset(&out, &samples)?;
            println!("wrote {} samples to {}", samples.len(), out.display());
        }
        Command::Train => {
            let s = settings(cli)?;
            let input = cli.input.clone().unwrap_or_else(data_root);
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("run"));
            let dataset = load_dataset(&input)?;
            let mut state = match &cli.checkpoint {
                Some(path) => TrainState::load(path)?,
                None => {
                    s.train.validate()?;
                    TrainState::new(s.train.clone())?
                }
            };
            if cli.checkpoint.is_some() {
                // resumed runs keep the checkpoint's model; only the budget and cadence apply
                state.config.checkpoint_every = s.train.checkpoint_every;
            }
            let steps = s.train.steps;
            if steps == 0 {
                return Err(Error::InvalidConfig("steps must be at least 1".into()).into());
            }
            let ckpt_dir = out.join("checkpoints");
            create_dir(&ckpt_dir)?;
            let every = (steps / 20).max(1);
            let trace = state.run(&dataset, steps, Some(&ckpt_dir), |step, r| {
                if step % every == 0 || step + 1 == steps {
                    eprintln!(
                        "step {step:>6}  total {:.4}  rec_sg {:.4}  rec_dg {:.4}  adv_g {:.4}  smooth {:.4}",
                        r.total, r.rec_sg, r.rec_dg, r.adv_g, r.smooth
                    );
                }
            })?;
            let mut full = match &cli.checkpoint {
                Some(_) => read_loss_csv(out.join("loss.csv")).unwrap_or_default(),
                None => Vec::new(),
            };
            full.extend(trace);
            write_loss_csv(out.join("loss.csv"), &full)?;
            state.save(out.join("model.ckpt"))?;
            println!("trained to step {}; model at {}", state.step, out.join("model.ckpt").display());
        }
        Command::Estimate { sparse_out } => {
            let state = TrainState::load(required(&cli.checkpoint, "checkpoint", "estimate")?)?;
            let rgb = load_rgb_png(required(&cli.input, "input", "estimate")?)?;
            let out = required(&cli.out, "out", "estimate")?;
            let sparse = state.infer_sparse(&rgb)?;
            let dense = if state.dg.is_some() {
                // the completion stage sees exactly what the sparse PNG stores,
                // so `complete` on that file reproduces this result
                let sparse = quantize_depth(&sparse)?;
                if let Some(path) = sparse_out {
                    save_depth_png(&sparse, path)?;
                }
                state.infer_complete(&sparse)?
            } else {
                if let Some(path) = sparse_out {
                    save_depth_png(&sparse, path)?;
                }
                sparse
            };
            save_depth_png(&dense, out)?;
        }
        Command::Complete => {
            let state = TrainState::load(required(&cli.checkpoint, "checkpoint", "complete")?)?;
            let sparse = load_depth_png(required(&cli.input, "input", "complete")?)?;
            let dense = state.infer_complete(&sparse)?;
            save_depth_png(&dense, required(&cli.out, "out", "complete")?)?;
        }
        Command::Eval { task, baseline } => {
            let s = settings(cli)?;
            let input = cli.input.clone().unwrap_or_else(data_root);
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("metrics.csv"));
            let dataset = load_dataset(&input)?;
            let model;
            let predictor: &dyn DepthPredictor = match (&cli.checkpoint, baseline) {
                (None, true) => &NearestNeighbor,
                (Some(path), false) => {
                    model = TrainState::load(path)?;
                    &model
                }
                (Some(_), true) => return Err(CliError::Usage("--baseline and --checkpoint are exclusive".into())),
                (None, false) => return Err(CliError::Usage("eval needs --checkpoint or --baseline".into())),
            };
            let task = match task {
                Some(TaskArg::Estimation) => Task::Estimation,
                Some(TaskArg::Completion) => Task::Completion,
                None if *baseline => Task::Completion,
                None => Task::Estimation,
            };
            let report = evaluate(predictor, &dataset, task, &s.eval)?;
            report.write_csv(&out)?;
            let csv = report.to_csv();
            let header = csv.lines().next().unwrap_or_default();
            let aggregate = csv.lines().last().unwrap_or_default();
            println!("{} {} over {} samples", report.predictor, task.as_str(), report.sample_count());
            println!("{header}\n{aggregate}");
        }
        Command::Plot => {
            let input = required(&cli.input, "input", "plot")?;
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("loss.svg"));
            let trace = read_loss_csv(input)?;
            if trace.is_empty() {
                return Err(Error::Dataset(format!("{} has no rows", input.display())).into());
            }
            fs::write(&out, plot::loss_svg(&trace)).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
        }
        Command::Keys => {
            for (key, help) in KEYS {
                println!("{key:<18} {help}");
            }
        }
    }
    Ok(())
}
