//! `saw`: fit jumping slope paths on a CSV panel, or run simulation designs.

mod artifacts;
mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sawpanel::dgp::{run_monte_carlo, DgpSpec, NoiseParam};
use sawpanel::{fit_panel, load_panel, InstrumentMode, PanelSchema, PipelineOptions, SawError, TimeEffects, VarianceCase};

#[derive(Debug, Parser)]
#[command(name = "saw", version, about = "Wavelet estimation of jumping slope parameters in panels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate break locations and regime coefficients for a long-format CSV panel.
    Fit(FitArgs),
    /// Run a Monte Carlo design and write the metrics table.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Instruments {
    #[value(name = "self")]
    SelfInstrumented,
    TwoStage,
}

impl From<Instruments> for InstrumentMode {
    fn from(i: Instruments) -> Self {
        match i {
            Instruments::SelfInstrumented => InstrumentMode::SelfInstrumented,
            Instruments::TwoStage => InstrumentMode::TwoStage,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Effects {
    Unit,
    Between,
}

#[derive(Debug, Args)]
struct EstimatorArgs {
    /// Instrument handling; defaults to `self` (two-stage for design 2 in `simulate`).
    #[arg(long, value_enum)]
    instruments: Option<Instruments>,
    #[arg(long, value_enum, default_value = "unit")]
    time_effects: Effects,
    /// Post-SAW covariance: 1 pooled, 2 per unit, 3 per period, 4 robust.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u8).range(1..=4))]
    variance_case: u8,
    /// Fixed threshold instead of the data-driven one.
    #[arg(long)]
    lambda: Option<f64>,
    /// Impose the union of all detected breaks on every regressor.
    #[arg(long)]
    common_jumps: bool,
    /// Small-n threshold adjustment.
    #[arg(long)]
    small_n: bool,
}

impl EstimatorArgs {
    fn options(&self, default_instruments: InstrumentMode) -> Result<PipelineOptions, SawError> {
        Ok(PipelineOptions {
            time_effects: match self.time_effects {
                Effects::Unit => TimeEffects::Unit,
                Effects::Between => TimeEffects::Between,
            },
            instruments: self.instruments.map_or(default_instruments, Into::into),
            variance_case: VarianceCase::from_code(self.variance_case)?,
            lambda: self.lambda,
            common_jumps: self.common_jumps,
            small_n: self.small_n,
            ..PipelineOptions::default()
        })
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Long-format CSV with one row per (unit, period).
    #[arg(long)]
    input: PathBuf,
    /// TOML file naming the unit, time, outcome, regressor and instrument columns.
    #[arg(long)]
    schema: Option<PathBuf>,
    #[command(flatten)]
    estimator: EstimatorArgs,
    #[arg(long, default_value = "saw_out")]
    out: PathBuf,
    /// Write one SVG figure per regressor.
    #[arg(long)]
    plot: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Design number 1-6.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=6))]
    dgp: u8,
    #[arg(long)]
    n: usize,
    #[arg(long = "T")]
    t: usize,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Worker threads; 0 uses every core. Output does not depend on it.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Number of breaks for the single-regressor designs.
    #[arg(long)]
    jumps: Option<usize>,
    /// Read the error scale parameters as standard deviations rather than variances.
    #[arg(long)]
    noise_sd: bool,
    #[command(flatten)]
    estimator: EstimatorArgs,
    #[arg(long, default_value = "saw_out")]
    out: PathBuf,
}

fn read_schema(path: &Path) -> Result<PanelSchema, SawError> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| SawError::Config(format!("schema {}: {}", path.display(), e.message())))
}

fn fit(args: &FitArgs) -> Result<(), SawError> {
    let schema = args.schema.as_deref().map(read_schema).transpose()?;
    let file = fs::File::open(&args.input)
        .map_err(|e| SawError::Io(format!("{}: {e}", args.input.display())))?;
    let panel = load_panel(file, schema.as_ref())?;
    log::info!("loaded panel n = {}, T = {}, P = {}", panel.n(), panel.t(), panel.p());
    let opts = args.estimator.options(InstrumentMode::SelfInstrumented)?;
    let fit = fit_panel(&panel, &opts)?;
    fs::create_dir_all(&args.out)?;
    artifacts::write_fit(&args.out, &fit)?;
    if args.plot {
        for p in 0..fit.panel.p() {
            let name = &fit.panel.regressor_names()[p];
            let svg = plot::regressor_figure(&fit, p);
            fs::write(args.out.join(format!("plot_{}.svg", artifacts::file_stem(name))), svg)?;
        }
    }
    for (name, locs) in fit.panel.regressor_names().iter().zip(&fit.breaks) {
        println!("{name}: breaks {locs:?}");
    }
    println!("threshold {:.6}, results in {}", fit.saw.lambda(), args.out.display());
    Ok(())
}

fn simulate(args: &SimulateArgs) -> Result<(), SawError> {
    let spec = DgpSpec {
        jumps: args.jumps,
        noise_param: if args.noise_sd { NoiseParam::Sd } else { NoiseParam::Variance },
        ..DgpSpec::new(args.dgp, args.n, args.t, args.seed)
    };
    spec.validate()?;
    let default_instruments = if args.dgp == 2 {
        InstrumentMode::TwoStage
    } else {
        InstrumentMode::SelfInstrumented
    };
    let opts = args.estimator.options(default_instruments)?;
    let result = run_monte_carlo(&spec, args.reps, args.threads, &opts)?;
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("mc_table.csv"), result.to_csv()?)?;
    let summary = result.summary();
    fs::write(args.out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn run(cli: &Cli) -> Result<(), SawError> {
    match &cli.command {
        Command::Fit(args) => fit(args),
        Command::Simulate(args) => simulate(args),
    }
}

/// 2 for usage errors, 1 for estimation failures.
fn exit_code(e: &SawError) -> u8 {
    if e.is_usage() {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SAW_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(exit_code(&e))
        }
    }
}
