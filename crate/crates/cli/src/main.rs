use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use larmor::config::{fmt, ConfigLayer, ScenarioConfig};
use larmor::delay::{fit_delay_weights, lag_error_profile, ScoringWindow};
use larmor::experiments::{self, DELAY_SCAN_POINTS};
use larmor::io::{self, Table};
use larmor::{run_filter, run_smoother, Result};

/// Estimate a fluctuating magnetic field from simulated Faraday probing.
///
/// Parameters are resolved as command-line flags, then the `--config` file,
/// then (for commands reading a record) the record header, then built-in
/// defaults.
#[derive(Parser, Debug)]
#[command(name = "larmor", version)]
struct Cli {
    #[command(flatten)]
    scenario: ScenarioArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct ScenarioArgs {
    /// TOML scenario file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Light segment duration (s).
    #[arg(long, global = true, value_name = "S")]
    tau: Option<f64>,
    /// Field damping rate (1/s).
    #[arg(long = "gamma-b", global = true, value_name = "R")]
    gamma_b: Option<f64>,
    /// Field diffusion strength (pT^2/s).
    #[arg(long = "sigma-b", global = true, value_name = "R")]
    sigma_b: Option<f64>,
    /// Damping rate assumed by the estimators, if different.
    #[arg(long = "filter-gamma-b", global = true, value_name = "R")]
    filter_gamma_b: Option<f64>,
    /// Diffusion strength assumed by the estimators, if different.
    #[arg(long = "filter-sigma-b", global = true, value_name = "R")]
    filter_sigma_b: Option<f64>,
    /// Simulated time per realization (s).
    #[arg(long, global = true, value_name = "S")]
    duration: Option<f64>,
    #[arg(long, global = true, value_name = "N")]
    realizations: Option<usize>,
    /// Number of stored past field values.
    #[arg(long = "lag-slots", global = true, value_name = "N")]
    lag_slots: Option<usize>,
    /// Steps between stored past values.
    #[arg(long = "lag-stride", global = true, value_name = "K")]
    lag_stride: Option<usize>,
    /// Maximum steps per realization.
    #[arg(long = "step-cap", global = true, value_name = "N")]
    step_cap: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl ScenarioArgs {
    fn layer(&self) -> ConfigLayer {
        ConfigLayer {
            seed: self.seed,
            tau: self.tau,
            gamma_b: self.gamma_b,
            sigma_b: self.sigma_b,
            filter_gamma_b: self.filter_gamma_b,
            filter_sigma_b: self.filter_sigma_b,
            duration: self.duration,
            realizations: self.realizations,
            lag_slots: self.lag_slots,
            lag_stride: self.lag_stride,
            step_cap: self.step_cap,
            out: self.out.clone(),
            ..Default::default()
        }
    }

    /// Flags over file over `base`, validated.
    fn resolve(&self, base: ConfigLayer) -> Result<ScenarioConfig> {
        let file = match &self.config {
            Some(path) => ConfigLayer::load(path)?,
            None => ConfigLayer::default(),
        };
        let cfg = ScenarioConfig::resolve(self.layer().over(file).over(base))?;
        for w in cfg.validate()? {
            warn!("{w}");
        }
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate measurement records, one file per realization.
    Simulate,
    /// Run the filter on a record file.
    Filter {
        record: PathBuf,
        /// Output file (default: <out>/<record stem>.trace.dat).
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Run the fixed-lag smoother on a record file.
    Smooth {
        record: PathBuf,
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Also score fixed delays and fit delay weights against the true field.
        #[arg(long)]
        weights: bool,
    },
    /// Write the dataset behind one of the figures.
    Figure {
        #[arg(long, value_name = "ID")]
        figure: u32,
    },
    /// Compare empirical squared error with reported variance.
    Calibrate {
        /// Include every smoother delay (slow for long lags).
        #[arg(long)]
        smoother: bool,
    },
    /// Print steady-state and static-field variances.
    Steady,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 3 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let args = &cli.scenario;
    match cli.command {
        Command::Simulate => simulate(&args.resolve(ConfigLayer::default())?),
        Command::Filter { record, output } => filter(args, &record, output),
        Command::Smooth {
            record,
            output,
            weights,
        } => smooth(args, &record, output, weights),
        Command::Figure { figure } => {
            let cfg = args.resolve(ConfigLayer::default())?;
            for (name, table) in experiments::figure(&cfg, figure)? {
                let path = cfg.out.join(name);
                table.write(&path)?;
                info!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Calibrate { smoother } => {
            calibrate(&args.resolve(ConfigLayer::default())?, smoother)
        }
        Command::Steady => steady(&args.resolve(ConfigLayer::default())?),
    }
}

fn simulate(cfg: &ScenarioConfig) -> Result<()> {
    let header = cfg.header();
    experiments::ensemble(cfg.seed, cfg.realizations, |i, seed| {
        let record = experiments::simulate(cfg, i)?;
        let path = cfg.out.join(format!("record_{i:04}.dat"));
        io::write_record(&path, &record, header.clone())?;
        info!("realization {i}: seed {seed} -> {}", path.display());
        Ok(())
    })?;
    Ok(())
}

fn derived_path(cfg: &ScenarioConfig, record: &Path, suffix: &str) -> PathBuf {
    let stem = record
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "record".into());
    cfg.out.join(format!("{stem}.{suffix}.dat"))
}

fn filter(args: &ScenarioArgs, path: &Path, output: Option<PathBuf>) -> Result<()> {
    let (record, table) = io::read_record(path)?;
    let cfg = args.resolve(ConfigLayer::from_header(&table.header)?)?;
    let trace = run_filter(&record, &cfg.physics, &cfg.filter_ou)?;
    let out = output.unwrap_or_else(|| derived_path(&cfg, path, "trace"));
    let mut header = cfg.header();
    header.push(("record_seed".into(), record.seed.to_string()));
    io::trace_table(&trace, header).write(&out)?;
    info!("wrote {}", out.display());
    Ok(())
}

fn smooth(args: &ScenarioArgs, path: &Path, output: Option<PathBuf>, weights: bool) -> Result<()> {
    let (record, table) = io::read_record(path)?;
    let cfg = args.resolve(ConfigLayer::from_header(&table.header)?)?;
    let mut header = cfg.header();
    header.push(("record_seed".into(), record.seed.to_string()));
    let st = run_smoother(&record, &cfg.physics, &cfg.filter_ou, cfg.lag)?;
    let out = output.unwrap_or_else(|| derived_path(&cfg, path, "smoothed"));
    io::smoothed_table(&st, header.clone()).write(&out)?;
    info!("wrote {}", out.display());

    if weights {
        let tau = cfg.physics.tau;
        let trace = run_filter(&record, &cfg.physics, &cfg.filter_ou)?;
        let skip = experiments::steady_skip(&cfg.physics, &cfg.filter_ou, cfg.duration)?;
        let window = ScoringWindow {
            skip,
            sample_stride: 1,
        };
        let (step, delays) = experiments::delay_grid(&cfg);
        let profile = lag_error_profile(&trace, &record.true_field, tau, &delays, &window)?;
        let fit = fit_delay_weights(
            &trace,
            &record.true_field,
            tau,
            step,
            DELAY_SCAN_POINTS,
            &window,
        )?;
        if fit.collinear {
            warn!("delay columns are collinear; weights from a pseudoinverse");
        }

        let mut prof = Table::new(&["delay", "error_sq"]).with_header(header.clone());
        prof.push_header("kind", "delay_error");
        prof.push_header("skip", fmt(skip));
        prof.push_header("weighted_error_sq", fmt(fit.error));
        prof.rows = delays
            .iter()
            .zip(&profile)
            .map(|(d, e)| vec![*d, *e])
            .collect();
        let p = derived_path(&cfg, path, "delay_error");
        prof.write(&p)?;
        info!("wrote {}", p.display());

        let mut w = io::weights_table(&fit.delays(tau), &fit.weights, header);
        w.push_header("error_sq", fmt(fit.error));
        w.push_header("collinear", fit.collinear);
        let p = derived_path(&cfg, path, "weights");
        w.write(&p)?;
        info!("wrote {}", p.display());
    }
    Ok(())
}

fn calibrate(cfg: &ScenarioConfig, with_smoother: bool) -> Result<()> {
    let report = experiments::calibrate(cfg, with_smoother)?;
    println!(
        "realizations {}  steady window from {} s",
        report.realizations,
        fmt(report.skip)
    );
    let show = |l: &experiments::CalibrationLine| {
        println!(
            "{:<16} mse {:.4e}  var {:.4e}  ratio {:.4} [{:.4}, {:.4}]  {}",
            l.label,
            l.mse,
            l.mean_var,
            l.ratio,
            l.ci.0,
            l.ci.1,
            if l.in_band() { "ok" } else { "OUT OF BAND" }
        )
    };
    show(&report.filter);
    report.smoother.iter().for_each(show);
    if cfg.is_mismatched() {
        warn!("estimators use a field model different from the simulated one");
    }
    let path = cfg.out.join("calibration.dat");
    report.table(cfg.header()).write(&path)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn steady(cfg: &ScenarioConfig) -> Result<()> {
    let s = experiments::steady_summary(cfg)?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6e}")).unwrap_or_else(|| "-".into());
    println!("steady_variance       {}", opt(s.steady_closed_form));
    println!("steady_iterated       {}", opt(s.steady_iterated));
    println!("field_variance        {}", opt(s.field_variance));
    println!("transient_1pct        {}", opt(s.transient));
    println!(
        "static_variance({})  {:.6e}",
        fmt(cfg.duration),
        s.static_at_duration
    );
    Ok(())
}
