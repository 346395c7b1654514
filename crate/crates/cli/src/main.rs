use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use dogbo::controller::{ParamBounds, SpeedProfile};
use dogbo::gp::KernelKind;
use dogbo::harness::{
    correlate, correlate_csv, emit_report, rows_from_csv, run_campaign, run_campaign_on, spearman, summarize,
    summary_to_csv, summary_to_json, Arm, CampaignConfig, CorrelateConfig, CostKind, ReportFormat, TRIALS_FILE,
};
use dogbo::tablegen::{generate_table, load_table, save_table, Scheme, TableSpec};
use dogbo::Error;

#[derive(Parser)]
#[command(name = "dogbo", version, about = "Behavior-score kernels for tuning biped walking controllers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score a grid of controllers with short simulations and save the table.
    Tablegen {
        /// Bounds file (`variant: 9d` plus `name: lo, hi` lines). Defaults to the built-in box.
        #[arg(long)]
        bounds: Option<PathBuf>,
        #[arg(long, default_value_t = 20_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3.5)]
        sim_seconds: f64,
        #[arg(long, default_value_t = 0.5)]
        target_speed: f64,
        /// `sobol` or `random`.
        #[arg(long, default_value = "sobol")]
        scheme: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// One optimization run on a perturbed model.
    Optimize {
        #[arg(long)]
        table: PathBuf,
        /// `se`, `dog` or `dog-adj`.
        #[arg(long, default_value = "dog")]
        kernel: String,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0.15)]
        perturb: f64,
        /// Profile file of `segment = speed, steps` lines. Defaults to the interval profile.
        #[arg(long)]
        profile: Option<PathBuf>,
        /// `hw` or `sim`.
        #[arg(long, default_value = "sim")]
        cost: String,
        /// Directory for trials.csv and summary.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every configured arm over many seeded runs.
    Campaign {
        #[arg(long)]
        config: PathBuf,
    },
    /// Short-sim score and full-episode cost for random controllers.
    Correlate {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize the trials.csv of a campaign directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "json")]
        format: String,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) | Some(Error::InvalidArgument(_)) => 2,
        Some(Error::NumericalFailure(_)) => 3,
        _ => 1,
    }
}

fn tablegen(
    bounds: Option<&Path>,
    n: usize,
    seed: u64,
    sim_seconds: f64,
    target_speed: f64,
    scheme: &str,
    out: &Path,
) -> Result<()> {
    let bounds = match bounds {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ParamBounds::from_text(&text)?
        }
        None => ParamBounds::default_for(dogbo::controller::Variant::NineD),
    };
    if !(sim_seconds > 0.0) || n == 0 {
        return Err(Error::Config("--n and --sim-seconds must be positive".into()).into());
    }
    let mut spec = TableSpec::new(bounds);
    spec.seed = seed;
    spec.sim_seconds = sim_seconds;
    spec.target_speed = target_speed;
    spec.scheme = Scheme::parse(scheme)?;
    let table = generate_table(&spec, n)?;
    let (lo, hi) = table.phi_range();
    let flagged = table.rows.iter().filter(|r| r.flagged).count();
    info!("{} rows, phi in [{lo:.3}, {hi:.3}], {flagged} flagged", table.len());
    save_table(&table, out)?;
    println!("wrote {} ({} rows, fingerprint {})", out.display(), table.len(), table.fingerprint());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn optimize(
    table_path: &Path,
    kernel: &str,
    trials: usize,
    seed: u64,
    perturb: f64,
    profile: Option<&Path>,
    cost: &str,
    out: Option<&Path>,
) -> Result<()> {
    let table = load_table(table_path)?;
    let out_dir = out.map_or_else(|| PathBuf::from("optimize-out"), Path::to_path_buf);
    let mut cfg = CampaignConfig::new(table_path.to_path_buf(), out_dir);
    cfg.variant = table.spec.bounds.variant;
    cfg.arms = vec![Arm::Bo(KernelKind::parse(kernel)?)];
    cfg.n_runs = 1;
    cfg.trials_per_run = trials;
    cfg.seed = seed;
    cfg.perturbation = perturb;
    cfg.cost = CostKind::parse(cost)?;
    if let Some(p) = profile {
        cfg.profile = SpeedProfile::load(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
    }
    let report = run_campaign_on(&cfg, &table)?;
    let run = &report.runs[0];
    if let Some(e) = &run.error {
        anyhow::bail!("run failed: {e}");
    }
    let history = run.history.as_ref().expect("successful run has a history");
    println!("trunk mass {:.2} kg, inertia {:.3} kg·m²", run.trunk_mass, run.trunk_inertia);
    println!("trial  candidate  phi_sim      cost     best  fell");
    for t in &history.trials {
        println!(
            "{:>5}  {:>9}  {:>7.3}  {:>8.4}  {:>7.4}  {}",
            t.trial_index + 1,
            t.candidate_index,
            t.phi_sim,
            t.cost,
            t.posterior_best,
            if t.fell { "yes" } else { "no" }
        );
    }
    if let Some(dir) = out {
        for p in emit_report(&report, dir, &[ReportFormat::Csv, ReportFormat::Json])? {
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn campaign(config: &Path) -> Result<()> {
    let cfg = CampaignConfig::load(config)?;
    let report = run_campaign(&cfg)?;
    let paths = emit_report(&report, &cfg.output, &[ReportFormat::Csv, ReportFormat::Json])?;
    for k in summarize(&dogbo::harness::trial_rows(&report)).kernels {
        println!(
            "{:<8} success {:.2}  median trials to first walk {:>4.1}  mean best cost {:.3}",
            k.kernel, k.success_rate_at_n, k.median_trials_to_first_walk, k.mean_best_cost
        );
    }
    for p in paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn correlate_cmd(n: usize, seed: u64, out: &Path) -> Result<()> {
    if n < 2 {
        return Err(Error::Config("--n must be at least 2".into()).into());
    }
    let points = correlate(n, &CorrelateConfig::new(seed))?;
    fs::write(out, correlate_csv(&points)).with_context(|| format!("writing {}", out.display()))?;
    let phi: Vec<f64> = points.iter().map(|p| p.phi).collect();
    let cost: Vec<f64> = points.iter().map(|p| p.cost).collect();
    println!("wrote {} ({} points), spearman(phi, cost) = {:.3}", out.display(), n, spearman(&phi, &cost));
    Ok(())
}

fn report(input: &Path, format: &str) -> Result<()> {
    let format = ReportFormat::parse(format)?;
    let path = if input.is_dir() { input.join(TRIALS_FILE) } else { input.to_path_buf() };
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let summary = summarize(&rows_from_csv(&text)?);
    match format {
        ReportFormat::Json => print!("{}", summary_to_json(&summary)),
        ReportFormat::Csv => print!("{}", summary_to_csv(&summary)),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Tablegen {
            bounds,
            n,
            seed,
            sim_seconds,
            target_speed,
            scheme,
            out,
        } => tablegen(bounds.as_deref(), n, seed, sim_seconds, target_speed, &scheme, &out),
        Command::Optimize {
            table,
            kernel,
            trials,
            seed,
            perturb,
            profile,
            cost,
            out,
        } => optimize(&table, &kernel, trials, seed, perturb, profile.as_deref(), &cost, out.as_deref()),
        Command::Campaign { config } => campaign(&config),
        Command::Correlate { n, seed, out } => correlate_cmd(n, seed, &out),
        Command::Report { input, format } => report(&input, &format),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
