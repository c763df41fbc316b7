//! `cka`: conference key rate toolkit for a three-user twin-field-style
//! QKD protocol. Computes single-point rates, optimized distance sweeps,
//! figure-reproduction recipes, and Monte Carlo validation reports.

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use cka_core::{
    compare_with_analytic, optimize_at_distance, optimize_single_photon, practical_rate_with,
    single_photon_rate_with, sweep, write_trial_log, ProtocolKind, ProtocolParams, RatePoint,
    SystemParams,
};
use config::{parse_grid, RunConfig};

#[derive(Parser)]
#[command(
    name = "cka",
    about = "Conference key rates for a three-party twin-field QKD protocol",
    version
)]
struct Cli {
    /// Key-value config file; flags override file values, which override defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Random seed for the optimizer and simulators.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output path (CSV for sweeps, directory for reproduce).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Config override `key=value` (repeatable): eta_d, p_d, e_d_x, alpha, f,
    /// delta, population, generations, restarts, seed, tolerance, qber,
    /// protocol, distances.
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate (or optimize) the key rate at one distance.
    Rate {
        /// Total transmission distance in km.
        #[arg(long)]
        at: f64,
        /// Sending probability; optimized when omitted.
        #[arg(long)]
        t: Option<f64>,
        /// Signal intensity; optimized when omitted.
        #[arg(long)]
        mu: Option<f64>,
        /// Decoy intensity; optimized when omitted.
        #[arg(long)]
        nu: Option<f64>,
    },
    /// Optimized rate sweep over a distance grid, written as CSV.
    Sweep {
        /// Distance grid `start:end:step` or comma list (overrides config).
        #[arg(long)]
        grid: Option<String>,
        /// Protocol: practical or single_photon.
        #[arg(long)]
        protocol: Option<String>,
    },
    /// Run the parameter optimizer at one distance and report the optimum.
    Optimize {
        #[arg(long)]
        at: f64,
    },
    /// Emit the CSV series behind the standard figure set.
    Reproduce {
        /// fig2 (protocol comparison) or fig3 (misalignment series).
        figure: String,
    },
    /// Cross-validate analytic gains against the pulse-level Monte Carlo.
    Validate {
        /// Trials per quantity (>= 1e5).
        #[arg(long, default_value_t = 10_000_000)]
        trials: u64,
        /// Comma list of distances in km.
        #[arg(long, default_value = "100,300,500")]
        distances: String,
        /// Optional file receiving one record per accepted simulated event.
        #[arg(long)]
        trial_log: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for ov in &cli.overrides {
        let Some((k, v)) = ov.split_once('=') else {
            bail!("--override expects key=value, got {ov:?}");
        };
        cfg.apply(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.optimizer.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Rate { at, t, mu, nu } => cmd_rate(&cfg, *at, *t, *mu, *nu),
        Command::Sweep { grid, protocol } => {
            let mut cfg = cfg;
            if let Some(g) = grid {
                cfg.sweep_grid = parse_grid(g)?;
            }
            if let Some(p) = protocol {
                cfg.apply("protocol", p)?;
            }
            cmd_sweep(&cfg, cli.out.as_deref())
        }
        Command::Optimize { at } => cmd_optimize(&cfg, *at),
        Command::Reproduce { figure } => cmd_reproduce(&cfg, figure, cli.out.as_deref()),
        Command::Validate {
            trials,
            distances,
            trial_log,
        } => cmd_validate(&cfg, *trials, distances, trial_log.as_deref()),
    }
}

fn report_line(p: &RatePoint) -> String {
    format!(
        "L = {} km  R = {:e}  t = {}  mu = {}  nu = {}  E_z = {:e}  e1_x = {:e}  Y1 = {:e}  lambda_EC = {:e}  [{}]",
        p.l_km, p.r, p.t, p.mu, p.nu, p.diag.e_z, p.diag.e1_x, p.diag.y1, p.diag.lambda_ec, p.flag
    )
}

fn cmd_rate(
    cfg: &RunConfig,
    at: f64,
    t: Option<f64>,
    mu: Option<f64>,
    nu: Option<f64>,
) -> Result<()> {
    let point = match (t, mu, nu) {
        (Some(t), Some(mu), Some(nu)) => {
            let pp = ProtocolParams::new(t, mu, nu)?;
            practical_rate_with(&cfg.system, &pp, at, cfg.optimizer.qber)?
        }
        // the ideal protocol has no intensities, so t alone pins a point
        (Some(t), None, None) if cfg.protocol == ProtocolKind::SinglePhoton => {
            single_photon_rate_with(&cfg.system, t, at, cfg.optimizer.qber)?
        }
        (None, None, None) => match cfg.protocol {
            ProtocolKind::Practical => optimize_at_distance(&cfg.system, &cfg.optimizer, at)?.best,
            ProtocolKind::SinglePhoton => {
                optimize_single_photon(&cfg.system, &cfg.optimizer, at)?.best
            }
        },
        _ => bail!("provide all of --t/--mu/--nu, or none to optimize"),
    };
    println!("{}", report_line(&point));
    Ok(())
}

fn write_csv<W: Write>(out: &mut W, points: &[RatePoint]) -> Result<()> {
    writeln!(out, "L_km,R,t,mu,nu,E_z,e1_x,Y1_lower,Q_z,lambda_EC,flag")?;
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            p.l_km,
            p.r,
            p.t,
            p.mu,
            p.nu,
            p.diag.e_z,
            p.diag.e1_x,
            p.diag.y1,
            p.diag.q_z_total,
            p.diag.lambda_ec,
            p.flag
        )?;
    }
    Ok(())
}

fn write_csv_file(path: &Path, points: &[RatePoint]) -> Result<()> {
    let file = File::create(path)
        .with_context(|| format!("cannot create output file {}", path.display()))?;
    let mut w = BufWriter::new(file);
    write_csv(&mut w, points)?;
    w.flush()?;
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let points = sweep(&cfg.system, &cfg.optimizer, &cfg.sweep_grid, cfg.protocol)?;
    match out {
        Some(path) => {
            write_csv_file(path, &points)?;
            eprintln!(
                "wrote {} rows ({} protocol) to {}",
                points.len(),
                points.first().map(|p| p.kind).unwrap_or(cfg.protocol),
                path.display()
            );
        }
        None => write_csv(&mut std::io::stdout().lock(), &points)?,
    }
    Ok(())
}

fn cmd_optimize(cfg: &RunConfig, at: f64) -> Result<()> {
    let res = match cfg.protocol {
        ProtocolKind::Practical => optimize_at_distance(&cfg.system, &cfg.optimizer, at),
        ProtocolKind::SinglePhoton => optimize_single_photon(&cfg.system, &cfg.optimizer, at),
    }?;
    println!("{}", report_line(&res.best));
    println!(
        "evaluations = {}  generations-traced = {}  beyond_cutoff = {}",
        res.evaluations,
        res.trace.len(),
        res.all_zero
    );
    Ok(())
}

fn cmd_reproduce(cfg: &RunConfig, figure: &str, out: Option<&Path>) -> Result<()> {
    let dir = out.unwrap_or_else(|| Path::new("figures"));
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    match figure {
        "fig2" => {
            let grid: Vec<f64> = (0..=70).map(|i| i as f64 * 10.0).collect();
            let practical = sweep(&cfg.system, &cfg.optimizer, &grid, ProtocolKind::Practical)?;
            let path = dir.join("fig2_practical.csv");
            write_csv_file(&path, &practical)?;
            println!("{}", path.display());

            let grid: Vec<f64> = (0..=85).map(|i| i as f64 * 10.0).collect();
            let single = sweep(
                &cfg.system,
                &cfg.optimizer,
                &grid,
                ProtocolKind::SinglePhoton,
            )?;
            let path = dir.join("fig2_single_photon.csv");
            write_csv_file(&path, &single)?;
            println!("{}", path.display());
        }
        "fig3" => {
            let grid: Vec<f64> = (0..=60).map(|i| i as f64 * 10.0).collect();
            for e_d_x in [0.035, 0.18, 0.25] {
                let s = cfg.system;
                let sys = SystemParams::new(s.eta_d, s.p_d, e_d_x, s.alpha, s.f, s.delta)?;
                let points = sweep(&sys, &cfg.optimizer, &grid, ProtocolKind::Practical)?;
                let path = dir.join(format!("fig3_edx_{e_d_x}.csv"));
                write_csv_file(&path, &points)?;
                println!("{}", path.display());
            }
        }
        other => bail!("unknown figure {other:?}: expected fig2 or fig3"),
    }
    Ok(())
}

fn cmd_validate(
    cfg: &RunConfig,
    trials: u64,
    distances: &str,
    trial_log: Option<&Path>,
) -> Result<()> {
    if trials < 100_000 {
        bail!("validate needs at least 1e5 trials, got {trials}");
    }
    let distances = parse_grid(distances)?;
    let mut all_pass = true;
    for &l in &distances {
        let opt = optimize_at_distance(&cfg.system, &cfg.optimizer, l)?;
        // optimized t and mu; the decoy intensity gets floored so the
        // phase-matched rows carry statistical power at these trial counts
        let nu = opt.best.nu.max(0.02).min(opt.best.mu * 0.5);
        let pp = ProtocolParams::new(opt.best.t, opt.best.mu, nu)?;
        println!(
            "# L = {l} km  (t = {}, mu = {}, nu = {})  trials = {trials}",
            pp.t, pp.mu, pp.nu
        );
        println!(
            "{:<16} {:>14} {:>14} {:>12} {:>8}  5-sigma",
            "quantity", "analytic", "monte-carlo", "std-error", "z"
        );
        let rows = compare_with_analytic(&cfg.system, &pp, l, trials, cfg.optimizer.seed)?;
        for r in &rows {
            all_pass &= r.pass;
            println!(
                "{:<16} {:>14.6e} {:>14.6e} {:>12.3e} {:>8.2}  {}",
                r.name,
                r.analytic,
                r.estimate,
                r.std_error,
                r.z,
                if r.pass { "ok" } else { "VIOLATION" }
            );
        }
    }
    if let Some(path) = trial_log {
        let pp = ProtocolParams::new(0.1, 0.5, 0.1).expect("reference params");
        let file = File::create(path)
            .with_context(|| format!("cannot create trial log {}", path.display()))?;
        let mut w = BufWriter::new(file);
        let n = write_trial_log(
            &cfg.system,
            &pp,
            distances[0],
            trials.min(1_000_000),
            cfg.optimizer.seed,
            &mut w,
        )?;
        w.flush()?;
        eprintln!("trial log: {n} accepted records at {}", path.display());
    }
    if !all_pass {
        bail!("Monte Carlo and analytic values disagree beyond 5 sigma");
    }
    println!("all quantities within 5 sigma");
    Ok(())
}
