use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lasp_core::dissemination::Mode;
use lasp_core::simulator::{run_experiment, ExperimentConfig, Report, Topology};
use log::info;
use rayon::prelude::*;

#[derive(Parser)]
#[command(
    name = "lasp-sim",
    version,
    about = "Simulate the Lasp advertisement counter"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run(RunArgs),
    /// Run every valid combination of the listed parameters.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value_t = 32)]
    clients: usize,
    #[arg(long, default_value = "hyparview")]
    topology: Topology,
    #[arg(long, default_value = "delta")]
    mode: Mode,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    shared: Shared,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "32,64")]
    clients: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "star,hyparview")]
    topology: Vec<Topology>,
    #[arg(long, value_delimiter = ',', default_value = "state,delta")]
    mode: Vec<Mode>,
    /// Repetitions per cell; repetition `k` uses seed `seed + k`.
    #[arg(long, default_value_t = 2)]
    repeat: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    shared: Shared,
}

#[derive(Args, Clone)]
struct Shared {
    /// Ticks between a client's impressions.
    #[arg(long, default_value_t = 10)]
    impression_interval: u64,
    /// Ticks between dissemination rounds.
    #[arg(long, default_value_t = 5)]
    propagation_interval: u64,
    /// Length of the event-generation phase in ticks.
    #[arg(long, default_value_t = 1800)]
    duration: u64,
    #[arg(long, default_value_t = 10)]
    ads: usize,
    #[arg(long, default_value_t = 1)]
    contracts_per_ad: usize,
    /// Impressions after which an ad is retired.
    #[arg(long, default_value_t = 500)]
    threshold: u64,
    /// Defaults to duration / impression interval.
    #[arg(long)]
    impressions_per_client: Option<u64>,
    /// Message delay range in ticks, as MIN,MAX.
    #[arg(long, default_value = "1,1", value_parser = parse_latency)]
    latency: (u64, u64),
    /// Probability per simulated minute that a client is killed and replaced.
    #[arg(long)]
    churn: Option<f64>,
    /// Let clients hold retirement triggers too.
    #[arg(long)]
    client_triggers: bool,
    /// Also write each node's active view every sample interval.
    #[arg(long)]
    overlay_dump: bool,
    #[arg(long, default_value_t = 60)]
    sample_interval: u64,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

fn parse_latency(s: &str) -> Result<(u64, u64), String> {
    let parse = |v: &str| v.trim().parse::<u64>().map_err(|e| format!("{v:?}: {e}"));
    match s.split_once(',') {
        Some((min, max)) => Ok((parse(min)?, parse(max)?)),
        None => {
            let v = parse(s)?;
            Ok((v, v))
        }
    }
}

impl Shared {
    fn config(
        &self,
        clients: usize,
        topology: Topology,
        mode: Mode,
        seed: u64,
    ) -> ExperimentConfig {
        ExperimentConfig {
            client_count: clients,
            topology,
            mode,
            impression_interval: self.impression_interval,
            propagation_interval: self.propagation_interval,
            duration: self.duration,
            ad_count: self.ads,
            contracts_per_ad: self.contracts_per_ad,
            threshold: self.threshold,
            impressions_per_client: self
                .impressions_per_client
                .unwrap_or(self.duration / self.impression_interval.max(1)),
            latency: self.latency,
            churn: self.churn,
            seed,
            client_triggers: self.client_triggers,
            overlay_dump: self.overlay_dump,
            sample_interval: self.sample_interval,
            ..ExperimentConfig::default()
        }
    }
}

/// Runs `config`, writing its files under `out/<run-id>/`.
fn execute(config: ExperimentConfig, out: &Path) -> Result<Report> {
    config.validate()?;
    let dir = out.join(config.run_id());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let csv = dir.join("metrics.csv");
    let writer =
        BufWriter::new(File::create(&csv).with_context(|| format!("creating {}", csv.display()))?);
    let summary = dir.join("summary.txt");
    info!("running {}", config.run_id());
    let report = match run_experiment(config.clone(), Some(Box::new(writer))) {
        Ok(report) => report,
        Err(e) => {
            let mut text = format!("run_id: {}\n", config.run_id());
            for (k, v) in config.echo() {
                text.push_str(&format!("config.{k}: {v}\n"));
            }
            text.push_str(&format!("error: {e}\n"));
            fs::write(&summary, text)?;
            bail!("{}: {e}", config.run_id());
        }
    };
    fs::write(&summary, report.to_text())
        .with_context(|| format!("writing {}", summary.display()))?;
    if !report.overlay_dump.is_empty() {
        let mut w = BufWriter::new(File::create(dir.join("overlay.csv"))?);
        writeln!(w, "tick,node,active_peers")?;
        for line in &report.overlay_dump {
            writeln!(w, "{line}")?;
        }
        w.flush()?;
    }
    Ok(report)
}

fn run(args: RunArgs) -> Result<()> {
    let config = args
        .shared
        .config(args.clients, args.topology, args.mode, args.seed);
    let report = execute(config, &args.shared.out)?;
    print!("{}", report.to_text());
    if !report.trace.all_hold() {
        bail!("{}: trace checks failed", report.run_id);
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    if let Some(jobs) = args.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()?;
    }
    let mut cells = Vec::new();
    for &clients in &args.clients {
        for &topology in &args.topology {
            for &mode in &args.mode {
                for k in 0..args.repeat {
                    let config = args.shared.config(clients, topology, mode, args.seed + k);
                    match config.validate() {
                        Ok(()) => cells.push(config),
                        Err(e) => info!("skipping {topology}/{mode}/{clients}: {e}"),
                    }
                }
            }
        }
    }
    if cells.is_empty() {
        bail!("no valid cells in the sweep");
    }
    info!("sweeping {} runs", cells.len());
    let results: Vec<(String, Result<Report>)> = cells
        .into_par_iter()
        .map(|config| (config.run_id(), execute(config, &args.shared.out)))
        .collect();
    let mut failed = 0;
    for (id, result) in &results {
        match result {
            Ok(r) if r.trace.all_hold() => println!(
                "{id}: ok, {} instrumented bytes, converged {} ticks after the final event",
                r.instrumented_bytes,
                r.convergence_latency()
                    .map_or_else(|| "never".into(), |t| t.to_string())
            ),
            Ok(_) => {
                failed += 1;
                println!("{id}: trace checks failed");
            }
            Err(e) => {
                failed += 1;
                println!("{id}: {e:#}");
            }
        }
    }
    if failed > 0 {
        bail!("{failed} of {} runs failed", results.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Sweep(args) => sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
