use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use rateless_chain::config::{load_config, ScenarioConfig};
use rateless_chain::metrics::{cdf_at, communication_metrics, write_join_cdf, EventLog, MetricsLedger};
use rateless_chain::scenario::{failure_model, obtain_table, run_scenario, sizing_policy, table_build};
use rateless_chain::sizing::{build_failure_table, choose_group_size, FailureTable};

#[derive(Parser)]
#[command(name = "rcbsim", version, about = "Rateless coded blockchain simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (key = value).
    #[arg(long)]
    config: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Monte Carlo trials per failure-table cell.
    #[arg(long)]
    budget: Option<u64>,
    /// Worker threads for the failure-table build (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write metrics.csv, events.csv, join_cdf.csv,
    /// enhanced_history.csv and failure_table.csv.
    Simulate(Common),
    /// Build the failure table only.
    BuildTable(Common),
    /// Print coverage, fits and the chosen group size per covered N.
    InspectTable {
        /// Failure table CSV.
        #[arg(long)]
        table: PathBuf,
        /// Scenario file supplying the sizing target.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Recompute storage and communication coefficients from a run directory.
    Metrics {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Scenario file supplying the block size.
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(common: &Common) -> Result<ScenarioConfig> {
    let mut cfg = load_config(&common.config).with_context(|| format!("loading {}", common.config.display()))?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(b) = common.budget {
        cfg.table_budget = b;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build()?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

fn simulate(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let table = with_threads(common.threads, || obtain_table(&cfg))??;
    let out = run_scenario(&cfg, &table)?;
    out.write_all(&common.out)?;
    let last = out.metrics.last();
    println!(
        "{} epochs, {} nodes at end, {} enhanced blocks mined, {} re-encodes",
        out.metrics.records.len(),
        out.final_nodes,
        out.history.len(),
        out.reencodes.len()
    );
    if let Some(r) = last {
        println!("W={} sum_k={} groups={} R_s={:.6}", r.w, r.sum_k, r.groups, r.storage_reduction());
    }
    println!("outputs in {}", common.out.display());
    Ok(())
}

fn build_table(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let model = failure_model(&cfg)?;
    let table = with_threads(common.threads, || build_failure_table(&table_build(&cfg), &model))??;
    if table.cells.is_empty() {
        bail!("no failure-table cell completed");
    }
    std::fs::create_dir_all(&common.out)?;
    table.write_csv(&common.out.join("failure_table.csv"))?;
    print!("{}", table.summary());
    Ok(())
}

fn inspect_table(path: &Path, config: Option<&Path>) -> Result<()> {
    let table = FailureTable::read_csv(path)?;
    print!("{}", table.summary());
    if let Some(c) = config {
        let cfg = load_config(c)?;
        let policy = sizing_policy(&cfg);
        for n in table.covered_nodes() {
            match choose_group_size(n, &table, &policy) {
                Ok(k) => println!("N={n}: k_m={k} at zeta={:e}", policy.zeta),
                Err(e) => println!("N={n}: {e}"),
            }
        }
    }
    Ok(())
}

fn metrics(out: &Path, config: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let m = MetricsLedger::read_csv(&out.join("metrics.csv")).map_err(anyhow::Error::msg)?;
    let log = EventLog::read_csv(&out.join("events.csv")).map_err(anyhow::Error::msg)?;
    let s = communication_metrics(&log, &m, cfg.block_bytes);
    write_join_cdf(&s.cdf, &out.join("join_cdf.csv"))?;
    if let Some(r) = m.last() {
        println!("epoch {}: W={} sum_k={} groups={} R_s={:.6}", r.epoch, r.w, r.sum_k, r.groups, r.storage_reduction());
    }
    println!(
        "joins={} coded_bytes={} pool_bytes={} mean_reduction={:.6} max_coded_bytes_per_join={}",
        s.joins.len(),
        s.coded_total,
        s.pool_total,
        s.mean_reduction,
        s.max_coded_bytes
    );
    println!("P(group join <= 10 blocks) = {:.4}", cdf_at(&s.cdf, 10));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::BuildTable(c) => build_table(c),
        Command::InspectTable { table, config } => inspect_table(table, config.as_deref()),
        Command::Metrics { out, config } => metrics(out, config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
