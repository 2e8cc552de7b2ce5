use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use galore_core::harness::{
    load_dynamics_spec, run_ablation, run_train, run_verify, write_ablation_csv, AblateConfig,
    CellStatus, RunConfig, VerifyOptions,
};
use galore_core::memory::{estimate_model, render_table, write_csv, Method, ModelConfig};
use galore_core::theory::{simulate_dynamics, stable_rank_bound_rhs};
use galore_core::Error;

const EXIT_OTHER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;
const EXIT_VERIFY: u8 = 4;

#[derive(Parser)]
#[command(name = "galore", version, about = "Gradient low-rank projection toolkit")]
struct Cli {
    /// Override the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for outputs; overrides the config.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Logging period for training metrics.
    #[arg(long, global = true)]
    log_every: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration; writes metrics.jsonl, summary.json, run_meta.json.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a rank × refresh-period × seed grid; writes ablation.csv.
    Ablate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Simulate constant-coefficient gradient dynamics; writes trace.csv.
    Theory {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Memory estimates for a model inventory; writes memory.csv.
    Memory {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the self-check table.
    Verify {
        #[arg(long, hide = true)]
        mutate_bias_correction: bool,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => EXIT_CONFIG,
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        _ => EXIT_OTHER,
    }
}

fn read(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Config { path: path.display().to_string(), message: e.to_string() })
}

fn out_dir(cli: &Cli, from_config: Option<&PathBuf>, fallback: &str) -> PathBuf {
    cli.out_dir
        .clone()
        .or_else(|| from_config.cloned())
        .unwrap_or_else(|| PathBuf::from(fallback))
}

fn train(cli: &Cli, config: &Path) -> Result<(), Error> {
    let mut cfg = RunConfig::from_json(&read(config)?)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(k) = cli.log_every {
        cfg.log_every = k;
    }
    cfg.validate()?;
    let dir = out_dir(cli, cfg.out_dir.as_ref(), "runs/train");
    let outcome = run_train(&cfg)?;
    outcome.write(&cfg, &dir)?;
    println!(
        "final_loss {:.6e}  initial_loss {:.6e}  steps {}  refreshes {}",
        outcome.summary.final_loss, outcome.summary.initial_loss, outcome.summary.steps, outcome.summary.refreshes
    );
    println!("wrote {}", dir.display());
    Ok(())
}

fn ablate(cli: &Cli, config: &Path) -> Result<(), Error> {
    let mut cfg = AblateConfig::from_json(&read(config)?)?;
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(k) = cli.log_every {
        cfg.base.log_every = k;
    }
    let dir = out_dir(cli, cfg.out_dir.as_ref(), "runs/ablate");
    let rows = run_ablation(&cfg);
    std::fs::create_dir_all(&dir)?;
    write_ablation_csv(std::fs::File::create(dir.join("ablation.csv"))?, &rows)?;
    let failed = rows.iter().filter(|r| r.status != CellStatus::Ok).count();
    println!("{} cells, {failed} failed; wrote {}", rows.len(), dir.join("ablation.csv").display());
    Ok(())
}

fn theory(cli: &Cli, spec: &Path) -> Result<(), Error> {
    let spec = load_dynamics_spec(&read(spec)?)?;
    let trace = simulate_dynamics(&spec)?;
    let dir = out_dir(cli, None, "runs/theory");
    std::fs::create_dir_all(&dir)?;
    trace.write_csv(std::fs::File::create(dir.join("trace.csv"))?)?;
    let sd = &trace.spectral;
    println!("lambda1 {:.6e}", sd.lambda1);
    match (sd.lambda2, sd.decay_ratio) {
        (Some(l2), Some(r)) => println!("lambda2 {l2:.6e}  decay ratio {r:.12}"),
        _ => println!("lambda2 undefined (S is a multiple of the identity)"),
    }
    let last = trace.rows.last().expect("at least one row");
    if let Some(sr) = last.stable_rank {
        println!("stable rank at t={}: {sr:.9}", last.t);
    }
    let worst = trace
        .rows
        .iter()
        .filter_map(|r| Some(r.stable_rank? - stable_rank_bound_rhs(&trace, r.t).ok()?))
        .fold(f64::NEG_INFINITY, f64::max);
    if worst.is_finite() {
        println!("max stable rank minus bound: {worst:.3e}");
    }
    println!("wrote {}", dir.join("trace.csv").display());
    Ok(())
}

fn memory(cli: &Cli, config: &Path) -> Result<(), Error> {
    let cfg = ModelConfig::from_json(&read(config)?)?;
    let reports = Method::ALL
        .iter()
        .map(|&m| estimate_model(&cfg, m))
        .collect::<Result<Vec<_>, _>>()?;
    print!("{}", render_table(&cfg.name, &reports));
    let dir = out_dir(cli, None, "runs/memory");
    std::fs::create_dir_all(&dir)?;
    write_csv(std::fs::File::create(dir.join("memory.csv"))?, &reports)?;
    println!("wrote {}", dir.join("memory.csv").display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train { config } => train(&cli, config),
        Command::Ablate { config } => ablate(&cli, config),
        Command::Theory { spec } => theory(&cli, spec),
        Command::Memory { config } => memory(&cli, config),
        Command::Verify { mutate_bias_correction } => {
            let report = run_verify(VerifyOptions { mutate_bias_correction: *mutate_bias_correction });
            print!("{}", report.render());
            if !report.all_passed() {
                return ExitCode::from(EXIT_VERIFY);
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
