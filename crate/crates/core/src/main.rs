use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use simce::harness::{
    conventional_baseline, emit_results, load_scenario, load_scenario_str, records_to_csv, run_sweep, Format,
    PointEstimate, Record, ScenarioConfig, ScenarioInstance, SweepVar, UserId,
};
use simce::optimizer::{codebook_search, finite_difference_gradient, layer_gradients, objective_avg_nmse};
use simce::{Result, SimError};

#[derive(Parser)]
#[command(name = "simce", version, about = "SIM-aided uplink channel estimation: NMSE, optimization and sweeps")]
struct Cli {
    /// Scenario file (TOML or JSON); reference defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set optimizer.max_iterations=50`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; defaults to a file in $SIMCE_OUTPUT_DIR (or `.`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutFormat::Csv, global = true)]
    format: OutFormat,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0, global = true)]
    workers: usize,
    #[arg(long, env = "SIMCE_OUTPUT_DIR", default_value = ".", hide_env_values = true, global = true)]
    output_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Var {
    Iterations,
    Layers,
    Snr,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize one scenario and report closed-form, Monte-Carlo and baseline NMSE.
    Simulate,
    /// Run a figure sweep.
    Sweep {
        #[arg(long, value_enum)]
        var: Var,
        /// Continue from the checkpoint next to the output file.
        #[arg(long)]
        resume: bool,
    },
    /// Compare the analytic gradient with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
    /// Best-of-codebook phases for one scenario.
    Codebook {
        /// Codebook size (10·L·N when absent).
        #[arg(long)]
        size: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn config(cli: &Cli) -> Result<ScenarioConfig> {
    let mut sets = cli.set.clone();
    if let Some(seed) = cli.seed {
        sets.push(format!("seed={seed}"));
    }
    match &cli.config {
        Some(p) => load_scenario(p, &sets),
        None => load_scenario_str("", &sets),
    }
}

fn format(cli: &Cli) -> Format {
    match cli.format {
        OutFormat::Csv => Format::Csv,
        OutFormat::Json => Format::Json,
    }
}

fn out_path(cli: &Cli, stem: &str) -> PathBuf {
    cli.out
        .clone()
        .unwrap_or_else(|| cli.output_dir.join(format!("{stem}.{}", format(cli).extension())))
}

fn run(cli: Cli) -> Result<()> {
    if cli.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global()
            .map_err(|e| SimError::Config(format!("--workers: {e}")))?;
    }
    let cfg = config(&cli)?;
    match cli.command {
        Command::Simulate => simulate(&cli, &cfg),
        Command::Sweep { var, resume } => {
            let var = match var {
                Var::Iterations => SweepVar::Iterations,
                Var::Layers => SweepVar::Layers,
                Var::Snr => SweepVar::Snr,
            };
            let path = out_path(&cli, &format!("sweep_{var}"));
            let checkpoint = checkpoint_path(&path);
            let result = run_sweep(var, &cfg, Some(&checkpoint), resume)?;
            emit_results(&result, format(&cli), &path)?;
            let _ = std::fs::remove_file(&checkpoint);
            eprintln!(
                "{} rows in {:.1} s -> {} (config {})",
                result.records.len(),
                result.wall_time_s,
                path.display(),
                &result.config_hash[..12]
            );
            Ok(())
        }
        Command::Gradcheck { step, tolerance } => gradcheck(&cfg, step, tolerance),
        Command::Codebook { size } => {
            let inst = ScenarioInstance::build(&cfg)?;
            let size = size.unwrap_or(cfg.codebook_size());
            let best = codebook_search(cfg.seed, &inst.problem()?, size)?;
            println!(
                "{}",
                serde_json::json!({
                    "codebook_size": size,
                    "best_index": best.index,
                    "nmse": best.objective,
                    "mode": cfg.nmse_mode,
                    "angles": best.phases.angles(),
                })
            );
            Ok(())
        }
    }
}

fn checkpoint_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial.json");
    out.with_file_name(name)
}

#[derive(Serialize)]
struct SimulationReport {
    config_hash: String,
    seed: u64,
    iterations: usize,
    converged: bool,
    objective_trace: Vec<(usize, f64)>,
    optimized: PointEstimate,
    codebook: PointEstimate,
    conventional: PointEstimate,
}

fn simulate(cli: &Cli, cfg: &ScenarioConfig) -> Result<()> {
    let inst = ScenarioInstance::build(cfg)?;
    let opt = inst.optimize()?;
    let optimized = inst.evaluate(&opt.phases, true)?;
    let (cb_phases, _) = inst.codebook()?;
    let codebook = inst.evaluate(&cb_phases, false)?;
    let conventional = conventional_baseline(cfg, true)?;
    let path = out_path(cli, "simulate");
    let report = SimulationReport {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        iterations: opt.iterations_used,
        converged: opt.converged,
        objective_trace: opt.objective_trace.clone(),
        optimized,
        codebook,
        conventional,
    };
    let text = match format(cli) {
        Format::Json => serde_json::to_string_pretty(&report).expect("report serializes"),
        Format::Csv => {
            let mut rows = Vec::new();
            for (series, est) in [("sim", &report.optimized), ("codebook", &report.codebook), ("conventional", &report.conventional)] {
                let users = est.per_user.iter().enumerate().map(|(k, r)| (UserId::User(k), r));
                for (id, r) in users.chain(std::iter::once((UserId::Avg, &est.average))) {
                    rows.push(Record {
                        sweep_var: format!("simulate:{series}"),
                        sweep_value: cfg.snr_db(),
                        user_id: id,
                        nmse_paper: Some(r.nmse_paper),
                        nmse_consistent: Some(r.nmse_consistent),
                        nmse_mc_mean: r.monte_carlo.map(|m| m.0),
                        nmse_mc_stderr: r.monte_carlo.map(|m| m.1),
                        baseline: None,
                        iterations: (series == "sim").then_some(opt.iterations_used),
                        seed: cfg.seed,
                    });
                }
            }
            records_to_csv(&rows)
        }
    };
    let io = |source| SimError::Io { path: path.clone(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    std::fs::write(&path, text).map_err(io)?;
    let avg = &report.optimized.average;
    let (mc, se) = avg.monte_carlo.unwrap_or((f64::NAN, f64::NAN));
    println!(
        "optimized NMSE {:.6e} (MC {:.6e} ± {:.1e}) after {} rounds; codebook {:.6e}; conventional {:.6e}",
        avg.nmse_consistent,
        mc,
        se,
        report.iterations,
        report.codebook.average.nmse_consistent,
        report.conventional.average.nmse_consistent
    );
    eprintln!("-> {}", path.display());
    Ok(())
}

fn gradcheck(cfg: &ScenarioConfig, step: f64, tolerance: f64) -> Result<()> {
    let inst = ScenarioInstance::build(cfg)?;
    let problem = inst.problem()?;
    let phases = inst.initial_phases();
    let (_, grads) = layer_gradients(&problem, &phases)?;
    let mut worst = 0.0f64;
    for (l, g) in grads.iter().enumerate() {
        let fd = finite_difference_gradient(|p| objective_avg_nmse(p, &problem), &phases, l, step)?;
        let err = (g - &fd).norm() / fd.norm().max(f64::MIN_POSITIVE);
        worst = worst.max(err);
        println!("layer {:>2}: |grad| = {:.4e}  rel. error = {:.3e}", l + 1, g.norm(), err);
    }
    if worst > tolerance {
        return Err(SimError::Numerical(format!(
            "gradient check failed: worst relative error {worst:.3e} > {tolerance:.1e}"
        )));
    }
    println!("ok: worst relative error {worst:.3e}");
    Ok(())
}
