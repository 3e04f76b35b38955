use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use covor::experiment::{
    stage_evaluate, stage_fuse, stage_report, stage_simulate, ExperimentConfig, ExperimentError, FusionMode, Layout,
};

/// Multi-agent Sim(3) pose-graph fusion experiments.
#[derive(Debug, Parser)]
#[command(name = "covor", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the swarm scenario and generate measurements for every seed.
    Simulate(Common),
    /// Solve the pose graph of every (seed, mode) from simulated measurements.
    Fuse(Common),
    /// Compute error metrics of the fused trajectories.
    Evaluate(Common),
    /// Aggregate metrics over seeds and write summary tables and plots.
    Report(Common),
    /// Run simulate, fuse, evaluate and report in sequence.
    Run(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Restrict to these seeds (repeatable); defaults to the config's list.
    #[arg(long)]
    seed: Vec<u64>,
    /// Restrict to these fusion modes (repeatable).
    #[arg(long, value_parser = parse_mode)]
    mode: Vec<FusionMode>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<FusionMode, String> {
    s.parse()
}

fn load(common: &Common) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if !common.seed.is_empty() {
        cfg.seeds = common.seed.clone();
    }
    if !common.mode.is_empty() {
        cfg.modes = common.mode.clone();
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(command: &Command) -> Result<(), ExperimentError> {
    let common = match command {
        Command::Simulate(c) | Command::Fuse(c) | Command::Evaluate(c) | Command::Report(c) | Command::Run(c) => c,
    };
    let cfg = load(common)?;
    let layout = Layout::new(&cfg.output_dir);
    let simulate = matches!(command, Command::Simulate(_) | Command::Run(_));
    let fuse = matches!(command, Command::Fuse(_) | Command::Run(_));
    let evaluate = matches!(command, Command::Evaluate(_) | Command::Run(_));
    let report = matches!(command, Command::Report(_) | Command::Run(_));
    if simulate {
        let sims = stage_simulate(&cfg, &layout)?;
        log::info!("simulated {} seeds into {}", sims.len(), layout.root.display());
    }
    if fuse {
        for f in stage_fuse(&cfg, &layout)? {
            log::info!(
                "seed {} {}: {} iterations, cost {:.6e} -> {:.6e}",
                f.seed,
                f.mode,
                f.solver.iterations,
                f.solver.initial_cost(),
                f.solver.final_cost()
            );
        }
    }
    if evaluate {
        for r in stage_evaluate(&cfg, &layout)? {
            println!("seed {:>6}  {:<16} ATE RMSE {:>10.4} m", r.seed, r.mode.name(), r.ate_rmse);
        }
    }
    if report {
        let summary = stage_report(&cfg, &layout)?;
        for m in &summary.modes {
            println!("{:<16} median ATE RMSE {:>10.4} m over {} seeds", m.mode.name(), m.median_ate_rmse, m.seeds.len());
        }
        if let Some(r) = summary.ratio_vs_dslam {
            println!("transmitted bytes relative to dSLAM constant: {r:.4}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
