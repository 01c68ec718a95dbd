use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use coexist::experiment::{self, exit_code};
use coexist::{Error, ExperimentConfig, Result};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Simulate,
    Learn,
    Evaluate,
    Summarize,
}

/// LTE-LAA / Wi-Fi coexistence: simulate, learn FSC policies, evaluate them.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    #[arg(long, value_enum)]
    mode: Mode,
    /// TOML experiment configuration (not needed for `summarize` with --out).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Outer learning iterations.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

fn load_config(args: &Args) -> Result<ExperimentConfig> {
    let path = args
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required for this mode".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(i) = args.iters {
        cfg.learning.max_iters = i;
    }
    if let Some(k) = args.episodes {
        cfg.learning.episodes = k;
    }
    if let Some(t) = args.horizon {
        cfg.learning.horizon = t;
    }
    if let Some(o) = &args.out {
        cfg.output_dir = o.clone();
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: &Args) -> Result<()> {
    if let Mode::Summarize = args.mode {
        let dir = match (&args.out, &args.config) {
            (Some(o), _) => o.clone(),
            (None, Some(_)) => load_config(args)?.output_dir,
            (None, None) => return Err(Error::Config("summarize needs --out or --config".into())),
        };
        print!("{}", experiment::summarize(&dir)?);
        return Ok(());
    }
    let cfg = load_config(args)?;
    let pool = experiment::build_pool(cfg.workers)?;
    match args.mode {
        Mode::Simulate => {
            let path = experiment::simulate(&cfg, &pool)?;
            println!("wrote {}", path.display());
        }
        Mode::Learn => {
            let outcome = experiment::run_learn(&cfg, &pool)?;
            for r in &outcome.trace.rounds {
                let nodes: Vec<String> = r.nodes_after_prune.iter().map(usize::to_string).collect();
                println!(
                    "round {:>3}  eps {:.3}  sweeps {:>3}{}  nodes {}",
                    r.round,
                    r.epsilon,
                    r.sweeps,
                    if r.converged { " " } else { "*" },
                    nodes.join(" ")
                );
            }
            print!("{}", experiment::summarize(&cfg.output_dir)?);
        }
        Mode::Evaluate => print!("{}", experiment::run_evaluate(&cfg, &pool)?),
        Mode::Summarize => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            // Help and version requests are not failures.
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
