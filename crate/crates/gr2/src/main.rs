use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gr2::config::parse_seeds;
use gr2::{run_dynamics, run_tournament, run_train, run_verify, ExperimentConfig, Gr2Error, JobKind};

#[derive(Parser)]
#[command(name = "gr2", version, about = "Recursive-reasoning experiments on small games")]
struct Cli {
    #[command(subcommand)]
    job: Job,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds, replacing those in the config.
    #[arg(long)]
    seeds: Option<String>,
}

#[derive(Subcommand)]
enum Job {
    /// Integrate level-k learning dynamics on a 2x2 game.
    Dynamics(Common),
    /// Train agents across seeds.
    Train(Common),
    /// Round-robin cross-play between agent specs.
    Tournament(Common),
    /// Run the verification suite.
    Verify(Common),
}

fn run(job: JobKind, args: &Common) -> Result<String, Gr2Error> {
    let mut cfg = ExperimentConfig::load(&args.config, job)?;
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    if let Some(s) = &args.seeds {
        cfg.seeds = parse_seeds(s)?;
        if cfg.seeds.is_empty() {
            return Err(Gr2Error::Config("--seeds is empty".into()));
        }
    }
    match job {
        JobKind::Dynamics => {
            let r = run_dynamics(&cfg)?;
            Ok(format!("{} trajectories written to {}", r.rows.len(), cfg.out.display()))
        }
        JobKind::Train => {
            let r = run_train(&cfg)?;
            Ok(format!(
                "{} seeds ({} failed): median final action {}, median final reward {}",
                r.records.len(),
                r.failures.len(),
                r.median_final_action,
                r.median_final_reward
            ))
        }
        JobKind::Tournament => {
            let r = run_tournament(&cfg)?;
            let lines: Vec<String> =
                r.labels.iter().zip(&r.averages).map(|(l, a)| format!("{l}: {a:.3}")).collect();
            Ok(lines.join("\n"))
        }
        JobKind::Verify => {
            let r = run_verify(&cfg)?;
            let text = r.render();
            if r.passed() {
                Ok(text)
            } else {
                Err(Gr2Error::Job(format!("verification failed\n{text}")))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (job, args) = match &cli.job {
        Job::Dynamics(a) => (JobKind::Dynamics, a),
        Job::Train(a) => (JobKind::Train, a),
        Job::Tournament(a) => (JobKind::Tournament, a),
        Job::Verify(a) => (JobKind::Verify, a),
    };
    match run(job, args) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
