use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use quasispde::harness::{execute, Command, ExperimentConfig};

#[derive(Parser)]
#[command(name = "quasispde", version, about = "Simulate, split and measure quasilinear parabolic SPDEs")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run Monte Carlo replicas and store the solution fields.
    Simulate(Common),
    /// Split each replica into its noise and remainder parts and check the estimates.
    Decompose(WithSource),
    /// Measure time and space regularity of u, y and z.
    Regularity(WithSource),
    /// Compare runs along a nested ladder of resolutions.
    Converge(Common),
    /// Check the noise and coefficient hypotheses without simulating.
    Checks(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment file.
    #[arg(long, conflicts_with = "scenario")]
    config: Option<PathBuf>,
    /// Named preset, used when no config file is given.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    replicas: Option<usize>,
}

#[derive(Args)]
struct WithSource {
    #[command(flatten)]
    common: Common,
    /// Read the u fields of an earlier `simulate` output instead of simulating.
    #[arg(long)]
    from: Option<PathBuf>,
}

fn load(c: &Common) -> quasispde::Result<ExperimentConfig> {
    let mut config = match (&c.config, &c.scenario) {
        (Some(path), _) => ExperimentConfig::from_path(path)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => ExperimentConfig::preset("heat")?,
    };
    if let Some(seed) = c.seed {
        config.noise.seed = seed;
    }
    if let Some(out) = &c.out {
        config.run.out = out.clone();
    }
    if let Some(r) = c.replicas {
        config.run.replicas = r;
    }
    config.validate()?;
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common, from) = match &cli.command {
        Cmd::Simulate(c) => (Command::Simulate, c, None),
        Cmd::Decompose(w) => (Command::Decompose, &w.common, w.from.as_deref()),
        Cmd::Regularity(w) => (Command::Regularity, &w.common, w.from.as_deref()),
        Cmd::Converge(c) => (Command::Converge, c, None),
        Cmd::Checks(c) => (Command::Checks, c, None),
    };
    let outcome = match load(common).and_then(|config| execute(command, &config, from)) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    for c in &outcome.checks {
        println!("{:<20} {}  {}", c.name, if c.pass { "PASS" } else { "FAIL" }, c.detail);
    }
    println!("config_hash={} seed={}", outcome.config_hash, outcome.seed);
    if outcome.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
