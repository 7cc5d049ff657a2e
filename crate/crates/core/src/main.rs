use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use branchsim::engine::Mode;
use branchsim::runner::{parse_config_with_overrides, run_scenario, Scenario};

// Branch tags churn through millions of small allocations per run.
#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(
    name = "branchsim",
    version,
    about = "Tagged Gaussian branch simulator and verification scenarios"
)]
struct Cli {
    #[command(subcommand)]
    scenario: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Packet released in the middle of the box; diffusion and equilibration.
    Midbox(Common),
    /// Spreading far from the walls; variance ladder and diffusion constant.
    Freespread(Common),
    /// Count-mode leaves of one decoherence event against Born weights.
    BornTest(Common),
    /// Coherent versus tagged interference, and lineage uniqueness.
    PeresTest(Common),
    /// Collapse trajectories against the weighted ensemble.
    CollapseCompare(Common),
    /// Entropy under unitary evolution and under the localization channel.
    LiouvilleCheck(Common),
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
}

impl Command {
    fn split(self) -> (Scenario, Common) {
        match self {
            Command::Midbox(c) => (Scenario::Midbox, c),
            Command::Freespread(c) => (Scenario::Freespread, c),
            Command::BornTest(c) => (Scenario::BornTest, c),
            Command::PeresTest(c) => (Scenario::PeresTest, c),
            Command::CollapseCompare(c) => (Scenario::CollapseCompare, c),
            Command::LiouvilleCheck(c) => (Scenario::LiouvilleCheck, c),
        }
    }
}

fn run(cli: Cli) -> Result<bool, String> {
    let (scenario, args) = cli.scenario.split();
    let text = match &args.config {
        Some(path) => fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?,
        None => String::new(),
    };
    let mut overrides: Vec<(&str, String)> = vec![("scenario", scenario.to_string())];
    if let Some(seed) = args.seed {
        overrides.push(("seed", seed.to_string()));
    }
    if let Some(steps) = args.steps {
        overrides.push(("steps", steps.to_string()));
    }
    if let Some(out) = &args.out {
        overrides.push(("output_dir", out.display().to_string()));
    }
    if let Some(mode) = args.mode {
        overrides.push(("mode", mode.to_string()));
    }
    let config = parse_config_with_overrides(&text, &overrides).map_err(|e| e.to_string())?;

    let summary = run_scenario(&config).map_err(|e| e.to_string())?;
    print!("{}", summary.to_document());
    eprintln!(
        "{} finished in {:.3} s; outputs in {}",
        scenario,
        summary.wall_clock.as_secs_f64(),
        config.output_dir.display()
    );
    Ok(summary.passed())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
