use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rokdim::rokhlin::TowerFamily;
use rokdim::scenario::{self, RunOptions, RunOutcome, Scenario, Stage, Status};

#[derive(Parser)]
#[command(name = "rokdim", version, about = "Markers, Rokhlin towers and crossed-product defect reports for sampled Z^m-systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Audit freeness at the radius the controlled marker needs.
    FreeCheck(Common),
    /// Build and verify the controlled marker.
    Marker(Common),
    /// Build and verify the Rokhlin cover.
    Cover(Common),
    /// Build the raw tapered towers and report their tolerances.
    Towers(Common),
    /// Normalise the towers, or a supplied family, and report tolerances.
    Verify(WithFamily),
    /// Run the crossed-product approximation pipeline.
    Crossed(WithFamily),
    /// Run every configured stage, or the listed ones.
    Run {
        #[command(flatten)]
        common: Common,
        /// Comma-separated stages, e.g. `marker,cover`.
        #[arg(long)]
        stages: Option<String>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory for the report and artifacts; the report goes to
    /// stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Reject random test operators and randomised norm estimates.
    #[arg(long)]
    seedless: bool,
}

#[derive(Args)]
struct WithFamily {
    #[command(flatten)]
    common: Common,
    /// Tower family JSON used instead of the constructed towers.
    #[arg(long)]
    family: Option<PathBuf>,
}

fn load_family(path: Option<&Path>) -> Result<Option<TowerFamily>> {
    path.map(|p| {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        TowerFamily::from_json(&text).with_context(|| format!("parsing {}", p.display()))
    })
    .transpose()
}

fn execute(common: &Common, stages: Option<Vec<Stage>>, family: Option<TowerFamily>) -> Result<RunOutcome> {
    let text = fs::read_to_string(&common.scenario).with_context(|| format!("reading {}", common.scenario.display()))?;
    let sc = Scenario::from_json(&text).with_context(|| format!("parsing {}", common.scenario.display()))?;
    let opts = RunOptions { stages, seedless: common.seedless, family };
    Ok(scenario::run(&sc, &opts)?)
}

fn emit(common: &Common, out: &RunOutcome) -> Result<()> {
    let report = out.report.to_json();
    match &common.out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            fs::write(dir.join("report.json"), &report)?;
            fs::write(dir.join("timings.json"), out.timings_json())?;
            for (name, contents) in &out.artifacts {
                fs::write(dir.join(name), contents)?;
            }
            for s in &out.report.stages {
                let note = s.error.as_ref().map(|e| format!(" {}: {}", e.code, e.message)).unwrap_or_default();
                println!("{:<11} {:?}{note}", s.stage.name(), s.status);
            }
        }
        None => print!("{report}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = (|| -> Result<(Common, RunOutcome)> {
        let (common, stages, family) = match cli.command {
            Command::FreeCheck(c) => (c, vec![Stage::FreeCheck], None),
            Command::Marker(c) => (c, vec![Stage::Marker], None),
            Command::Cover(c) => (c, vec![Stage::Cover], None),
            Command::Towers(c) => (c, vec![Stage::Towers], None),
            Command::Verify(w) => (w.common, vec![Stage::Verify], w.family),
            Command::Crossed(w) => (w.common, vec![Stage::Crossed], w.family),
            Command::Run { common, stages } => {
                let list = stages.as_deref().map(scenario::parse_stages).transpose()?;
                let out = execute(&common, list, None)?;
                return Ok((common, out));
            }
        };
        let family = load_family(family.as_deref())?;
        let out = execute(&common, Some(stages), family)?;
        Ok((common, out))
    })();
    match result {
        Ok((common, out)) => {
            if let Err(e) = emit(&common, &out) {
                eprintln!("error: {e:#}");
                return ExitCode::from(2);
            }
            let executed_ok = out.report.stages.iter().all(|s| s.status != Status::Failed);
            if executed_ok { ExitCode::SUCCESS } else { ExitCode::FAILURE }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
