use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use shoebox_cli::plot::plot;
use shoebox_cli::{Manifest, Study, StudyConfig};

#[derive(Parser)]
#[command(name = "shoebox", version, about = "Shoebox room inversion studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw random rooms and simulate their RIRs.
    Simulate(Overrides),
    /// Localize image sources and recover every room.
    Invert(Overrides),
    /// Compare recovered rooms with the ground truth.
    Evaluate(Overrides),
    /// Re-simulate each room at a new random placement and report SER.
    Extrapolate(Overrides),
    /// SVG and CSV figures from one or more evaluated studies.
    Plot {
        #[command(flatten)]
        overrides: Overrides,
        /// Study directories to compare (default: the output directory).
        studies: Vec<PathBuf>,
        /// Where figures go (default: `<first study>/plots`).
        #[arg(long)]
        plots_dir: Option<PathBuf>,
    },
    /// simulate, invert, extrapolate, evaluate and plot.
    All(Overrides),
}

#[derive(Args, Clone)]
struct Overrides {
    /// JSON config; defaults to the output directory's config.json when it
    /// exists.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    rooms: Option<usize>,
    #[arg(long, global = true)]
    fs: Option<f64>,
    #[arg(long, global = true)]
    array_scale: Option<f64>,
    #[arg(long, global = true)]
    psnr: Option<f64>,
    #[arg(long, global = true)]
    oracle_cloud: bool,
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
}

impl Overrides {
    fn resolve(&self) -> anyhow::Result<StudyConfig> {
        let existing = self.output.as_ref().map(|o| o.join("config.json")).filter(|p| p.exists());
        let mut cfg = match self.config.as_ref().or(existing.as_ref()) {
            Some(path) => StudyConfig::load(path)?,
            None => StudyConfig::default(),
        };
        if let Some(v) = &self.output {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.rooms {
            cfg.n_rooms = v;
        }
        if let Some(v) = self.fs {
            cfg.fs = v;
        }
        if let Some(v) = self.array_scale {
            cfg.array.scale_factor = v;
        }
        if let Some(v) = self.psnr {
            cfg.psnr_db = Some(v);
        }
        if self.oracle_cloud {
            cfg.oracle_cloud = true;
        }
        Ok(cfg)
    }
}

fn report(manifest: &Manifest) -> ExitCode {
    for (room, flag) in &manifest.soft_flags {
        log::warn!("{room}: {flag}");
    }
    if manifest.hard_failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        eprintln!("failed rooms: {}", manifest.hard_failures.join(", "));
        ExitCode::FAILURE
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let code = match cli.command {
        Command::Simulate(o) => report(&Study::create(o.resolve()?)?.simulate()?),
        Command::Invert(o) => report(&Study::create(o.resolve()?)?.invert()?),
        Command::Extrapolate(o) => report(&Study::create(o.resolve()?)?.extrapolate()?),
        Command::Evaluate(o) => {
            let study = Study::create(o.resolve()?)?;
            let r = study.evaluate()?;
            println!("{}", serde_json::to_string_pretty(&r.aggregates)?);
            report(&study.write_manifest()?)
        }
        Command::Plot {
            overrides,
            studies,
            plots_dir,
        } => {
            let dirs = if studies.is_empty() {
                vec![overrides.resolve()?.output_dir]
            } else {
                studies
            };
            let opened: Vec<Study> = dirs
                .iter()
                .map(|d| Study::open(d).with_context(|| format!("opening study {}", d.display())))
                .collect::<anyhow::Result<_>>()?;
            let out = plots_dir.unwrap_or_else(|| dirs[0].join("plots"));
            for f in plot(&opened, &out)? {
                println!("{}", out.join(f).display());
            }
            ExitCode::SUCCESS
        }
        Command::All(o) => {
            let study = Study::create(o.resolve()?)?;
            let (manifest, r) = study.run_all()?;
            plot(std::slice::from_ref(&study), &study.dir.join("plots"))?;
            println!("{}", serde_json::to_string_pretty(&r.aggregates)?);
            report(&manifest)
        }
    };
    Ok(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
