use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use damplab::discretize::OperatorKind;
use damplab::experiment::{collect_manifests, configure_threads, dump_geometry, dump_operator, emit_report, run_preset, ExperimentConfig, Preset};

#[derive(Parser)]
#[command(name = "damplab", version, about = "Resolvent and damped-wave experiments on warped surfaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a preset pipeline and write its artifacts and manifest.
    Run {
        preset: String,
        /// Configuration file; the built-in defaults for the preset are used otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize every manifest in a directory and its subdirectories.
    Report { dir: PathBuf },
    /// Print the default configuration of a preset.
    Config { preset: String },
    /// Write sampled geometry and profile tables.
    DumpGeometry {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 512)]
        points: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Write the nonzero entries of one mode operator.
    DumpOperator {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        h: f64,
        /// Fourier mode; defaults to the neck mode round(A(0)/h).
        #[arg(long)]
        n: Option<u32>,
        #[arg(long, value_enum, default_value_t = Kind::Damped)]
        kind: Kind,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(clap::Args)]
struct Source {
    #[arg(long, default_value = "gcc")]
    preset: String,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Damped,
    Absorbing,
}

fn load(preset: &str, config: Option<&PathBuf>) -> Result<ExperimentConfig, String> {
    let preset: Preset = preset.parse().map_err(|e: damplab::Error| e.to_string())?;
    let Some(path) = config else { return Ok(ExperimentConfig::preset_default(preset)) };
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let cfg = ExperimentConfig::parse(&text).map_err(|e| e.to_string())?;
    if cfg.preset != preset {
        return Err(format!("config {} is for preset `{}`, not `{}`", path.display(), cfg.preset.name(), preset.name()));
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<bool, String> {
    configure_threads().map_err(|e| e.to_string())?;
    match cli.command {
        Command::Run { preset, config, out } => {
            let mut cfg = load(&preset, config.as_ref())?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let manifest = run_preset(&cfg).map_err(|e| e.to_string())?;
            print!("{}", emit_report(std::slice::from_ref(&manifest)).0);
            Ok(manifest.passed())
        }
        Command::Report { dir } => {
            let manifests = collect_manifests(&dir).map_err(|e| e.to_string())?;
            let (text, csv) = emit_report(&manifests);
            fs::write(dir.join("report.txt"), &text).map_err(|e| e.to_string())?;
            fs::write(dir.join("report.csv"), csv).map_err(|e| e.to_string())?;
            print!("{text}");
            Ok(manifests.iter().all(|m| m.passed()))
        }
        Command::Config { preset } => {
            let cfg = load(&preset, None)?;
            print!("{}", cfg.to_toml().map_err(|e| e.to_string())?);
            Ok(true)
        }
        Command::DumpGeometry { source, points, out } => {
            let cfg = load(&source.preset, source.config.as_ref())?;
            dump_geometry(&cfg, points, &out).map_err(|e| e.to_string())?;
            Ok(true)
        }
        Command::DumpOperator { source, h, n, kind, out } => {
            let cfg = load(&source.preset, source.config.as_ref())?;
            let n = match n {
                Some(n) => n,
                None => (cfg.surface.build().map_err(|e| e.to_string())?.a(0.0) / h).round() as u32,
            };
            let kind = match kind {
                Kind::Damped => OperatorKind::Damped,
                Kind::Absorbing => OperatorKind::Absorbing,
            };
            dump_operator(&cfg, h, n, kind, &out).map_err(|e| e.to_string())?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
