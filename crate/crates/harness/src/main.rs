use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vgf_harness::config::{ExperimentConfig, PRESETS};
use vgf_harness::{plot, run, HarnessError, Result};

#[derive(Parser)]
#[command(name = "vgf", version, about = "Train, evaluate and check value gradient flow agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Named preset to start from.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// TOML config file to start from.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one field, e.g. `--set flow.epsilon=0.02`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; defaults to the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let cfg = ExperimentConfig::resolve(self.preset.as_deref(), self.config.as_deref(), &self.overrides)?;
        cfg.validate()?;
        let dir = self.out.clone().unwrap_or_else(|| cfg.output_dir());
        Ok((cfg, dir))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train every sweep cell and seed, then evaluate.
    Train(ConfigArgs),
    /// Evaluate a saved checkpoint.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated L_test values, replacing `eval.l_test`.
        #[arg(long, value_delimiter = ',')]
        l_test: Option<Vec<usize>>,
        /// Comma-separated episode seeds, replacing `eval.seeds`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Compare empirical MMD² after transport with its analytic bound.
    VerifyBound(ConfigArgs),
    /// Write the offline datasets a config would train on.
    GenData(ConfigArgs),
    /// Render SVG plots of a finished run directory.
    Plot { dir: PathBuf },
    /// Print a preset as TOML, or list presets.
    Preset { name: Option<String> },
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => {
            let (cfg, dir) = a.resolve()?;
            print!("{}", run::train(&cfg, &dir)?.describe());
        }
        Command::Eval { cfg, checkpoint, l_test, seeds } => {
            let (mut c, dir) = cfg.resolve()?;
            if let Some(l) = l_test {
                c.eval.l_test = l;
            }
            if let Some(s) = seeds {
                c.eval.seeds = s;
            }
            c.validate()?;
            print!("{}", run::eval(&c, &checkpoint, &dir)?.describe());
        }
        Command::VerifyBound(a) => {
            let (cfg, dir) = a.resolve()?;
            let rec = run::verify_bound(&cfg, &dir)?;
            print!("{}", rec.describe());
        }
        Command::GenData(a) => {
            let (cfg, dir) = a.resolve()?;
            let rec = run::gen_data(&cfg, &dir)?;
            for f in &rec.files {
                println!("{}", dir.join(f).display());
            }
        }
        Command::Plot { dir } => {
            for p in plot::plot_run(&dir)? {
                println!("{}", p.display());
            }
        }
        Command::Preset { name: None } => {
            for p in PRESETS {
                println!("{p}");
            }
        }
        Command::Preset { name: Some(n) } => {
            let cfg = ExperimentConfig::preset(&n).ok_or_else(|| HarnessError::config("preset", format!("unknown preset {n:?}; known: {}", PRESETS.join(", "))))?;
            print!("{}", cfg.to_toml_string()?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
