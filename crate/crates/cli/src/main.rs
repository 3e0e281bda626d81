use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use viscal::pipeline::{self, ModelKind, RunConfig};
use viscal::training::CompositionMode;

/// Visibility ensemble post-processing: fit, predict, verify, cluster.
#[derive(Debug, Parser)]
#[command(name = "viscal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the model for every lead time and verification day.
    Fit(Common),
    /// Write predictive summaries from fitted parameters.
    Predict(Common),
    /// Score fitted methods, raw ensemble and climatology.
    Verify(Common),
    /// Write daily k-means station clusters.
    Cluster(Common),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Model {
    Mixture,
    Bma,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Regional,
    Local,
    Semilocal,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; defaults apply to omitted fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV (overrides the configuration).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum)]
    model: Option<Model>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Cluster count for semi-local mode.
    #[arg(long)]
    clusters: Option<usize>,
    /// Training window in days.
    #[arg(long)]
    window: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.data {
            config.data = d.clone();
        }
        if let Some(m) = self.model {
            config.model = match m {
                Model::Mixture => ModelKind::Mixture,
                Model::Bma => ModelKind::Bma,
            };
        }
        let k = self.clusters.or(match config.mode {
            CompositionMode::SemiLocal { k } => Some(k),
            _ => None,
        });
        if let Some(m) = self.mode {
            config.mode = match m {
                Mode::Regional => CompositionMode::Regional,
                Mode::Local => CompositionMode::Local,
                Mode::Semilocal => CompositionMode::SemiLocal { k: k.unwrap_or(6) },
            };
        } else if let (CompositionMode::SemiLocal { .. }, Some(k)) = (config.mode, self.clusters) {
            config.mode = CompositionMode::SemiLocal { k };
        }
        if let Some(w) = self.window {
            config.window_days = Some(w);
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(o) = &self.out {
            config.out_dir = o.clone();
        }
        Ok(config)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(c) => {
            let summary = pipeline::cmd_fit(&c.resolve()?)?;
            println!("wrote {} parameter files, {} gaps", summary.files.len(), summary.gaps.len());
        }
        Command::Predict(c) => {
            let path = pipeline::cmd_predict(&c.resolve()?)?;
            println!("wrote {}", path.display());
        }
        Command::Verify(c) => {
            let config = c.resolve()?;
            let out = pipeline::cmd_verify(&config)?;
            for n in &out.notices {
                println!("note: {n}");
            }
            for (name, o) in &out.report.overall {
                match o.crps_pct_of_baseline {
                    Some(p) => println!("{name}: mean CRPS {:.4} km ({p:.2}% of raw), {} cases", o.mean_crps, o.cases),
                    None => println!("{name}: mean CRPS {:.4} km, {} cases", o.mean_crps, o.cases),
                }
            }
            println!("wrote {}", config.out_dir.join("report.json").display());
        }
        Command::Cluster(c) => {
            for p in pipeline::cmd_cluster(&c.resolve()?)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
