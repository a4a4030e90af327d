use std::io::IsTerminal;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use forklens::{run_pipeline, PipelineConfig, PipelineError, Stage};
use tracing::{error, info};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "forklens", version)]
#[command(about = "Maintenance, lineage, similarity and patch-propagation reports for forked repositories")]
struct Cli {
    /// Pipeline configuration (TOML)
    #[arg(long, global = true, default_value = "forklens.toml")]
    config: PathBuf,

    /// Output directory, overriding `output_dir` in the config
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    /// Worker threads for per-repository work (default: logical CPUs)
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// k-means seed, overriding `kmeans.seed`
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Log filter, e.g. `info` or `forklens_core=debug`
    #[arg(long, global = true, default_value = "info")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Load histories and hosting metadata
    Ingest,
    /// Extract the 32 maintenance features
    Features,
    /// Standardize features and cluster with silhouette-selected k
    Cluster,
    /// Best-first search for the attributes that separate clusters
    SelectFeatures,
    /// Token similarity between head snapshots
    Similarity,
    /// Fork inference against the parent repository
    Lineage,
    /// Match vulnerability signatures across history
    Vulnscan,
    /// Cross-tabulate survivability against clusters, similarity and vulnerabilities
    Crosstab,
    /// Summary statistics and tests
    Stats,
    /// Every stage the config enables, in order
    Run,
}

impl Command {
    fn stages(self, cfg: &PipelineConfig) -> Vec<Stage> {
        match self {
            Command::Ingest => vec![Stage::Ingest],
            Command::Features => vec![Stage::Features],
            Command::Cluster => vec![Stage::Cluster],
            Command::SelectFeatures => vec![Stage::SelectFeatures],
            Command::Similarity => vec![Stage::Similarity],
            Command::Lineage => vec![Stage::Lineage],
            Command::Vulnscan => vec![Stage::Vulnscan],
            Command::Crosstab => vec![Stage::Crosstab],
            Command::Stats => vec![Stage::Stats],
            Command::Run => Stage::enabled(cfg),
        }
    }
}

fn execute(cli: &Cli) -> Result<usize, PipelineError> {
    let mut cfg = PipelineConfig::load(&cli.config)?;
    if let Some(out) = &cli.output {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.kmeans.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(PipelineError::ConfigInvalid {
                field: "--jobs".into(),
                message: "must be positive".into(),
            });
        }
        // fails only if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let outcome = run_pipeline(&cfg, &cli.command.stages(&cfg))?;
    info!(output = %cfg.output_dir.display(), stages = outcome.manifest.stages.len(), "manifest written");
    Ok(outcome.skipped)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = EnvFilter::try_new(&cli.log_level).unwrap_or_else(|_| EnvFilter::new("info"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    match execute(&cli) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            info!(skipped = n, "completed with skipped repositories; see skipped.csv");
            ExitCode::from(1)
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
