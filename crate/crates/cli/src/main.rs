mod commands;
mod logging;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use musemo::config::PipelineConfig;
use musemo::quadrant::EmotionQuadrant;

#[derive(Debug, Parser)]
#[command(name = "musemo", version, about = "Music-evoked emotion study toolkit")]
struct Cli {
    /// JSON configuration; keys not given keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Root of every artifact the command writes.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Log as JSON lines on stderr.
    #[arg(long, global = true)]
    log_json: bool,
    /// Only warnings and errors are logged.
    #[arg(long, short, global = true)]
    quiet: bool,
    /// Print the effective configuration and exit.
    #[arg(long)]
    dump_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Enumerate prompt sentences per quadrant and optionally render clips.
    Prompts(PromptsArgs),
    /// Technical and rating-based screening of a clip library.
    Screen(ScreenArgs),
    /// Structural music features per clip plus group ANOVA.
    MusicFeatures(MusicFeaturesArgs),
    /// EEG and fNIRS preprocessing of exported session bundles.
    Preprocess(PreprocessArgs),
    /// Labels, band powers, trial features and summary statistics.
    Analyze(AnalyzeArgs),
    /// Modality ablation grid under both validation protocols.
    Classify(ClassifyArgs),
    /// Run the session HTTP API.
    Serve(ServeArgs),
    /// Simulate participants and export their session bundles.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
struct PromptsArgs {
    /// Prompts per quadrant (configuration default when omitted).
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, conflicts_with = "quadrant")]
    all_quadrants: bool,
    /// Quadrant(s) to enumerate, e.g. HAHV.
    #[arg(long, value_parser = parse_quadrant)]
    quadrant: Vec<EmotionQuadrant>,
    /// Word lists replacing the bundled lexicon.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Sentence template with one placeholder per slot.
    #[arg(long)]
    template: Option<String>,
    /// Render clips from audio pre-registered under this directory.
    #[arg(long, conflicts_with = "endpoint")]
    stub_dir: Option<PathBuf>,
    /// Render clips through a generation service at this URL.
    #[arg(long)]
    endpoint: Option<String>,
    /// Clip length requested from the generator.
    #[arg(long)]
    duration_s: Option<f64>,
}

#[derive(Debug, Args)]
struct ScreenArgs {
    /// Library manifest: JSON list of {clip_id, quadrant, audio}.
    #[arg(long)]
    library: PathBuf,
    /// Evaluator ratings CSV: evaluator_id,clip_id,valence,arousal.
    #[arg(long)]
    ratings: PathBuf,
}

#[derive(Debug, Args)]
struct MusicFeaturesArgs {
    #[arg(long)]
    library: PathBuf,
    /// Screening report; only its selected clips are analyzed.
    #[arg(long)]
    selected: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    /// Dataset root (defaults to `<out-dir>/dataset`).
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Preprocessed root (defaults to `<out-dir>/preprocessed`).
    #[arg(long)]
    preprocessed: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    /// Trial feature table (defaults to `<out-dir>/analysis/features.csv`).
    #[arg(long)]
    features: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    /// Screening report whose selected clips plans draw from. Without it a
    /// synthetic library is used.
    #[arg(long)]
    library: Option<PathBuf>,
    /// Directory holding `<clip_id>.wav`.
    #[arg(long)]
    clips: Option<PathBuf>,
    /// Journals and raw recordings; sessions found here are restored.
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    subjects: Option<usize>,
}

fn parse_quadrant(s: &str) -> Result<EmotionQuadrant, String> {
    s.to_ascii_uppercase().parse().map_err(|e| format!("{e}"))
}

/// Failure classes reported on stderr.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or missing inputs.
    Usage(String),
    Failed(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Failed(e.into())
    }
}

impl CliError {
    fn report(&self) -> ExitCode {
        let (kind, message, code) = match self {
            CliError::Usage(m) => ("usage", m.clone(), 2),
            CliError::Failed(e) => ("failed", format!("{e:#}"), 1),
        };
        eprintln!(
            "{}",
            serde_json::json!({ "error": kind, "message": message })
        );
        ExitCode::from(code)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) if !p.is_file() => {
            return Err(CliError::Usage(format!(
                "config file {} not found",
                p.display()
            )))
        }
        Some(p) => PipelineConfig::load(p).map_err(|e| CliError::Usage(e.to_string()))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.dump_config {
        print!("{}", cfg.to_json());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(CliError::Usage("no subcommand given; see --help".into()));
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Failed(e.into()))?;
    }
    let out = &cli.out_dir;
    let summary = match command {
        Command::Prompts(a) => commands::prompts(&mut cfg, out, a)?,
        Command::Screen(a) => commands::screen(&cfg, out, a)?,
        Command::MusicFeatures(a) => commands::music_features(out, a)?,
        Command::Preprocess(a) => commands::preprocess(&cfg, out, a)?,
        Command::Analyze(a) => commands::analyze(&cfg, out, a)?,
        Command::Classify(a) => commands::classify(&cfg, out, a)?,
        Command::Serve(a) => commands::serve(&cfg, out, a)?,
        Command::Simulate(a) => commands::simulate(&mut cfg, out, a)?,
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).expect("summary serializes")
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return CliError::Usage(e.render().to_string().trim_end().to_string()).report(),
    };
    let level = if cli.quiet {
        log::LevelFilter::Warn
    } else {
        log::LevelFilter::Info
    };
    logging::init(cli.log_json, level);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}
