use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Entity-aware news video captioning toolkit.
#[derive(Parser)]
#[command(name = "views", version)]
struct Cli {
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check and split corpus files.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Dataset construction: captions, entities, rater QC, review.
    #[command(subcommand)]
    Build(BuildCmd),
    /// Entity perceiver.
    #[command(subcommand)]
    Ep(EpCmd),
    /// Knowledge extraction.
    #[command(subcommand)]
    Ke(KeCmd),
    /// Captioning model.
    #[command(subcommand)]
    Cm(CmCmd),
    /// Score predictions against references.
    Eval(EvalArgs),
    /// Full pipeline for every ablation in an experiment spec.
    Run(RunArgs),
    /// The four-row design-choice table.
    Ablation(AblationArgs),
    /// Train before a cutoff date and evaluate after it.
    Timesplit(ConfigArg),
    /// Structured vs flat vs single-stage knowledge extraction.
    KeStudies(KeStudiesArgs),
    /// Full VI against video-only over several seeds.
    Seeds(SeedsArgs),
    /// Write a synthetic corpus with its knowledge base and experiment spec.
    Synth(SynthArgs),
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Parse a corpus and report its contents.
    Validate {
        path: PathBuf,
        #[arg(long, default_value = views_core::corpus::SCHEMA_V1)]
        schema: String,
    },
    /// Assign train/dev/test, randomly or by publication date.
    Split(SplitArgs),
    /// Write the ground-truth captions of a split as reference records.
    Refs {
        path: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SplitArgs {
    path: PathBuf,
    #[arg(long, requires_all = ["test"], conflicts_with = "cutoff")]
    dev: Option<usize>,
    #[arg(long, requires_all = ["dev"])]
    test: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train strictly before this date (YYYY-MM-DD).
    #[arg(long)]
    cutoff: Option<NaiveDate>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitName {
    Train,
    Dev,
    Test,
}

impl From<SplitName> for views_core::corpus::Split {
    fn from(s: SplitName) -> Self {
        match s {
            SplitName::Train => Self::Train,
            SplitName::Dev => Self::Dev,
            SplitName::Test => Self::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Mock,
    Replay,
    Live,
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, value_enum, default_value = "mock")]
    backend: BackendKind,
    /// Mock: cassette-format fixture replies. Replay: the cassette.
    #[arg(long)]
    cassette: Option<PathBuf>,
    /// Live backend endpoint URL.
    #[arg(long)]
    endpoint: Option<String>,
    /// Live backend model name.
    #[arg(long)]
    model: Option<String>,
    /// Record every exchange to this cassette.
    #[arg(long)]
    record: Option<PathBuf>,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[arg(long, default_value_t = 2)]
    max_retries: usize,
}

#[derive(Subcommand)]
enum BuildCmd {
    /// Filter bullet summaries and write ground-truth captions.
    Captions(BuildArgs),
    /// Extract ground-truth entities.
    Entities(BuildArgs),
    /// Rate dev/test captions and queue failures for correction.
    Qc {
        #[command(flatten)]
        args: BuildArgs,
        /// Correction queue file.
        #[arg(long)]
        queue: PathBuf,
        /// Also rate training captions.
        #[arg(long)]
        qc_train: bool,
    },
    /// Walk the correction queue interactively.
    Review {
        #[arg(long)]
        queue: PathBuf,
        /// Apply finished corrections to this corpus...
        #[arg(long, requires = "out")]
        corpus: Option<PathBuf>,
        /// ...and write the result here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment spec (TOML).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum EpCmd {
    /// Train on the spec's training split; writes ep.json to the output directory.
    Train(ConfigArg),
    /// Decode entity strings for every sample of a corpus.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        beam: usize,
    },
}

#[derive(Subcommand)]
enum KeCmd {
    /// Retrieve a context passage for each decoded entity set.
    Extract {
        #[arg(long)]
        entities: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        /// Mock knowledge base (JSONL of entity_signature, passage).
        #[arg(long)]
        kb: Option<PathBuf>,
        #[arg(long, overrides_with = "flat")]
        structured: bool,
        #[arg(long, overrides_with = "structured")]
        flat: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum CmCmd {
    /// Join decoded entities, passages and ASR into a VI file.
    Vi {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        entities: PathBuf,
        #[arg(long)]
        context: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one ablation on the spec's training split.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        vi: PathBuf,
        #[arg(long, default_value = "full")]
        ablate: String,
        #[arg(long)]
        use_asr: bool,
        /// Checkpoint path; defaults to cm_<ablation>.json in the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Caption samples of a corpus.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vi: PathBuf,
        /// Only this split; by default every dev and test sample.
        #[arg(long, value_enum)]
        split: Option<SplitName>,
        #[arg(long, default_value_t = 1)]
        beam: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExtractorKind {
    Gazetteer,
    Llm,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long, value_enum, default_value = "gazetteer")]
    entities_extractor: ExtractorKind,
    /// Gazetteer JSON for the dictionary extractor.
    #[arg(long)]
    gazetteer: Option<PathBuf>,
    /// Build the gazetteer from this corpus's ground-truth entities instead.
    #[arg(long, conflicts_with = "gazetteer")]
    corpus: Option<PathBuf>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Use ground-truth entities and the paired article as VI.
    #[arg(long)]
    oracle_vi: bool,
}

#[derive(Args)]
struct AblationArgs {
    #[arg(long)]
    config: PathBuf,
    /// Exit with status 4 when full > partial > video-only does not hold.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct KeStudiesArgs {
    #[arg(long)]
    config: PathBuf,
    /// File of sample ids, one per line; default the first evaluation split.
    #[arg(long)]
    ids: Option<PathBuf>,
}

#[derive(Args)]
struct SeedsArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
    seeds: Vec<u64>,
    #[arg(long)]
    strict: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileName {
    Informative,
    Noise,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 320)]
    samples: usize,
    #[arg(long, default_value_t = 24)]
    persons: usize,
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    #[arg(long, value_enum, default_value = "informative")]
    profile: ProfileName,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp(None).init();
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
