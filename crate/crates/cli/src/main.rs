mod commands;
mod overrides;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vqglab::config::{ExemplarMode, Mixture, Variant};

/// Exemplar-conditioned visual question generation, from synthetic data
/// to significance plots.
#[derive(Parser, Debug)]
#[command(name = "vqg-lab", version, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a deterministic synthetic dataset (JSON Lines).
    SynthData(SynthArgs),
    /// Cluster the dataset's features and write the exemplar index.
    BuildIndex(IndexArgs),
    /// Train a model and write its checkpoint and per-epoch log.
    Train(TrainArgs),
    /// Generate one question per sample with a trained checkpoint.
    Generate(GenerateArgs),
    /// Score generated questions against a dataset's questions.
    Evaluate(EvaluateArgs),
    /// Friedman mean ranks and the Nemenyi critical-difference diagram.
    CdTest(CdArgs),
    /// Word-position statistics of generated questions as a sunburst.
    Sunburst(SunburstArgs),
    /// Run the gradient checks and the metric oracles.
    Selfcheck(SelfcheckArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Number of samples.
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Generator clusters (question template families).
    #[arg(long, default_value_t = 4)]
    clusters: usize,
    /// Image feature length; train needs the same value in dims.d_img.
    #[arg(long, default_value_t = 64)]
    d_img: usize,
    /// Also emit grid features, e.g. `6x64` (needed by attention fusion).
    #[arg(long, value_name = "CELLSxDIM")]
    grid: Option<String>,
    /// Leave out the 365-way place features.
    #[arg(long)]
    no_place: bool,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct IndexArgs {
    #[arg(long)]
    data: PathBuf,
    /// Coarse k-means clusters.
    #[arg(long, default_value_t = 50)]
    clusters: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// JSON run config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset [default: paths.data]
    #[arg(long)]
    data: Option<PathBuf>,
    /// Exemplar index [default: paths.index]
    #[arg(long)]
    index: Option<PathBuf>,
    /// Checkpoint to write [default: paths.checkpoint]
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Training log, JSON Lines [default: paths.log]
    #[arg(long)]
    log: Option<PathBuf>,
    /// mdn | diff-image | tag | place [default: mdn]
    #[arg(long)]
    variant: Option<Variant>,
    /// joint | hadamard | addition | attention [default: joint]
    #[arg(long)]
    mixture: Option<Mixture>,
    /// Exemplars per target [default: 5]
    #[arg(long)]
    k: Option<usize>,
    /// knn | random [default: knn]
    #[arg(long)]
    exemplar_mode: Option<ExemplarMode>,
    /// Triplet margin [default: 0.2]
    #[arg(long)]
    alpha: Option<f64>,
    /// Weight of the triplet term [default: 1]
    #[arg(long)]
    gamma: Option<f64>,
    /// Longest question in words [default: 20]
    #[arg(long)]
    max_len: Option<usize>,
    /// RMSProp learning rate [default: 0.0004]
    #[arg(long)]
    lr: Option<f64>,
    /// Batch size [default: 200]
    #[arg(long)]
    batch: Option<usize>,
    /// Image feature length [default: 4096]
    #[arg(long)]
    d_img: Option<usize>,
    /// Hidden size of towers, fusion and decoder [default: 512]
    #[arg(long)]
    hidden: Option<usize>,
    /// Word embedding size [default: 512]
    #[arg(long)]
    embed: Option<usize>,
    /// [default: 30]
    #[arg(long)]
    epochs: Option<usize>,
    /// [default: 7]
    #[arg(long)]
    seed: Option<u64>,
    /// Any other config field as dotted.key=json, e.g. optimizer.clip=5
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print the resolved config and exit.
    #[arg(long)]
    print_config: bool,
    /// No per-epoch progress on stderr.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Generated questions, JSON Lines {"id","question"}.
    #[arg(long, short)]
    out: PathBuf,
    /// Sample from the softmax with this seed instead of argmax decoding.
    #[arg(long)]
    sample_seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Generated questions, JSON Lines {"id","question"}.
    #[arg(long)]
    generated: PathBuf,
    /// Dataset whose questions are the references.
    #[arg(long)]
    references: PathBuf,
    /// Score report JSON; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CdArgs {
    /// {"version":1,"systems":[..],"conditions":[..],"scores":[[..]..]}
    #[arg(long)]
    scores: PathBuf,
    /// 0.05 or 0.10
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// CD diagram (SVG).
    #[arg(long, short)]
    out: PathBuf,
    /// Also write ranks and CD as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SunburstArgs {
    /// Generated questions, JSON Lines {"id","question"}.
    #[arg(long)]
    generated: PathBuf,
    #[arg(long, default_value_t = 5)]
    depth: usize,
    /// Sunburst (SVG).
    #[arg(long, short)]
    out: PathBuf,
    /// Also write the prefix tree as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SelfcheckArgs {
    /// Check every gradient entry instead of a seeded sample (slow).
    #[arg(long)]
    full: bool,
    /// Hidden size of the gradient suite.
    #[arg(long, default_value_t = 64)]
    hidden: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::SynthData(a) => commands::synth(a),
        Command::BuildIndex(a) => commands::build_index(a),
        Command::Train(a) => commands::train(a),
        Command::Generate(a) => commands::generate(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::CdTest(a) => commands::cd_test(a),
        Command::Sunburst(a) => commands::sunburst(a),
        Command::Selfcheck(a) => commands::selfcheck(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

/// The cause chain joined by `: `, skipping causes a parent already quotes.
fn render(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

/// 2 for I/O failures anywhere in the chain, 1 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    let io = e.chain().any(|c| {
        c.downcast_ref::<std::io::Error>().is_some()
            || matches!(c.downcast_ref::<vqglab::Error>(), Some(vqglab::Error::Io { .. }))
    });
    if io {
        2
    } else {
        1
    }
}
