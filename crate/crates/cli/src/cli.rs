use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use storyplot_core::pipeline::{ElementsMode, GraphsMode};

#[derive(Parser, Debug)]
#[command(name = "storyplot", version, about = "Plan storylines over knowledge graphs and write stories from photo sequences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Corpus {
    #[arg(long)]
    pub stories: PathBuf,
    #[arg(long)]
    pub detections: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a knowledge graph from triples and print its statistics.
    BuildKg {
        #[arg(long)]
        triples: PathBuf,
        /// Keep only triples from this source.
        #[arg(long, value_parser = parse_graphs, default_value = "both")]
        graphs: GraphsMode,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Select objects, predict terms and extract golden storylines.
    Extract {
        #[command(flatten)]
        corpus: Corpus,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        term_epochs: usize,
        #[arg(long, default_value_t = 3)]
        terms_per_image: usize,
    },
    /// Train the storyline scorer on golden storylines.
    TrainPredictor {
        #[arg(long)]
        triples: PathBuf,
        #[command(flatten)]
        corpus: Corpus,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
    },
    /// Predict a storyline for every extracted sequence.
    Plot {
        /// Directory holding the predictor checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        triples: PathBuf,
        /// Training stories, whose tuples join the story-side graph.
        #[arg(long)]
        stories: Option<PathBuf>,
        /// `elements.jsonl` written by `extract`.
        #[arg(long)]
        elements_file: PathBuf,
        #[arg(long, value_parser = parse_elements, default_value = "both")]
        elements: ElementsMode,
        #[arg(long, value_parser = parse_graphs, default_value = "both")]
        graphs: GraphsMode,
        #[arg(long, default_value_t = 10)]
        max_sentences: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train the story evaluator on rank-1 and rank-5 stories.
    TrainEvaluator {
        #[arg(long)]
        rankings: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
    },
    /// Train the story generator.
    TrainGenerator {
        #[command(flatten)]
        corpus: Corpus,
        /// Directory holding the evaluator checkpoint; required unless `--no-rework`.
        #[arg(long)]
        evaluator: Option<PathBuf>,
        /// Storylines whose tokens should join the generator vocabulary.
        #[arg(long)]
        storylines: Option<PathBuf>,
        #[arg(long)]
        no_plot: bool,
        #[arg(long)]
        no_rework: bool,
        #[arg(long, default_value_t = 60)]
        epochs: usize,
        #[arg(long, default_value_t = 30)]
        reward_start: usize,
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Write one story per storyline.
    Generate {
        /// Directory holding the generator checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        storylines: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Print lexical diversity and storyline statistics.
    Metrics {
        #[arg(long)]
        stories_out: PathBuf,
        #[arg(long)]
        storylines: Option<PathBuf>,
        #[arg(long, default_value_t = 0.72)]
        threshold: f64,
    },
    /// Run every stage end to end.
    Pipeline(PipelineArgs),
    /// Write a seeded synthetic corpus in the pipeline's input formats.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 60)]
        train: usize,
        #[arg(long, default_value_t = 20)]
        test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    /// Flat key=value file; flags given on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub triples: Option<PathBuf>,
    #[arg(long)]
    pub stories: Option<PathBuf>,
    #[arg(long)]
    pub detections: Option<PathBuf>,
    #[arg(long)]
    pub rankings: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_elements)]
    pub elements: Option<ElementsMode>,
    #[arg(long, value_parser = parse_graphs)]
    pub graphs: Option<GraphsMode>,
    #[arg(long)]
    pub no_plot: bool,
    #[arg(long)]
    pub no_rework: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub reward_start: Option<usize>,
}

fn parse_elements(s: &str) -> Result<ElementsMode, String> {
    s.parse().map_err(|e: storyplot_core::Error| e.to_string())
}

fn parse_graphs(s: &str) -> Result<GraphsMode, String> {
    s.parse().map_err(|e: storyplot_core::Error| e.to_string())
}
