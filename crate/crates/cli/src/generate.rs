use std::path::PathBuf;

use clap::Args;
use dapper_core::corpus::{save_counts, save_jsonl, CorpusFormat};
use dapper_core::synthgen::{block_offsets, generate, write_ground_truth, SynthConfig};

use crate::run::{self, parse_format};
use crate::CliResult;

/// Defaults reproduce the well-separated preset: K=5, P=3, T=8, A=50,
/// V=200, 250 documents per slice.
#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Directory for the corpus and ground-truth files.
    #[arg(long)]
    pub output: PathBuf,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Number of topics K.
    #[arg(long, default_value_t = 5)]
    pub topics: usize,

    /// Number of personas P.
    #[arg(long, default_value_t = 3)]
    pub personas: usize,

    /// Number of time slices T.
    #[arg(long, default_value_t = 8)]
    pub slices: usize,

    /// Number of authors A.
    #[arg(long, default_value_t = 50)]
    pub authors: usize,

    /// Vocabulary size V.
    #[arg(long, default_value_t = 200)]
    pub vocab_size: usize,

    #[arg(long, default_value_t = 250)]
    pub docs_per_slice: usize,

    #[arg(long, default_value_t = 100)]
    pub words_per_doc: usize,

    /// Topic-word Dirichlet concentration.
    #[arg(long, default_value_t = 0.05)]
    pub eta: f64,

    /// Author-persona Dirichlet concentration.
    #[arg(long, default_value_t = 0.1)]
    pub omega: f64,

    /// Random-walk and document-level variance.
    #[arg(long, default_value_t = 0.05)]
    pub sigma: f64,

    /// Variance of the first slice around its mean.
    #[arg(long, default_value_t = 0.05)]
    pub sigma0: f64,

    /// Each persona starts at +offset on its own block of topics and −offset
    /// elsewhere; 0 starts every persona at zero.
    #[arg(long, default_value_t = 3.0)]
    pub persona_offset: f64,

    /// Corpus format: jsonl or counts (with vocab.txt).
    #[arg(long, default_value = "jsonl", value_parser = parse_format)]
    pub format: CorpusFormat,
}

pub fn run(args: GenerateArgs) -> CliResult {
    let config = SynthConfig {
        num_topics: args.topics,
        num_personas: args.personas,
        num_slices: args.slices,
        num_authors: args.authors,
        vocab_size: args.vocab_size,
        eta: args.eta,
        omega: args.omega,
        mu0: 0.0,
        sigma0: args.sigma0,
        sigma: args.sigma,
        docs_per_slice: args.docs_per_slice,
        words_per_doc: args.words_per_doc,
        alpha_offsets: (args.persona_offset != 0.0)
            .then(|| block_offsets(args.topics, args.personas, args.persona_offset)),
        beta: None,
    };
    let (corpus, truth) = generate(&config, args.seed)?;
    run::create_dir(&args.output)?;
    match args.format {
        CorpusFormat::Jsonl => save_jsonl(&corpus, args.output.join("corpus.jsonl"))?,
        CorpusFormat::Counts => save_counts(
            &corpus,
            args.output.join("corpus.txt"),
            args.output.join("vocab.txt"),
        )?,
    }
    write_ground_truth(&truth, args.output.join("ground_truth.txt"))?;
    println!("documents={} words={}", corpus.len(), corpus.total_words());
    Ok(())
}
