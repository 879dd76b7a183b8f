use std::path::PathBuf;

use clap::Args;
use dapper_core::corpus::{load_corpus, CorpusFormat, LoadOptions, TimeMode};
use dapper_core::trainer::Evaluator;

use crate::run::{self, parse_format, parse_time_mode, Run};
use crate::{CliResult, Failure};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory written by `dapper train`.
    #[arg(long)]
    pub run: PathBuf,

    /// Held-out corpus to score.
    #[arg(long)]
    pub test_corpus: PathBuf,

    /// Checkpoint to evaluate [default: the run's final model, else its latest epoch].
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,

    /// Configuration the checkpoint must match [default: the run's config.toml].
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Corpus format: jsonl or counts.
    #[arg(long, default_value = "jsonl", value_parser = parse_format)]
    pub format: CorpusFormat,

    /// Vocabulary sidecar for the counts format [default: the run's vocabulary].
    #[arg(long)]
    pub vocab: Option<PathBuf>,

    /// How raw times become slices: relative or absolute.
    #[arg(long, default_value = "relative", value_parser = parse_time_mode)]
    pub time_mode: TimeMode,

    /// Worker threads [default: available cores].
    #[arg(long)]
    pub workers: Option<usize>,
}

pub fn run(args: EvalArgs) -> CliResult {
    let run = Run::open(
        &args.run,
        args.checkpoint.as_deref(),
        args.config.as_deref(),
    )?;
    if !args.test_corpus.is_file() {
        return Err(Failure::data(format!(
            "corpus not found: {}",
            args.test_corpus.display()
        )));
    }
    let state = &run.checkpoint.state;
    let mut options = LoadOptions::new(args.format);
    options.num_slices = Some(state.num_slices());
    options.time_mode = args.time_mode;
    options.authors = Some(run.authors.clone());
    if args.format == CorpusFormat::Counts {
        options.vocab_path = Some(
            args.vocab
                .clone()
                .unwrap_or_else(|| args.run.join(run::VOCAB)),
        );
    }
    options.vocab = Some(run.vocab.clone());
    let (corpus, report) = load_corpus(&args.test_corpus, &options)?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.workers {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Failure::config(e.to_string()))?;
    let estep = run.config.estep();
    let eval = pool.install(|| Evaluator::new(state, &estep)?.evaluate(&corpus))?;
    if eval.words == 0 {
        return Err(Failure::data("no in-vocabulary words to score"));
    }

    let fmt = |ll: f64, n: u64| {
        if n == 0 {
            "NA".to_string()
        } else {
            (ll / n as f64).to_string()
        }
    };
    println!("pwll={}", fmt(eval.loglik, eval.words));
    println!("loglik={}", eval.loglik);
    println!("words={}", eval.words);
    println!("documents={}", corpus.len());
    println!("docs_skipped={}", eval.docs_skipped);
    println!("oov_tokens_dropped={}", report.dropped_oov_tokens);
    println!("config_hash={}", run.checkpoint.config_hash);
    for (t, &(ll, n)) in eval.per_slice.iter().enumerate() {
        println!("slice.{t}.pwll={}", fmt(ll, n));
        println!("slice.{t}.words={n}");
    }
    Ok(())
}
