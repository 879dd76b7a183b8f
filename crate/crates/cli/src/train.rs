use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use dapper_core::checkpoint::Checkpoint;
use dapper_core::corpus::{
    load_corpus, split_train_test, write_vocab, Corpus, CorpusFormat, LoadOptions, SplitSpec,
    TimeMode,
};
use dapper_core::trainer::{train_with, BatchSize, TrainConfig};

use crate::run::{self, parse_format, parse_time_mode};
use crate::{CliResult, Failure};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Configuration file of `key = value` lines. Flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Training corpus.
    #[arg(long)]
    pub corpus: PathBuf,

    /// Held-out corpus evaluated at the end of every epoch.
    #[arg(long, conflicts_with = "test_fraction")]
    pub test_corpus: Option<PathBuf>,

    /// Hold out this fraction of each author's documents as the test set.
    #[arg(long)]
    pub test_fraction: Option<f64>,

    /// Run directory for checkpoints, report and manifest.
    #[arg(long)]
    pub output: PathBuf,

    /// Corpus format: jsonl or counts.
    #[arg(long, default_value = "jsonl", value_parser = parse_format)]
    pub format: CorpusFormat,

    /// Vocabulary file. Required for the counts format; fixes the vocabulary for jsonl.
    #[arg(long)]
    pub vocab: Option<PathBuf>,

    /// How raw times become slices: relative (to each author's first document) or absolute.
    #[arg(long, default_value = "relative", value_parser = parse_time_mode)]
    pub time_mode: TimeMode,

    /// Drop terms seen fewer times than this when building the vocabulary.
    #[arg(long, default_value_t = 1)]
    pub min_count: u64,

    /// Drop terms appearing in more than this fraction of documents.
    #[arg(long, default_value_t = 1.0)]
    pub max_fraction: f64,

    /// Number of topics K [default: 10].
    #[arg(long)]
    pub topics: Option<usize>,

    /// Number of personas P [default: 5].
    #[arg(long)]
    pub personas: Option<usize>,

    /// Number of time slices T [default: inferred from the corpus].
    #[arg(long)]
    pub slices: Option<usize>,

    /// Mini-batch size, or "full" [default: full].
    #[arg(long, value_parser = |s: &str| s.parse::<BatchSize>().map_err(|e| e.to_string()))]
    pub batch_size: Option<BatchSize>,

    /// Learning-rate delay [default: 1].
    #[arg(long)]
    pub lr_delay: Option<f64>,

    /// Learning-rate forgetting exponent in (0.5, 1] [default: 0.7].
    #[arg(long)]
    pub lr_forgetting: Option<f64>,

    /// Maximum number of epochs [default: 50].
    #[arg(long)]
    pub epochs: Option<usize>,

    /// Random seed for initialization, shuffling and splitting [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,

    /// Worker threads [default: available cores].
    #[arg(long)]
    pub workers: Option<usize>,

    /// Use raw mini-batch sums instead of rescaling them to the corpus size.
    #[arg(long)]
    pub no_stat_rescale: bool,

    /// Topic-word Dirichlet prior [default: 0.1].
    #[arg(long)]
    pub eta: Option<f64>,

    /// Author-persona Dirichlet prior [default: 1].
    #[arg(long)]
    pub omega: Option<f64>,

    /// Document and random-walk variance [default: 1].
    #[arg(long)]
    pub sigma: Option<f64>,

    /// Resume from this checkpoint (must come from the same configuration).
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

/// Resolves the configuration: defaults, then the file, then flags.
/// Returns it with whether the number of slices was set explicitly.
fn resolve_config(args: &TrainArgs) -> CliResult<(TrainConfig, bool)> {
    let (mut cfg, mut slices_set) = match &args.config {
        Some(path) => {
            let cfg = run::read_config(path)?;
            let text = fs::read_to_string(path).map_err(|e| Failure::config(e.to_string()))?;
            let table: toml::Table = text
                .parse()
                .map_err(|e: toml::de::Error| Failure::config(e.to_string()))?;
            (cfg, table.contains_key("num_slices"))
        }
        None => (TrainConfig::default(), false),
    };
    macro_rules! set {
        ($flag:expr, $field:ident) => {
            if let Some(v) = $flag {
                cfg.$field = v;
            }
        };
    }
    set!(args.topics, num_topics);
    set!(args.personas, num_personas);
    set!(args.batch_size, batch_size);
    set!(args.lr_delay, lr_delay);
    set!(args.lr_forgetting, lr_forgetting);
    set!(args.epochs, max_epochs);
    set!(args.seed, seed);
    set!(args.eta, eta);
    set!(args.omega, omega);
    set!(args.sigma, sigma);
    if let Some(t) = args.slices {
        cfg.num_slices = t;
        slices_set = true;
    }
    if args.workers.is_some() {
        cfg.workers = args.workers;
    }
    if args.no_stat_rescale {
        cfg.rescale_stats = false;
    }
    Ok((cfg, slices_set))
}

fn load_options(args: &TrainArgs, num_slices: Option<usize>) -> CliResult<LoadOptions> {
    let mut options = LoadOptions::new(args.format);
    options.num_slices = num_slices;
    options.time_mode = args.time_mode;
    options.min_count = args.min_count;
    options.max_fraction = args.max_fraction;
    match args.format {
        CorpusFormat::Counts => {
            let vocab = args
                .vocab
                .clone()
                .ok_or_else(|| Failure::config("the counts format needs --vocab"))?;
            options.vocab_path = Some(vocab);
        }
        CorpusFormat::Jsonl => {
            if let Some(path) = &args.vocab {
                options.vocab = Some(dapper_core::corpus::read_vocab(path)?);
            }
        }
    }
    Ok(options)
}

fn check_input(path: &Path) -> CliResult {
    if !path.is_file() {
        return Err(Failure::data(format!(
            "corpus not found: {}",
            path.display()
        )));
    }
    Ok(())
}

fn manifest(
    args: &TrainArgs,
    cfg: &TrainConfig,
    train: &Corpus,
    test: Option<&Corpus>,
) -> CliResult<String> {
    let mut out = String::new();
    out.push_str(&format!(
        "code_version = \"{}\"\n",
        env!("CARGO_PKG_VERSION")
    ));
    out.push_str(&format!("started_at = {}\n", run::unix_seconds()));
    out.push_str(&format!("config_hash = \"{}\"\n", cfg.hash()));
    out.push_str(&format!("seed = {}\n", cfg.seed));
    out.push_str(&format!(
        "corpus = {:?}\n",
        args.corpus.display().to_string()
    ));
    out.push_str(&format!(
        "corpus_sha256 = \"{}\"\n",
        run::sha256_file(&args.corpus)?
    ));
    out.push_str(&format!("corpus_format = \"{}\"\n", args.format));
    if let Some(vocab) = &args.vocab {
        out.push_str(&format!("vocab = {:?}\n", vocab.display().to_string()));
        out.push_str(&format!(
            "vocab_sha256 = \"{}\"\n",
            run::sha256_file(vocab)?
        ));
    }
    if let Some(test) = &args.test_corpus {
        out.push_str(&format!("test_corpus = {:?}\n", test.display().to_string()));
        out.push_str(&format!(
            "test_corpus_sha256 = \"{}\"\n",
            run::sha256_file(test)?
        ));
    }
    if let Some(f) = args.test_fraction {
        out.push_str(&format!("test_fraction = {f}\n"));
    }
    out.push_str(&format!("time_mode = \"{}\"\n", args.time_mode));
    out.push_str(&format!("train_documents = {}\n", train.len()));
    out.push_str(&format!(
        "test_documents = {}\n",
        test.map_or(0, Corpus::len)
    ));
    if let Some(resume) = &args.resume {
        out.push_str(&format!(
            "resumed_from = {:?}\n",
            resume.display().to_string()
        ));
    }
    out.push_str("\n[config]\n");
    out.push_str(&cfg.to_toml());
    Ok(out)
}

pub fn run(args: TrainArgs) -> CliResult {
    let (mut cfg, slices_set) = resolve_config(&args)?;
    check_input(&args.corpus)?;
    let options = load_options(&args, slices_set.then_some(cfg.num_slices))?;
    let (mut corpus, report) = load_corpus(&args.corpus, &options)?;
    log_load(&args.corpus, &report);
    if !slices_set {
        cfg.num_slices = corpus.num_slices;
    }
    cfg.validate()?;

    let test = match (&args.test_corpus, args.test_fraction) {
        (Some(path), _) => {
            check_input(path)?;
            let mut test_options = options.clone();
            test_options.num_slices = Some(corpus.num_slices);
            test_options.vocab = Some(corpus.vocab.clone());
            test_options.authors = Some(corpus.authors.clone());
            test_options.min_count = 1;
            test_options.max_fraction = 1.0;
            let (test, report) = load_corpus(path, &test_options)?;
            log_load(path, &report);
            Some(test)
        }
        (None, Some(fraction)) => {
            let (train, test) = split_train_test(
                &corpus,
                &SplitSpec {
                    test_fraction: fraction,
                    seed: cfg.seed,
                },
            )?;
            corpus = train;
            (!test.is_empty()).then_some(test)
        }
        (None, None) => None,
    };

    let resume = args.resume.as_deref().map(Checkpoint::load).transpose()?;
    if let Some(cp) = &resume {
        if cp.config_hash != cfg.hash() {
            return Err(Failure::config(format!(
                "{} was produced with a different configuration",
                args.resume.as_ref().expect("resume path").display()
            )));
        }
    }

    let dir = &args.output;
    run::create_dir(&dir.join(run::CHECKPOINTS))?;
    run::write(
        &dir.join(run::MANIFEST),
        &manifest(&args, &cfg, &corpus, test.as_ref())?,
    )?;
    run::write(&dir.join(run::CONFIG), &cfg.to_toml())?;
    write_vocab(&corpus.vocab, dir.join(run::VOCAB))?;
    write_vocab(&corpus.authors, dir.join(run::AUTHORS))?;

    let mut on_epoch = |cp: &Checkpoint| -> dapper_core::Result<()> {
        let epoch = cp.records.len();
        cp.save(run::epoch_checkpoint(dir, epoch))?;
        let partial = dapper_core::trainer::TrainReport {
            records: cp.records.clone(),
            converged: false,
        };
        std::fs::write(dir.join(run::REPORT), partial.to_tsv()).map_err(|e| {
            dapper_core::Error::Io {
                path: dir.join(run::REPORT),
                source: e,
            }
        })
    };
    let (state, report) = train_with(&corpus, test.as_ref(), &cfg, resume, &mut on_epoch)?;

    Checkpoint {
        config_hash: cfg.hash(),
        state,
        records: report.records.clone(),
    }
    .save(dir.join(run::MODEL))?;
    run::write(&dir.join(run::REPORT), &report.to_tsv())?;
    run::write(&dir.join(run::TIMING), &report.timing_tsv())?;
    run::write(
        &dir.join(run::STATUS),
        &format!(
            "finished_at = {}\nepochs = {}\nconverged = {}\n",
            run::unix_seconds(),
            report.records.len(),
            report.converged
        ),
    )?;
    if let Some(last) = report.records.last() {
        println!(
            "epochs={} train_pwll={} test_pwll={}",
            report.records.len(),
            last.train_pwll,
            last.test_pwll.map_or("NA".into(), |x| x.to_string())
        );
    }
    Ok(())
}

fn log_load(path: &Path, report: &dapper_core::corpus::LoadReport) {
    log::info!("{}: {} documents", path.display(), report.documents);
    if report.clamped_slices > 0 {
        log::warn!(
            "{}: {} documents beyond the last slice were clamped into it",
            path.display(),
            report.clamped_slices
        );
    }
    if report.dropped_oov_tokens > 0 || report.dropped_empty_docs > 0 {
        log::warn!(
            "{}: dropped {} out-of-vocabulary tokens and {} empty documents",
            path.display(),
            report.dropped_oov_tokens,
            report.dropped_empty_docs
        );
    }
}
