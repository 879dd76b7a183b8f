//! Epoch and mini-batch orchestration, held-out evaluation and convergence
//! tracking.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array1, Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::corpus::{Corpus, Document};
use crate::error::{Error, Result};
use crate::estep::{infer_document, DocOutcome, EStepConfig, Snapshot, ThetaGradient};
use crate::mstep::{m_step, AbsentAuthors, GlobalState, MStepSchedule, SufficientStats};

/// Documents handed to the worker pool at once. Bounds the number of live
/// document states independently of the batch size.
const CHUNK: usize = 512;

/// Consecutive small changes in train PWLL needed to stop early.
const STOP_STREAK: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchSize {
    /// Every training document in one batch.
    Full,
    Size(usize),
}

impl FromStr for BatchSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("full") {
            return Ok(BatchSize::Full);
        }
        match s.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(BatchSize::Size(n)),
            _ => Err(Error::Config(format!(
                "batch size must be a positive integer or \"full\", got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for BatchSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BatchSize::Full => f.write_str("full"),
            BatchSize::Size(n) => write!(f, "{n}"),
        }
    }
}

impl Serialize for BatchSize {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BatchSize::Full => s.serialize_str("full"),
            BatchSize::Size(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for BatchSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(i64),
            Str(String),
        }
        let text = match Repr::deserialize(d)? {
            Repr::Int(n) => n.to_string(),
            Repr::Str(s) => s,
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Serde through `Display` / `FromStr`, for the small config enums.
mod via_str {
    use std::fmt::Display;
    use std::str::FromStr;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<T: Display, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<T, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub num_topics: usize,
    pub num_personas: usize,
    pub num_slices: usize,
    /// Topic-word Dirichlet prior.
    pub eta: f64,
    /// Author-persona Dirichlet prior.
    pub omega: f64,
    /// Prior mean of the first slice: empty for zeros, one value broadcast
    /// to every topic, or one value per topic.
    pub mu0: Vec<f64>,
    pub sigma0: f64,
    pub sigma: f64,
    pub batch_size: BatchSize,
    pub lr_delay: f64,
    pub lr_forgetting: f64,
    pub max_epochs: usize,
    pub epoch_tol: f64,
    pub seed: u64,
    /// Reserved; must be zero.
    pub persona_regularization: f64,
    pub local_step: f64,
    pub max_inner_iters: usize,
    pub mean_change_tol: f64,
    #[serde(with = "via_str")]
    pub theta_gradient: ThetaGradient,
    pub rescale_stats: bool,
    #[serde(with = "via_str")]
    pub absent_authors: AbsentAuthors,
    /// Standard deviation of the per-persona offsets added to α̂ at
    /// initialization. Zero leaves all personas identical.
    pub alpha_init_jitter: f64,
    /// Worker threads; `None` uses every available core. Does not affect
    /// results and is excluded from the config hash.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let estep = EStepConfig::default();
        TrainConfig {
            num_topics: 10,
            num_personas: 5,
            num_slices: 1,
            eta: 0.1,
            omega: 1.0,
            mu0: Vec::new(),
            sigma0: 1.0,
            sigma: 1.0,
            batch_size: BatchSize::Full,
            lr_delay: 1.0,
            lr_forgetting: 0.7,
            max_epochs: 50,
            epoch_tol: 1e-4,
            seed: 0,
            persona_regularization: 0.0,
            local_step: estep.local_step,
            max_inner_iters: estep.max_inner_iters,
            mean_change_tol: estep.mean_change_tol,
            theta_gradient: estep.theta_gradient,
            rescale_stats: true,
            absent_authors: AbsentAuthors::Keep,
            alpha_init_jitter: 0.1,
            workers: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        if self.num_topics == 0 || self.num_personas == 0 || self.num_slices == 0 {
            return cfg("num_topics, num_personas and num_slices must be at least 1".into());
        }
        if !(self.eta > 0.0 && self.eta.is_finite())
            || !(self.omega > 0.0 && self.omega.is_finite())
        {
            return cfg(format!(
                "eta and omega must be positive, got {} and {}",
                self.eta, self.omega
            ));
        }
        if !(self.sigma0 > 0.0 && self.sigma > 0.0) {
            return cfg("sigma0 and sigma must be positive".into());
        }
        if !matches!(self.mu0.len(), 0 | 1) && self.mu0.len() != self.num_topics {
            return cfg(format!(
                "mu0 has {} values; give none, one, or one per topic ({})",
                self.mu0.len(),
                self.num_topics
            ));
        }
        if self.mu0.iter().any(|x| !x.is_finite()) {
            return cfg("mu0 must be finite".into());
        }
        if self.batch_size == BatchSize::Size(0) {
            return cfg("batch_size must be at least 1".into());
        }
        if !(self.lr_delay >= 0.0) {
            return cfg("lr_delay must be non-negative".into());
        }
        if !(self.lr_forgetting > 0.5 && self.lr_forgetting <= 1.0) {
            return cfg(format!(
                "lr_forgetting must lie in (0.5, 1], got {}",
                self.lr_forgetting
            ));
        }
        if !(self.epoch_tol > 0.0) {
            return cfg("epoch_tol must be positive".into());
        }
        if !(self.persona_regularization >= 0.0) {
            return cfg("persona_regularization must be non-negative".into());
        }
        if !(self.alpha_init_jitter >= 0.0 && self.alpha_init_jitter.is_finite()) {
            return cfg("alpha_init_jitter must be non-negative".into());
        }
        if self.workers == Some(0) {
            return cfg("workers must be at least 1".into());
        }
        self.estep().validate()
    }

    pub fn estep(&self) -> EStepConfig {
        EStepConfig {
            local_step: self.local_step,
            max_inner_iters: self.max_inner_iters,
            mean_change_tol: self.mean_change_tol,
            theta_gradient: self.theta_gradient,
        }
    }

    pub fn schedule(&self) -> MStepSchedule {
        MStepSchedule {
            eta: self.eta,
            omega: self.omega,
            lr_delay: self.lr_delay,
            lr_forgetting: self.lr_forgetting,
            rescale_stats: self.rescale_stats,
            absent_authors: self.absent_authors,
            persona_regularization: self.persona_regularization,
        }
    }

    pub fn mu0_vector(&self) -> Array1<f64> {
        match self.mu0.len() {
            0 => Array1::zeros(self.num_topics),
            1 => Array1::from_elem(self.num_topics, self.mu0[0]),
            _ => Array1::from(self.mu0.clone()),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 over every setting that influences results.
    pub fn hash(&self) -> String {
        let canonical = TrainConfig {
            workers: None,
            ..self.clone()
        };
        hex::encode(Sha256::digest(canonical.to_toml().as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_pwll: f64,
    pub test_pwll: Option<f64>,
    pub docs_skipped: u64,
    /// Global updates applied so far.
    pub step_count: u64,
    /// Wall-clock seconds since training (or resumption) began.
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    /// Stopped on the tolerance rule rather than the epoch limit.
    pub converged: bool,
}

impl TrainReport {
    /// Tab-separated deterministic columns, one row per epoch.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\ttrain_pwll\ttest_pwll\tdocs_skipped\tstep_count\n");
        for r in &self.records {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.epoch,
                r.train_pwll,
                r.test_pwll.map_or("NA".into(), |x| x.to_string()),
                r.docs_skipped,
                r.step_count
            ));
        }
        out
    }

    pub fn timing_tsv(&self) -> String {
        let mut out = String::from("epoch\tseconds\n");
        for r in &self.records {
            out.push_str(&format!("{}\t{:.3}\n", r.epoch, r.seconds));
        }
        out
    }
}

/// Per-word log-likelihood.
pub fn compute_pwll(total_loglik: f64, total_words: u64) -> Result<f64> {
    if total_words == 0 {
        return Err(Error::Data(
            "per-word log-likelihood needs at least one word".into(),
        ));
    }
    Ok(total_loglik / total_words as f64)
}

/// Random initial global state.
pub fn init_state(corpus: &Corpus, config: &TrainConfig, seed: u64) -> Result<GlobalState> {
    config.validate()?;
    check_dims(corpus, config)?;
    let (k, p, t_len) = (config.num_topics, config.num_personas, config.num_slices);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = Gamma::new(100.0, 0.01).expect("valid gamma");
    let lambda = Array2::from_shape_fn((k, corpus.vocab_size()), |_| {
        config.eta + gamma.sample(&mut rng)
    });
    let mu0 = config.mu0_vector();
    let mut alpha_hat = Array3::zeros((t_len, p, k));
    if config.alpha_init_jitter > 0.0 {
        let normal = Normal::new(0.0, config.alpha_init_jitter).expect("valid normal");
        for pi in 0..p {
            for ki in 0..k {
                let offset = normal.sample(&mut rng);
                alpha_hat
                    .index_axis_mut(Axis(1), pi)
                    .column_mut(ki)
                    .fill(mu0[ki] + offset);
            }
        }
    } else {
        for mut slice in alpha_hat.outer_iter_mut() {
            for mut row in slice.outer_iter_mut() {
                row.assign(&mu0);
            }
        }
    }
    Ok(GlobalState {
        lambda,
        delta: Array2::from_elem((corpus.num_authors(), p), config.omega),
        alpha_hat,
        alpha_var: Array3::from_elem((t_len, p, k), config.sigma0),
        sigma: Array1::from_elem(k, config.sigma),
        mu0,
        sigma0: Array1::from_elem(k, config.sigma0),
        step_count: 0,
    })
}

fn check_dims(corpus: &Corpus, config: &TrainConfig) -> Result<()> {
    if corpus.num_slices != config.num_slices {
        return Err(Error::Config(format!(
            "corpus has {} time slices but the configuration asks for {}",
            corpus.num_slices, config.num_slices
        )));
    }
    if corpus.vocab_size() == 0 {
        return Err(Error::Config("corpus vocabulary is empty".into()));
    }
    if corpus.num_authors() == 0 {
        return Err(Error::Config("corpus has no authors".into()));
    }
    Ok(())
}

fn check_compatible(corpus: &Corpus, state: &GlobalState) -> Result<()> {
    if corpus.vocab_size() != state.vocab_size()
        || corpus.num_authors() != state.num_authors()
        || corpus.num_slices != state.num_slices()
    {
        return Err(Error::Config(format!(
            "corpus dimensions (V={}, A={}, T={}) differ from the model (V={}, A={}, T={})",
            corpus.vocab_size(),
            corpus.num_authors(),
            corpus.num_slices,
            state.vocab_size(),
            state.num_authors(),
            state.num_slices()
        )));
    }
    Ok(())
}

/// Frozen global state plus what the predictive needs: a snapshot for the
/// E-step and the normalized topic-word matrix λ̂ (V × K, term-major).
pub struct Evaluator<'a> {
    snapshot: Snapshot<'a>,
    lambda_hat_by_term: Array2<f64>,
    estep: EStepConfig,
}

/// Totals of a held-out pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loglik: f64,
    pub words: u64,
    pub docs_skipped: u64,
    /// (log-likelihood, words) per time slice.
    pub per_slice: Vec<(f64, u64)>,
}

impl Evaluation {
    pub fn pwll(&self) -> Result<f64> {
        compute_pwll(self.loglik, self.words)
    }
}

impl<'a> Evaluator<'a> {
    pub fn new(globals: &'a GlobalState, estep: &EStepConfig) -> Result<Self> {
        let mut lambda_hat = globals.lambda.clone();
        for mut row in lambda_hat.rows_mut() {
            let total = row.sum();
            row /= total;
        }
        Ok(Evaluator {
            snapshot: Snapshot::new(globals)?,
            lambda_hat_by_term: lambda_hat.reversed_axes().as_standard_layout().into_owned(),
            estep: estep.clone(),
        })
    }

    /// Log-likelihood of the document's in-vocabulary words under the plug-in
    /// predictive Σ_k softmax(m)_k λ̂_{k,w}. `None` when the E-step skipped it.
    pub fn heldout_loglik(&self, doc: &Document) -> Result<Option<(f64, u64)>> {
        let v = self.lambda_hat_by_term.nrows() as u32;
        let filtered;
        let doc = if doc.terms.iter().any(|&(w, _)| w >= v) {
            filtered = Document {
                terms: doc.terms.iter().copied().filter(|&(w, _)| w < v).collect(),
                ..doc.clone()
            };
            &filtered
        } else {
            doc
        };
        let state = match infer_document(doc, &self.snapshot, &self.estep)? {
            DocOutcome::Converged { state, .. } => state,
            DocOutcome::Skipped(_) => return Ok(None),
        };
        let mut weights = state.gamma.m;
        crate::mathkit::softmax_in_place(&mut weights);
        let mut loglik = 0.0;
        for &(w, c) in &doc.terms {
            let p: f64 = self
                .lambda_hat_by_term
                .row(w as usize)
                .iter()
                .zip(&weights)
                .map(|(l, s)| l * s)
                .sum();
            loglik += c as f64 * p.ln();
        }
        Ok(Some((loglik, doc.num_words())))
    }

    /// Held-out pass over a corpus, in parallel on the current rayon pool
    /// with an order-fixed reduction.
    pub fn evaluate(&self, corpus: &Corpus) -> Result<Evaluation> {
        let mut eval = Evaluation {
            loglik: 0.0,
            words: 0,
            docs_skipped: 0,
            per_slice: vec![(0.0, 0); corpus.num_slices],
        };
        for chunk in corpus.documents.chunks(CHUNK) {
            let results: Vec<Result<Option<(f64, u64)>>> =
                chunk.par_iter().map(|d| self.heldout_loglik(d)).collect();
            for (doc, r) in chunk.iter().zip(results) {
                match r? {
                    Some((ll, n)) => {
                        eval.loglik += ll;
                        eval.words += n;
                        let slot = &mut eval.per_slice[doc.slice];
                        slot.0 += ll;
                        slot.1 += n;
                    }
                    None => eval.docs_skipped += 1,
                }
            }
        }
        Ok(eval)
    }
}

/// Convenience wrapper building a one-off [`Evaluator`].
pub fn heldout_loglik(
    doc: &Document,
    globals: &GlobalState,
    estep: &EStepConfig,
) -> Result<Option<(f64, u64)>> {
    Evaluator::new(globals, estep)?.heldout_loglik(doc)
}

/// PWLL of `test` under add-one smoothed word frequencies of `train`.
pub fn unigram_pwll(train: &Corpus, test: &Corpus) -> Result<f64> {
    let v = train.vocab_size();
    let mut counts = vec![1.0; v];
    for doc in &train.documents {
        for &(w, c) in &doc.terms {
            counts[w as usize] += c as f64;
        }
    }
    let total: f64 = counts.iter().sum();
    let mut loglik = 0.0;
    let mut words = 0;
    for doc in &test.documents {
        for &(w, c) in &doc.terms {
            if (w as usize) < v {
                loglik += c as f64 * (counts[w as usize] / total).ln();
                words += c as u64;
            }
        }
    }
    compute_pwll(loglik, words)
}

fn thread_pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Shuffled mini-batches for one epoch; each batch is in ascending document
/// order so that statistics are accumulated in a fixed order.
fn epoch_batches(n_docs: usize, batch: BatchSize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    match batch {
        BatchSize::Full => vec![(0..n_docs).collect()],
        BatchSize::Size(size) if size >= n_docs => vec![(0..n_docs).collect()],
        BatchSize::Size(size) => {
            let mut order: Vec<usize> = (0..n_docs).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(epoch as u64);
            order.shuffle(&mut rng);
            order
                .chunks(size)
                .map(|c| {
                    let mut c = c.to_vec();
                    c.sort_unstable();
                    c
                })
                .collect()
        }
    }
}

/// E-step over one batch against a frozen snapshot. Returns the statistics
/// and the number of skipped documents.
fn batch_statistics(
    corpus: &Corpus,
    batch: &[usize],
    state: &GlobalState,
    estep: &EStepConfig,
) -> Result<(SufficientStats, u64)> {
    let snapshot = Snapshot::new(state)?;
    let mut stats = SufficientStats::for_state(state, corpus.len() as u64);
    let mut skipped = 0;
    for chunk in batch.chunks(CHUNK) {
        let outcomes: Vec<Result<DocOutcome>> = chunk
            .par_iter()
            .map(|&i| infer_document(&corpus.documents[i], &snapshot, estep))
            .collect();
        for (&i, outcome) in chunk.iter().zip(outcomes) {
            match outcome? {
                DocOutcome::Converged { state, .. } => {
                    stats.add_document(&corpus.documents[i], &state)
                }
                DocOutcome::Skipped(reason) => {
                    log::debug!(
                        "skipped document {}: {reason:?}",
                        corpus.documents[i].doc_id
                    );
                    skipped += 1;
                }
            }
        }
    }
    Ok((stats, skipped))
}

fn streak(records: &[EpochRecord], tol: f64) -> usize {
    records
        .windows(2)
        .rev()
        .take_while(|w| (w[1].train_pwll - w[0].train_pwll).abs() < tol)
        .count()
}

/// Trains from a fresh initialization. See [`train_with`].
pub fn train(
    train: &Corpus,
    test: Option<&Corpus>,
    config: &TrainConfig,
) -> Result<(GlobalState, TrainReport)> {
    train_with(train, test, config, None, &mut |_| Ok(()))
}

/// Trains, optionally resuming from a checkpoint, and hands a checkpoint to
/// `on_epoch` after every completed epoch.
///
/// Each epoch shuffles the training documents (seeded by the config seed and
/// the epoch number), runs the E-step and one global update per mini-batch,
/// then evaluates train and test PWLL. Training stops after `max_epochs` or
/// once |Δ train PWLL| < `epoch_tol` for three consecutive epochs.
pub fn train_with(
    train: &Corpus,
    test: Option<&Corpus>,
    config: &TrainConfig,
    resume: Option<Checkpoint>,
    on_epoch: &mut dyn FnMut(&Checkpoint) -> Result<()>,
) -> Result<(GlobalState, TrainReport)> {
    config.validate()?;
    check_dims(train, config)?;
    if train.is_empty() {
        return Err(Error::Data("training corpus has no documents".into()));
    }
    let hash = config.hash();
    let (mut state, mut records) = match resume {
        Some(cp) => {
            if cp.config_hash != hash {
                return Err(Error::Config(
                    "checkpoint was produced with a different configuration".into(),
                ));
            }
            (cp.state, cp.records)
        }
        None => (init_state(train, config, config.seed)?, Vec::new()),
    };
    if state.num_topics() != config.num_topics || state.num_personas() != config.num_personas {
        return Err(Error::Config(
            "checkpoint dimensions differ from the configuration".into(),
        ));
    }
    check_compatible(train, &state)?;
    if let Some(test) = test {
        check_compatible(test, &state)?;
    }

    let estep = config.estep();
    let schedule = config.schedule();
    let pool = thread_pool(config.workers)?;
    let started = Instant::now();
    let mut converged = streak(&records, config.epoch_tol) >= STOP_STREAK;

    while !converged && records.len() < config.max_epochs {
        let epoch = records.len() + 1;
        let mut skipped_total = 0;
        for (b, batch) in epoch_batches(train.len(), config.batch_size, config.seed, epoch)
            .iter()
            .enumerate()
        {
            let (stats, skipped) =
                pool.install(|| batch_statistics(train, batch, &state, &estep))?;
            if stats.batch_doc_count == 0 {
                return Err(Error::Aborted(format!(
                    "epoch {epoch}, batch {b}: all {} documents were skipped by the E-step \
                     (empty or numerically divergent); check the corpus and priors",
                    batch.len()
                )));
            }
            skipped_total += skipped;
            m_step(&mut state, &stats, &schedule)?;
        }
        debug_assert!(
            state.check_invariants(config.eta, config.omega).is_ok(),
            "epoch {epoch}: {:?}",
            state.check_invariants(config.eta, config.omega)
        );

        let (train_eval, test_eval) = pool.install(|| -> Result<_> {
            let evaluator = Evaluator::new(&state, &estep)?;
            let train_eval = evaluator.evaluate(train)?;
            let test_eval = test.map(|t| evaluator.evaluate(t)).transpose()?;
            Ok((train_eval, test_eval))
        })?;
        let test_pwll = match test_eval {
            Some(e) if e.words > 0 => Some(e.pwll()?),
            _ => None,
        };
        records.push(EpochRecord {
            epoch,
            train_pwll: train_eval.pwll()?,
            test_pwll,
            docs_skipped: skipped_total,
            step_count: state.step_count,
            seconds: started.elapsed().as_secs_f64(),
        });
        log::info!(
            "epoch {epoch}: train pwll {:.5}, test pwll {}",
            records[epoch - 1].train_pwll,
            test_pwll.map_or("NA".into(), |x| format!("{x:.5}"))
        );
        converged = streak(&records, config.epoch_tol) >= STOP_STREAK;
        on_epoch(&Checkpoint {
            config_hash: hash.clone(),
            state: state.clone(),
            records: records.clone(),
        })?;
    }
    Ok((state, TrainReport { records, converged }))
}

/// Posterior document states for every document of a corpus under frozen
/// globals, in corpus order. Skipped documents yield `None`.
pub fn infer_corpus(
    corpus: &Corpus,
    globals: &GlobalState,
    estep: &EStepConfig,
) -> Result<Vec<Option<crate::estep::DocState>>> {
    check_compatible(corpus, globals)?;
    let snapshot = Snapshot::new(globals)?;
    corpus
        .documents
        .par_iter()
        .map(|d| Ok(infer_document(d, &snapshot, estep)?.state().cloned()))
        .collect()
}
