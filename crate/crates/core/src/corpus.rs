//! Multi-author, time-sliced bag-of-words corpora.
//!
//! Two on-disk formats are supported:
//!
//! * `jsonl`: one JSON object per line with `author`, either `time` (a raw
//!   timestamp, discretized at load) or `slice` (a pre-computed slice index),
//!   and either `tokens` (a list of terms) or `counts` (a term → count map).
//!   `id` is optional and defaults to the zero-based line number.
//! * `counts`: `author_idx time_slice M idx1:cnt1 ... idxM:cntM` per line,
//!   with a sidecar vocabulary file holding one term per line.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use crate::error::{Error, Result};

/// A document as a sparse word-count vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: u64,
    pub author: usize,
    pub slice: usize,
    /// `(vocab index, count)` pairs, sorted by index, indices unique, counts ≥ 1.
    pub terms: Vec<(u32, u32)>,
}

impl Document {
    pub fn num_words(&self) -> u64 {
        self.terms.iter().map(|&(_, c)| c as u64).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    /// Author names; the position is the dense author index.
    pub authors: Vec<String>,
    pub num_slices: usize,
    pub vocab: Vec<String>,
    pub docs_per_slice: Vec<usize>,
}

impl Corpus {
    /// Validates the documents and orders them by `(slice, doc_id)`.
    pub fn new(
        mut documents: Vec<Document>,
        authors: Vec<String>,
        num_slices: usize,
        vocab: Vec<String>,
    ) -> Result<Corpus> {
        if num_slices == 0 {
            return Err(Error::Config(
                "number of time slices must be at least 1".into(),
            ));
        }
        let v = vocab.len();
        for doc in &mut documents {
            if doc.author >= authors.len() {
                return Err(Error::Data(format!(
                    "document {} has author index {} but only {} authors exist",
                    doc.doc_id,
                    doc.author,
                    authors.len()
                )));
            }
            if doc.slice >= num_slices {
                return Err(Error::Data(format!(
                    "document {} has slice {} outside [0, {num_slices})",
                    doc.doc_id, doc.slice
                )));
            }
            doc.terms.sort_unstable_by_key(|&(idx, _)| idx);
            if doc.terms.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::Data(format!(
                    "document {} repeats a term index",
                    doc.doc_id
                )));
            }
            if let Some(&(idx, c)) = doc
                .terms
                .iter()
                .find(|&&(idx, c)| idx as usize >= v || c == 0)
            {
                return Err(Error::Data(format!(
                    "document {} has invalid entry {idx}:{c} (vocabulary size {v})",
                    doc.doc_id
                )));
            }
            if doc.terms.is_empty() {
                return Err(Error::Data(format!("document {} is empty", doc.doc_id)));
            }
        }
        documents.sort_by_key(|d| (d.slice, d.doc_id));
        let mut docs_per_slice = vec![0; num_slices];
        for doc in &documents {
            docs_per_slice[doc.slice] += 1;
        }
        Ok(Corpus {
            documents,
            authors,
            num_slices,
            vocab,
            docs_per_slice,
        })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn num_authors(&self) -> usize {
        self.authors.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn total_words(&self) -> u64 {
        self.documents.iter().map(Document::num_words).sum()
    }

    /// Copy of this corpus restricted to the given document positions.
    fn subset(&self, positions: &[usize]) -> Corpus {
        let documents: Vec<Document> = positions
            .iter()
            .map(|&i| self.documents[i].clone())
            .collect();
        let mut docs_per_slice = vec![0; self.num_slices];
        for doc in &documents {
            docs_per_slice[doc.slice] += 1;
        }
        Corpus {
            documents,
            authors: self.authors.clone(),
            num_slices: self.num_slices,
            vocab: self.vocab.clone(),
            docs_per_slice,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    Counts,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "counts" => Ok(CorpusFormat::Counts),
            other => Err(Error::Config(format!("unknown corpus format {other:?}"))),
        }
    }
}

impl std::fmt::Display for CorpusFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CorpusFormat::Jsonl => "jsonl",
            CorpusFormat::Counts => "counts",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeMode {
    /// Time since the author's first document.
    #[default]
    RelativeToAuthorFirst,
    Absolute,
}

impl std::str::FromStr for TimeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relative" | "relative_to_author_first" => Ok(TimeMode::RelativeToAuthorFirst),
            "absolute" => Ok(TimeMode::Absolute),
            other => Err(Error::Config(format!("unknown time mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for TimeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TimeMode::RelativeToAuthorFirst => "relative",
            TimeMode::Absolute => "absolute",
        })
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub format: CorpusFormat,
    /// Number of slices. Required when records carry raw `time`; otherwise
    /// defaults to one past the largest slice seen.
    pub num_slices: Option<usize>,
    pub time_mode: TimeMode,
    /// Fixed vocabulary (e.g. the training vocabulary when loading test data).
    /// Tokens outside it are dropped and counted in the report.
    pub vocab: Option<Vec<String>>,
    /// Sidecar vocabulary file for the counts format.
    pub vocab_path: Option<PathBuf>,
    /// Fixed author list; any other author is rejected.
    pub authors: Option<Vec<String>>,
    pub min_count: u64,
    pub max_fraction: f64,
}

impl LoadOptions {
    pub fn new(format: CorpusFormat) -> Self {
        LoadOptions {
            format,
            num_slices: None,
            time_mode: TimeMode::default(),
            vocab: None,
            vocab_path: None,
            authors: None,
            min_count: 1,
            max_fraction: 1.0,
        }
    }
}

/// Things the loader changed or dropped on the way in.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub documents: usize,
    /// Documents whose slice exceeded the configured range and were clamped to the last slice.
    pub clamped_slices: usize,
    pub dropped_oov_tokens: u64,
    /// Documents left with no in-vocabulary words.
    pub dropped_empty_docs: usize,
}

/// Loads and validates a corpus.
pub fn load_corpus(path: impl AsRef<Path>, options: &LoadOptions) -> Result<(Corpus, LoadReport)> {
    let path = path.as_ref();
    let raw = match options.format {
        CorpusFormat::Jsonl => read_jsonl(path)?,
        CorpusFormat::Counts => read_counts(path, options)?,
    };
    assemble(raw, options)
}

enum RawBody {
    Tokens(Vec<String>),
    Counts(Vec<(String, u64)>),
    Indexed(Vec<(u32, u32)>),
}

enum RawTime {
    Time(f64),
    Slice(usize),
}

struct RawRecord {
    line: usize,
    id: Option<u64>,
    author: String,
    time: RawTime,
    body: RawBody,
}

struct RawCorpus {
    path: PathBuf,
    records: Vec<RawRecord>,
    /// Present for the counts format.
    vocab: Option<Vec<String>>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn read_jsonl(path: &Path) -> Result<RawCorpus> {
    let schema = |line: usize, message: String| Error::Schema {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut records = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message: e.to_string(),
        })?;
        let obj = value
            .as_object()
            .ok_or_else(|| schema(lineno, "record is not a JSON object".into()))?;

        let id =
            match obj.get("id") {
                None => None,
                Some(v) => Some(v.as_u64().ok_or_else(|| {
                    schema(lineno, "\"id\" must be a non-negative integer".into())
                })?),
            };
        let author = match obj.get("author") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) if n.is_u64() => n.to_string(),
            Some(_) => return Err(schema(lineno, "\"author\" must be a string".into())),
            None => return Err(schema(lineno, "missing \"author\" field".into())),
        };
        let time =
            match (obj.get("time"), obj.get("slice")) {
                (Some(_), Some(_)) => {
                    return Err(schema(
                        lineno,
                        "record has both \"time\" and \"slice\"".into(),
                    ))
                }
                (Some(t), None) => RawTime::Time(
                    t.as_f64()
                        .filter(|t| t.is_finite())
                        .ok_or_else(|| schema(lineno, "\"time\" must be a finite number".into()))?,
                ),
                (None, Some(s)) => RawTime::Slice(s.as_u64().ok_or_else(|| {
                    schema(lineno, "\"slice\" must be a non-negative integer".into())
                })? as usize),
                (None, None) => return Err(schema(lineno, "missing \"time\" field".into())),
            };
        let body = match (obj.get("tokens"), obj.get("counts")) {
            (Some(Value::Array(tokens)), None) => RawBody::Tokens(
                tokens
                    .iter()
                    .map(|t| t.as_str().map(str::to_owned))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| schema(lineno, "\"tokens\" must be a list of strings".into()))?,
            ),
            (None, Some(Value::Object(counts))) => RawBody::Counts(
                counts
                    .iter()
                    .map(|(term, c)| c.as_u64().filter(|c| *c > 0).map(|c| (term.clone(), c)))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| {
                        schema(lineno, "\"counts\" values must be positive integers".into())
                    })?,
            ),
            (None, None) => {
                return Err(schema(
                    lineno,
                    "missing \"tokens\" or \"counts\" field".into(),
                ))
            }
            _ => {
                return Err(schema(
                    lineno,
                    "expected exactly one of \"tokens\" (list) or \"counts\" (object)".into(),
                ))
            }
        };
        records.push(RawRecord {
            line: lineno,
            id,
            author,
            time,
            body,
        });
    }
    Ok(RawCorpus {
        path: path.to_path_buf(),
        records,
        vocab: None,
    })
}

/// Reads a vocabulary file: one term per line, line number = index.
pub fn read_vocab(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let mut vocab = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let term = line.map_err(|e| Error::io(path, e))?;
        if !seen.insert(term.clone()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("duplicate vocabulary term {term:?}"),
            });
        }
        vocab.push(term);
    }
    Ok(vocab)
}

pub fn write_vocab(vocab: &[String], path: impl AsRef<Path>) -> Result<()> {
    write_lines(path.as_ref(), vocab.iter().map(String::as_str))
}

fn write_lines<'a>(path: &Path, lines: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for line in lines {
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn read_counts(path: &Path, options: &LoadOptions) -> Result<RawCorpus> {
    let vocab = match (&options.vocab_path, &options.vocab) {
        (Some(vp), _) => read_vocab(vp)?,
        (None, Some(v)) => v.clone(),
        (None, None) => {
            return Err(Error::Config(
                "counts format requires a vocabulary file".into(),
            ))
        }
    };
    let parse = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut records = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_ascii_whitespace();
        let mut next_int = |what: &str| -> Result<u64> {
            fields
                .next()
                .ok_or_else(|| parse(lineno, format!("missing {what}")))?
                .parse::<u64>()
                .map_err(|e| parse(lineno, format!("bad {what}: {e}")))
        };
        let author = next_int("author index")?;
        let slice = next_int("time slice")? as usize;
        let m = next_int("term count")? as usize;
        let pairs = fields
            .map(|f| {
                let (idx, cnt) = f
                    .split_once(':')
                    .ok_or_else(|| parse(lineno, format!("expected idx:count, got {f:?}")))?;
                let idx: u32 = idx
                    .parse()
                    .map_err(|e| parse(lineno, format!("bad index {idx:?}: {e}")))?;
                let cnt: u32 = cnt
                    .parse()
                    .map_err(|e| parse(lineno, format!("bad count {cnt:?}: {e}")))?;
                if cnt == 0 {
                    return Err(parse(lineno, "counts must be positive".into()));
                }
                if idx as usize >= vocab.len() {
                    return Err(parse(
                        lineno,
                        format!(
                            "term index {idx} outside vocabulary of size {}",
                            vocab.len()
                        ),
                    ));
                }
                Ok((idx, cnt))
            })
            .collect::<Result<Vec<_>>>()?;
        if pairs.len() != m {
            return Err(parse(
                lineno,
                format!("declared {m} terms but found {}", pairs.len()),
            ));
        }
        let mut seen = HashSet::with_capacity(pairs.len());
        if let Some((idx, _)) = pairs.iter().find(|(idx, _)| !seen.insert(*idx)) {
            return Err(parse(lineno, format!("term index {idx} repeated")));
        }
        records.push(RawRecord {
            line: lineno,
            id: None,
            author: author.to_string(),
            time: RawTime::Slice(slice),
            body: RawBody::Indexed(pairs),
        });
    }
    Ok(RawCorpus {
        path: path.to_path_buf(),
        records,
        vocab: Some(vocab),
    })
}

fn assemble(raw: RawCorpus, options: &LoadOptions) -> Result<(Corpus, LoadReport)> {
    let RawCorpus {
        path,
        records,
        vocab: file_vocab,
    } = raw;
    if records.is_empty() {
        return Err(Error::Data(format!("{}: corpus is empty", path.display())));
    }

    // Authors: either fixed or dense, sorted (numerically when all names are integers).
    let authors: Vec<String> = match &options.authors {
        Some(a) => a.clone(),
        None => {
            let mut names: Vec<String> = records
                .iter()
                .map(|r| r.author.clone())
                .collect::<HashSet<_>>()
                .into_iter()
                .collect();
            if names.iter().all(|n| n.parse::<u64>().is_ok()) {
                names.sort_by_key(|n| n.parse::<u64>().unwrap_or(u64::MAX));
            } else {
                names.sort();
            }
            names
        }
    };
    let author_index: HashMap<&str, usize> = authors
        .iter()
        .enumerate()
        .map(|(i, a)| (a.as_str(), i))
        .collect();
    let mut author_of = Vec::with_capacity(records.len());
    for r in &records {
        match author_index.get(r.author.as_str()) {
            Some(&a) => author_of.push(a),
            None => {
                return Err(Error::Data(format!(
                    "{}:{}: author {:?} has no training documents",
                    path.display(),
                    r.line,
                    r.author
                )))
            }
        }
    }

    // Time slices.
    let mut report = LoadReport::default();
    let has_raw = records.iter().any(|r| matches!(r.time, RawTime::Time(_)));
    let has_slice = records.iter().any(|r| matches!(r.time, RawTime::Slice(_)));
    if has_raw && has_slice {
        return Err(Error::Schema {
            path,
            line: 1,
            message: "records mix raw \"time\" and pre-computed \"slice\" fields".into(),
        });
    }
    let (num_slices, mut slices) = if has_raw {
        let t = options.num_slices.ok_or_else(|| {
            Error::Config("number of time slices is required to discretize raw times".into())
        })?;
        let times: Vec<f64> = records
            .iter()
            .map(|r| match r.time {
                RawTime::Time(t) => t,
                RawTime::Slice(s) => s as f64,
            })
            .collect();
        (
            t,
            discretize_time(&times, &author_of, t, options.time_mode)?,
        )
    } else {
        let given: Vec<usize> = records
            .iter()
            .map(|r| match r.time {
                RawTime::Slice(s) => s,
                RawTime::Time(_) => 0,
            })
            .collect();
        let t = options
            .num_slices
            .unwrap_or_else(|| given.iter().copied().max().unwrap_or(0) + 1);
        if t == 0 {
            return Err(Error::Config(
                "number of time slices must be at least 1".into(),
            ));
        }
        (t, given)
    };
    for s in &mut slices {
        if *s >= num_slices {
            *s = num_slices - 1;
            report.clamped_slices += 1;
        }
    }

    // Vocabulary.
    let vocab: Vec<String> = match (&options.vocab, file_vocab) {
        (_, Some(v)) => v,
        (Some(v), None) => v.clone(),
        (None, None) => {
            let docs = records.iter().map(|r| match &r.body {
                RawBody::Tokens(t) => t.iter().map(|s| (s.as_str(), 1u64)).collect::<Vec<_>>(),
                RawBody::Counts(c) => c.iter().map(|(s, n)| (s.as_str(), *n)).collect(),
                RawBody::Indexed(_) => Vec::new(),
            });
            build_vocab_weighted(docs, options.min_count, options.max_fraction)?
        }
    };
    let term_index: HashMap<&str, u32> = vocab
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i as u32))
        .collect();

    let mut documents = Vec::with_capacity(records.len());
    for (pos, r) in records.iter().enumerate() {
        let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
        let mut add = |term: &str, n: u64| match term_index.get(term) {
            Some(&idx) => *counts.entry(idx).or_default() += n,
            None => report.dropped_oov_tokens += n,
        };
        match &r.body {
            RawBody::Tokens(tokens) => tokens.iter().for_each(|t| add(t, 1)),
            RawBody::Counts(c) => c.iter().for_each(|(t, n)| add(t, *n)),
            RawBody::Indexed(pairs) => {
                for &(idx, c) in pairs {
                    *counts.entry(idx).or_default() += c as u64;
                }
            }
        }
        if counts.is_empty() {
            report.dropped_empty_docs += 1;
            continue;
        }
        let terms = counts
            .into_iter()
            .map(|(i, c)| {
                u32::try_from(c).map(|c| (i, c)).map_err(|_| {
                    Error::Data(format!("{}:{}: count overflow", path.display(), r.line))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        documents.push(Document {
            doc_id: r.id.unwrap_or(pos as u64),
            author: author_of[pos],
            slice: slices[pos],
            terms,
        });
    }
    if documents.is_empty() {
        return Err(Error::Data(format!(
            "{}: no document has an in-vocabulary word",
            path.display()
        )));
    }
    report.documents = documents.len();
    let mut corpus = Corpus::new(documents, authors, num_slices, vocab)?;
    if matches!(options.format, CorpusFormat::Counts) {
        // The counts format carries no ids: number documents in canonical order.
        for (i, doc) in corpus.documents.iter_mut().enumerate() {
            doc.doc_id = i as u64;
        }
    }
    Ok((corpus, report))
}

/// Writes the corpus as jsonl with pre-computed slices and term counts.
pub fn save_jsonl(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let lines = corpus
        .documents
        .iter()
        .map(|doc| {
            let counts: serde_json::Map<String, Value> = doc
                .terms
                .iter()
                .map(|&(idx, c)| (corpus.vocab[idx as usize].clone(), Value::from(c)))
                .collect();
            serde_json::json!({
                "id": doc.doc_id,
                "author": corpus.authors[doc.author],
                "slice": doc.slice,
                "counts": counts,
            })
            .to_string()
        })
        .collect::<Vec<_>>();
    write_lines(path, lines.iter().map(String::as_str))
}

/// Writes the corpus in the counts format plus its vocabulary sidecar.
pub fn save_counts(
    corpus: &Corpus,
    path: impl AsRef<Path>,
    vocab_path: impl AsRef<Path>,
) -> Result<()> {
    let lines = corpus
        .documents
        .iter()
        .map(|doc| {
            let mut line = format!("{} {} {}", doc.author, doc.slice, doc.terms.len());
            for (idx, c) in &doc.terms {
                line.push_str(&format!(" {idx}:{c}"));
            }
            line
        })
        .collect::<Vec<_>>();
    write_lines(path.as_ref(), lines.iter().map(String::as_str))?;
    write_vocab(&corpus.vocab, vocab_path)
}

/// Maps raw document times onto `num_slices` equal-width bins spanning the
/// observed range. In relative mode each author's earliest time is first
/// subtracted from that author's documents.
pub fn discretize_time(
    raw_times: &[f64],
    authors: &[usize],
    num_slices: usize,
    mode: TimeMode,
) -> Result<Vec<usize>> {
    if num_slices == 0 {
        return Err(Error::Config(
            "number of time slices must be at least 1".into(),
        ));
    }
    if raw_times.len() != authors.len() {
        return Err(Error::Dimension(format!(
            "{} times but {} author labels",
            raw_times.len(),
            authors.len()
        )));
    }
    if let Some(t) = raw_times.iter().find(|t| !t.is_finite()) {
        return Err(Error::Domain(format!("time {t} is not finite")));
    }
    let times: Vec<f64> = match mode {
        TimeMode::Absolute => raw_times.to_vec(),
        TimeMode::RelativeToAuthorFirst => {
            let mut first: HashMap<usize, f64> = HashMap::new();
            for (&t, &a) in raw_times.iter().zip(authors) {
                let e = first.entry(a).or_insert(t);
                *e = e.min(t);
            }
            raw_times
                .iter()
                .zip(authors)
                .map(|(t, a)| t - first[a])
                .collect()
        }
    };
    let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = hi - lo;
    Ok(times
        .iter()
        .map(|&t| {
            if !(width > 0.0) {
                0
            } else {
                (((t - lo) / width * num_slices as f64).floor() as usize).min(num_slices - 1)
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
}

/// Per-author stratified split. Each author sends `round(fraction · n)` of
/// their documents to the test side, but always keeps at least one in train.
pub fn split_train_test(corpus: &Corpus, spec: &SplitSpec) -> Result<(Corpus, Corpus)> {
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction must lie in (0, 1), got {}",
            spec.test_fraction
        )));
    }
    let mut by_author: Vec<Vec<usize>> = vec![Vec::new(); corpus.num_authors()];
    for (pos, doc) in corpus.documents.iter().enumerate() {
        by_author[doc.author].push(pos);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut is_test = vec![false; corpus.len()];
    for docs in &mut by_author {
        let n = docs.len();
        let n_test = ((spec.test_fraction * n as f64).round() as usize).min(n.saturating_sub(1));
        docs.shuffle(&mut rng);
        for &pos in &docs[..n_test] {
            is_test[pos] = true;
        }
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..corpus.len()).partition(|&i| is_test[i]);
    Ok((corpus.subset(&train), corpus.subset(&test)))
}

/// Builds a vocabulary from tokenized documents: keeps terms with total
/// count ≥ `min_count` that occur in at most `max_fraction` of documents,
/// ordered by descending count and then lexicographically.
pub fn build_vocab<I, D, S>(docs: I, min_count: u64, max_fraction: f64) -> Result<Vec<String>>
where
    I: IntoIterator<Item = D>,
    D: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let docs: Vec<Vec<(String, u64)>> = docs
        .into_iter()
        .map(|d| d.into_iter().map(|t| (t.as_ref().to_owned(), 1)).collect())
        .collect();
    build_vocab_weighted(
        docs.iter()
            .map(|d| d.iter().map(|(t, n)| (t.as_str(), *n)).collect::<Vec<_>>()),
        min_count,
        max_fraction,
    )
}

fn build_vocab_weighted<'a, I>(docs: I, min_count: u64, max_fraction: f64) -> Result<Vec<String>>
where
    I: IntoIterator<Item = Vec<(&'a str, u64)>>,
{
    let mut count: HashMap<&str, u64> = HashMap::new();
    let mut doc_freq: HashMap<&str, u64> = HashMap::new();
    let mut num_docs = 0u64;
    for doc in docs {
        num_docs += 1;
        let mut seen = HashSet::new();
        for (term, n) in doc {
            *count.entry(term).or_default() += n;
            if seen.insert(term) {
                *doc_freq.entry(term).or_default() += 1;
            }
        }
    }
    if num_docs == 0 {
        return Err(Error::Data(
            "cannot build a vocabulary from no documents".into(),
        ));
    }
    let max_df = max_fraction * num_docs as f64;
    let mut kept: Vec<(&str, u64)> = count
        .into_iter()
        .filter(|(term, c)| *c >= min_count && doc_freq[term] as f64 <= max_df)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    if kept.is_empty() {
        return Err(Error::Data(
            "vocabulary is empty after frequency filtering".into(),
        ));
    }
    Ok(kept.into_iter().map(|(t, _)| t.to_owned()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_tmp(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        let mut f = File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    fn doc(id: u64, author: usize, slice: usize, terms: &[(u32, u32)]) -> Document {
        Document {
            doc_id: id,
            author,
            slice,
            terms: terms.to_vec(),
        }
    }

    #[test]
    fn load_two_line_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(
            &dir,
            "c.jsonl",
            "{\"id\": 1, \"author\": \"b\", \"time\": 3.0, \"tokens\": [\"x\", \"y\", \"x\"]}\n\
             {\"id\": 2, \"author\": \"a\", \"time\": 3.0, \"tokens\": [\"y\"]}\n",
        );
        let mut opts = LoadOptions::new(CorpusFormat::Jsonl);
        opts.num_slices = Some(1);
        let (c, report) = load_corpus(&p, &opts).unwrap();
        assert_eq!(c.num_authors(), 2);
        assert_eq!(c.num_slices, 1);
        assert_eq!(c.authors, vec!["a", "b"]);
        // x and y both occur twice; tie broken lexicographically.
        assert_eq!(c.vocab, vec!["x", "y"]);
        assert_eq!(c.documents[0].terms, vec![(0, 2), (1, 1)]);
        assert_eq!(c.documents[0].author, 1);
        assert_eq!(c.docs_per_slice, vec![2]);
        assert_eq!(report.documents, 2);
    }

    #[test]
    fn missing_author_is_schema_error_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(
            &dir,
            "c.jsonl",
            "{\"author\": \"a\", \"time\": 0, \"tokens\": [\"x\"]}\n{\"time\": 1, \"tokens\": [\"x\"]}\n",
        );
        let mut opts = LoadOptions::new(CorpusFormat::Jsonl);
        opts.num_slices = Some(2);
        match load_corpus(&p, &opts) {
            Err(Error::Schema { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("author"));
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_json_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(
            &dir,
            "c.jsonl",
            "{\"author\": \"a\", \"slice\": 0, \"tokens\": [\"x\"]}\n{oops\n",
        );
        let err = load_corpus(&p, &LoadOptions::new(CorpusFormat::Jsonl)).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn duplicate_vocab_term_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = write_tmp(&dir, "vocab.txt", "apple\npear\napple\n");
        let p = write_tmp(&dir, "c.txt", "0 0 1 0:2\n");
        let mut opts = LoadOptions::new(CorpusFormat::Counts);
        opts.vocab_path = Some(vocab);
        let err = load_corpus(&p, &opts).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn counts_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = write_tmp(&dir, "vocab.txt", "a\nb\n");
        let mut opts = LoadOptions::new(CorpusFormat::Counts);
        opts.vocab_path = Some(vocab);
        for (body, line) in [
            ("0 0 2 0:1\n", 1),
            ("0 0 1 0:1\n0 0 1 5:1\n", 2),
            ("0 0 2 0:1 0:2\n", 1),
            ("0 0 1 0:0\n", 1),
            ("0 x 1 0:1\n", 1),
        ] {
            let p = write_tmp(&dir, "c.txt", body);
            let err = load_corpus(&p, &opts).unwrap_err();
            assert!(
                matches!(err, Error::Parse { line: l, .. } if l == line),
                "{body:?}: {err:?}"
            );
        }
        let p = write_tmp(&dir, "empty.txt", "");
        assert!(matches!(load_corpus(&p, &opts), Err(Error::Data(_))));
    }

    #[test]
    fn slices_beyond_range_are_clamped_and_reported() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = write_tmp(&dir, "vocab.txt", "a\nb\n");
        let p = write_tmp(&dir, "c.txt", "0 0 1 0:1\n0 7 1 1:3\n");
        let mut opts = LoadOptions::new(CorpusFormat::Counts);
        opts.vocab_path = Some(vocab);
        opts.num_slices = Some(3);
        let (c, report) = load_corpus(&p, &opts).unwrap();
        assert_eq!(report.clamped_slices, 1);
        assert_eq!(c.documents[1].slice, 2);
        assert_eq!(c.docs_per_slice, vec![1, 0, 1]);
    }

    #[test]
    fn unknown_author_rejected_with_fixed_author_list() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(
            &dir,
            "t.jsonl",
            "{\"author\": \"zed\", \"slice\": 0, \"tokens\": [\"x\"]}\n",
        );
        let mut opts = LoadOptions::new(CorpusFormat::Jsonl);
        opts.authors = Some(vec!["a".into()]);
        opts.vocab = Some(vec!["x".into()]);
        assert!(matches!(load_corpus(&p, &opts), Err(Error::Data(_))));
    }

    #[test]
    fn fixed_vocab_drops_oov_and_empty_documents() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(
            &dir,
            "t.jsonl",
            "{\"author\": \"a\", \"slice\": 0, \"tokens\": [\"x\", \"q\"]}\n\
             {\"author\": \"a\", \"slice\": 0, \"tokens\": [\"q\", \"r\"]}\n",
        );
        let mut opts = LoadOptions::new(CorpusFormat::Jsonl);
        opts.vocab = Some(vec!["x".into()]);
        let (c, report) = load_corpus(&p, &opts).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(report.dropped_oov_tokens, 3);
        assert_eq!(report.dropped_empty_docs, 1);
    }

    #[test]
    fn discretize_examples() {
        let t = discretize_time(&[0.0, 10.0], &[0, 0], 2, TimeMode::Absolute).unwrap();
        assert_eq!(t, vec![0, 1]);
        let t = discretize_time(&[4.0, 4.0, 4.0], &[0, 1, 2], 5, TimeMode::Absolute).unwrap();
        assert_eq!(t, vec![0, 0, 0]);
        // Author 0 posts at days 5 and 12 → relative 0 and 7; author 1 spans 0..14.
        let t = discretize_time(
            &[5.0, 12.0, 100.0, 114.0],
            &[0, 0, 1, 1],
            2,
            TimeMode::RelativeToAuthorFirst,
        )
        .unwrap();
        assert_eq!(t, vec![0, 1, 0, 1]);
        let t = discretize_time(&[5.0, 12.0], &[0, 0], 7, TimeMode::RelativeToAuthorFirst).unwrap();
        assert_eq!(t, vec![0, 6]);
        assert!(matches!(
            discretize_time(&[1.0], &[0], 0, TimeMode::Absolute),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn split_examples() {
        let mut docs: Vec<Document> = (0..10).map(|i| doc(i, 0, 0, &[(0, 1)])).collect();
        docs.push(doc(10, 1, 0, &[(0, 2)]));
        let c = Corpus::new(docs, vec!["a".into(), "b".into()], 1, vec!["w".into()]).unwrap();
        let spec = SplitSpec {
            test_fraction: 0.1,
            seed: 7,
        };
        let (train, test) = split_train_test(&c, &spec).unwrap();
        assert_eq!(test.len(), 1);
        assert_eq!(test.documents[0].author, 0);
        assert_eq!(train.len(), 10);
        assert!(train.documents.iter().any(|d| d.author == 1));

        let (train2, test2) = split_train_test(&c, &spec).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);

        for bad in [0.0, 1.0, -0.2, 1.5] {
            let spec = SplitSpec {
                test_fraction: bad,
                seed: 0,
            };
            assert!(matches!(split_train_test(&c, &spec), Err(Error::Config(_))));
        }
    }

    #[test]
    fn vocab_filters_and_order() {
        let docs = vec![
            vec!["b", "a", "hapax"],
            vec!["b", "a", "common"],
            vec!["a", "b", "common"],
            vec!["c", "c", "common"],
            vec!["d", "d"],
        ];
        let v = build_vocab(docs.clone(), 2, 1.0).unwrap();
        assert_eq!(v, vec!["a", "b", "common", "c", "d"]);
        // "common" appears in 3/5 = 60% of documents.
        let v = build_vocab(docs.clone(), 2, 0.5).unwrap();
        assert!(!v.contains(&"common".to_string()));
        assert!(!v.contains(&"a".to_string()));
        assert_eq!(v, vec!["c", "d"]);
        assert!(build_vocab(docs, 100, 1.0).is_err());
    }

    fn arb_corpus() -> impl Strategy<Value = Corpus> {
        (1usize..4, 1usize..4, 2usize..8).prop_flat_map(|(a, t, v)| {
            prop::collection::vec(
                (
                    0..a,
                    0..t,
                    prop::collection::btree_map(0..v as u32, 1u32..5, 1..v),
                ),
                1..15,
            )
            .prop_map(move |raw| {
                let docs = raw
                    .into_iter()
                    .enumerate()
                    .map(|(i, (author, slice, terms))| {
                        doc(
                            i as u64,
                            author,
                            slice,
                            &terms.into_iter().collect::<Vec<_>>(),
                        )
                    })
                    .collect();
                Corpus::new(
                    docs,
                    (0..a).map(|i| i.to_string()).collect(),
                    t,
                    (0..v).map(|i| format!("w{i}")).collect(),
                )
                .unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn save_load_round_trip(c in arb_corpus()) {
            let dir = tempfile::tempdir().unwrap();

            let cp = dir.path().join("c.txt");
            let vp = dir.path().join("v.txt");
            save_counts(&c, &cp, &vp).unwrap();
            let mut opts = LoadOptions::new(CorpusFormat::Counts);
            opts.vocab_path = Some(vp);
            opts.num_slices = Some(c.num_slices);
            opts.authors = Some(c.authors.clone());
            let (once, _) = load_corpus(&cp, &opts).unwrap();
            save_counts(&once, &cp, dir.path().join("v2.txt")).unwrap();
            let (twice, _) = load_corpus(&cp, &opts).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(once.total_words(), c.total_words());

            let jp = dir.path().join("c.jsonl");
            save_jsonl(&once, &jp).unwrap();
            let mut opts = LoadOptions::new(CorpusFormat::Jsonl);
            opts.num_slices = Some(c.num_slices);
            opts.authors = Some(once.authors.clone());
            opts.vocab = Some(once.vocab.clone());
            let (from_json, _) = load_corpus(&jp, &opts).unwrap();
            prop_assert_eq!(&from_json, &once);
        }

        #[test]
        fn split_preserves_word_mass(c in arb_corpus(), frac in 0.05f64..0.95, seed in any::<u64>()) {
            let (train, test) = split_train_test(&c, &SplitSpec { test_fraction: frac, seed }).unwrap();
            prop_assert_eq!(train.total_words() + test.total_words(), c.total_words());
            prop_assert_eq!(train.len() + test.len(), c.len());
            for a in 0..c.num_authors() {
                let n = c.documents.iter().filter(|d| d.author == a).count();
                let in_train = train.documents.iter().filter(|d| d.author == a).count();
                if n >= 1 {
                    prop_assert!(in_train >= 1);
                }
            }
        }

        #[test]
        fn discretize_is_monotone(times in prop::collection::vec(-1e6f64..1e6, 1..50), t in 1usize..20) {
            let authors = vec![0; times.len()];
            for mode in [TimeMode::Absolute, TimeMode::RelativeToAuthorFirst] {
                let s = discretize_time(&times, &authors, t, mode).unwrap();
                for i in 0..times.len() {
                    prop_assert!(s[i] < t);
                    for j in 0..times.len() {
                        if times[i] <= times[j] {
                            prop_assert!(s[i] <= s[j]);
                        }
                    }
                }
            }
        }
    }
}
