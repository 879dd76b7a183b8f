//! Ancestral sampling from the generative model, plus label-switching
//! resolution for comparing fitted parameters against the truth.
//!
//! α_0 ~ N(μ0 + offset_p, Σ0), α_t ~ N(α_{t−1}, Σ), β_k ~ Dir(η),
//! κ_a ~ Dir(ω), x_d ~ Mult(κ_a), θ_d ~ N(α_{t,x_d}, Σ), z_n ~ Mult(σ(θ_d)),
//! w_n ~ Mult(β_{z_n}).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{s, Array1, Array2, Array3, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::corpus::{Corpus, Document};
use crate::error::{Error, Result};
use crate::mathkit::softmax_in_place;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_topics: usize,
    pub num_personas: usize,
    pub num_slices: usize,
    pub num_authors: usize,
    pub vocab_size: usize,
    /// Topic-word Dirichlet concentration.
    pub eta: f64,
    /// Author-persona Dirichlet concentration.
    pub omega: f64,
    pub mu0: f64,
    pub sigma0: f64,
    /// Random-walk and document-level variance.
    pub sigma: f64,
    pub docs_per_slice: usize,
    pub words_per_doc: usize,
    /// Per-persona offsets added to μ0 for α_0 (P × K).
    pub alpha_offsets: Option<Array2<f64>>,
    /// Fixed topics (K × V rows on the simplex) instead of Dirichlet draws.
    pub beta: Option<Array2<f64>>,
}

impl SynthConfig {
    /// Small, well-separated fixture: K=5, P=3, T=8, A=50, V=200,
    /// 250 documents per slice. Persona p carries +3 on its own block of
    /// topics and −3 elsewhere; Σ = 0.05.
    pub fn separable() -> Self {
        let (k, p) = (5, 3);
        SynthConfig {
            num_topics: k,
            num_personas: p,
            num_slices: 8,
            num_authors: 50,
            vocab_size: 200,
            eta: 0.05,
            omega: 0.1,
            mu0: 0.0,
            sigma0: 0.05,
            sigma: 0.05,
            docs_per_slice: 250,
            words_per_doc: 100,
            alpha_offsets: Some(block_offsets(k, p, 3.0)),
            beta: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.num_topics,
            self.num_personas,
            self.num_slices,
            self.num_authors,
            self.vocab_size,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(
                "synthetic dimensions must all be positive".into(),
            ));
        }
        if !(self.eta > 0.0 && self.omega > 0.0) {
            return Err(Error::Config("eta and omega must be positive".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma0 >= 0.0) {
            return Err(Error::Config("variances must be non-negative".into()));
        }
        if let Some(o) = &self.alpha_offsets {
            if o.dim() != (self.num_personas, self.num_topics) {
                return Err(Error::Dimension("alpha offsets must be P × K".into()));
            }
        }
        if let Some(b) = &self.beta {
            if b.dim() != (self.num_topics, self.vocab_size) {
                return Err(Error::Dimension("fixed beta must be K × V".into()));
            }
        }
        Ok(())
    }
}

/// +`magnitude` on persona p's contiguous block of topics, −`magnitude` elsewhere.
pub fn block_offsets(num_topics: usize, num_personas: usize, magnitude: f64) -> Array2<f64> {
    Array2::from_shape_fn((num_personas, num_topics), |(p, k)| {
        if k * num_personas / num_topics == p {
            magnitude
        } else {
            -magnitude
        }
    })
}

/// The latent variables behind a synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub beta: Array2<f64>,
    pub kappa: Array2<f64>,
    /// T × P × K.
    pub alpha: Array3<f64>,
    /// Persona of each document, in corpus order.
    pub personas: Vec<usize>,
    /// Topic of each token, in corpus order, grouped per document.
    pub topics: Vec<Vec<u16>>,
}

/// Index drawn by inverse CDF from one uniform variate.
fn sample_categorical<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn sample_dirichlet<R: Rng>(rng: &mut R, concentration: f64, n: usize) -> Result<Vec<f64>> {
    let gamma = Gamma::new(concentration, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    loop {
        let mut draw: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draw.iter().sum();
        // Tiny concentrations can underflow every component.
        if total > 0.0 {
            draw.iter_mut().for_each(|x| *x /= total);
            return Ok(draw);
        }
    }
}

fn normal<R: Rng>(rng: &mut R, mean: f64, var: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    mean + var.sqrt() * z
}

/// Samples a corpus and its latent variables. Deterministic per seed.
pub fn generate(config: &SynthConfig, seed: u64) -> Result<(Corpus, GroundTruth)> {
    config.validate()?;
    let (k, p, t_len, a_len, v) = (
        config.num_topics,
        config.num_personas,
        config.num_slices,
        config.num_authors,
        config.vocab_size,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let beta = match &config.beta {
        Some(b) => b.clone(),
        None => {
            let mut beta = Array2::zeros((k, v));
            for mut row in beta.rows_mut() {
                row.assign(&Array1::from(sample_dirichlet(&mut rng, config.eta, v)?));
            }
            beta
        }
    };
    let mut kappa = Array2::zeros((a_len, p));
    for mut row in kappa.rows_mut() {
        row.assign(&Array1::from(sample_dirichlet(&mut rng, config.omega, p)?));
    }
    let mut alpha = Array3::zeros((t_len, p, k));
    for pi in 0..p {
        for ki in 0..k {
            let offset = config.alpha_offsets.as_ref().map_or(0.0, |o| o[[pi, ki]]);
            let mut cur = normal(&mut rng, config.mu0 + offset, config.sigma0);
            alpha[[0, pi, ki]] = cur;
            for t in 1..t_len {
                cur = normal(&mut rng, cur, config.sigma);
                alpha[[t, pi, ki]] = cur;
            }
        }
    }

    let uniform_authors = vec![1.0 / a_len as f64; a_len];
    let mut documents = Vec::with_capacity(t_len * config.docs_per_slice);
    let mut personas = Vec::with_capacity(documents.capacity());
    let mut topics = Vec::with_capacity(documents.capacity());
    let mut theta = vec![0.0; k];
    let mut counts = vec![0u32; v];
    for t in 0..t_len {
        for _ in 0..config.docs_per_slice {
            let author = sample_categorical(&mut rng, &uniform_authors);
            let persona =
                sample_categorical(&mut rng, kappa.row(author).as_slice().expect("contiguous"));
            for (ki, th) in theta.iter_mut().enumerate() {
                *th = normal(&mut rng, alpha[[t, persona, ki]], config.sigma);
            }
            softmax_in_place(&mut theta);
            let mut z = Vec::with_capacity(config.words_per_doc);
            for _ in 0..config.words_per_doc {
                let topic = sample_categorical(&mut rng, &theta);
                let word =
                    sample_categorical(&mut rng, beta.row(topic).as_slice().expect("contiguous"));
                counts[word] += 1;
                z.push(topic as u16);
            }
            let terms: Vec<(u32, u32)> = counts
                .iter()
                .enumerate()
                .filter(|(_, c)| **c > 0)
                .map(|(w, c)| (w as u32, *c))
                .collect();
            counts.iter_mut().for_each(|c| *c = 0);
            documents.push(Document {
                doc_id: documents.len() as u64,
                author,
                slice: t,
                terms,
            });
            personas.push(persona);
            topics.push(z);
        }
    }
    let corpus = Corpus::new(
        documents,
        (0..a_len).map(|a| format!("author{a}")).collect(),
        t_len,
        (0..v).map(|w| format!("w{w}")).collect(),
    )?;
    Ok((
        corpus,
        GroundTruth {
            beta,
            kappa,
            alpha,
            personas,
            topics,
        },
    ))
}

/// Writes the ground truth as a line-based text file.
pub fn write_ground_truth(truth: &GroundTruth, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    let (t_len, p, k) = truth.alpha.dim();
    let row =
        |xs: &mut dyn Iterator<Item = f64>| xs.map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    writeln!(out, "ground-truth v1").map_err(io)?;
    writeln!(
        out,
        "dims {} {} {} {} {}",
        k,
        p,
        t_len,
        truth.beta.ncols(),
        truth.kappa.nrows()
    )
    .map_err(io)?;
    writeln!(out, "beta").map_err(io)?;
    for r in truth.beta.rows() {
        writeln!(out, "{}", row(&mut r.iter().copied())).map_err(io)?;
    }
    writeln!(out, "kappa").map_err(io)?;
    for r in truth.kappa.rows() {
        writeln!(out, "{}", row(&mut r.iter().copied())).map_err(io)?;
    }
    writeln!(out, "alpha").map_err(io)?;
    for t in 0..t_len {
        for pi in 0..p {
            writeln!(
                out,
                "{}",
                row(&mut truth.alpha.slice(s![t, pi, ..]).iter().copied())
            )
            .map_err(io)?;
        }
    }
    writeln!(out, "personas").map_err(io)?;
    writeln!(
        out,
        "{}",
        truth
            .personas
            .iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    )
    .map_err(io)?;
    out.flush().map_err(io)
}

/// Maximum-weight perfect matching on a square matrix (Hungarian algorithm).
/// Returns `assignment[row] = column`.
pub fn hungarian_max(weights: ArrayView2<'_, f64>) -> Vec<usize> {
    let n = weights.nrows();
    assert_eq!(n, weights.ncols(), "hungarian_max needs a square matrix");
    if n == 0 {
        return Vec::new();
    }
    // Shortest augmenting path formulation on costs = −weights, 1-based
    // potentials u (rows) and v (columns); way/p track the matching.
    let cost = |i: usize, j: usize| -weights[[i - 1, j - 1]];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    assignment
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// `assignment[i]` is the estimated row matched to truth row `i`.
    pub assignment: Vec<usize>,
    /// Mean cosine similarity over matched pairs.
    pub score: f64,
}

fn cosine(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    let dot = a.dot(&b);
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Matches estimated rows to true rows maximizing total cosine similarity.
pub fn match_permutation(
    estimated: ArrayView2<'_, f64>,
    truth: ArrayView2<'_, f64>,
) -> Result<Matching> {
    if estimated.nrows() != truth.nrows() || estimated.ncols() != truth.ncols() {
        return Err(Error::Dimension(format!(
            "cannot match {:?} rows against {:?}",
            estimated.dim(),
            truth.dim()
        )));
    }
    let n = truth.nrows();
    let sim = Array2::from_shape_fn((n, n), |(i, j)| cosine(truth.row(i), estimated.row(j)));
    let assignment = hungarian_max(sim.view());
    let score = if n == 0 {
        0.0
    } else {
        assignment
            .iter()
            .enumerate()
            .map(|(i, &j)| sim[[i, j]])
            .sum::<f64>()
            / n as f64
    };
    Ok(Matching { assignment, score })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use perms::permutations;

    mod perms {
        /// All permutations of 0..n (Heap's algorithm).
        pub fn permutations(n: usize) -> Vec<Vec<usize>> {
            let mut out = Vec::new();
            let mut a: Vec<usize> = (0..n).collect();
            let mut c = vec![0; n];
            out.push(a.clone());
            let mut i = 0;
            while i < n {
                if c[i] < i {
                    if i % 2 == 0 {
                        a.swap(0, i);
                    } else {
                        a.swap(c[i], i);
                    }
                    out.push(a.clone());
                    c[i] += 1;
                    i = 0;
                } else {
                    c[i] = 0;
                    i += 1;
                }
            }
            out
        }
    }

    fn small_config() -> SynthConfig {
        SynthConfig {
            num_topics: 3,
            num_personas: 2,
            num_slices: 3,
            num_authors: 4,
            vocab_size: 12,
            eta: 0.3,
            omega: 0.5,
            mu0: 0.0,
            sigma0: 1.0,
            sigma: 0.1,
            docs_per_slice: 7,
            words_per_doc: 15,
            alpha_offsets: None,
            beta: None,
        }
    }

    #[test]
    fn generate_is_reproducible_and_sized() {
        let cfg = small_config();
        let (c1, g1) = generate(&cfg, 11).unwrap();
        let (c2, g2) = generate(&cfg, 11).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(g1, g2);
        let (c3, _) = generate(&cfg, 12).unwrap();
        assert_ne!(c1, c3);

        assert_eq!(c1.docs_per_slice, vec![7, 7, 7]);
        assert!(c1.documents.iter().all(|d| d.num_words() == 15));
        for row in g1.beta.rows().into_iter().chain(g1.kappa.rows()) {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
            assert!(row.iter().all(|x| *x >= 0.0));
        }
        assert_eq!(g1.personas.len(), c1.len());
    }

    #[test]
    fn single_persona_assigns_everything_to_it() {
        let cfg = SynthConfig {
            num_personas: 1,
            ..small_config()
        };
        let (_, truth) = generate(&cfg, 3).unwrap();
        assert!(truth.personas.iter().all(|&p| p == 0));
    }

    #[test]
    fn degenerate_limits_use_only_dominant_topic() {
        // One-hot topics over disjoint word blocks and a dominant topic per persona.
        let (k, v) = (3, 9);
        let beta =
            Array2::from_shape_fn((k, v), |(ki, w)| if w / 3 == ki { 1.0 / 3.0 } else { 0.0 });
        let offsets = Array2::from_shape_fn((2, k), |(p, ki)| if ki == p * 2 { 60.0 } else { 0.0 });
        let cfg = SynthConfig {
            num_topics: k,
            vocab_size: v,
            sigma: 0.0,
            sigma0: 0.0,
            alpha_offsets: Some(offsets.clone()),
            beta: Some(beta),
            ..small_config()
        };
        let (corpus, truth) = generate(&cfg, 5).unwrap();
        for (doc, &persona) in corpus.documents.iter().zip(&truth.personas) {
            let dominant = persona * 2;
            assert!(doc.terms.iter().all(|&(w, _)| w as usize / 3 == dominant));
        }
    }

    #[test]
    fn separable_preset_has_requested_shape() {
        let cfg = SynthConfig::separable();
        let (corpus, truth) = generate(&cfg, 0).unwrap();
        assert_eq!(corpus.len(), 2000);
        assert_eq!(corpus.num_authors(), 50);
        assert_eq!(corpus.vocab_size(), 200);
        assert_eq!(truth.alpha.dim(), (8, 3, 5));
        let offsets = block_offsets(5, 3, 3.0);
        assert_eq!(offsets.row(0).to_vec(), vec![3.0, 3.0, -3.0, -3.0, -3.0]);
        assert_eq!(offsets.row(2).to_vec(), vec![-3.0, -3.0, -3.0, -3.0, 3.0]);
    }

    #[test]
    fn matching_identical_and_shuffled() {
        let m = Array2::from_shape_fn((4, 6), |(i, j)| ((i * 5 + j * 3) % 7) as f64 + 0.5);
        let r = match_permutation(m.view(), m.view()).unwrap();
        assert_eq!(r.assignment, vec![0, 1, 2, 3]);
        assert_abs_diff_eq!(r.score, 1.0, epsilon = 1e-12);

        let shuffle = [2, 0, 3, 1];
        let shuffled = Array2::from_shape_fn((4, 6), |(i, j)| m[[shuffle[i], j]]);
        let r = match_permutation(shuffled.view(), m.view()).unwrap();
        for (truth_row, &est_row) in r.assignment.iter().enumerate() {
            assert_eq!(shuffle[est_row], truth_row);
        }
        assert_abs_diff_eq!(r.score, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn matching_one_hot_against_uniform() {
        let v = 16;
        let one_hot = Array2::from_shape_fn((4, v), |(i, j)| if i == j { 1.0 } else { 0.0 });
        let uniform = Array2::from_elem((4, v), 1.0 / v as f64);
        let r = match_permutation(one_hot.view(), uniform.view()).unwrap();
        assert_abs_diff_eq!(r.score, 1.0 / (v as f64).sqrt(), epsilon = 1e-12);
        assert!(match_permutation(one_hot.view(), Array2::zeros((3, v)).view()).is_err());
    }

    #[test]
    fn hungarian_agrees_with_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for n in 1..=6 {
            for _ in 0..20 {
                let w = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0));
                let got = hungarian_max(w.view());
                let value =
                    |a: &[usize]| a.iter().enumerate().map(|(i, &j)| w[[i, j]]).sum::<f64>();
                let best = permutations(n)
                    .iter()
                    .map(|p| value(p))
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut sorted = got.clone();
                sorted.sort();
                assert_eq!(sorted, (0..n).collect::<Vec<_>>());
                assert_abs_diff_eq!(value(&got), best, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn empirical_word_marginal_matches_expectation() {
        // K=2 so E[σ(θ)]_0 = E[logistic(θ0 − θ1)] with θ0 − θ1 ~ N(Δ, 2σ):
        // evaluated by dense trapezoid quadrature, independent of sampling.
        let (v, n_docs) = (6, 100_000);
        let beta = Array2::from_shape_vec(
            (2, v),
            vec![
                0.4, 0.3, 0.1, 0.1, 0.05, 0.05, 0.05, 0.05, 0.1, 0.2, 0.3, 0.3,
            ],
        )
        .unwrap();
        let offsets = Array2::from_shape_vec((1, 2), vec![0.7, -0.2]).unwrap();
        let sigma = 0.5;
        let cfg = SynthConfig {
            num_topics: 2,
            num_personas: 1,
            num_slices: 1,
            num_authors: 1,
            vocab_size: v,
            eta: 1.0,
            omega: 1.0,
            mu0: 0.0,
            sigma0: 0.0,
            sigma,
            docs_per_slice: n_docs,
            words_per_doc: 1,
            alpha_offsets: Some(offsets),
            beta: Some(beta.clone()),
        };
        let (corpus, _) = generate(&cfg, 2024).unwrap();

        let delta = 0.9;
        let sd = (2.0 * sigma).sqrt();
        let (lo, hi, steps) = (delta - 12.0 * sd, delta + 12.0 * sd, 200_000);
        let h = (hi - lo) / steps as f64;
        let mut e0 = 0.0;
        for i in 0..=steps {
            let x = lo + i as f64 * h;
            let dens = (-(x - delta).powi(2) / (2.0 * sd * sd)).exp()
                / (sd * (2.0 * std::f64::consts::PI).sqrt());
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            e0 += w * h * dens / (1.0 + (-x).exp());
        }
        let mut freq = vec![0.0; v];
        for doc in &corpus.documents {
            for &(w, c) in &doc.terms {
                freq[w as usize] += c as f64;
            }
        }
        for w in 0..v {
            let expected = e0 * beta[[0, w]] + (1.0 - e0) * beta[[1, w]];
            let observed = freq[w] / n_docs as f64;
            let se = (expected * (1.0 - expected) / n_docs as f64).sqrt();
            assert!(
                (observed - expected).abs() <= 3.0 * se,
                "word {w}: {observed} vs {expected} (se {se})"
            );
        }
    }
}
