//! Global updates: topic-word λ, author-persona δ and the persona-topic
//! trajectories α̂, followed by fixed-interval smoothing over time.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::estep::DocState;
use crate::mathkit::learning_rate;

/// Global variational parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState {
    /// Dirichlet parameters of the topics, K × V.
    pub lambda: Array2<f64>,
    /// Dirichlet parameters of each author's persona mixture, A × P.
    pub delta: Array2<f64>,
    /// Persona-topic trajectory means, T × P × K.
    pub alpha_hat: Array3<f64>,
    /// Diagonal trajectory variances, T × P × K.
    pub alpha_var: Array3<f64>,
    /// Diagonal document/process variance per topic.
    pub sigma: Array1<f64>,
    pub mu0: Array1<f64>,
    pub sigma0: Array1<f64>,
    pub step_count: u64,
}

impl GlobalState {
    pub fn num_topics(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.lambda.ncols()
    }

    pub fn num_authors(&self) -> usize {
        self.delta.nrows()
    }

    pub fn num_personas(&self) -> usize {
        self.delta.ncols()
    }

    pub fn num_slices(&self) -> usize {
        self.alpha_hat.len_of(Axis(0))
    }

    /// Checks the structural invariants: consistent shapes, λ ≥ η, δ ≥ ω,
    /// non-negative trajectory variances and positive σ.
    pub fn check_invariants(&self, eta: f64, omega: f64) -> Result<()> {
        let (t, p, k) = self.alpha_hat.dim();
        if k != self.num_topics()
            || p != self.num_personas()
            || self.alpha_var.dim() != (t, p, k)
            || self.sigma.len() != k
            || self.mu0.len() != k
            || self.sigma0.len() != k
        {
            return Err(Error::Dimension("global state shapes disagree".into()));
        }
        // Convex combinations of values ≥ prior can round a hair below it.
        let floor = |prior: f64| prior * (1.0 - 1e-12);
        if let Some(x) = self.lambda.iter().find(|x| !(**x >= floor(eta))) {
            return Err(Error::Data(format!("lambda entry {x} below prior {eta}")));
        }
        if let Some(x) = self.delta.iter().find(|x| !(**x >= floor(omega))) {
            return Err(Error::Data(format!("delta entry {x} below prior {omega}")));
        }
        if let Some(x) = self.alpha_var.iter().find(|x| !(**x >= 0.0)) {
            return Err(Error::Data(format!("negative trajectory variance {x}")));
        }
        if self.alpha_hat.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data("non-finite trajectory mean".into()));
        }
        if let Some(x) = self.sigma.iter().find(|x| !(**x > 0.0)) {
            return Err(Error::Data(format!("non-positive sigma {x}")));
        }
        Ok(())
    }
}

/// Sums over documents needed by the global updates.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    /// Σ_d Σ_n φ_{d,n} w_{d,n}, K × V.
    pub word_topic: Array2<f64>,
    /// Σ_d τ_d per author, A × P.
    pub author_persona: Array2<f64>,
    /// Documents per author in this batch.
    pub author_docs: Vec<u64>,
    /// Σ_d m_d τ_{d,p} per slice, T × P × K.
    pub slice_gamma_tau: Array3<f64>,
    /// Σ_d τ_{d,p} per slice, T × P.
    pub slice_tau: Array2<f64>,
    /// Σ_d τ_{d,p}² per slice, T × P.
    pub slice_tau_sq: Array2<f64>,
    pub batch_doc_count: u64,
    pub corpus_doc_count: u64,
}

impl SufficientStats {
    pub fn zeros(
        num_topics: usize,
        vocab_size: usize,
        num_authors: usize,
        num_personas: usize,
        num_slices: usize,
        corpus_doc_count: u64,
    ) -> Self {
        SufficientStats {
            word_topic: Array2::zeros((num_topics, vocab_size)),
            author_persona: Array2::zeros((num_authors, num_personas)),
            author_docs: vec![0; num_authors],
            slice_gamma_tau: Array3::zeros((num_slices, num_personas, num_topics)),
            slice_tau: Array2::zeros((num_slices, num_personas)),
            slice_tau_sq: Array2::zeros((num_slices, num_personas)),
            batch_doc_count: 0,
            corpus_doc_count,
        }
    }

    /// Zeroed statistics shaped for `state`.
    pub fn for_state(state: &GlobalState, corpus_doc_count: u64) -> Self {
        Self::zeros(
            state.num_topics(),
            state.vocab_size(),
            state.num_authors(),
            state.num_personas(),
            state.num_slices(),
            corpus_doc_count,
        )
    }

    /// Adds one document's converged local state.
    pub fn add_document(&mut self, doc: &Document, state: &DocState) {
        let k = state.num_topics();
        for (j, &(w, count)) in doc.terms.iter().enumerate() {
            let phi = &state.phi[j * k..(j + 1) * k];
            let mut col = self.word_topic.column_mut(w as usize);
            for (dst, p) in col.iter_mut().zip(phi) {
                *dst += count as f64 * p;
            }
        }
        let mut row = self.author_persona.row_mut(doc.author);
        for (dst, t) in row.iter_mut().zip(&state.tau) {
            *dst += t;
        }
        self.author_docs[doc.author] += 1;
        for (p, &tau) in state.tau.iter().enumerate() {
            let mut gt = self.slice_gamma_tau.slice_mut(s![doc.slice, p, ..]);
            for (dst, m) in gt.iter_mut().zip(&state.gamma.m) {
                *dst += m * tau;
            }
            self.slice_tau[[doc.slice, p]] += tau;
            self.slice_tau_sq[[doc.slice, p]] += tau * tau;
        }
        self.batch_doc_count += 1;
    }

    /// Adds another partial sum (e.g. from a different worker).
    pub fn merge(&mut self, other: &SufficientStats) -> Result<()> {
        if self.word_topic.dim() != other.word_topic.dim()
            || self.author_persona.dim() != other.author_persona.dim()
            || self.slice_gamma_tau.dim() != other.slice_gamma_tau.dim()
        {
            return Err(Error::Dimension(
                "cannot merge statistics of different shapes".into(),
            ));
        }
        self.word_topic += &other.word_topic;
        self.author_persona += &other.author_persona;
        for (a, b) in self.author_docs.iter_mut().zip(&other.author_docs) {
            *a += b;
        }
        self.slice_gamma_tau += &other.slice_gamma_tau;
        self.slice_tau += &other.slice_tau;
        self.slice_tau_sq += &other.slice_tau_sq;
        self.batch_doc_count += other.batch_doc_count;
        Ok(())
    }
}

/// Rescales per-document sums by corpus size / batch size so a mini-batch
/// stands in for the whole corpus. A full batch is left unchanged.
pub fn scale_stats(stats: &SufficientStats) -> Result<SufficientStats> {
    if stats.batch_doc_count == 0 {
        return Err(Error::Data(
            "cannot rescale statistics of an empty batch".into(),
        ));
    }
    if stats.batch_doc_count > stats.corpus_doc_count {
        return Err(Error::Data(format!(
            "batch of {} documents exceeds corpus of {}",
            stats.batch_doc_count, stats.corpus_doc_count
        )));
    }
    let mut out = stats.clone();
    if stats.batch_doc_count == stats.corpus_doc_count {
        return Ok(out);
    }
    let factor = stats.corpus_doc_count as f64 / stats.batch_doc_count as f64;
    out.word_topic *= factor;
    out.author_persona *= factor;
    out.slice_gamma_tau *= factor;
    out.slice_tau *= factor;
    out.slice_tau_sq *= factor;
    Ok(out)
}

/// λ ← (1 − ρ) λ + ρ (η + Σ φ w).
pub fn update_lambda(state: &mut GlobalState, stats: &SufficientStats, rho: f64, eta: f64) {
    state.lambda.zip_mut_with(&stats.word_topic, |l, s| {
        *l = (1.0 - rho) * *l + rho * (eta + s)
    });
}

/// What to do with δ rows of authors that have no documents in the batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AbsentAuthors {
    /// Leave their rows untouched.
    #[default]
    Keep,
    /// Apply the update with an empty sum, pulling the row toward ω.
    Shrink,
}

impl std::str::FromStr for AbsentAuthors {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "keep" => Ok(AbsentAuthors::Keep),
            "shrink" => Ok(AbsentAuthors::Shrink),
            other => Err(Error::Config(format!(
                "unknown absent-author policy {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for AbsentAuthors {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AbsentAuthors::Keep => "keep",
            AbsentAuthors::Shrink => "shrink",
        })
    }
}

/// δ_a ← (1 − ρ) δ_a + ρ (ω + Σ_d τ_d) for each author.
pub fn update_delta(
    state: &mut GlobalState,
    stats: &SufficientStats,
    rho: f64,
    omega: f64,
    absent: AbsentAuthors,
) {
    for (a, (mut row, sums)) in state
        .delta
        .axis_iter_mut(Axis(0))
        .zip(stats.author_persona.axis_iter(Axis(0)))
        .enumerate()
    {
        if absent == AbsentAuthors::Keep && stats.author_docs[a] == 0 {
            continue;
        }
        row.zip_mut_with(&sums, |d, s| *d = (1.0 - rho) * *d + rho * (omega + s));
    }
}

/// Closed-form trajectory mean for one (slice, persona):
/// (α̂_{t−1} + Σ_d m_d τ_{d,p} − Σ_d τ_{d,p}) / (1 + Σ_d τ_{d,p}²).
/// The scalar Σ τ is subtracted from every topic.
pub fn update_alpha_slice(
    alpha_prev: ArrayView1<'_, f64>,
    gamma_tau: ArrayView1<'_, f64>,
    tau_sum: f64,
    tau_sq_sum: f64,
) -> Array1<f64> {
    let denom = 1.0 + tau_sq_sum;
    let mut out = Array1::zeros(alpha_prev.len());
    for ((o, a), g) in out.iter_mut().zip(alpha_prev).zip(gamma_tau) {
        *o = (a + g - tau_sum) / denom;
    }
    out
}

/// Fixed-interval (Rauch–Tung–Striebel) smoothing of per-topic scalar
/// random walks α_t ~ N(α_{t−1}, σ²), given filtered means and variances
/// (T × K). Returns smoothed means and variances.
pub fn kalman_smooth(
    filtered_means: ArrayView2<'_, f64>,
    filtered_vars: ArrayView2<'_, f64>,
    sigma: ArrayView1<'_, f64>,
) -> (Array2<f64>, Array2<f64>) {
    let (t_len, k) = filtered_means.dim();
    let mut means = filtered_means.to_owned();
    let mut vars = filtered_vars.to_owned();
    for t in (0..t_len.saturating_sub(1)).rev() {
        for topic in 0..k {
            let p = filtered_vars[[t, topic]];
            let predicted = p + sigma[topic];
            let gain = if predicted > 0.0 { p / predicted } else { 0.0 };
            let f = filtered_means[[t, topic]];
            means[[t, topic]] = f + gain * (means[[t + 1, topic]] - f);
            vars[[t, topic]] = p + gain * gain * (vars[[t + 1, topic]] - predicted);
        }
    }
    (means, vars)
}

/// Hyperparameters and schedule for one global update.
#[derive(Debug, Clone, PartialEq)]
pub struct MStepSchedule {
    pub eta: f64,
    pub omega: f64,
    pub lr_delay: f64,
    pub lr_forgetting: f64,
    /// Rescale mini-batch sums to corpus size before mixing.
    pub rescale_stats: bool,
    pub absent_authors: AbsentAuthors,
    /// Reserved for a regularized persona update; must be zero.
    pub persona_regularization: f64,
}

/// One global update from a batch's statistics. Returns the step size used.
pub fn m_step(
    state: &mut GlobalState,
    stats: &SufficientStats,
    schedule: &MStepSchedule,
) -> Result<f64> {
    if schedule.persona_regularization != 0.0 {
        return Err(Error::NotImplemented(
            "regularized persona trajectories (the RVI update of the original DAP model) are not available; \
             set persona_regularization = 0"
                .into(),
        ));
    }
    if stats.batch_doc_count == 0 {
        return Err(Error::Data(
            "m-step needs statistics from at least one document".into(),
        ));
    }
    let rho = learning_rate(state.step_count, schedule.lr_delay, schedule.lr_forgetting)?;
    let scaled;
    let stats = if schedule.rescale_stats {
        scaled = scale_stats(stats)?;
        &scaled
    } else {
        stats
    };

    update_lambda(state, stats, rho, schedule.eta);
    update_delta(state, stats, rho, schedule.omega, schedule.absent_authors);

    let (t_len, p_len, k) = state.alpha_hat.dim();
    for p in 0..p_len {
        // Forward pass over fresh per-slice estimates, then mix and smooth.
        let mut fresh = Array2::zeros((t_len, k));
        let mut pseudo_var = Array2::zeros((t_len, k));
        for t in 0..t_len {
            let prev = if t == 0 {
                state.mu0.clone()
            } else {
                fresh.row(t - 1).to_owned()
            };
            let next = update_alpha_slice(
                prev.view(),
                stats.slice_gamma_tau.slice(s![t, p, ..]),
                stats.slice_tau[[t, p]],
                stats.slice_tau_sq[[t, p]],
            );
            fresh.row_mut(t).assign(&next);
            pseudo_var
                .row_mut(t)
                .fill(1.0 / (1.0 + stats.slice_tau_sq[[t, p]]));
        }
        let mut mixed = state.alpha_hat.slice(s![.., p, ..]).to_owned();
        mixed.zip_mut_with(&fresh, |old, new| *old = (1.0 - rho) * *old + rho * new);
        let (means, vars) = kalman_smooth(mixed.view(), pseudo_var.view(), state.sigma.view());
        state.alpha_hat.slice_mut(s![.., p, ..]).assign(&means);
        state.alpha_var.slice_mut(s![.., p, ..]).assign(&vars);
    }
    state.step_count += 1;
    Ok(rho)
}
