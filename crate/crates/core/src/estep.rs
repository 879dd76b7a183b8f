//! Per-document conjugate-computation updates.
//!
//! Each document carries natural-parameter accumulators for its topic
//! proportions (Θ̃), word-topic assignments (Φ̃) and persona assignment (τ̃).
//! Every update mixes a fresh conjugate computation into the accumulator with
//! a damped step and maps the result back to source parameters.

use ndarray::{s, Array2, ArrayView1, ArrayView2};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::mathkit::{
    dirichlet_expectation_rows, log_sum_exp, nat_to_source, softmax_in_place, GaussianNat,
    GaussianSource,
};
use crate::mstep::GlobalState;

/// How the likelihood gradient with respect to the Gaussian mean parameters
/// is formed in the topic-proportion update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThetaGradient {
    /// Full chain rule through (m, v): the first component is
    /// Σφ − N·s + m·N·s with s = softmax(m + v/2). Its fixed point is the
    /// stationary point of the correlated-topic-model bound.
    #[default]
    ChainRule,
    /// First component Σφ only, dropping the −N·s + m·N·s terms.
    Literal,
}

impl std::str::FromStr for ThetaGradient {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chain_rule" => Ok(ThetaGradient::ChainRule),
            "literal" => Ok(ThetaGradient::Literal),
            other => Err(Error::Config(format!("unknown theta gradient {other:?}"))),
        }
    }
}

impl std::fmt::Display for ThetaGradient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ThetaGradient::ChainRule => "chain_rule",
            ThetaGradient::Literal => "literal",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EStepConfig {
    /// Damping of the within-document CVI steps, in (0, 1].
    pub local_step: f64,
    pub max_inner_iters: usize,
    /// Stop once the mean absolute change in m drops below this.
    pub mean_change_tol: f64,
    pub theta_gradient: ThetaGradient,
}

impl Default for EStepConfig {
    fn default() -> Self {
        EStepConfig {
            local_step: 0.7,
            max_inner_iters: 20,
            mean_change_tol: 1e-4,
            theta_gradient: ThetaGradient::ChainRule,
        }
    }
}

impl EStepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.local_step > 0.0 && self.local_step <= 1.0) {
            return Err(Error::Config(format!(
                "local_step must lie in (0, 1], got {}",
                self.local_step
            )));
        }
        if self.max_inner_iters == 0 {
            return Err(Error::Config("max_inner_iters must be at least 1".into()));
        }
        if !(self.mean_change_tol > 0.0) {
            return Err(Error::Config("mean_change_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Local variational state of one document.
#[derive(Debug, Clone, PartialEq)]
pub struct DocState {
    pub gamma: GaussianSource,
    /// One responsibility row per distinct term, row-major (terms × K).
    pub phi: Vec<f64>,
    pub tau: Vec<f64>,
    pub zeta: f64,
    pub nat_theta: GaussianNat,
    pub nat_phi: Vec<f64>,
    pub nat_tau: Vec<f64>,
}

impl DocState {
    /// m = 0, v = 1, uniform φ and τ, zero accumulators.
    pub fn new(num_terms: usize, num_topics: usize, num_personas: usize) -> Self {
        let gamma = GaussianSource::new(vec![0.0; num_topics], vec![1.0; num_topics]);
        let zeta = update_zeta(&gamma);
        DocState {
            gamma,
            phi: vec![1.0 / num_topics as f64; num_terms * num_topics],
            tau: vec![1.0 / num_personas as f64; num_personas],
            zeta,
            nat_theta: GaussianNat::zeros(num_topics),
            nat_phi: vec![0.0; num_topics],
            nat_tau: vec![0.0; num_personas],
        }
    }

    pub fn num_topics(&self) -> usize {
        self.gamma.len()
    }

    pub fn phi_row(&self, term: usize) -> &[f64] {
        let k = self.num_topics();
        &self.phi[term * k..(term + 1) * k]
    }

    /// Σ_n φ_n with duplicate tokens weighted by count.
    pub fn phi_sum(&self, doc: &Document) -> Vec<f64> {
        let k = self.num_topics();
        let mut sum = vec![0.0; k];
        for (j, &(_, count)) in doc.terms.iter().enumerate() {
            for (s, p) in sum.iter_mut().zip(self.phi_row(j)) {
                *s += count as f64 * p;
            }
        }
        sum
    }

    /// Checks simplex, positivity and ζ-consistency invariants.
    pub fn check_invariants(&self) -> Result<()> {
        let k = self.num_topics();
        for (j, row) in self.phi.chunks(k).enumerate() {
            if (row.iter().sum::<f64>() - 1.0).abs() > 1e-8 || row.iter().any(|p| !(*p >= 0.0)) {
                return Err(Error::Data(format!("phi row {j} is not on the simplex")));
            }
        }
        if (self.tau.iter().sum::<f64>() - 1.0).abs() > 1e-8
            || self.tau.iter().any(|p| !(*p >= 0.0))
        {
            return Err(Error::Data("tau is not on the simplex".into()));
        }
        if let Some(v) = self.gamma.v.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::Data(format!("non-positive variance {v}")));
        }
        let expected = update_zeta(&self.gamma);
        if !(self.zeta > 0.0) || ((self.zeta - expected) / expected).abs() > 1e-12 {
            return Err(Error::Data(format!(
                "stale zeta {} (expected {expected})",
                self.zeta
            )));
        }
        Ok(())
    }
}

/// ζ = Σ_k exp(m_k + v_k/2), accumulated in log space.
pub fn update_zeta(gamma: &GaussianSource) -> f64 {
    let shifted: Vec<f64> = gamma
        .m
        .iter()
        .zip(&gamma.v)
        .map(|(m, v)| m + 0.5 * v)
        .collect();
    let max = shifted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max > 600.0 {
        log_sum_exp(&shifted).exp()
    } else {
        shifted.iter().map(|x| x.exp()).sum()
    }
}

/// Topic-proportion update. Forms the conjugate computation
///
/// Θ₁ = Σ_n φ_n + prior_mean / prior_var (+ chain-rule terms),
/// Θ₂ = −N/(2ζ)·exp(m + v/2) − 1/(2·prior_var),
///
/// mixes it into the accumulator with `step`, converts back to (m, v) and
/// refreshes ζ. On an invalid natural parameter the state is left untouched.
pub fn update_theta(
    doc: &Document,
    state: &mut DocState,
    prior_mean: &[f64],
    prior_var: &[f64],
    step: f64,
    gradient: ThetaGradient,
) -> Result<()> {
    if step == 0.0 {
        return Ok(());
    }
    let k = state.num_topics();
    let n = doc.num_words() as f64;
    let phi_sum = state.phi_sum(doc);
    // exp(m + v/2)/ζ, computed as a softmax so large m cannot overflow.
    let mut weight: Vec<f64> = state
        .gamma
        .m
        .iter()
        .zip(&state.gamma.v)
        .map(|(m, v)| m + 0.5 * v)
        .collect();
    softmax_in_place(&mut weight);

    let mut nat = GaussianNat::zeros(k);
    for topic in 0..k {
        let curvature = n * weight[topic];
        let mut grad1 = phi_sum[topic];
        if gradient == ThetaGradient::ChainRule {
            grad1 += curvature * (state.gamma.m[topic] - 1.0);
        }
        let target1 = grad1 + prior_mean[topic] / prior_var[topic];
        let target2 = -0.5 * curvature - 0.5 / prior_var[topic];
        nat.theta1[topic] = step * target1 + (1.0 - step) * state.nat_theta.theta1[topic];
        nat.theta2[topic] = step * target2 + (1.0 - step) * state.nat_theta.theta2[topic];
    }
    let gamma = nat_to_source(&nat)?;
    state.zeta = update_zeta(&gamma);
    state.gamma = gamma;
    state.nat_theta = nat;
    Ok(())
}

/// Word-topic update: Φ̃ ← step·m + (1 − step)·Φ̃, then each distinct term's
/// row becomes softmax(Φ̃ + E[log β_{·,w}]).
///
/// `elog_beta_by_term` is V × K (the transpose of the topic-word layout).
pub fn update_phi(
    doc: &Document,
    state: &mut DocState,
    elog_beta_by_term: ArrayView2<'_, f64>,
    step: f64,
) {
    let k = state.num_topics();
    for (nat, m) in state.nat_phi.iter_mut().zip(&state.gamma.m) {
        *nat = step * m + (1.0 - step) * *nat;
    }
    for (j, &(w, _)) in doc.terms.iter().enumerate() {
        let row = &mut state.phi[j * k..(j + 1) * k];
        let elog = elog_beta_by_term.row(w as usize);
        for ((dst, nat), e) in row.iter_mut().zip(&state.nat_phi).zip(elog) {
            *dst = nat + e;
        }
        softmax_in_place(row);
    }
}

/// Gradient of the expected Gaussian log-density term with respect to τ:
///
/// ∂f/∂τ_p = α̂_pᵀ Σ⁻¹ (m − α̂ τ) − ½ Σ_k (α̂_{p,k}² + Σ̂_{p,k}) / σ_k
///
/// with all covariances diagonal. `alpha_hat` and `alpha_var` are P × K.
pub fn persona_objective_grad(
    m: &[f64],
    alpha_hat: ArrayView2<'_, f64>,
    alpha_var: ArrayView2<'_, f64>,
    prior_var: &[f64],
    tau: &[f64],
) -> Vec<f64> {
    let k = m.len();
    let mut residual = m.to_vec();
    for (p, &t) in tau.iter().enumerate() {
        for (r, a) in residual.iter_mut().zip(alpha_hat.row(p)) {
            *r -= a * t;
        }
    }
    (0..tau.len())
        .map(|p| {
            let a = alpha_hat.row(p);
            let var = alpha_var.row(p);
            (0..k)
                .map(|i| (a[i] * residual[i] - 0.5 * (a[i] * a[i] + var[i])) / prior_var[i])
                .sum()
        })
        .collect()
}

/// Persona update: τ̃ ← step·(E[log κ_a] + ∇f) + (1 − step)·τ̃, τ = softmax(τ̃).
pub fn update_tau(state: &mut DocState, elog_kappa: ArrayView1<'_, f64>, grad: &[f64], step: f64) {
    for ((nat, e), g) in state.nat_tau.iter_mut().zip(elog_kappa).zip(grad) {
        *nat = step * (e + g) + (1.0 - step) * *nat;
    }
    state.tau.copy_from_slice(&state.nat_tau);
    softmax_in_place(&mut state.tau);
}

/// Read-only view of the global state with the Dirichlet expectations the
/// E-step needs precomputed.
#[derive(Debug, Clone)]
pub struct Snapshot<'a> {
    pub globals: &'a GlobalState,
    /// E[log β], V × K.
    pub elog_beta_by_term: Array2<f64>,
    /// E[log κ], A × P.
    pub elog_kappa: Array2<f64>,
}

impl<'a> Snapshot<'a> {
    pub fn new(globals: &'a GlobalState) -> Result<Self> {
        let elog_beta = dirichlet_expectation_rows(globals.lambda.view())?;
        Ok(Snapshot {
            globals,
            elog_beta_by_term: elog_beta.reversed_axes().as_standard_layout().into_owned(),
            elog_kappa: dirichlet_expectation_rows(globals.delta.view())?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    /// No in-vocabulary words.
    Empty,
    /// The topic-proportion update kept leaving the valid parameter space.
    Diverged,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DocOutcome {
    Converged {
        state: DocState,
        iterations: usize,
        step_halvings: usize,
    },
    Skipped(SkipReason),
}

impl DocOutcome {
    pub fn state(&self) -> Option<&DocState> {
        match self {
            DocOutcome::Converged { state, .. } => Some(state),
            DocOutcome::Skipped(_) => None,
        }
    }
}

const MAX_STEP_HALVINGS: usize = 5;

/// Runs the local updates for one document against a fixed snapshot.
///
/// Each sweep applies φ, θ (with ζ), then τ. Stops when the mean absolute
/// change in m falls below the tolerance or after `max_inner_iters` sweeps.
pub fn infer_document(
    doc: &Document,
    snapshot: &Snapshot<'_>,
    config: &EStepConfig,
) -> Result<DocOutcome> {
    let g = snapshot.globals;
    let (k, p) = (g.num_topics(), g.num_personas());
    if doc.author >= g.num_authors() {
        return Err(Error::Data(format!(
            "document {} has author {} unknown to the model",
            doc.doc_id, doc.author
        )));
    }
    if doc.slice >= g.num_slices() {
        return Err(Error::Data(format!(
            "document {} has slice {} beyond the model's {}",
            doc.doc_id,
            doc.slice,
            g.num_slices()
        )));
    }
    if doc.terms.is_empty() || doc.terms.iter().all(|&(w, _)| w as usize >= g.vocab_size()) {
        return Ok(DocOutcome::Skipped(SkipReason::Empty));
    }
    if let Some(&(w, _)) = doc
        .terms
        .iter()
        .find(|&&(w, _)| w as usize >= g.vocab_size())
    {
        return Err(Error::Data(format!(
            "document {} uses term {w} beyond the model vocabulary",
            doc.doc_id
        )));
    }

    let alpha_hat = g.alpha_hat.slice(s![doc.slice, .., ..]);
    let alpha_var = g.alpha_var.slice(s![doc.slice, .., ..]);
    let prior_var = g.sigma.as_slice().expect("contiguous sigma");
    let elog_kappa = snapshot.elog_kappa.row(doc.author);
    let step = config.local_step;

    let mut state = DocState::new(doc.terms.len(), k, p);
    let mut prior_mean = vec![0.0; k];
    let mut halvings = 0;
    let mut iterations = 0;
    for _ in 0..config.max_inner_iters {
        iterations += 1;
        let old_m = state.gamma.m.clone();

        update_phi(doc, &mut state, snapshot.elog_beta_by_term.view(), step);

        prior_mean.iter_mut().for_each(|x| *x = 0.0);
        for (pi, &t) in state.tau.iter().enumerate() {
            for (dst, a) in prior_mean.iter_mut().zip(alpha_hat.row(pi)) {
                *dst += a * t;
            }
        }
        let mut theta_step = step;
        loop {
            match update_theta(
                doc,
                &mut state,
                &prior_mean,
                prior_var,
                theta_step,
                config.theta_gradient,
            ) {
                Ok(()) => break,
                Err(Error::InvalidNatural { .. }) if halvings < MAX_STEP_HALVINGS => {
                    halvings += 1;
                    theta_step *= 0.5;
                }
                Err(Error::InvalidNatural { .. }) => {
                    return Ok(DocOutcome::Skipped(SkipReason::Diverged));
                }
                Err(e) => return Err(e),
            }
        }

        let grad =
            persona_objective_grad(&state.gamma.m, alpha_hat, alpha_var, prior_var, &state.tau);
        update_tau(&mut state, elog_kappa, &grad, step);

        let change = state
            .gamma
            .m
            .iter()
            .zip(&old_m)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / k as f64;
        if change < config.mean_change_tol {
            break;
        }
    }
    debug_assert!(
        state.check_invariants().is_ok(),
        "{:?}",
        state.check_invariants()
    );
    Ok(DocOutcome::Converged {
        state,
        iterations,
        step_halvings: halvings,
    })
}
