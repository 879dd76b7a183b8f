//! Numerical and exponential-family primitives shared by the inference code.
//!
//! Gaussians here are always diagonal: every vector is indexed by topic and
//! the natural/source conversions act elementwise.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Natural parameters of a diagonal Gaussian, one pair per topic.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianNat {
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
}

/// Mean/variance ("source") parameters of a diagonal Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSource {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl GaussianNat {
    pub fn zeros(k: usize) -> Self {
        GaussianNat {
            theta1: vec![0.0; k],
            theta2: vec![0.0; k],
        }
    }

    pub fn len(&self) -> usize {
        self.theta1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta1.is_empty()
    }
}

impl GaussianSource {
    pub fn new(m: Vec<f64>, v: Vec<f64>) -> Self {
        debug_assert_eq!(m.len(), v.len());
        GaussianSource { m, v }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// Digamma function Ψ(x) for x > 0.
///
/// Shifts the argument up to x ≥ 6 with Ψ(x) = Ψ(x + 1) − 1/x and then
/// evaluates the asymptotic series through the x⁻¹⁴ term, which keeps the
/// absolute error below 1e-12 on the shifted argument.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("digamma requires x > 0, got {x}")));
    }
    Ok(digamma_unchecked(x))
}

#[inline]
pub(crate) fn digamma_unchecked(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < 6.0 {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Bernoulli-number coefficients B_{2n} / (2n).
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2
                                        * (1.0 / 132.0
                                            - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    shift + x.ln() - 0.5 * inv - series
}

/// E[log p_i] under Dir(params): Ψ(params_i) − Ψ(Σ params).
pub fn dirichlet_expectation(params: &[f64]) -> Result<Vec<f64>> {
    if params.is_empty() {
        return Err(Error::Domain(
            "dirichlet_expectation of empty vector".into(),
        ));
    }
    if let Some(bad) = params.iter().find(|p| !(**p > 0.0) || !p.is_finite()) {
        return Err(Error::Domain(format!(
            "dirichlet parameters must be positive and finite, got {bad}"
        )));
    }
    let total = digamma_unchecked(params.iter().sum());
    Ok(params
        .iter()
        .map(|&p| digamma_unchecked(p) - total)
        .collect())
}

/// Row-wise Dirichlet expectation of a matrix of concentration parameters.
pub fn dirichlet_expectation_rows(params: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let mut out = Array2::zeros(params.raw_dim());
    for (row, mut dst) in params.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        let row = row.to_vec();
        let e = dirichlet_expectation(&row)?;
        dst.iter_mut().zip(e).for_each(|(d, s)| *d = s);
    }
    Ok(out)
}

/// log Σ exp(x_i) with max subtraction. Returns −∞ for an all −∞ input.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + x.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Softmax computed through max subtraction.
pub fn softmax_stable(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Domain("softmax of empty vector".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("softmax input must be finite".into()));
    }
    let mut out = x.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// In-place softmax for pre-validated finite input.
#[inline]
pub(crate) fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    let inv = 1.0 / total;
    x.iter_mut().for_each(|v| *v *= inv);
}

/// Natural to mean/variance: m = −θ₁/(2θ₂), v = −1/(2θ₂).
pub fn nat_to_source(nat: &GaussianNat) -> Result<GaussianSource> {
    let mut m = Vec::with_capacity(nat.len());
    let mut v = Vec::with_capacity(nat.len());
    for (topic, (&t1, &t2)) in nat.theta1.iter().zip(&nat.theta2).enumerate() {
        if !(t2 < 0.0) || !t1.is_finite() {
            return Err(Error::InvalidNatural { topic, theta2: t2 });
        }
        m.push(-t1 / (2.0 * t2));
        v.push(-1.0 / (2.0 * t2));
    }
    Ok(GaussianSource { m, v })
}

/// Mean/variance to natural: θ₁ = m/v, θ₂ = −1/(2v).
pub fn source_to_nat(src: &GaussianSource) -> Result<GaussianNat> {
    if let Some(bad) = src.v.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Domain(format!(
            "variance must be positive, got {bad}"
        )));
    }
    Ok(GaussianNat {
        theta1: src.m.iter().zip(&src.v).map(|(m, v)| m / v).collect(),
        theta2: src.v.iter().map(|v| -0.5 / v).collect(),
    })
}

/// Robbins–Monro step size ρ = (step + delay)^(−forgetting).
pub fn learning_rate(step: u64, delay: f64, forgetting: f64) -> Result<f64> {
    if !(forgetting > 0.5 && forgetting <= 1.0) {
        return Err(Error::Config(format!(
            "forgetting rate must lie in (0.5, 1.0], got {forgetting}"
        )));
    }
    if !(delay >= 0.0) {
        return Err(Error::Config(format!(
            "delay must be non-negative, got {delay}"
        )));
    }
    if !(step as f64 + delay > 0.0) {
        return Err(Error::Config("step + delay must be positive".into()));
    }
    Ok(step_size(step, delay, forgetting))
}

/// Unvalidated (step + delay)^(−exponent).
#[inline]
pub fn step_size(step: u64, delay: f64, exponent: f64) -> f64 {
    (step as f64 + delay).powf(-exponent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    // Reference values from a 30-digit arbitrary-precision evaluation.
    const DIGAMMA_TABLE: &[(f64, f64)] = &[
        (1.0, -0.577_215_664_901_532_860_61),
        (0.5, -1.963_510_026_021_423_479_4),
        (2.0, 0.422_784_335_098_467_139_39),
        (3.7, 1.167_153_539_361_511_440_9),
        (6.0, 1.706_117_668_431_800_472_7),
        (10.0, 2.251_752_589_066_721_107_6),
        (0.01, -100.560_885_457_868_672_42),
        (1e-5, -100_000.577_199_215_672_89),
        (25.3, 3.210_911_380_182_535_883_2),
        (100.5, 4.605_174_352_581_845_211_9),
        (1234.5, 7.118_016_231_827_997_843_3),
    ];

    #[test]
    fn digamma_matches_reference_table() {
        for &(x, want) in DIGAMMA_TABLE {
            let got = digamma(x).unwrap();
            // Relative for the huge-magnitude entry, absolute otherwise.
            let tol = 1e-10 * want.abs().max(1.0);
            assert!(
                (got - want).abs() < tol,
                "digamma({x}) = {got}, want {want}"
            );
        }
    }

    #[test]
    fn digamma_closed_forms() {
        assert_abs_diff_eq!(
            digamma(2.0).unwrap() - digamma(1.0).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        let euler = 0.577_215_664_901_532_9;
        assert_abs_diff_eq!(digamma(1.0).unwrap(), -euler, epsilon = 1e-10);
        assert_abs_diff_eq!(
            digamma(0.5).unwrap(),
            -euler - 2.0 * std::f64::consts::LN_2,
            epsilon = 1e-10
        );
    }

    #[test]
    fn digamma_rejects_non_positive() {
        assert!(matches!(digamma(0.0), Err(Error::Domain(_))));
        assert!(matches!(digamma(-1.5), Err(Error::Domain(_))));
        assert!(digamma(f64::NAN).is_err());
    }

    #[test]
    fn dirichlet_expectation_examples() {
        let e = dirichlet_expectation(&[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(e[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e[1], -1.0, epsilon = 1e-12);

        let e = dirichlet_expectation(&[2.0, 1.0]).unwrap();
        assert_abs_diff_eq!(e[0], -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(e[1], -1.5, epsilon = 1e-12);

        let e = dirichlet_expectation(&[0.3; 7]).unwrap();
        assert!(e.windows(2).all(|w| w[0] == w[1]));
        assert!(e.iter().all(|x| *x < 0.0));
    }

    #[test]
    fn dirichlet_expectation_errors() {
        assert!(dirichlet_expectation(&[]).is_err());
        assert!(dirichlet_expectation(&[1.0, 0.0]).is_err());
        assert!(dirichlet_expectation(&[1.0, -2.0]).is_err());
    }

    /// Trigamma by direct summation plus an Euler–Maclaurin tail; independent
    /// of the digamma implementation.
    fn trigamma_oracle(x: f64) -> f64 {
        let n = 2000;
        let head: f64 = (0..n).map(|i| 1.0 / (x + i as f64).powi(2)).sum();
        let y = x + n as f64;
        head + 1.0 / y + 0.5 / (y * y) + 1.0 / (6.0 * y * y * y)
    }

    proptest! {
        #[test]
        fn dirichlet_expectation_derivative(params in prop::collection::vec(0.05f64..50.0, 2..6), idx in 0usize..6) {
            let i = idx % params.len();
            let e = dirichlet_expectation(&params).unwrap();
            prop_assert!(e.iter().all(|v| *v < 0.0));

            let h = 1e-5 * params[i];
            let mut up = params.clone();
            up[i] += h;
            let mut down = params.clone();
            down[i] -= h;
            let fd = (dirichlet_expectation(&up).unwrap()[i] - dirichlet_expectation(&down).unwrap()[i]) / (2.0 * h);
            let total: f64 = params.iter().sum();
            let exact = trigamma_oracle(params[i]) - trigamma_oracle(total);
            prop_assert!(fd > 0.0);
            prop_assert!(((fd - exact) / exact).abs() <= 1e-5, "fd {} exact {}", fd, exact);
        }

        #[test]
        fn softmax_finite_for_large_inputs(x in prop::collection::vec(-700.0f64..700.0, 1..40)) {
            let s = softmax_stable(&x).unwrap();
            prop_assert!(s.iter().all(|p| p.is_finite() && *p >= 0.0));
            prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn softmax_shift_invariant(x in prop::collection::vec(-50.0f64..50.0, 1..20), c in -100.0f64..100.0) {
            let a = softmax_stable(&x).unwrap();
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            let b = softmax_stable(&shifted).unwrap();
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }

        #[test]
        fn natural_source_round_trip(pairs in prop::collection::vec((-1e3f64..1e3, 1e-4f64..1e3), 1..10)) {
            let src = GaussianSource::new(pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect());
            let back = nat_to_source(&source_to_nat(&src).unwrap()).unwrap();
            for k in 0..src.len() {
                prop_assert!((back.m[k] - src.m[k]).abs() <= 1e-12 * src.m[k].abs());
                prop_assert!(((back.v[k] - src.v[k]) / src.v[k]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_stable(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let s = softmax_stable(&[1f64.ln(), 3f64.ln()]).unwrap();
        assert_abs_diff_eq!(s[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(s[1], 0.75, epsilon = 1e-15);
        assert!(softmax_stable(&[]).is_err());
        assert!(softmax_stable(&[f64::NAN]).is_err());
    }

    #[test]
    fn natural_source_examples() {
        let src = nat_to_source(&GaussianNat {
            theta1: vec![1.0, 0.0],
            theta2: vec![-1.0, -0.5],
        })
        .unwrap();
        assert_eq!(src.m, vec![0.5, 0.0]);
        assert_eq!(src.v, vec![0.5, 1.0]);

        let nat = source_to_nat(&GaussianSource::new(vec![0.0, 1.0], vec![1.0, 0.5])).unwrap();
        assert_eq!(nat.theta1, vec![0.0, 2.0]);
        assert_eq!(nat.theta2, vec![-0.5, -1.0]);

        let nat = GaussianNat {
            theta1: vec![0.3, -2.0],
            theta2: vec![-0.7, -4.0],
        };
        let back = source_to_nat(&nat_to_source(&nat).unwrap()).unwrap();
        for k in 0..2 {
            assert_abs_diff_eq!(back.theta1[k], nat.theta1[k], epsilon = 1e-14);
            assert_abs_diff_eq!(back.theta2[k], nat.theta2[k], epsilon = 1e-14);
        }
    }

    #[test]
    fn natural_source_errors() {
        let bad = GaussianNat {
            theta1: vec![1.0],
            theta2: vec![0.0],
        };
        assert!(matches!(
            nat_to_source(&bad),
            Err(Error::InvalidNatural { topic: 0, .. })
        ));
        assert!(source_to_nat(&GaussianSource::new(vec![0.0], vec![0.0])).is_err());
        assert!(source_to_nat(&GaussianSource::new(vec![0.0], vec![-1.0])).is_err());
    }

    #[test]
    fn learning_rate_examples() {
        assert_abs_diff_eq!(learning_rate(0, 1.0, 1.0).unwrap(), 1.0);
        // 0.5 itself sits on the excluded boundary; the arithmetic still holds.
        assert_abs_diff_eq!(step_size(3, 1.0, 0.5), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(learning_rate(9, 1.0, 1.0).unwrap(), 0.1, epsilon = 1e-15);
        assert!(matches!(learning_rate(1, 1.0, 0.5), Err(Error::Config(_))));
        assert!(matches!(learning_rate(1, 1.0, 1.1), Err(Error::Config(_))));
        assert!(learning_rate(0, 0.0, 0.7).is_err());
    }

    #[test]
    fn learning_rate_schedule_properties() {
        for &kappa in &[0.51, 0.7, 1.0] {
            let rates: Vec<f64> = (0..10_000)
                .map(|i| learning_rate(i, 1.0, kappa).unwrap())
                .collect();
            assert!(rates.windows(2).all(|w| w[1] <= w[0]));
            assert!(rates.iter().all(|r| *r > 0.0 && *r <= 1.0));
            // Σρ² converges: the tail beyond 10⁴ is bounded by ∫ x^(−2κ).
            let sq: f64 = rates.iter().map(|r| r * r).sum();
            let tail = (10_000f64).powf(1.0 - 2.0 * kappa) / (2.0 * kappa - 1.0);
            assert!(sq.is_finite() && tail.is_finite());
            // Σρ diverges: partial sums keep growing at least like ln n.
            let s1: f64 = rates[..1000].iter().sum();
            let s2: f64 = rates.iter().sum();
            assert!(s2 - s1 > 2.0);
        }
    }
}
