//! Selection mechanisms and selection models.
//!
//! A selection model pairs a base family with a selection function
//! `p_n(yⁿ) ∈ [0, 1]`; its density is `p_n(yⁿ) Π f_θ(yᵢ) / φ_n(θ)` with
//! `φ_n(θ) = E_θ p_n(Yⁿ)`.

use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::family::{Family, ParametricFamily, SufficientStats};
use crate::kernel::{
    ln_gamma, ln_gamma_pdf, ln_integrate_unimodal, ln_norm_cdf, ln_norm_pdf, ln_reg_gamma_lower, ln_reg_gamma_upper,
    norm_cdf, CubicSpline, Envelope, QuadratureSpec, RngStream,
};

pub const DEFAULT_MAX_ATTEMPTS: usize = 1_000_000;
pub const DEFAULT_MC_DRAWS: usize = 100_000;
const WEAK_SELECTION: f64 = 0.01;

/// Whether a sample is selected when its statistic is below or above the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Below,
    Above,
}

/// Variance divisor of the subsample t-statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceDivisor {
    /// Divisor `n₁`, the maximum likelihood variance.
    #[default]
    Mle,
    /// Divisor `n₁ − 1`.
    Unbiased,
}

/// Scalar statistic the mechanism acts on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Statistic {
    SampleMean,
    /// `Ȳ₁ / √(V₁/n₁)` over the first `n1` observations.
    SubsampleTStat { n1: usize, divisor: VarianceDivisor },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MechanismKind {
    /// `p_n ≡ 1`.
    NoSelection,
    Deterministic { threshold: f64, direction: Direction },
    /// Deterministic rule applied to the first `⌈fraction·n⌉` observations.
    Carving { threshold: f64, fraction: f64, direction: Direction },
    /// Rule on `√n·S + W`, `W ~ N(0, σ_W²)`, threshold given on the scale of `S`.
    Randomized { threshold: f64, sigma_w: f64, direction: Direction },
    /// Conditioning on the observed value `u` of `√n·S + W`.
    ConditionOnValue { observed: f64, sigma_w: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionMechanism {
    pub kind: MechanismKind,
    pub statistic: Statistic,
}

impl SelectionMechanism {
    pub fn none() -> Self {
        Self {
            kind: MechanismKind::NoSelection,
            statistic: Statistic::SampleMean,
        }
    }

    pub fn deterministic(threshold: f64, direction: Direction) -> Self {
        Self {
            kind: MechanismKind::Deterministic { threshold, direction },
            statistic: Statistic::SampleMean,
        }
    }

    pub fn carving(threshold: f64, fraction: f64, direction: Direction) -> Self {
        Self {
            kind: MechanismKind::Carving {
                threshold,
                fraction,
                direction,
            },
            statistic: Statistic::SampleMean,
        }
    }

    pub fn randomized(threshold: f64, sigma_w: f64, direction: Direction) -> Self {
        Self {
            kind: MechanismKind::Randomized {
                threshold,
                sigma_w,
                direction,
            },
            statistic: Statistic::SampleMean,
        }
    }

    pub fn condition_on_value(observed: f64, sigma_w: f64) -> Self {
        Self {
            kind: MechanismKind::ConditionOnValue { observed, sigma_w },
            statistic: Statistic::SampleMean,
        }
    }

    /// Subsample t-test `S > t` on the first `n1` observations.
    pub fn winners(n1: usize, threshold: f64, divisor: VarianceDivisor) -> Self {
        Self {
            kind: MechanismKind::Deterministic {
                threshold,
                direction: Direction::Above,
            },
            statistic: Statistic::SubsampleTStat { n1, divisor },
        }
    }

    pub fn name(&self) -> &'static str {
        match (self.kind, self.statistic) {
            (MechanismKind::NoSelection, _) => "none",
            (_, Statistic::SubsampleTStat { .. }) => "winners",
            (MechanismKind::Deterministic { .. }, _) => "deterministic",
            (MechanismKind::Carving { .. }, _) => "carving",
            (MechanismKind::Randomized { .. }, _) => "randomized",
            (MechanismKind::ConditionOnValue { .. }, _) => "condition_on_value",
        }
    }
}

/// How [`SelectionModel::selection_probability`] computes `φ_n(θ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhiMethod {
    /// Closed form where one exists, one-dimensional quadrature otherwise.
    Exact,
    /// Always one-dimensional quadrature over the law of the statistic.
    Quadrature,
    /// Mean selection weight over unconditional draws.
    MonteCarlo { draws: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiEstimate {
    pub value: f64,
    /// Zero for the deterministic routes.
    pub std_error: f64,
}

/// Family, mechanism and sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionModel {
    family: Family,
    mechanism: SelectionMechanism,
    n: usize,
}

impl SelectionModel {
    pub fn new(family: Family, mechanism: SelectionMechanism, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Domain(format!("sample size must be at least 2, got {n}")));
        }
        let model = Self { family, mechanism, n };
        model.validate()?;
        Ok(model)
    }

    /// Winners model: Gaussian sample of `n1 + n2`, t-test on the first `n1`.
    pub fn winners(n1: usize, n2: usize, threshold: f64, divisor: VarianceDivisor) -> Result<Self> {
        Self::new(
            Family::GaussianMeanVar,
            SelectionMechanism::winners(n1, threshold, divisor),
            n1 + n2,
        )
    }

    fn validate(&self) -> Result<()> {
        let positive = |x: f64, what: &str| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::Domain(format!("{what} must be positive and finite, got {x}")))
            }
        };
        let finite = |x: f64, what: &str| {
            if x.is_finite() {
                Ok(())
            } else {
                Err(Error::Domain(format!("{what} must be finite")))
            }
        };
        match self.mechanism.kind {
            MechanismKind::NoSelection => {}
            MechanismKind::Deterministic { threshold, direction } => {
                finite(threshold, "threshold")?;
                if self.family == Family::ExponentialRate && direction == Direction::Below {
                    positive(threshold, "threshold")?;
                }
            }
            MechanismKind::Carving {
                threshold,
                fraction,
                direction,
            } => {
                finite(threshold, "threshold")?;
                if !(fraction > 0.0 && fraction < 1.0) {
                    return Err(Error::Domain(format!("carve fraction must lie in (0, 1), got {fraction}")));
                }
                let m = self.prefix_len();
                if m == 0 || m >= self.n {
                    return Err(Error::Domain(format!(
                        "carved subsample of {m} out of {} leaves nothing to carve",
                        self.n
                    )));
                }
                if self.family == Family::ExponentialRate && direction == Direction::Below {
                    positive(threshold, "threshold")?;
                }
            }
            MechanismKind::Randomized { threshold, sigma_w, .. } => {
                finite(threshold, "threshold")?;
                positive(sigma_w, "noise scale")?;
            }
            MechanismKind::ConditionOnValue { observed, sigma_w } => {
                finite(observed, "observed value")?;
                positive(sigma_w, "noise scale")?;
            }
        }
        if let Statistic::SubsampleTStat { n1, .. } = self.mechanism.statistic {
            if self.family != Family::GaussianMeanVar {
                return Err(Error::Capability("the subsample t-statistic needs the Gaussian family".into()));
            }
            if n1 < 2 || n1 > self.n {
                return Err(Error::Domain(format!("first-stage size n1 = {n1} must lie in [2, {}]", self.n)));
            }
            if !matches!(
                self.mechanism.kind,
                MechanismKind::Deterministic { .. } | MechanismKind::NoSelection
            ) {
                return Err(Error::Capability(
                    "the subsample t-statistic supports deterministic selection only".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn mechanism(&self) -> &SelectionMechanism {
        &self.mechanism
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.family.dim()
    }

    pub fn is_winners(&self) -> bool {
        matches!(self.mechanism.statistic, Statistic::SubsampleTStat { .. })
    }

    pub fn has_selection(&self) -> bool {
        self.mechanism.kind != MechanismKind::NoSelection
    }

    /// Number of leading observations the selection function depends on.
    pub fn prefix_len(&self) -> usize {
        match (self.mechanism.kind, self.mechanism.statistic) {
            (MechanismKind::NoSelection, _) => 0,
            (_, Statistic::SubsampleTStat { n1, .. }) => n1,
            (MechanismKind::Carving { fraction, .. }, _) => (fraction * self.n as f64 - 1e-9).ceil() as usize,
            _ => self.n,
        }
    }

    /// Same family and size with the selection switched off.
    pub fn without_selection(&self) -> Self {
        Self {
            family: self.family,
            mechanism: SelectionMechanism::none(),
            n: self.n,
        }
    }

    /// Same mechanism at another sample size.
    pub fn with_n(&self, n: usize) -> Result<Self> {
        Self::new(self.family, self.mechanism, n)
    }

    /// The statistic on the selection-relevant prefix.
    fn statistic_of(&self, prefix: &[f64]) -> f64 {
        match self.mechanism.statistic {
            Statistic::SampleMean => prefix.iter().sum::<f64>() / prefix.len() as f64,
            Statistic::SubsampleTStat { n1, divisor } => {
                let s = SufficientStats::of(&prefix[..n1]).expect("non-empty prefix");
                let var = match divisor {
                    VarianceDivisor::Mle => s.var_mle,
                    VarianceDivisor::Unbiased => s.var_mle * n1 as f64 / (n1 as f64 - 1.0),
                };
                s.mean / (var / n1 as f64).sqrt()
            }
        }
    }

    /// Selection weight as a function of the statistic value.
    pub fn weight_of_statistic(&self, s: f64) -> f64 {
        let rn = (self.n as f64).sqrt();
        match self.mechanism.kind {
            MechanismKind::NoSelection => 1.0,
            MechanismKind::Deterministic { threshold, direction }
            | MechanismKind::Carving {
                threshold, direction, ..
            } => indicator(s, threshold, direction),
            MechanismKind::Randomized {
                threshold,
                sigma_w,
                direction,
            } => match direction {
                Direction::Below => norm_cdf(rn * (threshold - s) / sigma_w),
                Direction::Above => norm_cdf(rn * (s - threshold) / sigma_w),
            },
            MechanismKind::ConditionOnValue { observed, sigma_w } => {
                let w = (observed - rn * s) / sigma_w;
                (-0.5 * w * w).exp()
            }
        }
    }

    fn ln_weight_of_statistic(&self, s: f64) -> f64 {
        let rn = (self.n as f64).sqrt();
        match self.mechanism.kind {
            MechanismKind::Randomized {
                threshold,
                sigma_w,
                direction,
            } => match direction {
                Direction::Below => ln_norm_cdf(rn * (threshold - s) / sigma_w),
                Direction::Above => ln_norm_cdf(rn * (s - threshold) / sigma_w),
            },
            MechanismKind::ConditionOnValue { observed, sigma_w } => {
                let w = (observed - rn * s) / sigma_w;
                -0.5 * w * w
            }
            _ => self.weight_of_statistic(s).ln(),
        }
    }

    fn weight_of_prefix(&self, prefix: &[f64]) -> f64 {
        if !self.has_selection() {
            return 1.0;
        }
        self.weight_of_statistic(self.statistic_of(prefix))
    }

    /// `p_n(yⁿ)`.
    pub fn selection_weight(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                got: y.len(),
            });
        }
        if let Some(bad) = y.iter().find(|&&v| !self.family.in_support(v)) {
            return Err(Error::Domain(format!("observation {bad} is outside the family support")));
        }
        Ok(self.weight_of_prefix(&y[..self.prefix_len()]))
    }

    /// `φ_n(θ)` by the requested route.
    pub fn selection_probability(
        &self,
        theta: &[f64],
        method: PhiMethod,
        rng: Option<&mut RngStream>,
    ) -> Result<PhiEstimate> {
        self.family.check_theta(theta)?;
        match method {
            PhiMethod::Exact => Ok(PhiEstimate {
                value: self.ln_phi(theta)?.exp(),
                std_error: 0.0,
            }),
            PhiMethod::Quadrature => Ok(PhiEstimate {
                value: self.ln_phi_quadrature(theta)?.exp(),
                std_error: 0.0,
            }),
            PhiMethod::MonteCarlo { draws } => {
                let rng = rng.ok_or_else(|| Error::Misuse("Monte Carlo selection probability needs an RngStream".into()))?;
                self.phi_monte_carlo(theta, draws, rng)
            }
        }
    }

    fn phi_monte_carlo(&self, theta: &[f64], draws: usize, rng: &mut RngStream) -> Result<PhiEstimate> {
        if draws < 2 {
            return Err(Error::domain("Monte Carlo needs at least two draws"));
        }
        let k = self.prefix_len();
        let (mut sum, mut sum2) = (0.0, 0.0);
        for _ in 0..draws {
            let prefix = self.family.sample(theta, k, rng);
            let w = self.weight_of_prefix(&prefix);
            sum += w;
            sum2 += w * w;
        }
        let m = draws as f64;
        let mean = sum / m;
        let var = ((sum2 / m - mean * mean) * m / (m - 1.0)).max(0.0);
        Ok(PhiEstimate {
            value: mean,
            std_error: (var / m).sqrt(),
        })
    }

    /// `ln φ_n(θ)`: closed form where available, quadrature otherwise.
    pub fn ln_phi(&self, theta: &[f64]) -> Result<f64> {
        self.family.check_theta(theta)?;
        match self.ln_phi_closed_form(theta) {
            Some(v) => v,
            None => self.ln_phi_quadrature(theta),
        }
    }

    /// Closed-form `ln φ_n(θ)`, if the mechanism/family pair has one.
    pub fn ln_phi_closed_form(&self, theta: &[f64]) -> Option<Result<f64>> {
        if !self.has_selection() {
            return Some(Ok(0.0));
        }
        if self.is_winners() {
            return None;
        }
        let m = self.prefix_len() as f64;
        let rn = (self.n as f64).sqrt();
        match (self.family, self.mechanism.kind) {
            (
                Family::ExponentialRate,
                MechanismKind::Deterministic { threshold, direction }
                | MechanismKind::Carving {
                    threshold, direction, ..
                },
            ) => {
                // The prefix sum is Gamma(m, θ), so the prefix mean is below t with probability P(m, mθt).
                let x = (m * theta[0] * threshold).max(0.0);
                Some(match direction {
                    Direction::Below => ln_reg_gamma_lower(m, x),
                    Direction::Above => ln_reg_gamma_upper(m, x),
                })
            }
            (Family::GaussianMeanVar, kind) => {
                let (mu, sd) = (theta[0], (theta[1] / m).sqrt());
                Some(Ok(match kind {
                    MechanismKind::Deterministic { threshold, direction }
                    | MechanismKind::Carving {
                        threshold, direction, ..
                    } => match direction {
                        Direction::Below => ln_norm_cdf((threshold - mu) / sd),
                        Direction::Above => ln_norm_cdf((mu - threshold) / sd),
                    },
                    MechanismKind::Randomized {
                        threshold,
                        sigma_w,
                        direction,
                    } => {
                        let spread = (rn * rn * sd * sd + sigma_w * sigma_w).sqrt();
                        let d = rn * (threshold - mu) / spread;
                        match direction {
                            Direction::Below => ln_norm_cdf(d),
                            Direction::Above => ln_norm_cdf(-d),
                        }
                    }
                    MechanismKind::ConditionOnValue { observed, sigma_w } => {
                        let s2 = rn * rn * sd * sd + sigma_w * sigma_w;
                        let d = observed - rn * mu;
                        (sigma_w * sigma_w / s2).ln() * 0.5 - 0.5 * d * d / s2
                    }
                    MechanismKind::NoSelection => 0.0,
                }))
            }
            _ => None,
        }
    }

    /// `ln φ_n(θ)` by one-dimensional quadrature over the law of the statistic.
    pub fn ln_phi_quadrature(&self, theta: &[f64]) -> Result<f64> {
        self.family.check_theta(theta)?;
        if !self.has_selection() {
            return Ok(0.0);
        }
        let spec = QuadratureSpec::relative(1e-10);
        if let Statistic::SubsampleTStat { n1, divisor } = self.mechanism.statistic {
            let delta = (n1 as f64).sqrt() * theta[0] / theta[1].sqrt();
            return self.winners_ln_phi_delta(delta, n1, divisor, &spec);
        }
        let m = self.prefix_len() as f64;
        let rn = (self.n as f64).sqrt();
        let (lo, hi, center, sd) = match self.family {
            Family::ExponentialRate => (0.0, f64::INFINITY, 1.0 / theta[0], 1.0 / (theta[0] * m.sqrt())),
            Family::GaussianMeanVar => (
                f64::NEG_INFINITY,
                f64::INFINITY,
                theta[0],
                (theta[1] / m).sqrt(),
            ),
        };
        let ln_density = |s: f64| match self.family {
            Family::ExponentialRate => ln_gamma_pdf(s, m, m * theta[0]),
            Family::GaussianMeanVar => ln_norm_pdf((s - center) / sd) - sd.ln(),
        };
        let (lo, hi, breaks, scale) = match self.mechanism.kind {
            MechanismKind::Deterministic { threshold, direction }
            | MechanismKind::Carving {
                threshold, direction, ..
            } => match direction {
                Direction::Below => (lo, hi.min(threshold), vec![], sd),
                Direction::Above => (lo.max(threshold), hi, vec![], sd),
            },
            MechanismKind::Randomized { threshold, sigma_w, .. } => (lo, hi, vec![threshold], sd.min(sigma_w / rn)),
            MechanismKind::ConditionOnValue { observed, sigma_w } => {
                (lo, hi, vec![observed / rn], sd.min(sigma_w / rn))
            }
            MechanismKind::NoSelection => unreachable!(),
        };
        if !(hi > lo) {
            return Ok(f64::NEG_INFINITY);
        }
        let peak_guess = match self.mechanism.kind {
            MechanismKind::ConditionOnValue { observed, .. } => 0.5 * (center + observed / rn),
            _ => center,
        };
        ln_integrate_unimodal(
            |s| ln_density(s) + self.ln_weight_of_statistic(s),
            lo,
            hi,
            Envelope::new(peak_guess, scale),
            &breaks,
            &spec,
        )
    }

    /// Winners `ln φ_n` as a function of the noncentrality `δ = √n₁·μ/σ`.
    ///
    /// With `q = n₁V₁/σ² ~ χ²(n₁ − 1)` and `s = √q`, the t-test accepts with
    /// probability `Φ̄(κ·t·s − δ)` given `s`, where `κ = 1/√n₁` for the MLE
    /// divisor and `1/√(n₁ − 1)` for the unbiased one.
    fn winners_ln_phi_delta(&self, delta: f64, n1: usize, divisor: VarianceDivisor, spec: &QuadratureSpec) -> Result<f64> {
        let MechanismKind::Deterministic { threshold, direction } = self.mechanism.kind else {
            unreachable!("validated at construction")
        };
        let k = (n1 - 1) as f64;
        let kappa = match divisor {
            VarianceDivisor::Mle => 1.0 / (n1 as f64).sqrt(),
            VarianceDivisor::Unbiased => 1.0 / k.sqrt(),
        };
        let ln_norm = (0.5 * k - 1.0) * LN_2 + ln_gamma(0.5 * k);
        let ln_chi = |s: f64| {
            if s <= 0.0 {
                return f64::NEG_INFINITY;
            }
            (k - 1.0) * s.ln() - 0.5 * s * s - ln_norm
        };
        let ln_accept = |s: f64| match direction {
            Direction::Above => ln_norm_cdf(delta - kappa * threshold * s),
            Direction::Below => ln_norm_cdf(kappa * threshold * s - delta),
        };
        ln_integrate_unimodal(
            |s| ln_chi(s) + ln_accept(s),
            0.0,
            f64::INFINITY,
            Envelope::new((k - 0.5).max(0.5).sqrt(), std::f64::consts::FRAC_1_SQRT_2),
            &[],
            spec,
        )
    }

    /// Warning text when `φ_n(θ_ref)` is below 0.01, where the asymptotic theory is fragile.
    pub fn strength_warning(&self, theta_ref: &[f64]) -> Result<Option<String>> {
        let phi = self.ln_phi(theta_ref)?.exp();
        Ok((phi < WEAK_SELECTION).then(|| {
            format!("selection probability {phi:.3e} at {theta_ref:?} is below {WEAK_SELECTION}")
        }))
    }

    /// One draw from the selection model by rejection sampling.
    ///
    /// Only the selection-relevant prefix is drawn before the accept step;
    /// the remaining observations are appended unconditionally.
    pub fn sample_conditional(&self, theta: &[f64], rng: &mut RngStream, max_attempts: usize) -> Result<Vec<f64>> {
        self.family.check_theta(theta)?;
        if !self.has_selection() {
            return Ok(self.family.sample(theta, self.n, rng));
        }
        let k = self.prefix_len();
        let mut weight_sum = 0.0;
        for attempt in 1..=max_attempts.max(1) {
            let mut y = self.family.sample(theta, k, rng);
            let w = self.weight_of_prefix(&y);
            weight_sum += w;
            if rng.bernoulli(w) {
                y.extend(self.family.sample(theta, self.n - k, rng));
                return Ok(y);
            }
            if attempt == max_attempts {
                break;
            }
        }
        Err(Error::SelectionTooRare {
            attempts: max_attempts,
            accepted: 0,
            rate: weight_sum / max_attempts.max(1) as f64,
        })
    }

    /// Local selective log-likelihood ratio between `θ + h/√n` and `θ`.
    pub fn selective_loglik_ratio(&self, theta: &[f64], h: &[f64], y: &[f64]) -> Result<f64> {
        self.family.check_theta(theta)?;
        if h.len() != theta.len() {
            return Err(Error::Dimension {
                expected: theta.len(),
                got: h.len(),
            });
        }
        if y.len() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                got: y.len(),
            });
        }
        if h.iter().all(|&v| v == 0.0) {
            return Ok(0.0);
        }
        let shifted = self.local_to_theta(theta, h);
        self.family.check_theta(&shifted)?;
        let stats = SufficientStats::of(y)?;
        let lik = self.family.log_likelihood_stats(&shifted, &stats) - self.family.log_likelihood_stats(theta, &stats);
        let sel = if self.has_selection() {
            self.ln_phi(theta)? - self.ln_phi(&shifted)?
        } else {
            0.0
        };
        Ok(lik + sel)
    }

    /// `θ + h/√n`.
    pub fn local_to_theta(&self, theta: &[f64], h: &[f64]) -> Vec<f64> {
        let rn = (self.n as f64).sqrt();
        theta.iter().zip(h).map(|(t, hh)| t + hh / rn).collect()
    }

    /// `√n·(θ − θ₀)`.
    pub fn theta_to_local(&self, theta0: &[f64], theta: &[f64]) -> Vec<f64> {
        let rn = (self.n as f64).sqrt();
        theta.iter().zip(theta0).map(|(t, t0)| rn * (t - t0)).collect()
    }
}

fn indicator(s: f64, threshold: f64, direction: Direction) -> f64 {
    let selected = match direction {
        Direction::Below => s < threshold,
        Direction::Above => s > threshold,
    };
    if selected {
        1.0
    } else {
        0.0
    }
}

/// Spline table of `ln φ_n` for repeated evaluation.
///
/// Exponential models are tabulated in `ln θ`; the winners model in the
/// noncentrality `δ = √n₁·μ/σ`, through which alone `φ_n` depends on `θ`.
/// Queries outside the table fall back to direct evaluation.
#[derive(Debug, Clone)]
pub struct LnPhiTable {
    model: SelectionModel,
    spline: CubicSpline,
    coordinate: TableCoordinate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TableCoordinate {
    LogRate,
    Noncentrality,
}

impl LnPhiTable {
    /// Table over `θ ∈ [lo, hi]` for a one-parameter exponential model.
    pub fn for_rate(model: &SelectionModel, lo: f64, hi: f64, points: usize) -> Result<Self> {
        if model.family() != Family::ExponentialRate {
            return Err(Error::Capability("rate tables need the exponential family".into()));
        }
        if !(lo > 0.0 && hi > lo) || points < 3 {
            return Err(Error::domain("rate table needs 0 < lo < hi and at least 3 points"));
        }
        let (a, b) = (lo.ln(), hi.ln());
        let x: Vec<f64> = (0..points)
            .map(|i| a + (b - a) * i as f64 / (points - 1) as f64)
            .collect();
        let y = x.iter().map(|&t| model.ln_phi(&[t.exp()])).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model: model.clone(),
            spline: CubicSpline::new(x, y)?,
            coordinate: TableCoordinate::LogRate,
        })
    }

    /// Table over `δ ∈ [−half_width, half_width]` for the winners model.
    pub fn for_noncentrality(model: &SelectionModel, half_width: f64, points: usize) -> Result<Self> {
        let Statistic::SubsampleTStat { n1, .. } = model.mechanism().statistic else {
            return Err(Error::Capability("noncentrality tables need the winners model".into()));
        };
        if !(half_width > 0.0) || points < 3 {
            return Err(Error::domain("noncentrality table needs a positive width and at least 3 points"));
        }
        let rn1 = (n1 as f64).sqrt();
        let x: Vec<f64> = (0..points)
            .map(|i| -half_width + 2.0 * half_width * i as f64 / (points - 1) as f64)
            .collect();
        let y = x
            .iter()
            .map(|&d| model.ln_phi(&[d / rn1, 1.0]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model: model.clone(),
            spline: CubicSpline::new(x, y)?,
            coordinate: TableCoordinate::Noncentrality,
        })
    }

    pub fn model(&self) -> &SelectionModel {
        &self.model
    }

    pub fn ln_phi(&self, theta: &[f64]) -> Result<f64> {
        let x = match self.coordinate {
            TableCoordinate::LogRate => {
                if !(theta.len() == 1 && theta[0] > 0.0) {
                    return self.model.ln_phi(theta);
                }
                theta[0].ln()
            }
            TableCoordinate::Noncentrality => {
                if !(theta.len() == 2 && theta[1] > 0.0) {
                    return self.model.ln_phi(theta);
                }
                let Statistic::SubsampleTStat { n1, .. } = self.model.mechanism().statistic else {
                    unreachable!()
                };
                (n1 as f64).sqrt() * theta[0] / theta[1].sqrt()
            }
        };
        if self.spline.contains(x) {
            Ok(self.spline.eval(x))
        } else {
            self.model.ln_phi(theta)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_model(mech: SelectionMechanism, n: usize) -> SelectionModel {
        SelectionModel::new(Family::ExponentialRate, mech, n).unwrap()
    }

    #[test]
    fn weights_follow_the_mechanism() {
        let n = 25;
        let m = exp_model(SelectionMechanism::deterministic(0.5, Direction::Below), n);
        assert_eq!(m.selection_weight(&vec![0.4; n]).unwrap(), 1.0);
        assert_eq!(m.selection_weight(&vec![0.6; n]).unwrap(), 0.0);
        assert!(m.selection_weight(&[0.4; 3]).is_err());
        let r = exp_model(SelectionMechanism::randomized(0.5, 1.0, Direction::Below), n);
        assert!((r.selection_weight(&vec![0.5; n]).unwrap() - 0.5).abs() < 1e-15);
        let rn = (n as f64).sqrt();
        let c = exp_model(SelectionMechanism::condition_on_value(rn * 0.7, 1.0), n);
        assert!((c.selection_weight(&vec![0.7; n]).unwrap() - 1.0).abs() < 1e-12);
        let mut y = vec![0.1; n];
        for v in y.iter_mut().skip(12) {
            *v = 10.0;
        }
        let k = exp_model(SelectionMechanism::carving(0.5, 0.5, Direction::Below), n);
        assert_eq!(k.prefix_len(), 13);
        assert_eq!(k.selection_weight(&y).unwrap(), 0.0);
        y[12] = 0.1;
        assert_eq!(k.selection_weight(&y).unwrap(), 1.0);
    }

    #[test]
    fn quadrature_matches_closed_forms() {
        let mechs = [
            SelectionMechanism::deterministic(0.5, Direction::Below),
            SelectionMechanism::deterministic(0.45, Direction::Above),
            SelectionMechanism::carving(0.5, 0.5, Direction::Below),
        ];
        for mech in mechs {
            let m = exp_model(mech, 40);
            for theta in [0.7, 2.0, 2.6, 6.0] {
                let a = m.ln_phi(&[theta]).unwrap();
                let b = m.ln_phi_quadrature(&[theta]).unwrap();
                assert!((a - b).abs() < 1e-8 * a.abs().max(1.0), "{mech:?} θ={theta}: {a} vs {b}");
            }
        }
        let gmechs = [
            SelectionMechanism::deterministic(0.2, Direction::Above),
            SelectionMechanism::randomized(0.1, 0.7, Direction::Below),
            SelectionMechanism::condition_on_value(1.3, 0.6),
        ];
        for mech in gmechs {
            let m = SelectionModel::new(Family::GaussianMeanVar, mech, 30).unwrap();
            let theta = [0.1, 1.7];
            let a = m.ln_phi(&theta).unwrap();
            let b = m.ln_phi_quadrature(&theta).unwrap();
            assert!((a - b).abs() < 1e-8, "{mech:?}: {a} vs {b}");
        }
    }

    #[test]
    fn constructor_rejects_bad_settings() {
        assert!(SelectionModel::new(Family::ExponentialRate, SelectionMechanism::none(), 1).is_err());
        assert!(SelectionModel::new(Family::ExponentialRate, SelectionMechanism::randomized(0.5, 0.0, Direction::Below), 10).is_err());
        assert!(SelectionModel::new(Family::ExponentialRate, SelectionMechanism::winners(5, 1.0, VarianceDivisor::Mle), 10).is_err());
        assert!(SelectionModel::winners(1, 5, 1.0, VarianceDivisor::Mle).is_err());
        assert!(SelectionModel::new(Family::ExponentialRate, SelectionMechanism::carving(0.5, 1.0, Direction::Below), 10).is_err());
    }
}
