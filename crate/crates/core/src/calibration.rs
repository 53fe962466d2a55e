//! Frequentist calibration of selective posteriors.
//!
//! Probability integral transforms `Π(θ₀ | Y)` under repeated conditional
//! sampling, Kolmogorov–Smirnov tests of their uniformity, undercoverage of
//! one-sided credible bounds, the exact matching transform `H(θ; y)` of the
//! one-dimensional selective Gaussian model, and the credible-interval
//! content study of the winners model.

use crate::error::{Error, Result};
use crate::expansion::{
    normalized_score_stats, AsymptoticSelection, ClosedFormPStar, GaussianLimit, McOptions,
};
use crate::family::{Family, SufficientStats};
use crate::kernel::{
    ln_integrate_unimodal, ln_norm_cdf, ln_norm_cdf_scaled, mean_sd, norm_cdf, replicate, Envelope, QuadratureSpec, RngStream,
};
use crate::posterior::{
    gaussian_limit_posterior, selective_posterior_grid_cached, winners_exact_posterior, winners_limit_posterior,
    GridPosterior, GridSpec, Prior, WinnersExactTarget,
};
use crate::selection::{
    LnPhiTable, MechanismKind, SelectionMechanism, SelectionModel, Statistic, VarianceDivisor, DEFAULT_MAX_ATTEMPTS,
};

/// `sup_x |F_n(x) − x|` for a sample on `[0, 1]`.
pub fn ks_uniform(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - x).max(x - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Two-sample statistic `sup_x |F_a(x) − F_b(x)|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic critical value `c(α) = √(−ln(α/2)/2)` of `√n·D_n`.
pub fn ks_critical_value(level: f64) -> f64 {
    (-(level / 2.0).ln() / 2.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsTest {
    pub statistic: f64,
    /// Critical value of the statistic itself, `c(α)/√n`.
    pub critical: f64,
    pub reject: bool,
}

/// Kolmogorov–Smirnov test of uniformity on `[0, 1]`.
pub fn ks_uniform_test(xs: &[f64], level: f64) -> KsTest {
    let statistic = ks_uniform(xs);
    let critical = ks_critical_value(level) / (xs.len() as f64).sqrt();
    KsTest {
        statistic,
        critical,
        reject: statistic > critical,
    }
}

/// A probability integral transform, flagged when `θ₀` fell off the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitValue {
    pub value: f64,
    pub clamped: bool,
}

/// Posterior CDF at `θ₀`.
pub fn pit(post: &GridPosterior, theta0: f64) -> PitValue {
    let (lo, hi) = post.range();
    PitValue {
        value: post.cdf(theta0),
        clamped: theta0 < lo || theta0 > hi,
    }
}

/// PIT values of the exact selective posterior and of its Gaussian limit.
#[derive(Debug, Clone, PartialEq)]
pub struct PitReport {
    pub pit_exact: Vec<f64>,
    pub pit_limit: Vec<f64>,
    pub ks_exact: KsTest,
    pub ks_limit: KsTest,
    /// Replications whose `θ₀` fell outside a posterior grid.
    pub clamped: usize,
}

/// Repeated conditional sampling at `θ₀` of a one-parameter exponential model.
pub fn pit_experiment(
    model: &SelectionModel,
    theta0: f64,
    prior: &Prior,
    reps: usize,
    seed: u64,
    jobs: usize,
) -> Result<PitReport> {
    if reps < 100 {
        return Err(Error::domain("a PIT study needs at least 100 replications"));
    }
    let limit = GaussianLimit::for_model(model, &[theta0], McOptions::default(), None)?;
    let spread = 12.0 / (model.n() as f64).sqrt();
    let table = LnPhiTable::for_rate(model, theta0 * (-spread).exp(), theta0 * spread.exp(), 801)?;
    let rows = replicate(reps, seed, 0, jobs, |_, rng| {
        let y = model.sample_conditional(&[theta0], rng, DEFAULT_MAX_ATTEMPTS)?;
        let post = selective_posterior_grid_cached(&table, prior, &y, &GridSpec::default())?;
        let s = SufficientStats::of(&y)?;
        let z = normalized_score_stats(Family::ExponentialRate, &[theta0], &s)[0];
        let lim = gaussian_limit_posterior(&limit, z, &GridSpec::default())?;
        Ok((pit(&post, theta0), pit(&lim, 0.0)))
    })?;
    let pit_exact: Vec<f64> = rows.iter().map(|r| r.0.value).collect();
    let pit_limit: Vec<f64> = rows.iter().map(|r| r.1.value).collect();
    let clamped = rows.iter().filter(|r| r.0.clamped || r.1.clamped).count();
    Ok(PitReport {
        ks_exact: ks_uniform_test(&pit_exact, 0.01),
        ks_limit: ks_uniform_test(&pit_limit, 0.01),
        pit_exact,
        pit_limit,
        clamped,
    })
}

/// Increasing selection functions of a scalar Gaussian observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarSelection {
    Constant,
    /// `1{y > c}`.
    Threshold { c: f64 },
    /// `Φ((y − c)/s)`.
    Probit { c: f64, s: f64 },
}

/// `Y ~ N(θ, σ²)` observed only when selected by `selection`; flat prior on `θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectiveGaussian {
    pub sigma: f64,
    pub selection: ScalarSelection,
}

impl SelectiveGaussian {
    pub fn new(sigma: f64, selection: ScalarSelection) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::domain("sigma must be positive"));
        }
        if let ScalarSelection::Probit { s, .. } = selection {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::domain("probit scale must be positive"));
            }
        }
        Ok(Self { sigma, selection })
    }

    /// The one-dimensional Gaussian limit of a selection model, when its `p*` is increasing.
    pub fn from_limit(limit: &GaussianLimit) -> Result<Self> {
        if limit.dim() != 1 {
            return Err(Error::Capability("need a one-dimensional limit".into()));
        }
        let sigma = limit.marginal_sd()[0];
        let selection = match limit.selection() {
            AsymptoticSelection::Constant => ScalarSelection::Constant,
            AsymptoticSelection::ClosedForm(ClosedFormPStar::Indicator { cut, upper: true }) => {
                ScalarSelection::Threshold { c: *cut }
            }
            AsymptoticSelection::ClosedForm(ClosedFormPStar::Probit { a, b }) if *b > 0.0 => {
                ScalarSelection::Probit { c: -a / b, s: 1.0 / b }
            }
            _ => {
                return Err(Error::Capability(
                    "only increasing indicator or probit selection maps to a selective Gaussian".into(),
                ))
            }
        };
        Self::new(sigma, selection)
    }

    pub fn ln_weight(&self, y: f64) -> f64 {
        match self.selection {
            ScalarSelection::Constant => 0.0,
            ScalarSelection::Threshold { c } => {
                if y > c {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            ScalarSelection::Probit { c, s } => ln_norm_cdf((y - c) / s),
        }
    }

    /// `ln φ(θ)`.
    pub fn ln_phi(&self, theta: f64) -> f64 {
        match self.selection {
            ScalarSelection::Constant => 0.0,
            ScalarSelection::Threshold { c } => ln_norm_cdf((theta - c) / self.sigma),
            ScalarSelection::Probit { c, s } => ln_norm_cdf((theta - c) / s.hypot(self.sigma)),
        }
    }

    /// Rejection sampler for `Y` given selection.
    pub fn sample(&self, theta: f64, rng: &mut RngStream, max_attempts: usize) -> Result<f64> {
        for _ in 0..max_attempts {
            let y = theta + self.sigma * rng.normal();
            let accept = match self.selection {
                ScalarSelection::Constant => true,
                ScalarSelection::Threshold { c } => y > c,
                ScalarSelection::Probit { .. } => rng.uniform() < self.ln_weight(y).exp(),
            };
            if accept {
                return Ok(y);
            }
        }
        Err(Error::SelectionTooRare {
            attempts: max_attempts,
            accepted: 0,
            rate: self.ln_phi(theta).exp(),
        })
    }

    fn ln_posterior_kernel(&self, theta: f64, y: f64) -> f64 {
        let s = self.sigma;
        if let ScalarSelection::Threshold { c } = self.selection {
            // The Gaussian quadratics cancel in the left tail, leaving a linear decay.
            let x = (theta - c) / s;
            return 0.5 * (y - c) * (2.0 * theta - y - c) / (s * s) - ln_norm_cdf_scaled(x);
        }
        let d = (y - theta) / s;
        -0.5 * d * d - self.ln_phi(theta)
    }

    /// Flat-prior posterior CDF `Π(θ₀ | y)`.
    ///
    /// The log posterior is concave in `θ`, so both the partial and the full
    /// mass are integrals of log-concave functions.
    pub fn posterior_cdf(&self, theta0: f64, y: f64) -> Result<f64> {
        let spec = QuadratureSpec::relative(1e-10);
        let hint = Envelope::new(y, self.sigma);
        let f = |t: f64| self.ln_posterior_kernel(t, y);
        let total = ln_integrate_unimodal(f, f64::NEG_INFINITY, f64::INFINITY, hint, &[], &spec)?;
        let below = ln_integrate_unimodal(f, f64::NEG_INFINITY, theta0, hint, &[], &spec)?;
        if below < total + (0.5f64).ln() {
            return Ok((below - total).exp().clamp(0.0, 1.0));
        }
        let above = ln_integrate_unimodal(f, theta0, f64::INFINITY, hint, &[], &spec)?;
        Ok((1.0 - (above - total).exp()).clamp(0.0, 1.0))
    }

    /// `H(θ; y) = P_θ(selected, Y ≥ y)/φ(θ)`, by quadrature.
    pub fn matching_pit(&self, theta: f64, y: f64) -> Result<f64> {
        let s = self.sigma;
        let ln_num = match self.selection {
            ScalarSelection::Constant => return Ok(norm_cdf((theta - y) / s)),
            ScalarSelection::Threshold { c } => {
                // Integrate the normal density above max(y, c).
                let lo = y.max(c);
                let f = |x: f64| -0.5 * ((x - theta) / s).powi(2);
                let spec = QuadratureSpec::relative(1e-11);
                ln_integrate_unimodal(f, lo, f64::INFINITY, Envelope::new(theta, s), &[], &spec)?
                    - (s * (2.0 * std::f64::consts::PI).sqrt()).ln()
            }
            ScalarSelection::Probit { .. } => {
                let f = |x: f64| -0.5 * ((x - theta) / s).powi(2) + self.ln_weight(x);
                let spec = QuadratureSpec::relative(1e-11);
                ln_integrate_unimodal(f, y, f64::INFINITY, Envelope::new(theta, s), &[], &spec)?
                    - (s * (2.0 * std::f64::consts::PI).sqrt()).ln()
            }
        };
        Ok((ln_num - self.ln_phi(theta)).exp().clamp(0.0, 1.0))
    }
}

/// One row of an undercoverage study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UndercoverageRow {
    pub alpha: f64,
    /// Fraction of replications with `θ₀ ≤ Π^{-1}(α | Y)`.
    pub p_hat: f64,
    pub se: f64,
    /// False when `p_hat + 3·se < α` fails.
    pub undercovers: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UndercoverageReport {
    pub rows: Vec<UndercoverageRow>,
    /// `Π(θ₀ | Y)` per replication.
    pub pits: Vec<f64>,
    /// `H(θ₀; Y)` per replication, when computed.
    pub matching: Vec<f64>,
}

impl UndercoverageReport {
    pub fn from_pits(pits: Vec<f64>, matching: Vec<f64>, alphas: &[f64]) -> Self {
        let n = pits.len() as f64;
        let rows = alphas
            .iter()
            .map(|&alpha| {
                let p_hat = pits.iter().filter(|&&p| p <= alpha).count() as f64 / n;
                let se = (p_hat * (1.0 - p_hat) / n).sqrt();
                UndercoverageRow {
                    alpha,
                    p_hat,
                    se,
                    undercovers: p_hat + 3.0 * se < alpha,
                }
            })
            .collect();
        Self { rows, pits, matching }
    }

    pub fn all_undercover(&self) -> bool {
        self.rows.iter().all(|r| r.undercovers)
    }

    /// The α values where `p_hat + 3·se < α` fails.
    pub fn violations(&self) -> Vec<f64> {
        self.rows.iter().filter(|r| !r.undercovers).map(|r| r.alpha).collect()
    }

    /// `sup_α (α − p_hat)`.
    pub fn max_gap(&self) -> f64 {
        self.rows.iter().map(|r| r.alpha - r.p_hat).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// The subject of an undercoverage study.
#[derive(Debug, Clone)]
pub enum UndercoverageSubject {
    Gaussian(SelectiveGaussian),
    /// Exponential selection model under the flat prior on `θ > 0`.
    Model(SelectionModel),
}

/// Undercoverage of the flat-prior `α` credible upper bounds at `θ₀`.
pub fn undercoverage_check(
    subject: &UndercoverageSubject,
    theta0: f64,
    alphas: &[f64],
    reps: usize,
    seed: u64,
    jobs: usize,
) -> Result<UndercoverageReport> {
    if reps == 0 || alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
        return Err(Error::domain("need replications and levels in (0, 1)"));
    }
    match subject {
        UndercoverageSubject::Gaussian(g) => {
            let rows = replicate(reps, seed, 0, jobs, |_, rng| {
                let y = g.sample(theta0, rng, DEFAULT_MAX_ATTEMPTS)?;
                Ok((g.posterior_cdf(theta0, y)?, g.matching_pit(theta0, y)?))
            })?;
            let (pits, matching) = rows.into_iter().unzip();
            Ok(UndercoverageReport::from_pits(pits, matching, alphas))
        }
        UndercoverageSubject::Model(model) => {
            let spread = 12.0 / (model.n() as f64).sqrt();
            let table = LnPhiTable::for_rate(model, theta0 * (-spread).exp(), theta0 * spread.exp(), 801)?;
            let pits = replicate(reps, seed, 0, jobs, |_, rng| {
                let y = model.sample_conditional(&[theta0], rng, DEFAULT_MAX_ATTEMPTS)?;
                let post = selective_posterior_grid_cached(&table, &Prior::ImproperUniform, &y, &GridSpec::default())?;
                Ok(pit(&post, theta0).value)
            })?;
            Ok(UndercoverageReport::from_pits(pits, Vec::new(), alphas))
        }
    }
}

/// A cell of the winners coverage study: stage sizes and t threshold (`None` for no selection).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageSetting {
    pub n1: usize,
    pub n2: usize,
    pub threshold: Option<f64>,
}

impl CoverageSetting {
    pub fn new(n1: usize, n2: usize, threshold: f64) -> Self {
        Self {
            n1,
            n2,
            threshold: Some(threshold),
        }
    }

    pub fn model(&self, divisor: VarianceDivisor) -> Result<SelectionModel> {
        match self.threshold {
            Some(t) => SelectionModel::winners(self.n1, self.n2, t, divisor),
            None => SelectionModel::new(
                Family::GaussianMeanVar,
                SelectionMechanism {
                    kind: MechanismKind::NoSelection,
                    statistic: Statistic::SubsampleTStat { n1: self.n1, divisor },
                },
                self.n1 + self.n2,
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageOptions {
    pub theta0: [f64; 2],
    pub chain_steps: usize,
    pub divisor: VarianceDivisor,
    pub mc: McOptions,
    /// Lower and upper levels of the credible interval.
    pub levels: (f64, f64),
}

impl Default for CoverageOptions {
    fn default() -> Self {
        Self {
            theta0: [0.0, 1.0],
            chain_steps: 50_000,
            divisor: VarianceDivisor::Mle,
            mc: McOptions::quadrature(),
            levels: (0.05, 0.95),
        }
    }
}

/// Mean and spread of the limit-posterior content of exact credible intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRow {
    pub setting: CoverageSetting,
    /// 1 for `h₁` (mean), 2 for `h₂` (variance).
    pub param: usize,
    pub mean_content: f64,
    pub sd_content: f64,
    /// Replications that finished.
    pub reps: usize,
    /// Replications dropped because a chain got stuck.
    pub skipped: usize,
    pub contents: Vec<f64>,
}

/// Content under the Gaussian-limit posterior of the exact 90% intervals, winners model.
///
/// Per replication: draw a selected sample at `θ₀`, run the exact chain, take
/// equal-tailed intervals for `h₁` and `h₂`, and measure their probability
/// under a chain on the limit posterior at the realized score. More than 5%
/// stuck chains in a cell fails the run.
pub fn coverage_table(
    settings: &[CoverageSetting],
    reps: usize,
    seed: u64,
    jobs: usize,
    options: &CoverageOptions,
) -> Result<Vec<CoverageRow>> {
    if reps < 1 {
        return Err(Error::domain("need at least one replication"));
    }
    let theta0 = options.theta0;
    let mut rows = Vec::new();
    for (cell, setting) in settings.iter().enumerate() {
        let model = setting.model(options.divisor)?;
        let table = LnPhiTable::for_noncentrality(&model, 12.0, 401)?;
        let mut bank_rng = RngStream::new(seed, u64::MAX - cell as u64);
        let limit = GaussianLimit::for_model(&model, &theta0, options.mc, Some(&mut bank_rng))?
            .with_ln_phi_star_table(8.0, 161)?;
        let stream_base = (cell as u64) << 40;
        let outcomes = replicate(reps, seed, stream_base, jobs, |_, rng| {
            let y = model.sample_conditional(&theta0, rng, DEFAULT_MAX_ATTEMPTS)?;
            let target = WinnersExactTarget::with_table(table.clone(), &y)?;
            let s = target.stats();
            let z = normalized_score_stats(Family::GaussianMeanVar, &theta0, s);
            let exact = winners_exact_posterior(&target, &theta0, options.chain_steps, rng, None);
            let approx = winners_limit_posterior(&limit, &z, options.chain_steps, rng, None);
            let (exact, approx) = match (exact, approx) {
                (Ok(a), Ok(b)) => (a, b),
                (Err(Error::StuckChain { .. }), _) | (_, Err(Error::StuckChain { .. })) => return Ok(None),
                (Err(e), _) | (_, Err(e)) => return Err(e),
            };
            let mut content = [0.0; 2];
            for (j, c) in content.iter_mut().enumerate() {
                let lo = exact.quantile(j, options.levels.0);
                let hi = exact.quantile(j, options.levels.1);
                let kept = approx.kept();
                *c = kept.iter().filter(|s| s[j] >= lo && s[j] <= hi).count() as f64 / kept.len() as f64;
            }
            Ok(Some(content))
        })?;
        let done: Vec<[f64; 2]> = outcomes.iter().flatten().copied().collect();
        let skipped = reps - done.len();
        if skipped as f64 > 0.05 * reps as f64 {
            return Err(Error::StuckChain {
                step: 0,
                consecutive: skipped,
            });
        }
        for j in 0..2 {
            let contents: Vec<f64> = done.iter().map(|c| c[j]).collect();
            let (mean_content, sd_content) = mean_sd(&contents);
            rows.push(CoverageRow {
                setting: *setting,
                param: j + 1,
                mean_content,
                sd_content,
                reps: done.len(),
                skipped,
                contents,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_statistics() {
        assert!((ks_critical_value(0.01) - 1.6276).abs() < 1e-4);
        let grid: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        assert!((ks_uniform(&grid) - 0.005).abs() < 1e-12);
        assert!((ks_two_sample(&[1.0, 2.0], &[3.0, 4.0]) - 1.0).abs() < 1e-15);
        assert_eq!(ks_two_sample(&grid, &grid), 0.0);
    }

    #[test]
    fn threshold_matching_pit_has_a_closed_form() {
        let g = SelectiveGaussian::new(1.0, ScalarSelection::Threshold { c: 0.0 }).unwrap();
        for (theta, y) in [(1.0, 0.3), (1.0, 2.5), (-0.5, 0.1)] {
            let want = norm_cdf(theta - y) / norm_cdf(theta);
            assert!((g.matching_pit(theta, y).unwrap() - want).abs() < 1e-9);
        }
    }
}
