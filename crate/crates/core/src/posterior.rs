//! Selective posteriors on grids and by random-walk Metropolis.
//!
//! The selective posterior is `π(θ) Π f_θ(yᵢ) / φ_n(θ)` up to a constant.
//! One-parameter models are handled exactly on adaptive grids; the
//! two-parameter winners model is sampled by Metropolis chains.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expansion::GaussianLimit;
use crate::family::{Family, SufficientStats};
use crate::kernel::{empirical_quantile, ln_gamma, RngStream};
use crate::selection::{LnPhiTable, SelectionModel};

const COARSE_POINTS: usize = 201;
const DEFAULT_POINTS: usize = 2001;
const SPAN_SDS: f64 = 8.0;
const FINAL_SDS: f64 = 10.0;
const MAX_REFINE: f64 = 20.0;
const MAX_WIDENINGS: usize = 4;

/// Convention for the second parameter of a gamma prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GammaConvention {
    #[default]
    Rate,
    Scale,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prior {
    GammaShapeRate { shape: f64, rate: f64 },
    ImproperUniform,
    /// `π(θ) ∝ 1/θ` on `θ > 0`, the invariant prior of a scale family.
    ScaleInvariant,
    /// `π(μ, σ²) ∝ 1/σ`.
    JeffreysMeanVar,
}

impl Prior {
    /// Gamma prior with the second parameter read under `convention`.
    pub fn gamma(shape: f64, second: f64, convention: GammaConvention) -> Result<Self> {
        if !(shape > 0.0 && second > 0.0 && shape.is_finite() && second.is_finite()) {
            return Err(Error::domain("gamma prior parameters must be positive"));
        }
        let rate = match convention {
            GammaConvention::Rate => second,
            GammaConvention::Scale => 1.0 / second,
        };
        Ok(Prior::GammaShapeRate { shape, rate })
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        match *self {
            Prior::GammaShapeRate { shape, rate } => {
                let t = theta[0];
                if !(t > 0.0) {
                    return f64::NEG_INFINITY;
                }
                (shape - 1.0) * t.ln() - rate * t + shape * rate.ln() - ln_gamma(shape)
            }
            Prior::ImproperUniform => 0.0,
            Prior::ScaleInvariant => {
                if !(theta[0] > 0.0) {
                    return f64::NEG_INFINITY;
                }
                -theta[0].ln()
            }
            Prior::JeffreysMeanVar => {
                if theta.len() < 2 || !(theta[1] > 0.0) {
                    return f64::NEG_INFINITY;
                }
                -0.5 * theta[1].ln()
            }
        }
    }
}

/// How to place grid points.
#[derive(Debug, Clone, PartialEq)]
pub enum GridSpec {
    /// Locate the mass with a coarse pass, then place `points` over the mode ± 10 sd.
    Auto { points: usize },
    Explicit(Vec<f64>),
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Auto { points: DEFAULT_POINTS }
    }
}

/// A normalized density tabulated on a grid, integrated by the trapezoid rule.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPosterior {
    grid: Vec<f64>,
    density: Vec<f64>,
    cdf: Vec<f64>,
    log_normalizer: f64,
    flags: Vec<String>,
}

impl GridPosterior {
    /// Normalize log-weights on a strictly increasing grid.
    pub fn from_log_weights(grid: Vec<f64>, log_weights: &[f64]) -> Result<Self> {
        if grid.len() < 2 || grid.len() != log_weights.len() {
            return Err(Error::Grid("grid needs at least two points and one weight per point".into()));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|x| !x.is_finite()) {
            return Err(Error::Grid("grid must be finite and strictly increasing".into()));
        }
        if log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(Error::Grid("log-weights must not be NaN or +inf".into()));
        }
        let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::Degenerate("all log-weights are -inf".into()));
        }
        let w: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
        let mut cdf = vec![0.0; grid.len()];
        for i in 1..grid.len() {
            cdf[i] = cdf[i - 1] + 0.5 * (w[i] + w[i - 1]) * (grid[i] - grid[i - 1]);
        }
        let total = cdf[grid.len() - 1];
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Degenerate("posterior mass is zero on the grid".into()));
        }
        let density = w.iter().map(|v| v / total).collect();
        for c in cdf.iter_mut() {
            *c /= total;
        }
        Ok(Self {
            grid,
            density,
            cdf,
            log_normalizer: max + total.ln(),
            flags: Vec::new(),
        })
    }

    /// Tabulate `exp(log_w)` on an automatic or explicit grid within `support`.
    ///
    /// `center` and `scale` are a rough location and spread used to start
    /// the search. The result spans at least ± 8 sd around its mode, except
    /// where the support ends. A truncated grid understates the spread, so the
    /// range is widened up to four times before giving up.
    pub fn fit<F: Fn(f64) -> f64>(
        log_w: F,
        support: (f64, f64),
        center: f64,
        scale: f64,
        spec: &GridSpec,
    ) -> Result<Self> {
        if !(scale > 0.0) || !center.is_finite() {
            return Err(Error::Grid("grid search needs a finite center and positive scale".into()));
        }
        let bounds = Bounds::new(support, scale);
        let eval = |grid: Vec<f64>| {
            let lw: Vec<f64> = grid.iter().map(|&x| log_w(x)).collect();
            GridPosterior::from_log_weights(grid, &lw)
        };
        let (lo, hi, points) = match spec {
            GridSpec::Explicit(g) => {
                let post = eval(g.clone())?;
                if post.spans(&bounds) {
                    return Ok(post);
                }
                // A truncated grid understates the spread, so also step out by multiples of its width.
                let (mode, sd) = (post.mode(), post.sd());
                let reach = 2.0 * FINAL_SDS * sd.max(g[g.len() - 1] - g[0]);
                let lo = bounds.clamp(g[0].min(mode - reach));
                let hi = bounds.clamp(g[g.len() - 1].max(mode + reach));
                let mut widened = eval(linspace(lo, hi, g.len().max(DEFAULT_POINTS)))?;
                if !widened.spans(&bounds) {
                    return Err(Error::Grid(format!(
                        "grid [{lo}, {hi}] does not span ±{SPAN_SDS} sd around the mode"
                    )));
                }
                widened.flags.push("explicit grid widened".into());
                return Ok(widened);
            }
            GridSpec::Auto { points } => {
                let (lo, hi) = locate_mass(&log_w, &bounds, center, scale)?;
                (lo, hi, *points)
            }
        };
        if points < 3 {
            return Err(Error::Grid("automatic grid needs at least 3 points".into()));
        }
        // Heavy tails can stretch the range far beyond the bulk. Refine the
        // uniform grid so the hinted core keeps its resolution, up to a cap;
        // beyond the cap add a dense copy of the core instead.
        let core = (bounds.clamp(center - FINAL_SDS * scale), bounds.clamp(center + FINAL_SDS * scale));
        let build = |lo: f64, hi: f64| {
            let (a, b) = (core.0.max(lo), core.1.min(hi));
            let ratio = if b > a { (hi - lo) / (b - a) } else { 1.0 };
            if ratio <= MAX_REFINE {
                let k = ((points - 1) as f64 * ratio.max(1.0)).ceil() as usize + 1;
                return linspace(lo, hi, k);
            }
            let mut g = linspace(lo, hi, (points - 1) * MAX_REFINE as usize + 1);
            g.extend(linspace(a, b, points));
            g.sort_by(f64::total_cmp);
            g.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * (hi - lo));
            g
        };
        let (mut lo, mut hi) = (lo, hi);
        let mut post = eval(build(lo, hi))?;
        for _ in 0..MAX_WIDENINGS {
            if post.spans(&bounds) {
                return Ok(post);
            }
            let (mode, sd) = (post.mode(), post.sd());
            lo = bounds.clamp(lo.min(mode - 1.5 * FINAL_SDS * sd));
            hi = bounds.clamp(hi.max(mode + 1.5 * FINAL_SDS * sd));
            post = eval(build(lo, hi))?;
        }
        if post.spans(&bounds) {
            Ok(post)
        } else {
            Err(Error::Grid(format!("grid [{lo}, {hi}] does not span ±{SPAN_SDS} sd around the mode")))
        }
    }

    fn spans(&self, bounds: &Bounds) -> bool {
        let (mode, sd) = (self.mode(), self.sd());
        let (lo, hi) = (self.grid[0], self.grid[self.grid.len() - 1]);
        (mode > lo && lo <= mode - SPAN_SDS * sd || bounds.at_lower(lo))
            && (mode < hi && hi >= mode + SPAN_SDS * sd || bounds.at_upper(hi))
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn cdf_values(&self) -> &[f64] {
        &self.cdf
    }

    /// Log of the normalizing constant of the supplied log-weights.
    pub fn log_normalizer(&self) -> f64 {
        self.log_normalizer
    }

    /// Notes about numerical issues met while building the posterior.
    pub fn flags(&self) -> &[String] {
        &self.flags
    }

    pub fn range(&self) -> (f64, f64) {
        (self.grid[0], self.grid[self.grid.len() - 1])
    }

    /// Linear interpolation of the density, zero off the grid.
    pub fn density_at(&self, x: f64) -> f64 {
        interp(&self.grid, &self.density, x, 0.0, 0.0)
    }

    /// Linear interpolation of the CDF, clamped to 0 and 1 off the grid.
    pub fn cdf(&self, x: f64) -> f64 {
        interp(&self.grid, &self.cdf, x, 0.0, 1.0)
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain(format!("quantile level {p} outside [0, 1]")));
        }
        let k = self.cdf.partition_point(|&c| c < p);
        if k == 0 {
            return Ok(self.grid[0]);
        }
        if k >= self.grid.len() {
            return Ok(self.grid[self.grid.len() - 1]);
        }
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        let (x0, x1) = (self.grid[k - 1], self.grid[k]);
        Ok(if c1 > c0 { x0 + (p - c0) / (c1 - c0) * (x1 - x0) } else { x1 })
    }

    pub fn mode(&self) -> f64 {
        let mut best = 0;
        for (i, &d) in self.density.iter().enumerate() {
            if d > self.density[best] {
                best = i;
            }
        }
        self.grid[best]
    }

    fn moment(&self, f: impl Fn(f64) -> f64) -> f64 {
        let mut acc = 0.0;
        for i in 1..self.grid.len() {
            let (a, b) = (self.grid[i - 1], self.grid[i]);
            acc += 0.5 * (f(a) * self.density[i - 1] + f(b) * self.density[i]) * (b - a);
        }
        acc
    }

    pub fn mean(&self) -> f64 {
        self.moment(|x| x)
    }

    pub fn sd(&self) -> f64 {
        let m = self.mean();
        self.moment(|x| (x - m) * (x - m)).max(0.0).sqrt()
    }

    /// Push the density through the increasing affine map `x ↦ a + b·x`.
    pub fn affine(&self, a: f64, b: f64) -> Result<Self> {
        if !(b > 0.0) {
            return Err(Error::domain("affine maps of posteriors must be increasing"));
        }
        Ok(Self {
            grid: self.grid.iter().map(|x| a + b * x).collect(),
            density: self.density.iter().map(|d| d / b).collect(),
            cdf: self.cdf.clone(),
            log_normalizer: self.log_normalizer + b.ln(),
            flags: self.flags.clone(),
        })
    }
}

/// Support bounds, nudged inside open endpoints.
struct Bounds {
    lo: f64,
    hi: f64,
}

impl Bounds {
    fn new((lo, hi): (f64, f64), scale: f64) -> Self {
        let nudge = 1e-9 * scale;
        Self {
            lo: if lo.is_finite() { lo + nudge } else { lo },
            hi: if hi.is_finite() { hi - nudge } else { hi },
        }
    }

    fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    fn at_lower(&self, x: f64) -> bool {
        self.lo.is_finite() && x <= self.lo
    }

    fn at_upper(&self, x: f64) -> bool {
        self.hi.is_finite() && x >= self.hi
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn interp(x: &[f64], y: &[f64], t: f64, below: f64, above: f64) -> f64 {
    if t < x[0] {
        return below;
    }
    if t > x[x.len() - 1] {
        return above;
    }
    let k = x.partition_point(|&v| v <= t).clamp(1, x.len() - 1);
    let (x0, x1) = (x[k - 1], x[k]);
    y[k - 1] + (t - x0) / (x1 - x0) * (y[k] - y[k - 1])
}

/// Coarse search for the range holding the mass of `exp(log_w)`.
fn locate_mass<F: Fn(f64) -> f64>(log_w: &F, bounds: &Bounds, center: f64, scale: f64) -> Result<(f64, f64)> {
    let mut lo = bounds.clamp(center - FINAL_SDS * scale);
    let mut hi = bounds.clamp(center + FINAL_SDS * scale);
    if !(hi > lo) {
        return Err(Error::Grid("starting range is empty within the support".into()));
    }
    let mut grid = linspace(lo, hi, COARSE_POINTS);
    let mut lw: Vec<f64> = grid.iter().map(|&x| log_w(x)).collect();
    for _ in 0..8 {
        let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let left = lw[0] > max - 25.0 && !bounds.at_lower(lo);
        let right = lw[COARSE_POINTS - 1] > max - 25.0 && !bounds.at_upper(hi);
        if !left && !right {
            break;
        }
        let width = hi - lo;
        if left {
            lo = bounds.clamp(lo - width);
        }
        if right {
            hi = bounds.clamp(hi + width);
        }
        grid = linspace(lo, hi, COARSE_POINTS);
        lw = grid.iter().map(|&x| log_w(x)).collect();
    }
    let coarse = GridPosterior::from_log_weights(grid.clone(), &lw)?;
    let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mode, sd) = (coarse.mode(), coarse.sd().max((hi - lo) / COARSE_POINTS as f64));
    let first = lw.iter().position(|&v| v > max - 30.0).unwrap_or(0);
    let last = lw.iter().rposition(|&v| v > max - 30.0).unwrap_or(COARSE_POINTS - 1);
    // One coarse cell of slack on each side of the region above the cut.
    let cell = grid[1] - grid[0];
    let a = (mode - FINAL_SDS * sd).min(grid[first] - cell);
    let b = (mode + FINAL_SDS * sd).max(grid[last] + cell);
    Ok((bounds.clamp(a), bounds.clamp(b)))
}

/// Selective posterior of a one-parameter model on a grid.
pub fn selective_posterior_grid(
    model: &SelectionModel,
    prior: &Prior,
    y: &[f64],
    grid: &GridSpec,
) -> Result<GridPosterior> {
    posterior_with(model, prior, y, grid, |t| model.ln_phi(&[t]))
}

/// As [`selective_posterior_grid`], reading `ln φ_n` from a table.
pub fn selective_posterior_grid_cached(
    table: &LnPhiTable,
    prior: &Prior,
    y: &[f64],
    grid: &GridSpec,
) -> Result<GridPosterior> {
    posterior_with(table.model(), prior, y, grid, |t| table.ln_phi(&[t]))
}

fn posterior_with<P: Fn(f64) -> Result<f64>>(
    model: &SelectionModel,
    prior: &Prior,
    y: &[f64],
    grid: &GridSpec,
    ln_phi: P,
) -> Result<GridPosterior> {
    if model.family() != Family::ExponentialRate {
        return Err(Error::Capability(
            "grid posteriors are for the one-parameter exponential model".into(),
        ));
    }
    if y.len() != model.n() {
        return Err(Error::Dimension {
            expected: model.n(),
            got: y.len(),
        });
    }
    let stats = SufficientStats::of(y)?;
    if !(stats.mean > 0.0) {
        return Err(Error::domain("exponential posterior needs a positive sample mean"));
    }
    let family = model.family();
    let failure = std::cell::RefCell::new(None);
    let log_w = |t: f64| {
        if !(t > 0.0) {
            return f64::NEG_INFINITY;
        }
        let lp = prior.log_density(&[t]);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        match ln_phi(t) {
            Ok(phi) => lp + family.log_likelihood_stats(&[t], &stats) - phi,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        }
    };
    let center = 1.0 / stats.mean;
    let scale = center / (stats.n as f64).sqrt();
    let post = GridPosterior::fit(&log_w, (0.0, f64::INFINITY), center, scale, grid);
    match (post, failure.into_inner()) {
        (Err(_), Some(e)) => Err(e),
        (p, _) => p,
    }
}

/// The posterior of `h = √n(θ − θ₀)`.
pub fn local_posterior(gp: &GridPosterior, theta0: f64, n: usize) -> Result<GridPosterior> {
    let rn = (n as f64).sqrt();
    gp.affine(-rn * theta0, rn)
}

/// Posterior of `h` in a one-dimensional Gaussian limit under a flat prior:
/// `N(z, I_θ^{-1})` density at `h` divided by `φ*(h)`.
pub fn gaussian_limit_posterior(limit: &GaussianLimit, z: f64, grid: &GridSpec) -> Result<GridPosterior> {
    if limit.dim() != 1 {
        return Err(Error::Capability(
            "grid limit posteriors are one-dimensional; use a chain for the winners limit".into(),
        ));
    }
    let s = limit.marginal_sd()[0];
    let underflow = std::cell::Cell::new(false);
    let log_w = |h: f64| match limit.ln_phi_star(&[h]) {
        Ok(lp) if lp == f64::NEG_INFINITY => {
            underflow.set(true);
            f64::NEG_INFINITY
        }
        Ok(lp) => -0.5 * ((h - z) / s).powi(2) - lp,
        Err(_) => f64::NAN,
    };
    let mut post = GridPosterior::fit(log_w, (f64::NEG_INFINITY, f64::INFINITY), z, s, grid)?;
    // Bring the normalizer back to the Gaussian density scale.
    post.log_normalizer -= (s * (2.0 * std::f64::consts::PI).sqrt()).ln();
    if underflow.get() {
        post.flags.push("phi* underflowed on part of the grid; weights set to zero there".into());
    }
    Ok(post)
}

/// `½∫|a − b|` for two piecewise-linear grid densities.
///
/// Both densities are taken as zero off their grids. The integral is exact
/// for the piecewise-linear interpolants over the merged grid.
pub fn tv_posteriors(a: &GridPosterior, b: &GridPosterior) -> Result<f64> {
    let mut pts: Vec<f64> = a.grid.iter().chain(&b.grid).copied().collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let inside = |p: &GridPosterior, x0: f64, x1: f64| {
        let (lo, hi) = p.range();
        x0 >= lo && x1 <= hi
    };
    let mut total = 0.0;
    for w in pts.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        let (a0, a1) = if inside(a, x0, x1) {
            (a.density_at(x0), a.density_at(x1))
        } else {
            (0.0, 0.0)
        };
        let (b0, b1) = if inside(b, x0, x1) {
            (b.density_at(x0), b.density_at(x1))
        } else {
            (0.0, 0.0)
        };
        total += abs_linear_integral(a0 - b0, a1 - b1, x1 - x0);
    }
    if !total.is_finite() {
        return Err(Error::IncompatibleSupport("TV integral is not finite".into()));
    }
    Ok(0.5 * total)
}

/// `∫₀ʷ |linear from d0 to d1|`.
fn abs_linear_integral(d0: f64, d1: f64, w: f64) -> f64 {
    if d0 * d1 >= 0.0 {
        0.5 * (d0.abs() + d1.abs()) * w
    } else {
        0.5 * (d0 * d0 + d1 * d1) / (d0.abs() + d1.abs()) * w
    }
}

/// Anything with a quantile function.
pub trait Quantiles {
    fn quantile_at(&self, p: f64) -> Result<f64>;
}

impl Quantiles for GridPosterior {
    fn quantile_at(&self, p: f64) -> Result<f64> {
        if self.sd() == 0.0 {
            return Err(Error::Degenerate("posterior has no spread".into()));
        }
        self.quantile(p)
    }
}

/// Equal-tailed credible interval `(q(α₁), q(α₂))`.
pub fn credible_interval<Q: Quantiles + ?Sized>(post: &Q, alpha1: f64, alpha2: f64) -> Result<(f64, f64)> {
    if !(0.0 < alpha1 && alpha1 < alpha2 && alpha2 < 1.0) {
        return Err(Error::domain("credible levels need 0 < α₁ < α₂ < 1"));
    }
    Ok((post.quantile_at(alpha1)?, post.quantile_at(alpha2)?))
}

/// Settings of the random-walk Metropolis sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct RwmOptions {
    pub burn_in_fraction: f64,
    pub target_acceptance: f64,
    /// Initial proposal standard deviation per coordinate.
    pub initial_scale: Vec<f64>,
    /// Multiplier applied to the tuned proposal once adaptation ends.
    pub post_adaptation_factor: f64,
    pub stuck_limit: usize,
}

impl RwmOptions {
    pub fn new(initial_scale: Vec<f64>) -> Self {
        Self {
            burn_in_fraction: 0.2,
            target_acceptance: 0.3,
            initial_scale,
            post_adaptation_factor: 1.0,
            stuck_limit: 1000,
        }
    }
}

/// A Metropolis chain. `samples` holds every state including burn-in.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub samples: Vec<Vec<f64>>,
    pub burn_in: usize,
    /// Acceptance rate after burn-in.
    pub acceptance_rate: f64,
    /// Set when the acceptance rate falls outside (0.1, 0.6).
    pub flagged: bool,
    pub seed: u64,
    pub stream_id: u64,
}

impl Chain {
    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn kept(&self) -> &[Vec<f64>] {
        &self.samples[self.burn_in..]
    }

    pub fn marginal(&self, j: usize) -> Vec<f64> {
        self.kept().iter().map(|s| s[j]).collect()
    }

    pub fn mean(&self, j: usize) -> f64 {
        let m = self.marginal(j);
        m.iter().sum::<f64>() / m.len() as f64
    }

    pub fn effective_sample_size(&self, j: usize) -> f64 {
        effective_sample_size(&self.marginal(j))
    }

    pub fn quantile(&self, j: usize, p: f64) -> f64 {
        let mut m = self.marginal(j);
        m.sort_by(f64::total_cmp);
        empirical_quantile(&m, p)
    }

    /// Apply `f` to every state.
    pub fn map<F: Fn(&[f64]) -> Vec<f64>>(&self, f: F) -> Chain {
        Chain {
            samples: self.samples.iter().map(|s| f(s)).collect(),
            ..self.clone()
        }
    }

    /// One coordinate viewed as a sample for quantiles.
    pub fn coordinate(&self, j: usize) -> ChainMarginal<'_> {
        ChainMarginal { chain: self, index: j }
    }
}

/// A coordinate of a chain.
pub struct ChainMarginal<'a> {
    chain: &'a Chain,
    index: usize,
}

impl Quantiles for ChainMarginal<'_> {
    fn quantile_at(&self, p: f64) -> Result<f64> {
        if self.chain.kept().len() < 2 {
            return Err(Error::Degenerate("chain has fewer than two kept states".into()));
        }
        Ok(self.chain.quantile(self.index, p))
    }
}

/// Random-walk Metropolis with Gaussian proposals.
///
/// During burn-in the proposal scale follows a Robbins–Monro recursion toward
/// the target acceptance rate. Halfway through burn-in the proposal shape is
/// replaced by the empirical covariance of the second quarter of the chain.
/// Everything is frozen after burn-in.
pub fn rwm_sample<F: Fn(&[f64]) -> f64>(
    log_target: F,
    init: &[f64],
    steps: usize,
    rng: &mut RngStream,
    options: &RwmOptions,
) -> Result<Chain> {
    let d = init.len();
    if d == 0 || options.initial_scale.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: options.initial_scale.len(),
        });
    }
    if steps < 10 {
        return Err(Error::domain("a chain needs at least 10 steps"));
    }
    let mut lp = log_target(init);
    if !lp.is_finite() {
        return Err(Error::domain("log target is not finite at the initial state"));
    }
    let burn_in = ((steps as f64) * options.burn_in_fraction).floor() as usize;
    let mut chol = DMatrix::from_diagonal(&DVector::from_column_slice(&options.initial_scale));
    let mut log_scale = 0.0f64;
    let mut x = init.to_vec();
    let mut samples = Vec::with_capacity(steps);
    let mut rejections = 0usize;
    let mut accepted_after = 0usize;
    let mut proposal = vec![0.0; d];
    let mut noise = DVector::zeros(d);
    for step in 0..steps {
        if step == burn_in / 2 && burn_in >= 40 {
            if let Some(l) = empirical_cholesky(&samples[burn_in / 4..], d) {
                chol = l * (2.38 / (d as f64).sqrt());
                log_scale = 0.0;
            }
        }
        if step == burn_in {
            log_scale += options.post_adaptation_factor.ln();
        }
        for v in noise.iter_mut() {
            *v = rng.normal();
        }
        let jump = &chol * &noise * log_scale.exp();
        for i in 0..d {
            proposal[i] = x[i] + jump[i];
        }
        let lq = log_target(&proposal);
        let accept = lq.is_finite() && (lq - lp >= 0.0 || rng.uniform().ln() < lq - lp);
        if accept {
            x.copy_from_slice(&proposal);
            lp = lq;
            rejections = 0;
            if step >= burn_in {
                accepted_after += 1;
            }
        } else {
            rejections += 1;
            if rejections >= options.stuck_limit {
                return Err(Error::StuckChain {
                    step,
                    consecutive: rejections,
                });
            }
        }
        if step < burn_in {
            let gain = 1.0 / ((step + 1) as f64).powf(0.6);
            log_scale += gain * (f64::from(u8::from(accept)) - options.target_acceptance);
        }
        samples.push(x.clone());
    }
    let acceptance_rate = accepted_after as f64 / (steps - burn_in).max(1) as f64;
    Ok(Chain {
        samples,
        burn_in,
        acceptance_rate,
        flagged: !(acceptance_rate > 0.1 && acceptance_rate < 0.6),
        seed: rng.seed(),
        stream_id: rng.stream_id(),
    })
}

fn empirical_cholesky(xs: &[Vec<f64>], d: usize) -> Option<DMatrix<f64>> {
    if xs.len() < 2 * d + 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mut mean = vec![0.0; d];
    for x in xs {
        for i in 0..d {
            mean[i] += x[i] / n;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for x in xs {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (x[i] - mean[i]) * (x[j] - mean[j]) / (n - 1.0);
            }
        }
    }
    if (0..d).any(|i| !(cov[(i, i)] > 0.0)) {
        return None;
    }
    cov.cholesky().map(|c| c.l())
}

/// Effective sample size by Geyer's initial monotone positive sequence.
pub fn effective_sample_size(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return n as f64;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = xs.iter().map(|x| x - mean).collect();
    let acov = |k: usize| centered[..n - k].iter().zip(&centered[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let g0 = acov(0);
    if g0 == 0.0 {
        return n as f64;
    }
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n / 2 {
        let pair = (acov(2 * m) + acov(2 * m + 1)).min(prev);
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        prev = pair;
        m += 1;
    }
    let tau = (-1.0 + 2.0 * sum / g0).max(1.0 / n as f64);
    n as f64 / tau
}

/// Exact selective posterior of the winners model.
///
/// The chain runs in `(μ, η = ln σ²)`. With the prior `π ∝ 1/σ` and the
/// Jacobian `e^η`, the log target is `ℓ(μ, e^η) + η/2 − ln φ_n`.
#[derive(Debug, Clone)]
pub struct WinnersExactTarget {
    table: LnPhiTable,
    stats: SufficientStats,
}

impl WinnersExactTarget {
    pub fn new(model: &SelectionModel, y: &[f64]) -> Result<Self> {
        Self::with_table(LnPhiTable::for_noncentrality(model, 12.0, 401)?, y)
    }

    /// Reuse a noncentrality table across datasets.
    pub fn with_table(table: LnPhiTable, y: &[f64]) -> Result<Self> {
        if !table.model().is_winners() {
            return Err(Error::Capability("the winners target needs the winners model".into()));
        }
        if y.len() != table.model().n() {
            return Err(Error::Dimension {
                expected: table.model().n(),
                got: y.len(),
            });
        }
        Ok(Self {
            stats: SufficientStats::of(y)?,
            table,
        })
    }

    pub fn log_density(&self, mu: f64, eta: f64) -> f64 {
        let v = eta.exp();
        let theta = [mu, v];
        let ll = Family::GaussianMeanVar.log_likelihood_stats(&theta, &self.stats);
        match self.table.ln_phi(&theta) {
            Ok(lp) => ll + 0.5 * eta - lp,
            Err(_) => f64::NAN,
        }
    }

    pub fn stats(&self) -> &SufficientStats {
        &self.stats
    }

    /// Chain over `(μ, η)` started at the MLE.
    pub fn sample(&self, steps: usize, rng: &mut RngStream, options: Option<RwmOptions>) -> Result<Chain> {
        let n = self.stats.n as f64;
        let v = self.stats.var_mle;
        if !(v > 0.0) {
            return Err(Error::domain("winners posterior needs a nondegenerate sample"));
        }
        let options = options.unwrap_or_else(|| RwmOptions::new(vec![(v / n).sqrt(), (2.0 / n).sqrt()]));
        rwm_sample(|x| self.log_density(x[0], x[1]), &[self.stats.mean, v.ln()], steps, rng, &options)
    }
}

/// Exact winners posterior chain expressed in the local parameter `h = √n(θ − θ₀)`.
pub fn winners_exact_posterior(
    target: &WinnersExactTarget,
    theta0: &[f64],
    steps: usize,
    rng: &mut RngStream,
    options: Option<RwmOptions>,
) -> Result<Chain> {
    let chain = target.sample(steps, rng, options)?;
    let rn = (target.stats.n as f64).sqrt();
    let (m0, v0) = (theta0[0], theta0[1]);
    Ok(chain.map(|s| vec![rn * (s[0] - m0), rn * (s[1].exp() - v0)]))
}

/// Chain on the Gaussian-limit posterior of `h` given `z`, flat prior.
pub fn winners_limit_posterior(
    limit: &GaussianLimit,
    z: &[f64],
    steps: usize,
    rng: &mut RngStream,
    options: Option<RwmOptions>,
) -> Result<Chain> {
    let options = options.unwrap_or_else(|| RwmOptions::new(limit.marginal_sd()));
    rwm_sample(
        |h| limit.log_posterior_kernel(h, z).unwrap_or(f64::NAN),
        z,
        steps,
        rng,
        &options,
    )
}
