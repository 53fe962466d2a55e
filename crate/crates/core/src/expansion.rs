//! Gaussian limits of selection models.
//!
//! Under `θ`, the normalized score `Z_n = n^{-1/2} I_θ^{-1} Σ ∇l_θ(Yᵢ)` of a
//! selected sample behaves like a draw from `N(h, I_θ^{-1})` weighted by the
//! asymptotic selection function `p*(z) = E_θ[p_n(Yⁿ) | Z_n = z]`. This module
//! builds `p*`, the selection probability `φ*(h) = E p*(Z)`, the log-ratio
//! curves `r_n` and `r*_n`, and the exact total variation distance between
//! the law of `Z_n` under selection and its limit.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::family::{Family, ParametricFamily, SufficientStats};
use crate::kernel::{
    integrate_enveloped, integrate_pieces, ln_beta, ln_gamma, ln_gamma_pdf, ln_integrate_unimodal, ln_norm_cdf,
    ln_reg_beta_pq, norm_cdf,
    empirical_quantile, norm_pdf, norm_sf, replicate, Envelope, QuadratureSpec, RngStream, UniformGrid2d,
};
use crate::selection::{Direction, MechanismKind, SelectionModel, Statistic, VarianceDivisor};

/// `n^{-1/2} I_θ^{-1} Σ ∇l_θ(yᵢ)` for any family.
pub fn normalized_score<F: ParametricFamily + ?Sized>(family: &F, theta: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    family.check_theta(theta)?;
    if y.is_empty() {
        return Err(Error::domain("empty sample"));
    }
    let mut total = family.score(theta, y[0]);
    for &v in &y[1..] {
        total += family.score(theta, v);
    }
    let info = family.fisher_info(theta);
    let chol = info
        .cholesky()
        .ok_or_else(|| Error::Degenerate("Fisher information is not positive definite".into()))?;
    let z = chol.solve(&total) / (y.len() as f64).sqrt();
    Ok(z.iter().copied().collect())
}

/// Normalized score from sufficient statistics, for the two concrete families.
pub fn normalized_score_stats(family: Family, theta: &[f64], s: &SufficientStats) -> Vec<f64> {
    let rn = (s.n as f64).sqrt();
    match family {
        Family::ExponentialRate => vec![theta[0] * theta[0] * rn * (1.0 / theta[0] - s.mean)],
        Family::GaussianMeanVar => {
            let d = s.mean - theta[0];
            vec![rn * d, rn * (s.var_mle - theta[1] + d * d)]
        }
    }
}

/// Sample mean implied by a normalized score in the exponential model.
pub fn exponential_mean_of_score(theta: f64, n: usize, z: f64) -> f64 {
    1.0 / theta - z / (theta * theta * (n as f64).sqrt())
}

/// Whether `p*` is available in closed form or by conditional Monte Carlo.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PStarKind {
    ClosedForm,
    ConditionalMc,
    ConditionalQuadrature,
}

/// Closed-form `p*` for the exponential mechanisms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClosedFormPStar {
    /// `1{z > cut}` when `upper`, else `1{z < cut}`.
    Indicator { cut: f64, upper: bool },
    /// `Φ(a + b·z)`.
    Probit { a: f64, b: f64 },
    /// `exp{−(a + b·z)²/2}`, a Gaussian density rescaled to have supremum 1.
    GaussianWeight { a: f64, b: f64 },
    /// Prefix of `m` out of `n` observations with mean below or above `threshold`.
    Carving {
        theta: f64,
        n: usize,
        m: usize,
        threshold: f64,
        direction: Direction,
    },
}

impl ClosedFormPStar {
    pub fn eval(&self, z: f64) -> f64 {
        match *self {
            ClosedFormPStar::Indicator { cut, upper } => {
                if (upper && z > cut) || (!upper && z < cut) {
                    1.0
                } else {
                    0.0
                }
            }
            ClosedFormPStar::Probit { a, b } => norm_cdf(a + b * z),
            ClosedFormPStar::GaussianWeight { a, b } => {
                let w = a + b * z;
                (-0.5 * w * w).exp()
            }
            ClosedFormPStar::Carving { .. } => self.ln_eval(z).exp(),
        }
    }

    pub fn ln_eval(&self, z: f64) -> f64 {
        match *self {
            ClosedFormPStar::Probit { a, b } => ln_norm_cdf(a + b * z),
            ClosedFormPStar::GaussianWeight { a, b } => {
                let w = a + b * z;
                -0.5 * w * w
            }
            ClosedFormPStar::Carving {
                theta,
                n,
                m,
                threshold,
                direction,
            } => carving_ln_pstar(theta, n, m, threshold, direction, z),
            ClosedFormPStar::Indicator { .. } => self.eval(z).ln(),
        }
    }

    /// Discontinuity of `p*`, if any.
    pub fn jump(&self) -> Option<f64> {
        match *self {
            ClosedFormPStar::Indicator { cut, .. } => Some(cut),
            _ => None,
        }
    }

    /// `ln φ*(h)` for `Z ~ N(h, s²)`, where a closed form exists.
    pub fn ln_phi_star(&self, h: f64, s: f64) -> Option<f64> {
        match *self {
            ClosedFormPStar::Indicator { cut, upper } => Some(if upper {
                ln_norm_cdf((h - cut) / s)
            } else {
                ln_norm_cdf((cut - h) / s)
            }),
            ClosedFormPStar::Probit { a, b } => Some(ln_norm_cdf((a + b * h) / (1.0 + b * b * s * s).sqrt())),
            ClosedFormPStar::GaussianWeight { a, b } => {
                let v = 1.0 + b * b * s * s;
                let w = a + b * h;
                Some(-0.5 * v.ln() - 0.5 * w * w / v)
            }
            ClosedFormPStar::Carving { .. } => None,
        }
    }
}

/// `ln p*` for carving: the probability that the first `m` of `n` exponential
/// observations have mean below (or above) the threshold, given the full mean.
///
/// Given the total `S = n·ȳ`, the prefix share `X` of the total is
/// Beta(m, n − m), and the prefix mean is `X·S/m`.
fn carving_ln_pstar(theta: f64, n: usize, m: usize, threshold: f64, direction: Direction, z: f64) -> f64 {
    let ybar = exponential_mean_of_score(theta, n, z);
    let below = direction == Direction::Below;
    if ybar <= 0.0 {
        // Off the support of Z_n; continuous extension.
        return if below { 0.0 } else { f64::NEG_INFINITY };
    }
    let cut = m as f64 * threshold / (n as f64 * ybar);
    if cut >= 1.0 {
        return if below { 0.0 } else { f64::NEG_INFINITY };
    }
    if cut <= 0.0 {
        return if below { f64::NEG_INFINITY } else { 0.0 };
    }
    let (lo, hi) = if below { (0.0, cut) } else { (cut, 1.0) };
    ln_beta_mass(m as f64, (n - m) as f64, lo, hi)
}

/// `ln` of the Beta(a, b) probability of `[lo, hi]`.
fn ln_beta_mass(a: f64, b: f64, lo: f64, hi: f64) -> f64 {
    let ln_norm = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b);
    let ln_pdf = |x: f64| {
        if x <= 0.0 || x >= 1.0 {
            return f64::NEG_INFINITY;
        }
        (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln()
    };
    let mean = a / (a + b);
    let sd = (a * b / ((a + b) * (a + b) * (a + b + 1.0))).sqrt();
    let spec = QuadratureSpec::relative(1e-10);
    match ln_integrate_unimodal(ln_pdf, lo, hi, Envelope::new(mean, sd), &[], &spec) {
        Ok(v) => (ln_norm + v).min(0.0),
        Err(_) => f64::NAN,
    }
}

/// How the winners `p*` is evaluated at a query `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WinnersMethod {
    /// Acceptance fraction over a bank of standardized configurations.
    #[default]
    MonteCarlo,
    /// One-dimensional quadrature over the exact conditional law of the first stage.
    Quadrature,
}

/// Settings of the conditional `p*` for the winners model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McOptions {
    pub draws: usize,
    /// Points per axis of the cached `z` grid; zero disables the cache.
    pub grid_points: usize,
    /// Half-width of the cached grid in marginal standard deviations of `Z`.
    pub grid_half_width: f64,
    pub method: WinnersMethod,
}

impl Default for McOptions {
    fn default() -> Self {
        Self {
            draws: 4000,
            grid_points: 61,
            grid_half_width: 6.0,
            method: WinnersMethod::MonteCarlo,
        }
    }
}

impl McOptions {
    /// Quadrature `p*` cached on a wide, fine grid; accurate far into the tails.
    pub fn quadrature() -> Self {
        Self {
            draws: 0,
            grid_points: 161,
            grid_half_width: 10.0,
            method: WinnersMethod::Quadrature,
        }
    }
}

/// Conditional `p*` for the winners model.
///
/// Given the full-sample sufficient statistics `(Ȳ, V)`, the sample is
/// `Ȳ + √V·E` where `E` is a standardized configuration whose law does not
/// depend on `θ`. The Monte Carlo method draws a bank of such
/// configurations once and reuses it for every `z`, which keeps the
/// estimated surface smooth in `z`.
///
/// The quadrature method uses the law of `E` directly: with
/// `X = ē₁·√(n₁/n₂)` and `W₁` the within-stage sum of squares of the first
/// `n₁` coordinates, `X` has density `∝ (1 − x²)^{(n−4)/2}` on `(−1, 1)` and
/// `W₁ / (n(1 − X²))` is `Beta((n₁−1)/2, (n₂−1)/2)` given `X`.
#[derive(Debug, Clone)]
pub struct WinnersPStar {
    mu: f64,
    sigma2: f64,
    n: usize,
    n1: usize,
    threshold: f64,
    direction: Direction,
    variance_scale: f64,
    method: WinnersMethod,
    /// Per configuration: mean and MLE variance of its first `n1` coordinates.
    bank: Vec<(f64, f64)>,
    cache: Option<UniformGrid2d>,
}

impl WinnersPStar {
    fn new(model: &SelectionModel, theta: &[f64], options: McOptions, rng: Option<&mut RngStream>) -> Result<Self> {
        let Statistic::SubsampleTStat { n1, divisor } = model.mechanism().statistic else {
            return Err(Error::Capability("conditional Monte Carlo p* is implemented for the winners model".into()));
        };
        let MechanismKind::Deterministic { threshold, direction } = model.mechanism().kind else {
            return Err(Error::Capability("winners p* needs a deterministic t-test".into()));
        };
        let n = model.n();
        let mut bank = Vec::new();
        if options.method == WinnersMethod::MonteCarlo {
            let rng = rng.ok_or_else(|| Error::Misuse("conditional Monte Carlo p* needs an RngStream".into()))?;
            if options.draws < 2 {
                return Err(Error::domain("conditional Monte Carlo needs at least two draws"));
            }
            bank.reserve(options.draws);
            let mut x = vec![0.0; n];
            for _ in 0..options.draws {
                for v in x.iter_mut() {
                    *v = rng.normal();
                }
                let all = SufficientStats::of(&x)?;
                let sd = all.var_mle.sqrt();
                let head: Vec<f64> = x[..n1].iter().map(|v| (v - all.mean) / sd).collect();
                let h = SufficientStats::of(&head)?;
                bank.push((h.mean, h.var_mle));
            }
        } else if n1 < 2 || n - n1 < 2 {
            return Err(Error::domain("quadrature p* needs at least two observations per stage"));
        }
        let variance_scale = match divisor {
            VarianceDivisor::Mle => 1.0,
            VarianceDivisor::Unbiased => n1 as f64 / (n1 as f64 - 1.0),
        };
        let mut out = Self {
            mu: theta[0],
            sigma2: theta[1],
            n,
            n1,
            threshold,
            direction,
            variance_scale,
            method: options.method,
            bank,
            cache: None,
        };
        if options.grid_points >= 2 {
            let (s1, s2) = out.marginal_sd();
            let w = options.grid_half_width;
            let k = options.grid_points;
            let grid = UniformGrid2d::from_fn((-w * s1, w * s1, k), (-w * s2, w * s2, k), |a, b| {
                out.eval_direct(&[a, b])
            })?;
            out.cache = Some(grid);
        }
        Ok(out)
    }

    fn marginal_sd(&self) -> (f64, f64) {
        (self.sigma2.sqrt(), (2.0f64).sqrt() * self.sigma2)
    }

    pub fn draws(&self) -> usize {
        self.bank.len()
    }

    pub fn method(&self) -> WinnersMethod {
        self.method
    }

    pub fn cache(&self) -> Option<&UniformGrid2d> {
        self.cache.as_ref()
    }

    /// `p*(z)` by the configured method, without the cache.
    pub fn eval_direct(&self, z: &[f64]) -> f64 {
        match self.method {
            WinnersMethod::MonteCarlo => self.eval_bank(z),
            WinnersMethod::Quadrature => self.ln_eval_quadrature(z).exp(),
        }
    }

    /// `ln p*(z)` by quadrature over the first-stage law, finite deep into the tails.
    pub fn ln_eval_quadrature(&self, z: &[f64]) -> f64 {
        let n = self.n as f64;
        let (n1, n2) = (self.n1 as f64, (self.n - self.n1) as f64);
        let ybar = self.mu + z[0] / n.sqrt();
        let v = self.sigma2 + z[1] / n.sqrt() - z[0] * z[0] / n;
        if !(v > 0.0) {
            return f64::NEG_INFINITY;
        }
        // Selected when A(x) > R(x)·√Q, with Q the beta variable; flip signs for the lower tail.
        let sign = match self.direction {
            Direction::Above => 1.0,
            Direction::Below => -1.0,
        };
        let slope = (v * n2 / n1).sqrt();
        let t = sign * self.threshold;
        let (qa, qb) = ((n1 - 1.0) / 2.0, (n2 - 1.0) / 2.0);
        let ln_norm = -ln_beta(0.5, (n - 2.0) / 2.0);
        let power = (n - 4.0) / 2.0;
        let ln_integrand = |x: f64| {
            let one_minus = (1.0 - x) * (1.0 + x);
            if !(one_minus > 0.0) {
                return f64::NEG_INFINITY;
            }
            let a = sign * (ybar + slope * x);
            let r = t * (self.variance_scale * v * n * one_minus).sqrt() / n1;
            let ln_accept = if r == 0.0 {
                if a > 0.0 {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            } else if r > 0.0 {
                if a <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    let q = (a / r).powi(2);
                    if q >= 1.0 {
                        0.0
                    } else {
                        ln_reg_beta_pq(qa, qb, q).map_or(f64::NEG_INFINITY, |p| p.0)
                    }
                }
            } else if a >= 0.0 {
                0.0
            } else {
                let q = (a / r).powi(2);
                if q >= 1.0 {
                    f64::NEG_INFINITY
                } else {
                    ln_reg_beta_pq(qa, qb, q).map_or(f64::NEG_INFINITY, |p| p.1)
                }
            };
            ln_norm + power * one_minus.ln() + ln_accept
        };
        // Acceptance needs A > 0 when R ≥ 0, so the lower limit can start at the root of A.
        let root = -ybar / slope;
        let lo = if t >= 0.0 {
            if sign > 0.0 {
                root.max(-1.0)
            } else {
                -1.0
            }
        } else {
            -1.0
        };
        let hi = if t >= 0.0 && sign < 0.0 { root.min(1.0) } else { 1.0 };
        if !(hi > lo) {
            return f64::NEG_INFINITY;
        }
        let width = 1.0 / n.sqrt();
        let hint = Envelope::new(0.0f64.clamp(lo, hi).clamp(lo + 1e-12, hi - 1e-12), width);
        let spec = QuadratureSpec::relative(1e-9);
        match ln_integrate_unimodal(ln_integrand, lo, hi, hint, &[], &spec) {
            Ok(v) => v.min(0.0),
            Err(_) => f64::NAN,
        }
    }

    fn eval_bank(&self, z: &[f64]) -> f64 {
        let n = self.n as f64;
        let ybar = self.mu + z[0] / n.sqrt();
        let v = self.sigma2 + z[1] / n.sqrt() - z[0] * z[0] / n;
        if !(v > 0.0) {
            return 0.0;
        }
        let sv = v.sqrt();
        let scale = self.variance_scale / self.n1 as f64;
        let hits = self
            .bank
            .iter()
            .filter(|&&(m1, w1)| {
                let mean1 = ybar + sv * m1;
                let se = (v * w1 * scale).sqrt();
                match self.direction {
                    Direction::Above => mean1 > self.threshold * se,
                    Direction::Below => mean1 < self.threshold * se,
                }
            })
            .count();
        hits as f64 / self.bank.len() as f64
    }

    /// Binomial standard error of [`Self::eval_direct`]; zero for quadrature.
    pub fn std_error(&self, z: &[f64]) -> f64 {
        if self.method == WinnersMethod::Quadrature {
            return 0.0;
        }
        let p = self.eval_bank(z);
        (p * (1.0 - p) / self.bank.len() as f64).sqrt()
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        match &self.cache {
            Some(g) => g.bilinear(z[0], z[1]),
            None => self.eval_direct(z),
        }
    }

    /// `φ*(h)` of the cached bilinear surface, integrated exactly against `N(h, diag(s₁², s₂²))`.
    fn phi_star_cached(&self, g: &UniformGrid2d, h: &[f64]) -> f64 {
        let (s1, s2) = self.marginal_sd();
        let a = hat_expectations(g.x0, g.dx, g.nx, h[0], s1);
        let b = hat_expectations(g.y0, g.dy, g.ny, h[1], s2);
        let mut total = 0.0;
        for (i, ai) in a.iter().enumerate() {
            if *ai == 0.0 {
                continue;
            }
            let row: f64 = (0..g.ny).map(|j| g.get(i, j) * b[j]).sum();
            total += ai * row;
        }
        total.clamp(0.0, 1.0)
    }
}

/// `P(α < Z < β)` for standard normal `Z`, accurate in both tails.
fn normal_interval(alpha: f64, beta: f64) -> f64 {
    if alpha > 0.0 {
        norm_sf(alpha) - norm_sf(beta)
    } else {
        norm_cdf(beta) - norm_cdf(alpha)
    }
}

/// `E[(Z − c)·1{lo < Z < hi}]` for `Z ~ N(h, s²)`.
fn linear_moment(lo: f64, hi: f64, c: f64, h: f64, s: f64) -> f64 {
    let a = (lo - h) / s;
    let b = (hi - h) / s;
    (h - c) * normal_interval(a, b) + s * (norm_pdf(a) - norm_pdf(b))
}

/// Expectations of the piecewise-linear hat functions of a uniform grid
/// (edge hats extended as constants) under `N(h, s²)`.
fn hat_expectations(x0: f64, dx: f64, k: usize, h: f64, s: f64) -> Vec<f64> {
    let node = |i: usize| x0 + dx * i as f64;
    let mut out = vec![0.0; k];
    // Quick exit for nodes whose support is far from the Gaussian mass.
    let reach = 40.0 * s;
    for (i, slot) in out.iter_mut().enumerate() {
        let left = if i == 0 { f64::NEG_INFINITY } else { node(i - 1) };
        let right = if i + 1 == k { f64::INFINITY } else { node(i + 1) };
        if right < h - reach || left > h + reach {
            continue;
        }
        let c = node(i);
        let mut v = 0.0;
        if i == 0 {
            v += normal_interval(f64::NEG_INFINITY, (c - h) / s);
        } else {
            v += linear_moment(left, c, left, h, s) / dx;
        }
        if i + 1 == k {
            v += normal_interval((c - h) / s, f64::INFINITY);
        } else {
            v -= linear_moment(c, right, right, h, s) / dx;
        }
        *slot = v.max(0.0);
    }
    out
}

/// Representation of `p*(z; θ)`.
#[derive(Debug, Clone)]
pub enum AsymptoticSelection {
    /// No selection: `p* ≡ 1`.
    Constant,
    ClosedForm(ClosedFormPStar),
    ConditionalMc(Box<WinnersPStar>),
}

impl AsymptoticSelection {
    pub fn kind(&self) -> PStarKind {
        match self {
            AsymptoticSelection::ConditionalMc(w) => match w.method() {
                WinnersMethod::MonteCarlo => PStarKind::ConditionalMc,
                WinnersMethod::Quadrature => PStarKind::ConditionalQuadrature,
            },
            _ => PStarKind::ClosedForm,
        }
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        match self {
            AsymptoticSelection::Constant => 1.0,
            AsymptoticSelection::ClosedForm(c) => c.eval(z[0]),
            AsymptoticSelection::ConditionalMc(w) => w.eval(z),
        }
    }
}

/// Build `p*(·; θ)` for a model.
///
/// Exponential mechanisms get their closed forms; the winners model gets the
/// conditional Monte Carlo estimate, whose bank of configurations is drawn
/// from `rng`.
pub fn asymptotic_selection_fn(
    model: &SelectionModel,
    theta: &[f64],
    options: McOptions,
    rng: Option<&mut RngStream>,
) -> Result<AsymptoticSelection> {
    model.family().check_theta(theta)?;
    if !model.has_selection() {
        return Ok(AsymptoticSelection::Constant);
    }
    if model.is_winners() {
        return Ok(AsymptoticSelection::ConditionalMc(Box::new(WinnersPStar::new(
            model, theta, options, rng,
        )?)));
    }
    if model.family() != Family::ExponentialRate {
        return Err(Error::Capability(
            "closed-form p* is implemented for the exponential family".into(),
        ));
    }
    let th = theta[0];
    let n = model.n();
    let rn = (n as f64).sqrt();
    let cf = match model.mechanism().kind {
        MechanismKind::Deterministic { threshold, direction } => {
            // ȳ < t  ⇔  z > θ²√n(1/θ − t).
            let cut = th * th * rn * (1.0 / th - threshold);
            ClosedFormPStar::Indicator {
                cut,
                upper: direction == Direction::Below,
            }
        }
        MechanismKind::Carving {
            threshold, direction, ..
        } => ClosedFormPStar::Carving {
            theta: th,
            n,
            m: model.prefix_len(),
            threshold,
            direction,
        },
        MechanismKind::Randomized {
            threshold,
            sigma_w,
            direction,
        } => {
            let a = rn * (threshold - 1.0 / th) / sigma_w;
            let b = 1.0 / (sigma_w * th * th);
            match direction {
                Direction::Below => ClosedFormPStar::Probit { a, b },
                Direction::Above => ClosedFormPStar::Probit { a: -a, b: -b },
            }
        }
        MechanismKind::ConditionOnValue { observed, sigma_w } => ClosedFormPStar::GaussianWeight {
            a: (observed - rn / th) / sigma_w,
            b: 1.0 / (th * th * sigma_w),
        },
        MechanismKind::NoSelection => unreachable!(),
    };
    Ok(AsymptoticSelection::ClosedForm(cf))
}

/// Tabulated `ln φ*` over the local parameter, read by bicubic interpolation.
#[derive(Debug, Clone)]
struct LnPhiStarTable {
    grid: UniformGrid2d,
}

/// The selective Gaussian limit `N(h, I_θ^{-1})` with selection function `p*`.
#[derive(Debug, Clone)]
pub struct GaussianLimit {
    theta: Vec<f64>,
    fisher: DMatrix<f64>,
    fisher_inverse: DMatrix<f64>,
    selection: AsymptoticSelection,
    table: Option<LnPhiStarTable>,
}

impl GaussianLimit {
    pub fn new(model: &SelectionModel, theta: &[f64], selection: AsymptoticSelection) -> Result<Self> {
        model.family().check_theta(theta)?;
        let fisher = model.family().fisher_info(theta);
        let fisher_inverse = fisher
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("Fisher information is singular".into()))?;
        Ok(Self {
            theta: theta.to_vec(),
            fisher,
            fisher_inverse,
            selection,
            table: None,
        })
    }

    /// Build `p*` and the limit in one step.
    pub fn for_model(
        model: &SelectionModel,
        theta: &[f64],
        options: McOptions,
        rng: Option<&mut RngStream>,
    ) -> Result<Self> {
        let sel = asymptotic_selection_fn(model, theta, options, rng)?;
        Self::new(model, theta, sel)
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn fisher(&self) -> &DMatrix<f64> {
        &self.fisher
    }

    pub fn fisher_inverse(&self) -> &DMatrix<f64> {
        &self.fisher_inverse
    }

    pub fn selection(&self) -> &AsymptoticSelection {
        &self.selection
    }

    /// Marginal standard deviations of `Z`.
    pub fn marginal_sd(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.fisher_inverse[(i, i)].sqrt()).collect()
    }

    pub fn p_star(&self, z: &[f64]) -> f64 {
        self.selection.eval(z)
    }

    /// `φ*(h) = E p*(Z)`, `Z ~ N(h, I_θ^{-1})`.
    ///
    /// One-dimensional limits integrate adaptively with breaks at jumps of
    /// `p*`. The winners limit integrates its cached bilinear `p*` surface
    /// exactly against the Gaussian, cell by cell.
    pub fn phi_star(&self, h: &[f64], spec: &QuadratureSpec) -> Result<f64> {
        self.check_h(h)?;
        match &self.selection {
            AsymptoticSelection::Constant => Ok(1.0),
            AsymptoticSelection::ClosedForm(cf) => {
                let s = self.marginal_sd()[0];
                let breaks: Vec<f64> = cf.jump().into_iter().collect();
                let v = integrate_enveloped(
                    |z| norm_pdf((z - h[0]) / s) / s * cf.eval(z),
                    f64::NEG_INFINITY,
                    f64::INFINITY,
                    Envelope::new(h[0], s),
                    &breaks,
                    spec,
                )?;
                Ok(v.clamp(0.0, 1.0))
            }
            AsymptoticSelection::ConditionalMc(w) => match w.cache() {
                Some(g) => Ok(w.phi_star_cached(g, h)),
                None => self.phi_star_tensor(h, spec),
            },
        }
    }

    /// Two-dimensional tensor-product quadrature of `N(h, I^{-1})·p*`.
    pub fn phi_star_tensor(&self, h: &[f64], spec: &QuadratureSpec) -> Result<f64> {
        self.check_h(h)?;
        if self.dim() != 2 {
            return Err(Error::Capability("tensor quadrature is for two-dimensional limits".into()));
        }
        let sd = self.marginal_sd();
        let (b1, b2) = match &self.selection {
            AsymptoticSelection::ConditionalMc(w) => match w.cache() {
                Some(g) => (
                    (0..g.nx).map(|i| g.x_at(i)).collect::<Vec<_>>(),
                    (0..g.ny).map(|j| g.y_at(j)).collect::<Vec<_>>(),
                ),
                None => (vec![], vec![]),
            },
            _ => (vec![], vec![]),
        };
        let inner_spec = spec.with_rel_tol(spec.rel_tol * 0.1).with_abs_tol(spec.abs_tol * 0.1);
        let outer = |z1: f64| {
            let g1 = norm_pdf((z1 - h[0]) / sd[0]) / sd[0];
            if g1 == 0.0 {
                return 0.0;
            }
            let inner = integrate_enveloped(
                |z2| norm_pdf((z2 - h[1]) / sd[1]) / sd[1] * self.selection.eval(&[z1, z2]),
                f64::NEG_INFINITY,
                f64::INFINITY,
                Envelope::new(h[1], sd[1]),
                &b2,
                &inner_spec,
            );
            match inner {
                Ok(v) => g1 * v,
                Err(_) => f64::NAN,
            }
        };
        let v = integrate_enveloped(
            outer,
            f64::NEG_INFINITY,
            f64::INFINITY,
            Envelope::new(h[0], sd[0]),
            &b1,
            spec,
        );
        match v {
            Ok(v) if v.is_finite() => Ok(v.clamp(0.0, 1.0)),
            Ok(_) => Err(Error::Degenerate("inner quadrature of p* failed".into())),
            Err(e) => Err(e),
        }
    }

    /// Closed-form `ln φ*(h)` where available.
    pub fn ln_phi_star_closed(&self, h: &[f64]) -> Option<f64> {
        match &self.selection {
            AsymptoticSelection::Constant => Some(0.0),
            AsymptoticSelection::ClosedForm(cf) => cf.ln_phi_star(h[0], self.marginal_sd()[0]),
            AsymptoticSelection::ConditionalMc(_) => None,
        }
    }

    /// Fastest accurate `ln φ*(h)`: closed form, then the tabulated surface, then [`Self::phi_star`].
    pub fn ln_phi_star(&self, h: &[f64]) -> Result<f64> {
        self.check_h(h)?;
        if let Some(v) = self.ln_phi_star_closed(h) {
            return Ok(v);
        }
        if let Some(t) = &self.table {
            if t.grid.contains(h[0], h[1]) {
                return Ok(t.grid.bicubic(h[0], h[1]));
            }
        }
        let spec = QuadratureSpec::default().with_abs_tol(1e-13).with_rel_tol(1e-9);
        Ok(self.phi_star(h, &spec)?.ln())
    }

    /// Tabulate `ln φ*` on a square `h` grid of `points²` nodes spanning
    /// `±half_width` marginal standard deviations (two-dimensional limits).
    pub fn with_ln_phi_star_table(mut self, half_width: f64, points: usize) -> Result<Self> {
        if self.dim() != 2 {
            return Ok(self);
        }
        let sd = self.marginal_sd();
        let spec = QuadratureSpec::default();
        let mut failure = None;
        let grid = UniformGrid2d::from_fn(
            (-half_width * sd[0], half_width * sd[0], points),
            (-half_width * sd[1], half_width * sd[1], points),
            |a, b| match self.phi_star(&[a, b], &spec) {
                Ok(v) if v > 0.0 => v.ln(),
                Ok(_) => -745.0,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            },
        )?;
        if let Some(e) = failure {
            return Err(e);
        }
        self.table = Some(LnPhiStarTable { grid });
        Ok(self)
    }

    /// Unnormalized log density of the limit posterior of `h` under a flat prior.
    pub fn log_posterior_kernel(&self, h: &[f64], z: &[f64]) -> Result<f64> {
        self.check_h(h)?;
        let d = self.dim();
        let mut q = 0.0;
        for i in 0..d {
            for j in 0..d {
                q += (h[i] - z[i]) * self.fisher[(i, j)] * (h[j] - z[j]);
            }
        }
        Ok(-0.5 * q - self.ln_phi_star(h)?)
    }

    fn check_h(&self, h: &[f64]) -> Result<()> {
        if h.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: h.len(),
            });
        }
        Ok(())
    }
}

/// One row of an expansion curve table.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub h: Vec<f64>,
    /// `ln{φ_n(θ + h/√n)/φ_n(θ)}`; NaN where the shifted parameter is inadmissible.
    pub r_n: f64,
    /// `ln{φ*(h)/φ*(0)}`.
    pub r_star: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveTable {
    pub points: Vec<CurvePoint>,
    /// Grid index and message for every point that could not be evaluated.
    pub issues: Vec<(usize, String)>,
}

impl CurveTable {
    /// `max |r_n − r*_n|` over the evaluated points.
    pub fn sup_gap(&self) -> f64 {
        self.points
            .iter()
            .filter(|p| p.r_n.is_finite() && p.r_star.is_finite())
            .map(|p| (p.r_n - p.r_star).abs())
            .fold(0.0, f64::max)
    }
}

/// `r_n` and `r*_n` over a grid of local parameters.
pub fn expansion_curves(
    model: &SelectionModel,
    limit: &GaussianLimit,
    h_grid: &[Vec<f64>],
    spec: &QuadratureSpec,
) -> Result<CurveTable> {
    let theta = limit.theta();
    let ln_phi0 = model.ln_phi(theta)?;
    let zero = vec![0.0; theta.len()];
    let ln_star0 = limit.phi_star(&zero, spec)?.ln();
    let mut points = Vec::with_capacity(h_grid.len());
    let mut issues = Vec::new();
    for (i, h) in h_grid.iter().enumerate() {
        let shifted = model.local_to_theta(theta, h);
        let r_n = match model.ln_phi(&shifted) {
            Ok(v) => v - ln_phi0,
            Err(e) => {
                issues.push((i, e.to_string()));
                f64::NAN
            }
        };
        let r_star = match limit.phi_star(h, spec) {
            Ok(v) => v.ln() - ln_star0,
            Err(e) => {
                issues.push((i, e.to_string()));
                f64::NAN
            }
        };
        points.push(CurvePoint {
            h: h.clone(),
            r_n,
            r_star,
        });
    }
    Ok(CurveTable { points, issues })
}

/// `½∫|f − g|` over `[lo, hi]`.
///
/// The interval is scanned on `resolution` cells for sign changes of `f − g`;
/// each crossing is refined by bisection and placed, together with `breaks`,
/// as a subdivision point so that the integrand is smooth on every piece.
pub fn tv_between_densities<F, G>(
    f: F,
    g: G,
    lo: f64,
    hi: f64,
    breaks: &[f64],
    resolution: usize,
    spec: &QuadratureSpec,
) -> Result<f64>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    if !(hi > lo) || resolution < 2 {
        return Err(Error::domain("TV integration needs lo < hi and at least two cells"));
    }
    let d = |x: f64| f(x) - g(x);
    let mut points = vec![lo, hi];
    points.extend(breaks.iter().copied().filter(|&b| b > lo && b < hi));
    let step = (hi - lo) / resolution as f64;
    let mut prev_x = lo;
    let mut prev = d(lo);
    for k in 1..=resolution {
        let x = if k == resolution { hi } else { lo + step * k as f64 };
        let v = d(x);
        if prev != 0.0 && v != 0.0 && prev.signum() != v.signum() {
            let (mut a, mut b, fa) = (prev_x, x, prev);
            for _ in 0..80 {
                let m = 0.5 * (a + b);
                if d(m).signum() == fa.signum() {
                    a = m;
                } else {
                    b = m;
                }
            }
            points.push(0.5 * (a + b));
        }
        prev_x = x;
        prev = v;
    }
    points.sort_by(f64::total_cmp);
    points.dedup();
    let v = integrate_pieces(|x| d(x).abs(), &points, spec)?;
    Ok(0.5 * v)
}

/// Exact TV distance between the law of `Z_n` under selection and the selective Gaussian limit.
///
/// Exponential family only: `Ȳ ~ Gamma(n, nθ)` gives the score density in
/// closed form and `E[p_n | Z_n = z] = p*(z)` exactly.
pub fn tv_scores(model: &SelectionModel, theta: &[f64], resolution: usize) -> Result<f64> {
    if model.family() != Family::ExponentialRate {
        return Err(Error::Capability("tv_scores needs the exponential family".into()));
    }
    model.family().check_theta(theta)?;
    let limit = GaussianLimit::for_model(model, theta, McOptions::default(), None)?;
    let th = theta[0];
    let n = model.n();
    let nf = n as f64;
    let rn = nf.sqrt();
    let spec = QuadratureSpec::new(1e-11, 1e-9, 20_000, 8.0)?;
    let ln_phi = model.ln_phi(theta)?;
    let ln_phi_star = match limit.ln_phi_star_closed(&[0.0]) {
        Some(v) => v,
        None => limit.phi_star(&[0.0], &spec)?.ln(),
    };
    let jacobian = (th * th * rn).ln();
    let exact = |z: f64| {
        let ybar = exponential_mean_of_score(th, n, z);
        if ybar <= 0.0 {
            return 0.0;
        }
        let p = limit.p_star(&[z]);
        if p == 0.0 {
            return 0.0;
        }
        (ln_gamma_pdf(ybar, nf, nf * th) - jacobian - ln_phi).exp() * p
    };
    let gauss = |z: f64| {
        let p = limit.p_star(&[z]);
        if p == 0.0 {
            return 0.0;
        }
        (-0.5 * (z / th) * (z / th) - (th * (2.0 * std::f64::consts::PI).sqrt()).ln() - ln_phi_star).exp() * p
    };
    let half = 16.0 * th;
    let mut breaks = vec![th * rn];
    if let AsymptoticSelection::ClosedForm(cf) = limit.selection() {
        breaks.extend(cf.jump());
    }
    tv_between_densities(exact, gauss, -half, half, &breaks, resolution, &spec)
}

/// Summary of the ratios `φ_n(θ̂)/φ_n(θ₀)` over conditional samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Lemma1Report {
    pub ratios: Vec<f64>,
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub iqr: f64,
    /// Set when `n ≥ 100` and some ratio falls outside `(0.1, 10)`.
    pub flagged: bool,
}

/// Ratios of selection probabilities at the MLE and at the truth over `reps` selected samples.
pub fn lemma1_check(
    model: &SelectionModel,
    theta0: &[f64],
    reps: usize,
    seed: u64,
    jobs: usize,
) -> Result<Lemma1Report> {
    if reps == 0 {
        return Err(Error::domain("need at least one replication"));
    }
    let ln0 = model.ln_phi(theta0)?;
    let ratios = replicate(reps, seed, 0, jobs, |_, rng| {
        let y = model.sample_conditional(theta0, rng, crate::selection::DEFAULT_MAX_ATTEMPTS)?;
        let hat = model.family().mle(&y)?;
        Ok((model.ln_phi(&hat)? - ln0).exp())
    })?;
    let mut sorted = ratios.clone();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| empirical_quantile(&sorted, p);
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    Ok(Lemma1Report {
        median: q(0.5),
        iqr: q(0.75) - q(0.25),
        flagged: model.n() >= 100 && (min < 0.1 || max > 10.0),
        min,
        max,
        ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::SelectionMechanism;

    #[test]
    fn hat_expectations_sum_to_one_and_reproduce_linear_functions() {
        let (x0, dx, k) = (-3.0, 0.25, 25);
        for (h, s) in [(0.3, 0.7), (-4.0, 1.0), (2.9, 0.05)] {
            let a = hat_expectations(x0, dx, k, h, s);
            let total: f64 = a.iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "{total}");
        }
        // Inside the grid, Σ node·hat = identity, so the mean is recovered.
        let a = hat_expectations(x0, dx, k, 0.2, 0.3);
        let mean: f64 = a.iter().enumerate().map(|(i, w)| (x0 + dx * i as f64) * w).sum();
        assert!((mean - 0.2).abs() < 1e-10);
    }

    #[test]
    fn closed_form_phi_star_matches_quadrature() {
        let spec = QuadratureSpec::default().with_abs_tol(1e-12).with_rel_tol(1e-10);
        let mechs = [
            SelectionMechanism::deterministic(0.5, Direction::Below),
            SelectionMechanism::randomized(0.5, 1.0, Direction::Below),
            SelectionMechanism::randomized(0.5, 0.2, Direction::Above),
            SelectionMechanism::condition_on_value(3.8, 1.0),
        ];
        for mech in mechs {
            let model = SelectionModel::new(Family::ExponentialRate, mech, 40).unwrap();
            let lim = GaussianLimit::for_model(&model, &[2.0], McOptions::default(), None).unwrap();
            for h in [-2.0, -0.5, 0.0, 1.3] {
                let q = lim.phi_star(&[h], &spec).unwrap().ln();
                let c = lim.ln_phi_star_closed(&[h]).unwrap();
                assert!((q - c).abs() < 1e-8, "{mech:?} h={h}: {q} vs {c}");
            }
        }
    }
}
