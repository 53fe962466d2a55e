//! Experiment configuration files.
//!
//! Every struct rejects unknown fields and fills omitted ones from its
//! `Default`, which reproduces the published settings of each study.

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use selnorm::calibration::{CoverageOptions, CoverageSetting, ScalarSelection};
use selnorm::expansion::McOptions;
use selnorm::family::Family;
use selnorm::posterior::{GammaConvention, Prior};
use selnorm::selection::{Direction, SelectionMechanism, SelectionModel, VarianceDivisor};

pub const DEFAULT_SEED: u64 = 20240;
pub const FULL_TABLE_REPS: usize = 1000;

/// A validation failure; maps to exit code 2.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), Invalid> {
    if cond {
        Ok(())
    } else {
        Err(Invalid(msg.into()))
    }
}

fn positive(x: f64, what: &str) -> Result<(), Invalid> {
    ensure(x.is_finite() && x > 0.0, format!("{what} must be positive and finite (got {x})"))
}

fn finite(x: f64, what: &str) -> Result<(), Invalid> {
    ensure(x.is_finite(), format!("{what} must be finite (got {x})"))
}

fn at_least(x: usize, min: usize, what: &str) -> Result<(), Invalid> {
    ensure(x >= min, format!("{what} must be at least {min} (got {x})"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum ExperimentConfig {
    Expansion(ExpansionConfig),
    ScoresTv(ScoresTvConfig),
    Posterior(PosteriorConfig),
    WinnersPosterior(WinnersPosteriorConfig),
    Pit(PitConfig),
    Undercoverage(UndercoverageConfig),
    CoverageTable(CoverageTableConfig),
    Lemma1(Lemma1Config),
}

macro_rules! each {
    ($self:expr, $c:ident => $body:expr) => {
        match $self {
            ExperimentConfig::Expansion($c) => $body,
            ExperimentConfig::ScoresTv($c) => $body,
            ExperimentConfig::Posterior($c) => $body,
            ExperimentConfig::WinnersPosterior($c) => $body,
            ExperimentConfig::Pit($c) => $body,
            ExperimentConfig::Undercoverage($c) => $body,
            ExperimentConfig::CoverageTable($c) => $body,
            ExperimentConfig::Lemma1($c) => $body,
        }
    };
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, Invalid> {
        let config: Self = serde_json::from_str(text).map_err(|e| Invalid(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentConfig::Expansion(_) => "expansion",
            ExperimentConfig::ScoresTv(_) => "scores_tv",
            ExperimentConfig::Posterior(_) => "posterior",
            ExperimentConfig::WinnersPosterior(_) => "winners_posterior",
            ExperimentConfig::Pit(_) => "pit",
            ExperimentConfig::Undercoverage(_) => "undercoverage",
            ExperimentConfig::CoverageTable(_) => "coverage_table",
            ExperimentConfig::Lemma1(_) => "lemma1",
        }
    }

    pub fn seed(&self) -> u64 {
        each!(self, c => c.seed)
    }

    pub fn output_dir(&self) -> Option<&PathBuf> {
        each!(self, c => c.output_dir.as_ref())
    }

    /// Switch a coverage-table run to the full replication count.
    pub fn set_full_table(&mut self) -> Result<(), Invalid> {
        match self {
            ExperimentConfig::CoverageTable(c) => {
                c.reps = FULL_TABLE_REPS;
                Ok(())
            }
            other => Err(Invalid(format!("--full-table applies to coverage_table, not {}", other.name()))),
        }
    }

    pub fn validate(&self) -> Result<(), Invalid> {
        each!(self, c => c.validate())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionConfig {
    #[default]
    Below,
    Above,
}

impl From<DirectionConfig> for Direction {
    fn from(d: DirectionConfig) -> Self {
        match d {
            DirectionConfig::Below => Direction::Below,
            DirectionConfig::Above => Direction::Above,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivisorConfig {
    #[default]
    Mle,
    Unbiased,
}

impl From<DivisorConfig> for VarianceDivisor {
    fn from(d: DivisorConfig) -> Self {
        match d {
            DivisorConfig::Mle => VarianceDivisor::Mle,
            DivisorConfig::Unbiased => VarianceDivisor::Unbiased,
        }
    }
}

/// Selection rule on the sample mean of an exponential sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MechanismConfig {
    None,
    Deterministic {
        threshold: f64,
        #[serde(default)]
        direction: DirectionConfig,
    },
    Carving {
        threshold: f64,
        carve_fraction: f64,
        #[serde(default)]
        direction: DirectionConfig,
    },
    Randomized {
        threshold: f64,
        sigma_w: f64,
        #[serde(default)]
        direction: DirectionConfig,
    },
    ConditionOnValue {
        u_n: f64,
        sigma_w: f64,
    },
}

impl MechanismConfig {
    pub fn validate(&self) -> Result<(), Invalid> {
        match *self {
            MechanismConfig::None => Ok(()),
            MechanismConfig::Deterministic { threshold, .. } => positive(threshold, "threshold"),
            MechanismConfig::Carving { threshold, carve_fraction, .. } => {
                positive(threshold, "threshold")?;
                ensure(
                    carve_fraction > 0.0 && carve_fraction <= 1.0,
                    format!("carve_fraction must lie in (0, 1] (got {carve_fraction})"),
                )
            }
            MechanismConfig::Randomized { threshold, sigma_w, .. } => {
                positive(threshold, "threshold")?;
                positive(sigma_w, "sigma_w")
            }
            MechanismConfig::ConditionOnValue { u_n, sigma_w } => {
                finite(u_n, "u_n")?;
                positive(sigma_w, "sigma_w")
            }
        }
    }

    pub fn mechanism(&self) -> SelectionMechanism {
        match *self {
            MechanismConfig::None => SelectionMechanism::none(),
            MechanismConfig::Deterministic { threshold, direction } => {
                SelectionMechanism::deterministic(threshold, direction.into())
            }
            MechanismConfig::Carving {
                threshold,
                carve_fraction,
                direction,
            } => SelectionMechanism::carving(threshold, carve_fraction, direction.into()),
            MechanismConfig::Randomized {
                threshold,
                sigma_w,
                direction,
            } => SelectionMechanism::randomized(threshold, sigma_w, direction.into()),
            MechanismConfig::ConditionOnValue { u_n, sigma_w } => SelectionMechanism::condition_on_value(u_n, sigma_w),
        }
    }

    pub fn name(&self) -> &'static str {
        self.mechanism().name()
    }

    pub fn model(&self, n: usize) -> Result<SelectionModel, Invalid> {
        SelectionModel::new(Family::ExponentialRate, self.mechanism(), n).map_err(|e| Invalid(e.to_string()))
    }
}

fn validate_mechanisms(list: &[MechanismConfig]) -> Result<(), Invalid> {
    ensure(!list.is_empty(), "mechanisms must not be empty")?;
    let mut seen = BTreeSet::new();
    for m in list {
        m.validate()?;
        ensure(seen.insert(m.name()), format!("mechanism kind {} listed twice", m.name()))?;
    }
    Ok(())
}

/// The four exponential mechanisms shown with the expansion curves.
pub fn figure_one_mechanisms() -> Vec<MechanismConfig> {
    vec![
        MechanismConfig::Deterministic {
            threshold: 0.5,
            direction: DirectionConfig::Below,
        },
        MechanismConfig::Carving {
            threshold: 0.5,
            carve_fraction: 0.5,
            direction: DirectionConfig::Below,
        },
        MechanismConfig::Randomized {
            threshold: 0.5,
            sigma_w: 1.0,
            direction: DirectionConfig::Below,
        },
        MechanismConfig::ConditionOnValue { u_n: 3.8, sigma_w: 1.0 },
    ]
}

fn deterministic_half() -> MechanismConfig {
    MechanismConfig::Deterministic {
        threshold: 0.5,
        direction: DirectionConfig::Below,
    }
}

fn randomized_posterior() -> MechanismConfig {
    MechanismConfig::Randomized {
        threshold: 0.5,
        sigma_w: 0.2,
        direction: DirectionConfig::Below,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateOrScale {
    #[default]
    Rate,
    Scale,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorConfig {
    /// Gamma prior; `value` is a rate or a scale according to `rate_or_scale`.
    Gamma {
        shape: f64,
        value: f64,
        #[serde(default)]
        rate_or_scale: RateOrScale,
    },
    Flat,
    ScaleInvariant,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig::Gamma {
            shape: 1.0,
            value: 0.1,
            rate_or_scale: RateOrScale::Rate,
        }
    }
}

impl PriorConfig {
    pub fn prior(&self) -> Result<Prior, Invalid> {
        match *self {
            PriorConfig::Gamma {
                shape,
                value,
                rate_or_scale,
            } => {
                let convention = match rate_or_scale {
                    RateOrScale::Rate => GammaConvention::Rate,
                    RateOrScale::Scale => GammaConvention::Scale,
                };
                Prior::gamma(shape, value, convention).map_err(|e| Invalid(e.to_string()))
            }
            PriorConfig::Flat => Ok(Prior::ImproperUniform),
            PriorConfig::ScaleInvariant => Ok(Prior::ScaleInvariant),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PStarMethod {
    #[default]
    Quadrature,
    MonteCarlo,
}

/// How the winners `p*` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PStarConfig {
    pub method: PStarMethod,
    /// Bank size for the Monte Carlo method.
    pub mc_draws: usize,
    /// Points per axis of the cached `z` grid; zero evaluates directly.
    pub grid_points: usize,
    /// Half-width of the cached grid in marginal standard deviations.
    pub grid_half_width: f64,
}

impl Default for PStarConfig {
    fn default() -> Self {
        let q = McOptions::quadrature();
        Self {
            method: PStarMethod::Quadrature,
            mc_draws: McOptions::default().draws,
            grid_points: q.grid_points,
            grid_half_width: q.grid_half_width,
        }
    }
}

impl PStarConfig {
    pub fn validate(&self) -> Result<(), Invalid> {
        if self.method == PStarMethod::MonteCarlo {
            at_least(self.mc_draws, 100, "p_star.mc_draws")?;
        }
        ensure(self.grid_points == 0 || self.grid_points >= 2, "p_star.grid_points must be 0 or at least 2")?;
        positive(self.grid_half_width, "p_star.grid_half_width")
    }

    pub fn options(&self) -> McOptions {
        let base = match self.method {
            PStarMethod::Quadrature => McOptions::quadrature(),
            PStarMethod::MonteCarlo => McOptions {
                draws: self.mc_draws,
                ..McOptions::default()
            },
        };
        McOptions {
            grid_points: self.grid_points,
            grid_half_width: self.grid_half_width,
            ..base
        }
    }
}

/// Inference-on-winners model: a t-test on the first `n1` of `n1 + n2` observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WinnersConfig {
    pub n1: usize,
    pub n2: usize,
    pub threshold: f64,
    pub divisor: DivisorConfig,
}

impl Default for WinnersConfig {
    fn default() -> Self {
        Self {
            n1: 20,
            n2: 20,
            threshold: 1.0,
            divisor: DivisorConfig::Mle,
        }
    }
}

impl WinnersConfig {
    pub fn validate(&self) -> Result<(), Invalid> {
        at_least(self.n1, 2, "n1")?;
        at_least(self.n2, 2, "n2")?;
        finite(self.threshold, "threshold")
    }

    pub fn model(&self) -> Result<SelectionModel, Invalid> {
        SelectionModel::winners(self.n1, self.n2, self.threshold, self.divisor.into()).map_err(|e| Invalid(e.to_string()))
    }
}

fn validate_gaussian_theta(theta: [f64; 2]) -> Result<(), Invalid> {
    finite(theta[0], "theta0 mean")?;
    positive(theta[1], "theta0 variance")
}

/// Uniform grid `[min, max]` with `points` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl GridConfig {
    pub fn validate(&self, what: &str) -> Result<(), Invalid> {
        finite(self.min, what)?;
        finite(self.max, what)?;
        ensure(self.max > self.min, format!("{what}: max must exceed min"))?;
        at_least(self.points, 2, &format!("{what}.points"))
    }

    pub fn values(&self) -> Vec<f64> {
        let step = (self.max - self.min) / (self.points - 1) as f64;
        (0..self.points).map(|k| self.min + step * k as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExpansionModel {
    Exponential {
        #[serde(default = "exponential_theta")]
        theta: f64,
        #[serde(default = "figure_one_n")]
        n: usize,
        #[serde(default = "figure_one_mechanisms")]
        mechanisms: Vec<MechanismConfig>,
    },
    Winners {
        #[serde(default)]
        winners: WinnersConfig,
        #[serde(default = "gaussian_theta")]
        theta: [f64; 2],
        #[serde(default)]
        p_star: PStarConfig,
        /// Grid for the cuts of `p*` through `z = (z₁, 0)` and `z = (1, z₂)`.
        #[serde(default = "p_star_cut_grid")]
        z: GridConfig,
    },
}

fn exponential_theta() -> f64 {
    2.0
}

fn figure_one_n() -> usize {
    40
}

fn gaussian_theta() -> [f64; 2] {
    [0.0, 1.0]
}

fn p_star_cut_grid() -> GridConfig {
    GridConfig {
        min: -4.0,
        max: 4.0,
        points: 81,
    }
}

/// `r_n` against `r*_n` along a grid of local parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpansionConfig {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub model: ExpansionModel,
    pub h: GridConfig,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            output_dir: None,
            model: ExpansionModel::Exponential {
                theta: exponential_theta(),
                n: figure_one_n(),
                mechanisms: figure_one_mechanisms(),
            },
            h: GridConfig {
                min: -2.0,
                max: 2.0,
                points: 41,
            },
        }
    }
}

impl ExpansionConfig {
    fn validate(&self) -> Result<(), Invalid> {
        self.h.validate("h")?;
        match &self.model {
            ExpansionModel::Exponential { theta, n, mechanisms } => {
                positive(*theta, "theta")?;
                at_least(*n, 1, "n")?;
                validate_mechanisms(mechanisms)?;
                ensure(
                    -self.h.min < (*n as f64).sqrt() * theta,
                    "h.min pushes theta + h/sqrt(n) outside (0, inf)",
                )
            }
            ExpansionModel::Winners { winners, theta, p_star, z } => {
                winners.validate()?;
                validate_gaussian_theta(*theta)?;
                p_star.validate()?;
                z.validate("z")
            }
        }
    }
}

/// Total variation between the exact and limiting laws of the normalized score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoresTvConfig {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub theta: f64,
    pub mechanism: MechanismConfig,
    pub n: Vec<usize>,
    /// Cells used to locate sign changes of the density difference.
    pub resolution: usize,
}

impl Default for ScoresTvConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            output_dir: None,
            theta: 2.0,
            mechanism: deterministic_half(),
            n: vec![25, 100, 400],
            resolution: 4000,
        }
    }
}

impl ScoresTvConfig {
    fn validate(&self) -> Result<(), Invalid> {
        positive(self.theta, "theta")?;
        self.mechanism.validate()?;
        ensure(!self.n.is_empty(), "n must list at least one sample size")?;
        for &n in &self.n {
            at_least(n, 1, "n")?;
        }
        at_least(self.resolution, 10, "resolution")
    }
}

/// Exact and limiting posteriors of `h` for one observed sample mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PosteriorConfig {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub theta0: f64,
    pub n: usize,
    /// Observed sample mean.
    pub ybar: f64,
    pub prior: PriorConfig,
    pub mechanisms: Vec<MechanismConfig>,
    /// Points of the common output grid in `h`.
    pub grid_points: usize,
}

impl Default for PosteriorConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            output_dir: None,
            theta0: 2.0,
            n: 50,
            ybar: 0.45,
            prior: PriorConfig::default(),
            mechanisms: vec![deterministic_half(), randomized_posterior(), MechanismConfig::None],
            grid_points: 401,
        }
    }
}

impl PosteriorConfig {
    fn validate(&self) -> Result<(), Invalid> {
        positive(self.theta0, "theta0")?;
        at_least(self.n, 1, "n")?;
        positive(self.ybar, "ybar")?;
        self.prior.prior()?;
        validate_mechanisms(&self.mechanisms)?;
        at_least(self.grid_points, 2, "grid_points")
    }
}

/// Random-walk chain settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub steps: usize,
    /// Keep every `thin`-th post-burn-in state in the output.
    pub thin: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self { steps: 50_000, thin: 10 }
    }
}

impl ChainConfig {
    fn validate(&self) -> Result<(), Invalid> {
        at_least(self.steps, 100, "chain.steps")?;
        at_least(self.thin, 1, "chain.thin")
    }
}

fn validate_levels(levels: (f64, f64)) -> Result<(), Invalid> {
    ensure(
        levels.0 > 0.0 && levels.0 < levels.1 && levels.1 < 1.0,
        "levels must satisfy 0 < lower < upper < 1",
    )
}

/// Exact and limiting winners posteriors for one selected sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WinnersPosteriorConfig {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub model: WinnersConfig,
    pub theta0: [f64; 2],
    pub chain: ChainConfig,
    pub p_star: PStarConfig,
    pub levels: (f64, f64),
}

impl Default for WinnersPosteriorConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            output_dir: None,
            model: WinnersConfig {
                n1: 100,
                n2: 50,
                ..WinnersConfig::default()
            },
            theta0: gaussian_theta(),
            chain: ChainConfig::default(),
            p_star: PStarConfig::default(),
            levels: (0.05, 0.95),
        }
    }
}

impl WinnersPosteriorConfig {
    fn validate(&self) -> Result<(), Invalid> {
        self.model.validate()?;
        validate_gaussian_theta(self.theta0)?;
        self.chain.validate()?;
        self.p_star.validate()?;
        validate_levels(self.levels)
    }
}

/// Probability integral transforms of `θ₀` under the exact and limiting posteriors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PitConfig {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub theta0: f64,
    pub n: Vec<usize>,
    pub prior: PriorConfig,
    pub mechanisms: Vec<MechanismConfig>,
    pub reps: usize,
}

impl Default for PitConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            output_dir: None,
            theta0: 2.0,
            n: vec![50, 100],
            prior: PriorConfig::default(),
            mechanisms: vec![deterministic_half(), randomized_posterior()],
            reps: 1000,
        }
    }
}

impl PitConfig {
    fn validate(&self) -> Result<(), Invalid> {
        positive(self.theta0, "theta0")?;
        ensure(!self.n.is_empty(), "n must list at least one sample size")?;
        for &n in &self.n {
            at_least(n, 1, "n")?;
        }
        self.prior.prior()?;
        validate_mechanisms(&self.mechanisms)?;
        at_least(self.reps, 100, "reps")
    }
}

/// Increasing selection function of a scalar Gaussian observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarSelectionConfig {
    /// Select when `Y > c`.
    Threshold { c: f64 },
    /// Select with probability `Φ((Y − c)/s)`.
    Probit { c: f64, s: f64 },
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum UndercoverageModel {
    Gaussian {
        sigma: f64,
        selection: ScalarSelectionConfig,
    },
    Exponential {
        n: usize,
        mechanism: MechanismConfig,
    },
}

impl UndercoverageModel {
    pub fn gaussian_selection(selection: ScalarSelectionConfig) -> ScalarSelection {
        match selection {
            ScalarSelectionConfig::Threshold { c } => ScalarSelection::Threshold { c },
            ScalarSelectionConfig::Probit { c, s } => ScalarSelection::Probit { c, s },
            ScalarSelectionConfig::Constant => ScalarSelection::Constant,
        }
    }
}

/// Frequentist coverage of flat-prior credible upper bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UndercoverageConfig {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub subject: UndercoverageModel,
    pub theta0: Vec<f64>,
    pub alphas: Vec<f64>,
    pub reps: usize,
}

impl Default for UndercoverageConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            output_dir: None,
            subject: UndercoverageModel::Gaussian {
                sigma: 1.0,
                selection: ScalarSelectionConfig::Threshold { c: 0.0 },
            },
            theta0: vec![0.0, 1.0],
            alphas: (1..=9).map(|k| k as f64 / 10.0).collect(),
            reps: 10_000,
        }
    }
}

impl UndercoverageConfig {
    fn validate(&self) -> Result<(), Invalid> {
        match self.subject {
            UndercoverageModel::Gaussian { sigma, selection } => {
                positive(sigma, "sigma")?;
                match selection {
                    ScalarSelectionConfig::Threshold { c } => finite(c, "c")?,
                    ScalarSelectionConfig::Probit { c, s } => {
                        finite(c, "c")?;
                        positive(s, "s")?;
                    }
                    ScalarSelectionConfig::Constant => {}
                }
                for &t in &self.theta0 {
                    finite(t, "theta0")?;
                }
            }
            UndercoverageModel::Exponential { n, mechanism } => {
                at_least(n, 1, "n")?;
                mechanism.validate()?;
                for &t in &self.theta0 {
                    positive(t, "theta0")?;
                }
            }
        }
        ensure(!self.theta0.is_empty(), "theta0 must list at least one value")?;
        ensure(!self.alphas.is_empty(), "alphas must not be empty")?;
        for &a in &self.alphas {
            ensure(a > 0.0 && a < 1.0, format!("alpha {a} outside (0, 1)"))?;
        }
        at_least(self.reps, 1, "reps")
    }
}

/// One coverage-table cell; `t = null` runs the cell without selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    pub n1: usize,
    pub n2: usize,
    pub t: Option<f64>,
}

impl CellConfig {
    pub fn setting(&self) -> CoverageSetting {
        CoverageSetting {
            n1: self.n1,
            n2: self.n2,
            threshold: self.t,
        }
    }
}

/// Content of exact credible intervals under the limiting posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverageTableConfig {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub cells: Vec<CellConfig>,
    pub reps: usize,
    pub theta0: [f64; 2],
    pub divisor: DivisorConfig,
    pub chain_steps: usize,
    pub p_star: PStarConfig,
    pub levels: (f64, f64),
}

impl Default for CoverageTableConfig {
    fn default() -> Self {
        let base = CoverageOptions::default();
        let cells = [(20, 20), (50, 25), (100, 50)]
            .into_iter()
            .flat_map(|(n1, n2)| (0..4).map(move |t| CellConfig { n1, n2, t: Some(t as f64) }))
            .collect();
        Self {
            seed: DEFAULT_SEED,
            output_dir: None,
            cells,
            reps: 300,
            theta0: base.theta0,
            divisor: DivisorConfig::Mle,
            chain_steps: base.chain_steps,
            p_star: PStarConfig::default(),
            levels: base.levels,
        }
    }
}

impl CoverageTableConfig {
    fn validate(&self) -> Result<(), Invalid> {
        ensure(!self.cells.is_empty(), "cells must not be empty")?;
        for c in &self.cells {
            at_least(c.n1, 2, "n1")?;
            at_least(c.n2, 2, "n2")?;
            if let Some(t) = c.t {
                finite(t, "t")?;
            }
        }
        at_least(self.reps, 1, "reps")?;
        validate_gaussian_theta(self.theta0)?;
        at_least(self.chain_steps, 100, "chain_steps")?;
        self.p_star.validate()?;
        validate_levels(self.levels)
    }

    pub fn options(&self) -> CoverageOptions {
        CoverageOptions {
            theta0: self.theta0,
            chain_steps: self.chain_steps,
            divisor: self.divisor.into(),
            mc: self.p_star.options(),
            levels: self.levels,
        }
    }
}

/// Ratios `φ_n(θ̂)/φ_n(θ₀)` over conditional samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lemma1Config {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub theta0: f64,
    pub n: usize,
    pub mechanism: MechanismConfig,
    pub reps: usize,
}

impl Default for Lemma1Config {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            output_dir: None,
            theta0: 2.0,
            n: 100,
            mechanism: deterministic_half(),
            reps: 500,
        }
    }
}

impl Lemma1Config {
    fn validate(&self) -> Result<(), Invalid> {
        positive(self.theta0, "theta0")?;
        at_least(self.n, 1, "n")?;
        self.mechanism.validate()?;
        at_least(self.reps, 1, "reps")
    }
}
