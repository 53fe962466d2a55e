//! Base IID parametric families.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::RngStream;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// An IID family `F_θ` for scalar observations.
pub trait ParametricFamily {
    /// Parameter dimension `p`.
    fn dim(&self) -> usize;

    fn is_admissible(&self, theta: &[f64]) -> bool;

    fn in_support(&self, y: f64) -> bool;

    fn log_density(&self, theta: &[f64], y: f64) -> f64;

    fn score(&self, theta: &[f64], y: f64) -> DVector<f64>;

    fn fisher_info(&self, theta: &[f64]) -> DMatrix<f64>;

    fn mle(&self, ys: &[f64]) -> Result<Vec<f64>>;

    fn sample(&self, theta: &[f64], n: usize, rng: &mut RngStream) -> Vec<f64>;

    fn log_likelihood(&self, theta: &[f64], ys: &[f64]) -> f64 {
        ys.iter().map(|&y| self.log_density(theta, y)).sum()
    }

    /// Length and admissibility check with a descriptive error.
    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        if !self.is_admissible(theta) {
            return Err(Error::Domain(format!("parameter {theta:?} is not admissible")));
        }
        Ok(())
    }
}

/// Exponential distribution with rate `θ > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExponentialRate;

/// Gaussian with unknown mean and variance, `θ = (μ, σ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GaussianMeanVar;

impl ParametricFamily for ExponentialRate {
    fn dim(&self) -> usize {
        1
    }

    fn is_admissible(&self, theta: &[f64]) -> bool {
        theta.len() == 1 && theta[0] > 0.0 && theta[0].is_finite()
    }

    fn in_support(&self, y: f64) -> bool {
        y >= 0.0 && y.is_finite()
    }

    fn log_density(&self, theta: &[f64], y: f64) -> f64 {
        if y < 0.0 {
            return f64::NEG_INFINITY;
        }
        theta[0].ln() - theta[0] * y
    }

    fn score(&self, theta: &[f64], y: f64) -> DVector<f64> {
        DVector::from_element(1, 1.0 / theta[0] - y)
    }

    fn fisher_info(&self, theta: &[f64]) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 1.0 / (theta[0] * theta[0]))
    }

    fn mle(&self, ys: &[f64]) -> Result<Vec<f64>> {
        let s = SufficientStats::of(ys)?;
        if !(s.mean > 0.0) {
            return Err(Error::domain("exponential MLE needs a positive sample mean"));
        }
        Ok(vec![1.0 / s.mean])
    }

    fn sample(&self, theta: &[f64], n: usize, rng: &mut RngStream) -> Vec<f64> {
        (0..n).map(|_| rng.exp1() / theta[0]).collect()
    }

    fn log_likelihood(&self, theta: &[f64], ys: &[f64]) -> f64 {
        match SufficientStats::of(ys) {
            Ok(s) => self.log_likelihood_stats(theta, &s),
            Err(_) => 0.0,
        }
    }
}

impl ExponentialRate {
    pub fn log_likelihood_stats(&self, theta: &[f64], s: &SufficientStats) -> f64 {
        let n = s.n as f64;
        n * theta[0].ln() - theta[0] * n * s.mean
    }
}

impl ParametricFamily for GaussianMeanVar {
    fn dim(&self) -> usize {
        2
    }

    fn is_admissible(&self, theta: &[f64]) -> bool {
        theta.len() == 2 && theta[0].is_finite() && theta[1] > 0.0 && theta[1].is_finite()
    }

    fn in_support(&self, y: f64) -> bool {
        y.is_finite()
    }

    fn log_density(&self, theta: &[f64], y: f64) -> f64 {
        let d = y - theta[0];
        -0.5 * (LN_2PI + theta[1].ln() + d * d / theta[1])
    }

    fn score(&self, theta: &[f64], y: f64) -> DVector<f64> {
        let (mu, v) = (theta[0], theta[1]);
        let d = y - mu;
        DVector::from_vec(vec![d / v, 0.5 * (d * d / (v * v) - 1.0 / v)])
    }

    fn fisher_info(&self, theta: &[f64]) -> DMatrix<f64> {
        let v = theta[1];
        DMatrix::from_diagonal(&DVector::from_vec(vec![1.0 / v, 0.5 / (v * v)]))
    }

    fn mle(&self, ys: &[f64]) -> Result<Vec<f64>> {
        let s = SufficientStats::of(ys)?;
        if !(s.var_mle > 0.0) {
            return Err(Error::domain("Gaussian MLE needs a nondegenerate sample"));
        }
        Ok(vec![s.mean, s.var_mle])
    }

    fn sample(&self, theta: &[f64], n: usize, rng: &mut RngStream) -> Vec<f64> {
        let sd = theta[1].sqrt();
        (0..n).map(|_| theta[0] + sd * rng.normal()).collect()
    }

    fn log_likelihood(&self, theta: &[f64], ys: &[f64]) -> f64 {
        match SufficientStats::of(ys) {
            Ok(s) => self.log_likelihood_stats(theta, &s),
            Err(_) => 0.0,
        }
    }
}

impl GaussianMeanVar {
    pub fn log_likelihood_stats(&self, theta: &[f64], s: &SufficientStats) -> f64 {
        let n = s.n as f64;
        let d = s.mean - theta[0];
        -0.5 * n * (LN_2PI + theta[1].ln() + (s.var_mle + d * d) / theta[1])
    }
}

/// Sample size, mean and MLE variance (divisor `n`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SufficientStats {
    pub n: usize,
    pub mean: f64,
    pub var_mle: f64,
}

impl SufficientStats {
    pub fn of(ys: &[f64]) -> Result<Self> {
        if ys.is_empty() {
            return Err(Error::domain("empty sample"));
        }
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let var_mle = ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
        Ok(Self {
            n: ys.len(),
            mean,
            var_mle,
        })
    }
}

/// The two concrete families behind one type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    ExponentialRate,
    GaussianMeanVar,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::ExponentialRate => "exponential_rate",
            Family::GaussianMeanVar => "gaussian_mean_var",
        }
    }

    pub fn log_likelihood_stats(&self, theta: &[f64], s: &SufficientStats) -> f64 {
        match self {
            Family::ExponentialRate => ExponentialRate.log_likelihood_stats(theta, s),
            Family::GaussianMeanVar => GaussianMeanVar.log_likelihood_stats(theta, s),
        }
    }

    fn inner(&self) -> &dyn ParametricFamily {
        match self {
            Family::ExponentialRate => &ExponentialRate,
            Family::GaussianMeanVar => &GaussianMeanVar,
        }
    }
}

impl ParametricFamily for Family {
    fn dim(&self) -> usize {
        self.inner().dim()
    }

    fn is_admissible(&self, theta: &[f64]) -> bool {
        self.inner().is_admissible(theta)
    }

    fn in_support(&self, y: f64) -> bool {
        self.inner().in_support(y)
    }

    fn log_density(&self, theta: &[f64], y: f64) -> f64 {
        self.inner().log_density(theta, y)
    }

    fn score(&self, theta: &[f64], y: f64) -> DVector<f64> {
        self.inner().score(theta, y)
    }

    fn fisher_info(&self, theta: &[f64]) -> DMatrix<f64> {
        self.inner().fisher_info(theta)
    }

    fn mle(&self, ys: &[f64]) -> Result<Vec<f64>> {
        self.inner().mle(ys)
    }

    fn sample(&self, theta: &[f64], n: usize, rng: &mut RngStream) -> Vec<f64> {
        self.inner().sample(theta, n, rng)
    }

    fn log_likelihood(&self, theta: &[f64], ys: &[f64]) -> f64 {
        self.inner().log_likelihood(theta, ys)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sufficient_statistic_likelihoods_match_sums() {
        let ys = [0.3, 1.2, 0.05, 2.4, 0.7];
        for fam in [Family::ExponentialRate, Family::GaussianMeanVar] {
            let theta: Vec<f64> = if fam.dim() == 1 { vec![1.7] } else { vec![0.4, 1.3] };
            let direct: f64 = ys.iter().map(|&y| fam.log_density(&theta, y)).sum();
            assert!((fam.log_likelihood(&theta, &ys) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn mle_values() {
        let ys = [1.0, 2.0, 3.0, 6.0];
        assert!((ExponentialRate.mle(&ys).unwrap()[0] - 1.0 / 3.0).abs() < 1e-15);
        let g = GaussianMeanVar.mle(&ys).unwrap();
        assert_eq!(g[0], 3.0);
        assert!((g[1] - 3.5).abs() < 1e-12);
        assert!(GaussianMeanVar.mle(&[1.0, 1.0]).is_err());
    }

    #[test]
    fn parameter_checks() {
        assert!(Family::ExponentialRate.check_theta(&[0.0]).is_err());
        assert!(Family::GaussianMeanVar.check_theta(&[0.0, -1.0]).is_err());
        assert!(matches!(
            Family::GaussianMeanVar.check_theta(&[0.0]),
            Err(Error::Dimension { expected: 2, got: 1 })
        ));
    }
}
