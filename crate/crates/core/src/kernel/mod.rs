//! Deterministic numerical substrate: special functions, quadrature,
//! interpolation tables and reproducible random streams.

pub mod interp;
pub mod quadrature;
pub mod replicate;
pub mod rng;
pub mod special;
pub mod summary;

pub use interp::{CubicSpline, UniformGrid2d};
pub use quadrature::{integrate, integrate_enveloped, integrate_mapped, integrate_pieces, ln_integrate_unimodal, Envelope, QuadratureSpec};
pub use replicate::replicate;
pub use rng::RngStream;
pub use summary::{empirical_quantile, mean_sd};
pub use special::{
    erf, erfc, ln_beta, ln_gamma, ln_gamma_pdf, ln_norm_cdf, ln_norm_cdf_scaled, ln_norm_pdf, ln_reg_beta_pq, ln_reg_gamma_lower, ln_reg_gamma_upper, norm_cdf,
    norm_pdf, norm_quantile, norm_sf, reg_beta, reg_gamma_lower, reg_gamma_upper, std_normal, NormalFn,
};
