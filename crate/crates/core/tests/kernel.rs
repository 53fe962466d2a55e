use proptest::prelude::*;
use selnorm::kernel::{
    integrate, integrate_enveloped, norm_cdf, norm_pdf, reg_gamma_lower, replicate, std_normal, Envelope, NormalFn,
    QuadratureSpec, RngStream,
};

#[test]
fn std_normal_examples() {
    assert_eq!(std_normal(NormalFn::Cdf, 0.0).unwrap(), 0.5);
    assert!(std_normal(NormalFn::Quantile, 0.5).unwrap().abs() < 1e-15);
    assert!((std_normal(NormalFn::Cdf, 1.959964).unwrap() - 0.975).abs() < 1e-6);
    assert!(std_normal(NormalFn::Quantile, 0.0).is_err());
    assert!(std_normal(NormalFn::Quantile, 1.0).is_err());
    for p in [1e-10, 0.01, 0.3, 0.9, 1.0 - 1e-9] {
        let x = std_normal(NormalFn::Quantile, p).unwrap();
        assert!((norm_cdf(x) - p).abs() < 1e-9 * p.max(1e-3));
    }
}

#[test]
fn reg_gamma_lower_examples() {
    for x in [0.5, 1.0, 2.0] {
        assert!((reg_gamma_lower(1.0, x).unwrap() - (1.0 - (-x as f64).exp())).abs() < 1e-14);
    }
    assert_eq!(reg_gamma_lower(3.0, 0.0).unwrap(), 0.0);
    assert!(reg_gamma_lower(0.0, 1.0).is_err());
    assert!(reg_gamma_lower(1.0, -1.0).is_err());
}

#[test]
fn reg_gamma_lower_matches_a_gamma_monte_carlo_cdf() {
    let exact = reg_gamma_lower(40.0, 40.0).unwrap();
    let mut rng = RngStream::new(11, 0);
    let draws = 1_000_000;
    let hits = (0..draws).filter(|_| rng.gamma(40.0, 80.0) <= 0.5).count() as f64;
    let p = hits / draws as f64;
    let se = (p * (1.0 - p) / draws as f64).sqrt();
    assert!((p - exact).abs() < 3.0 * se, "mc {p} exact {exact} se {se}");
}

#[test]
fn integrate_examples() {
    let spec = QuadratureSpec::default();
    let total = integrate(norm_pdf, f64::NEG_INFINITY, f64::INFINITY, &spec).unwrap();
    assert!((total - 1.0).abs() < 1e-8);
    let line = integrate(|x| x, 0.0, 1.0, &spec).unwrap();
    assert!((line - 0.5).abs() < 1e-10);
    let tail = integrate(|z| if z > 1.0 { norm_pdf(z) } else { 0.0 }, f64::NEG_INFINITY, f64::INFINITY, &spec).unwrap();
    assert!((tail - (1.0 - norm_cdf(1.0))).abs() < 1e-8);
    let windowed = integrate_enveloped(norm_pdf, f64::NEG_INFINITY, f64::INFINITY, Envelope::new(0.0, 1.0), &[], &spec).unwrap();
    assert!((windowed - 1.0).abs() < 1e-8);
}

#[test]
fn quadrature_reports_non_convergence_with_a_partial_estimate() {
    let spec = QuadratureSpec::new(1e-14, 1e-14, 3, 8.0).unwrap();
    let err = integrate(|x: f64| (1.0 / x).sin(), 1e-6, 1.0, &spec).unwrap_err();
    assert!(matches!(err, selnorm::Error::Quadrature { .. }));
    assert!(QuadratureSpec::new(1e-9, 1e-7, 2000, 5.0).is_err());
}

#[test]
fn rng_replay_and_sharded_replication() {
    let draw = |seed, id| {
        let mut r = RngStream::new(seed, id);
        (0..64).map(|_| r.uniform().to_bits()).collect::<Vec<u64>>()
    };
    assert_eq!(draw(5, 3), draw(5, 3));
    assert_ne!(draw(5, 3), draw(5, 4));
    let f = |_: usize, rng: &mut RngStream| Ok(rng.normal().to_bits());
    let serial = replicate(100, 9, 0, 1, f).unwrap();
    let parallel = replicate(100, 9, 0, 4, f).unwrap();
    assert_eq!(serial, parallel);
}

proptest! {
    #[test]
    fn normal_cdf_is_monotone_and_bounded(mut xs in prop::collection::vec(-40.0f64..40.0, 2..40)) {
        xs.sort_by(f64::total_cmp);
        let mut prev = 0.0;
        for &x in &xs {
            let p = norm_cdf(x);
            prop_assert!((0.0..=1.0).contains(&p));
            prop_assert!(p >= prev);
            prev = p;
        }
    }

    #[test]
    fn gamma_cdf_is_monotone_in_x(a in 0.1f64..1000.0, mut xs in prop::collection::vec(0.0f64..2000.0, 2..30)) {
        xs.sort_by(f64::total_cmp);
        let vals: Vec<f64> = xs.iter().map(|&x| reg_gamma_lower(a, x).unwrap()).collect();
        for w in vals.windows(2) {
            prop_assert!((0.0..=1.0).contains(&w[0]));
            prop_assert!(w[1] >= w[0] - 1e-15);
        }
    }
}
