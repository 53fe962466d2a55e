use selnorm::calibration::{
    coverage_table, ks_uniform_test, pit, pit_experiment, undercoverage_check, CoverageOptions, CoverageSetting,
    ScalarSelection, SelectiveGaussian, UndercoverageSubject,
};
use selnorm::expansion::{GaussianLimit, McOptions};
use selnorm::family::Family;
use selnorm::kernel::{norm_cdf, RngStream};
use selnorm::posterior::{GammaConvention, GridPosterior, GridSpec, Prior};
use selnorm::selection::{Direction, SelectionMechanism, SelectionModel, DEFAULT_MAX_ATTEMPTS};

const ALPHAS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

fn exp_model(mech: SelectionMechanism, n: usize) -> SelectionModel {
    SelectionModel::new(Family::ExponentialRate, mech, n).unwrap()
}

fn fig2_prior() -> Prior {
    Prior::gamma(1.0, 0.1, GammaConvention::Rate).unwrap()
}

#[test]
fn pit_of_the_median_and_off_grid_points() {
    let post = GridPosterior::fit(
        |t| -0.5 * t * t,
        (f64::NEG_INFINITY, f64::INFINITY),
        0.0,
        1.0,
        &GridSpec::default(),
    )
    .unwrap();
    let mid = pit(&post, post.quantile(0.5).unwrap());
    assert!((mid.value - 0.5).abs() < 1e-6);
    assert!(!mid.clamped);
    let below = pit(&post, -1e3);
    assert_eq!(below.value, 0.0);
    assert!(below.clamped);
    assert_eq!(pit(&post, 1e3).value, 1.0);
}

#[test]
fn pit_without_selection_is_uniform_under_the_invariant_prior() {
    let model = exp_model(SelectionMechanism::none(), 100);
    let report = pit_experiment(&model, 2.0, &Prior::ScaleInvariant, 2000, 21, 4).unwrap();
    assert!(!report.ks_exact.reject, "{:?}", report.ks_exact);
    assert!(report.pit_exact.iter().all(|p| (0.0..=1.0).contains(p)));
    assert_eq!(report.clamped, 0);
    assert!(pit_experiment(&model, 2.0, &Prior::ScaleInvariant, 99, 21, 1).is_err());
}

#[test]
fn proper_prior_pit_approaches_uniformity_without_selection() {
    let ks = |n| {
        let model = exp_model(SelectionMechanism::none(), n);
        let report = pit_experiment(&model, 2.0, &fig2_prior(), 2000, 23, 4).unwrap();
        report.ks_exact.statistic
    };
    assert!(ks(400) < ks(100));
}

#[test]
fn deterministic_selection_miscalibrates_and_randomization_helps() {
    let det = exp_model(SelectionMechanism::deterministic(0.5, Direction::Below), 50);
    let rand = exp_model(SelectionMechanism::randomized(0.5, 0.2, Direction::Below), 50);
    let a = pit_experiment(&det, 2.0, &fig2_prior(), 1000, 22, 4).unwrap();
    let b = pit_experiment(&rand, 2.0, &fig2_prior(), 1000, 22, 4).unwrap();
    assert!(a.ks_exact.reject, "{:?}", a.ks_exact);
    assert!(b.ks_exact.statistic < a.ks_exact.statistic, "{} vs {}", b.ks_exact.statistic, a.ks_exact.statistic);
}

#[test]
fn gaussian_threshold_selection_undercovers() {
    let g = SelectiveGaussian::new(1.0, ScalarSelection::Threshold { c: 0.0 }).unwrap();
    for (k, theta0) in [0.0, 1.0].into_iter().enumerate() {
        let report = undercoverage_check(&UndercoverageSubject::Gaussian(g), theta0, &ALPHAS, 10_000, 30 + k as u64, 4).unwrap();
        assert!(report.all_undercover(), "θ₀ = {theta0}: violations {:?}", report.violations());
        assert!(!ks_uniform_test(&report.matching, 0.01).reject);
    }
}

#[test]
fn constant_selection_restores_matching() {
    let g = SelectiveGaussian::new(1.0, ScalarSelection::Constant).unwrap();
    let report = undercoverage_check(&UndercoverageSubject::Gaussian(g), 0.4, &ALPHAS, 10_000, 33, 4).unwrap();
    for row in &report.rows {
        assert!((row.p_hat - row.alpha).abs() <= 3.0 * row.se, "{row:?}");
    }
    assert!(report.violations().len() == ALPHAS.len());
}

#[test]
fn matching_transform_identities() {
    let free = SelectiveGaussian::new(1.5, ScalarSelection::Constant).unwrap();
    for (theta, y) in [(0.0, 0.3), (1.0, -2.0), (2.0, 4.0)] {
        let want = 1.0 - norm_cdf((y - theta) / 1.5);
        assert!((free.matching_pit(theta, y).unwrap() - want).abs() < 1e-12);
    }
    for sel in [ScalarSelection::Threshold { c: 0.0 }, ScalarSelection::Probit { c: 0.5, s: 0.7 }] {
        let g = SelectiveGaussian::new(1.0, sel).unwrap();
        let mut prev = 1.0 + 1e-12;
        for i in 0..80 {
            let y = -3.0 + 0.1 * i as f64;
            let h = g.matching_pit(1.0, y).unwrap();
            assert!(h <= prev + 1e-12, "{sel:?} at {y}");
            prev = h;
        }
    }
}

#[test]
fn probit_matching_transform_is_uniform_under_conditional_sampling() {
    let g = SelectiveGaussian::new(1.0, ScalarSelection::Probit { c: 0.5, s: 0.7 }).unwrap();
    let mut rng = RngStream::new(34, 0);
    let hs: Vec<f64> = (0..10_000)
        .map(|_| {
            let y = g.sample(-0.3, &mut rng, DEFAULT_MAX_ATTEMPTS).unwrap();
            g.matching_pit(-0.3, y).unwrap()
        })
        .collect();
    assert!(!ks_uniform_test(&hs, 0.01).reject);
}

#[test]
fn undercoverage_grows_with_the_threshold() {
    let gaps: Vec<f64> = [-1.0, 0.0, 1.0]
        .into_iter()
        .map(|c| {
            let g = SelectiveGaussian::new(1.0, ScalarSelection::Threshold { c }).unwrap();
            undercoverage_check(&UndercoverageSubject::Gaussian(g), 0.0, &ALPHAS, 10_000, 35, 4)
                .unwrap()
                .max_gap()
        })
        .collect();
    assert!(gaps[0] <= gaps[1] && gaps[1] <= gaps[2], "{gaps:?}");
}

#[test]
fn limit_of_the_exponential_model_maps_to_a_selective_gaussian() {
    let model = exp_model(SelectionMechanism::deterministic(0.5, Direction::Below), 50);
    let limit = GaussianLimit::for_model(&model, &[2.0], McOptions::default(), None).unwrap();
    let g = SelectiveGaussian::from_limit(&limit).unwrap();
    assert!((g.sigma - 2.0).abs() < 1e-12);
    assert!(matches!(g.selection, ScalarSelection::Threshold { .. }));
    let above = exp_model(SelectionMechanism::deterministic(0.5, Direction::Above), 50);
    let limit = GaussianLimit::for_model(&above, &[2.0], McOptions::default(), None).unwrap();
    assert!(SelectiveGaussian::from_limit(&limit).is_err());
}

#[test]
fn exponential_deterministic_selection_undercovers() {
    let model = exp_model(SelectionMechanism::deterministic(0.5, Direction::Below), 50);
    let report = undercoverage_check(&UndercoverageSubject::Model(model), 2.0, &ALPHAS, 4000, 36, 4).unwrap();
    assert!(report.all_undercover(), "violations {:?}", report.violations());
}

#[test]
fn small_coverage_table_is_deterministic_and_sane() {
    let options = CoverageOptions {
        chain_steps: 4000,
        mc: McOptions {
            draws: 2000,
            ..McOptions::default()
        },
        ..CoverageOptions::default()
    };
    let settings = [CoverageSetting::new(20, 20, 1.0)];
    let a = coverage_table(&settings, 12, 40, 4, &options).unwrap();
    let b = coverage_table(&settings, 12, 40, 1, &options).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 2);
    for row in &a {
        assert!((0.0..=1.0).contains(&row.mean_content));
        assert!(row.contents.iter().all(|c| (0.0..=1.0).contains(c)));
        assert_eq!(row.reps + row.skipped, 12);
    }
    assert!(coverage_table(&settings, 0, 40, 1, &options).is_err());
}

#[test]
fn coverage_without_selection_is_nominal_and_se_scales() {
    let options = CoverageOptions {
        chain_steps: 8000,
        ..CoverageOptions::default()
    };
    let setting = CoverageSetting {
        n1: 100,
        n2: 100,
        threshold: None,
    };
    let reps = 60;
    let rows = coverage_table(&[setting], reps, 41, 4, &options).unwrap();
    for row in &rows {
        let se = row.sd_content / (row.reps as f64).sqrt();
        assert!((row.mean_content - 0.9).abs() < 3.0 * se, "{row:?}");
        let half = row.contents.len() / 2;
        let (first, second) = row.contents.split_at(half);
        let m1 = first.iter().sum::<f64>() / first.len() as f64;
        let m2 = second.iter().sum::<f64>() / second.len() as f64;
        let se_diff = row.sd_content * (1.0 / first.len() as f64 + 1.0 / second.len() as f64).sqrt();
        assert!((m1 - m2).abs() < 4.0 * se_diff, "halves {m1} {m2} se {se_diff}");
    }
}
