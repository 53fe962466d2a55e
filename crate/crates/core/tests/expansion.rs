use selnorm::expansion::{
    asymptotic_selection_fn, expansion_curves, lemma1_check, normalized_score, normalized_score_stats,
    tv_between_densities, tv_scores, AsymptoticSelection, GaussianLimit, McOptions, PStarKind,
};
use selnorm::family::{ExponentialRate, Family, SufficientStats};
use selnorm::kernel::{norm_cdf, norm_pdf, QuadratureSpec, RngStream};
use selnorm::selection::{Direction, SelectionMechanism, SelectionModel, VarianceDivisor};

fn exp_model(mech: SelectionMechanism, n: usize) -> SelectionModel {
    SelectionModel::new(Family::ExponentialRate, mech, n).unwrap()
}

/// The four exponential mechanisms at sample size `n`, keeping `u − √n/θ` fixed for conditioning.
fn figure_mechanisms(n: usize) -> Vec<SelectionMechanism> {
    let u = 3.8 + ((n as f64).sqrt() - 40f64.sqrt()) / 2.0;
    vec![
        SelectionMechanism::deterministic(0.5, Direction::Below),
        SelectionMechanism::carving(0.5, 0.5, Direction::Below),
        SelectionMechanism::randomized(0.5, 1.0, Direction::Below),
        SelectionMechanism::condition_on_value(u, 1.0),
    ]
}

fn tight() -> QuadratureSpec {
    QuadratureSpec::default().with_abs_tol(1e-12).with_rel_tol(1e-10)
}

#[test]
fn normalized_score_examples() {
    let theta = [2.0];
    let y = vec![0.45; 100];
    let z = normalized_score(&ExponentialRate, &theta, &y).unwrap();
    let direct: f64 = y.iter().map(|v| 1.0 / theta[0] - v).sum::<f64>() * theta[0] * theta[0] / 10.0;
    assert!((z[0] - 2.0).abs() < 1e-12);
    assert!((z[0] - direct).abs() < 1e-12);
    let zero = normalized_score(&ExponentialRate, &theta, &[0.5; 100]).unwrap();
    assert!(zero[0].abs() < 1e-12);

    let g = [-1.0, 1.0, -1.0, 1.0];
    let s = SufficientStats::of(&g).unwrap();
    let z = normalized_score_stats(Family::GaussianMeanVar, &[0.0, 1.0], &s);
    assert_eq!(z, vec![0.0, 0.0]);
    let g = [0.3, -1.2, 2.5, 0.1, 0.9];
    let s = SufficientStats::of(&g).unwrap();
    let a = normalized_score(&Family::GaussianMeanVar, &[0.2, 1.7], &g).unwrap();
    let b = normalized_score_stats(Family::GaussianMeanVar, &[0.2, 1.7], &s);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn deterministic_p_star_is_the_indicator() {
    let model = exp_model(SelectionMechanism::deterministic(0.5, Direction::Below), 40);
    let sel = asymptotic_selection_fn(&model, &[2.0], McOptions::default(), None).unwrap();
    assert_eq!(sel.kind(), PStarKind::ClosedForm);
    assert_eq!(sel.eval(&[0.1]), 1.0);
    assert_eq!(sel.eval(&[-0.1]), 0.0);
}

#[test]
fn randomized_p_star_matches_formula_and_increases() {
    let (theta, n, sw) = (2.0, 40usize, 1.0);
    let model = exp_model(SelectionMechanism::randomized(0.5, sw, Direction::Below), n);
    let sel = asymptotic_selection_fn(&model, &[theta], McOptions::default(), None).unwrap();
    let rn = (n as f64).sqrt();
    let mut prev = 0.0;
    for k in 0..=80 {
        let z = -8.0 + 0.2 * k as f64;
        let want = norm_cdf(rn * (0.5 - 1.0 / theta) / sw + z / (sw * theta * theta));
        let got = sel.eval(&[z]);
        assert!((got - want).abs() < 1e-15);
        assert!(got >= prev);
        prev = got;
    }
}

#[test]
fn condition_on_value_p_star_has_supremum_one() {
    let model = exp_model(SelectionMechanism::condition_on_value(3.8, 1.0), 40);
    let sel = asymptotic_selection_fn(&model, &[2.0], McOptions::default(), None).unwrap();
    // Peak where √n·ȳ(z) = u.
    let ybar = 3.8 / 40f64.sqrt();
    let z_peak = 4.0 * 40f64.sqrt() * (0.5 - ybar);
    assert!((sel.eval(&[z_peak]) - 1.0).abs() < 1e-12);
    for z in [-3.0, 0.0, 2.0] {
        let v = sel.eval(&[z]);
        assert!((0.0..1.0).contains(&v));
        let y = selnorm::expansion::exponential_mean_of_score(2.0, 40, z);
        let w = model.weight_of_statistic(y);
        assert!((v - w).abs() < 1e-12, "p* equals the weight at the implied mean");
    }
}

#[test]
fn carving_p_star_matches_binned_conditional_monte_carlo() {
    let (theta, n, m) = (2.0, 40usize, 20usize);
    let model = exp_model(SelectionMechanism::carving(0.5, 0.5, Direction::Below), n);
    let sel = asymptotic_selection_fn(&model, &[theta], McOptions::default(), None).unwrap();
    let centers = [-1.0, 0.0, 1.0];
    let mut hits = [0u64; 3];
    let mut counts = [0u64; 3];
    let mut rng = RngStream::new(20240611, 0);
    let rn = (n as f64).sqrt();
    for _ in 0..10_000_000u64 {
        let head = rng.gamma(m as f64, theta);
        let tail = rng.gamma((n - m) as f64, theta);
        let ybar = (head + tail) / n as f64;
        let z = theta * theta * rn * (1.0 / theta - ybar);
        for (k, c) in centers.iter().enumerate() {
            if (z - c).abs() < 0.02 {
                counts[k] += 1;
                if head / (m as f64) < 0.5 {
                    hits[k] += 1;
                }
            }
        }
    }
    for (k, c) in centers.iter().enumerate() {
        let p_hat = hits[k] as f64 / counts[k] as f64;
        let se = (p_hat * (1.0 - p_hat) / counts[k] as f64).sqrt();
        let p = sel.eval(&[*c]);
        assert!((p - p_hat).abs() < 3.0 * se, "z={c}: closed form {p}, binned {p_hat} ± {se}");
    }
}

#[test]
fn phi_star_closed_forms_and_normalization() {
    let spec = tight();
    let none = exp_model(SelectionMechanism::none(), 40);
    let lim = GaussianLimit::for_model(&none, &[2.0], McOptions::default(), None).unwrap();
    assert!((lim.phi_star(&[0.7], &spec).unwrap() - 1.0).abs() < 1e-6);

    let model = exp_model(SelectionMechanism::deterministic(0.5, Direction::Below), 40);
    let lim = GaussianLimit::for_model(&model, &[2.0], McOptions::default(), None).unwrap();
    for h in [-1.5, 0.0, 0.8] {
        let want = norm_cdf(h / 2.0);
        assert!((lim.phi_star(&[h], &spec).unwrap() - want).abs() < 1e-9);
    }
}

#[test]
fn phi_star_at_zero_approaches_phi_n() {
    let gap = |n: usize| {
        let model = exp_model(SelectionMechanism::deterministic(0.5, Direction::Below), n);
        let lim = GaussianLimit::for_model(&model, &[2.0], McOptions::default(), None).unwrap();
        (lim.phi_star(&[0.0], &tight()).unwrap() - model.ln_phi(&[2.0]).unwrap().exp()).abs()
    };
    assert!(gap(40) > gap(160));
}

#[test]
fn expansion_curves_vanish_at_zero_and_without_selection() {
    let h: Vec<Vec<f64>> = (0..=40).map(|k| vec![-2.0 + 0.1 * k as f64]).collect();
    for mech in figure_mechanisms(40) {
        let model = exp_model(mech, 40);
        let lim = GaussianLimit::for_model(&model, &[2.0], McOptions::default(), None).unwrap();
        let t = expansion_curves(&model, &lim, &h, &tight()).unwrap();
        assert!(t.issues.is_empty());
        let mid = &t.points[20];
        assert!(mid.h[0].abs() < 1e-12);
        assert!(mid.r_n.abs() < 1e-12 && mid.r_star.abs() < 1e-12);
    }
    let model = exp_model(SelectionMechanism::none(), 40);
    let lim = GaussianLimit::for_model(&model, &[2.0], McOptions::default(), None).unwrap();
    let t = expansion_curves(&model, &lim, &h, &tight()).unwrap();
    assert!(t.points.iter().all(|p| p.r_n == 0.0 && p.r_star == 0.0));
}

#[test]
fn expansion_curves_report_inadmissible_points() {
    let model = exp_model(SelectionMechanism::deterministic(0.5, Direction::Below), 4);
    let lim = GaussianLimit::for_model(&model, &[2.0], McOptions::default(), None).unwrap();
    let t = expansion_curves(&model, &lim, &[vec![-5.0], vec![0.0]], &tight()).unwrap();
    assert_eq!(t.issues.len(), 1);
    assert_eq!(t.issues[0].0, 0);
    assert!(t.points[0].r_n.is_nan());
}

#[test]
fn expansion_gap_shrinks_with_n() {
    let h: Vec<Vec<f64>> = (0..=40).map(|k| vec![-2.0 + 0.1 * k as f64]).collect();
    let small = figure_mechanisms(40);
    let large = figure_mechanisms(160);
    for (a, b) in small.into_iter().zip(large) {
        let gap = |mech: SelectionMechanism, n: usize| {
            let model = exp_model(mech, n);
            let lim = GaussianLimit::for_model(&model, &[2.0], McOptions::default(), None).unwrap();
            expansion_curves(&model, &lim, &h, &tight()).unwrap().sup_gap()
        };
        let (g40, g160) = (gap(a, 40), gap(b, 160));
        assert!(g40.is_finite() && g160 < g40, "{}: {g40} vs {g160}", a.name());
    }
}

#[test]
fn tv_of_identical_densities_is_zero() {
    let spec = QuadratureSpec::default();
    let tv = tv_between_densities(norm_pdf, norm_pdf, -10.0, 10.0, &[], 100, &spec).unwrap();
    assert!(tv.abs() < 1e-8);
    let tv = tv_between_densities(norm_pdf, |x| norm_pdf(x - 1.0), -14.0, 14.0, &[], 500, &spec).unwrap();
    assert!((tv - (2.0 * norm_cdf(0.5) - 1.0)).abs() < 1e-8);
}

#[test]
fn tv_scores_without_selection_is_small() {
    let model = exp_model(SelectionMechanism::none(), 400);
    let tv = tv_scores(&model, &[2.0], 4000).unwrap();
    assert!(tv > 0.0 && tv < 0.05, "{tv}");
}

#[test]
fn tv_scores_decrease_and_are_resolution_stable() {
    let mech = SelectionMechanism::deterministic(0.5, Direction::Below);
    let tvs: Vec<f64> = [25, 100, 400]
        .iter()
        .map(|&n| tv_scores(&exp_model(mech, n), &[2.0], 4000).unwrap())
        .collect();
    assert!(tvs[0] > tvs[1] && tvs[1] > tvs[2], "{tvs:?}");
    let fine = tv_scores(&exp_model(mech, 100), &[2.0], 8000).unwrap();
    assert!((fine - tvs[1]).abs() < 1e-6);
}

#[test]
fn tv_scores_needs_the_exponential_family() {
    let model = SelectionModel::winners(20, 20, 1.0, VarianceDivisor::Mle).unwrap();
    assert!(tv_scores(&model, &[0.0, 1.0], 100).is_err());
}

fn winners_limit(seed: u64, options: McOptions) -> GaussianLimit {
    let model = SelectionModel::winners(20, 20, 1.0, VarianceDivisor::Mle).unwrap();
    let mut rng = RngStream::new(seed, 0);
    GaussianLimit::for_model(&model, &[0.0, 1.0], options, Some(&mut rng)).unwrap()
}

#[test]
fn winners_p_star_is_sigmoidal_in_z1() {
    let lim = winners_limit(7, McOptions::default());
    let AsymptoticSelection::ConditionalMc(w) = lim.selection() else {
        panic!("expected conditional Monte Carlo");
    };
    let vals: Vec<f64> = (0..=40).map(|k| w.eval_direct(&[-4.0 + 0.2 * k as f64, 0.0])).collect();
    assert!(vals[0] < 0.01 && vals[40] > 0.99);
    assert!(vals.windows(2).all(|p| p[1] >= p[0]));
    // Off the support of the score.
    assert_eq!(w.eval_direct(&[0.0, -10.0]), 0.0);
}

#[test]
fn winners_p_star_replays_and_varies_within_binomial_error() {
    let opts = McOptions {
        grid_points: 0,
        ..McOptions::default()
    };
    let a = winners_limit(11, opts);
    let b = winners_limit(11, opts);
    let c = winners_limit(12, opts);
    let AsymptoticSelection::ConditionalMc(wa) = a.selection() else { unreachable!() };
    let AsymptoticSelection::ConditionalMc(wc) = c.selection() else { unreachable!() };
    for z in [[0.5, 0.0], [1.0, -0.5], [1.5, 1.0]] {
        assert_eq!(a.p_star(&z), b.p_star(&z));
        assert!(wa.std_error(&z) <= 0.5 / (wa.draws() as f64).sqrt());
        let se = wa.std_error(&z).hypot(wc.std_error(&z));
        assert!((a.p_star(&z) - c.p_star(&z)).abs() <= 4.0 * se, "z={z:?}");
    }
}

#[test]
fn winners_phi_star_hat_integration_matches_tensor_quadrature() {
    let lim = winners_limit(3, McOptions::default());
    let spec = QuadratureSpec::default().with_abs_tol(1e-9).with_rel_tol(1e-8);
    for h in [[0.0, 0.0], [1.0, -0.5], [-1.5, 1.0]] {
        let exact = lim.phi_star(&h, &spec).unwrap();
        let tensor = lim.phi_star_tensor(&h, &spec).unwrap();
        assert!((exact - tensor).abs() < 1e-6, "h={h:?}: {exact} vs {tensor}");
    }
    let phi0 = lim.phi_star(&[0.0, 0.0], &spec).unwrap();
    assert!(phi0 > 0.1 && phi0 < 0.25, "{phi0}");
}

#[test]
fn winners_ln_phi_star_table_matches_direct_evaluation() {
    let lim = winners_limit(3, McOptions::default());
    let direct: Vec<f64> = [[0.3, 0.2], [-2.0, 1.1]]
        .iter()
        .map(|h| lim.ln_phi_star(h).unwrap())
        .collect();
    let lim = lim.with_ln_phi_star_table(8.0, 161).unwrap();
    for (h, d) in [[0.3, 0.2], [-2.0, 1.1]].iter().zip(direct) {
        let t = lim.ln_phi_star(h).unwrap();
        assert!((t - d).abs() < 1e-3, "{h:?}: {t} vs {d}");
    }
}

#[test]
fn winners_quadrature_p_star_matches_a_large_bank() {
    for divisor in [VarianceDivisor::Mle, VarianceDivisor::Unbiased] {
        let model = SelectionModel::winners(20, 20, 1.0, divisor).unwrap();
        let opts = McOptions {
            draws: 400_000,
            grid_points: 0,
            ..McOptions::default()
        };
        let mc = GaussianLimit::for_model(&model, &[0.0, 1.0], opts, Some(&mut RngStream::new(13, 0))).unwrap();
        let quad = GaussianLimit::for_model(
            &model,
            &[0.0, 1.0],
            McOptions {
                grid_points: 0,
                ..McOptions::quadrature()
            },
            None,
        )
        .unwrap();
        assert_eq!(quad.selection().kind(), PStarKind::ConditionalQuadrature);
        let AsymptoticSelection::ConditionalMc(w) = mc.selection() else { unreachable!() };
        for z in [[-2.5, 0.0], [-1.0, 1.0], [0.0, 0.0], [0.7, -1.2], [2.0, 0.5], [1.0, -5.0]] {
            let (p, q) = (mc.p_star(&z), quad.p_star(&z));
            let se = w.std_error(&z).max(1e-12);
            assert!((p - q).abs() < 4.0 * se, "{divisor:?} z={z:?}: bank {p} ± {se}, quadrature {q}");
        }
        assert_eq!(quad.p_star(&[0.0, -10.0]), 0.0);
    }
}

#[test]
fn winners_quadrature_p_star_is_monotone_with_smooth_log_tails() {
    let model = SelectionModel::winners(20, 20, 1.0, VarianceDivisor::Mle).unwrap();
    let lim = GaussianLimit::for_model(&model, &[0.0, 1.0], McOptions::quadrature(), None).unwrap();
    let AsymptoticSelection::ConditionalMc(w) = lim.selection() else { unreachable!() };
    let ln: Vec<f64> = (0..=60).map(|k| w.ln_eval_quadrature(&[-9.0 + 0.2 * k as f64, 0.3])).collect();
    // Far enough left no configuration clears the threshold, so p* vanishes exactly.
    let first = ln.iter().position(|v| v.is_finite()).unwrap();
    assert!(first > 0 && ln[..first].iter().all(|v| *v == f64::NEG_INFINITY));
    let live = &ln[first..];
    assert!(live.iter().all(|v| *v <= 0.0));
    assert!(live.windows(2).all(|p| p[1] > p[0]));
    assert!(live[0] < -40.0);
    let smooth: Vec<f64> = live.iter().copied().filter(|v| *v > -15.0).collect();
    assert!(smooth.windows(3).all(|p| (p[2] - 2.0 * p[1] + p[0]).abs() < 0.5));
    // Below-threshold selection complements the above one.
    let model = SelectionModel::new(
        Family::GaussianMeanVar,
        SelectionMechanism {
            kind: selnorm::selection::MechanismKind::Deterministic {
                threshold: 1.0,
                direction: Direction::Below,
            },
            ..SelectionMechanism::winners(20, 1.0, VarianceDivisor::Mle)
        },
        40,
    )
    .unwrap();
    let below = GaussianLimit::for_model(&model, &[0.0, 1.0], McOptions { grid_points: 0, ..McOptions::quadrature() }, None).unwrap();
    let above = GaussianLimit::for_model(
        &SelectionModel::winners(20, 20, 1.0, VarianceDivisor::Mle).unwrap(),
        &[0.0, 1.0],
        McOptions { grid_points: 0, ..McOptions::quadrature() },
        None,
    )
    .unwrap();
    for z in [[-1.0, 0.0], [0.5, 0.5], [2.0, -1.0]] {
        assert!((below.p_star(&z) + above.p_star(&z) - 1.0).abs() < 1e-8, "z={z:?}");
    }
}

#[test]
fn winners_quadrature_limit_builds_its_tables_without_rng() {
    let model = SelectionModel::winners(20, 20, 1.0, VarianceDivisor::Mle).unwrap();
    assert!(matches!(
        GaussianLimit::for_model(&model, &[0.0, 1.0], McOptions::default(), None),
        Err(selnorm::Error::Misuse(_))
    ));
    let lim = GaussianLimit::for_model(&model, &[0.0, 1.0], McOptions::quadrature(), None)
        .unwrap()
        .with_ln_phi_star_table(8.0, 161)
        .unwrap();
    let spec = QuadratureSpec::default().with_abs_tol(1e-12).with_rel_tol(1e-9);
    for h in [[0.0, 0.0], [-4.0, 0.5], [-7.0, -1.0]] {
        let tensor = lim.phi_star_tensor(&h, &spec).unwrap().ln();
        let table = lim.ln_phi_star(&h).unwrap();
        assert!((table - tensor).abs() < 0.02, "h={h:?}: table {table}, tensor {tensor}");
    }
}

#[test]
fn lemma1_ratios_stay_bounded_and_concentrate() {
    let carve = SelectionMechanism::carving(0.5, 0.5, Direction::Below);
    let r100 = lemma1_check(&exp_model(carve, 100), &[2.0], 200, 5, 4).unwrap();
    assert!(!r100.flagged);
    assert!(r100.ratios.iter().all(|&r| r > 0.1 && r < 10.0));
    let r400 = lemma1_check(&exp_model(carve, 400), &[2.0], 200, 5, 4).unwrap();
    assert!(r400.iqr < r100.iqr, "{} vs {}", r400.iqr, r100.iqr);

    let none = lemma1_check(&exp_model(SelectionMechanism::none(), 50), &[2.0], 20, 5, 1).unwrap();
    assert!(none.ratios.iter().all(|&r| r == 1.0));
}
