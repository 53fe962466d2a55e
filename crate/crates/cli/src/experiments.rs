//! One runner per experiment. Each returns its tables and headline numbers;
//! nothing is written until the whole experiment has succeeded.

use serde_json::{json, Value};

use selnorm::calibration::{
    coverage_table, ks_uniform_test, pit_experiment, undercoverage_check, KsTest, SelectiveGaussian,
    UndercoverageSubject,
};
use selnorm::expansion::{expansion_curves, lemma1_check, normalized_score_stats, tv_scores, GaussianLimit, McOptions};
use selnorm::family::{Family, SufficientStats};
use selnorm::kernel::{QuadratureSpec, RngStream};
use selnorm::posterior::{
    gaussian_limit_posterior, local_posterior, selective_posterior_grid, tv_posteriors, winners_exact_posterior,
    winners_limit_posterior, Chain, GridPosterior, GridSpec, WinnersExactTarget,
};
use selnorm::selection::{LnPhiTable, DEFAULT_MAX_ATTEMPTS};

use crate::config::*;
use crate::output::{Cell, Table};

/// Why a run stopped.
#[derive(Debug)]
pub enum RunError {
    Invalid(Invalid),
    Library(selnorm::Error),
}

impl From<Invalid> for RunError {
    fn from(e: Invalid) -> Self {
        RunError::Invalid(e)
    }
}

impl From<selnorm::Error> for RunError {
    fn from(e: selnorm::Error) -> Self {
        RunError::Library(e)
    }
}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Library(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            RunError::Invalid(_) => "validation",
            RunError::Library(e) if e.is_numerical() => "numerical",
            RunError::Library(_) => "input",
        }
    }

    pub fn message(&self) -> String {
        match self {
            RunError::Invalid(e) => e.to_string(),
            RunError::Library(e) => e.to_string(),
        }
    }
}

pub struct Outcome {
    pub tables: Vec<Table>,
    pub headline: Value,
}

type Run = Result<Outcome, RunError>;

pub fn run(config: &ExperimentConfig, jobs: usize) -> Run {
    match config {
        ExperimentConfig::Expansion(c) => expansion(c),
        ExperimentConfig::ScoresTv(c) => scores(c),
        ExperimentConfig::Posterior(c) => posterior(c),
        ExperimentConfig::WinnersPosterior(c) => winners_posterior(c),
        ExperimentConfig::Pit(c) => pit(c, jobs),
        ExperimentConfig::Undercoverage(c) => undercoverage(c, jobs),
        ExperimentConfig::CoverageTable(c) => coverage(c, jobs),
        ExperimentConfig::Lemma1(c) => lemma1(c, jobs),
    }
}

fn curve_spec() -> QuadratureSpec {
    QuadratureSpec::default().with_abs_tol(1e-12).with_rel_tol(1e-10)
}

fn ks_json(ks: &KsTest) -> Value {
    json!({ "statistic": ks.statistic, "critical": ks.critical, "reject": ks.reject })
}

fn expansion(c: &ExpansionConfig) -> Run {
    let hs = c.h.values();
    let spec = curve_spec();
    let mut tables = Vec::new();
    let mut headline = serde_json::Map::new();
    match &c.model {
        ExpansionModel::Exponential { theta, n, mechanisms } => {
            let grid: Vec<Vec<f64>> = hs.iter().map(|&h| vec![h]).collect();
            for mech in mechanisms {
                let model = mech.model(*n)?;
                let limit = GaussianLimit::for_model(&model, &[*theta], McOptions::default(), None)?;
                let curves = expansion_curves(&model, &limit, &grid, &spec)?;
                let name = mech.name();
                let mut table = Table::new(format!("expansion_{name}.csv"), &["mechanism", "h", "r_n", "r_star"]);
                for p in &curves.points {
                    table.push(vec![name.into(), p.h[0].into(), p.r_n.into(), p.r_star.into()]);
                }
                headline.insert(
                    name.into(),
                    json!({ "sup_gap": curves.sup_gap(), "issues": curves.issues.len() }),
                );
                tables.push(table);
            }
        }
        ExpansionModel::Winners { winners, theta, p_star, z } => {
            let model = winners.model()?;
            let mut rng = RngStream::new(c.seed, 0);
            let limit = GaussianLimit::for_model(&model, theta, p_star.options(), Some(&mut rng))?;
            let cuts = [
                ("h1", hs.iter().map(|&h| vec![h, 0.0]).collect::<Vec<_>>()),
                ("h2", hs.iter().map(|&h| vec![1.0, h]).collect()),
            ];
            for (axis, grid) in cuts {
                let curves = expansion_curves(&model, &limit, &grid, &spec)?;
                let coord = if axis == "h1" { 0 } else { 1 };
                let mut table = Table::new(format!("expansion_winners_{axis}.csv"), &["mechanism", "h", "r_n", "r_star"]);
                for p in &curves.points {
                    table.push(vec!["winners".into(), p.h[coord].into(), p.r_n.into(), p.r_star.into()]);
                }
                headline.insert(
                    format!("winners_{axis}"),
                    json!({ "sup_gap": curves.sup_gap(), "issues": curves.issues.len() }),
                );
                tables.push(table);
            }
            let zs = z.values();
            for (axis, point) in [("z1", [0usize, 1]), ("z2", [1, 0])] {
                let mut table = Table::new(format!("p_star_{axis}.csv"), &["z", "p_star"]);
                for &v in &zs {
                    // z1 cut at z2 = 0; z2 cut at z1 = 1.
                    let q = if point[0] == 0 { [v, 0.0] } else { [1.0, v] };
                    table.push(vec![v.into(), limit.p_star(&q).into()]);
                }
                tables.push(table);
            }
            let phi = model.ln_phi(theta)?.exp();
            headline.insert("phi_n".into(), json!(phi));
        }
    }
    Ok(Outcome {
        tables,
        headline: Value::Object(headline),
    })
}

fn scores(c: &ScoresTvConfig) -> Run {
    let mut table = Table::new("scores_tv.csv", &["n", "tv"]);
    let mut tvs = Vec::new();
    for &n in &c.n {
        let tv = tv_scores(&c.mechanism.model(n)?, &[c.theta], c.resolution)?;
        table.push(vec![n.into(), tv.into()]);
        tvs.push(tv);
    }
    let decreasing = tvs.windows(2).all(|w| w[1] < w[0]);
    Ok(Outcome {
        tables: vec![table],
        headline: json!({ "n": c.n, "tv": tvs, "strictly_decreasing": decreasing }),
    })
}

fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let step = (hi - lo) / (points - 1) as f64;
    (0..points).map(|k| lo + step * k as f64).collect()
}

fn posterior(c: &PosteriorConfig) -> Run {
    let prior = c.prior.prior()?;
    let y = vec![c.ybar; c.n];
    let stats = SufficientStats::of(&y)?;
    let z = normalized_score_stats(Family::ExponentialRate, &[c.theta0], &stats)[0];
    let mut tables = Vec::new();
    let mut headline = serde_json::Map::new();
    for mech in &c.mechanisms {
        let model = mech.model(c.n)?;
        if model.selection_weight(&y)? == 0.0 {
            return Err(Invalid(format!("ybar = {} cannot be selected under {}", c.ybar, mech.name())).into());
        }
        let fitted = selective_posterior_grid(&model, &prior, &y, &GridSpec::default())?;
        let exact = local_posterior(&fitted, c.theta0, c.n)?;
        let limit = GaussianLimit::for_model(&model, &[c.theta0], McOptions::default(), None)?;
        let approx = gaussian_limit_posterior(&limit, z, &GridSpec::default())?;
        let edge = |p: &GridPosterior, q: f64| p.quantile(q);
        let lo = edge(&exact, 1e-6)?.min(edge(&approx, 1e-6)?);
        let hi = edge(&exact, 1.0 - 1e-6)?.max(edge(&approx, 1.0 - 1e-6)?);
        let name = mech.name();
        let mut table = Table::new(
            format!("posterior_{name}.csv"),
            &["grid", "density_exact", "density_limit", "cdf_exact", "cdf_limit"],
        );
        for h in linspace(lo, hi, c.grid_points) {
            table.push(vec![
                h.into(),
                exact.density_at(h).into(),
                approx.density_at(h).into(),
                exact.cdf(h).into(),
                approx.cdf(h).into(),
            ]);
        }
        headline.insert(
            name.into(),
            json!({
                "tv": tv_posteriors(&exact, &approx)?,
                "mean_exact": exact.mean(),
                "sd_exact": exact.sd(),
                "mean_limit": approx.mean(),
                "sd_limit": approx.sd(),
            }),
        );
        tables.push(table);
    }
    headline.insert("z".into(), json!(z));
    Ok(Outcome {
        tables,
        headline: Value::Object(headline),
    })
}

fn chain_table(file: &str, chain: &Chain, thin: usize) -> Table {
    let mut table = Table::new(file, &["step", "h1", "h2"]);
    for (i, s) in chain.kept().iter().enumerate().step_by(thin) {
        table.push(vec![(chain.burn_in + i).into(), s[0].into(), s[1].into()]);
    }
    table
}

fn winners_posterior(c: &WinnersPosteriorConfig) -> Run {
    let model = c.model.model()?;
    let theta0 = c.theta0;
    let y = model.sample_conditional(&theta0, &mut RngStream::new(c.seed, 0), DEFAULT_MAX_ATTEMPTS)?;
    let target = WinnersExactTarget::with_table(LnPhiTable::for_noncentrality(&model, 12.0, 401)?, &y)?;
    let z = normalized_score_stats(Family::GaussianMeanVar, &theta0, target.stats());
    let limit = GaussianLimit::for_model(&model, &theta0, c.p_star.options(), Some(&mut RngStream::new(c.seed, 1)))?
        .with_ln_phi_star_table(8.0, 161)?;
    let exact = winners_exact_posterior(&target, &theta0, c.chain.steps, &mut RngStream::new(c.seed, 2), None)?;
    let approx = winners_limit_posterior(&limit, &z, c.chain.steps, &mut RngStream::new(c.seed, 3), None)?;
    let mut params = Vec::new();
    for j in 0..2 {
        let lo = exact.quantile(j, c.levels.0);
        let hi = exact.quantile(j, c.levels.1);
        let kept = approx.kept();
        let content = kept.iter().filter(|s| s[j] >= lo && s[j] <= hi).count() as f64 / kept.len() as f64;
        params.push(json!({
            "interval_exact": [lo, hi],
            "content_limit": content,
            "ess_exact": exact.effective_sample_size(j),
            "ess_limit": approx.effective_sample_size(j),
        }));
    }
    Ok(Outcome {
        tables: vec![
            chain_table("winners_posterior_exact.csv", &exact, c.chain.thin),
            chain_table("winners_posterior_limit.csv", &approx, c.chain.thin),
        ],
        headline: json!({
            "z": z,
            "h1": params[0],
            "h2": params[1],
            "acceptance_exact": exact.acceptance_rate,
            "acceptance_limit": approx.acceptance_rate,
        }),
    })
}

fn pit(c: &PitConfig, jobs: usize) -> Run {
    let prior = c.prior.prior()?;
    let mut tables = Vec::new();
    let mut headline = serde_json::Map::new();
    for mech in &c.mechanisms {
        for &n in &c.n {
            let report = pit_experiment(&mech.model(n)?, c.theta0, &prior, c.reps, c.seed, jobs)?;
            let key = format!("{}_n{n}", mech.name());
            let mut table = Table::new(format!("pit_{key}.csv"), &["replication", "pit_exact", "pit_limit"]);
            for (i, (a, b)) in report.pit_exact.iter().zip(&report.pit_limit).enumerate() {
                table.push(vec![i.into(), (*a).into(), (*b).into()]);
            }
            headline.insert(
                key,
                json!({
                    "ks_exact": ks_json(&report.ks_exact),
                    "ks_limit": ks_json(&report.ks_limit),
                    "clamped": report.clamped,
                }),
            );
            tables.push(table);
        }
    }
    Ok(Outcome {
        tables,
        headline: Value::Object(headline),
    })
}

fn undercoverage(c: &UndercoverageConfig, jobs: usize) -> Run {
    let subject = match c.subject {
        UndercoverageModel::Gaussian { sigma, selection } => {
            UndercoverageSubject::Gaussian(SelectiveGaussian::new(sigma, UndercoverageModel::gaussian_selection(selection))?)
        }
        UndercoverageModel::Exponential { n, mechanism } => UndercoverageSubject::Model(mechanism.model(n)?),
    };
    let mut tables = Vec::new();
    let mut cases = Vec::new();
    for (k, &theta0) in c.theta0.iter().enumerate() {
        let report = undercoverage_check(&subject, theta0, &c.alphas, c.reps, c.seed.wrapping_add(k as u64), jobs)?;
        let mut table = Table::new(format!("undercoverage_{k}.csv"), &["alpha", "p_hat", "se"]);
        for row in &report.rows {
            table.push(vec![row.alpha.into(), row.p_hat.into(), row.se.into()]);
        }
        let matching = (!report.matching.is_empty()).then(|| ks_json(&ks_uniform_test(&report.matching, 0.01)));
        cases.push(json!({
            "file": table.file,
            "theta0": theta0,
            "all_undercover": report.all_undercover(),
            "max_gap": report.max_gap(),
            "violations": report.violations(),
            "matching_ks": matching,
        }));
        tables.push(table);
    }
    Ok(Outcome {
        tables,
        headline: json!({ "cases": cases }),
    })
}

fn coverage(c: &CoverageTableConfig, jobs: usize) -> Run {
    let settings: Vec<_> = c.cells.iter().map(CellConfig::setting).collect();
    let rows = coverage_table(&settings, c.reps, c.seed, jobs, &c.options())?;
    let mut table = Table::new(
        "coverage_table.csv",
        &["n1", "n2", "t", "param", "mean_content", "sd_content", "reps"],
    );
    let mut cells = Vec::new();
    for row in &rows {
        let param = if row.param == 1 { "h1" } else { "h2" };
        table.push(vec![
            row.setting.n1.into(),
            row.setting.n2.into(),
            row.setting.threshold.into(),
            param.into(),
            row.mean_content.into(),
            row.sd_content.into(),
            row.reps.into(),
        ]);
        cells.push(json!({
            "n1": row.setting.n1,
            "n2": row.setting.n2,
            "t": row.setting.threshold,
            "param": param,
            "mean_content": row.mean_content,
            "sd_content": row.sd_content,
            "skipped": row.skipped,
        }));
    }
    Ok(Outcome {
        tables: vec![table],
        headline: json!({
            "theta0": c.theta0,
            "note": "every cell generates data at theta0; the per-cell truth is an assumption",
            "reps": c.reps,
            "cells": cells,
        }),
    })
}

fn lemma1(c: &Lemma1Config, jobs: usize) -> Run {
    let report = lemma1_check(&c.mechanism.model(c.n)?, &[c.theta0], c.reps, c.seed, jobs)?;
    let mut table = Table::new("lemma1.csv", &["replication", "ratio"]);
    for (i, r) in report.ratios.iter().enumerate() {
        table.push(vec![i.into(), Cell::Num(*r)]);
    }
    Ok(Outcome {
        tables: vec![table],
        headline: json!({
            "min": report.min,
            "median": report.median,
            "max": report.max,
            "iqr": report.iqr,
            "flagged": report.flagged,
        }),
    })
}
