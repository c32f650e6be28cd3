//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use chrono::{Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wikisurvey_core::dataset::filter_votes;
use wikisurvey_core::estimator::{
    modeled_scores, mu_conditional, per_draw_scores, run_chains, summarize_scores, Cell, DesignMatrix, ModelConfig,
    MuPrior,
};
use wikisurvey_core::report::fit;
use wikisurvey_core::sim::{coverage_check, simulate, ParameterSamples, SimulationSpec, VotesPerSession};
use wikisurvey_core::{
    compute_prompt_distribution, sample_prompt, simple_score, std_normal_cdf, Choice, DatasetVote,
    EstimationDataset, Error, ItemId, OpinionMatrix, Prompt, PromptPolicyConfig, Response, ResponseId, SessionId,
    SurveyConfig, SurveyStore,
};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(got: f64, want: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure((got - want).abs() <= tol, || format!("{what}: got {got}, want {want}"))
}

fn vote(id: u64, session: u64, left: u64, right: u64, left_won: bool) -> DatasetVote {
    DatasetVote { id: ResponseId(id), session: SessionId(session), left: ItemId(left), right: ItemId(right), left_won }
}

// Reference values of the standard normal CDF.
const PHI_05: f64 = 0.691_462_461_274_013_1;
const PHI_1: f64 = 0.841_344_746_068_542_9;
const PHI_2: f64 = 0.977_249_868_051_820_8;

// ---------------------------------------------------------------------------

fn formula_fidelity() -> Check {
    const TOL: f64 = 1e-9;
    let mut n = [0usize; 4];

    // Simple score: (w + 1) / (w + l + 2) x 100, written as exact fractions.
    let simple: &[(i64, i64, f64)] = &[
        (0, 0, 50.0),
        (3, 1, 200.0 / 3.0),
        (1, 1, 50.0),
        (7, 7, 50.0),
        (12_345, 12_345, 50.0),
        (5, 0, 600.0 / 7.0),
        (0, 5, 100.0 / 7.0),
        (1, 0, 200.0 / 3.0),
        (0, 1, 100.0 / 3.0),
        (9, 0, 1000.0 / 11.0),
        (2, 7, 300.0 / 11.0),
        (99, 0, 10_000.0 / 101.0),
    ];
    for &(w, l, want) in simple {
        close(simple_score(w, l).map_err(|e| e.to_string())?, want, TOL, &format!("simple_score({w},{l})"))?;
        n[0] += 1;
    }
    ensure(simple_score(-1, 0).is_err(), || "negative wins accepted".into())?;
    for split in [0, 1, 2_500, 5_000, 9_999, 10_000] {
        let raw = split as f64 / 100.0;
        let s = simple_score(split, 10_000 - split).unwrap();
        ensure((s - raw).abs() < 0.5, || format!("bound at w = {split}: {s} vs {raw}"))?;
    }

    // Item-mean conditional: precision-weighted prior and data.
    let prior = |mu0, tau0_sq| MuPrior { mu0, tau0_sq };
    let mu: &[(f64, usize, f64, MuPrior, f64, f64)] = &[
        (1.0, 4, 1.0, prior(0.0, 4.0), 4.0 / 4.25, 1.0 / 4.25),
        (0.0, 4, 1.0, prior(0.0, 4.0), 0.0, 1.0 / 4.25),
        (2.0, 1, 1.0, prior(0.0, 1.0), 1.0, 0.5),
        (3.0, 3, 1.0, prior(1.0, 1.0), 2.5, 0.25),
        (-2.0, 8, 2.0, prior(0.0, 0.5), -1.0, 0.25),
        (1.0, 4, 1.0, prior(0.0, 1e-6), 4.0 / 1_000_004.0, 1.0 / 1_000_004.0),
        (-7.5, 200, 1.0, prior(0.0, 1e-6), -1500.0 / 1_000_200.0, 1.0 / 1_000_200.0),
        (5.0, 10, 1.0, prior(0.0, 1e12), 5.0 * 10.0 / (10.0 + 1e-12), 1.0 / (10.0 + 1e-12)),
        (0.5, 2, 0.5, prior(-1.0, 0.25), (-4.0 + 4.0) / 12.0, 1.0 / 12.0),
        (1.5, 6, 1.0, prior(0.5, 2.0), (0.25 + 9.0) / 6.5, 1.0 / 6.5),
        (4.0, 1, 3.0, prior(0.0, 9.0), 2.0, 4.5),
    ];
    for (i, &(bar, count, sigma, p, m_want, v_want)) in mu.iter().enumerate() {
        let (m, v) = mu_conditional(bar, count, sigma, p);
        close(m, m_want, TOL, &format!("mu case {i} mean"))?;
        close(v, v_want, TOL, &format!("mu case {i} variance"))?;
        n[1] += 1;
    }

    // Item scores under fixed appeal matrices.
    let phi_m1 = 1.0 - PHI_1;
    let scores: Vec<(OpinionMatrix, Vec<f64>)> = vec![
        (OpinionMatrix::from_row_major(1, 2, vec![1.0, 0.0]), vec![PHI_1 * 100.0, phi_m1 * 100.0]),
        (OpinionMatrix::from_row_major(1, 2, vec![0.0, 1.0]), vec![phi_m1 * 100.0, PHI_1 * 100.0]),
        (OpinionMatrix::from_row_major(1, 2, vec![2.0, 0.0]), vec![PHI_2 * 100.0, (1.0 - PHI_2) * 100.0]),
        (OpinionMatrix::from_row_major(1, 2, vec![0.3, -0.2]), vec![PHI_05 * 100.0, (1.0 - PHI_05) * 100.0]),
        (OpinionMatrix::from_row_major(1, 3, vec![0.0; 3]), vec![50.0; 3]),
        (OpinionMatrix::from_row_major(4, 5, vec![1.7; 20]), vec![50.0; 5]),
        (
            OpinionMatrix::from_row_major(1, 3, vec![1.0, 0.0, 0.0]),
            vec![PHI_1 * 100.0, (phi_m1 + 0.5) * 50.0, (phi_m1 + 0.5) * 50.0],
        ),
        (OpinionMatrix::from_row_major(2, 2, vec![1.0, 0.0, 0.0, 1.0]), vec![50.0, 50.0]),
        (
            OpinionMatrix::from_row_major(2, 2, vec![1.0, 0.0, 2.0, 0.0]),
            vec![(PHI_1 + PHI_2) * 50.0, (2.0 - PHI_1 - PHI_2) * 50.0],
        ),
        (
            OpinionMatrix::from_row_major(1, 3, vec![2.0, 1.0, 0.0]),
            vec![(PHI_1 + PHI_2) * 50.0, 50.0, (2.0 - PHI_1 - PHI_2) * 50.0],
        ),
    ];
    for (i, (theta, want)) in scores.iter().enumerate() {
        let got = per_draw_scores(theta).map_err(|e| e.to_string())?;
        // Constant draws: the summary is the per-draw value with a zero-width interval.
        let ids: Vec<ItemId> = (1..=theta.items() as u64).map(ItemId).collect();
        let summary = summarize_scores(&ids, &vec![got.clone(); 40], 0.95).map_err(|e| e.to_string())?;
        for (k, (g, w)) in got.iter().zip(want).enumerate() {
            close(*g, *w, TOL, &format!("score case {i} item {k}"))?;
            close(summary[k].score, *w, TOL, &format!("summary case {i} item {k}"))?;
            close(summary[k].ci_low, *w, TOL, &format!("interval case {i} item {k}"))?;
        }
        n[2] += 1;
    }
    ensure(matches!(per_draw_scores(&OpinionMatrix::zeros(3, 1)), Err(Error::TooFewItems)), || {
        "single item accepted".into()
    })?;
    // Random instances against a direct double loop.
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..20 {
        let (j, k) = (rng.random_range(1..6), rng.random_range(2..7));
        let values: Vec<f64> = (0..j * k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let theta = OpinionMatrix::from_row_major(j, k, values);
        let got = per_draw_scores(&theta).unwrap();
        for (i, g) in got.iter().enumerate() {
            let mut total = 0.0;
            for s in 0..j {
                for o in (0..k).filter(|&o| o != i) {
                    total += std_normal_cdf(theta.get(s, i) - theta.get(s, o));
                }
            }
            close(*g, total / (j * (k - 1)) as f64 * 100.0, TOL, "brute-force score")?;
        }
    }

    // Prompt distribution: min(share / c1, tau) / c2.
    let p = |a, b| Prompt::new(ItemId(a), ItemId(b)).unwrap();
    let cfg = |alpha, tau| PromptPolicyConfig { alpha, tau };
    let prompts = |n: usize| -> Vec<Prompt> { (0..n as u64).map(|i| p(100, 101 + i)).collect() };
    let dist: Vec<(Vec<f64>, PromptPolicyConfig, Vec<f64>)> = vec![
        (vec![0.0; 3], cfg(1.0, 0.05), vec![1.0 / 3.0; 3]),
        (vec![0.0, 1.0], cfg(1.0, 0.5), vec![0.6, 0.4]),
        (vec![0.0, 1.0], cfg(0.0, 1.0), vec![0.5, 0.5]),
        (vec![0.0, 0.0], cfg(1.0, 0.05), vec![0.5, 0.5]),
        (vec![0.0; 4], cfg(1.0, 1.0), vec![0.25; 4]),
        (vec![0.0, 1.0, 3.0], cfg(1.0, 1.0), vec![4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0]),
        (vec![0.0, 1.0], cfg(2.0, 1.0), vec![0.8, 0.2]),
        (vec![0.0, 3.0], cfg(0.5, 1.0), vec![2.0 / 3.0, 1.0 / 3.0]),
        (vec![0.0; 20], cfg(1.0, 0.05), vec![0.05; 20]),
        (vec![0.0, 1.0, 3.0], cfg(1.0, 0.5), vec![7.0 / 13.0, 4.0 / 13.0, 2.0 / 13.0]),
        (vec![0.0, 1.0, 3.0], cfg(1.0, 0.3), vec![21.0 / 51.0, 20.0 / 51.0, 10.0 / 51.0]),
        (vec![7.0], cfg(1.0, 0.05), vec![1.0]),
    ];
    for (i, (counts, config, want)) in dist.iter().enumerate() {
        let input: Vec<(Prompt, f64)> = prompts(counts.len()).into_iter().zip(counts.iter().copied()).collect();
        let d = compute_prompt_distribution(&input, config).map_err(|e| e.to_string())?;
        for (k, (g, w)) in d.probabilities().iter().zip(want).enumerate() {
            close(*g, *w, TOL, &format!("prompt case {i} entry {k}"))?;
        }
        n[3] += 1;
    }
    ensure(matches!(compute_prompt_distribution(&[], &cfg(1.0, 0.05)), Err(Error::NoActivePrompts)), || {
        "empty prompt set accepted".into()
    })?;
    ensure(compute_prompt_distribution(&[(p(1, 2), f64::NAN)], &cfg(1.0, 0.05)).is_err(), || {
        "non-finite count accepted".into()
    })?;
    ensure(n.iter().all(|&c| c >= 10), || format!("case counts {n:?}"))?;
    Ok(format!(
        "{} simple-score, {} item-mean, {} score and {} prompt cases at 1e-9",
        n[0], n[1], n[2], n[3]
    ))
}

// ---------------------------------------------------------------------------

fn design_matrix_oracle() -> Check {
    let d = EstimationDataset::from_votes(vec![
        vote(1, 1, 1, 4, true),
        vote(2, 1, 3, 1, false),
        vote(3, 1, 4, 3, true),
        vote(4, 2, 3, 4, true),
        vote(5, 2, 4, 2, false),
    ])
    .map_err(|e| e.to_string())?;
    let x = DesignMatrix::build(&d).map_err(|e| e.to_string())?;
    ensure(x.outcomes() == [1, 0, 1, 1, 0], || format!("Y = {:?}", x.outcomes()))?;
    let cell = |s, i| Cell { session: s, item: i };
    // theta_11 theta_13 theta_14 | theta_22 theta_23 theta_24
    ensure(x.columns() == [cell(0, 0), cell(0, 2), cell(0, 3), cell(1, 1), cell(1, 2), cell(1, 3)], || {
        format!("columns {:?}", x.columns())
    })?;
    let want: Vec<Vec<i8>> = vec![
        vec![1, 0, -1, 0, 0, 0],
        vec![-1, 1, 0, 0, 0, 0],
        vec![0, -1, 1, 0, 0, 0],
        vec![0, 0, 0, 0, 1, -1],
        vec![0, 0, 0, -1, 0, 1],
    ];
    ensure(x.to_dense() == want, || format!("X = {:?}", x.to_dense()))?;
    ensure(x.hidden() == [cell(0, 1), cell(1, 0)], || format!("hidden {:?}", x.hidden()))?;
    ensure(x.blocks() == [0..3, 3..6], || format!("blocks {:?}", x.blocks()))?;

    let one = DesignMatrix::build(&EstimationDataset::from_votes(vec![vote(1, 1, 1, 2, true)]).unwrap()).unwrap();
    ensure(one.to_dense() == vec![vec![1i8, -1]] && one.outcomes() == [1], || "single vote".into())?;
    Ok("Y = (1,0,1,1,0), 5x6 two-block X, hidden = {theta_12, theta_21}".into())
}

// ---------------------------------------------------------------------------

/// Posterior mean and sd of mu_2 by quadrature over (mu_2, d = theta_11 - theta_12),
/// with the anchor and the appeals integrated out analytically.
fn grid_posterior(left_wins: i32, right_wins: i32, tau0_sq: f64, anchor: f64) -> (f64, f64) {
    let normal = |x: f64, m: f64, v: f64| (-(x - m).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
    let lik = |d: f64| std_normal_cdf(d).powi(left_wins) * std_normal_cdf(-d).powi(right_wins);
    let (lo, hi, n) = (-14.0, 14.0, 1400);
    let h = (hi - lo) / n as f64;
    let liks: Vec<f64> = (0..=n).map(|b| lik(lo + b as f64 * h)).collect();
    let (mut z, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for a in 0..=n {
        let mu2 = lo + a as f64 * h;
        let mut inner = 0.0;
        for (b, l) in liks.iter().enumerate() {
            let w = if b == 0 || b == n { 0.5 } else { 1.0 };
            inner += w * l * normal(lo + b as f64 * h, -mu2, 2.0 + anchor);
        }
        let w = if a == 0 || a == n { 0.5 } else { 1.0 };
        let p = w * normal(mu2, 0.0, tau0_sq) * inner;
        z += p;
        s1 += p * mu2;
        s2 += p * mu2 * mu2;
    }
    let mean = s1 / z;
    (mean, (s2 / z - mean * mean).sqrt())
}

fn tiny_instance_oracle() -> Check {
    let start = Instant::now();
    // Item 1 wins twice, item 2 once, all in one session.
    let d = EstimationDataset::from_votes(vec![vote(1, 1, 1, 2, true), vote(2, 1, 2, 1, false), vote(3, 1, 2, 1, true)])
        .unwrap();
    let x = DesignMatrix::build(&d).unwrap();
    let draws = run_chains(&x, &ModelConfig { steps: 60_000, thin: 5, seed: 21, ..Default::default() })
        .map_err(|e| e.to_string())?;
    let (oracle_mean, oracle_sd) = grid_posterior(2, 1, 4.0, 1e-6);

    let series = draws.mu_series(1);
    let batches: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|c| {
            c.chunks(c.len() / 10).map(|b| {
                let m = b.iter().sum::<f64>() / b.len() as f64;
                let v = b.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (b.len() - 1) as f64;
                (m, v.sqrt())
            })
        })
        .collect();
    let nb = batches.len() as f64;
    let batch_mean = batches.iter().map(|b| b.0).sum::<f64>() / nb;
    let sd_bar = batches.iter().map(|b| b.1).sum::<f64>() / nb;
    let se_mean = (batches.iter().map(|b| (b.0 - batch_mean).powi(2)).sum::<f64>() / (nb - 1.0) / nb).sqrt();
    let se_sd = (batches.iter().map(|b| (b.1 - sd_bar).powi(2)).sum::<f64>() / (nb - 1.0) / nb).sqrt();
    let all: Vec<f64> = series.concat();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let sd = (all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (all.len() - 1) as f64).sqrt();
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "mean {mean:.4} vs {oracle_mean:.4} (se {se_mean:.4}), sd {sd:.4} vs {oracle_sd:.4} (se {se_sd:.4}), {secs:.1}s"
    );
    ensure((mean - oracle_mean).abs() < 3.0 * se_mean, || detail.clone())?;
    ensure((sd - oracle_sd).abs() < 3.0 * se_sd, || detail.clone())?;
    ensure(secs < 60.0, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------

fn rank(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            r[k] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    r
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&rank(x), &rank(y))
}

struct Replication {
    votes: usize,
    mu_covered: usize,
    mu_total: usize,
    spearman: f64,
    pearson: f64,
    converged: bool,
    flagged: bool,
    max_rhat_mu: f64,
    max_rhat_theta: f64,
    secs: f64,
}

fn calibration_replication(rep: u64) -> Result<Replication, String> {
    let start = Instant::now();
    let spec = SimulationSpec {
        items: 20,
        sessions: 200,
        votes_per_session: VotesPerSession::PowerLaw { exponent: 2.0, min: 5, max: 500 },
        seed: 1000 + rep,
        ..SimulationSpec::default()
    };
    let sim = simulate(&spec).map_err(|e| e.to_string())?;
    let config = ModelConfig { chains: 3, steps: 20_000, thin: 20, seed: 5000 + rep, ..ModelConfig::default() };
    let out = fit(&sim.dataset, &sim.report, &sim.votes.tallies(), &config).map_err(|e| e.to_string())?;
    let draws = &out.draws;
    let coverage = coverage_check(&sim.truth, &ParameterSamples::from_posterior(draws), 0.95)
        .map_err(|e| e.to_string())?;

    let items = draws.item_ids();
    let true_theta = sim.truth.restricted(items, draws.session_ids()).map_err(|e| e.to_string())?;
    let true_scores = per_draw_scores(&true_theta).map_err(|e| e.to_string())?;
    let modeled: Vec<f64> = modeled_scores(draws).map_err(|e| e.to_string())?.iter().map(|s| s.score).collect();
    let by_id: BTreeMap<ItemId, f64> = out.results.items.iter().map(|r| (r.item_id, r.simple_score)).collect();
    let simple: Vec<f64> = items.iter().map(|i| by_id[i]).collect();
    let conv = draws.convergence();
    Ok(Replication {
        votes: sim.dataset.vote_count(),
        mu_covered: coverage.mu.covered,
        mu_total: coverage.mu.total,
        spearman: spearman(&true_scores, &modeled),
        pearson: pearson(&simple, &modeled),
        converged: conv.max_rhat_mu < 1.1 && conv.max_rhat_theta_v < 1.1,
        flagged: out.results.converged == conv.converged && out.diagnostics.converged == conv.converged,
        max_rhat_mu: conv.max_rhat_mu,
        max_rhat_theta: conv.max_rhat_theta_v,
        secs: start.elapsed().as_secs_f64(),
    })
}

fn calibration_runs() -> Result<(Vec<Replication>, f64), String> {
    let start = Instant::now();
    let mut reps = Vec::new();
    for rep in 0..20 {
        let r = calibration_replication(rep)?;
        println!(
            "    replication {rep:>2}: {:>5} votes, mu covered {:>2}/{}, spearman {:.3}, pearson {:.3}, max R-hat mu {:.3} theta {:.3}, {:.0}s",
            r.votes, r.mu_covered, r.mu_total, r.spearman, r.pearson, r.max_rhat_mu, r.max_rhat_theta, r.secs
        );
        reps.push(r);
    }
    Ok((reps, start.elapsed().as_secs_f64()))
}

fn calibration(reps: &[Replication], secs: f64) -> Check {
    let covered: usize = reps.iter().map(|r| r.mu_covered).sum();
    let total: usize = reps.iter().map(|r| r.mu_total).sum();
    let rate = covered as f64 / total as f64;
    let good = reps.iter().filter(|r| r.spearman > 0.9).count();
    let mean_votes = reps.iter().map(|r| r.votes).sum::<usize>() as f64 / reps.len() as f64;
    let detail = format!(
        "mu coverage {covered}/{total} = {:.1}%, spearman > 0.9 in {good}/{}, {mean_votes:.0} votes per replication, {:.0}s",
        rate * 100.0,
        reps.len(),
        secs
    );
    ensure(reps.len() == 20, || detail.clone())?;
    ensure((0.90..=0.99).contains(&rate), || detail.clone())?;
    ensure(good >= 18, || detail.clone())?;
    ensure(secs < 7200.0, || detail.clone())?;
    Ok(detail)
}

fn convergence_protocol(reps: &[Replication]) -> Check {
    let converged = reps.iter().filter(|r| r.converged).count();
    let worst_mu = reps.iter().map(|r| r.max_rhat_mu).fold(0.0, f64::max);
    let worst_theta = reps.iter().map(|r| r.max_rhat_theta).fold(0.0, f64::max);
    ensure(reps.iter().all(|r| r.flagged), || "results and diagnostics disagree with R-hat".into())?;

    // A run far too short to converge must be flagged in both documents.
    let sim = simulate(&SimulationSpec { items: 10, sessions: 40, seed: 3, ..SimulationSpec::default() })
        .map_err(|e| e.to_string())?;
    let short = ModelConfig { steps: 60, thin: 2, rhat_threshold: 1.000_001, ..ModelConfig::default() };
    let out = fit(&sim.dataset, &sim.report, &sim.votes.tallies(), &short).map_err(|e| e.to_string())?;
    ensure(!out.results.converged && !out.diagnostics.converged, || "short run not flagged".into())?;

    let detail = format!(
        "{converged}/{} calibration runs with every monitored R-hat < 1.1 on 3 chains (worst mu {worst_mu:.4}, theta {worst_theta:.4}); short run flagged",
        reps.len()
    );
    ensure(converged == reps.len(), || detail.clone())?;
    Ok(detail)
}

fn simple_vs_modeled(reps: &[Replication]) -> Check {
    let min = reps.iter().map(|r| r.pearson).fold(f64::INFINITY, f64::min);
    let mean = reps.iter().map(|r| r.pearson).sum::<f64>() / reps.len() as f64;
    let detail = format!("pearson min {min:.3}, mean {mean:.3} over {} datasets", reps.len());
    ensure(min > 0.9, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------

/// Per-item appearance counts after `serves` draws, one pair preloaded.
fn serve_counts(config: &PromptPolicyConfig, serves: usize, seed: u64) -> Vec<u64> {
    let items: Vec<ItemId> = (1..=20).map(ItemId).collect();
    let mut pair_counts: BTreeMap<Prompt, u64> = BTreeMap::new();
    for (i, a) in items.iter().enumerate() {
        for b in &items[i + 1..] {
            pair_counts.insert(Prompt::new(*a, *b).unwrap(), 0);
        }
    }
    pair_counts.insert(Prompt::new(ItemId(1), ItemId(2)).unwrap(), 50);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..serves {
        let counts: Vec<(Prompt, f64)> = pair_counts.iter().map(|(p, n)| (*p, *n as f64)).collect();
        let d = compute_prompt_distribution(&counts, config).unwrap();
        *pair_counts.get_mut(&sample_prompt(&d, &mut rng).pair()).unwrap() += 1;
    }
    let mut per_item = vec![0u64; 20];
    for (p, n) in &pair_counts {
        per_item[(p.low().0 - 1) as usize] += n;
        per_item[(p.high().0 - 1) as usize] += n;
    }
    per_item
}

fn range(xs: &[u64]) -> u64 {
    xs.iter().max().unwrap() - xs.iter().min().unwrap()
}

fn catch_up_effectiveness() -> Check {
    let catch_up = serve_counts(&PromptPolicyConfig { alpha: 1.0, tau: 0.05 }, 2000, 42);
    let uniform = serve_counts(&PromptPolicyConfig { alpha: 0.0, tau: 1.0 }, 2000, 42);
    let (rc, ru) = (range(&catch_up), range(&uniform));

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100_000 {
        let n = rng.random_range(1..60u64);
        let counts: Vec<(Prompt, f64)> = (0..n)
            .map(|i| {
                let c = if rng.random_bool(0.5) { rng.random_range(0..2000u32) as f64 } else { rng.random_range(0.0..1e4) };
                (Prompt::new(ItemId(1000), ItemId(1001 + i)).unwrap(), c)
            })
            .collect();
        let config = PromptPolicyConfig { alpha: rng.random_range(0.0..3.0), tau: rng.random_range(0.001..=1.0) };
        let d = compute_prompt_distribution(&counts, &config).map_err(|e| e.to_string())?;
        ensure(d.probabilities().iter().all(|p| *p >= 0.0 && p.is_finite()), || "negative probability".into())?;
        worst = worst.max((d.probabilities().iter().sum::<f64>() - 1.0).abs());
    }
    let detail = format!("item appearance range {rc} (catch-up) vs {ru} (uniform); max |sum p - 1| = {worst:.1e} over 1e5 vectors");
    ensure(rc < ru, || detail.clone())?;
    ensure(worst <= 1e-12, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
enum Action {
    /// Serve a fresh prompt and answer it.
    Fresh(Choice),
    /// Answer the most recent appearance again.
    Again(Choice),
}

const CHOICES: [Choice; 3] = [Choice::Left, Choice::Right, Choice::CantDecide];

fn run_sequence(actions: &[Action]) -> Result<(), String> {
    let mut store = SurveyStore::new();
    let t0 = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let items: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let survey = store.create_survey("q", &items, SurveyConfig::default(), t0).unwrap();
    let session = store.resolve_session(survey, "tok", t0).unwrap().id;
    let mut rng = ChaCha8Rng::seed_from_u64(actions.len() as u64);
    let mut last = None;
    let mut answered: BTreeSet<u64> = BTreeSet::new();
    let mut prev_skip = false;
    let mut expected_wins: BTreeMap<ItemId, (u64, u64)> = BTreeMap::new();
    for (step, a) in actions.iter().enumerate() {
        let now = t0 + Duration::seconds(step as i64 + 1);
        let (app, choice) = match *a {
            Action::Fresh(c) => {
                let d = store.prompt_distribution(survey).unwrap();
                let app = store.serve(session, sample_prompt(&d, &mut rng), now).unwrap();
                last = Some(app.id);
                (app.id, c)
            }
            Action::Again(c) => match last {
                Some(id) => (id, c),
                None => continue,
            },
        };
        let first = answered.insert(app.0);
        let is_vote = choice != Choice::CantDecide;
        let want_valid = first && !(is_vote && prev_skip);
        prev_skip = choice == Choice::CantDecide;
        let r = store.record_response(app, choice, now).map_err(|e| e.to_string())?;
        ensure(r.duplicate == !first, || format!("{actions:?} step {step}: duplicate flag"))?;
        ensure(r.response.is_valid() == want_valid, || format!("{actions:?} step {step}: valid {}", !want_valid))?;
        if let Response::Vote(v) = &r.response {
            let prompt = store.appearance(app).unwrap().prompt;
            let want_winner = if choice == Choice::Left { prompt.left } else { prompt.right };
            ensure(v.winner == want_winner, || "winner side".into())?;
            ensure(v.outcome() == u8::from(choice == Choice::Left), || "outcome".into())?;
            if want_valid {
                expected_wins.entry(v.winner).or_default().0 += 1;
                expected_wins.entry(v.loser).or_default().1 += 1;
            }
        }
    }
    for item in store.items(survey).unwrap() {
        let (w, l) = expected_wins.get(&item.id).copied().unwrap_or_default();
        ensure(item.wins == w && item.losses == l, || format!("{actions:?}: tallies for {}", item.id))?;
    }
    ensure(store.counters(survey).unwrap() == store.recount(survey).unwrap(), || "counters drift".into())?;
    Ok(())
}

/// Independent fixed point: restrict to active items, then drop items
/// lacking a win or a loss and the votes touching them until nothing changes.
fn oracle_filter(votes: &[DatasetVote], active: &BTreeSet<ItemId>) -> (BTreeSet<ItemId>, Vec<ResponseId>) {
    let mut kept: Vec<&DatasetVote> =
        votes.iter().filter(|v| active.contains(&v.left) && active.contains(&v.right)).collect();
    loop {
        let mut wins = BTreeSet::new();
        let mut losses = BTreeSet::new();
        for v in &kept {
            wins.insert(v.winner());
            losses.insert(v.loser());
        }
        let items: BTreeSet<ItemId> = wins.intersection(&losses).copied().collect();
        let next: Vec<&DatasetVote> =
            kept.iter().copied().filter(|v| items.contains(&v.left) && items.contains(&v.right)).collect();
        if next.len() == kept.len() {
            return (items, kept.iter().map(|v| v.id).collect());
        }
        kept = next;
    }
}

fn validity_rules() -> Check {
    // Named cases first.
    use Action::*;
    let named: &[&[Action]] = &[
        &[Fresh(Choice::Left)],
        &[Fresh(Choice::Right)],
        &[Fresh(Choice::Left), Again(Choice::Right)],
        &[Fresh(Choice::Left), Again(Choice::Left), Again(Choice::CantDecide)],
        &[Fresh(Choice::CantDecide), Fresh(Choice::Left)],
        &[Fresh(Choice::CantDecide), Fresh(Choice::Left), Fresh(Choice::Right)],
        &[Fresh(Choice::CantDecide), Fresh(Choice::CantDecide), Fresh(Choice::Left)],
        &[Fresh(Choice::Left), Fresh(Choice::CantDecide), Fresh(Choice::CantDecide)],
    ];
    for seq in named {
        run_sequence(seq)?;
    }
    // Every sequence of up to five actions.
    let actions: Vec<Action> = CHOICES.iter().map(|&c| Fresh(c)).chain(CHOICES.iter().map(|&c| Again(c))).collect();
    let mut sequences = 0;
    for len in 1..=5u32 {
        for code in 0..actions.len().pow(len) {
            let mut c = code;
            let seq: Vec<Action> = (0..len)
                .map(|_| {
                    let a = actions[c % actions.len()];
                    c /= actions.len();
                    a
                })
                .collect();
            run_sequence(&seq)?;
            sequences += 1;
        }
    }

    // Another browser's skip does not touch this session.
    let mut store = SurveyStore::new();
    let t0 = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let survey = store.create_survey("q", &["a".into(), "b".into()], SurveyConfig::default(), t0).unwrap();
    let s1 = store.resolve_session(survey, "one", t0).unwrap().id;
    let s2 = store.resolve_session(survey, "two", t0).unwrap().id;
    let d = store.prompt_distribution(survey).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a1 = store.serve(s1, sample_prompt(&d, &mut rng), t0).unwrap().id;
    let a2 = store.serve(s2, sample_prompt(&d, &mut rng), t0).unwrap().id;
    store.record_response(a1, Choice::CantDecide, t0).unwrap();
    ensure(store.record_response(a2, Choice::Left, t0).unwrap().response.is_valid(), || "cross-session skip".into())?;
    // Responses in an expired session are refused.
    let a3 = store.serve(s2, sample_prompt(&d, &mut rng), t0).unwrap().id;
    let late = t0 + Duration::minutes(11);
    ensure(matches!(store.record_response(a3, Choice::Left, late), Err(Error::SessionExpired)), || {
        "expired session accepted a response".into()
    })?;

    // Filtering fixed point against the independent oracle.
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut empty = 0;
    for case in 0..1000 {
        let k = rng.random_range(2..=8u64);
        let n = rng.random_range(0..=50u64);
        let votes: Vec<DatasetVote> = (0..n)
            .map(|i| {
                let a = rng.random_range(1..=k);
                let mut b = rng.random_range(1..k);
                if b >= a {
                    b += 1;
                }
                vote(i + 1, rng.random_range(1..=6), a, b, rng.random_bool(0.5))
            })
            .collect();
        let active: BTreeSet<ItemId> = (1..=k).filter(|_| rng.random_bool(0.85)).map(ItemId).collect();
        let (want_items, want_votes) = oracle_filter(&votes, &active);
        match filter_votes(votes.clone(), &active) {
            Ok((d, report)) => {
                let got_votes: Vec<ResponseId> = d.votes().iter().map(|v| v.id).collect();
                let got_items: BTreeSet<ItemId> = d.items().iter().copied().collect();
                ensure(got_items == want_items && got_votes == want_votes, || format!("filter case {case}"))?;
                ensure(d.check_win_loss().is_ok(), || format!("filter case {case}: win/loss"))?;
                let dropped: BTreeSet<ItemId> = active.difference(&want_items).copied().collect();
                ensure(report.dropped_items.iter().copied().collect::<BTreeSet<_>>() == dropped, || {
                    format!("filter case {case}: dropped items")
                })?;
            }
            Err(Error::InsufficientData { .. }) => {
                ensure(want_votes.is_empty(), || format!("filter case {case}: spurious empty result"))?;
                empty += 1;
            }
            Err(e) => return Err(format!("filter case {case}: {e}")),
        }
    }
    Ok(format!(
        "{} named and {sequences} enumerated response sequences; 1000 random logs match the fixed-point oracle ({empty} empty)",
        named.len()
    ))
}

// ---------------------------------------------------------------------------

mod service_integrity {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use axum::body::Body;
    use axum::http::{header, Method, Request, StatusCode};
    use axum::Router;
    use http_body_util::BodyExt;
    use serde_json::{json, Value};
    use tower::ServiceExt;
    use wikisurvey_service::{read_events, Service, ServiceConfig, ServiceState};

    use super::*;

    pub const REQUESTS: usize = 10_000;

    async fn send(app: &Router, method: Method, uri: &str, cookie: Option<&str>, bearer: Option<&str>, body: Option<Value>) -> (StatusCode, Option<String>, Value) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(c) = cookie {
            req = req.header(header::COOKIE, c);
        }
        if let Some(t) = bearer {
            req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
        }
        let req = match body {
            Some(b) => req.header(header::CONTENT_TYPE, "application/json").body(Body::from(b.to_string())).unwrap(),
            None => req.body(Body::empty()).unwrap(),
        };
        let resp = app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let cookie = resp
            .headers()
            .get(header::SET_COOKIE)
            .map(|v| v.to_str().unwrap().split(';').next().unwrap().to_owned());
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
        (status, cookie, value)
    }

    fn prompt_is_clean(v: &Value) -> bool {
        let keys = |v: &Value| -> Vec<String> {
            let mut k: Vec<String> = v.as_object().map(|o| o.keys().cloned().collect()).unwrap_or_default();
            k.sort();
            k
        };
        keys(v) == ["appearance_id", "left", "right", "survey_id"]
            && keys(&v["left"]) == ["item_id", "text"]
            && keys(&v["right"]) == ["item_id", "text"]
    }

    struct Tallies {
        sent: AtomicUsize,
        prompts: AtomicUsize,
        responses: AtomicUsize,
        duplicates: AtomicUsize,
        ideas: AtomicUsize,
        moderations: AtomicUsize,
        unclean: AtomicUsize,
        unexpected: AtomicUsize,
    }

    async fn voter(app: Router, surveys: Arc<Vec<(u64, String)>>, seed: u64, tallies: Arc<Tallies>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cookie: Option<String> = None;
        let mut open: Vec<u64> = Vec::new();
        let mut answered: Vec<u64> = Vec::new();
        loop {
            if tallies.sent.fetch_add(1, Ordering::SeqCst) >= REQUESTS {
                return;
            }
            let (survey, token) = &surveys[rng.random_range(0..surveys.len())];
            let roll: f64 = rng.random();
            let (status, set, body, expect): (StatusCode, Option<String>, Value, &[StatusCode]) = if roll < 0.02 {
                // Creator moderation of whatever is pending.
                let (_, _, list) = send(&app, Method::GET, &format!("/surveys/{survey}/ideas"), None, Some(token), None).await;
                let pending: Vec<u64> = list
                    .as_array()
                    .map(|a| a.iter().filter(|i| i["state"] == "pending").filter_map(|i| i["submission_id"].as_u64()).collect())
                    .unwrap_or_default();
                tallies.moderations.fetch_add(1, Ordering::SeqCst);
                match pending.first() {
                    Some(id) => {
                        let verb = if rng.random_bool(0.7) { "activate" } else { "reject" };
                        let (s, c, b) = send(&app, Method::POST, &format!("/ideas/{id}/{verb}"), None, Some(token), Some(json!({}))).await;
                        (s, c, b, &[StatusCode::OK, StatusCode::CONFLICT])
                    }
                    None => (StatusCode::OK, None, Value::Null, &[StatusCode::OK]),
                }
            } else if roll < 0.06 {
                let text = format!("idea {}", rng.random_range(0..1000));
                let (s, c, b) = send(&app, Method::POST, &format!("/surveys/{survey}/ideas"), cookie.as_deref(), None, Some(json!({ "text": text }))).await;
                tallies.ideas.fetch_add(1, Ordering::SeqCst);
                (s, c, b, &[StatusCode::CREATED])
            } else if roll < 0.09 && !answered.is_empty() {
                let id = answered[rng.random_range(0..answered.len())];
                let (s, c, b) = send(&app, Method::POST, &format!("/appearances/{id}/response"), cookie.as_deref(), None, Some(json!({ "choice": "left" }))).await;
                tallies.duplicates.fetch_add(1, Ordering::SeqCst);
                (s, c, b, &[StatusCode::CONFLICT])
            } else if roll < 0.55 && !open.is_empty() {
                let id = open.swap_remove(rng.random_range(0..open.len()));
                let choice = ["left", "right", "cant_decide"][rng.random_range(0..3)];
                let (s, c, b) = send(&app, Method::POST, &format!("/appearances/{id}/response"), cookie.as_deref(), None, Some(json!({ "choice": choice }))).await;
                answered.push(id);
                tallies.responses.fetch_add(1, Ordering::SeqCst);
                (s, c, b, &[StatusCode::OK])
            } else {
                let (s, c, b) = send(&app, Method::GET, &format!("/surveys/{survey}/prompt"), cookie.as_deref(), None, None).await;
                tallies.prompts.fetch_add(1, Ordering::SeqCst);
                if s == StatusCode::OK {
                    if !prompt_is_clean(&b) {
                        tallies.unclean.fetch_add(1, Ordering::SeqCst);
                    }
                    open.push(b["appearance_id"].as_u64().unwrap());
                }
                (s, c, b, &[StatusCode::OK])
            };
            if let Some(c) = set {
                cookie = Some(c);
            }
            if !expect.contains(&status) {
                eprintln!("    unexpected {status}: {body}");
                tallies.unexpected.fetch_add(1, Ordering::SeqCst);
            }
        }
    }

    pub fn run() -> Check {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let path = dir.path().join("events.jsonl");
        let config = ServiceConfig { storage_path: Some(path.clone()), seed: Some(99), ..ServiceConfig::default() };
        let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build().unwrap();
        let start = Instant::now();
        let (service, tallies) = runtime.block_on(async {
            let service = Service::open(config.clone()).unwrap();
            let app = service.router();
            let mut surveys = Vec::new();
            for (s, k) in [(1, 6), (2, 10), (3, 4)] {
                let items: Vec<String> = (0..k).map(|i| format!("survey {s} idea {i}")).collect();
                let (_, _, v) = send(&app, Method::POST, "/surveys", None, None, Some(json!({ "question": "q", "seed_items": items }))).await;
                surveys.push((v["survey_id"].as_u64().unwrap(), v["creator_token"].as_str().unwrap().to_owned()));
            }
            let surveys = Arc::new(surveys);
            let tallies = Arc::new(Tallies {
                sent: AtomicUsize::new(0),
                prompts: AtomicUsize::new(0),
                responses: AtomicUsize::new(0),
                duplicates: AtomicUsize::new(0),
                ideas: AtomicUsize::new(0),
                moderations: AtomicUsize::new(0),
                unclean: AtomicUsize::new(0),
                unexpected: AtomicUsize::new(0),
            });
            let tasks: Vec<_> = (0..64)
                .map(|i| tokio::spawn(voter(app.clone(), surveys.clone(), 500 + i, tallies.clone())))
                .collect();
            for t in tasks {
                t.await.unwrap();
            }
            (service, tallies)
        });
        let secs = start.elapsed().as_secs_f64();

        let events = read_events(&path).map_err(|e| e.to_string())?;
        let live = service.lock();
        let replayed = ServiceState::replay(&events).map_err(|e| e.to_string())?;
        ensure(replayed.store() == live.store(), || "replayed store differs".into())?;
        let mut votes = 0;
        for survey in live.store().survey_ids() {
            let counters = live.store().counters(survey).unwrap();
            ensure(counters == live.store().recount(survey).unwrap(), || format!("survey {survey}: cached counters drift"))?;
            ensure(counters == replayed.store().counters(survey).unwrap(), || format!("survey {survey}: replay counters differ"))?;
            votes += live.store().responses(survey).unwrap().len();
        }
        drop(live);
        // A cold restart from the file agrees too.
        let reopened = Service::open(config).map_err(|e| e.to_string())?;
        ensure(reopened.lock().store() == service.lock().store(), || "restart differs".into())?;

        let get = |a: &AtomicUsize| a.load(Ordering::SeqCst);
        let detail = format!(
            "{REQUESTS} requests from 64 clients ({} prompts, {} responses, {} duplicates, {} ideas, {} moderation rounds) in {secs:.1}s; {} events replayed, {votes} responses, counters exact; {} prompts with extra fields",
            get(&tallies.prompts),
            get(&tallies.responses),
            get(&tallies.duplicates),
            get(&tallies.ideas),
            get(&tallies.moderations),
            events.len(),
            get(&tallies.unclean),
        );
        ensure(get(&tallies.unclean) == 0, || detail.clone())?;
        ensure(get(&tallies.unexpected) == 0, || format!("{} unexpected statuses; {detail}", get(&tallies.unexpected)))?;
        Ok(detail)
    }
}

// ---------------------------------------------------------------------------

fn report(outcomes: &mut Vec<(String, bool)>, name: &str, f: impl FnOnce() -> Check) {
    let start = Instant::now();
    let result = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    };
    let secs = start.elapsed().as_secs_f64();
    match &result {
        Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
        Err(detail) => println!("FAIL  {name}: {detail} [{secs:.1}s]"),
    }
    outcomes.push((name.to_owned(), result.is_ok()));
}

fn main() {
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let wanted = |name: &str| filter.as_deref().is_none_or(|f| name.contains(f));
    let mut outcomes = Vec::new();
    println!("acceptance criteria");
    if wanted("formula fidelity") {
        report(&mut outcomes, "formula fidelity", formula_fidelity);
    }
    if wanted("design-matrix oracle") {
        report(&mut outcomes, "design-matrix oracle", design_matrix_oracle);
    }
    if wanted("tiny-instance oracle") {
        report(&mut outcomes, "tiny-instance oracle", tiny_instance_oracle);
    }
    if wanted("calibration") || wanted("convergence protocol") || wanted("simple-vs-modeled agreement") {
        match catch_unwind(calibration_runs) {
            Ok(Ok((reps, secs))) => {
                report(&mut outcomes, "calibration", || calibration(&reps, secs));
                report(&mut outcomes, "convergence protocol", || convergence_protocol(&reps));
                report(&mut outcomes, "simple-vs-modeled agreement", || simple_vs_modeled(&reps));
            }
            other => {
                let why = match other {
                    Ok(Err(e)) => e,
                    _ => "calibration run panicked".into(),
                };
                for name in ["calibration", "convergence protocol", "simple-vs-modeled agreement"] {
                    report(&mut outcomes, name, || Err(why.clone()));
                }
            }
        }
    }
    if wanted("catch-up effectiveness") {
        report(&mut outcomes, "catch-up effectiveness", catch_up_effectiveness);
    }
    if wanted("validity rules") {
        report(&mut outcomes, "validity rules", validity_rules);
    }
    if wanted("service integrity") {
        report(&mut outcomes, "service integrity", service_integrity::run);
    }
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.1).map(|o| o.0.as_str()).collect();
    println!("{} of {} criteria passed", outcomes.len() - failed.len(), outcomes.len());
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
