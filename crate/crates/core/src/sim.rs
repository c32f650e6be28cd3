//! Synthetic surveys drawn from the model's own generative process, and
//! interval coverage checks against the known truth.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{EstimationDataset, FilterReport};
use crate::domain::{ItemId, OpinionMatrix, Prompt, SessionId};
use crate::error::{Error, Result};
use crate::estimator::{Cell, PosteriorDraws};
use crate::normal::std_normal_cdf;
use crate::prompt::{compute_prompt_distribution, sample_prompt, PromptPolicyConfig};
use crate::stats::quantile_sorted;
use crate::votes_csv::{CsvRow, ResponseType, VoteLog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VotesPerSession {
    /// One entry per session.
    Explicit { counts: Vec<usize> },
    /// `P(n) ∝ n^-exponent` on `min..=max`.
    PowerLaw { exponent: f64, min: usize, max: usize },
}

impl Default for VotesPerSession {
    fn default() -> Self {
        Self::PowerLaw { exponent: 2.0, min: 1, max: 500 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptPolicy {
    Uniform,
    #[default]
    CatchUp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSpec {
    pub items: usize,
    pub sessions: usize,
    pub votes_per_session: VotesPerSession,
    pub sigma: f64,
    pub mu0: f64,
    pub tau0_sq: f64,
    /// Prior variance of the first item's mean, which pins it near zero.
    pub anchor_tau0_sq: f64,
    pub policy: PromptPolicy,
    pub prompt: PromptPolicyConfig,
    pub seed: u64,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            items: 20,
            sessions: 200,
            votes_per_session: VotesPerSession::default(),
            sigma: 1.0,
            mu0: 0.0,
            tau0_sq: 4.0,
            anchor_tau0_sq: 1e-6,
            policy: PromptPolicy::CatchUp,
            prompt: PromptPolicyConfig::default(),
            seed: 1,
        }
    }
}

impl SimulationSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.items < 2 {
            return bad("items must be at least 2");
        }
        if self.sessions < 1 {
            return bad("sessions must be at least 1");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be non-negative");
        }
        if !self.mu0.is_finite() || !(self.tau0_sq >= 0.0) || !(self.anchor_tau0_sq >= 0.0) {
            return bad("invalid prior parameters");
        }
        self.prompt.validate()?;
        match &self.votes_per_session {
            VotesPerSession::Explicit { counts } => {
                if counts.len() != self.sessions {
                    return bad("explicit vote counts must list one entry per session");
                }
                if counts.iter().sum::<usize>() == 0 {
                    return bad("total votes must be at least 1");
                }
            }
            VotesPerSession::PowerLaw { exponent, min, max } => {
                if !exponent.is_finite() || *min < 1 || max < min {
                    return bad("power law needs a finite exponent and 1 <= min <= max");
                }
            }
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// True parameters behind a simulated survey.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub seed: u64,
    pub item_ids: Vec<ItemId>,
    pub session_ids: Vec<SessionId>,
    pub mu: Vec<f64>,
    pub theta: OpinionMatrix,
}

impl Truth {
    /// The appeal matrix restricted to the given items and sessions.
    pub fn restricted(&self, items: &[ItemId], sessions: &[SessionId]) -> Result<OpinionMatrix> {
        let ki = index_of(&self.item_ids, items, "item")?;
        let ji = index_of(&self.session_ids, sessions, "session")?;
        let mut m = OpinionMatrix::zeros(ji.len(), ki.len());
        for (a, &j) in ji.iter().enumerate() {
            for (b, &k) in ki.iter().enumerate() {
                m.set(a, b, self.theta.get(j, k));
            }
        }
        Ok(m)
    }
}

fn index_of<T: Ord + Copy + std::fmt::Display>(all: &[T], wanted: &[T], what: &str) -> Result<Vec<usize>> {
    wanted
        .iter()
        .map(|w| {
            all.binary_search(w)
                .map_err(|_| Error::ParameterMismatch(format!("{what} {w} is not in the truth")))
        })
        .collect()
}

pub fn generate_truth(spec: &SimulationSpec) -> Result<Truth> {
    spec.validate()?;
    let mut rng = spec.rng(0);
    let mu: Vec<f64> = (0..spec.items)
        .map(|k| {
            let var = if k == 0 { spec.anchor_tau0_sq } else { spec.tau0_sq };
            spec.mu0 + var.sqrt() * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let mut theta = OpinionMatrix::zeros(spec.sessions, spec.items);
    for j in 0..spec.sessions {
        for (k, m) in mu.iter().enumerate() {
            theta.set(j, k, m + spec.sigma * rng.sample::<f64, _>(StandardNormal));
        }
    }
    Ok(Truth {
        seed: spec.seed,
        item_ids: (1..=spec.items as u64).map(ItemId).collect(),
        session_ids: (1..=spec.sessions as u64).map(SessionId).collect(),
        mu,
        theta,
    })
}

pub fn votes_per_session(spec: &SimulationSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    match &spec.votes_per_session {
        VotesPerSession::Explicit { counts } => Ok(counts.clone()),
        VotesPerSession::PowerLaw { exponent, min, max } => {
            let weights: Vec<f64> = (*min..=*max).map(|n| (n as f64).powf(-exponent)).collect();
            let dist = WeightedIndex::new(&weights).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            let mut rng = spec.rng(1);
            Ok((0..spec.sessions).map(|_| min + dist.sample(&mut rng)).collect())
        }
    }
}

fn epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2010, 10, 7, 0, 0, 0).single().expect("valid date")
}

/// Draws a vote log from the truth, choosing prompts with the configured
/// policy over the running contest counts.
pub fn simulate_votes(truth: &Truth, spec: &SimulationSpec) -> Result<Vec<CsvRow>> {
    let schedule = votes_per_session(spec)?;
    if truth.item_ids.len() != spec.items || truth.session_ids.len() != spec.sessions {
        return Err(Error::ParameterMismatch("truth does not match the spec dimensions".into()));
    }
    let policy = match spec.policy {
        PromptPolicy::Uniform => PromptPolicyConfig::uniform(),
        PromptPolicy::CatchUp => spec.prompt,
    };
    let mut counts: BTreeMap<Prompt, f64> = BTreeMap::new();
    for (a, &x) in truth.item_ids.iter().enumerate() {
        for &y in &truth.item_ids[a + 1..] {
            counts.insert(Prompt::new(x, y).expect("distinct ids"), 0.0);
        }
    }
    let position = |id: ItemId| (id.0 - 1) as usize;
    let mut rng = spec.rng(2);
    let mut rows = Vec::with_capacity(schedule.iter().sum());
    let start = epoch();
    for (j, &n) in schedule.iter().enumerate() {
        let session = truth.session_ids[j];
        let session_start = start + Duration::hours(j as i64);
        for v in 0..n {
            let snapshot: Vec<(Prompt, f64)> = counts.iter().map(|(p, c)| (*p, *c)).collect();
            let dist = compute_prompt_distribution(&snapshot, &policy)?;
            let shown = sample_prompt(&dist, &mut rng);
            let p_left = std_normal_cdf(
                truth.theta.get(j, position(shown.left)) - truth.theta.get(j, position(shown.right)),
            );
            let left_won = rng.random::<f64>() < p_left;
            *counts.get_mut(&shown.pair()).expect("known pair") += 1.0;
            let id = rows.len() as u64 + 1;
            rows.push(CsvRow {
                vote_id: id,
                session_id: session.0,
                left_item_id: shown.left.0,
                right_item_id: shown.right.0,
                winner_item_id: Some(if left_won { shown.left.0 } else { shown.right.0 }),
                outcome_y: Some(u8::from(left_won)),
                response_type: ResponseType::Vote,
                valid: true,
                cast_at_iso8601: (session_start + Duration::seconds(5 * v as i64))
                    .to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true),
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub truth: Truth,
    pub votes: VoteLog,
    pub dataset: EstimationDataset,
    pub report: FilterReport,
}

pub fn simulate(spec: &SimulationSpec) -> Result<SimulationResult> {
    let truth = generate_truth(spec)?;
    let votes = VoteLog::from_rows(simulate_votes(&truth, spec)?);
    let (dataset, report) = votes.estimation_dataset(None)?;
    Ok(SimulationResult { truth, votes, dataset, report })
}

/// Posterior samples of every parameter group, one `Vec` per draw.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSamples {
    pub item_ids: Vec<ItemId>,
    pub session_ids: Vec<SessionId>,
    pub columns: Vec<Cell>,
    pub hidden: Vec<Cell>,
    pub mu: Vec<Vec<f64>>,
    pub theta_v: Vec<Vec<f64>>,
    pub theta_h: Vec<Vec<f64>>,
}

impl ParameterSamples {
    pub fn from_posterior(draws: &PosteriorDraws) -> Self {
        let n = draws.draw_count();
        Self {
            item_ids: draws.item_ids().to_vec(),
            session_ids: draws.session_ids().to_vec(),
            columns: draws.columns().to_vec(),
            hidden: draws.hidden().to_vec(),
            mu: (0..n).map(|d| draws.mu(d).to_vec()).collect(),
            theta_v: (0..n).map(|d| draws.theta_v(d).to_vec()).collect(),
            theta_h: (0..n).map(|d| draws.theta_h(d)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupCoverage {
    pub covered: usize,
    pub total: usize,
}

impl GroupCoverage {
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            f64::NAN
        } else {
            self.covered as f64 / self.total as f64
        }
    }

    pub fn merge(&mut self, other: GroupCoverage) {
        self.covered += other.covered;
        self.total += other.total;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub level: f64,
    pub mu: GroupCoverage,
    pub theta_v: GroupCoverage,
    pub theta_h: GroupCoverage,
}

fn group_coverage(draws: &[Vec<f64>], truth: &[f64], level: f64) -> Result<GroupCoverage> {
    if draws.iter().any(|d| d.len() != truth.len()) {
        return Err(Error::ParameterMismatch("draw length differs from truth".into()));
    }
    let tail = (1.0 - level) / 2.0;
    let mut covered = 0;
    for (p, &t) in truth.iter().enumerate() {
        let mut xs: Vec<f64> = draws.iter().map(|d| d[p]).collect();
        xs.sort_by(f64::total_cmp);
        if quantile_sorted(&xs, tail) <= t && t <= quantile_sorted(&xs, 1.0 - tail) {
            covered += 1;
        }
    }
    Ok(GroupCoverage { covered, total: truth.len() })
}

/// Share of parameters whose central `level` interval contains the truth.
pub fn coverage_check(truth: &Truth, samples: &ParameterSamples, level: f64) -> Result<CoverageReport> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("level must lie in (0, 1), got {level}")));
    }
    if samples.mu.is_empty() {
        return Err(Error::InvalidInput("no draws".into()));
    }
    let ki = index_of(&truth.item_ids, &samples.item_ids, "item")?;
    let ji = index_of(&truth.session_ids, &samples.session_ids, "session")?;
    let cell_truth = |cells: &[Cell]| -> Result<Vec<f64>> {
        cells
            .iter()
            .map(|c| {
                let j = *ji.get(c.session).ok_or_else(|| Error::ParameterMismatch("cell session".into()))?;
                let k = *ki.get(c.item).ok_or_else(|| Error::ParameterMismatch("cell item".into()))?;
                Ok(truth.theta.get(j, k))
            })
            .collect()
    };
    let mu_truth: Vec<f64> = ki.iter().map(|&k| truth.mu[k]).collect();
    Ok(CoverageReport {
        level,
        mu: group_coverage(&samples.mu, &mu_truth, level)?,
        theta_v: group_coverage(&samples.theta_v, &cell_truth(&samples.columns)?, level)?,
        theta_h: group_coverage(&samples.theta_h, &cell_truth(&samples.hidden)?, level)?,
    })
}
