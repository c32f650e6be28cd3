//! Multi-chain driver, model configuration and stored posterior draws.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::design::{Cell, DesignMatrix};
use super::gibbs::{self, MuPrior, VisibleConditional};
use super::rhat::{rhat, MIN_DRAWS_PER_CHAIN};
use crate::domain::{ItemId, OpinionMatrix, SessionId};
use crate::error::{Error, Result};

/// Salt separating hidden-appeal regeneration streams from chain streams.
const REGEN_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItemPrior {
    pub mu0: f64,
    pub tau0_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub sigma: f64,
    pub mu0: f64,
    pub tau0_sq: f64,
    /// Defaults to the lowest item id in the dataset.
    pub anchor_item: Option<ItemId>,
    pub anchor_tau0_sq: f64,
    /// Per-item overrides of `mu0` and `tau0_sq`.
    pub item_priors: BTreeMap<ItemId, ItemPrior>,
    pub chains: usize,
    pub steps: usize,
    pub thin: usize,
    pub burnin_frac: f64,
    pub rhat_threshold: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            mu0: 0.0,
            tau0_sq: 4.0,
            anchor_item: None,
            anchor_tau0_sq: 1e-6,
            item_priors: BTreeMap::new(),
            chains: 3,
            steps: 200_000,
            thin: 200,
            burnin_frac: 0.5,
            rhat_threshold: 1.1,
            seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.sigma) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if !self.mu0.is_finite() {
            return bad("mu0 must be finite".into());
        }
        if !positive(self.tau0_sq) || !positive(self.anchor_tau0_sq) {
            return bad("prior variances must be positive".into());
        }
        for (item, p) in &self.item_priors {
            if !p.mu0.is_finite() || !positive(p.tau0_sq) {
                return bad(format!("invalid prior for item {item}"));
            }
        }
        if self.chains < 2 {
            return bad(format!("chains must be at least 2 for R-hat, got {}", self.chains));
        }
        if self.thin == 0 {
            return bad("thin must be at least 1".into());
        }
        if self.steps <= 2 * self.thin {
            return bad(format!("steps ({}) must exceed twice thin ({})", self.steps, self.thin));
        }
        if !(self.burnin_frac > 0.0 && self.burnin_frac < 1.0) {
            return bad(format!("burnin_frac must lie in (0, 1), got {}", self.burnin_frac));
        }
        if !(self.rhat_threshold > 1.0) {
            return bad(format!("rhat_threshold must exceed 1, got {}", self.rhat_threshold));
        }
        if self.kept_per_chain() < MIN_DRAWS_PER_CHAIN {
            return bad(format!(
                "only {} draws kept per chain; at least {MIN_DRAWS_PER_CHAIN} needed",
                self.kept_per_chain()
            ));
        }
        Ok(())
    }

    pub fn saved_per_chain(&self) -> usize {
        self.steps / self.thin.max(1)
    }

    pub fn discarded_per_chain(&self) -> usize {
        (self.saved_per_chain() as f64 * self.burnin_frac).floor() as usize
    }

    pub fn kept_per_chain(&self) -> usize {
        self.saved_per_chain() - self.discarded_per_chain()
    }

    /// The anchor and the prior of every item, in dataset order.
    pub fn priors(&self, items: &[ItemId]) -> Result<(ItemId, Vec<MuPrior>)> {
        let anchor = match self.anchor_item {
            Some(a) if items.contains(&a) => a,
            Some(a) => {
                return Err(Error::InvalidConfig(format!("anchor item {a} is not in the estimation dataset")))
            }
            None => *items.iter().min().ok_or(Error::TooFewItems)?,
        };
        let priors = items
            .iter()
            .map(|id| {
                let p = self.item_priors.get(id);
                MuPrior {
                    mu0: p.map_or(self.mu0, |p| p.mu0),
                    tau0_sq: if *id == anchor {
                        self.anchor_tau0_sq
                    } else {
                        p.map_or(self.tau0_sq, |p| p.tau0_sq)
                    },
                }
            })
            .collect();
        Ok((anchor, priors))
    }
}

/// Kept draws of one chain, stored row-major by draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDraws {
    pub theta_v: Vec<f64>,
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub threshold: f64,
    pub rhat_mu: Vec<f64>,
    pub max_rhat_mu: f64,
    pub max_rhat_theta_v: f64,
    pub theta_v_above_threshold: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    config: ModelConfig,
    anchor: ItemId,
    priors: Vec<MuPrior>,
    item_ids: Vec<ItemId>,
    session_ids: Vec<SessionId>,
    columns: Vec<Cell>,
    hidden: Vec<Cell>,
    chains: Vec<ChainDraws>,
    kept_per_chain: usize,
    convergence: Convergence,
}

impl PosteriorDraws {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn anchor(&self) -> ItemId {
        self.anchor
    }

    pub fn priors(&self) -> &[MuPrior] {
        &self.priors
    }

    pub fn item_ids(&self) -> &[ItemId] {
        &self.item_ids
    }

    pub fn session_ids(&self) -> &[SessionId] {
        &self.session_ids
    }

    pub fn columns(&self) -> &[Cell] {
        &self.columns
    }

    pub fn hidden(&self) -> &[Cell] {
        &self.hidden
    }

    pub fn chain_count(&self) -> usize {
        self.chains.len()
    }

    pub fn chains(&self) -> &[ChainDraws] {
        &self.chains
    }

    pub fn kept_per_chain(&self) -> usize {
        self.kept_per_chain
    }

    pub fn draw_count(&self) -> usize {
        self.chains.len() * self.kept_per_chain
    }

    pub fn convergence(&self) -> &Convergence {
        &self.convergence
    }

    pub fn converged(&self) -> bool {
        self.convergence.converged
    }

    fn locate(&self, draw: usize) -> (usize, usize) {
        (draw / self.kept_per_chain, draw % self.kept_per_chain)
    }

    /// Item means of a draw, indexed across chains.
    pub fn mu(&self, draw: usize) -> &[f64] {
        let (c, i) = self.locate(draw);
        let k = self.item_ids.len();
        &self.chains[c].mu[i * k..(i + 1) * k]
    }

    pub fn theta_v(&self, draw: usize) -> &[f64] {
        let (c, i) = self.locate(draw);
        let n = self.columns.len();
        &self.chains[c].theta_v[i * n..(i + 1) * n]
    }

    /// Hidden appeals of a draw, regenerated from the item means with a
    /// stream fixed by the seed and draw index.
    pub fn theta_h(&self, draw: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ REGEN_SALT);
        rng.set_stream(draw as u64);
        gibbs::gibbs_step_theta_h(&self.hidden, self.mu(draw), self.config.sigma, &mut rng)
    }

    /// The full appeal matrix of one draw.
    pub fn opinion_matrix(&self, draw: usize) -> OpinionMatrix {
        let k = self.item_ids.len();
        let mut m = OpinionMatrix::zeros(self.session_ids.len(), k);
        for (cell, v) in self.columns.iter().zip(self.theta_v(draw)) {
            m.set(cell.session, cell.item, *v);
        }
        for (cell, v) in self.hidden.iter().zip(self.theta_h(draw)) {
            m.set(cell.session, cell.item, v);
        }
        m
    }

    /// Per-chain sequences of one item mean.
    pub fn mu_series(&self, item: usize) -> Vec<Vec<f64>> {
        let k = self.item_ids.len();
        self.chains.iter().map(|c| c.mu.iter().skip(item).step_by(k).copied().collect()).collect()
    }

    pub fn theta_v_series(&self, column: usize) -> Vec<Vec<f64>> {
        let n = self.columns.len();
        self.chains.iter().map(|c| c.theta_v.iter().skip(column).step_by(n).copied().collect()).collect()
    }
}

struct ChainInput<'a> {
    design: &'a DesignMatrix,
    conditional: &'a VisibleConditional,
    priors: &'a [MuPrior],
    hidden_counts: &'a [usize],
    config: &'a ModelConfig,
}

fn run_chain(input: &ChainInput<'_>, chain: usize) -> ChainDraws {
    let ChainInput { design, conditional, priors, hidden_counts, config } = *input;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(chain as u64);
    let sigma = config.sigma;
    let sessions = design.session_count();
    let items = design.item_count();
    let columns = design.columns();

    let mut mu: Vec<f64> = priors
        .iter()
        .map(|p| p.mu0 + 2.0 * p.tau0_sq.sqrt() * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut theta_v: Vec<f64> =
        columns.iter().map(|c| mu[c.item] + sigma * rng.sample::<f64, _>(StandardNormal)).collect();
    let mut z = vec![0.0; design.vote_count()];

    let kept = config.kept_per_chain();
    let discard = config.discarded_per_chain();
    let mut out = ChainDraws {
        theta_v: Vec::with_capacity(kept * columns.len()),
        mu: Vec::with_capacity(kept * items),
    };
    let mut sums = vec![0.0; items];
    for step in 1..=config.steps {
        gibbs::gibbs_step_z(design, &theta_v, &mut z, &mut rng);
        theta_v = conditional.draw(&z, &mu, &mut rng);
        let hidden = gibbs::hidden_item_sums(hidden_counts, &mu, sigma, &mut rng);
        sums.copy_from_slice(&hidden);
        for (c, v) in columns.iter().zip(&theta_v) {
            sums[c.item] += v;
        }
        mu = gibbs::draw_mu_from_sums(&sums, sessions, sigma, priors, &mut rng);

        if step % config.thin == 0 && step / config.thin > discard {
            out.theta_v.extend_from_slice(&theta_v);
            out.mu.extend_from_slice(&mu);
        }
    }
    debug_assert_eq!(out.mu.len(), kept * items);
    out
}

/// Runs the configured number of independent chains and checks convergence
/// of every item mean and every vote-informed appeal.
pub fn run_chains(design: &DesignMatrix, config: &ModelConfig) -> Result<PosteriorDraws> {
    config.validate()?;
    let (anchor, priors) = config.priors(design.item_ids())?;
    let conditional = VisibleConditional::new(design, config.sigma)?;
    let mut hidden_counts = vec![0usize; design.item_count()];
    for c in design.hidden() {
        hidden_counts[c.item] += 1;
    }
    let input = ChainInput {
        design,
        conditional: &conditional,
        priors: &priors,
        hidden_counts: &hidden_counts,
        config,
    };
    let chains: Vec<ChainDraws> = (0..config.chains).into_par_iter().map(|c| run_chain(&input, c)).collect();

    let mut draws = PosteriorDraws {
        config: config.clone(),
        anchor,
        priors,
        item_ids: design.item_ids().to_vec(),
        session_ids: design.session_ids().to_vec(),
        columns: design.columns().to_vec(),
        hidden: design.hidden().to_vec(),
        chains,
        kept_per_chain: config.kept_per_chain(),
        convergence: Convergence {
            threshold: config.rhat_threshold,
            rhat_mu: Vec::new(),
            max_rhat_mu: 1.0,
            max_rhat_theta_v: 1.0,
            theta_v_above_threshold: 0,
            converged: false,
        },
    };
    draws.convergence = assess(&draws)?;
    Ok(draws)
}

fn series_rhat(series: &[Vec<f64>]) -> Result<f64> {
    let refs: Vec<&[f64]> = series.iter().map(Vec::as_slice).collect();
    rhat(&refs)
}

fn assess(draws: &PosteriorDraws) -> Result<Convergence> {
    let threshold = draws.config.rhat_threshold;
    let rhat_mu: Vec<f64> =
        (0..draws.item_ids.len()).into_par_iter().map(|k| series_rhat(&draws.mu_series(k))).collect::<Result<_>>()?;
    let rhat_theta: Vec<f64> = (0..draws.columns.len())
        .into_par_iter()
        .map(|c| series_rhat(&draws.theta_v_series(c)))
        .collect::<Result<_>>()?;
    let max = |v: &[f64]| v.iter().copied().fold(1.0f64, f64::max);
    let max_rhat_mu = max(&rhat_mu);
    let max_rhat_theta_v = max(&rhat_theta);
    let theta_v_above_threshold = rhat_theta.iter().filter(|r| !(**r < threshold)).count();
    let converged = max_rhat_mu < threshold && theta_v_above_threshold == 0;
    Ok(Convergence { threshold, rhat_mu, max_rhat_mu, max_rhat_theta_v, theta_v_above_threshold, converged })
}
