//! The four conditional updates of the data-augmented probit sampler.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::design::{Cell, DesignMatrix};
use super::linalg::BlockCholesky;
use crate::domain::OpinionMatrix;
use crate::error::{Error, Result};
use crate::normal::truncated_unit_normal;

/// Prior on one item mean: `mu_k ~ N(mu0, tau0_sq)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuPrior {
    pub mu0: f64,
    pub tau0_sq: f64,
}

/// Step 1: latent utilities, one per vote, truncated to the side the vote
/// fell on.
pub fn gibbs_step_z<R: Rng + ?Sized>(design: &DesignMatrix, theta_v: &[f64], z: &mut [f64], rng: &mut R) {
    for ((row, &y), zi) in design.rows().iter().zip(design.outcomes()).zip(z.iter_mut()) {
        let mean = theta_v[row.plus] - theta_v[row.minus];
        *zi = truncated_unit_normal(mean, y == 1, rng);
    }
}

/// Step 2: the joint normal conditional of the vote-informed appeals.
///
/// The precision `X'X + I / sigma^2` does not depend on `z` or `mu`, so it is
/// factored once.
#[derive(Debug, Clone)]
pub struct VisibleConditional {
    chol: BlockCholesky,
    column_items: Vec<usize>,
    rows: Vec<(usize, usize)>,
    prior_precision: f64,
}

impl VisibleConditional {
    pub fn new(design: &DesignMatrix, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma must be positive, got {sigma}")));
        }
        let prior_precision = 1.0 / (sigma * sigma);
        let blocks = design.blocks();
        let mut dense: Vec<Vec<f64>> = blocks
            .iter()
            .map(|r| {
                let n = r.len();
                let mut m = vec![0.0; n * n];
                for i in 0..n {
                    m[i * n + i] = prior_precision;
                }
                m
            })
            .collect();
        let columns = design.columns();
        for row in design.rows() {
            let b = columns[row.plus].session;
            let start = blocks[b].start;
            let n = blocks[b].len();
            let (p, m) = (row.plus - start, row.minus - start);
            let q = &mut dense[b];
            q[p * n + p] += 1.0;
            q[m * n + m] += 1.0;
            q[p * n + m] -= 1.0;
            q[m * n + p] -= 1.0;
        }
        let chol = BlockCholesky::factor(blocks, |b, i, j| dense[b][i * blocks[b].len() + j])?;
        Ok(Self {
            chol,
            column_items: columns.iter().map(|c| c.item).collect(),
            rows: design.rows().iter().map(|r| (r.plus, r.minus)).collect(),
            prior_precision,
        })
    }

    pub fn dim(&self) -> usize {
        self.column_items.len()
    }

    fn rhs(&self, z: &[f64], mu: &[f64]) -> Vec<f64> {
        let mut rhs: Vec<f64> = self.column_items.iter().map(|&k| mu[k] * self.prior_precision).collect();
        for (&(p, m), &zi) in self.rows.iter().zip(z) {
            rhs[p] += zi;
            rhs[m] -= zi;
        }
        rhs
    }

    /// Conditional mean of the visible appeals given `z` and `mu`.
    pub fn mean(&self, z: &[f64], mu: &[f64]) -> Vec<f64> {
        let mut rhs = self.rhs(z, mu);
        self.chol.solve_in_place(&mut rhs);
        rhs
    }

    pub fn draw<R: Rng + ?Sized>(&self, z: &[f64], mu: &[f64], rng: &mut R) -> Vec<f64> {
        let mut rhs = self.rhs(z, mu);
        let noise: Vec<f64> = (0..rhs.len()).map(|_| rng.sample(StandardNormal)).collect();
        self.chol.sample_in_place(&mut rhs, &noise);
        rhs
    }
}

/// Step 3: the appeals no vote touches are imputed from their item means.
pub fn gibbs_step_theta_h<R: Rng + ?Sized>(hidden: &[Cell], mu: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    hidden
        .iter()
        .map(|c| mu[c.item] + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Per-item sums of freshly imputed hidden appeals, drawn directly.
///
/// Step 4 reads the hidden cells only through these sums, and the sum of `n`
/// independent `N(mu, sigma^2)` draws is `N(n mu, n sigma^2)`.
pub fn hidden_item_sums<R: Rng + ?Sized>(counts: &[usize], mu: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    counts
        .iter()
        .zip(mu)
        .map(|(&n, &m)| {
            if n == 0 {
                0.0
            } else {
                let n = n as f64;
                n * m + sigma * n.sqrt() * rng.sample::<f64, _>(StandardNormal)
            }
        })
        .collect()
}

/// Mean and variance of the normal conditional of one item mean, given the
/// average `theta_bar` of its `n` appeals.
pub fn mu_conditional(theta_bar: f64, n: usize, sigma: f64, prior: MuPrior) -> (f64, f64) {
    let data_precision = n as f64 / (sigma * sigma);
    let precision = 1.0 / prior.tau0_sq + data_precision;
    let mean = (prior.mu0 / prior.tau0_sq + data_precision * theta_bar) / precision;
    (mean, 1.0 / precision)
}

pub(crate) fn draw_mu_from_sums<R: Rng + ?Sized>(
    sums: &[f64],
    n: usize,
    sigma: f64,
    priors: &[MuPrior],
    rng: &mut R,
) -> Vec<f64> {
    sums.iter()
        .zip(priors)
        .map(|(&s, &prior)| {
            let (m, v) = mu_conditional(s / n as f64, n, sigma, prior);
            m + v.sqrt() * rng.sample::<f64, _>(StandardNormal)
        })
        .collect()
}

/// Step 4 over a full appeal matrix.
pub fn gibbs_step_mu<R: Rng + ?Sized>(
    theta: &OpinionMatrix,
    sigma: f64,
    priors: &[MuPrior],
    rng: &mut R,
) -> Result<Vec<f64>> {
    if priors.len() != theta.items() {
        return Err(Error::ParameterMismatch(format!(
            "{} priors for {} items",
            priors.len(),
            theta.items()
        )));
    }
    let mut sums = vec![0.0; theta.items()];
    for j in 0..theta.sessions() {
        for (s, v) in sums.iter_mut().zip(theta.row(j)) {
            *s += v;
        }
    }
    Ok(draw_mu_from_sums(&sums, theta.sessions(), sigma, priors, rng))
}
