//! Throttled catch-up prompt selection.
//!
//! Each unordered pair of active items is drawn with probability
//!
//! ```text
//! p = min( (1 / (n + 1)^alpha) / c1 , tau ) / c2
//! ```
//!
//! where `n` is the pair's number of completed contests, `c1` normalizes the
//! raw weights and `c2` renormalizes after the throttle `tau` caps them.
//! Pairs with fewer contests are shown more often, so prompts involving newly
//! submitted items catch up with the seed items.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{OrientedPrompt, Prompt};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptPolicyConfig {
    /// Weight on the completed-contest count; 0 makes selection uniform.
    pub alpha: f64,
    /// Cap on any pair's share before renormalization, in (0, 1].
    pub tau: f64,
}

impl Default for PromptPolicyConfig {
    fn default() -> Self {
        Self { alpha: 1.0, tau: 0.05 }
    }
}

impl PromptPolicyConfig {
    pub fn uniform() -> Self {
        Self { alpha: 0.0, tau: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidConfig(format!("prompt.alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::InvalidConfig(format!("prompt.tau must be in (0, 1], got {}", self.tau)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptDistribution {
    prompts: Vec<Prompt>,
    probabilities: Vec<f64>,
    /// Largest term before division by `c2`; never exceeds tau.
    max_capped_share: f64,
    c1: f64,
    c2: f64,
}

impl PromptDistribution {
    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn prompts(&self) -> &[Prompt] {
        &self.prompts
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn iter(&self) -> impl Iterator<Item = (Prompt, f64)> + '_ {
        self.prompts.iter().copied().zip(self.probabilities.iter().copied())
    }

    pub fn probability_of(&self, prompt: Prompt) -> Option<f64> {
        self.prompts.iter().position(|p| *p == prompt).map(|i| self.probabilities[i])
    }

    pub fn max_capped_share(&self) -> f64 {
        self.max_capped_share
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }
}

/// Builds the catch-up distribution over the given pairs.
///
/// Counts are taken as reals so that callers can feed smoothed or
/// externally supplied tallies; they must be finite and non-negative.
pub fn compute_prompt_distribution(
    counts: &[(Prompt, f64)],
    config: &PromptPolicyConfig,
) -> Result<PromptDistribution> {
    config.validate()?;
    if counts.is_empty() {
        return Err(Error::NoActivePrompts);
    }
    let mut raw = Vec::with_capacity(counts.len());
    for (prompt, n) in counts {
        if !n.is_finite() || *n < 0.0 {
            return Err(Error::InvalidCount { prompt: *prompt, count: *n });
        }
        raw.push((n + 1.0).powf(-config.alpha));
    }
    let c1: f64 = raw.iter().sum();
    let mut capped: Vec<f64> = raw.iter().map(|w| (w / c1).min(config.tau)).collect();
    let c2: f64 = capped.iter().sum();
    let max_capped_share = capped.iter().copied().fold(0.0, f64::max);
    capped.iter_mut().for_each(|p| *p /= c2);
    Ok(PromptDistribution {
        prompts: counts.iter().map(|(p, _)| *p).collect(),
        probabilities: capped,
        max_capped_share,
        c1,
        c2,
    })
}

/// Draws one pair from `dist` and picks its display orientation with a fair
/// coin.
pub fn sample_prompt<R: Rng + ?Sized>(dist: &PromptDistribution, rng: &mut R) -> OrientedPrompt {
    let index = if dist.len() == 1 {
        0
    } else {
        WeightedIndex::new(&dist.probabilities)
            .expect("distribution holds positive finite weights")
            .sample(rng)
    };
    let pair = dist.prompts[index];
    if rng.random_bool(0.5) {
        OrientedPrompt { left: pair.low(), right: pair.high() }
    } else {
        OrientedPrompt { left: pair.high(), right: pair.low() }
    }
}
