//! Split-chain potential scale reduction.

use crate::error::{Error, Result};

pub const MIN_DRAWS_PER_CHAIN: usize = 10;

/// Split R-hat for one scalar parameter.
///
/// Each chain is cut into two halves (an odd middle draw is dropped) and the
/// halves are treated as separate chains. Returns 1 when every half is
/// constant at one value, and infinity when halves are constant at
/// different values.
pub fn rhat(chains: &[&[f64]]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::RhatInput(format!("need at least 2 chains, got {}", chains.len())));
    }
    let len = chains[0].len();
    if chains.iter().any(|c| c.len() != len) {
        return Err(Error::RhatInput("chains have different lengths".into()));
    }
    if len < MIN_DRAWS_PER_CHAIN {
        return Err(Error::RhatInput(format!(
            "need at least {MIN_DRAWS_PER_CHAIN} draws per chain, got {len}"
        )));
    }
    if chains.iter().flat_map(|c| c.iter()).any(|v| !v.is_finite()) {
        return Err(Error::RhatInput("non-finite draw".into()));
    }
    let half = len / 2;
    let halves: Vec<&[f64]> = chains.iter().flat_map(|c| [&c[..half], &c[len - half..]]).collect();
    Ok(potential_scale_reduction(&halves))
}

fn potential_scale_reduction(chains: &[&[f64]]) -> f64 {
    let n = chains[0].len() as f64;
    let m = chains.len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mean)| c.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn input_checks() {
        let a = [0.0; 20];
        assert!(rhat(&[&a]).is_err());
        assert!(rhat(&[&a[..9], &a[..9]]).is_err());
        assert!(rhat(&[&a[..10], &a[..12]]).is_err());
    }

    #[test]
    fn constant_conventions() {
        let a = [3.0; 20];
        assert_eq!(rhat(&[&a, &a, &a]).unwrap(), 1.0);
        let b = [4.0; 20];
        assert_eq!(rhat(&[&a, &b]).unwrap(), f64::INFINITY);
    }

    #[test]
    fn hand_evaluated_case() {
        // Halves: [0,1], [2,3] and [0,1], [2,3] as chains of length 2 would be
        // too short, so use length 10 chains that repeat a pattern.
        let c: Vec<f64> = (0..10).map(|i| (i % 2) as f64).collect();
        let r = rhat(&[&c, &c]).unwrap();
        // halves [0,1,0,1,0] and [1,0,1,0,1]: means 0.4, 0.6; each variance 0.3
        let (n, w): (f64, f64) = (5.0, 0.3);
        let b = n / 3.0 * (2.0 * 0.01 + 2.0 * 0.01);
        let expected = (((n - 1.0) / n * w + b / n) / w).sqrt();
        assert!((r - expected).abs() < 1e-12);
    }
}
