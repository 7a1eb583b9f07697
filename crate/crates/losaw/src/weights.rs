//! Sample weights with an effective-sample-size floor.
//!
//! Inverse stabilized-propensity weights can concentrate on a few rare
//! observations, collapsing the effective sample size measured by the Kish
//! statistic `s(w) = ||w||_1^2 / ||w||_2^2`. The machinery here normalizes
//! such weights and, when their relative effective sample size falls below
//! a floor `eta`, redistributes the largest weights under a threshold
//! found by bisection until `s(w)/N` lands within `alpha` of `eta`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum bisection depth for the threshold search.
const MAX_BISECTION_STEPS: usize = 64;

/// Kish effective sample size of a raw nonnegative weight vector.
///
/// Errors with [`Error::DegenerateWeights`] when every entry is zero.
pub fn kish_ess(weights: &[f64]) -> Result<f64> {
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for &w in weights {
        debug_assert!(w >= 0.0, "negative weight");
        sum += w;
        sum_sq += w * w;
    }
    if sum_sq <= 0.0 {
        return Err(Error::DegenerateWeights);
    }
    Ok(sum * sum / sum_sq)
}

/// A normalized, nonnegative sample weight vector.
///
/// Entries sum to one (within 1e-12) by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleWeights {
    values: Vec<f64>,
}

impl SampleWeights {
    /// Normalize a nonnegative weight vector.
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        let mut sum = 0.0;
        for (i, &v) in values.iter().enumerate() {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidPropensity { index: i, value: v });
            }
            sum += v;
        }
        if sum <= 0.0 {
            return Err(Error::DegenerateWeights);
        }
        for v in &mut values {
            *v /= sum;
        }
        Ok(Self { values })
    }

    /// Exact uniform weights `1/n`.
    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "empty weight vector");
        Self {
            values: vec![1.0 / n as f64; n],
        }
    }

    /// Wrap values that are already normalized; used internally where
    /// renormalizing would break exactness guarantees.
    pub(crate) fn from_normalized(values: Vec<f64>) -> Self {
        debug_assert!(
            (values.iter().sum::<f64>() - 1.0).abs() <= 1e-9,
            "weights not normalized"
        );
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Kish effective sample size; lies in `[1, N]` for normalized weights.
    pub fn kish_ess(&self) -> f64 {
        kish_ess(&self.values).expect("normalized weights are not degenerate")
    }

    /// Relative effective sample size `s(w)/N` in `[1/N, 1]`.
    pub fn relative_ess(&self) -> f64 {
        self.kish_ess() / self.len() as f64
    }

    /// Inverse stabilized-propensity weights with an ESS floor.
    ///
    /// Weights are proportional to `1/p_hat` and normalized. When their
    /// relative effective sample size already meets `cfg.eta` they are
    /// returned as-is, otherwise the threshold search brings it within
    /// `cfg.alpha` of `eta`. With `eta = 1` the result is exactly uniform:
    /// only the uniform weight has full relative effective sample size.
    pub fn from_propensities(p_hat: &[f64], cfg: &EssConfig) -> Result<Self> {
        for (i, &p) in p_hat.iter().enumerate() {
            if !(p > 0.0) || !p.is_finite() {
                return Err(Error::InvalidPropensity { index: i, value: p });
            }
        }
        if p_hat.is_empty() {
            return Err(Error::DegenerateWeights);
        }
        if cfg.eta == 1.0 {
            return Ok(Self::uniform(p_hat.len()));
        }
        let w = Self::new(p_hat.iter().map(|&p| 1.0 / p).collect())?;
        if w.relative_ess() >= cfg.eta {
            Ok(w)
        } else {
            search_threshold(&w, cfg)
        }
    }
}

/// Tuning parameters for the effective-sample-size floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EssConfig {
    eta: f64,
    alpha: f64,
}

impl EssConfig {
    /// `eta` must lie in `(0, 1]` and `alpha` in `(0, eta)`.
    pub fn new(eta: f64, alpha: f64) -> Result<Self> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "eta must be in (0, 1], got {eta}"
            )));
        }
        if !(alpha > 0.0 && alpha < eta) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be in (0, eta), got {alpha}"
            )));
        }
        Ok(Self { eta, alpha })
    }

    /// Default used by the forest experiments.
    pub fn forest_default() -> Self {
        Self {
            eta: 0.25,
            alpha: 0.01,
        }
    }

    /// Default used by the gradient-descent experiments.
    pub fn gradient_descent_default() -> Self {
        Self {
            eta: 0.2,
            alpha: 0.01,
        }
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// Cap every weight at `theta` and push the excess uniformly onto the
/// remaining weights, repeating until no weight exceeds the threshold.
///
/// Entries exactly at `theta` count as capped: they stay at the threshold
/// and receive no excess. The loop reaches a fixed point after at most `N`
/// passes because the capped set only grows.
pub fn cap_and_redistribute(w: &SampleWeights, theta: f64) -> Result<SampleWeights> {
    let n = w.len();
    let uniform = 1.0 / n as f64;
    if theta < uniform - 1e-12 {
        return Err(Error::InfeasibleThreshold { theta, n });
    }
    let mut v = w.values().to_vec();
    for _ in 0..=n {
        let mut excess = 0.0;
        let mut capped = 0usize;
        for x in &v {
            if *x >= theta {
                excess += *x - theta;
                capped += 1;
            }
        }
        if excess <= 0.0 || capped == n {
            break;
        }
        let share = excess / (n - capped) as f64;
        for x in &mut v {
            if *x >= theta {
                *x = theta;
            } else {
                *x += share;
            }
        }
    }
    let max = v.iter().cloned().fold(0.0, f64::max);
    debug_assert!(max <= theta + 1e-12, "fixed point not reached");
    Ok(SampleWeights::from_normalized(v))
}

/// Bisection over the cap threshold until the relative effective sample
/// size lands within `alpha` of `eta`.
///
/// Exploits that a larger threshold caps less, keeps the weights more
/// concentrated and therefore yields a smaller effective sample size. The
/// search interval is `[1/(N eta), 1]`; capping at the lower endpoint
/// already guarantees `s_rel >= eta`.
pub fn search_threshold(w: &SampleWeights, cfg: &EssConfig) -> Result<SampleWeights> {
    let n = w.len() as f64;
    if cfg.eta == 1.0 {
        return Ok(SampleWeights::uniform(w.len()));
    }
    if w.relative_ess() >= cfg.eta {
        return Ok(w.clone());
    }
    let mut lo = (1.0 / (n * cfg.eta)).max(1.0 / n);
    let mut hi = 1.0;
    let mut best: Option<(f64, SampleWeights, f64)> = None;
    for _ in 0..MAX_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let capped = cap_and_redistribute(w, mid)?;
        let s_rel = capped.relative_ess();
        let gap = (s_rel - cfg.eta).abs();
        if gap <= cfg.alpha {
            return Ok(capped);
        }
        if best.as_ref().is_none_or(|(g, _, _)| gap < *g) {
            best = Some((gap, capped, s_rel));
        }
        if s_rel >= cfg.eta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (_, best, achieved) = best.expect("at least one bisection step ran");
    Err(Error::SearchDidNotConverge {
        best,
        achieved,
        target: cfg.eta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sw(v: &[f64]) -> SampleWeights {
        SampleWeights::new(v.to_vec()).unwrap()
    }

    #[test]
    fn kish_uniform_gives_n() {
        assert_abs_diff_eq!(kish_ess(&[0.25; 4]).unwrap(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn kish_single_atom_gives_one() {
        assert_abs_diff_eq!(
            kish_ess(&[1.0, 0.0, 0.0, 0.0, 0.0]).unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn kish_direct_evaluation() {
        let s = kish_ess(&[0.5, 0.25, 0.25]).unwrap();
        assert_abs_diff_eq!(s, 1.0 / 0.375, epsilon = 1e-12);
    }

    #[test]
    fn kish_all_zero_is_degenerate() {
        assert!(matches!(
            kish_ess(&[0.0, 0.0]),
            Err(Error::DegenerateWeights)
        ));
    }

    #[test]
    fn cap_single_pass() {
        let capped = cap_and_redistribute(&sw(&[0.7, 0.1, 0.1, 0.1]), 0.4).unwrap();
        let expect = [0.4, 0.2, 0.2, 0.2];
        for (a, b) in capped.values().iter().zip(expect) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn cap_noop_below_threshold() {
        let w = sw(&[0.25; 4]);
        let capped = cap_and_redistribute(&w, 0.3).unwrap();
        assert_eq!(capped.values(), w.values());
    }

    #[test]
    fn cap_iterates_to_fixed_point() {
        let capped = cap_and_redistribute(&sw(&[0.9, 0.05, 0.03, 0.02]), 0.25).unwrap();
        let max = capped.values().iter().cloned().fold(0.0, f64::max);
        assert!(max <= 0.25 + 1e-12);
        assert_abs_diff_eq!(capped.values().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn cap_rejects_infeasible_threshold() {
        assert!(matches!(
            cap_and_redistribute(&sw(&[0.5, 0.5]), 0.4),
            Err(Error::InfeasibleThreshold { .. })
        ));
    }

    #[test]
    fn cap_is_idempotent() {
        let once = cap_and_redistribute(&sw(&[0.6, 0.2, 0.15, 0.05]), 0.3).unwrap();
        let twice = cap_and_redistribute(&once, 0.3).unwrap();
        assert_eq!(once.values(), twice.values());
    }

    #[test]
    fn search_hits_tolerance() {
        let mut v = vec![0.01; 10];
        v[0] = 0.91;
        let w = sw(&v);
        let cfg = EssConfig::new(0.5, 0.01).unwrap();
        let out = search_threshold(&w, &cfg).unwrap();
        let s_rel = out.relative_ess();
        assert!((0.49..=0.51).contains(&s_rel), "s_rel = {s_rel}");
    }

    #[test]
    fn search_skips_when_ess_sufficient() {
        let w = sw(&[0.3, 0.25, 0.25, 0.2]);
        assert!(w.relative_ess() >= 0.25);
        let cfg = EssConfig::new(0.25, 0.01).unwrap();
        let out = search_threshold(&w, &cfg).unwrap();
        assert_eq!(out.values(), w.values());
    }

    #[test]
    fn eta_one_returns_exact_uniform() {
        let cfg = EssConfig::new(1.0, 0.5).unwrap();
        let out = SampleWeights::from_propensities(&[5.0, 0.1, 2.0, 7.0], &cfg).unwrap();
        assert_eq!(out.values(), &[0.25; 4]);
    }

    #[test]
    fn from_propensities_normalizes_inverse() {
        let cfg = EssConfig::new(1e-9, 1e-10).unwrap();
        let out = SampleWeights::from_propensities(&[2.0, 1.0, 1.0], &cfg).unwrap();
        let expect = [0.2, 0.4, 0.4];
        for (a, b) in out.values().iter().zip(expect) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn from_propensities_constant_gives_uniform() {
        let cfg = EssConfig::forest_default();
        let out = SampleWeights::from_propensities(&[3.7; 5], &cfg).unwrap();
        for &v in out.values() {
            assert_abs_diff_eq!(v, 0.2, epsilon = 1e-15);
        }
    }

    #[test]
    fn from_propensities_extreme_score_is_tempered() {
        let cfg = EssConfig::new(0.9, 0.01).unwrap();
        let out = SampleWeights::from_propensities(&[100.0, 1.0, 1.0, 1.0], &cfg).unwrap();
        let s_rel = out.relative_ess();
        assert!((0.89..=0.91).contains(&s_rel), "s_rel = {s_rel}");
    }

    #[test]
    fn from_propensities_rejects_nonpositive() {
        let cfg = EssConfig::forest_default();
        assert!(matches!(
            SampleWeights::from_propensities(&[1.0, 0.0], &cfg),
            Err(Error::InvalidPropensity { index: 1, .. })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(EssConfig::new(0.0, 0.01).is_err());
        assert!(EssConfig::new(1.1, 0.01).is_err());
        assert!(EssConfig::new(0.5, 0.5).is_err());
        assert!(EssConfig::new(0.5, 0.0).is_err());
    }
}
