//! Evaluation metrics: prediction R², precision-recall AUC over feature
//! importance thresholds, the feature-importance gap, and weighted
//! correlation diagnostics.

use crate::error::{Error, Result};

/// Coefficient of determination `1 - SSE/SST` with SST about the mean of
/// `y`. Can be negative; errors on constant `y`.
pub fn r_squared(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    assert_eq!(y.len(), y_hat.len(), "length mismatch");
    assert!(y.len() >= 2, "need at least two observations");
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let mut sse = 0.0;
    let mut sst = 0.0;
    for (&yi, &hi) in y.iter().zip(y_hat) {
        sse += (yi - hi) * (yi - hi);
        sst += (yi - mean) * (yi - mean);
    }
    if sst <= 0.0 {
        return Err(Error::ConstantResponse);
    }
    Ok(1.0 - sse / sst)
}

/// Area under the precision-recall curve for classifying signal features
/// by thresholding importance scores.
///
/// Thresholds sweep the distinct importance values in descending order;
/// features sharing a value enter as one block. The curve starts at the
/// conventional anchor (recall 0, precision 1) and the area is the
/// trapezoidal integral over recall, matching the published benchmark
/// values (the noise-over-two-signals ranking scores exactly 5/12).
/// Depends only on the ranking of `fi`.
pub fn pr_auc(fi: &[f64], signal: &[usize]) -> f64 {
    let p = fi.len();
    assert!(!signal.is_empty(), "signal set must be nonempty");
    assert!(signal.len() < p, "signal set must be a proper subset");
    let is_signal: Vec<bool> = {
        let mut v = vec![false; p];
        for &s in signal {
            v[s] = true;
        }
        v
    };
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| fi[b].total_cmp(&fi[a]));

    let total_signal = signal.len() as f64;
    let mut auc = 0.0;
    let mut tp = 0.0;
    let mut selected = 0.0;
    let mut prev_recall = 0.0;
    let mut prev_precision = 1.0;
    let mut i = 0;
    while i < p {
        // one threshold block per distinct importance value
        let mut j = i;
        while j < p && fi[order[j]] == fi[order[i]] {
            if is_signal[order[j]] {
                tp += 1.0;
            }
            selected += 1.0;
            j += 1;
        }
        let recall = tp / total_signal;
        let precision = tp / selected;
        auc += (recall - prev_recall) * 0.5 * (precision + prev_precision);
        prev_recall = recall;
        prev_precision = precision;
        i = j;
    }
    auc
}

/// Min-max rescaling onto `[0, 1]`; a constant vector maps to all zeros.
pub fn min_max_normalize(v: &[f64]) -> Vec<f64> {
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max - min <= 0.0 {
        return vec![0.0; v.len()];
    }
    v.iter().map(|&x| (x - min) / (max - min)).collect()
}

/// Feature-importance gap: the smallest normalized importance among
/// signal features minus the largest among noise features. Positive iff a
/// perfect cutoff exists; its magnitude is the margin. Expects scores
/// already scaled to `[0, 1]`.
pub fn fi_gap(fi_normalized: &[f64], signal: &[usize]) -> f64 {
    let p = fi_normalized.len();
    assert!(!signal.is_empty(), "signal set must be nonempty");
    assert!(signal.len() < p, "signal set must be a proper subset");
    assert!(
        fi_normalized
            .iter()
            .all(|&v| (-1e-9..=1.0 + 1e-9).contains(&v)),
        "scores must be min-max normalized to [0, 1]"
    );
    let is_signal: Vec<bool> = {
        let mut v = vec![false; p];
        for &s in signal {
            v[s] = true;
        }
        v
    };
    let mut min_signal = f64::INFINITY;
    let mut max_noise = f64::NEG_INFINITY;
    for (i, &v) in fi_normalized.iter().enumerate() {
        if is_signal[i] {
            min_signal = min_signal.min(v);
        } else {
            max_noise = max_noise.max(v);
        }
    }
    min_signal - max_noise
}

/// Weighted Pearson correlation under nonnegative weights.
pub fn weighted_corr(x: &[f64], y: &[f64], w: &[f64]) -> Result<f64> {
    assert_eq!(x.len(), y.len(), "length mismatch");
    assert_eq!(x.len(), w.len(), "length mismatch");
    let w_sum: f64 = w.iter().sum();
    if w_sum <= 0.0 {
        return Err(Error::DegenerateWeights);
    }
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / w_sum;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / w_sum;
    let mut cxy = 0.0;
    let mut cxx = 0.0;
    let mut cyy = 0.0;
    for ((&xi, &yi), &wi) in x.iter().zip(y).zip(w) {
        let dx = xi - mx;
        let dy = yi - my;
        cxy += wi * dx * dy;
        cxx += wi * dx * dx;
        cyy += wi * dy * dy;
    }
    if cxx <= 0.0 || cyy <= 0.0 {
        return Err(Error::DegenerateVariance);
    }
    Ok(cxy / (cxx.sqrt() * cyy.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn r2_perfect_and_mean_predictions() {
        let y = [1.0, 2.0, 3.0];
        assert_abs_diff_eq!(r_squared(&y, &y).unwrap(), 1.0, epsilon = 1e-15);
        let mean = [2.0, 2.0, 2.0];
        assert_abs_diff_eq!(r_squared(&y, &mean).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn r2_hand_computed() {
        let r2 = r_squared(&[0.0, 1.0, 2.0], &[0.0, 1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(r2, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn r2_constant_response_errors() {
        assert!(matches!(
            r_squared(&[1.0, 1.0], &[1.0, 2.0]),
            Err(Error::ConstantResponse)
        ));
    }

    #[test]
    fn r2_equals_one_minus_mse_over_var() {
        let mut rng = crate::rng::substream(3, "metrics", 0);
        let y: Vec<f64> = (0..50).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let y_hat: Vec<f64> = (0..50).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let mse = y
            .iter()
            .zip(&y_hat)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert_abs_diff_eq!(
            r_squared(&y, &y_hat).unwrap(),
            1.0 - mse / var,
            epsilon = 1e-12
        );
    }

    #[test]
    fn pr_auc_perfect_separation() {
        let fi = [0.5, 0.4, 0.05, 0.03, 0.02];
        assert_abs_diff_eq!(pr_auc(&fi, &[0, 1]), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn pr_auc_constant_scores_single_block() {
        // one degenerate threshold block: the trapezoid runs from the
        // (0, 1) anchor straight to (1, prevalence)
        let fi = [0.2; 6];
        assert_abs_diff_eq!(
            pr_auc(&fi, &[0, 1]),
            0.5 * (1.0 + 2.0 / 6.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn pr_auc_noise_over_both_signals_is_5_12ths() {
        // the benchmark anti-ordering: one noise feature outranks both
        // signals; the curve (0,1) -> (0,0) -> (1/2,1/2) -> (1,2/3)
        // integrates to exactly 5/12, the published baseline value
        let fi = [0.45, 0.4, 0.5, 0.1, 0.05, 0.02];
        let v = pr_auc(&fi, &[0, 1]);
        assert_abs_diff_eq!(v, 5.0 / 12.0, epsilon = 1e-12);
    }

    #[test]
    fn pr_auc_two_interleaved_noise_features() {
        // ranking (noise, s, noise, s, ...): curve (0,1) -> (0,0) ->
        // (1/2,1/2) -> (1/2,1/3) -> (1,1/2)
        let fi = [0.45, 0.3, 0.5, 0.4, 0.05, 0.02];
        let expect = 0.5 * 0.5 * (0.0 + 0.5) + 0.5 * 0.5 * (1.0 / 3.0 + 0.5);
        assert_abs_diff_eq!(pr_auc(&fi, &[0, 1]), expect, epsilon = 1e-12);
    }

    #[test]
    fn pr_auc_is_rank_invariant() {
        let mut rng = crate::rng::substream(5, "metrics", 1);
        for _ in 0..20 {
            let fi: Vec<f64> = (0..8).map(|_| rng.random::<f64>()).collect();
            let signal = [1usize, 4];
            let base = pr_auc(&fi, &signal);
            // strictly monotone map: a*exp(x)+b with a > 0
            let a = rng.random::<f64>() + 0.1;
            let b = rng.random::<f64>() - 0.5;
            let mapped: Vec<f64> = fi.iter().map(|&x| a * x.exp() + b).collect();
            assert_abs_diff_eq!(base, pr_auc(&mapped, &signal), epsilon = 1e-12);
        }
    }

    #[test]
    fn fi_gap_hand_computed() {
        let s = [1.0, 0.8, 0.3, 0.1];
        assert_abs_diff_eq!(fi_gap(&s, &[0, 1]), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn fi_gap_signs() {
        // all signal below all noise
        let s = [0.1, 0.2, 0.9, 1.0];
        assert!(fi_gap(&s, &[0, 1]) < 0.0);
        let c = [0.3; 4];
        assert_abs_diff_eq!(fi_gap(&c, &[0, 1]), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn min_max_maps_onto_unit_interval() {
        let v = min_max_normalize(&[2.0, 4.0, 3.0]);
        assert_eq!(v, vec![0.0, 1.0, 0.5]);
        assert_eq!(min_max_normalize(&[1.0, 1.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn weighted_corr_uniform_is_pearson() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [1.1, 1.9, 3.2, 3.8];
        let uni = weighted_corr(&x, &y, &[0.25; 4]).unwrap();
        // plain Pearson
        let n = 4.0;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let cxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let cxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
        let cyy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
        assert_abs_diff_eq!(uni, cxy / (cxx * cyy).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn weighted_corr_self_is_one() {
        let x = [1.0, 5.0, 2.0];
        assert_abs_diff_eq!(
            weighted_corr(&x, &x, &[0.2, 0.5, 0.3]).unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn weighted_corr_degenerate_errors() {
        assert!(weighted_corr(&[1.0, 1.0], &[1.0, 2.0], &[0.5, 0.5]).is_err());
    }
}
