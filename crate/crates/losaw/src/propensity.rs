//! Stabilized propensity scores for a target feature given adjustment
//! features.
//!
//! The stabilized propensity of an observation is the ratio of the
//! conditional probability (or density) of its target-feature value given
//! the adjusters to its marginal probability. Inverting these scores
//! yields sample weights under which the target feature decorrelates from
//! the adjusters. Discrete targets use a multinomial logistic model over
//! one-hot encoded adjusters with frequency-count stabilization;
//! continuous targets use a ridge linear model with Gaussian residuals
//! stabilized by a normal fit on the full training sample.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureKind};
use crate::error::{Error, Result};

/// Floor on predicted conditional probabilities before inversion, so that
/// separable fits cannot produce unbounded weights.
const PROB_FLOOR: f64 = 1e-6;
/// Floor on continuous density ratios; Gaussian tails underflow otherwise.
const SCORE_FLOOR: f64 = 1e-12;
/// Ridge added to the normal equations for rank safety.
const RIDGE: f64 = 1e-8;
/// Floor on the residual variance of the conditional model.
const VAR_FLOOR: f64 = 1e-12;

/// Damped-Newton settings for the multinomial logistic fit. Plain
/// gradient descent underfits this model badly enough to leave the
/// derived weights far from decorrelating, so the fit runs full Newton
/// steps on the L2-regularized objective with halving on non-descent.
const LOGIT_ITERS: usize = 50;
const LOGIT_L2: f64 = 1e-4;
const LOGIT_TOL: f64 = 1e-8;
/// Ridge making the Newton system positive definite across the softmax
/// overparametrization's flat directions.
const LOGIT_RIDGE: f64 = 1e-8;

/// Target feature plus the adjustment features used to predict it,
/// ordered by decreasing preliminary importance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjustmentSet {
    pub target: usize,
    pub adjusters: Vec<usize>,
}

/// Pick adjustment features for `target`: the `q_max` strongest features
/// by preliminary importance, excluding the target, then filtered to those
/// whose absolute full-sample Pearson correlation with the target reaches
/// `corr_threshold`. An empty result is legal; the propensity then
/// degenerates to the stabilizer alone and the weights become uniform.
pub fn select_adjustment_features(
    data: &Dataset,
    target: usize,
    initial_fi: &[f64],
    q_max: usize,
    corr_threshold: f64,
) -> AdjustmentSet {
    assert_eq!(initial_fi.len(), data.p(), "importance length mismatch");
    let mut ranked: Vec<usize> = (0..data.p()).filter(|&j| j != target).collect();
    ranked.sort_by(|&a, &b| {
        initial_fi[b]
            .total_cmp(&initial_fi[a])
            .then(a.cmp(&b))
    });
    ranked.truncate(q_max);

    let corr = target_correlations(data, target);
    let adjusters = ranked
        .into_iter()
        .filter(|&j| corr[j].abs() >= corr_threshold)
        .collect();
    AdjustmentSet { target, adjusters }
}

/// Pearson correlations of every feature with `target` on the full sample.
/// Zero-variance columns correlate zero.
fn target_correlations(data: &Dataset, target: usize) -> Vec<f64> {
    let n = data.n() as f64;
    let p = data.p();
    let x = data.features();
    let means: Vec<f64> = (0..p).map(|j| x.column(j).sum() / n).collect();
    let mut cov = vec![0.0; p];
    let mut var = vec![0.0; p];
    for i in 0..data.n() {
        let row = x.row(i);
        let dt = row[target] - means[target];
        for j in 0..p {
            let dj = row[j] - means[j];
            cov[j] += dt * dj;
            var[j] += dj * dj;
        }
    }
    let vt = var[target];
    (0..p)
        .map(|j| {
            if vt > 0.0 && var[j] > 0.0 {
                cov[j] / (vt.sqrt() * var[j].sqrt())
            } else {
                0.0
            }
        })
        .collect()
}

/// One-hot or raw encoding of a single adjuster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum AdjusterEncoding {
    /// One column per level, starting at `offset`.
    OneHot { levels: Vec<f64>, offset: usize },
    /// Single raw-value column at `offset`.
    Raw { offset: usize },
}

/// A fitted propensity model for one target feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PropensityModel {
    /// Constant-feature or zero-variance fallback: every score is one and
    /// the derived weights are uniform.
    Degenerate { target: usize },
    Discrete(DiscreteModel),
    Continuous(ContinuousModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteModel {
    target: usize,
    adjusters: Vec<usize>,
    encodings: Vec<AdjusterEncoding>,
    /// Target levels observed in the fit sample, ascending.
    classes: Vec<f64>,
    /// `K x D` coefficients, row-major; column 0 is the intercept.
    coefs: Vec<f64>,
    dim: usize,
    /// Stabilizer: class frequencies in the fit sample.
    class_freq: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousModel {
    target: usize,
    adjusters: Vec<usize>,
    /// Intercept followed by one slope per adjuster.
    coefs: Vec<f64>,
    resid_var: f64,
    full_mean: f64,
    full_var: f64,
}

/// Mean and variance of the target feature on the full training sample,
/// used to stabilize continuous propensities at every node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullSampleStats {
    pub mean: f64,
    pub var: f64,
}

pub fn full_sample_stats(data: &Dataset, feature: usize) -> FullSampleStats {
    let n = data.n() as f64;
    let col = data.features().column(feature);
    let mean = col.sum() / n;
    let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    FullSampleStats { mean, var }
}

fn level_index(levels: &[f64], value: f64) -> Option<usize> {
    let idx = levels.partition_point(|&l| l < value - 1e-9);
    (idx < levels.len() && (levels[idx] - value).abs() <= 1e-9).then_some(idx)
}

/// Fit a multinomial logistic propensity model for a discrete target on
/// the rows of a node sample. A single observed target level signals a
/// constant feature and yields the degenerate model.
pub fn fit_discrete_propensity(
    data: &Dataset,
    rows: &[usize],
    adj: &AdjustmentSet,
) -> Result<PropensityModel> {
    let target = adj.target;
    let FeatureKind::Discrete { .. } = data.kind(target) else {
        return Err(Error::SchemaMismatch(format!(
            "feature {target} is not discrete"
        )));
    };

    // target classes present in the node
    let mut classes: Vec<f64> = rows.iter().map(|&i| data.value(i, target)).collect();
    classes.sort_by(f64::total_cmp);
    classes.dedup_by(|a, b| (*a - *b).abs() <= 1e-9);
    if classes.len() < 2 {
        return Ok(PropensityModel::Degenerate { target });
    }
    let k = classes.len();

    // adjuster encodings: one-hot for discrete, raw column for continuous
    let mut encodings = Vec::with_capacity(adj.adjusters.len());
    let mut dim = 1;
    for &a in &adj.adjusters {
        match data.kind(a) {
            FeatureKind::Discrete { levels } => {
                encodings.push(AdjusterEncoding::OneHot {
                    levels: levels.clone(),
                    offset: dim,
                });
                dim += levels.len();
            }
            FeatureKind::Continuous => {
                encodings.push(AdjusterEncoding::Raw { offset: dim });
                dim += 1;
            }
        }
    }

    let groups = group_rows(data, rows, target, &classes, &adj.adjusters, &encodings)?;
    let n_rows = rows.len() as f64;
    let coefs = fit_multinomial_newton(&groups, k, dim, n_rows);

    let mut class_freq = vec![0.0; k];
    for g in &groups {
        for (class, &c) in g.class_counts.iter().enumerate() {
            class_freq[class] += c;
        }
    }
    for f in &mut class_freq {
        *f /= n_rows;
    }

    Ok(PropensityModel::Discrete(DiscreteModel {
        target,
        adjusters: adj.adjusters.clone(),
        encodings,
        classes,
        coefs,
        dim,
        class_freq,
    }))
}

/// Rows collapsed by identical adjuster pattern; the logistic gradient on
/// grouped counts is exactly the full-batch gradient.
struct PatternGroup {
    onehot_cols: Vec<u32>,
    dense_cols: Vec<(u32, f64)>,
    class_counts: Vec<f64>,
    total: f64,
}

fn group_rows(
    data: &Dataset,
    rows: &[usize],
    target: usize,
    classes: &[f64],
    adjusters: &[usize],
    encodings: &[AdjusterEncoding],
) -> Result<Vec<PatternGroup>> {
    let k = classes.len();
    // a compact grouping key exists only when every adjuster is discrete
    let mut strides: Option<Vec<u64>> = Some(Vec::with_capacity(encodings.len()));
    let mut acc: u64 = 1;
    for enc in encodings {
        match enc {
            AdjusterEncoding::OneHot { levels, .. } => {
                if let Some(s) = strides.as_mut() {
                    s.push(acc);
                    match acc.checked_mul(levels.len() as u64) {
                        Some(next) => acc = next,
                        None => strides = None,
                    }
                }
            }
            AdjusterEncoding::Raw { .. } => strides = None,
        }
    }

    let class_of = |row: usize| -> Result<usize> {
        let v = data.value(row, target);
        level_index(classes, v).ok_or_else(|| {
            Error::SchemaMismatch(format!("target value {v} not among fitted classes"))
        })
    };

    let encode_row = |row: usize| -> Result<(Vec<u32>, Vec<(u32, f64)>)> {
        let mut onehot = Vec::with_capacity(adjusters.len());
        let mut dense = Vec::new();
        for (&a, enc) in adjusters.iter().zip(encodings) {
            let v = data.value(row, a);
            match enc {
                AdjusterEncoding::OneHot { levels, offset } => {
                    let idx = level_index(levels, v).ok_or_else(|| {
                        Error::SchemaMismatch(format!(
                            "value {v} of feature {a} not on its level grid"
                        ))
                    })?;
                    onehot.push((offset + idx) as u32);
                }
                AdjusterEncoding::Raw { offset } => dense.push((*offset as u32, v)),
            }
        }
        Ok((onehot, dense))
    };

    let mut groups: Vec<PatternGroup> = Vec::new();
    if let Some(strides) = strides {
        let mut index: std::collections::HashMap<u64, usize> = std::collections::HashMap::new();
        for &row in rows {
            let mut key = 0u64;
            for ((&a, enc), &stride) in adjusters.iter().zip(encodings).zip(&strides) {
                let AdjusterEncoding::OneHot { levels, .. } = enc else {
                    unreachable!()
                };
                let v = data.value(row, a);
                let idx = level_index(levels, v).ok_or_else(|| {
                    Error::SchemaMismatch(format!(
                        "value {v} of feature {a} not on its level grid"
                    ))
                })?;
                key += idx as u64 * stride;
            }
            let gi = *index.entry(key).or_insert_with(|| {
                groups.push(PatternGroup {
                    onehot_cols: Vec::new(),
                    dense_cols: Vec::new(),
                    class_counts: vec![0.0; k],
                    total: 0.0,
                });
                groups.len() - 1
            });
            if groups[gi].total == 0.0 {
                let (onehot, dense) = encode_row(row)?;
                groups[gi].onehot_cols = onehot;
                groups[gi].dense_cols = dense;
            }
            groups[gi].class_counts[class_of(row)?] += 1.0;
            groups[gi].total += 1.0;
        }
    } else {
        for &row in rows {
            let (onehot, dense) = encode_row(row)?;
            let mut counts = vec![0.0; k];
            counts[class_of(row)?] = 1.0;
            groups.push(PatternGroup {
                onehot_cols: onehot,
                dense_cols: dense,
                class_counts: counts,
                total: 1.0,
            });
        }
    }
    Ok(groups)
}

/// Regularized negative log-likelihood per observation.
fn multinomial_loss(
    coefs: &[f64],
    groups: &[PatternGroup],
    k: usize,
    dim: usize,
    n_rows: f64,
    logits: &mut [f64],
) -> f64 {
    let mut nll = 0.0;
    for g in groups {
        group_logits(coefs, dim, k, g, logits);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        for (class, &cnt) in g.class_counts.iter().enumerate() {
            if cnt > 0.0 {
                nll += cnt * (lse - logits[class]);
            }
        }
    }
    let mut reg = 0.0;
    for class in 0..k {
        for d in 1..dim {
            let w = coefs[class * dim + d];
            reg += w * w;
        }
    }
    nll / n_rows + 0.5 * LOGIT_L2 * reg
}

/// Damped Newton on the grouped multinomial logistic objective. The
/// intercepts are unpenalized; a small ridge keeps the Newton system
/// positive definite.
fn fit_multinomial_newton(groups: &[PatternGroup], k: usize, dim: usize, n_rows: f64) -> Vec<f64> {
    let kd = k * dim;
    let mut coefs = vec![0.0; kd];
    let mut grad = vec![0.0; kd];
    let mut hess = vec![0.0; kd * kd];
    let mut logits = vec![0.0; k];
    let mut cols: Vec<(usize, f64)> = Vec::new();

    let mut prev_loss = multinomial_loss(&coefs, groups, k, dim, n_rows, &mut logits);
    for _ in 0..LOGIT_ITERS {
        grad.fill(0.0);
        hess.fill(0.0);
        for g in groups {
            group_logits(&coefs, dim, k, g, &mut logits);
            softmax_in_place(&mut logits);
            cols.clear();
            cols.push((0, 1.0));
            for &c in &g.onehot_cols {
                cols.push((c as usize, 1.0));
            }
            for &(c, v) in &g.dense_cols {
                cols.push((c as usize, v));
            }
            for a_class in 0..k {
                let r = logits[a_class] * g.total - g.class_counts[a_class];
                if r != 0.0 {
                    let row = &mut grad[a_class * dim..(a_class + 1) * dim];
                    for &(c, v) in &cols {
                        row[c] += r * v;
                    }
                }
                for b_class in a_class..k {
                    let delta = if a_class == b_class { 1.0 } else { 0.0 };
                    let w = g.total * logits[a_class] * (delta - logits[b_class]);
                    if w == 0.0 {
                        continue;
                    }
                    for &(ci, vi) in &cols {
                        let row_idx = a_class * dim + ci;
                        let base = row_idx * kd + b_class * dim;
                        let scaled = w * vi;
                        for &(cj, vj) in &cols {
                            hess[base + cj] += scaled * vj;
                        }
                    }
                }
            }
        }
        // symmetrize the class blocks built only for a <= b
        for a_class in 0..k {
            for b_class in (a_class + 1)..k {
                for i in 0..dim {
                    for j in 0..dim {
                        let src = (a_class * dim + i) * kd + b_class * dim + j;
                        let dst = (b_class * dim + j) * kd + a_class * dim + i;
                        hess[dst] = hess[src];
                    }
                }
            }
        }
        let mut norm_sq = 0.0;
        for class in 0..k {
            for d in 0..dim {
                let idx = class * dim + d;
                grad[idx] /= n_rows;
                if d > 0 {
                    grad[idx] += LOGIT_L2 * coefs[idx];
                }
                norm_sq += grad[idx] * grad[idx];
            }
        }
        if norm_sq.sqrt() < LOGIT_TOL {
            break;
        }
        for h in hess.iter_mut() {
            *h /= n_rows;
        }
        for class in 0..k {
            for d in 0..dim {
                let idx = class * dim + d;
                hess[idx * kd + idx] += LOGIT_RIDGE + if d > 0 { LOGIT_L2 } else { 0.0 };
            }
        }
        let mut step = grad.clone();
        if !crate::linalg::solve_spd(&mut hess, &mut step, kd) {
            break;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let trial: Vec<f64> = coefs.iter().zip(&step).map(|(w, d)| w - t * d).collect();
            let l = multinomial_loss(&trial, groups, k, dim, n_rows, &mut logits);
            if l <= prev_loss + 1e-12 {
                coefs = trial;
                prev_loss = l;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    coefs
}

fn group_logits(coefs: &[f64], dim: usize, k: usize, g: &PatternGroup, out: &mut [f64]) {
    for (class, z) in out.iter_mut().enumerate().take(k) {
        let row = &coefs[class * dim..(class + 1) * dim];
        let mut acc = row[0];
        for &c in &g.onehot_cols {
            acc += row[c as usize];
        }
        for &(c, v) in &g.dense_cols {
            acc += row[c as usize] * v;
        }
        *z = acc;
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Fit a ridge linear propensity model for a continuous target on the rows
/// of a node sample. Zero residual variance (after the floor) or a
/// zero-variance full-sample stabilizer degenerates to uniform scores.
/// When the node is too small for the full adjustment set, the lowest
/// ranked adjusters are dropped so that at least two residual degrees of
/// freedom remain.
pub fn fit_continuous_propensity(
    data: &Dataset,
    rows: &[usize],
    adj: &AdjustmentSet,
    full: FullSampleStats,
) -> Result<PropensityModel> {
    let target = adj.target;
    if data.kind(target).is_discrete() {
        return Err(Error::SchemaMismatch(format!(
            "feature {target} is not continuous"
        )));
    }
    if full.var <= VAR_FLOOR {
        return Ok(PropensityModel::Degenerate { target });
    }
    let n = rows.len();
    let q = adj.adjusters.len().min(n.saturating_sub(2));
    let adjusters = &adj.adjusters[..q];
    let dim = q + 1;

    let mut gram = vec![0.0; dim * dim];
    let mut rhs = vec![0.0; dim];
    let mut z = vec![0.0; dim];
    for &row in rows {
        z[0] = 1.0;
        for (j, &a) in adjusters.iter().enumerate() {
            z[j + 1] = data.value(row, a);
        }
        let y = data.value(row, target);
        for i in 0..dim {
            rhs[i] += z[i] * y;
            for j in 0..=i {
                gram[i * dim + j] += z[i] * z[j];
            }
        }
    }
    for i in 0..dim {
        for j in (i + 1)..dim {
            gram[i * dim + j] = gram[j * dim + i];
        }
        gram[i * dim + i] += RIDGE;
    }
    if !crate::linalg::solve_spd(&mut gram, &mut rhs, dim) {
        return Ok(PropensityModel::Degenerate { target });
    }
    let coefs = rhs;

    let mut resid_sq = 0.0;
    for &row in rows {
        let mut pred = coefs[0];
        for (j, &a) in adjusters.iter().enumerate() {
            pred += coefs[j + 1] * data.value(row, a);
        }
        let r = data.value(row, target) - pred;
        resid_sq += r * r;
    }
    let resid_var = resid_sq / n as f64;
    if resid_var < VAR_FLOOR {
        return Ok(PropensityModel::Degenerate { target });
    }

    Ok(PropensityModel::Continuous(ContinuousModel {
        target,
        adjusters: adjusters.to_vec(),
        coefs,
        resid_var,
        full_mean: full.mean,
        full_var: full.var,
    }))
}

fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    (-(d * d) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Per-observation stabilized propensity scores (conditional over
/// marginal), all positive after flooring. Inverting them gives the losaw
/// weights.
pub fn stabilized_scores(
    model: &PropensityModel,
    data: &Dataset,
    rows: &[usize],
) -> Result<Vec<f64>> {
    match model {
        PropensityModel::Degenerate { .. } => Ok(vec![1.0; rows.len()]),
        PropensityModel::Discrete(m) => {
            let k = m.classes.len();
            let mut logits = vec![0.0; k];
            let mut scores = Vec::with_capacity(rows.len());
            for &row in rows {
                for (class, z) in logits.iter_mut().enumerate() {
                    let coef = &m.coefs[class * m.dim..(class + 1) * m.dim];
                    let mut acc = coef[0];
                    for (&a, enc) in m.adjusters.iter().zip(&m.encodings) {
                        let v = data.value(row, a);
                        match enc {
                            AdjusterEncoding::OneHot { levels, offset } => {
                                let idx = level_index(levels, v).ok_or_else(|| {
                                    Error::SchemaMismatch(format!(
                                        "value {v} of feature {a} not on its level grid"
                                    ))
                                })?;
                                acc += coef[offset + idx];
                            }
                            AdjusterEncoding::Raw { offset } => acc += coef[*offset] * v,
                        }
                    }
                    *z = acc;
                }
                softmax_in_place(&mut logits);
                let class = level_index(&m.classes, data.value(row, m.target)).ok_or_else(|| {
                    Error::SchemaMismatch(format!(
                        "target value of row {row} not among fitted classes"
                    ))
                })?;
                scores.push(logits[class].max(PROB_FLOOR) / m.class_freq[class]);
            }
            Ok(scores)
        }
        PropensityModel::Continuous(m) => {
            let mut scores = Vec::with_capacity(rows.len());
            for &row in rows {
                let mut pred = m.coefs[0];
                for (j, &a) in m.adjusters.iter().enumerate() {
                    pred += m.coefs[j + 1] * data.value(row, a);
                }
                let x = data.value(row, m.target);
                let cond = normal_pdf(x - pred, 0.0, m.resid_var);
                let stab = normal_pdf(x, m.full_mean, m.full_var);
                let score = cond / stab;
                if !score.is_finite() {
                    return Err(Error::SchemaMismatch(format!(
                        "non-finite propensity score for row {row}"
                    )));
                }
                scores.push(score.max(SCORE_FLOOR));
            }
            Ok(scores)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::{EssConfig, SampleWeights};
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn discrete_kind() -> FeatureKind {
        FeatureKind::discrete(vec![0.0, 1.0]).unwrap()
    }

    fn dataset_from_rows(rows: &[(f64, f64)], kinds: Vec<FeatureKind>) -> Dataset {
        let n = rows.len();
        let mut values = Vec::with_capacity(2 * n);
        for &(a, b) in rows {
            values.push(a);
            values.push(b);
        }
        let x = Array2::from_shape_vec((n, 2), values).unwrap();
        Dataset::new(x, kinds, vec![0.0; n]).unwrap()
    }

    #[test]
    fn empty_adjusters_give_unit_scores() {
        // conditional equals marginal frequency when nothing is adjusted for
        let rows: Vec<(f64, f64)> = vec![(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)];
        let data = dataset_from_rows(&rows, vec![discrete_kind(), discrete_kind()]);
        let adj = AdjustmentSet {
            target: 0,
            adjusters: vec![],
        };
        let idx: Vec<usize> = (0..4).collect();
        let model = fit_discrete_propensity(&data, &idx, &adj).unwrap();
        let scores = stabilized_scores(&model, &data, &idx).unwrap();
        for s in scores {
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn constant_target_degenerates() {
        let rows: Vec<(f64, f64)> = vec![(1.0, 0.0), (1.0, 1.0), (1.0, 0.0)];
        let data = dataset_from_rows(&rows, vec![discrete_kind(), discrete_kind()]);
        let adj = AdjustmentSet {
            target: 0,
            adjusters: vec![1],
        };
        let model = fit_discrete_propensity(&data, &[0, 1, 2], &adj).unwrap();
        assert!(matches!(model, PropensityModel::Degenerate { .. }));
        let scores = stabilized_scores(&model, &data, &[0, 1, 2]).unwrap();
        assert_eq!(scores, vec![1.0; 3]);
    }

    #[test]
    fn perfectly_correlated_binaries_upweight_discordant_rows() {
        // concordant pairs dominate; after the logistic fit the discordant
        // rows must carry the largest losaw weights
        let mut rows = Vec::new();
        for _ in 0..48 {
            rows.push((0.0, 0.0));
            rows.push((1.0, 1.0));
        }
        rows.push((0.0, 1.0));
        rows.push((1.0, 0.0));
        let data = dataset_from_rows(&rows, vec![discrete_kind(), discrete_kind()]);
        let adj = AdjustmentSet {
            target: 0,
            adjusters: vec![1],
        };
        let idx: Vec<usize> = (0..rows.len()).collect();
        let model = fit_discrete_propensity(&data, &idx, &adj).unwrap();
        let scores = stabilized_scores(&model, &data, &idx).unwrap();
        let concordant = scores[0];
        let discordant = scores[96];
        assert!(
            discordant < concordant,
            "discordant score {discordant} should be below concordant {concordant}"
        );
        let weights: Vec<f64> = scores.iter().map(|s| 1.0 / s).collect();
        let max = weights.iter().cloned().fold(0.0, f64::max);
        assert!(weights[96] == max || weights[97] == max);
    }

    #[test]
    fn example_population_ratio_recovered_from_sample() {
        // joint table P(0,0)=P(1,1)=0.4, P(0,1)=P(1,0)=0.1 has stabilized
        // propensities 1.6 (concordant) and 0.4 (discordant)
        let mut rows = Vec::new();
        for _ in 0..4000 {
            rows.push((0.0, 0.0));
            rows.push((1.0, 1.0));
        }
        for _ in 0..1000 {
            rows.push((0.0, 1.0));
            rows.push((1.0, 0.0));
        }
        let data = dataset_from_rows(&rows, vec![discrete_kind(), discrete_kind()]);
        let adj = AdjustmentSet {
            target: 1,
            adjusters: vec![0],
        };
        let idx: Vec<usize> = (0..rows.len()).collect();
        let model = fit_discrete_propensity(&data, &idx, &adj).unwrap();
        let scores = stabilized_scores(&model, &data, &idx).unwrap();
        assert_abs_diff_eq!(scores[0], 1.6, epsilon = 0.05);
        assert_abs_diff_eq!(scores[8000], 0.4, epsilon = 0.05);
    }

    #[test]
    fn continuous_independent_target_scores_near_one() {
        let mut rng = crate::rng::substream(11, "test", 0);
        let n = 2000;
        let mut values = Vec::with_capacity(2 * n);
        for _ in 0..n {
            values.push(rng.sample::<f64, _>(StandardNormal));
            values.push(rng.sample::<f64, _>(StandardNormal));
        }
        let x = Array2::from_shape_vec((n, 2), values).unwrap();
        let data = Dataset::new(
            x,
            vec![FeatureKind::Continuous, FeatureKind::Continuous],
            vec![0.0; n],
        )
        .unwrap();
        let idx: Vec<usize> = (0..n).collect();
        let adj = AdjustmentSet {
            target: 0,
            adjusters: vec![1],
        };
        let full = full_sample_stats(&data, 0);
        let model = fit_continuous_propensity(&data, &idx, &adj, full).unwrap();
        let scores = stabilized_scores(&model, &data, &idx).unwrap();
        let mean = scores.iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.1, "mean score {mean}");
    }

    #[test]
    fn duplicated_target_degenerates() {
        let mut rng = crate::rng::substream(13, "test", 0);
        let n = 200;
        let mut values = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let v: f64 = rng.sample(StandardNormal);
            values.push(v);
            values.push(v);
        }
        let x = Array2::from_shape_vec((n, 2), values).unwrap();
        let data = Dataset::new(
            x,
            vec![FeatureKind::Continuous, FeatureKind::Continuous],
            vec![0.0; n],
        )
        .unwrap();
        let idx: Vec<usize> = (0..n).collect();
        let adj = AdjustmentSet {
            target: 0,
            adjusters: vec![1],
        };
        let full = full_sample_stats(&data, 0);
        let model = fit_continuous_propensity(&data, &idx, &adj, full).unwrap();
        assert!(matches!(model, PropensityModel::Degenerate { .. }));
    }

    #[test]
    fn bivariate_normal_matches_closed_form() {
        // X2 = rho X1 + sqrt(1-rho^2) Z: stabilized propensity of X2 given
        // X1 is phi_{0,1-rho^2}(resid) / phi_{0,1}(x2)
        let rho = 0.8;
        let mut rng = crate::rng::substream(17, "test", 0);
        let n = 1000;
        let mut values = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let x1: f64 = rng.sample(StandardNormal);
            let z: f64 = rng.sample(StandardNormal);
            let x2 = rho * x1 + (1.0f64 - rho * rho).sqrt() * z;
            values.push(x1);
            values.push(x2);
        }
        let x = Array2::from_shape_vec((n, 2), values).unwrap();
        let data = Dataset::new(
            x,
            vec![FeatureKind::Continuous, FeatureKind::Continuous],
            vec![0.0; n],
        )
        .unwrap();
        let idx: Vec<usize> = (0..n).collect();
        let adj = AdjustmentSet {
            target: 1,
            adjusters: vec![0],
        };
        let full = full_sample_stats(&data, 1);
        let model = fit_continuous_propensity(&data, &idx, &adj, full).unwrap();
        let PropensityModel::Continuous(m) = &model else {
            panic!("expected continuous model")
        };
        let scores = stabilized_scores(&model, &data, &idx).unwrap();
        let mut rel_errs: Vec<f64> = idx
            .iter()
            .map(|&i| {
                let x1 = data.value(i, 0);
                let x2 = data.value(i, 1);
                let exact = normal_pdf(x2 - rho * x1, 0.0, 1.0 - rho * rho)
                    / normal_pdf(x2, 0.0, 1.0);
                (scores[i] - exact).abs() / exact
            })
            .collect();
        rel_errs.sort_by(f64::total_cmp);
        let median = rel_errs[n / 2];
        assert!(median < 0.05, "median relative error {median}");
        assert!((m.resid_var - (1.0 - rho * rho)).abs() < 0.05);
    }

    #[test]
    fn adjuster_order_is_irrelevant() {
        let mut rng = crate::rng::substream(23, "test", 0);
        let n = 300;
        let kinds = vec![
            FeatureKind::discrete(vec![-1.0, 0.0, 1.0]).unwrap(),
            FeatureKind::discrete(vec![-1.0, 0.0, 1.0]).unwrap(),
            FeatureKind::discrete(vec![-1.0, 0.0, 1.0]).unwrap(),
        ];
        let mut values = Vec::with_capacity(3 * n);
        for _ in 0..n {
            for _ in 0..3 {
                values.push((rng.random_range(0..3) as f64) - 1.0);
            }
        }
        let x = Array2::from_shape_vec((n, 3), values).unwrap();
        let data = Dataset::new(x, kinds, vec![0.0; n]).unwrap();
        let idx: Vec<usize> = (0..n).collect();
        let a = AdjustmentSet {
            target: 0,
            adjusters: vec![1, 2],
        };
        let b = AdjustmentSet {
            target: 0,
            adjusters: vec![2, 1],
        };
        let sa = stabilized_scores(
            &fit_discrete_propensity(&data, &idx, &a).unwrap(),
            &data,
            &idx,
        )
        .unwrap();
        let sb = stabilized_scores(
            &fit_discrete_propensity(&data, &idx, &b).unwrap(),
            &data,
            &idx,
        )
        .unwrap();
        for (x, y) in sa.iter().zip(&sb) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-8);
        }
    }

    #[test]
    fn weighted_discrete_sample_decorrelates() {
        // strongly correlated binary pair: weights from the fitted
        // propensity push the weighted correlation near zero for any ESS
        // floor up to one half (discrete weights are bounded, so the cap
        // barely binds)
        let mut rng = crate::rng::substream(29, "test", 0);
        let n = 5000;
        // P(0,0) = P(1,1) = 0.4375 gives correlation 0.75
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.random();
            rows.push(if u < 0.4375 {
                (0.0, 0.0)
            } else if u < 0.875 {
                (1.0, 1.0)
            } else if u < 0.9375 {
                (0.0, 1.0)
            } else {
                (1.0, 0.0)
            });
        }
        let data = dataset_from_rows(&rows, vec![discrete_kind(), discrete_kind()]);
        let idx: Vec<usize> = (0..n).collect();
        let adj = AdjustmentSet {
            target: 1,
            adjusters: vec![0],
        };
        let raw = data.correlation_matrix()[[0, 1]];
        assert!(raw.abs() >= 0.7, "raw correlation {raw}");
        let model = fit_discrete_propensity(&data, &idx, &adj).unwrap();
        let scores = stabilized_scores(&model, &data, &idx).unwrap();
        let x0: Vec<f64> = idx.iter().map(|&i| data.value(i, 0)).collect();
        let x1: Vec<f64> = idx.iter().map(|&i| data.value(i, 1)).collect();
        for eta in [0.5, 0.25] {
            let cfg = EssConfig::new(eta, 0.01).unwrap();
            let w = SampleWeights::from_propensities(&scores, &cfg).unwrap();
            let wc = crate::metrics::weighted_corr(&x0, &x1, w.values()).unwrap();
            assert!(wc.abs() <= 0.1, "eta {eta}: weighted correlation {wc}");
        }
    }

    #[test]
    fn weighted_continuous_sample_decorrelates_at_low_eta() {
        // Gaussian inverse-propensity weights are heavy-tailed, so the
        // per-sample weighted correlation is noisy; the mean over fixed
        // seeds settles below 0.1 at a low ESS floor
        let rho = 0.7;
        let seeds = 10;
        let mut sum = 0.0;
        for seed in 0..seeds {
            let mut rng = crate::rng::substream(37, "test", seed);
            let n = 5000;
            let mut values = Vec::with_capacity(2 * n);
            for _ in 0..n {
                let x1: f64 = rng.sample(StandardNormal);
                let z: f64 = rng.sample(StandardNormal);
                values.push(x1);
                values.push(rho * x1 + (1.0f64 - rho * rho).sqrt() * z);
            }
            let x = Array2::from_shape_vec((n, 2), values).unwrap();
            let data = Dataset::new(
                x,
                vec![FeatureKind::Continuous, FeatureKind::Continuous],
                vec![0.0; n],
            )
            .unwrap();
            let idx: Vec<usize> = (0..n).collect();
            let adj = AdjustmentSet {
                target: 1,
                adjusters: vec![0],
            };
            let full = full_sample_stats(&data, 1);
            let model = fit_continuous_propensity(&data, &idx, &adj, full).unwrap();
            let scores = stabilized_scores(&model, &data, &idx).unwrap();
            let cfg = EssConfig::new(0.1, 0.01).unwrap();
            let w = SampleWeights::from_propensities(&scores, &cfg).unwrap();
            let x0: Vec<f64> = idx.iter().map(|&i| data.value(i, 0)).collect();
            let x1: Vec<f64> = idx.iter().map(|&i| data.value(i, 1)).collect();
            sum += crate::metrics::weighted_corr(&x0, &x1, w.values()).unwrap();
        }
        let mean = sum / seeds as f64;
        assert!(mean.abs() <= 0.1, "mean weighted correlation {mean}");
    }

    #[test]
    fn adjustment_selection_ranks_then_filters() {
        let mut rng = crate::rng::substream(31, "test", 0);
        let n = 800;
        let mut values = Vec::with_capacity(3 * n);
        for _ in 0..n {
            let x1: f64 = rng.sample(StandardNormal);
            let x2 = 0.9 * x1 + 0.45 * rng.sample::<f64, _>(StandardNormal);
            let x3: f64 = rng.sample(StandardNormal);
            values.extend([x1, x2, x3]);
        }
        let x = Array2::from_shape_vec((n, 3), values).unwrap();
        let data = Dataset::new(x, vec![FeatureKind::Continuous; 3], vec![0.0; n]).unwrap();
        // no filtering: everything else ranked by importance
        let all = select_adjustment_features(&data, 0, &[0.5, 0.2, 0.3], 3, 0.0);
        assert_eq!(all.adjusters, vec![2, 1]);
        // threshold removes the independent feature
        let filtered = select_adjustment_features(&data, 0, &[0.5, 0.2, 0.3], 3, 0.1);
        assert_eq!(filtered.adjusters, vec![1]);
        // an independent target keeps nothing
        let none = select_adjustment_features(&data, 2, &[0.5, 0.2, 0.3], 3, 0.1);
        assert!(none.adjusters.is_empty());
    }
}
