//! Mini-batch gradient descent with local sample weighting.
//!
//! Each training step computes saliency-based feature importance, draws
//! one feature proportional to it, estimates stabilized propensities for
//! that feature on the full training sample, tempers the inverse weights
//! to the ESS floor, draws the mini-batch with replacement from the
//! weighted population, and performs one Adam update. The baseline
//! trainer uses epoch-shuffled uniform mini-batches without replacement
//! with the same optimizer.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureKind};
use crate::error::{Error, Result};
use crate::net::{Adam, DenseNet};
use crate::propensity::{
    fit_continuous_propensity, fit_discrete_propensity, full_sample_stats, stabilized_scores,
    AdjustmentSet, FullSampleStats,
};
use crate::rng;
use crate::weights::{EssConfig, SampleWeights};

/// Interpretation of the clamp in the saliency aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SaliencyClamp {
    /// Clamp each per-sample absolute derivative to `[0, 1]` before
    /// averaging.
    #[default]
    PerSample,
    /// Average the raw absolute derivatives, then min-max rescale the
    /// aggregated map to `[0, 1]`.
    AggregateMinMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdConfig {
    /// Number of mini-batch training steps.
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Minimum relative effective sample size of the batch weights.
    pub eta: f64,
    pub alpha: f64,
    pub hidden: Vec<usize>,
    /// Absolute-correlation filter for adjustment features; every feature
    /// passing it is used (no top-Q restriction).
    pub corr_threshold: f64,
    pub saliency_clamp: SaliencyClamp,
    /// Reuse propensity scores per target feature across steps. The fit
    /// is a deterministic function of the data, so this only saves time.
    pub cache_propensity: bool,
}

impl GdConfig {
    /// Benchmark defaults: Adam at learning rate 0.001, 400 steps,
    /// batches of 254, ESS floor 0.2.
    pub fn paper_defaults() -> Self {
        Self {
            steps: 400,
            batch_size: 254,
            learning_rate: 0.001,
            eta: 0.2,
            alpha: 0.01,
            hidden: vec![64, 32],
            corr_threshold: 0.1,
            saliency_clamp: SaliencyClamp::default(),
            cache_propensity: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.steps == 0 && self.batch_size == 0 {
            return Err(Error::InvalidConfig("empty training schedule".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "eta must be in (0, 1], got {}",
                self.eta
            )));
        }
        if self.eta < 1.0 {
            EssConfig::new(self.eta, self.alpha)?;
        }
        Ok(())
    }
}

/// Saliency scores: per-feature mean absolute gradient of the model
/// output with respect to the input, clamped according to `clamp` and
/// normalized to sum one. All-zero saliency falls back to uniform.
pub fn saliency(net: &DenseNet, features: &ndarray::Array2<f64>, clamp: SaliencyClamp) -> Vec<f64> {
    let n = features.nrows();
    let p = features.ncols();
    assert_eq!(p, net.input_width(), "feature width mismatch");
    // fixed-size chunks keep the reduction order deterministic
    let rows: Vec<usize> = (0..n).collect();
    let partials: Vec<Vec<f64>> = rows
        .par_chunks(256)
        .map(|chunk| {
            let mut acc = vec![0.0; p];
            for &i in chunk {
                let grad = net.input_gradient(features.row(i).as_slice().expect("contiguous"));
                match clamp {
                    SaliencyClamp::PerSample => {
                        for (a, g) in acc.iter_mut().zip(&grad) {
                            *a += g.abs().min(1.0);
                        }
                    }
                    SaliencyClamp::AggregateMinMax => {
                        for (a, g) in acc.iter_mut().zip(&grad) {
                            *a += g.abs();
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut s = vec![0.0; p];
    for part in partials {
        for (a, b) in s.iter_mut().zip(part) {
            *a += b;
        }
    }
    for v in &mut s {
        *v /= n as f64;
    }
    if clamp == SaliencyClamp::AggregateMinMax {
        s = crate::metrics::min_max_normalize(&s);
    }
    let total: f64 = s.iter().sum();
    if total <= 0.0 {
        return vec![1.0 / p as f64; p];
    }
    for v in &mut s {
        *v /= total;
    }
    s
}

/// One line of the training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub feature: usize,
    /// Relative effective sample size of the weights the batch was drawn
    /// from.
    pub batch_rel_ess: f64,
    /// Mini-batch loss before the update.
    pub loss: f64,
}

pub struct TrainOutcome {
    pub net: DenseNet,
    pub trace: Vec<TraceStep>,
}

fn draw_categorical(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn draw_batch_with_replacement(
    weights: &SampleWeights,
    batch: usize,
    rng: &mut impl Rng,
) -> Vec<usize> {
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for &w in weights.values() {
        acc += w;
        cumulative.push(acc);
    }
    (0..batch)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * acc;
            cumulative
                .partition_point(|&c| c <= u)
                .min(weights.len() - 1)
        })
        .collect()
}

/// Stabilized propensity machinery shared by every step: adjustment sets
/// from the correlation threshold alone (every feature is a candidate)
/// and full-sample stabilizer statistics for continuous targets.
struct GdPropensity {
    adjustment_sets: Vec<AdjustmentSet>,
    full_stats: Vec<FullSampleStats>,
    ess: EssConfig,
    cache: Vec<Option<Vec<f64>>>,
    cache_enabled: bool,
}

impl GdPropensity {
    fn new(data: &Dataset, cfg: &GdConfig) -> Self {
        let corr = data.correlation_matrix();
        let p = data.p();
        let adjustment_sets = (0..p)
            .map(|target| {
                // every feature passing the threshold, strongest first
                let mut adjusters: Vec<usize> = (0..p)
                    .filter(|&j| j != target && corr[[target, j]].abs() >= cfg.corr_threshold)
                    .collect();
                adjusters.sort_by(|&a, &b| {
                    corr[[target, b]]
                        .abs()
                        .total_cmp(&corr[[target, a]].abs())
                        .then(a.cmp(&b))
                });
                AdjustmentSet { target, adjusters }
            })
            .collect();
        let full_stats = (0..p).map(|f| full_sample_stats(data, f)).collect();
        Self {
            adjustment_sets,
            full_stats,
            ess: EssConfig::new(cfg.eta, cfg.alpha).expect("validated"),
            cache: vec![None; p],
            cache_enabled: cfg.cache_propensity,
        }
    }

    fn weights(&mut self, data: &Dataset, rows: &[usize], feature: usize) -> Result<SampleWeights> {
        let scores = if self.cache_enabled && self.cache[feature].is_some() {
            self.cache[feature].clone().unwrap()
        } else {
            let adj = &self.adjustment_sets[feature];
            let model = match data.kind(feature) {
                FeatureKind::Discrete { .. } => fit_discrete_propensity(data, rows, adj)?,
                FeatureKind::Continuous => {
                    fit_continuous_propensity(data, rows, adj, self.full_stats[feature])?
                }
            };
            let scores = stabilized_scores(&model, data, rows)?;
            if self.cache_enabled {
                self.cache[feature] = Some(scores.clone());
            }
            scores
        };
        match SampleWeights::from_propensities(&scores, &self.ess) {
            Ok(w) => Ok(w),
            Err(Error::SearchDidNotConverge { best, .. }) => Ok(best),
            Err(e) => Err(e),
        }
    }
}

/// Train with losaw-weighted mini-batches drawn with replacement.
pub fn train_losawgd(data: &Dataset, net: DenseNet, cfg: &GdConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    assert_eq!(net.input_width(), data.p(), "network width mismatch");
    let mut net = net;
    let mut adam = Adam::new(cfg.learning_rate, &net);
    let mut propensity = GdPropensity::new(data, cfg);
    let all_rows: Vec<usize> = (0..data.n()).collect();
    let mut feature_rng = rng::substream(seed, "gd-feature", 0);
    let mut batch_rng = rng::substream(seed, "gd-batch", 0);
    let mut trace = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let s = saliency(&net, data.features(), cfg.saliency_clamp);
        let feature = draw_categorical(&s, &mut feature_rng);
        let w = propensity.weights(data, &all_rows, feature)?;
        let batch = draw_batch_with_replacement(&w, cfg.batch_size, &mut batch_rng);

        let xs: Vec<&[f64]> = batch
            .iter()
            .map(|&i| data.row(i).to_slice().expect("contiguous"))
            .collect();
        let ys: Vec<f64> = batch.iter().map(|&i| data.responses()[i]).collect();
        let loss = net.batch_mse(&xs, &ys);
        let grads = net.backward_mse(&xs, &ys);
        adam.step(&mut net, &grads);

        trace.push(TraceStep {
            step,
            feature,
            batch_rel_ess: w.relative_ess(),
            loss,
        });
    }
    Ok(TrainOutcome { net, trace })
}

/// Baseline trainer: uniform mini-batches without replacement, reshuffled
/// every epoch, same optimizer and step count.
pub fn train_standard(data: &Dataset, net: DenseNet, cfg: &GdConfig, seed: u64) -> Result<DenseNet> {
    cfg.validate()?;
    assert_eq!(net.input_width(), data.p(), "network width mismatch");
    let mut net = net;
    let mut adam = Adam::new(cfg.learning_rate, &net);
    let mut rng = rng::substream(seed, "gd-shuffle", 0);
    let n = data.n();
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n; // force an initial shuffle

    for _ in 0..cfg.steps {
        if cursor >= n {
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                order.swap(i, j);
            }
            cursor = 0;
        }
        let end = (cursor + cfg.batch_size).min(n);
        let batch = &order[cursor..end];
        cursor = end;

        let xs: Vec<&[f64]> = batch
            .iter()
            .map(|&i| data.row(i).to_slice().expect("contiguous"))
            .collect();
        let ys: Vec<f64> = batch.iter().map(|&i| data.responses()[i]).collect();
        let grads = net.backward_mse(&xs, &ys);
        adam.step(&mut net, &grads);
    }
    Ok(net)
}

/// Write the training trace as CSV (`step,feature,batch_rel_ess,loss`).
pub fn write_trace_csv(path: &Path, trace: &[TraceStep]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["step", "feature", "batch_rel_ess", "loss"])?;
    for t in trace {
        wtr.write_record([
            t.step.to_string(),
            t.feature.to_string(),
            t.batch_rel_ess.to_string(),
            t.loss.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand_distr::StandardNormal;

    fn toy_dataset(n: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = crate::rng::substream(seed, "gd-test", 0);
        let mut values = Vec::with_capacity(n * p);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let row: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            ys.push(row[0] + 0.2 * rng.sample::<f64, _>(StandardNormal));
            values.extend(row);
        }
        Dataset::new(
            Array2::from_shape_vec((n, p), values).unwrap(),
            vec![FeatureKind::Continuous; p],
            ys,
        )
        .unwrap()
    }

    #[test]
    fn linear_saliency_concentrates_on_the_single_input() {
        // f(x) = 3 x_0: the per-sample derivative clamps to one, so the
        // normalized saliency is the first unit vector
        let mut net = DenseNet::zeros(3, &[]);
        let json = net.to_json().unwrap();
        let json = json.replace("\"weights\":[[0.0,0.0,0.0]]", "\"weights\":[[3.0,0.0,0.0]]");
        net = DenseNet::from_json(&json).unwrap();
        let x = Array2::from_shape_vec((4, 3), vec![0.5; 12]).unwrap();
        let s = saliency(&net, &x, SaliencyClamp::PerSample);
        assert_eq!(s, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn symmetric_inputs_share_saliency() {
        let mut rng = crate::rng::substream(55, "gd-test", 1);
        // f(x) = x_0 + x_1 via a hand-built linear layer
        let net = DenseNet::from_json(
            &DenseNet::zeros(2, &[])
                .to_json()
                .unwrap()
                .replace("\"weights\":[[0.0,0.0]]", "\"weights\":[[0.7,0.7]]"),
        )
        .unwrap();
        let mut values = Vec::new();
        for _ in 0..50 {
            values.push(rng.sample::<f64, _>(StandardNormal));
            values.push(rng.sample::<f64, _>(StandardNormal));
        }
        let x = Array2::from_shape_vec((50, 2), values).unwrap();
        let s = saliency(&net, &x, SaliencyClamp::PerSample);
        assert_abs_diff_eq!(s[0], s[1], epsilon = 1e-12);
        assert_abs_diff_eq!(s[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn saliency_matches_finite_differences() {
        let mut rng = crate::rng::substream(56, "gd-test", 2);
        let net = DenseNet::new(4, &[6], &mut rng);
        let mut values = Vec::new();
        for _ in 0..30 {
            for _ in 0..4 {
                values.push(rng.sample::<f64, _>(StandardNormal));
            }
        }
        let x = Array2::from_shape_vec((30, 4), values).unwrap();
        let s = saliency(&net, &x, SaliencyClamp::PerSample);
        // finite-difference version of the same aggregation
        let h = 1e-5;
        let mut fd = vec![0.0; 4];
        for i in 0..30 {
            for j in 0..4 {
                let mut up = x.row(i).to_vec();
                up[j] += h;
                let mut down = x.row(i).to_vec();
                down[j] -= h;
                let g = (net.forward(&up) - net.forward(&down)) / (2.0 * h);
                fd[j] += g.abs().min(1.0);
            }
        }
        for v in &mut fd {
            *v /= 30.0;
        }
        let total: f64 = fd.iter().sum();
        for v in &mut fd {
            *v /= total;
        }
        for (a, b) in s.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-3, "saliency {a} vs fd {b}");
        }
    }

    #[test]
    fn zero_net_saliency_falls_back_to_uniform() {
        let net = DenseNet::zeros(4, &[3]);
        let x = Array2::zeros((5, 4));
        let s = saliency(&net, &x, SaliencyClamp::PerSample);
        assert_eq!(s, vec![0.25; 4]);
    }

    #[test]
    fn zero_steps_returns_initial_net() {
        let data = toy_dataset(40, 3, 60);
        let mut rng = crate::rng::substream(57, "gd-test", 3);
        let net = DenseNet::new(3, &[4], &mut rng);
        let cfg = GdConfig {
            steps: 0,
            batch_size: 8,
            ..GdConfig::paper_defaults()
        };
        let out = train_losawgd(&data, net.clone(), &cfg, 1).unwrap();
        assert_eq!(out.net, net);
        assert!(out.trace.is_empty());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let data = toy_dataset(40, 3, 61);
        let mut rng = crate::rng::substream(57, "gd-test", 4);
        let net = DenseNet::new(3, &[4], &mut rng);
        let cfg = GdConfig {
            steps: 5,
            batch_size: 8,
            learning_rate: 0.0,
            ..GdConfig::paper_defaults()
        };
        let trained = train_standard(&data, net.clone(), &cfg, 2).unwrap();
        assert_eq!(trained, net);
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let data = toy_dataset(200, 4, 62);
        let mut rng = crate::rng::substream(58, "gd-test", 5);
        let net = DenseNet::new(4, &[8], &mut rng);
        let cfg = GdConfig {
            steps: 60,
            batch_size: 32,
            learning_rate: 0.01,
            eta: 0.5,
            ..GdConfig::paper_defaults()
        };
        let a = train_losawgd(&data, net.clone(), &cfg, 3).unwrap();
        let b = train_losawgd(&data, net.clone(), &cfg, 3).unwrap();
        assert_eq!(a.net, b.net);
        assert_eq!(a.trace, b.trace);
        assert!(
            a.trace.last().unwrap().loss < a.trace[0].loss,
            "loss did not decrease: {:?} -> {:?}",
            a.trace[0].loss,
            a.trace.last().unwrap().loss
        );
        // caching the propensity fit changes nothing numerically
        let cached = train_losawgd(
            &data,
            net.clone(),
            &GdConfig {
                cache_propensity: true,
                ..cfg
            },
            3,
        )
        .unwrap();
        assert_eq!(cached.net, a.net);
    }

    #[test]
    fn standard_single_step_reproduces_hand_adam_update() {
        // linear net, full batch: gradient is the least-squares gradient
        // and the first Adam step is lr * g / (|g| + eps)
        let data = toy_dataset(16, 2, 63);
        let net = DenseNet::zeros(2, &[]);
        let cfg = GdConfig {
            steps: 1,
            batch_size: 16,
            learning_rate: 0.001,
            ..GdConfig::paper_defaults()
        };
        let trained = train_standard(&data, net.clone(), &cfg, 4).unwrap();
        let rows: Vec<&[f64]> = (0..16).map(|i| data.row(i).to_slice().unwrap()).collect();
        let grads = net.backward_mse(&rows, data.responses());
        let trained_json = trained.to_json().unwrap();
        let doc: serde_json::Value = serde_json::from_str(&trained_json).unwrap();
        let w = doc["weights"][0].as_array().unwrap();
        for j in 0..2 {
            let g = grads.weights[0][j];
            let expect = -0.001 * g / (g.abs() + 1e-8);
            assert_abs_diff_eq!(w[j].as_f64().unwrap(), expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn batch_sampler_tracks_weights() {
        let w = SampleWeights::new(vec![0.5, 0.3, 0.15, 0.05]).unwrap();
        let mut rng = crate::rng::substream(59, "gd-test", 6);
        let draws = draw_batch_with_replacement(&w, 40_000, &mut rng);
        let mut freq = [0.0; 4];
        for d in draws {
            freq[d] += 1.0 / 40_000.0;
        }
        for (f, &expect) in freq.iter().zip(w.values()) {
            assert!((f - expect).abs() < 0.01, "freq {f} vs weight {expect}");
        }
    }

    #[test]
    fn trace_csv_written() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let trace = vec![TraceStep {
            step: 0,
            feature: 3,
            batch_rel_ess: 0.25,
            loss: 1.5,
        }];
        write_trace_csv(&path, &trace).unwrap();
        let content = std::fs::read_to_string(&path).unwrap();
        assert!(content.starts_with("step,feature,batch_rel_ess,loss"));
        assert!(content.contains("0,3,0.25,1.5"));
    }
}
