//! Random-forest regressor with local sample weighting.
//!
//! Split selection maximizes the relative weighted impurity decrease
//! under feature-specific sample weights: for every candidate feature a
//! propensity model is fitted on the node sample, inverted into losaw
//! weights with an effective-sample-size floor, and the best split of
//! that feature is scored relative to the feature's own weighted parent
//! impurity. Setting `eta = 1` forces uniform weights, which reduces the
//! algorithm to a standard regression forest and serves as the baseline.
//!
//! Feature importance follows the modified mean-decrease-in-impurity
//! score: each inner node contributes its relative weighted impurity
//! decrease scaled by the node's unweighted response variance and sample
//! size, standardized per tree and averaged over the ensemble.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureKind};
use crate::error::{Error, Result};
use crate::propensity::{
    fit_continuous_propensity, fit_discrete_propensity, full_sample_stats,
    select_adjustment_features, stabilized_scores, AdjustmentSet, FullSampleStats,
};
use crate::rng;
use crate::split::{best_split_continuous, best_split_discrete};
use crate::weights::{EssConfig, SampleWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub m_try: usize,
    /// Minimum relative effective sample size; `1.0` is the uniform
    /// baseline forest.
    pub eta: f64,
    /// Tolerance of the effective-sample-size search.
    pub alpha: f64,
    /// Maximum number of adjustment features per propensity model.
    pub q_max: usize,
    /// Absolute-correlation filter for adjustment features.
    pub corr_threshold: f64,
}

impl ForestConfig {
    /// Benchmark defaults: 100 trees of depth 10 with 5-row leaves,
    /// `m_try = floor(P/3)`, up to 10 adjustment features at correlation
    /// threshold 0.1 and an ESS floor of 0.25.
    pub fn losaw_defaults(p: usize) -> Self {
        Self {
            n_trees: 100,
            max_depth: 10,
            min_leaf: 5,
            m_try: (p / 3).max(1),
            eta: 0.25,
            alpha: 0.01,
            q_max: 10,
            corr_threshold: 0.1,
        }
    }

    /// Same as [`Self::losaw_defaults`] with uniform weights.
    pub fn baseline_defaults(p: usize) -> Self {
        Self {
            eta: 1.0,
            ..Self::losaw_defaults(p)
        }
    }

    fn validate(&self, p: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidConfig("n_trees must be positive".into()));
        }
        if self.min_leaf == 0 {
            return Err(Error::InvalidConfig("min_leaf must be positive".into()));
        }
        if self.m_try == 0 || self.m_try > p {
            return Err(Error::InvalidConfig(format!(
                "m_try must be in [1, {p}], got {}",
                self.m_try
            )));
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
        if !(0.0..1.0).contains(&self.corr_threshold) {
            return Err(Error::InvalidConfig(format!(
                "corr_threshold must be in [0, 1), got {}",
                self.corr_threshold
            )));
        }
        Ok(())
    }

    fn ess(&self) -> EssConfig {
        EssConfig::new(self.eta, self.alpha).expect("validated")
    }
}

/// The split stored at an inner node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitDecision {
    pub feature: usize,
    pub value: f64,
    pub delta_rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        prediction: f64,
    },
    Split {
        feature: usize,
        value: f64,
        delta_rel: f64,
        /// Unweighted response variance of the node sample.
        mse: f64,
        /// Node sample size.
        n: usize,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn predict_row(&self, row: ndarray::ArrayView1<'_, f64>) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { prediction } => return *prediction,
                Node::Split {
                    feature,
                    value,
                    left,
                    right,
                    ..
                } => {
                    idx = if row[*feature] <= *value { *left } else { *right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    config: ForestConfig,
    kinds: Vec<FeatureKind>,
    trees: Vec<Tree>,
}

/// Per-node, per-feature sample weights used by split selection.
pub trait WeightSource: Sync {
    fn node_weights(&self, data: &Dataset, rows: &[usize], feature: usize)
        -> Result<SampleWeights>;
}

/// Uniform weights: the standard regression forest.
pub struct UniformWeightSource;

impl WeightSource for UniformWeightSource {
    fn node_weights(&self, _: &Dataset, rows: &[usize], _: usize) -> Result<SampleWeights> {
        Ok(SampleWeights::uniform(rows.len()))
    }
}

/// Losaw weights: a propensity model per candidate feature refitted on
/// every node sample, inverted and tempered to the ESS floor. Adjustment
/// sets are fixed once from a preliminary uniform-weight forest.
pub struct LosawWeightSource {
    adjustment_sets: Vec<AdjustmentSet>,
    full_stats: Vec<FullSampleStats>,
    ess: EssConfig,
}

impl LosawWeightSource {
    /// Build from the full training sample: fit a preliminary baseline
    /// forest, rank features by its importance, and keep for each target
    /// the strongest correlated adjusters.
    pub fn from_training(data: &Dataset, cfg: &ForestConfig, seed: u64) -> Result<Self> {
        let prelim_cfg = ForestConfig {
            eta: 1.0,
            ..cfg.clone()
        };
        let prelim = fit_forest_with_source(data, &prelim_cfg, seed, &UniformWeightSource)?;
        let initial_fi = match prelim.mdi_importance() {
            Ok(fi) => fi,
            // an all-stump preliminary forest carries no ranking
            Err(Error::NoSplits) => vec![0.0; data.p()],
            Err(e) => return Err(e),
        };
        Ok(Self::from_initial_importance(data, cfg, &initial_fi))
    }

    /// Build with an externally supplied preliminary importance ranking.
    pub fn from_initial_importance(data: &Dataset, cfg: &ForestConfig, initial_fi: &[f64]) -> Self {
        let adjustment_sets = (0..data.p())
            .map(|f| {
                select_adjustment_features(data, f, initial_fi, cfg.q_max, cfg.corr_threshold)
            })
            .collect();
        let full_stats = (0..data.p()).map(|f| full_sample_stats(data, f)).collect();
        Self {
            adjustment_sets,
            full_stats,
            ess: cfg.ess(),
        }
    }

    pub fn adjustment_set(&self, feature: usize) -> &AdjustmentSet {
        &self.adjustment_sets[feature]
    }
}

impl WeightSource for LosawWeightSource {
    fn node_weights(
        &self,
        data: &Dataset,
        rows: &[usize],
        feature: usize,
    ) -> Result<SampleWeights> {
        let adj = &self.adjustment_sets[feature];
        let model = match data.kind(feature) {
            FeatureKind::Discrete { .. } => fit_discrete_propensity(data, rows, adj)?,
            FeatureKind::Continuous => {
                fit_continuous_propensity(data, rows, adj, self.full_stats[feature])?
            }
        };
        let scores = stabilized_scores(&model, data, rows)?;
        match SampleWeights::from_propensities(&scores, &self.ess) {
            Ok(w) => Ok(w),
            // keep the closest iterate when the bisection runs out
            Err(Error::SearchDidNotConverge { best, .. }) => Ok(best),
            Err(e) => Err(e),
        }
    }
}

/// Pick the split maximizing the relative weighted impurity decrease over
/// the candidate features, each under its own sample weights. Ties break
/// toward the lowest feature index, then the lowest split value.
pub fn select_split(
    data: &Dataset,
    rows: &[usize],
    ys: &[f64],
    candidates: &[usize],
    source: &dyn WeightSource,
    min_leaf: usize,
) -> Result<Option<SplitDecision>> {
    let mut best: Option<SplitDecision> = None;
    let mut xs = vec![0.0; rows.len()];
    for &feature in candidates {
        let w = source.node_weights(data, rows, feature)?;
        for (x, &row) in xs.iter_mut().zip(rows) {
            *x = data.value(row, feature);
        }
        let cand = match data.kind(feature) {
            FeatureKind::Continuous => best_split_continuous(&xs, ys, w.values(), min_leaf),
            FeatureKind::Discrete { levels } => {
                best_split_discrete(&xs, ys, w.values(), levels, min_leaf)
            }
        };
        if let Some(c) = cand {
            if best.as_ref().is_none_or(|b| c.delta_rel > b.delta_rel) {
                best = Some(SplitDecision {
                    feature,
                    value: c.value,
                    delta_rel: c.delta_rel,
                });
            }
        }
    }
    Ok(best)
}

fn mean_and_variance(ys: &[f64]) -> (f64, f64) {
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let var = ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
    (mean, var)
}

/// `m` distinct feature indices drawn uniformly, returned ascending.
fn sample_features(p: usize, m: usize, rng: &mut impl rand::Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p).collect();
    for i in 0..m {
        let j = rng.random_range(i..p);
        idx.swap(i, j);
    }
    idx.truncate(m);
    idx.sort_unstable();
    idx
}

struct GrowContext<'a> {
    data: &'a Dataset,
    cfg: &'a ForestConfig,
    source: &'a dyn WeightSource,
}

fn grow_node(
    ctx: &GrowContext<'_>,
    rows: Vec<usize>,
    depth: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
    nodes: &mut Vec<Node>,
) -> Result<usize> {
    let ys: Vec<f64> = rows.iter().map(|&i| ctx.data.responses()[i]).collect();
    let (mean, var) = mean_and_variance(&ys);

    let splittable =
        depth < ctx.cfg.max_depth && rows.len() >= 2 * ctx.cfg.min_leaf && var > 0.0;
    let decision = if splittable {
        let candidates = sample_features(ctx.data.p(), ctx.cfg.m_try, rng);
        select_split(ctx.data, &rows, &ys, &candidates, ctx.source, ctx.cfg.min_leaf)?
    } else {
        None
    };

    let Some(decision) = decision else {
        nodes.push(Node::Leaf { prediction: mean });
        return Ok(nodes.len() - 1);
    };

    let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
        .iter()
        .partition(|&&i| ctx.data.value(i, decision.feature) <= decision.value);
    debug_assert!(left_rows.len() >= ctx.cfg.min_leaf && right_rows.len() >= ctx.cfg.min_leaf);

    let slot = nodes.len();
    nodes.push(Node::Leaf { prediction: mean }); // placeholder
    let n = rows.len();
    let left = grow_node(ctx, left_rows, depth + 1, rng, nodes)?;
    let right = grow_node(ctx, right_rows, depth + 1, rng, nodes)?;
    nodes[slot] = Node::Split {
        feature: decision.feature,
        value: decision.value,
        delta_rel: decision.delta_rel,
        mse: var,
        n,
        left,
        right,
    };
    Ok(slot)
}

/// Grow a single tree on the given (bootstrap) rows.
pub fn grow_tree(
    data: &Dataset,
    rows: Vec<usize>,
    cfg: &ForestConfig,
    source: &dyn WeightSource,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Tree> {
    let mut nodes = Vec::new();
    let root = grow_node(&GrowContext { data, cfg, source }, rows, 0, rng, &mut nodes)?;
    debug_assert_eq!(root, 0);
    Ok(Tree { nodes })
}

/// Fit a forest with an explicit weight source. Trees train on
/// independent bootstrap resamples of the full sample size, in parallel,
/// each from its own derived seed.
pub fn fit_forest_with_source(
    data: &Dataset,
    cfg: &ForestConfig,
    seed: u64,
    source: &dyn WeightSource,
) -> Result<Forest> {
    cfg.validate(data.p())?;
    if data.n() < 2 {
        return Err(Error::InvalidConfig(
            "need at least two training rows".into(),
        ));
    }
    let tree_seeds: Vec<u64> = (0..cfg.n_trees)
        .map(|t| rng::substream_seed(seed, "tree", t as u64))
        .collect();
    let trees: Result<Vec<Tree>> = tree_seeds
        .par_iter()
        .map(|&tree_seed| {
            let mut rng = rng::from_seed(tree_seed);
            let n = data.n();
            let bootstrap: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            grow_tree(data, bootstrap, cfg, source, &mut rng)
        })
        .collect();
    Ok(Forest {
        config: cfg.clone(),
        kinds: data.kinds().to_vec(),
        trees: trees?,
    })
}

/// Fit a forest. With `eta < 1` the losaw weighting machinery is set up
/// from a preliminary baseline forest first; with `eta = 1` the forest is
/// the plain uniform-weight baseline.
pub fn fit_forest(data: &Dataset, cfg: &ForestConfig, seed: u64) -> Result<Forest> {
    cfg.validate(data.p())?;
    if cfg.eta == 1.0 {
        fit_forest_with_source(data, cfg, seed, &UniformWeightSource)
    } else {
        let source =
            LosawWeightSource::from_training(data, cfg, rng::substream_seed(seed, "prelim", 0))?;
        fit_forest_with_source(data, cfg, seed, &source)
    }
}

const FOREST_SCHEMA: &str = "losaw-forest-v1";

#[derive(Serialize, Deserialize)]
struct ForestDocument {
    schema: String,
    config: ForestConfig,
    kinds: Vec<FeatureKind>,
    trees: Vec<Tree>,
}

impl Forest {
    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn n_features(&self) -> usize {
        self.kinds.len()
    }

    /// Ensemble mean of the per-tree leaf predictions.
    pub fn predict_row(&self, row: ndarray::ArrayView1<'_, f64>) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_row(row)).sum();
        sum / self.trees.len() as f64
    }

    pub fn predict(&self, data: &Dataset) -> Vec<f64> {
        (0..data.n()).map(|i| self.predict_row(data.row(i))).collect()
    }

    /// Modified MDI: per tree, each split contributes
    /// `delta_rel * mse * n` to its feature; tree scores are standardized
    /// to sum one and averaged over all trees. Trees without any split
    /// contribute a zero vector; errors when no tree split at all.
    pub fn mdi_importance(&self) -> Result<Vec<f64>> {
        let p = self.n_features();
        let mut total = vec![0.0; p];
        let mut any = false;
        let mut fi = vec![0.0; p];
        for tree in &self.trees {
            fi.iter_mut().for_each(|v| *v = 0.0);
            let mut sum = 0.0;
            for node in &tree.nodes {
                if let Node::Split {
                    feature,
                    delta_rel,
                    mse,
                    n,
                    ..
                } = node
                {
                    let c = delta_rel * mse * (*n as f64);
                    fi[*feature] += c;
                    sum += c;
                }
            }
            if sum > 0.0 {
                any = true;
                for (t, f) in total.iter_mut().zip(&fi) {
                    *t += f / sum;
                }
            }
        }
        if !any {
            return Err(Error::NoSplits);
        }
        let n_trees = self.trees.len() as f64;
        Ok(total.into_iter().map(|t| t / n_trees).collect())
    }

    /// Versioned JSON document with the configuration echoed.
    pub fn to_json(&self) -> Result<String> {
        let doc = ForestDocument {
            schema: FOREST_SCHEMA.into(),
            config: self.config.clone(),
            kinds: self.kinds.clone(),
            trees: self.trees.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let doc: ForestDocument = serde_json::from_str(json)?;
        if doc.schema != FOREST_SCHEMA {
            return Err(Error::SchemaMismatch(format!(
                "unexpected forest schema {}",
                doc.schema
            )));
        }
        Ok(Self {
            config: doc.config,
            kinds: doc.kinds,
            trees: doc.trees,
        })
    }
}
