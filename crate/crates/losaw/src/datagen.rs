//! Synthetic benchmark data: correlated Gaussian features, discrete joint
//! distributions fitted to a target correlation matrix by a constrained
//! quadratic program, block-diagonal random correlation structures, the
//! benchmark regression functions, noise scaling, and exact
//! finite-distribution oracles for stabilized propensities and marginal
//! association/effect functions.

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::FeatureKind;
use crate::error::{Error, Result};
use crate::qp::{self, AffineProjector, PgConfig};

/// Product grids larger than this are rejected; the probability entries
/// decay too fast for the solver to stay numerically healthy beyond it.
pub const MAX_GRID_ATOMS: usize = 729;

/// Strength of the pull toward the product measure when fitting joint
/// distributions; small enough to keep the correlation fit tight.
const JOINT_ANCHOR_STRENGTH: f64 = 1e-2;

/// Mixture weight of the product measure blended into fitted joints used
/// for sampling. The plain correlation fit can land on a sparse face of
/// the probability polytope; zero atoms would make the weighted
/// pseudo-population a support-restricted product that stays correlated,
/// defeating the downstream decorrelation. Blending keeps the marginals
/// exact and shrinks every correlation by the mixture weight.
pub const SUPPORT_SMOOTHING: f64 = 0.05;

/// A symmetric correlation matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSpec {
    matrix: Array2<f64>,
}

impl CorrelationSpec {
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        let p = matrix.nrows();
        if matrix.ncols() != p {
            return Err(Error::InvalidConfig("correlation matrix must be square".into()));
        }
        for i in 0..p {
            if (matrix[[i, i]] - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidConfig("correlation diagonal must be one".into()));
            }
            for j in 0..i {
                if (matrix[[i, j]] - matrix[[j, i]]).abs() > 1e-12 {
                    return Err(Error::InvalidConfig("correlation matrix must be symmetric".into()));
                }
            }
        }
        Ok(Self { matrix })
    }

    pub fn identity(p: usize) -> Self {
        Self {
            matrix: Array2::eye(p),
        }
    }

    /// Heterogeneous benchmark matrix: entry `a` between the first two
    /// features, 0.8 between every other pair.
    pub fn heterogeneous(p: usize, a: f64) -> Self {
        let mut m = Array2::eye(p);
        for i in 0..p {
            for j in 0..p {
                if i != j {
                    m[[i, j]] = if (i, j) == (0, 1) || (i, j) == (1, 0) {
                        a
                    } else {
                        0.8
                    };
                }
            }
        }
        Self { matrix: m }
    }

    /// The six correlated benchmark features: a heterogeneous block
    /// (0.4/0.8), a homogeneous 0.9 block, 0.2 between the blocks.
    pub fn six_block() -> Array2<f64> {
        let mut m = Array2::eye(6);
        let b1 = [[1.0, 0.4, 0.8], [0.4, 1.0, 0.8], [0.8, 0.8, 1.0]];
        let b2 = [[1.0, 0.9, 0.9], [0.9, 1.0, 0.9], [0.9, 0.9, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                m[[i, j]] = b1[i][j];
                m[[i + 3, j + 3]] = b2[i][j];
                m[[i, j + 3]] = 0.2;
                m[[i + 3, j]] = 0.2;
            }
        }
        m
    }

    /// Benchmark layout for the forest study: the six-feature block in the
    /// leading corner, all remaining features independent.
    pub fn forest_study(p: usize) -> Result<Self> {
        if p < 6 {
            return Err(Error::InvalidConfig(format!(
                "forest-study correlation needs at least 6 features, got {p}"
            )));
        }
        let mut m = Array2::eye(p);
        let block = Self::six_block();
        for i in 0..6 {
            for j in 0..6 {
                m[[i, j]] = block[[i, j]];
            }
        }
        Ok(Self { matrix: m })
    }

    pub fn p(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn is_positive_definite(&self) -> bool {
        crate::linalg::cholesky(&self.matrix).is_some()
    }
}

/// Draw `n` rows from `N(0, spec)` via the Cholesky factor.
pub fn sample_mvn(spec: &CorrelationSpec, n: usize, rng: &mut impl Rng) -> Result<Array2<f64>> {
    let l = crate::linalg::cholesky(spec.matrix()).ok_or(Error::NotPositiveDefinite)?;
    let p = spec.p();
    let mut out = Array2::zeros((n, p));
    let mut z = vec![0.0; p];
    for i in 0..n {
        for zj in &mut z {
            *zj = rng.sample(StandardNormal);
        }
        for j in 0..p {
            let mut acc = 0.0;
            for k in 0..=j {
                acc += l[[j, k]] * z[k];
            }
            out[[i, j]] = acc;
        }
    }
    Ok(out)
}

/// Marginal distribution of one discrete feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMarginal {
    pub levels: Vec<f64>,
    pub probs: Vec<f64>,
}

impl DiscreteMarginal {
    /// Centered binomial with two trials and success rate one half:
    /// values -1, 0, 1 with probabilities 0.25, 0.5, 0.25.
    pub fn centered_binomial() -> Self {
        Self {
            levels: vec![-1.0, 0.0, 1.0],
            probs: vec![0.25, 0.5, 0.25],
        }
    }

    pub fn mean(&self) -> f64 {
        self.levels
            .iter()
            .zip(&self.probs)
            .map(|(&l, &p)| l * p)
            .sum()
    }

    pub fn sd(&self) -> f64 {
        let m = self.mean();
        self.levels
            .iter()
            .zip(&self.probs)
            .map(|(&l, &p)| p * (l - m) * (l - m))
            .sum::<f64>()
            .sqrt()
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (&l, &p) in self.levels.iter().zip(&self.probs) {
            acc += p;
            if u < acc {
                return l;
            }
        }
        *self.levels.last().unwrap()
    }
}

/// A probability vector over the product grid of finitely many discrete
/// features, atom index running fastest over the last feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDistribution {
    levels: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

impl JointDistribution {
    pub fn from_table(levels: Vec<Vec<f64>>, probs: Vec<f64>) -> Result<Self> {
        let atoms: usize = levels.iter().map(|l| l.len()).product();
        if atoms > MAX_GRID_ATOMS {
            return Err(Error::GridTooLarge(atoms, MAX_GRID_ATOMS));
        }
        if probs.len() != atoms {
            return Err(Error::InvalidConfig(format!(
                "{} probabilities for {atoms} atoms",
                probs.len()
            )));
        }
        if probs.iter().any(|&p| p < -1e-12) {
            return Err(Error::InvalidConfig("negative probability".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("probabilities sum to {sum}")));
        }
        Ok(Self { levels, probs })
    }

    pub fn n_features(&self) -> usize {
        self.levels.len()
    }

    pub fn n_atoms(&self) -> usize {
        self.probs.len()
    }

    pub fn levels(&self, feature: usize) -> &[f64] {
        &self.levels[feature]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Level indices of atom `idx`, one per feature.
    pub fn atom_indices(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.levels.len()];
        for f in (0..self.levels.len()).rev() {
            let k = self.levels[f].len();
            out[f] = idx % k;
            idx /= k;
        }
        out
    }

    /// Feature values of atom `idx`.
    pub fn atom_values(&self, idx: usize) -> Vec<f64> {
        self.atom_indices(idx)
            .iter()
            .enumerate()
            .map(|(f, &i)| self.levels[f][i])
            .collect()
    }

    pub fn atom_index(&self, indices: &[usize]) -> usize {
        let mut idx = 0;
        for (f, &i) in indices.iter().enumerate() {
            idx = idx * self.levels[f].len() + i;
        }
        idx
    }

    /// Marginal probabilities of one feature over its levels.
    pub fn marginal(&self, feature: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.levels[feature].len()];
        for (idx, &p) in self.probs.iter().enumerate() {
            out[self.atom_indices(idx)[feature]] += p;
        }
        out
    }

    /// Correlation matrix implied by the probability vector.
    pub fn correlation(&self) -> Array2<f64> {
        let g = self.n_features();
        let mut mean = vec![0.0; g];
        for (idx, &p) in self.probs.iter().enumerate() {
            let vals = self.atom_values(idx);
            for f in 0..g {
                mean[f] += p * vals[f];
            }
        }
        let mut cov = Array2::<f64>::zeros((g, g));
        for (idx, &p) in self.probs.iter().enumerate() {
            let vals = self.atom_values(idx);
            for a in 0..g {
                for b in a..g {
                    cov[[a, b]] += p * (vals[a] - mean[a]) * (vals[b] - mean[b]);
                }
            }
        }
        let sd: Vec<f64> = (0..g).map(|f| cov[[f, f]].sqrt()).collect();
        let mut corr = Array2::eye(g);
        for a in 0..g {
            for b in (a + 1)..g {
                let c = if sd[a] > 0.0 && sd[b] > 0.0 {
                    cov[[a, b]] / (sd[a] * sd[b])
                } else {
                    0.0
                };
                corr[[a, b]] = c;
                corr[[b, a]] = c;
            }
        }
        corr
    }

    /// Product measure of the given marginals on their grid.
    pub fn product_of(marginals: &[DiscreteMarginal]) -> Result<Self> {
        let levels: Vec<Vec<f64>> = marginals.iter().map(|m| m.levels.clone()).collect();
        let atoms: usize = levels.iter().map(|l| l.len()).product();
        if atoms > MAX_GRID_ATOMS {
            return Err(Error::GridTooLarge(atoms, MAX_GRID_ATOMS));
        }
        let tmp = Self {
            levels,
            probs: vec![0.0; atoms],
        };
        let probs = (0..atoms)
            .map(|idx| {
                tmp.atom_indices(idx)
                    .iter()
                    .enumerate()
                    .map(|(f, &i)| marginals[f].probs[i])
                    .product()
            })
            .collect();
        Ok(Self {
            levels: tmp.levels,
            probs,
        })
    }

    fn sample_atom(&self, cumulative: &[f64], rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        cumulative.partition_point(|&c| c <= u).min(self.n_atoms() - 1)
    }

    fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.probs
            .iter()
            .map(|&p| {
                acc += p;
                acc
            })
            .collect()
    }
}

/// Fit the joint distribution on the product grid of `marginals` whose
/// correlation matrix is closest in Euclidean distance to `target`,
/// subject to the marginals, normalization and nonnegativity.
pub fn solve_discrete_joint(
    target: &CorrelationSpec,
    marginals: &[DiscreteMarginal],
) -> Result<JointDistribution> {
    let g = marginals.len();
    if target.p() != g {
        return Err(Error::InvalidConfig(format!(
            "target correlation is {}x{} for {g} marginals",
            target.p(),
            target.p()
        )));
    }
    let product = JointDistribution::product_of(marginals)?;
    let atoms = product.n_atoms();

    // objective rows: one per feature pair, standardized cross moments
    let means: Vec<f64> = marginals.iter().map(|m| m.mean()).collect();
    let sds: Vec<f64> = marginals.iter().map(|m| m.sd()).collect();
    let mut a_rows = Vec::new();
    let mut s = Vec::new();
    for p in 0..g {
        for q in (p + 1)..g {
            let mut row = vec![0.0; atoms];
            for (idx, r) in row.iter_mut().enumerate() {
                let vals = product.atom_values(idx);
                *r = (vals[p] - means[p]) * (vals[q] - means[q]) / (sds[p] * sds[q]);
            }
            a_rows.push(row);
            s.push(target.matrix()[[p, q]]);
        }
    }

    // affine constraints: every marginal level probability plus the total
    let mut c_rows = Vec::new();
    let mut rhs = Vec::new();
    for (f, m) in marginals.iter().enumerate() {
        for (li, &lp) in m.probs.iter().enumerate() {
            let mut row = vec![0.0; atoms];
            for (idx, r) in row.iter_mut().enumerate() {
                if product.atom_indices(idx)[f] == li {
                    *r = 1.0;
                }
            }
            c_rows.push(row);
            rhs.push(lp);
        }
    }
    c_rows.push(vec![1.0; atoms]);
    rhs.push(1.0);
    let constraints = AffineProjector::new(c_rows, rhs);

    // anchor toward the product measure: the correlation fit alone can
    // have a face of minimizers and the sparse ones concentrate on few
    // atoms, which starves the weighted pseudo-populations of support
    let cfg = PgConfig {
        anchor: Some((JOINT_ANCHOR_STRENGTH, product.probs().to_vec())),
        ..PgConfig::default()
    };
    let solution = qp::solve(&a_rows, &s, &constraints, product.probs().to_vec(), &cfg)?;
    JointDistribution::from_table(
        marginals.iter().map(|m| m.levels.clone()).collect(),
        solution.x,
    )
}

/// Joint distribution for the sampling studies: the fitted joint blended
/// with [`SUPPORT_SMOOTHING`] of the product measure, so that every atom
/// carries positive mass and inverse-propensity weighting can reach the
/// full product pseudo-population.
pub fn solve_study_joint(
    target: &CorrelationSpec,
    marginals: &[DiscreteMarginal],
) -> Result<JointDistribution> {
    let fitted = solve_discrete_joint(target, marginals)?;
    let product = JointDistribution::product_of(marginals)?;
    let probs = fitted
        .probs()
        .iter()
        .zip(product.probs())
        .map(|(&q, &p)| (1.0 - SUPPORT_SMOOTHING) * q + SUPPORT_SMOOTHING * p)
        .collect();
    JointDistribution::from_table(marginals.iter().map(|m| m.levels.clone()).collect(), probs)
}

/// How the random correlation block for the gradient-descent study is
/// assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum GdSigmaMode {
    /// Standardized random Gram matrix with the designated entries
    /// overwritten: (1,2) and (1,4) get the high value, (2,4) the low one.
    #[default]
    RandomBase,
    /// The printed template: high value at (1,2) and (1,4), the low value
    /// everywhere else off the diagonal.
    Template,
}

const GD_BLOCK: usize = 5;
const GD_PD_RETRIES: usize = 1000;

/// One random 5x5 correlation block with high correlation `alpha` drawn
/// from (0.7, 1) at entries (1,2) and (1,4) and low correlation `beta`
/// from (0, 0.4), resampled until positive definite.
pub fn gd_block_sigma(rng: &mut impl Rng, mode: GdSigmaMode) -> Result<Array2<f64>> {
    for _ in 0..GD_PD_RETRIES {
        let alpha = rng.random_range(0.7..1.0);
        let beta = rng.random_range(0.0..0.4);
        let mut m = match mode {
            GdSigmaMode::RandomBase => {
                let mut a = Array2::<f64>::zeros((GD_BLOCK, GD_BLOCK));
                for v in a.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                let gram = a.dot(&a.t());
                let mut c = Array2::<f64>::eye(GD_BLOCK);
                for i in 0..GD_BLOCK {
                    for j in 0..GD_BLOCK {
                        c[[i, j]] = gram[[i, j]] / (gram[[i, i]] * gram[[j, j]]).sqrt();
                    }
                }
                c
            }
            GdSigmaMode::Template => {
                let mut c = Array2::<f64>::from_elem((GD_BLOCK, GD_BLOCK), beta);
                for i in 0..GD_BLOCK {
                    c[[i, i]] = 1.0;
                }
                c
            }
        };
        m[[0, 1]] = alpha;
        m[[1, 0]] = alpha;
        m[[0, 3]] = alpha;
        m[[3, 0]] = alpha;
        if mode == GdSigmaMode::RandomBase {
            m[[1, 3]] = beta;
            m[[3, 1]] = beta;
        }
        if crate::linalg::cholesky(&m).is_some() {
            return Ok(m);
        }
    }
    Err(Error::PdRetriesExhausted(GD_PD_RETRIES))
}

/// Block-diagonal correlation matrix built by repeating one block.
pub fn block_diagonal(block: &Array2<f64>, blocks: usize) -> Result<CorrelationSpec> {
    let b = block.nrows();
    let p = b * blocks;
    let mut m = Array2::eye(p);
    for blk in 0..blocks {
        for i in 0..b {
            for j in 0..b {
                m[[blk * b + i, blk * b + j]] = block[[i, j]];
            }
        }
    }
    CorrelationSpec::new(m)
}

/// Random block-diagonal correlation matrix for the gradient-descent
/// study: one 5x5 block, repeated. `p` must be a multiple of five.
pub fn build_gd_sigma(p: usize, rng: &mut impl Rng, mode: GdSigmaMode) -> Result<CorrelationSpec> {
    if p == 0 || p % GD_BLOCK != 0 {
        return Err(Error::InvalidConfig(format!(
            "feature count {p} is not a multiple of {GD_BLOCK}"
        )));
    }
    let block = gd_block_sigma(rng, mode)?;
    block_diagonal(&block, p / GD_BLOCK)
}

/// The benchmark regression functions. Models 1-7 act on the first four
/// features; models 8-10 act on a signal set spread over the 5-feature
/// blocks of the gradient-descent study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSpec {
    model: u8,
    signal: Vec<usize>,
    /// Interaction groups for model 10; empty otherwise.
    groups: Vec<Vec<usize>>,
}

impl RegressionSpec {
    pub fn new(model: u8, p: usize) -> Result<Self> {
        let (signal, groups): (Vec<usize>, Vec<Vec<usize>>) = match model {
            1..=7 => {
                if p < 4 {
                    return Err(Error::InvalidConfig(format!(
                        "model {model} needs at least 4 features, got {p}"
                    )));
                }
                let signal = match model {
                    1 => vec![3],
                    2 => vec![0, 3],
                    3 | 5 => vec![0, 1],
                    4 | 7 => vec![0, 1, 3],
                    6 => vec![0, 3],
                    _ => unreachable!(),
                };
                (signal, Vec::new())
            }
            8..=10 => {
                // the pattern uses three blocks: a (1,3) pair, a (1,4)
                // pair and a (1,2,3) triple in consecutive 5-blocks
                if p < 15 {
                    return Err(Error::InvalidConfig(format!(
                        "model {model} needs at least 15 features, got {p}"
                    )));
                }
                let groups = vec![vec![0, 2], vec![5, 8], vec![10, 11, 12]];
                let signal = groups.concat();
                (signal, if model == 10 { groups } else { Vec::new() })
            }
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "unknown regression model {model}"
                )))
            }
        };
        Ok(Self {
            model,
            signal,
            groups,
        })
    }

    pub fn model(&self) -> u8 {
        self.model
    }

    pub fn signal(&self) -> &[usize] {
        &self.signal
    }

    pub fn eval(&self, x: ArrayView1<'_, f64>) -> f64 {
        let ind = |v: f64| if v >= 0.0 { 1.0 } else { 0.0 };
        let ind1 = |v: f64| if v >= 1.0 { 1.0 } else { 0.0 };
        match self.model {
            1 => x[3],
            2 => x[0] + x[3],
            3 => x[0] + x[1],
            4 => x[0] + x[1] + x[3],
            5 => ind(x[0]) * ind(x[1]),
            6 => ind(x[0]) * ind(x[3]),
            7 => ind(x[0]) * ind(x[1]) + ind(x[3]),
            8 => self.signal.iter().map(|&s| x[s]).sum(),
            9 => self.signal.iter().map(|&s| ind1(x[s])).sum(),
            10 => self
                .groups
                .iter()
                .map(|g| g.iter().map(|&s| ind1(x[s])).product::<f64>())
                .sum(),
            _ => unreachable!(),
        }
    }

    /// Evaluate on a plain slice; used by the finite-grid oracles.
    pub fn eval_slice(&self, x: &[f64]) -> f64 {
        self.eval(ArrayView1::from(x))
    }
}

/// Feature generators used across the simulation studies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum FeatureGenerator {
    /// Centered multivariate normal with a correlation matrix.
    Gaussian { spec: CorrelationSpec },
    /// Leading features from a discrete joint distribution, remaining
    /// features independent centered binomials.
    DiscreteJoint {
        joint: JointDistribution,
        total_p: usize,
    },
    /// Independent centered binomials for every feature.
    DiscreteIid { p: usize },
    /// Independent copies of one discrete block, concatenated.
    DiscreteBlocks {
        block: JointDistribution,
        blocks: usize,
    },
}

impl FeatureGenerator {
    pub fn p(&self) -> usize {
        match self {
            Self::Gaussian { spec } => spec.p(),
            Self::DiscreteJoint { total_p, .. } => *total_p,
            Self::DiscreteIid { p } => *p,
            Self::DiscreteBlocks { block, blocks } => block.n_features() * blocks,
        }
    }

    pub fn kinds(&self) -> Vec<FeatureKind> {
        match self {
            Self::Gaussian { spec } => vec![FeatureKind::Continuous; spec.p()],
            Self::DiscreteJoint { joint, total_p } => {
                let binom = DiscreteMarginal::centered_binomial();
                (0..*total_p)
                    .map(|f| {
                        let levels = if f < joint.n_features() {
                            joint.levels(f).to_vec()
                        } else {
                            binom.levels.clone()
                        };
                        FeatureKind::Discrete { levels }
                    })
                    .collect()
            }
            Self::DiscreteIid { p } => {
                let binom = DiscreteMarginal::centered_binomial();
                vec![
                    FeatureKind::Discrete {
                        levels: binom.levels.clone()
                    };
                    *p
                ]
            }
            Self::DiscreteBlocks { block, blocks } => {
                let mut kinds = Vec::with_capacity(self.p());
                for _ in 0..*blocks {
                    for f in 0..block.n_features() {
                        kinds.push(FeatureKind::Discrete {
                            levels: block.levels(f).to_vec(),
                        });
                    }
                }
                kinds
            }
        }
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<Array2<f64>> {
        match self {
            Self::Gaussian { spec } => sample_mvn(spec, n, rng),
            Self::DiscreteJoint { joint, total_p } => {
                let g = joint.n_features();
                let binom = DiscreteMarginal::centered_binomial();
                let cumulative = joint.cumulative();
                let mut out = Array2::zeros((n, *total_p));
                for i in 0..n {
                    let atom = joint.sample_atom(&cumulative, rng);
                    for (f, v) in joint.atom_values(atom).into_iter().enumerate() {
                        out[[i, f]] = v;
                    }
                    for f in g..*total_p {
                        out[[i, f]] = binom.sample(rng);
                    }
                }
                Ok(out)
            }
            Self::DiscreteIid { p } => {
                let binom = DiscreteMarginal::centered_binomial();
                let mut out = Array2::zeros((n, *p));
                for i in 0..n {
                    for f in 0..*p {
                        out[[i, f]] = binom.sample(rng);
                    }
                }
                Ok(out)
            }
            Self::DiscreteBlocks { block, blocks } => {
                let b = block.n_features();
                let cumulative = block.cumulative();
                let mut out = Array2::zeros((n, b * blocks));
                for i in 0..n {
                    for blk in 0..*blocks {
                        let atom = block.sample_atom(&cumulative, rng);
                        for (f, v) in block.atom_values(atom).into_iter().enumerate() {
                            out[[i, blk * b + f]] = v;
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    /// The same marginals with all features independent.
    pub fn independent(&self) -> FeatureGenerator {
        match self {
            Self::Gaussian { spec } => Self::Gaussian {
                spec: CorrelationSpec::identity(spec.p()),
            },
            Self::DiscreteJoint { total_p, .. } => Self::DiscreteIid { p: *total_p },
            Self::DiscreteIid { p } => Self::DiscreteIid { p: *p },
            Self::DiscreteBlocks { .. } => Self::DiscreteIid { p: self.p() },
        }
    }
}

/// Signal variance of `f(X)` estimated on a fresh sample of 10,000 rows,
/// the reference size for calibrating the noise level.
pub fn estimate_signal_variance(
    generator: &FeatureGenerator,
    spec: &RegressionSpec,
    rng: &mut impl Rng,
) -> Result<f64> {
    let n = 10_000;
    let x = generator.sample(n, rng)?;
    let vals: Vec<f64> = (0..n).map(|i| spec.eval(x.row(i))).collect();
    let mean = vals.iter().sum::<f64>() / n as f64;
    Ok(vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64)
}

/// Add centered Gaussian noise of the given variance.
pub fn add_noise(f_values: &[f64], sigma2: f64, rng: &mut impl Rng) -> Vec<f64> {
    if sigma2 <= 0.0 {
        return f_values.to_vec();
    }
    let sd = sigma2.sqrt();
    f_values
        .iter()
        .map(|&v| v + sd * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Exact marginal association and effect tables of a regression function
/// on a finite joint distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalTables {
    pub levels: Vec<f64>,
    /// `E[f(X) | X_p = x]` under the joint; `None` on zero-probability
    /// conditioning events.
    pub association: Vec<Option<f64>>,
    /// `E[f(X) | X_p = x]` under the product of `X_p`'s marginal and the
    /// joint marginal of the remaining features.
    pub effect: Vec<Option<f64>>,
}

/// Direct-summation oracle for the marginal association and effect
/// functions of feature `p`.
pub fn marginal_functions(
    joint: &JointDistribution,
    f: impl Fn(&[f64]) -> f64,
    p: usize,
) -> MarginalTables {
    let k = joint.levels(p).len();
    let mut ass_num = vec![0.0; k];
    let mut ass_den = vec![0.0; k];
    let mut eff = vec![0.0; k];
    for (idx, &prob) in joint.probs().iter().enumerate() {
        let indices = joint.atom_indices(idx);
        let mut vals = joint.atom_values(idx);
        let li = indices[p];
        ass_num[li] += prob * f(&vals);
        ass_den[li] += prob;
        // accumulate the rest-marginal mass of this atom onto every level
        // of feature p: E under the product measure
        for (lj, &level) in joint.levels(p).iter().enumerate() {
            vals[p] = level;
            eff[lj] += prob * f(&vals);
        }
    }
    let marginal = joint.marginal(p);
    let association = (0..k)
        .map(|li| (ass_den[li] > 0.0).then(|| ass_num[li] / ass_den[li]))
        .collect();
    let effect = (0..k)
        .map(|li| (marginal[li] > 0.0).then_some(eff[li]))
        .collect();
    MarginalTables {
        levels: joint.levels(p).to_vec(),
        association,
        effect,
    }
}

/// Population stabilized propensity of every atom for feature `p`:
/// conditional probability of the atom's level given the remaining
/// features over its marginal probability. `None` off the support.
pub fn population_stabilized_propensity(joint: &JointDistribution, p: usize) -> Vec<Option<f64>> {
    let marginal = joint.marginal(p);
    let rest = rest_marginals(joint, p);
    joint
        .probs()
        .iter()
        .enumerate()
        .map(|(idx, &prob)| {
            if prob <= 0.0 {
                return None;
            }
            let li = joint.atom_indices(idx)[p];
            let conditional = prob / rest[idx];
            Some(conditional / marginal[li])
        })
        .collect()
}

/// Population losaw weights per atom: inverse stabilized propensity on
/// the support, zero elsewhere.
pub fn population_losaw_weights(joint: &JointDistribution, p: usize) -> Vec<f64> {
    population_stabilized_propensity(joint, p)
        .into_iter()
        .map(|s| s.map_or(0.0, |v| 1.0 / v))
        .collect()
}

/// Distribution of the weighted pseudo-population `P(x) * w(x)` per atom.
pub fn reweighted_distribution(joint: &JointDistribution, weights: &[f64]) -> Vec<f64> {
    joint
        .probs()
        .iter()
        .zip(weights)
        .map(|(&p, &w)| p * w)
        .collect()
}

/// The product measure `P_p (x) P_{-p}` evaluated per atom of the grid.
pub fn product_distribution(joint: &JointDistribution, p: usize) -> Vec<f64> {
    let marginal = joint.marginal(p);
    let rest = rest_marginals(joint, p);
    (0..joint.n_atoms())
        .map(|idx| marginal[joint.atom_indices(idx)[p]] * rest[idx])
        .collect()
}

/// For each atom, the joint marginal probability of all features except
/// `p` at that atom's remaining coordinates.
fn rest_marginals(joint: &JointDistribution, p: usize) -> Vec<f64> {
    let mut by_rest: std::collections::HashMap<Vec<usize>, f64> = std::collections::HashMap::new();
    for (idx, &prob) in joint.probs().iter().enumerate() {
        let mut indices = joint.atom_indices(idx);
        indices.remove(p);
        *by_rest.entry(indices).or_insert(0.0) += prob;
    }
    (0..joint.n_atoms())
        .map(|idx| {
            let mut indices = joint.atom_indices(idx);
            indices.remove(p);
            by_rest[&indices]
        })
        .collect()
}

/// Is `feature` a signal feature of `f` on the grid: does changing only
/// its level ever change the function value?
pub fn is_signal_on_grid(
    joint: &JointDistribution,
    f: impl Fn(&[f64]) -> f64,
    feature: usize,
) -> bool {
    for idx in 0..joint.n_atoms() {
        let indices = joint.atom_indices(idx);
        if indices[feature] != 0 {
            continue;
        }
        let mut vals = joint.atom_values(idx);
        let base = f(&vals);
        for &level in &joint.levels(feature)[1..] {
            vals[feature] = level;
            if (f(&vals) - base).abs() > 1e-12 {
                return true;
            }
        }
    }
    false
}
