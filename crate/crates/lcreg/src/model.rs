//! Core data structures, sufficient statistics, mixing probabilities, and
//! likelihood evaluations shared by the LCA and LCR samplers.
//!
//! All likelihood arithmetic stays in the log domain via `ln_gamma`; raw
//! gamma evaluations overflow at the count scales the samplers hit.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

/// N observations by M items of categorical codes, item j taking codes
/// 1..=K_j externally (stored 0-based).
#[derive(Clone, Debug)]
pub struct CategoricalDataset {
    codes: Vec<u16>, // row-major, 0-based
    n_obs: usize,
    levels: Vec<usize>,
    offsets: Vec<usize>, // prefix sums of levels
    total_levels: usize,
}

impl CategoricalDataset {
    /// Build from rows of 1-based codes. Every entry must lie in 1..=K_j.
    pub fn from_rows(rows: &[Vec<u16>], levels: Vec<usize>) -> Result<Self> {
        let m = levels.len();
        if let Some(k) = levels.iter().find(|k| **k < 2) {
            return Err(Error::InvalidParameter(format!(
                "every item needs at least 2 categories, got {k}"
            )));
        }
        let mut codes = Vec::with_capacity(rows.len() * m);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Dimension(format!(
                    "row {} has {} items, expected {}",
                    i + 1,
                    row.len(),
                    m
                )));
            }
            for (j, &code) in row.iter().enumerate() {
                if code == 0 || code as usize > levels[j] {
                    return Err(Error::Ingestion {
                        row: i + 1,
                        column: format!("item {}", j + 1),
                        message: format!("code {} outside 1..={}", code, levels[j]),
                    });
                }
                codes.push(code - 1);
            }
        }
        let mut offsets = Vec::with_capacity(m);
        let mut total = 0usize;
        for &k in &levels {
            offsets.push(total);
            total += k;
        }
        Ok(CategoricalDataset {
            codes,
            n_obs: rows.len(),
            levels,
            offsets,
            total_levels: total,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_items(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    /// 0-based category of observation i on item j.
    #[inline]
    pub fn code(&self, i: usize, j: usize) -> usize {
        self.codes[i * self.levels.len() + j] as usize
    }

    /// Row of 0-based codes for observation i.
    #[inline]
    pub fn row(&self, i: usize) -> &[u16] {
        let m = self.levels.len();
        &self.codes[i * m..(i + 1) * m]
    }

    /// Offset of item j in flattened (item, category) layouts.
    #[inline]
    pub fn offset(&self, j: usize) -> usize {
        self.offsets[j]
    }

    pub fn total_levels(&self) -> usize {
        self.total_levels
    }
}

/// N x (P+1) design matrix with a leading intercept column.
#[derive(Clone, Debug)]
pub struct CovariateMatrix {
    design: Vec<f64>, // row-major
    n_obs: usize,
    n_predictors: usize,
}

impl CovariateMatrix {
    /// Build from predictor rows; the intercept column is prepended.
    pub fn from_predictor_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        let mut design = Vec::with_capacity(rows.len() * (p + 1));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(Error::Dimension(format!(
                    "covariate row {} has {} entries, expected {}",
                    i + 1,
                    row.len(),
                    p
                )));
            }
            if let Some(x) = row.iter().find(|x| !x.is_finite()) {
                return Err(Error::Ingestion {
                    row: i + 1,
                    column: "covariates".into(),
                    message: format!("non-finite value {x}"),
                });
            }
            design.push(1.0);
            design.extend_from_slice(row);
        }
        Ok(CovariateMatrix {
            design,
            n_obs: rows.len(),
            n_predictors: p,
        })
    }

    /// An intercept-only design for LCR fits without covariates.
    pub fn intercept_only(n_obs: usize) -> Self {
        CovariateMatrix {
            design: vec![1.0; n_obs],
            n_obs,
            n_predictors: 0,
        }
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    /// Number of predictors P (excluding the intercept).
    pub fn n_predictors(&self) -> usize {
        self.n_predictors
    }

    /// Full design row including the leading 1.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.n_predictors + 1;
        &self.design[i * w..(i + 1) * w]
    }
}

/// Prior configuration for both samplers.
///
/// `coef_mean` and `coef_variance` hold one entry per non-baseline class;
/// the baseline class carries no coefficients.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PriorConfig {
    /// Dirichlet concentration per item category (alpha_j vectors).
    pub item_concentration: Vec<Vec<f64>>,
    /// Dirichlet concentration over classes (lambda; LCA class weights).
    pub class_concentration: Vec<f64>,
    /// Gaussian prior mean per non-baseline class, length P+1.
    pub coef_mean: Vec<Vec<f64>>,
    /// Diagonal Gaussian prior variance per non-baseline class, length P+1.
    pub coef_variance: Vec<Vec<f64>>,
    /// Prior inclusion probability per item.
    pub item_inclusion_prior: Vec<f64>,
    /// Prior inclusion probability per predictor.
    pub predictor_inclusion_prior: Vec<f64>,
}

impl PriorConfig {
    /// Weakly informative defaults: unit Dirichlet concentrations,
    /// N(0, 10^2) coefficients, Bernoulli(0.5) inclusion priors.
    pub fn defaults(levels: &[usize], n_classes: usize, n_predictors: usize) -> Self {
        PriorConfig {
            item_concentration: levels.iter().map(|&k| vec![1.0; k]).collect(),
            class_concentration: vec![1.0; n_classes],
            coef_mean: vec![vec![0.0; n_predictors + 1]; n_classes.saturating_sub(1)],
            coef_variance: vec![vec![100.0; n_predictors + 1]; n_classes.saturating_sub(1)],
            item_inclusion_prior: vec![0.5; levels.len()],
            predictor_inclusion_prior: vec![0.5; n_predictors],
        }
    }

    pub fn validate(&self, levels: &[usize], n_classes: usize, n_predictors: usize) -> Result<()> {
        if self.item_concentration.len() != levels.len() {
            return Err(Error::Config(format!(
                "item_concentration has {} entries for {} items",
                self.item_concentration.len(),
                levels.len()
            )));
        }
        for (j, (a, &k)) in self.item_concentration.iter().zip(levels).enumerate() {
            if a.len() != k {
                return Err(Error::Config(format!(
                    "item {} concentration has {} entries for {} categories",
                    j + 1,
                    a.len(),
                    k
                )));
            }
            if a.iter().any(|x| !(*x > 0.0)) {
                return Err(Error::Config(format!(
                    "item {} concentration must be strictly positive",
                    j + 1
                )));
            }
        }
        if self.class_concentration.len() != n_classes
            || self.class_concentration.iter().any(|x| !(*x > 0.0))
        {
            return Err(Error::Config(
                "class_concentration must hold one positive entry per class".into(),
            ));
        }
        let expect_classes = n_classes.saturating_sub(1);
        if self.coef_mean.len() != expect_classes || self.coef_variance.len() != expect_classes {
            return Err(Error::Config(format!(
                "coefficient priors must cover {expect_classes} non-baseline classes"
            )));
        }
        for (m, v) in self.coef_mean.iter().zip(&self.coef_variance) {
            if m.len() != n_predictors + 1 || v.len() != n_predictors + 1 {
                return Err(Error::Config(format!(
                    "coefficient priors must have length P+1 = {}",
                    n_predictors + 1
                )));
            }
            if v.iter().any(|x| !(*x > 0.0)) {
                return Err(Error::Config(
                    "coefficient prior variances must be positive".into(),
                ));
            }
        }
        if self.item_inclusion_prior.len() != levels.len()
            || self
                .item_inclusion_prior
                .iter()
                .any(|p| !(*p > 0.0 && *p < 1.0))
        {
            return Err(Error::Config(
                "item inclusion priors must lie in (0, 1), one per item".into(),
            ));
        }
        if self.predictor_inclusion_prior.len() != n_predictors
            || self
                .predictor_inclusion_prior
                .iter()
                .any(|p| !(*p > 0.0 && *p < 1.0))
        {
            return Err(Error::Config(
                "predictor inclusion priors must lie in (0, 1), one per predictor".into(),
            ));
        }
        Ok(())
    }

    /// Sum of alpha_j over categories of item j.
    #[inline]
    pub fn item_concentration_total(&self, j: usize) -> f64 {
        self.item_concentration[j].iter().sum()
    }
}

/// Class-conditional item response probabilities theta (or the pooled rho
/// when `n_classes == 1`), flattened per (class, item, category).
#[derive(Clone, Debug)]
pub struct ItemProbs {
    pub n_classes: usize,
    pub levels: Vec<usize>,
    offsets: Vec<usize>,
    total_levels: usize,
    pub data: Vec<f64>, // n_classes * total_levels
}

impl ItemProbs {
    pub fn zeros(n_classes: usize, levels: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(levels.len());
        let mut total = 0usize;
        for &k in levels {
            offsets.push(total);
            total += k;
        }
        ItemProbs {
            n_classes,
            levels: levels.to_vec(),
            offsets,
            total_levels: total,
            data: vec![0.0; n_classes * total],
        }
    }

    /// Build from per-class, per-item category probability rows; rows are
    /// renormalized to absorb rounding (e.g. 0.33 triples).
    pub fn from_rows(rows: &[Vec<Vec<f64>>]) -> Result<Self> {
        let n_classes = rows.len();
        let levels: Vec<usize> = rows[0].iter().map(Vec::len).collect();
        let mut probs = ItemProbs::zeros(n_classes, &levels);
        for (g, class_rows) in rows.iter().enumerate() {
            if class_rows.len() != levels.len() {
                return Err(Error::Dimension("item probability rows ragged".into()));
            }
            for (j, row) in class_rows.iter().enumerate() {
                if row.len() != levels[j] {
                    return Err(Error::Dimension(format!(
                        "item {} has {} probabilities for {} categories",
                        j + 1,
                        row.len(),
                        levels[j]
                    )));
                }
                let sum: f64 = row.iter().sum();
                if !(sum > 0.0) || row.iter().any(|p| *p < 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "item {} class {} probabilities invalid",
                        j + 1,
                        g + 1
                    )));
                }
                for (k, &p) in row.iter().enumerate() {
                    *probs.get_mut(g, j, k) = p / sum;
                }
            }
        }
        Ok(probs)
    }

    pub fn total_levels(&self) -> usize {
        self.total_levels
    }

    #[inline]
    pub fn get(&self, class: usize, item: usize, category: usize) -> f64 {
        self.data[class * self.total_levels + self.offsets[item] + category]
    }

    #[inline]
    pub fn get_mut(&mut self, class: usize, item: usize, category: usize) -> &mut f64 {
        &mut self.data[class * self.total_levels + self.offsets[item] + category]
    }

    pub fn item_row(&self, class: usize, item: usize) -> &[f64] {
        let start = class * self.total_levels + self.offsets[item];
        &self.data[start..start + self.levels[item]]
    }

    pub fn item_row_mut(&mut self, class: usize, item: usize) -> &mut [f64] {
        let start = class * self.total_levels + self.offsets[item];
        let k = self.levels[item];
        &mut self.data[start..start + k]
    }
}

/// One full LCR MCMC state.
#[derive(Clone, Debug)]
pub struct LcrState {
    /// Class label per observation (0-based; the baseline class is G-1).
    pub labels: Vec<usize>,
    /// (P+1) x G coefficients; the baseline column G-1 stays exactly zero.
    pub beta: DMatrix<f64>,
    /// Polya-Gamma variables, N x (G-1) row-major, strictly positive.
    pub omega: Vec<f64>,
    /// Item inclusion nu (true = clustering set).
    pub item_included: Vec<bool>,
    /// Predictor inclusion gamma (intercept always included).
    pub pred_included: Vec<bool>,
}

/// Sufficient statistics of a fixed allocation: class sizes s_g, class-item
/// counts s_gjk, and the allocation-free pooled counts s_jk.
#[derive(Clone, Debug)]
pub struct SufficientCounts {
    pub n_classes: usize,
    class_counts: Vec<i64>,
    item_class: Vec<i64>, // class-major: g * total_levels + offset(j) + k
    pooled: Vec<i64>,
    total_levels: usize,
}

impl SufficientCounts {
    #[inline]
    pub fn class_count(&self, g: usize) -> i64 {
        self.class_counts[g]
    }

    #[inline]
    pub fn class_item(&self, data: &CategoricalDataset, g: usize, j: usize, k: usize) -> i64 {
        self.item_class[g * self.total_levels + data.offset(j) + k]
    }

    pub fn pooled(&self, data: &CategoricalDataset, j: usize, k: usize) -> i64 {
        self.pooled[data.offset(j) + k]
    }

    /// Remove observation i (currently in class g) from the counts.
    #[inline]
    pub fn remove(&mut self, data: &CategoricalDataset, i: usize, g: usize) {
        self.class_counts[g] -= 1;
        let base = g * self.total_levels;
        for (j, &code) in data.row(i).iter().enumerate() {
            self.item_class[base + data.offset(j) + code as usize] -= 1;
        }
    }

    /// Add observation i to class g.
    #[inline]
    pub fn add(&mut self, data: &CategoricalDataset, i: usize, g: usize) {
        self.class_counts[g] += 1;
        let base = g * self.total_levels;
        for (j, &code) in data.row(i).iter().enumerate() {
            self.item_class[base + data.offset(j) + code as usize] += 1;
        }
    }
}

/// Tally sufficient counts for an allocation.
pub fn compute_counts(
    data: &CategoricalDataset,
    labels: &[usize],
    n_classes: usize,
) -> Result<SufficientCounts> {
    if labels.len() != data.n_obs() {
        return Err(Error::Dimension(format!(
            "{} labels for {} observations",
            labels.len(),
            data.n_obs()
        )));
    }
    if let Some(z) = labels.iter().find(|z| **z >= n_classes) {
        return Err(Error::Dimension(format!("label {z} outside 0..{n_classes}")));
    }
    let total = data.total_levels();
    let mut counts = SufficientCounts {
        n_classes,
        class_counts: vec![0; n_classes],
        item_class: vec![0; n_classes * total],
        pooled: vec![0; total],
        total_levels: total,
    };
    for (i, &g) in labels.iter().enumerate() {
        counts.add(data, i, g);
        for (j, &code) in data.row(i).iter().enumerate() {
            counts.pooled[data.offset(j) + code as usize] += 1;
        }
    }
    Ok(counts)
}

/// Linear predictors x_i' beta_g over gamma-active columns, one per class.
/// Excluded predictors contribute nothing; the intercept always enters.
pub fn linear_predictors(
    design_row: &[f64],
    beta: &DMatrix<f64>,
    pred_included: &[bool],
) -> Vec<f64> {
    let g_total = beta.ncols();
    let mut out = vec![0.0; g_total];
    for (g, o) in out.iter_mut().enumerate() {
        let col = beta.column(g);
        let mut acc = design_row[0] * col[0];
        for (l, &inc) in pred_included.iter().enumerate() {
            if inc {
                acc += design_row[l + 1] * col[l + 1];
            }
        }
        *o = acc;
    }
    out
}

/// Log softmax with max-subtraction; finite for scores up to |x'beta| ~ 700.
pub fn log_softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    scores.iter().map(|s| s - lse).collect()
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for o in out.iter_mut() {
        *o /= sum;
    }
    out
}

/// Mixing probabilities pi_i over G classes for one design row.
pub fn mixing_probabilities(
    design_row: &[f64],
    beta: &DMatrix<f64>,
    pred_included: &[bool],
) -> Vec<f64> {
    softmax(&linear_predictors(design_row, beta, pred_included))
}

/// Complete-data log likelihood: sum_i [log pi_{i z_i} + clustering item
/// terms under theta], plus non-clustering item terms when rho is supplied.
/// A zero theta entry matching an observed response yields -infinity.
pub fn complete_data_loglik(
    data: &CategoricalDataset,
    covariates: &CovariateMatrix,
    state: &LcrState,
    theta: &ItemProbs,
    rho: Option<&ItemProbs>,
) -> f64 {
    let mut total = 0.0;
    for i in 0..data.n_obs() {
        let logpi = log_softmax(&linear_predictors(
            covariates.row(i),
            &state.beta,
            &state.pred_included,
        ));
        let g = state.labels[i];
        total += logpi[g];
        for (j, &code) in data.row(i).iter().enumerate() {
            if state.item_included[j] {
                total += theta.get(g, j, code as usize).ln();
            } else if let Some(rho) = rho {
                total += rho.get(0, j, code as usize).ln();
            }
        }
    }
    total
}

/// Log Dirichlet-multinomial factor of item j pooled over all observations
/// (the non-clustering likelihood term).
fn log_dm_pooled(
    data: &CategoricalDataset,
    counts: &SufficientCounts,
    j: usize,
    alpha_j: &[f64],
    n_obs: usize,
) -> f64 {
    let alpha_total: f64 = alpha_j.iter().sum();
    let mut value = ln_gamma(alpha_total) - ln_gamma(n_obs as f64 + alpha_total);
    for (k, &a) in alpha_j.iter().enumerate() {
        value += ln_gamma(counts.pooled(data, j, k) as f64 + a) - ln_gamma(a);
    }
    value
}

/// Log Dirichlet-multinomial factor of item j split by class (the clustering
/// likelihood term), summed over classes.
fn log_dm_clustered(
    data: &CategoricalDataset,
    counts: &SufficientCounts,
    j: usize,
    alpha_j: &[f64],
) -> f64 {
    let alpha_total: f64 = alpha_j.iter().sum();
    let mut value = 0.0;
    for g in 0..counts.n_classes {
        value += ln_gamma(alpha_total) - ln_gamma(counts.class_count(g) as f64 + alpha_total);
        for (k, &a) in alpha_j.iter().enumerate() {
            value += ln_gamma(counts.class_item(data, g, j, k) as f64 + a) - ln_gamma(a);
        }
    }
    value
}

/// Marginalized item contribution of the collapsed posterior: pooled factors
/// for excluded items, per-class factors for clustering items.
pub fn collapsed_item_terms(
    data: &CategoricalDataset,
    counts: &SufficientCounts,
    item_included: &[bool],
    priors: &PriorConfig,
) -> f64 {
    let mut total = 0.0;
    for j in 0..data.n_items() {
        let alpha_j = &priors.item_concentration[j];
        if item_included[j] {
            total += log_dm_clustered(data, counts, j, alpha_j);
        } else {
            total += log_dm_pooled(data, counts, j, alpha_j, data.n_obs());
        }
    }
    total
}

/// Log acceptance ratio for moving item j into the clustering set:
/// clustered factor minus pooled factor plus the prior log odds of nu_j.
pub fn item_move_log_ratio(
    data: &CategoricalDataset,
    counts: &SufficientCounts,
    j: usize,
    priors: &PriorConfig,
) -> f64 {
    let alpha_j = &priors.item_concentration[j];
    let p = priors.item_inclusion_prior[j];
    log_dm_clustered(data, counts, j, alpha_j)
        - log_dm_pooled(data, counts, j, alpha_j, data.n_obs())
        + (p / (1.0 - p)).ln()
}

fn log_inclusion_prior(flags: &[bool], probs: &[f64]) -> f64 {
    flags
        .iter()
        .zip(probs)
        .map(|(&inc, &p)| if inc { p.ln() } else { (1.0 - p).ln() })
        .sum()
}

/// Log density of the coefficient prior: independent diagonal Gaussians per
/// non-baseline class over all P+1 coordinates.
pub fn log_beta_prior(beta: &DMatrix<f64>, priors: &PriorConfig) -> f64 {
    let mut total = 0.0;
    for g in 0..beta.ncols().saturating_sub(1) {
        let mean = &priors.coef_mean[g];
        let var = &priors.coef_variance[g];
        for r in 0..beta.nrows() {
            let d = beta[(r, g)] - mean[r];
            total += -0.5 * ((2.0 * std::f64::consts::PI * var[r]).ln() + d * d / var[r]);
        }
    }
    total
}

/// Collapsed log posterior of the LCR model (theta and rho integrated out),
/// up to an additive constant: mixing terms + Dirichlet-multinomial item
/// factors + inclusion priors + coefficient prior.
pub fn collapsed_log_posterior(
    data: &CategoricalDataset,
    covariates: &CovariateMatrix,
    labels: &[usize],
    beta: &DMatrix<f64>,
    item_included: &[bool],
    pred_included: &[bool],
    priors: &PriorConfig,
) -> Result<f64> {
    let n_classes = beta.ncols();
    let counts = compute_counts(data, labels, n_classes)?;
    let mut total = 0.0;
    for (i, &z) in labels.iter().enumerate() {
        let logpi = log_softmax(&linear_predictors(covariates.row(i), beta, pred_included));
        total += logpi[z];
    }
    total += collapsed_item_terms(data, &counts, item_included, priors);
    total += log_inclusion_prior(item_included, &priors.item_inclusion_prior);
    total += log_inclusion_prior(pred_included, &priors.predictor_inclusion_prior);
    total += log_beta_prior(beta, priors);
    Ok(total)
}

/// Collapsed log posterior of the LCA model: the mixing term is the
/// Dirichlet-multinomial class-size factor under lambda.
pub fn collapsed_log_posterior_lca(
    data: &CategoricalDataset,
    labels: &[usize],
    item_included: &[bool],
    priors: &PriorConfig,
) -> Result<f64> {
    let n_classes = priors.class_concentration.len();
    let counts = compute_counts(data, labels, n_classes)?;
    let lambda_total: f64 = priors.class_concentration.iter().sum();
    let mut total = ln_gamma(lambda_total) - ln_gamma(data.n_obs() as f64 + lambda_total);
    for (g, &lambda) in priors.class_concentration.iter().enumerate() {
        total += ln_gamma(counts.class_count(g) as f64 + lambda) - ln_gamma(lambda);
    }
    total += collapsed_item_terms(data, &counts, item_included, priors);
    total += log_inclusion_prior(item_included, &priors.item_inclusion_prior);
    Ok(total)
}

/// Leave-one-out clustering-item weight factor for assigning observation i
/// to class h: prod_{j in nu_cl} (s_hjy + alpha_jy) / (s_h + A_j) with i
/// removed from the counts.
#[inline]
pub fn collapsed_item_weight(
    data: &CategoricalDataset,
    counts: &SufficientCounts,
    i: usize,
    h: usize,
    item_included: &[bool],
    priors: &PriorConfig,
) -> f64 {
    let s_h = counts.class_count(h) as f64;
    let mut value = 1.0;
    for (j, &code) in data.row(i).iter().enumerate() {
        if item_included[j] {
            let a = priors.item_concentration[j][code as usize];
            let total = priors.item_concentration_total(j);
            value *= (counts.class_item(data, h, j, code as usize) as f64 + a) / (s_h + total);
        }
    }
    value
}

/// Conditional classification probabilities p(z_i = g | Z_{-i}, ...) given a
/// stored state, for every observation. For LCA states pass `beta = None`
/// and the class weight is the collapsed Dirichlet-multinomial ratio; for
/// LCR states the class weight is the multinomial-logit probability.
#[allow(clippy::too_many_arguments)]
pub fn classification_probs(
    data: &CategoricalDataset,
    covariates: Option<&CovariateMatrix>,
    labels: &[usize],
    beta: Option<&DMatrix<f64>>,
    pred_included: &[bool],
    item_included: &[bool],
    priors: &PriorConfig,
    n_classes: usize,
) -> Result<Vec<f64>> {
    let n = data.n_obs();
    let mut counts = compute_counts(data, labels, n_classes)?;
    let mut probs = vec![0.0; n * n_classes];
    let mut weights = vec![0.0; n_classes];
    for i in 0..n {
        let g_current = labels[i];
        counts.remove(data, i, g_current);
        match beta {
            Some(beta) => {
                let covs = covariates.ok_or_else(|| {
                    Error::Dimension("LCR classification requires covariates".into())
                })?;
                let pi = mixing_probabilities(covs.row(i), beta, pred_included);
                for h in 0..n_classes {
                    weights[h] =
                        pi[h] * collapsed_item_weight(data, &counts, i, h, item_included, priors);
                }
            }
            None => {
                for h in 0..n_classes {
                    let class_w = counts.class_count(h) as f64 + priors.class_concentration[h];
                    weights[h] = class_w
                        * collapsed_item_weight(data, &counts, i, h, item_included, priors);
                }
            }
        }
        let total: f64 = weights.iter().sum();
        for h in 0..n_classes {
            probs[i * n_classes + h] = weights[h] / total;
        }
        counts.add(data, i, g_current);
    }
    Ok(probs)
}
