//! Deterministic generators for LCR benchmark datasets, including the two
//! built-in simulation designs.

use crate::dist::draw_categorical;
use crate::error::{Error, Result};
use crate::model::{CategoricalDataset, CovariateMatrix, ItemProbs};
use crate::rng::RandomStream;
use nalgebra::DMatrix;

/// How covariates are produced: independent standard Gaussians (the
/// benchmark default) or a user-supplied matrix.
#[derive(Clone, Debug)]
pub enum CovariateLaw {
    StandardNormal { n_predictors: usize },
    Fixed(Vec<Vec<f64>>),
}

/// A generative LCR configuration: true item probabilities, true
/// coefficients (baseline column zero), a covariate law, and N.
#[derive(Clone, Debug)]
pub struct GenerativeSpec {
    pub theta: ItemProbs,
    /// (P+1) x G with the last column identically zero.
    pub beta: DMatrix<f64>,
    pub covariates: CovariateLaw,
    pub n_obs: usize,
}

impl GenerativeSpec {
    pub fn n_classes(&self) -> usize {
        self.theta.n_classes
    }

    pub fn n_predictors(&self) -> usize {
        match &self.covariates {
            CovariateLaw::StandardNormal { n_predictors } => *n_predictors,
            CovariateLaw::Fixed(rows) => rows.first().map_or(0, Vec::len),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_obs == 0 {
            return Err(Error::Config("generative spec needs n_obs >= 1".into()));
        }
        if self.beta.ncols() != self.theta.n_classes {
            return Err(Error::Config(format!(
                "beta has {} columns for {} classes",
                self.beta.ncols(),
                self.theta.n_classes
            )));
        }
        if self.beta.nrows() != self.n_predictors() + 1 {
            return Err(Error::Config(format!(
                "beta has {} rows for P+1 = {}",
                self.beta.nrows(),
                self.n_predictors() + 1
            )));
        }
        if self
            .beta
            .column(self.beta.ncols() - 1)
            .iter()
            .any(|&b| b != 0.0)
        {
            return Err(Error::Config("baseline beta column must be zero".into()));
        }
        if let CovariateLaw::Fixed(rows) = &self.covariates {
            if rows.len() != self.n_obs {
                return Err(Error::Config(format!(
                    "fixed covariates have {} rows for {} observations",
                    rows.len(),
                    self.n_obs
                )));
            }
        }
        for g in 0..self.theta.n_classes {
            for j in 0..self.theta.levels.len() {
                let sum: f64 = self.theta.item_row(g, j).iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!(
                        "theta row (class {}, item {}) sums to {sum}",
                        g + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Generate a dataset: per observation draw x_i, compute the softmax mixing
/// probabilities, draw the class, then draw each item from the class's
/// theta row. Deterministic given (spec, seed).
pub fn generate(
    spec: &GenerativeSpec,
    seed: u64,
) -> Result<(CategoricalDataset, CovariateMatrix, Vec<usize>)> {
    spec.validate()?;
    let mut stream = RandomStream::new(seed, 0);
    let p = spec.n_predictors();
    let all_included = vec![true; p];
    let mut rows: Vec<Vec<u16>> = Vec::with_capacity(spec.n_obs);
    let mut covariate_rows: Vec<Vec<f64>> = Vec::with_capacity(spec.n_obs);
    let mut labels = Vec::with_capacity(spec.n_obs);
    let mut design_row = vec![1.0; p + 1];
    for i in 0..spec.n_obs {
        let predictors: Vec<f64> = match &spec.covariates {
            CovariateLaw::StandardNormal { .. } => (0..p).map(|_| stream.normal()).collect(),
            CovariateLaw::Fixed(fixed) => fixed[i].clone(),
        };
        design_row[1..].copy_from_slice(&predictors);
        let pi = crate::model::mixing_probabilities(&design_row, &spec.beta, &all_included);
        let class = draw_categorical(&mut stream, &pi)?;
        let mut row = Vec::with_capacity(spec.theta.levels.len());
        for j in 0..spec.theta.levels.len() {
            let item_probs = spec.theta.item_row(class, j);
            row.push((draw_categorical(&mut stream, item_probs)? + 1) as u16);
        }
        rows.push(row);
        covariate_rows.push(predictors);
        labels.push(class);
    }
    let data = CategoricalDataset::from_rows(&rows, spec.theta.levels.clone())?;
    let covariates = CovariateMatrix::from_predictor_rows(&covariate_rows)?;
    Ok((data, covariates, labels))
}

/// First benchmark design: G=2 classes, M=8 three-level items with items
/// 1-4 discriminative, P=6 standard-normal predictors with true Group-1
/// coefficients (-0.5, 1.2, 1.0, 0.8, 0.4, 0, 0).
pub fn sim1_spec(n_obs: usize) -> GenerativeSpec {
    let class1 = vec![
        vec![0.15, 0.25, 0.60],
        vec![0.20, 0.35, 0.45],
        vec![0.10, 0.15, 0.75],
        vec![0.25, 0.40, 0.35],
        vec![0.40, 0.50, 0.10],
        vec![0.70, 0.10, 0.20],
        vec![0.10, 0.50, 0.40],
        vec![0.33, 0.33, 0.33],
    ];
    let class2 = vec![
        vec![0.70, 0.20, 0.10],
        vec![0.55, 0.30, 0.15],
        vec![0.80, 0.15, 0.05],
        vec![0.45, 0.35, 0.20],
        vec![0.40, 0.50, 0.10],
        vec![0.70, 0.10, 0.20],
        vec![0.10, 0.50, 0.40],
        vec![0.33, 0.33, 0.33],
    ];
    let theta = ItemProbs::from_rows(&[class1, class2]).expect("static tables are valid");
    let mut beta = DMatrix::zeros(7, 2);
    for (r, v) in [-0.5, 1.2, 1.0, 0.8, 0.4, 0.0, 0.0].iter().enumerate() {
        beta[(r, 0)] = *v;
    }
    GenerativeSpec {
        theta,
        beta,
        covariates: CovariateLaw::StandardNormal { n_predictors: 6 },
        n_obs,
    }
}

/// Second benchmark design: G=3 classes, M=13 items with 2-5 levels (items
/// 1-8 discriminative, 9-13 noise), P=6 standard-normal predictors. Slope
/// coefficients are (1, -1, 0.5, -0.4, 0, 0) for Group 1 and the negation
/// for Group 2; intercepts are zero and Group 3 is the baseline.
pub fn sim2_spec(n_obs: usize) -> GenerativeSpec {
    let class1 = vec![
        vec![0.15, 0.85],
        vec![0.25, 0.75],
        vec![0.70, 0.30],
        vec![0.10, 0.25, 0.65],
        vec![0.20, 0.15, 0.65],
        vec![0.15, 0.20, 0.65],
        vec![0.10, 0.15, 0.25, 0.50],
        vec![0.15, 0.20, 0.20, 0.45],
        vec![0.40, 0.50, 0.10],
        vec![0.70, 0.10, 0.20],
        vec![0.20, 0.20, 0.20, 0.20, 0.20],
        vec![0.10, 0.15, 0.20, 0.25, 0.30],
        vec![0.20, 0.30, 0.30, 0.10, 0.10],
    ];
    let class2 = vec![
        vec![0.60, 0.40],
        vec![0.45, 0.55],
        vec![0.20, 0.80],
        vec![0.35, 0.40, 0.25],
        vec![0.25, 0.60, 0.15],
        vec![0.50, 0.35, 0.15],
        vec![0.25, 0.35, 0.25, 0.15],
        vec![0.20, 0.45, 0.25, 0.10],
        vec![0.40, 0.50, 0.10],
        vec![0.70, 0.10, 0.20],
        vec![0.20, 0.20, 0.20, 0.20, 0.20],
        vec![0.10, 0.15, 0.20, 0.25, 0.30],
        vec![0.20, 0.30, 0.30, 0.10, 0.10],
    ];
    let class3 = vec![
        vec![0.80, 0.20],
        vec![0.70, 0.30],
        vec![0.65, 0.35],
        vec![0.70, 0.20, 0.10],
        vec![0.65, 0.25, 0.10],
        vec![0.75, 0.15, 0.10],
        vec![0.60, 0.25, 0.10, 0.05],
        vec![0.55, 0.20, 0.15, 0.10],
        vec![0.40, 0.50, 0.10],
        vec![0.70, 0.10, 0.20],
        vec![0.20, 0.20, 0.20, 0.20, 0.20],
        vec![0.10, 0.15, 0.20, 0.25, 0.30],
        vec![0.20, 0.30, 0.30, 0.10, 0.10],
    ];
    let theta = ItemProbs::from_rows(&[class1, class2, class3]).expect("static tables are valid");
    let mut beta = DMatrix::zeros(7, 3);
    for (r, v) in [0.0, 1.0, -1.0, 0.5, -0.4, 0.0, 0.0].iter().enumerate() {
        beta[(r, 0)] = *v;
    }
    for (r, v) in [0.0, -1.0, 1.0, -0.5, 0.4, 0.0, 0.0].iter().enumerate() {
        beta[(r, 1)] = *v;
    }
    GenerativeSpec {
        theta,
        beta,
        covariates: CovariateLaw::StandardNormal { n_predictors: 6 },
        n_obs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn single_class_marginals_converge_to_theta() {
        let theta = ItemProbs::from_rows(&[vec![vec![0.2, 0.3, 0.5]]]).unwrap();
        let spec = GenerativeSpec {
            theta,
            beta: DMatrix::zeros(1, 1),
            covariates: CovariateLaw::StandardNormal { n_predictors: 0 },
            n_obs: 100_000,
        };
        let (data, _, labels) = generate(&spec, 4).unwrap();
        assert!(labels.iter().all(|&z| z == 0));
        let mut freq = [0.0; 3];
        for i in 0..data.n_obs() {
            freq[data.code(i, 0)] += 1.0;
        }
        for (k, &target) in [0.2, 0.3, 0.5].iter().enumerate() {
            let p = freq[k] / data.n_obs() as f64;
            let se = (target * (1.0 - target) / data.n_obs() as f64).sqrt();
            assert!((p - target).abs() < 3.0 * se, "category {k}: {p}");
        }
    }

    #[test]
    fn zero_beta_gives_uniform_class_frequencies() {
        let shared = vec![vec![0.5, 0.5]];
        let theta =
            ItemProbs::from_rows(&[shared.clone(), shared.clone(), shared]).unwrap();
        let spec = GenerativeSpec {
            theta,
            beta: DMatrix::zeros(3, 3),
            covariates: CovariateLaw::StandardNormal { n_predictors: 2 },
            n_obs: 100_000,
        };
        let (_, _, labels) = generate(&spec, 9).unwrap();
        for g in 0..3 {
            let p = labels.iter().filter(|&&z| z == g).count() as f64 / labels.len() as f64;
            let se = ((1.0f64 / 3.0) * (2.0 / 3.0) / labels.len() as f64).sqrt();
            assert!((p - 1.0 / 3.0).abs() < 3.0 * se);
        }
    }

    #[test]
    fn sim1_pooled_marginal_matches_mixture_average() {
        // Law of total probability using the realized labels.
        let spec = sim1_spec(100_000);
        let (data, _, labels) = generate(&spec, 20).unwrap();
        let n = data.n_obs() as f64;
        let prop1 = labels.iter().filter(|&&z| z == 0).count() as f64 / n;
        let expected = prop1 * 0.15 + (1.0 - prop1) * 0.70;
        let observed = (0..data.n_obs()).filter(|&i| data.code(i, 0) == 0).count() as f64 / n;
        let se = (expected * (1.0 - expected) / n).sqrt();
        assert!(
            (observed - expected).abs() < 3.0 * se,
            "observed {observed}, expected {expected}"
        );
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = sim1_spec(200);
        let (d1, c1, l1) = generate(&spec, 7).unwrap();
        let (d2, c2, l2) = generate(&spec, 7).unwrap();
        assert_eq!(l1, l2);
        for i in 0..200 {
            assert_eq!(d1.row(i), d2.row(i));
            assert_eq!(c1.row(i), c2.row(i));
        }
    }

    #[test]
    fn realized_class_proportions_match_average_softmax() {
        let spec = sim1_spec(100_000);
        let (_, covariates, labels) = generate(&spec, 3).unwrap();
        let all = vec![true; 6];
        let mut expected = 0.0;
        for i in 0..covariates.n_obs() {
            expected +=
                crate::model::mixing_probabilities(covariates.row(i), &spec.beta, &all)[0];
        }
        expected /= covariates.n_obs() as f64;
        let observed =
            labels.iter().filter(|&&z| z == 0).count() as f64 / labels.len() as f64;
        let se = (expected * (1.0 - expected) / labels.len() as f64).sqrt();
        assert!((observed - expected).abs() < 3.0 * se);
    }

    #[test]
    fn sim1_table_values() {
        let spec = sim1_spec(10);
        // Item 3 class 2 category 1 -> 0.80.
        assert_relative_eq!(spec.theta.get(1, 2, 0), 0.80, epsilon = 1e-12);
        // Item 8 is uniform in both classes after renormalization.
        for g in 0..2 {
            for k in 0..3 {
                assert_relative_eq!(spec.theta.get(g, 7, k), 1.0 / 3.0, epsilon = 1e-9);
            }
        }
        // Every row sums to one.
        for g in 0..2 {
            for j in 0..8 {
                assert_relative_eq!(
                    spec.theta.item_row(g, j).iter().sum::<f64>(),
                    1.0,
                    epsilon = 1e-9
                );
            }
        }
        assert_relative_eq!(spec.beta[(0, 0)], -0.5);
        assert_relative_eq!(spec.beta[(1, 0)], 1.2);
    }

    #[test]
    fn sim2_table_values() {
        let spec = sim2_spec(10);
        assert_eq!(
            spec.theta.levels,
            vec![2, 2, 2, 3, 3, 3, 4, 4, 3, 3, 5, 5, 5]
        );
        // Item 1 class 3 category 1 -> 0.80.
        assert_relative_eq!(spec.theta.get(2, 0, 0), 0.80, epsilon = 1e-12);
        // Item 11 uniform over 5 categories in every class.
        for g in 0..3 {
            for k in 0..5 {
                assert_relative_eq!(spec.theta.get(g, 10, k), 0.20, epsilon = 1e-12);
            }
        }
        // Group 2 coefficient on variable 1 -> -1.00.
        assert_relative_eq!(spec.beta[(1, 1)], -1.0);
        // Baseline column zero.
        assert!(spec.beta.column(2).iter().all(|&b| b == 0.0));
    }
}
