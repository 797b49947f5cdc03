//! Numerical oracles for the sampler internals: independent quadrature and
//! enumeration routes that validate the closed-form acceptance ratios.

use lcreg::lcr::predictor_move_log_acceptance;
use lcreg::model::{CovariateMatrix, PriorConfig};
use lcreg::rng::RandomStream;

/// Composite Simpson rule on [a, b] with an odd number of nodes.
fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, nodes: usize) -> f64 {
    assert!(nodes % 2 == 1 && nodes >= 3);
    let h = (b - a) / (nodes - 1) as f64;
    let mut total = f(a) + f(b);
    for k in 1..nodes - 1 {
        let x = a + h * k as f64;
        total += if k % 2 == 1 { 4.0 * f(x) } else { 2.0 * f(x) };
    }
    total * h / 3.0
}

fn log_normal_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    -0.5 * ((x - mean) * (x - mean) / variance + (2.0 * std::f64::consts::PI * variance).ln())
}

/// The Polya-Gamma-conditional likelihood of one class's coefficients for
/// G=2 (where c_i = 0): prod_i exp(kappa_i eta_i - omega_i eta_i^2 / 2).
fn log_conditional_likelihood(
    beta0: f64,
    beta1: f64,
    x: &[f64],
    kappa: &[f64],
    omega: &[f64],
) -> f64 {
    let mut total = 0.0;
    for i in 0..x.len() {
        let eta = beta0 + beta1 * x[i];
        total += kappa[i] * eta - 0.5 * omega[i] * eta * eta;
    }
    total
}

/// The predictor-move acceptance ratio must match the ratio of marginal
/// likelihoods computed by 2-D (and 1-D) adaptive quadrature over the
/// conditionally Gaussian integrand, within 1e-6 relative.
#[test]
fn predictor_move_matches_quadrature_oracle() {
    let n = 6;
    let mut stream = RandomStream::new(2718, 0);
    for trial in 0..5 {
        let x: Vec<f64> = (0..n).map(|_| stream.normal()).collect();
        let labels: Vec<usize> = (0..n).map(|_| stream.index(2)).collect();
        let kappa: Vec<f64> = labels
            .iter()
            .map(|&z| if z == 0 { 0.5 } else { -0.5 })
            .collect();
        let omega: Vec<f64> = (0..n).map(|_| 0.05 + stream.uniform()).collect();
        let covs =
            CovariateMatrix::from_predictor_rows(&x.iter().map(|&v| vec![v]).collect::<Vec<_>>())
                .unwrap();
        let mut priors = PriorConfig::defaults(&[2, 2], 2, 1);
        priors.coef_mean = vec![vec![0.3, -0.2]];
        priors.coef_variance = vec![vec![4.0, 2.25]];

        // Closed-form route.
        let c_vals = vec![0.0; n];
        let log_alpha = predictor_move_log_acceptance(
            &covs,
            &labels,
            &omega,
            &c_vals,
            &priors,
            &[true],
            &[false],
            2,
        )
        .unwrap();

        // Quadrature route: ml with the slope included (2-D integral).
        let span = 16.0;
        let nodes = 1201;
        let ml_in = simpson(
            |b0| {
                simpson(
                    |b1| {
                        (log_conditional_likelihood(b0, b1, &x, &kappa, &omega)
                            + log_normal_pdf(b0, 0.3, 4.0)
                            + log_normal_pdf(b1, -0.2, 2.25))
                        .exp()
                    },
                    -span,
                    span,
                    nodes,
                )
            },
            -span,
            span,
            nodes,
        );
        // ml with the slope excluded (1-D integral over the intercept).
        let ml_out = simpson(
            |b0| {
                (log_conditional_likelihood(b0, 0.0, &x, &kappa, &omega)
                    + log_normal_pdf(b0, 0.3, 4.0))
                .exp()
            },
            -span,
            span,
            nodes,
        );
        let oracle = (ml_out / ml_in).ln();
        let rel = ((log_alpha.exp() - oracle.exp()) / oracle.exp()).abs();
        assert!(
            rel < 1e-6,
            "trial {trial}: closed form {log_alpha} vs quadrature {oracle} (rel {rel:.2e})"
        );
    }
}

/// Three-class variant: with the other classes' coefficients held fixed,
/// the acceptance ratio factorizes over classes; validate each factor by
/// quadrature with the fixed c values.
#[test]
fn predictor_move_matches_quadrature_with_three_classes() {
    let n = 5;
    let mut stream = RandomStream::new(99, 0);
    let x: Vec<f64> = (0..n).map(|_| stream.normal()).collect();
    let labels: Vec<usize> = vec![0, 1, 2, 0, 1];
    let omega: Vec<f64> = (0..n * 2).map(|_| 0.05 + stream.uniform()).collect();
    let c_vals: Vec<f64> = (0..n * 2).map(|_| stream.normal() * 0.5).collect();
    let covs = CovariateMatrix::from_predictor_rows(
        &x.iter().map(|&v| vec![v]).collect::<Vec<_>>(),
    )
    .unwrap();
    let mut priors = PriorConfig::defaults(&[2, 2], 3, 1);
    priors.coef_mean = vec![vec![0.0, 0.0], vec![0.1, -0.1]];
    priors.coef_variance = vec![vec![4.0, 4.0], vec![2.25, 2.25]];

    let log_alpha = predictor_move_log_acceptance(
        &covs,
        &labels,
        &omega,
        &c_vals,
        &priors,
        &[false],
        &[true],
        3,
    )
    .unwrap();

    let span = 16.0;
    let nodes = 1201;
    let mut oracle = 0.0;
    for g in 0..2 {
        let kappa: Vec<f64> = labels
            .iter()
            .map(|&z| if z == g { 0.5 } else { -0.5 })
            .collect();
        let omega_g: Vec<f64> = (0..n).map(|i| omega[i * 2 + g]).collect();
        let c_g: Vec<f64> = (0..n).map(|i| c_vals[i * 2 + g]).collect();
        // eta_i = b0 + b1 x_i - c_i; absorb c into the likelihood.
        let loglik = |b0: f64, b1: f64| -> f64 {
            let mut total = 0.0;
            for i in 0..n {
                let eta = b0 + b1 * x[i] - c_g[i];
                total += kappa[i] * eta - 0.5 * omega_g[i] * eta * eta;
            }
            total
        };
        let m = &priors.coef_mean[g];
        let v = &priors.coef_variance[g];
        let ml_in = simpson(
            |b0| {
                simpson(
                    |b1| {
                        (loglik(b0, b1)
                            + log_normal_pdf(b0, m[0], v[0])
                            + log_normal_pdf(b1, m[1], v[1]))
                        .exp()
                    },
                    -span,
                    span,
                    nodes,
                )
            },
            -span,
            span,
            nodes,
        );
        let ml_out = simpson(
            |b0| (loglik(b0, 0.0) + log_normal_pdf(b0, m[0], v[0])).exp(),
            -span,
            span,
            nodes,
        );
        oracle += (ml_in / ml_out).ln();
    }
    let rel = ((log_alpha - oracle) / oracle).abs();
    assert!(
        rel < 1e-6,
        "closed form {log_alpha} vs quadrature {oracle} (rel {rel:.2e})"
    );
}
