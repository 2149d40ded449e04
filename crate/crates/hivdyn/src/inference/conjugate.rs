//! Conjugate full-conditional samplers for the population level.
//!
//! Three blocks of the Gibbs sweep have closed-form conditionals under the
//! conjugate hyperpriors: the measurement-error precision (gamma), the
//! population mean of the log parameters (multivariate normal), and the
//! population precision matrix (Wishart). Multivariate normal draws are made
//! from the posterior precision without forming its inverse, and Wishart
//! draws use the Bartlett decomposition.

use nalgebra::Cholesky;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::inference::Hyperpriors;
use crate::{ParamMatrix, ParamVector, N_PARAMS};

/// Draws the measurement-error precision given the pooled residual sum of
/// squares over `total_obs` observations. With no data this reduces to the
/// prior.
pub fn sample_error_precision<R: Rng>(
    residual_ss: f64,
    total_obs: usize,
    priors: &Hyperpriors,
    rng: &mut R,
) -> Result<f64> {
    if !residual_ss.is_finite() || residual_ss < 0.0 {
        return Err(Error::Domain(format!("residual sum of squares must be finite and nonnegative, got {residual_ss}")));
    }
    let shape = priors.error_shape + total_obs as f64 / 2.0;
    let scale = 1.0 / (1.0 / priors.error_scale + residual_ss / 2.0);
    let dist = Gamma::new(shape, scale)
        .map_err(|e| Error::Domain(format!("invalid gamma parameters shape={shape} scale={scale}: {e}")))?;
    Ok(dist.sample(rng))
}

/// Draws `N(mean, precision^-1)` directly from the precision matrix: with
/// `precision = L L^T` and `z` standard normal, `mean + L^-T z` has the
/// required covariance.
pub fn sample_mvn_from_precision<R: Rng>(
    mean: &ParamVector,
    precision: &ParamMatrix,
    rng: &mut R,
) -> Result<ParamVector> {
    let chol = Cholesky::new(symmetrize(precision))
        .ok_or_else(|| Error::LinearAlgebra("precision matrix is not positive definite".into()))?;
    let z = ParamVector::from_fn(|_, _| rng.sample(StandardNormal));
    // Solve L^T x = z by back substitution.
    let x = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::LinearAlgebra("singular Cholesky factor".into()))?;
    Ok(mean + x)
}

/// Draws the population mean given the subject-level log parameters and the
/// current population precision.
pub fn sample_population_mean<R: Rng>(
    thetas: &[ParamVector],
    sigma_inv: &ParamMatrix,
    priors: &Hyperpriors,
    rng: &mut R,
) -> Result<ParamVector> {
    let n = thetas.len() as f64;
    let lambda_inv = spd_inverse(&priors.mean_cov)?;
    let precision = symmetrize(&(n * sigma_inv + lambda_inv));

    let theta_sum: ParamVector = thetas.iter().sum();
    let rhs = sigma_inv * theta_sum + lambda_inv * priors.mean_loc;
    let chol = Cholesky::new(precision)
        .ok_or_else(|| Error::LinearAlgebra("population-mean posterior precision is not positive definite".into()))?;
    let mean = chol.solve(&rhs);
    sample_mvn_from_precision(&mean, &precision, rng)
}

/// Draws the population precision matrix given the subject-level log
/// parameters and the current population mean.
pub fn sample_population_precision<R: Rng>(
    thetas: &[ParamVector],
    mu: &ParamVector,
    priors: &Hyperpriors,
    rng: &mut R,
) -> Result<ParamMatrix> {
    let mut scatter = spd_inverse(&priors.precision_scale)?;
    for theta in thetas {
        let d = theta - mu;
        scatter += d * d.transpose();
    }
    let scale = spd_inverse(&symmetrize(&scatter))?;
    sample_wishart(&scale, priors.precision_df + thetas.len() as f64, rng)
}

/// Draws from a Wishart distribution with the given scale matrix and degrees
/// of freedom via the Bartlett decomposition; the mean is `df * scale`.
pub fn sample_wishart<R: Rng>(scale: &ParamMatrix, df: f64, rng: &mut R) -> Result<ParamMatrix> {
    if df <= (N_PARAMS - 1) as f64 {
        return Err(Error::Domain(format!(
            "Wishart degrees of freedom {df} must exceed dimension - 1 = {}",
            N_PARAMS - 1
        )));
    }
    let chol = Cholesky::new(symmetrize(scale))
        .ok_or_else(|| Error::LinearAlgebra("Wishart scale matrix is not positive definite".into()))?;
    let l = chol.l();

    let mut a = ParamMatrix::zeros();
    for i in 0..N_PARAMS {
        let chi = ChiSquared::new(df - i as f64)
            .map_err(|e| Error::Domain(format!("invalid chi-squared degrees of freedom {}: {e}", df - i as f64)))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let la = l * a;
    Ok(symmetrize(&(la * la.transpose())))
}

/// Inverse of a symmetric positive-definite matrix through its Cholesky
/// factorization.
pub(crate) fn spd_inverse(m: &ParamMatrix) -> Result<ParamMatrix> {
    Cholesky::new(symmetrize(m))
        .map(|c| c.inverse())
        .ok_or_else(|| Error::LinearAlgebra("matrix is not positive definite".into()))
}

/// Clears the roundoff asymmetry that accumulates in matrix products.
pub(crate) fn symmetrize(m: &ParamMatrix) -> ParamMatrix {
    (m + m.transpose()) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn error_precision_prior_recovery_without_data() {
        // With no observations the conditional is the Ga(4.5, 9) prior:
        // mean 40.5, variance 364.5.
        let priors = Hyperpriors::default();
        let mut r = rng(11);
        let n = 200_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_error_precision(0.0, 0, &priors, &mut r).unwrap())
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 40.5).abs() < 0.2, "prior mean {mean} should be near 40.5");
        assert!((var - 364.5).abs() < 8.0, "prior variance {var} should be near 364.5");
    }

    #[test]
    fn error_precision_posterior_matches_update_rule() {
        // 378 observations with pooled residual sum of squares 50: the
        // conditional is Ga(4.5 + 189, 1/(1/9 + 25)), mean 193.5/25.111.
        let priors = Hyperpriors::default();
        let expected_mean = 193.5 / (1.0 / 9.0 + 25.0);
        let mut r = rng(12);
        let n = 200_000;
        let mean = (0..n)
            .map(|_| sample_error_precision(50.0, 378, &priors, &mut r).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!(
            (mean - expected_mean).abs() < 0.01,
            "posterior mean {mean} should be near {expected_mean}"
        );
    }

    #[test]
    fn error_precision_rejects_bad_residuals() {
        let priors = Hyperpriors::default();
        assert!(sample_error_precision(f64::INFINITY, 10, &priors, &mut rng(0)).is_err());
        assert!(sample_error_precision(-1.0, 10, &priors, &mut rng(0)).is_err());
    }

    #[test]
    fn mvn_from_precision_matches_moments() {
        // Precision diag(4), so covariance diag(0.25).
        let mean = ParamVector::from_row_slice(&[1.0, -2.0, 0.0, 3.0, 0.5, -0.5]);
        let precision = ParamMatrix::identity() * 4.0;
        let mut r = rng(13);
        let n = 100_000;
        let mut sum = ParamVector::zeros();
        let mut sum_sq = ParamVector::zeros();
        for _ in 0..n {
            let x = sample_mvn_from_precision(&mean, &precision, &mut r).unwrap();
            sum += x;
            sum_sq += (x - mean).component_mul(&(x - mean));
        }
        let emp_mean = sum / n as f64;
        let emp_var = sum_sq / n as f64;
        for j in 0..N_PARAMS {
            assert!((emp_mean[j] - mean[j]).abs() < 0.01, "component {j} mean {} vs {}", emp_mean[j], mean[j]);
            assert!((emp_var[j] - 0.25).abs() < 0.01, "component {j} variance {}", emp_var[j]);
        }
    }

    #[test]
    fn population_mean_single_subject_identity_case() {
        // One subject, population precision I, prior N(0, I): the
        // conditional is N(theta/2, I/2).
        let mut priors = Hyperpriors::default();
        priors.mean_loc = ParamVector::zeros();
        priors.mean_cov = ParamMatrix::identity();
        let theta = ParamVector::from_row_slice(&[2.0, -1.0, 4.0, 0.0, 1.0, -3.0]);
        let sigma_inv = ParamMatrix::identity();

        let mut r = rng(14);
        let n = 100_000;
        let mut sum = ParamVector::zeros();
        let mut sum_sq = ParamVector::zeros();
        for _ in 0..n {
            let x = sample_population_mean(&[theta], &sigma_inv, &priors, &mut r).unwrap();
            sum += x;
            sum_sq += (x - theta / 2.0).component_mul(&(x - theta / 2.0));
        }
        let emp_mean = sum / n as f64;
        let emp_var = sum_sq / n as f64;
        for j in 0..N_PARAMS {
            assert!(
                (emp_mean[j] - theta[j] / 2.0).abs() < 0.012,
                "component {j} mean {} vs {}",
                emp_mean[j],
                theta[j] / 2.0
            );
            assert!((emp_var[j] - 0.5).abs() < 0.02, "component {j} variance {}", emp_var[j]);
        }
    }

    #[test]
    fn wishart_moments_match_mean_and_variance() {
        // Wi(S, df) has E[W] = df*S, Var(W_ii) = 2*df*S_ii^2, and
        // Var(W_ij) = df*(S_ij^2 + S_ii*S_jj).
        let scale = ParamMatrix::identity() * 2.0;
        let df = 8.0;
        let mut r = rng(15);
        let n = 100_000;
        let mut sum = ParamMatrix::zeros();
        let mut sum_sq_diag = 0.0;
        let mut sum_sq_off = 0.0;
        for _ in 0..n {
            let w = sample_wishart(&scale, df, &mut r).unwrap();
            sum += w;
            sum_sq_diag += (w[(0, 0)] - 16.0).powi(2);
            sum_sq_off += w[(0, 1)].powi(2);
        }
        let emp_mean = sum / n as f64;
        for i in 0..N_PARAMS {
            for j in 0..N_PARAMS {
                let expected = if i == j { 16.0 } else { 0.0 };
                assert!(
                    (emp_mean[(i, j)] - expected).abs() < 0.15,
                    "mean entry ({i},{j}) = {} vs {expected}",
                    emp_mean[(i, j)]
                );
            }
        }
        let var_diag = sum_sq_diag / n as f64;
        let var_off = sum_sq_off / n as f64;
        assert!((var_diag - 64.0).abs() < 3.0, "diagonal variance {var_diag} vs 2*df*S_11^2 = 64");
        assert!((var_off - 32.0).abs() < 1.5, "off-diagonal variance {var_off} vs df*S_11*S_22 = 32");
    }

    #[test]
    fn population_precision_with_zero_scatter_reduces_to_prior_update() {
        // All subjects at mu: the scale matrix is the prior scale and only
        // the degrees of freedom grow, so E[W] = (n + nu) * Omega.
        let priors = Hyperpriors::default();
        let mu = ParamVector::from_row_slice(&[4.0, 1.1, -1.0, -2.5, 1.4, 0.28]);
        let thetas = vec![mu; 3];
        let df = priors.precision_df + 3.0;

        let mut r = rng(16);
        let n = 50_000;
        let mut sum = ParamMatrix::zeros();
        for _ in 0..n {
            sum += sample_population_precision(&thetas, &mu, &priors, &mut r).unwrap();
        }
        let emp_mean = sum / n as f64;
        let expected = priors.precision_scale * df;
        for i in 0..N_PARAMS {
            for j in 0..N_PARAMS {
                assert!(
                    (emp_mean[(i, j)] - expected[(i, j)]).abs() < 0.3,
                    "mean entry ({i},{j}) = {} vs {}",
                    emp_mean[(i, j)],
                    expected[(i, j)]
                );
            }
        }
    }

    #[test]
    fn wishart_rejects_insufficient_degrees_of_freedom() {
        let err = sample_wishart(&ParamMatrix::identity(), 4.0, &mut rng(0)).unwrap_err();
        assert!(matches!(err, Error::Domain(_)), "got {err:?}");
    }

    #[test]
    fn singular_matrices_are_reported() {
        let singular = ParamMatrix::zeros();
        assert!(matches!(spd_inverse(&singular), Err(Error::LinearAlgebra(_))));
        let mean = ParamVector::zeros();
        assert!(sample_mvn_from_precision(&mean, &singular, &mut rng(0)).is_err());
    }

    #[test]
    fn draws_are_reproducible_for_a_fixed_seed() {
        let priors = Hyperpriors::default();
        let run = |seed| {
            let mut r = rng(seed);
            let prec = sample_error_precision(12.0, 40, &priors, &mut r).unwrap();
            let mu = sample_population_mean(&[ParamVector::zeros()], &ParamMatrix::identity(), &priors, &mut r).unwrap();
            let w = sample_wishart(&(ParamMatrix::identity() * 0.5), 9.0, &mut r).unwrap();
            (prec, mu, w)
        };
        let (p1, m1, w1) = run(99);
        let (p2, m2, w2) = run(99);
        assert_eq!(p1, p2);
        assert_eq!(m1, m2);
        assert_eq!(w1, w2);
    }
}
