//! Hierarchical Bayesian fitting of the viral-dynamic model.
//!
//! The model has three stages. Within a subject, measured log10 viral loads
//! equal the model-predicted trajectory plus iid Gaussian error. Across
//! subjects, the six log parameters `(log phi, log c, log delta, log d_T,
//! log rho, log R0)` are multivariate normal with population mean `mu` and
//! covariance `Sigma`. The third stage places conjugate hyperpriors on the
//! population quantities: gamma on the error precision, normal on `mu`, and
//! Wishart on `Sigma^-1`.
//!
//! Fitting alternates closed-form Gibbs draws for the population blocks
//! (see [`conjugate`]) with a random-walk Metropolis update of each
//! subject's log parameters (see [`metropolis`]). Subject updates within a
//! sweep are independent given the population state, so they run in
//! parallel; every random-number stream is owned by exactly one updater, so
//! results are bit-identical for any worker count.

pub mod conjugate;
pub mod metropolis;
pub mod summary;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::SubjectRecord;
use crate::error::{Error, Result};
use crate::{ParamMatrix, ParamVector, N_PARAMS};

pub use conjugate::{
    sample_error_precision, sample_mvn_from_precision, sample_population_mean, sample_population_precision,
    sample_wishart,
};
pub use metropolis::{
    log_likelihood_subject, log_target_theta, mh_step_theta, OdeModel, PopulationState, SubjectModel, SubjectState,
    INITIAL_STEP_SCALE, TARGET_ACCEPTANCE,
};
pub use summary::{summarize, ChainSummary, CohortSpread, ParameterSummary, SubjectEstimates};

/// Hyperprior settings for the population stage.
///
/// Defaults encode a weakly informative prior: error-precision shape 4.5
/// and scale 9, population mean centered at
/// `(4.0, 1.1, -1.0, -2.5, 1.4, 0.28)` with variance 1000 per component,
/// and a Wishart prior with 8 degrees of freedom and scale `2 I` on the
/// population precision matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperpriors {
    /// Gamma shape for the measurement-error precision.
    pub error_shape: f64,
    /// Gamma scale for the measurement-error precision (prior mean is
    /// shape * scale).
    pub error_scale: f64,
    /// Prior mean of the population mean vector.
    pub mean_loc: ParamVector,
    /// Prior covariance of the population mean vector.
    pub mean_cov: ParamMatrix,
    /// Scale matrix of the Wishart prior on the population precision.
    pub precision_scale: ParamMatrix,
    /// Degrees of freedom of the Wishart prior.
    pub precision_df: f64,
}

impl Default for Hyperpriors {
    fn default() -> Self {
        Self {
            error_shape: 4.5,
            error_scale: 9.0,
            mean_loc: ParamVector::from_row_slice(&[4.0, 1.1, -1.0, -2.5, 1.4, 0.28]),
            mean_cov: ParamMatrix::identity() * 1000.0,
            precision_scale: ParamMatrix::identity() * 2.0,
            precision_df: 8.0,
        }
    }
}

impl Hyperpriors {
    pub fn validate(&self) -> Result<()> {
        if !(self.error_shape > 0.0 && self.error_shape.is_finite()) || !(self.error_scale > 0.0 && self.error_scale.is_finite()) {
            return Err(Error::Config(format!(
                "error-precision prior needs positive shape and scale, got {} and {}",
                self.error_shape, self.error_scale
            )));
        }
        if self.mean_loc.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("population-mean prior location must be finite".into()));
        }
        if self.precision_df <= (N_PARAMS - 1) as f64 {
            return Err(Error::Config(format!(
                "Wishart degrees of freedom {} must exceed {}",
                self.precision_df,
                N_PARAMS - 1
            )));
        }
        conjugate::spd_inverse(&self.mean_cov)
            .map_err(|_| Error::Config("population-mean prior covariance must be positive definite".into()))?;
        conjugate::spd_inverse(&self.precision_scale)
            .map_err(|_| Error::Config("Wishart scale matrix must be positive definite".into()))?;
        Ok(())
    }
}

/// Sampler schedule and execution settings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct McmcConfig {
    /// Sweeps discarded before retention begins. Proposal scales adapt only
    /// during this phase.
    pub burn_in: u64,
    /// Post-burn-in sweeps.
    pub iterations: u64,
    /// Every `thin`-th post-burn-in sweep is retained.
    pub thin: u64,
    pub seed: u64,
    /// Worker threads for the subject updates; 0 uses all available cores
    /// and 1 runs sequentially. The draws are identical either way.
    pub workers: usize,
    /// Disable to keep proposal scales fixed during burn-in.
    pub adapt: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self { burn_in: 30_000, iterations: 120_000, thin: 5, seed: 1, workers: 1, adapt: true }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::Config("thinning interval must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of draws a full run retains.
    pub fn retained(&self) -> u64 {
        self.iterations / self.thin
    }
}

/// One retained population-level draw.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationDraw {
    pub mu: ParamVector,
    pub sigma_inv: ParamMatrix,
    pub error_prec: f64,
}

/// Retained draws and bookkeeping from one chain run. Subjects are in
/// canonical order (sorted by id), which is also the stream layout of the
/// per-subject random-number generators.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub subject_ids: Vec<String>,
    /// Sweep index of each retained draw.
    pub iterations: Vec<u64>,
    pub population: Vec<PopulationDraw>,
    /// Retained log-parameter draws, indexed `[subject][draw]`.
    pub subjects: Vec<Vec<ParamVector>>,
    /// Post-burn-in acceptance rate per subject.
    pub acceptance: Vec<f64>,
    pub seed: u64,
    pub config: McmcConfig,
}

/// A chain abort that preserves the draws retained before the failure.
#[derive(Debug, thiserror::Error)]
#[error("chain aborted at sweep {iteration}: {source}")]
pub struct ChainError {
    pub iteration: u64,
    pub partial: ChainOutput,
    #[source]
    pub source: Error,
}

pub type ChainResult = std::result::Result<ChainOutput, Box<ChainError>>;

struct SubjectWorker<'a> {
    record: &'a SubjectRecord,
    state: SubjectState,
    rng: ChaCha8Rng,
    post_accepts: u64,
}

/// Runs the sampler with the production ODE-based response model.
pub fn run_chain(records: &[SubjectRecord], priors: &Hyperpriors, config: &McmcConfig) -> ChainResult {
    run_chain_with(&OdeModel::default(), records, priors, config, |_, _| {})
}

/// Runs the sampler with a caller-supplied response model; `progress` is
/// called after every sweep with `(completed, total)`.
///
/// An empty `records` slice runs the population blocks against their
/// priors, which is useful for validating the sampler: every retained draw
/// then comes from the prior itself.
pub fn run_chain_with<M: SubjectModel, F: FnMut(u64, u64)>(
    model: &M,
    records: &[SubjectRecord],
    priors: &Hyperpriors,
    config: &McmcConfig,
    mut progress: F,
) -> ChainResult {
    let subject_ids: Vec<String> = {
        let mut ids: Vec<&str> = records.iter().map(|r| r.subject_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.into_iter().map(str::to_owned).collect()
    };

    let empty_output = |ids: &[String]| ChainOutput {
        subject_ids: ids.to_vec(),
        iterations: Vec::new(),
        population: Vec::new(),
        subjects: vec![Vec::new(); ids.len()],
        acceptance: vec![0.0; ids.len()],
        seed: config.seed,
        config: config.clone(),
    };
    let setup_err = |source: Error, ids: &[String]| {
        Box::new(ChainError { iteration: 0, partial: empty_output(ids), source })
    };

    if subject_ids.len() != records.len() {
        return Err(setup_err(Error::Config("subject ids must be unique".into()), &subject_ids));
    }
    if let Err(e) = priors.validate().and_then(|()| config.validate()) {
        return Err(setup_err(e, &subject_ids));
    }
    for r in records {
        if let Err(e) = r.validate_for_fit() {
            return Err(setup_err(e, &subject_ids));
        }
    }

    // Canonical subject order: sorted by id. Stream k + 1 belongs to the
    // k-th subject in this order, stream 0 to the population blocks.
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[a].subject_id.cmp(&records[b].subject_id));

    let mut pop_rng = ChaCha8Rng::seed_from_u64(config.seed);
    pop_rng.set_stream(0);

    let mut workers: Vec<SubjectWorker> = Vec::with_capacity(records.len());
    for (k, &idx) in order.iter().enumerate() {
        let record = &records[idx];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(k as u64 + 1);
        let state = SubjectState::new(model, priors.mean_loc, record);
        if !state.residual_ss.is_finite() {
            return Err(setup_err(
                Error::Evaluation(format!(
                    "initial log parameters are unevaluable for subject {}",
                    record.subject_id
                )),
                &subject_ids,
            ));
        }
        workers.push(SubjectWorker { record, state, rng, post_accepts: 0 });
    }

    let pool = match config.workers {
        1 => None,
        n => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| setup_err(Error::Config(format!("cannot build worker pool: {e}")), &subject_ids))?,
        ),
    };

    let total = config.burn_in + config.iterations;
    let mut iterations = Vec::new();
    let mut population = Vec::new();
    let mut subject_draws: Vec<Vec<ParamVector>> = vec![Vec::new(); workers.len()];
    let mut pop = PopulationState {
        mu: priors.mean_loc,
        sigma_inv: conjugate::symmetrize(&(priors.precision_scale * priors.precision_df)),
        error_prec: priors.error_shape * priors.error_scale,
    };

    let mut post_done = 0u64;
    for t in 1..=total {
        let abort = |source: Error,
                     iterations: Vec<u64>,
                     population: Vec<PopulationDraw>,
                     subject_draws: Vec<Vec<ParamVector>>,
                     workers: &[SubjectWorker],
                     post_done: u64| {
            let denom = post_done.max(1) as f64;
            Box::new(ChainError {
                iteration: t,
                partial: ChainOutput {
                    subject_ids: subject_ids.clone(),
                    iterations,
                    population,
                    subjects: subject_draws,
                    acceptance: workers.iter().map(|w| w.post_accepts as f64 / denom).collect(),
                    seed: config.seed,
                    config: config.clone(),
                },
                source,
            })
        };

        // Population blocks, in a fixed order on the population stream.
        let residual_ss: f64 = workers.iter().map(|w| w.state.residual_ss).sum();
        let total_obs: usize = workers.iter().map(|w| w.record.observations.len()).sum();
        let thetas: Vec<ParamVector> = workers.iter().map(|w| w.state.theta).collect();

        let step = sample_error_precision(residual_ss, total_obs, priors, &mut pop_rng)
            .and_then(|error_prec| {
                sample_population_mean(&thetas, &pop.sigma_inv, priors, &mut pop_rng).map(|mu| (error_prec, mu))
            })
            .and_then(|(error_prec, mu)| {
                sample_population_precision(&thetas, &mu, priors, &mut pop_rng)
                    .map(|sigma_inv| PopulationState { mu, sigma_inv, error_prec })
            });
        pop = match step {
            Ok(p) => p,
            Err(e) => return Err(abort(e, iterations, population, subject_draws, &workers, post_done)),
        };

        // Subject blocks, each on its own stream.
        let in_burn_in = t <= config.burn_in;
        let adapt_gain = (in_burn_in && config.adapt).then(|| (t as f64).powf(-0.6));
        let update = |w: &mut SubjectWorker| {
            let accepted = mh_step_theta(model, &mut w.state, w.record, &pop, &mut w.rng, adapt_gain);
            if !in_burn_in {
                w.post_accepts += u64::from(accepted);
            }
        };
        match &pool {
            None => workers.iter_mut().for_each(update),
            Some(pool) => pool.install(|| workers.par_iter_mut().for_each(update)),
        }
        if !in_burn_in {
            post_done += 1;
        }

        if !in_burn_in && (t - config.burn_in) % config.thin == 0 {
            iterations.push(t);
            population.push(PopulationDraw {
                mu: pop.mu,
                sigma_inv: pop.sigma_inv,
                error_prec: pop.error_prec,
            });
            for (k, w) in workers.iter().enumerate() {
                subject_draws[k].push(w.state.theta);
            }
        }
        progress(t, total);
    }

    let denom = post_done.max(1) as f64;
    Ok(ChainOutput {
        subject_ids,
        iterations,
        population,
        subjects: subject_draws,
        acceptance: workers.iter().map(|w| w.post_accepts as f64 / denom).collect(),
        seed: config.seed,
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Covariates, Observation, SubjectRecord};
    use crate::efficacy::EfficacyInputs;
    use crate::ode::{predict_log10_viral_load, DynamicParams, IntegratorConfig};
    use crate::stats::ks_distance;
    use rand::Rng;
    use statrs::distribution::ContinuousCDF;

    fn small_config(seed: u64, workers: usize) -> McmcConfig {
        McmcConfig { burn_in: 60, iterations: 120, thin: 4, seed, workers, adapt: true }
    }

    /// Subjects whose data were generated from the model near the prior
    /// center, with deterministic noise.
    fn synthetic_records(n: usize) -> Vec<SubjectRecord> {
        let priors = Hyperpriors::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5150);
        let days: Vec<f64> = vec![0.0, 7.0, 14.0, 28.0, 56.0, 84.0, 112.0];
        (0..n)
            .map(|i| {
                let mut theta = priors.mean_loc;
                for v in theta.iter_mut() {
                    *v += 0.1 * rng.random_range(-1.0..1.0);
                }
                let params = DynamicParams::from_log_vector(&theta).unwrap();
                let efficacy = EfficacyInputs::constant(50.0, 5.0, 30.0, 6.0).unwrap();
                // Baseline at the untreated equilibrium for this subject.
                let v0 = params.r0() - 1.0;
                let baseline = 1e4 * params.rho() * v0;
                let fitted =
                    predict_log10_viral_load(&params, &efficacy, baseline, &days, &IntegratorConfig::default())
                        .unwrap();
                let observations = days
                    .iter()
                    .zip(&fitted)
                    .map(|(d, f)| Observation {
                        day: *d,
                        log10_vl: f + if *d == 0.0 { 0.0 } else { 0.2 * rng.random_range(-1.0..1.0) },
                    })
                    .collect();
                SubjectRecord {
                    subject_id: format!("S{:02}", i + 1),
                    observations,
                    efficacy,
                    covariates: Covariates::default(),
                }
            })
            .collect()
    }

    #[test]
    fn prior_only_run_reproduces_the_priors() {
        // With no subjects every conditional collapses to its prior, so the
        // retained draws are iid prior samples.
        let priors = Hyperpriors::default();
        let config = McmcConfig { burn_in: 100, iterations: 4000, thin: 1, seed: 31, workers: 1, adapt: true };
        let chain = run_chain(&[], &priors, &config).unwrap();
        assert_eq!(chain.population.len(), 4000);
        assert!(chain.subjects.is_empty());

        let mut prec_draws: Vec<f64> = chain.population.iter().map(|d| d.error_prec).collect();
        let mean = prec_draws.iter().sum::<f64>() / prec_draws.len() as f64;
        assert!((mean - 40.5).abs() < 1.3, "error-precision prior mean {mean} should be near 40.5");

        // statrs parameterizes Gamma by rate, so scale 9 becomes rate 1/9.
        let gamma = statrs::distribution::Gamma::new(priors.error_shape, 1.0 / priors.error_scale).unwrap();
        let d = ks_distance(&mut prec_draws, |x| gamma.cdf(x)).unwrap();
        assert!(d < 0.03, "Kolmogorov-Smirnov distance to the gamma prior is {d}");

        let mut mu_mean = ParamVector::zeros();
        for draw in &chain.population {
            mu_mean += draw.mu;
        }
        mu_mean /= chain.population.len() as f64;
        for j in 0..N_PARAMS {
            // Prior variance 1000 gives a Monte Carlo standard error of 0.5.
            assert!(
                (mu_mean[j] - priors.mean_loc[j]).abs() < 2.0,
                "mu component {j} prior mean {} vs {}",
                mu_mean[j],
                priors.mean_loc[j]
            );
        }

        let mut prec_mean = ParamMatrix::zeros();
        for draw in &chain.population {
            prec_mean += draw.sigma_inv;
        }
        prec_mean /= chain.population.len() as f64;
        for i in 0..N_PARAMS {
            for j in 0..N_PARAMS {
                let expected = if i == j { 16.0 } else { 0.0 };
                assert!(
                    (prec_mean[(i, j)] - expected).abs() < 0.8,
                    "precision prior mean entry ({i},{j}) = {}",
                    prec_mean[(i, j)]
                );
            }
        }
    }

    #[test]
    fn chains_are_reproducible_and_worker_count_invariant() {
        let records = synthetic_records(3);
        let priors = Hyperpriors::default();

        let a = run_chain(&records, &priors, &small_config(7, 1)).unwrap();
        let b = run_chain(&records, &priors, &small_config(7, 1)).unwrap();
        assert_eq!(a, b, "same seed must reproduce the chain exactly");

        let c = run_chain(&records, &priors, &small_config(7, 3)).unwrap();
        assert_eq!(a.population, c.population, "worker count must not change population draws");
        assert_eq!(a.subjects, c.subjects, "worker count must not change subject draws");

        let d = run_chain(&records, &priors, &small_config(8, 1)).unwrap();
        assert_ne!(a.population, d.population, "different seeds must differ");
    }

    #[test]
    fn subject_order_does_not_affect_draws() {
        let mut records = synthetic_records(3);
        let priors = Hyperpriors::default();
        let a = run_chain(&records, &priors, &small_config(9, 1)).unwrap();
        records.reverse();
        let b = run_chain(&records, &priors, &small_config(9, 1)).unwrap();
        assert_eq!(a, b, "input order must not matter; subjects are keyed by id");
    }

    #[test]
    fn acceptance_rates_are_tracked_per_subject() {
        let records = synthetic_records(2);
        let priors = Hyperpriors::default();
        let chain = run_chain(&records, &priors, &small_config(11, 1)).unwrap();
        assert_eq!(chain.acceptance.len(), 2);
        for (id, rate) in chain.subject_ids.iter().zip(&chain.acceptance) {
            assert!((0.0..=1.0).contains(rate), "subject {id} acceptance {rate} out of range");
            assert!(*rate > 0.0, "subject {id} never accepted a move");
        }
        assert_eq!(chain.population.len(), 30);
        assert_eq!(chain.iterations.first(), Some(&64));
        assert_eq!(chain.iterations.last(), Some(&180));
    }

    #[test]
    fn unevaluable_initial_state_aborts_with_context() {
        struct NeverModel;
        impl SubjectModel for NeverModel {
            fn residual_ss(&self, _: &ParamVector, _: &SubjectRecord) -> f64 {
                f64::INFINITY
            }
        }
        let records = synthetic_records(1);
        let err =
            run_chain_with(&NeverModel, &records, &Hyperpriors::default(), &small_config(1, 1), |_, _| {}).unwrap_err();
        assert_eq!(err.iteration, 0);
        assert!(err.partial.population.is_empty());
        assert!(matches!(err.source, Error::Evaluation(_)));
    }

    #[test]
    fn duplicate_ids_and_bad_configs_are_rejected() {
        let mut records = synthetic_records(2);
        records[1].subject_id = records[0].subject_id.clone();
        let err = run_chain(&records, &Hyperpriors::default(), &small_config(1, 1)).unwrap_err();
        assert!(matches!(err.source, Error::Config(_)));

        let records = synthetic_records(1);
        let mut config = small_config(1, 1);
        config.thin = 0;
        let err = run_chain(&records, &Hyperpriors::default(), &config).unwrap_err();
        assert!(matches!(err.source, Error::Config(_)));

        let mut priors = Hyperpriors::default();
        priors.precision_df = 2.0;
        let err = run_chain(&records, &priors, &small_config(1, 1)).unwrap_err();
        assert!(matches!(err.source, Error::Config(_)));
    }

    #[test]
    fn progress_is_reported_every_sweep() {
        let priors = Hyperpriors::default();
        let config = McmcConfig { burn_in: 5, iterations: 10, thin: 2, seed: 1, workers: 1, adapt: true };
        let mut calls = Vec::new();
        run_chain_with(&OdeModel::default(), &[], &priors, &config, |done, total| calls.push((done, total))).unwrap();
        assert_eq!(calls.len(), 15);
        assert_eq!(calls.first(), Some(&(1, 15)));
        assert_eq!(calls.last(), Some(&(15, 15)));
    }
}
