//! Posterior summaries: population-level means with equal-tail credible
//! intervals on the natural parameter scale, per-subject posterior means,
//! and the spread of individual estimates across the cohort.

use crate::error::{Error, Result};
use crate::inference::ChainOutput;
use crate::{ParamVector, N_PARAMS, PARAM_NAMES};

/// Posterior mean and central 95% credible interval for one quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Per-subject posterior means on both scales.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectEstimates {
    pub subject_id: String,
    /// Mean of the retained log-parameter draws.
    pub mean_log: ParamVector,
    /// Mean of the exponentiated draws (natural scale).
    pub mean_natural: [f64; N_PARAMS],
}

/// Distribution of the per-subject natural-scale estimates for one
/// parameter across the cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortSpread {
    pub name: String,
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub mean: f64,
    pub sd: f64,
    /// Coefficient of variation as a fraction (sd / mean).
    pub cv: f64,
}

/// Full summary of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSummary {
    pub retained: usize,
    /// Natural-scale population parameters, derived from exp(mu) draws.
    pub population: Vec<ParameterSummary>,
    /// Measurement-error standard deviation on the log10 scale.
    pub error_sd: ParameterSummary,
    pub subjects: Vec<SubjectEstimates>,
    /// Spread of individual estimates; empty when the chain has no
    /// subject-level draws.
    pub spread: Vec<CohortSpread>,
}

/// Linear-interpolation quantile of an ascending-sorted sample, with
/// `h = (n - 1) q`.
pub fn quantile(sorted: &[f64], q: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::InsufficientData("quantile of an empty sample".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!("quantile level {q} outside [0, 1]")));
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn sample_sd(values: &[f64], center: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    (values.iter().map(|v| (v - center).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

fn summarize_draws(name: &str, draws: &mut Vec<f64>) -> Result<ParameterSummary> {
    let m = mean(draws);
    draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(ParameterSummary { name: name.into(), mean: m, lower: quantile(draws, 0.025)?, upper: quantile(draws, 0.975)? })
}

/// Summarizes retained draws. Population parameters are reported on the
/// natural scale as the mean and 2.5%/97.5% quantiles of the exponentiated
/// mean-vector draws; the error precision is reported as a standard
/// deviation.
pub fn summarize(chain: &ChainOutput) -> Result<ChainSummary> {
    let retained = chain.population.len();
    if retained == 0 {
        return Err(Error::InsufficientData("chain has no retained draws".into()));
    }

    let mut population = Vec::with_capacity(N_PARAMS);
    for j in 0..N_PARAMS {
        let mut draws: Vec<f64> = chain.population.iter().map(|d| d.mu[j].exp()).collect();
        population.push(summarize_draws(PARAM_NAMES[j], &mut draws)?);
    }

    let mut sd_draws: Vec<f64> = chain.population.iter().map(|d| 1.0 / d.error_prec.sqrt()).collect();
    let error_sd = summarize_draws("error_sd", &mut sd_draws)?;

    let mut subjects = Vec::with_capacity(chain.subjects.len());
    for (id, draws) in chain.subject_ids.iter().zip(&chain.subjects) {
        if draws.len() != retained {
            return Err(Error::InsufficientData(format!(
                "subject {id} has {} draws but the chain retained {retained}",
                draws.len()
            )));
        }
        let mut mean_log = ParamVector::zeros();
        let mut mean_natural = [0.0; N_PARAMS];
        for theta in draws {
            mean_log += theta;
            for j in 0..N_PARAMS {
                mean_natural[j] += theta[j].exp();
            }
        }
        mean_log /= retained as f64;
        for v in &mut mean_natural {
            *v /= retained as f64;
        }
        subjects.push(SubjectEstimates { subject_id: id.clone(), mean_log, mean_natural });
    }

    let mut spread = Vec::new();
    if !subjects.is_empty() {
        for j in 0..N_PARAMS {
            let estimates: Vec<f64> = subjects.iter().map(|s| s.mean_natural[j]).collect();
            spread.push(cohort_spread(PARAM_NAMES[j], &estimates)?);
        }
    }

    Ok(ChainSummary { retained, population, error_sd, subjects, spread })
}

/// Min/median/max/mean/SD/CV of one parameter's individual estimates.
pub fn cohort_spread(name: &str, estimates: &[f64]) -> Result<CohortSpread> {
    if estimates.is_empty() {
        return Err(Error::InsufficientData("cohort spread of an empty estimate set".into()));
    }
    let mut sorted = estimates.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = mean(estimates);
    let sd = sample_sd(estimates, m);
    Ok(CohortSpread {
        name: name.into(),
        min: sorted[0],
        median: quantile(&sorted, 0.5)?,
        max: *sorted.last().unwrap(),
        mean: m,
        sd,
        cv: sd / m,
    })
}
