//! Synthetic-cohort generation and treatment-response analyses.
//!
//! [`simulate_cohort`] draws subject-level log parameters from a known
//! population, generates per-subject drug-efficacy inputs (trough
//! concentrations, adherence lapses, optional resistance emergence), runs
//! the dynamics forward, and adds Gaussian noise to the log10 viral loads.
//! The ground truth is returned alongside the dataset, which makes recovery
//! studies self-contained.
//!
//! The analysis half classifies each subject's virological response from
//! the measurement series alone, correlates baseline factors with fitted
//! parameters (Spearman), and compares parameters between response groups
//! (Wilcoxon rank sum).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{Covariates, Observation, SubjectRecord, SubjectTrajectory};
use crate::efficacy::{AdherenceProfile, DrugInputs, EfficacyInputs, Ic50Profile};
use crate::error::{Error, Result};
use crate::inference::SubjectEstimates;
use crate::ode::{
    efficacy_threshold, predict_log10_viral_load, DynamicParams, IntegratorConfig, RHO_COPIES_PER_ML,
};
use crate::stats::{spearman, wilcoxon_rank_sum};
use crate::{ParamMatrix, ParamVector, N_PARAMS, PARAM_NAMES};

pub use crate::stats::{Correlation, RankSumTest};

/// Viral-load threshold (copies/mL) separating suppression from failure in
/// the response classification.
pub const RESPONSE_THRESHOLD_COPIES: f64 = 200.0;

/// Study design for a synthetic cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortDesign {
    pub n_subjects: usize,
    /// Scheduled measurement days, nondecreasing and starting at 0. Also
    /// used as the adherence-interval boundaries.
    pub observation_days: Vec<f64>,
    /// Population mean of the log parameters.
    pub mu_true: ParamVector,
    /// Population covariance of the log parameters.
    pub sigma_true: ParamMatrix,
    /// Measurement-error standard deviation on the log10 scale. Day-0
    /// measurements are noise-free: the model treats them as the known
    /// initial condition.
    pub error_sd: f64,
    /// Probability that a subject develops resistance on one drug (a
    /// ramping IC50).
    pub resistance_fraction: f64,
    /// Per-interval probability of an adherence lapse.
    pub lapse_probability: f64,
    /// Redraw budget per subject for parameter draws that cannot be
    /// simulated (no infection, or solver failure).
    pub max_redraws: u32,
}

impl Default for CohortDesign {
    fn default() -> Self {
        Self {
            n_subjects: 42,
            observation_days: vec![0.0, 7.0, 14.0, 28.0, 56.0, 84.0, 112.0, 140.0, 168.0],
            mu_true: ParamVector::from_row_slice(&[4.0, 1.1, -1.0, -2.5, 1.4, 0.28]),
            sigma_true: ParamMatrix::identity() * 0.04,
            error_sd: 0.25,
            resistance_fraction: 0.35,
            lapse_probability: 0.3,
            max_redraws: 200,
        }
    }
}

impl CohortDesign {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 {
            return Err(Error::Config("cohort needs at least one subject".into()));
        }
        match self.observation_days.first() {
            Some(&first) if first == 0.0 => {}
            _ => return Err(Error::Config("observation days must start at 0".into())),
        }
        if self.observation_days.len() < 2 {
            return Err(Error::Config("need at least two observation days".into()));
        }
        if self.observation_days.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("observation days must be strictly increasing".into()));
        }
        if !(self.error_sd >= 0.0 && self.error_sd.is_finite()) {
            return Err(Error::Config(format!("error standard deviation {} must be nonnegative", self.error_sd)));
        }
        for (name, p) in [("resistance_fraction", self.resistance_fraction), ("lapse_probability", self.lapse_probability)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} {p} must lie in [0, 1]")));
            }
        }
        if nalgebra::Cholesky::new(self.sigma_true).is_none() {
            return Err(Error::Config("population covariance must be positive definite".into()));
        }
        Ok(())
    }
}

/// Ground truth for one simulated subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectTruth {
    pub subject_id: String,
    pub log_params: ParamVector,
    /// Parameter draws discarded before this subject could be simulated.
    pub redraws: u32,
}

/// A simulated dataset with its generating parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedCohort {
    pub records: Vec<SubjectRecord>,
    pub truth: Vec<SubjectTruth>,
}

// Subjects with R0 at or below this bound are redrawn: the untreated
// equilibrium used as the baseline needs a clearly established infection.
const MIN_SIMULATED_R0: f64 = 1.01;

/// Simulates a cohort. The same seed reproduces the cohort exactly.
pub fn simulate_cohort(design: &CohortDesign, seed: u64) -> Result<SimulatedCohort> {
    design.validate()?;
    let chol = nalgebra::Cholesky::new(design.sigma_true)
        .ok_or_else(|| Error::LinearAlgebra("population covariance is not positive definite".into()))?;
    let scale = chol.l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = IntegratorConfig::default();
    let days = &design.observation_days;

    let mut records = Vec::with_capacity(design.n_subjects);
    let mut truth = Vec::with_capacity(design.n_subjects);
    for i in 0..design.n_subjects {
        let subject_id = format!("S{:03}", i + 1);
        let mut redraws = 0u32;
        loop {
            if redraws > design.max_redraws {
                return Err(Error::Evaluation(format!(
                    "subject {subject_id} exhausted {} redraws; the design rarely produces a simulable infection",
                    design.max_redraws
                )));
            }
            let z = ParamVector::from_fn(|_, _| rng.sample(StandardNormal));
            let theta = design.mu_true + scale * z;
            let Ok(params) = DynamicParams::from_log_vector(&theta) else {
                redraws += 1;
                continue;
            };
            if params.r0() <= MIN_SIMULATED_R0 {
                redraws += 1;
                continue;
            }

            let efficacy = draw_efficacy_inputs(design, days, &mut rng)?;
            let baseline_copies = RHO_COPIES_PER_ML * params.rho() * (params.r0() - 1.0);
            let Ok(fitted) = predict_log10_viral_load(&params, &efficacy, baseline_copies, days, &config) else {
                redraws += 1;
                continue;
            };

            let observations: Vec<Observation> = days
                .iter()
                .zip(&fitted)
                .map(|(day, f)| {
                    let noise: f64 = rng.sample(StandardNormal);
                    let log10_vl = if *day == 0.0 { *f } else { f + design.error_sd * noise };
                    Observation { day: *day, log10_vl }
                })
                .collect();
            if observations.iter().any(|o| !o.log10_vl.is_finite()) {
                redraws += 1;
                continue;
            }

            let cd4: f64 = 350.0 + 150.0 * rng.sample::<f64, _>(StandardNormal);
            let weight: f64 = 72.0 + 12.0 * rng.sample::<f64, _>(StandardNormal);
            let covariates = Covariates {
                cd4: Some(cd4.clamp(20.0, 1500.0)),
                age: Some(rng.random_range(21.0..65.0)),
                weight: Some(weight.clamp(40.0, 140.0)),
            };

            records.push(SubjectRecord { subject_id: subject_id.clone(), observations, efficacy, covariates });
            truth.push(SubjectTruth { subject_id, log_params: theta, redraws });
            break;
        }
    }
    Ok(SimulatedCohort { records, truth })
}

fn draw_efficacy_inputs(design: &CohortDesign, days: &[f64], rng: &mut ChaCha8Rng) -> Result<EfficacyInputs> {
    let cmin = [rng.random_range(40.0..120.0), rng.random_range(30.0..90.0)];
    let i0 = [rng.random_range(4.0..12.0), rng.random_range(4.0..12.0)];

    let resistant_drug = if rng.random::<f64>() < design.resistance_fraction {
        Some(usize::from(rng.random::<bool>()))
    } else {
        None
    };

    // Both drugs share the adherence pattern: missed doses affect the whole
    // regimen.
    let rates: Vec<f64> = (1..days.len())
        .map(|_| {
            if rng.random::<f64>() < design.lapse_probability {
                rng.random_range(0.3..0.9)
            } else {
                1.0
            }
        })
        .collect();

    let mut drugs = Vec::with_capacity(2);
    for d in 0..2 {
        let ic50 = match resistant_drug {
            Some(r) if r == d => {
                let tr = rng.random_range(56.0..150.0);
                let ir = i0[d] * rng.random_range(2.0..8.0);
                Ic50Profile::new(i0[d], ir, Some(tr))?
            }
            _ => Ic50Profile::constant(i0[d])?,
        };
        let adherence = AdherenceProfile::new(days.to_vec(), rates.clone())?;
        drugs.push(DrugInputs::new(cmin[d], ic50, adherence)?);
    }
    let second = drugs.pop().unwrap();
    let first = drugs.pop().unwrap();
    Ok(EfficacyInputs::new(first, second))
}

/// Protocol-style virological response over the 24-week study window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseStatus {
    /// Two consecutive measurements below 200 copies/mL at any point.
    Success,
    /// Confirmed failure: either two consecutive measurements at or above
    /// 200 copies/mL within week 8 with less than a 1.0-log10 drop from
    /// baseline by week 8, or follow-up through week 24 without confirmed
    /// suppression.
    Failure,
    /// Not classifiable from the available measurements.
    Missing,
}

const WEEK_8_DAY: f64 = 56.0;
const WEEK_24_DAY: f64 = 168.0;

/// Classifies a subject from the measurement series. "Consecutive" means
/// two adjacent scheduled measurements; comparisons use 200 copies/mL on
/// the log10 scale.
pub fn classify_response(record: &SubjectRecord) -> ResponseStatus {
    let threshold = RESPONSE_THRESHOLD_COPIES.log10();
    let obs = &record.observations;
    if obs.len() < 2 {
        return ResponseStatus::Missing;
    }

    let suppressed_pair = obs.windows(2).any(|w| w[0].log10_vl < threshold && w[1].log10_vl < threshold);
    if suppressed_pair {
        return ResponseStatus::Success;
    }

    // Early confirmed failure: a confirmed high pair within week 8 plus an
    // inadequate drop from baseline at the last week-8 measurement.
    if let Some(baseline) = record.baseline_log10_vl() {
        let high_pair_by_week8 = obs
            .windows(2)
            .any(|w| w[1].day <= WEEK_8_DAY && w[0].log10_vl >= threshold && w[1].log10_vl >= threshold);
        let last_by_week8 = obs.iter().filter(|o| o.day <= WEEK_8_DAY).next_back();
        if let (true, Some(last)) = (high_pair_by_week8, last_by_week8) {
            if baseline - last.log10_vl < 1.0 {
                return ResponseStatus::Failure;
            }
        }
    }

    // Full follow-up without confirmed suppression.
    if obs.last().is_some_and(|o| o.day >= WEEK_24_DAY) {
        return ResponseStatus::Failure;
    }
    ResponseStatus::Missing
}

/// One row of the baseline-correlation table.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationRow {
    pub parameter: String,
    pub factor: String,
    pub rho: f64,
    pub p_value: f64,
    /// Subjects contributing to this pair after dropping missing factors.
    pub n: usize,
}

/// Baseline factors paired with natural-scale parameter estimates for one
/// subject.
struct AlignedSubject<'a> {
    estimates: &'a SubjectEstimates,
    baseline_vl: f64,
    cd4: Option<f64>,
}

fn align<'a>(estimates: &'a [SubjectEstimates], records: &'a [SubjectRecord]) -> Result<Vec<AlignedSubject<'a>>> {
    estimates
        .iter()
        .map(|e| {
            let record = records
                .iter()
                .find(|r| r.subject_id == e.subject_id)
                .ok_or_else(|| Error::InsufficientData(format!("no record for subject {}", e.subject_id)))?;
            let baseline_vl = record
                .baseline_log10_vl()
                .ok_or_else(|| Error::InsufficientData(format!("subject {} lacks a baseline", e.subject_id)))?;
            Ok(AlignedSubject { estimates: e, baseline_vl, cd4: record.covariates.cd4 })
        })
        .collect()
}

/// Spearman correlation of each baseline factor (baseline log10 viral load
/// and baseline CD4) with each natural-scale parameter estimate. Subjects
/// without a recorded CD4 are dropped from the CD4 rows; the second return
/// value counts them.
pub fn correlate_baseline(
    estimates: &[SubjectEstimates],
    records: &[SubjectRecord],
) -> Result<(Vec<CorrelationRow>, usize)> {
    let aligned = align(estimates, records)?;
    let missing_cd4 = aligned.iter().filter(|s| s.cd4.is_none()).count();

    let mut rows = Vec::with_capacity(2 * N_PARAMS);
    for j in 0..N_PARAMS {
        let params: Vec<f64> = aligned.iter().map(|s| s.estimates.mean_natural[j]).collect();
        let vls: Vec<f64> = aligned.iter().map(|s| s.baseline_vl).collect();
        let c = spearman(&vls, &params)?;
        rows.push(CorrelationRow {
            parameter: PARAM_NAMES[j].into(),
            factor: "baseline_log10_vl".into(),
            rho: c.rho,
            p_value: c.p_value,
            n: aligned.len(),
        });

        let with_cd4: Vec<(f64, f64)> = aligned
            .iter()
            .filter_map(|s| s.cd4.map(|cd4| (cd4, s.estimates.mean_natural[j])))
            .collect();
        let cd4s: Vec<f64> = with_cd4.iter().map(|p| p.0).collect();
        let pars: Vec<f64> = with_cd4.iter().map(|p| p.1).collect();
        let c = spearman(&cd4s, &pars)?;
        rows.push(CorrelationRow {
            parameter: PARAM_NAMES[j].into(),
            factor: "baseline_cd4".into(),
            rho: c.rho,
            p_value: c.p_value,
            n: with_cd4.len(),
        });
    }
    Ok((rows, missing_cd4))
}

/// One row of the success-versus-failure comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub parameter: String,
    /// Rank sum of the success group in the pooled ranking.
    pub statistic: f64,
    pub p_value: f64,
    pub n_success: usize,
    pub n_failure: usize,
}

/// Compares each parameter between responders and failures with the
/// Wilcoxon rank-sum test. Missing-status subjects are excluded; the second
/// return value counts them.
pub fn compare_groups(
    estimates: &[SubjectEstimates],
    statuses: &[(String, ResponseStatus)],
) -> Result<(Vec<ComparisonRow>, usize)> {
    let status_of = |id: &str| {
        statuses
            .iter()
            .find(|(sid, _)| sid == id)
            .map(|(_, s)| *s)
            .ok_or_else(|| Error::InsufficientData(format!("no response status for subject {id}")))
    };

    let mut success = Vec::new();
    let mut failure = Vec::new();
    let mut missing = 0usize;
    for e in estimates {
        match status_of(&e.subject_id)? {
            ResponseStatus::Success => success.push(e),
            ResponseStatus::Failure => failure.push(e),
            ResponseStatus::Missing => missing += 1,
        }
    }
    if success.is_empty() || failure.is_empty() {
        return Err(Error::InsufficientData(format!(
            "group comparison needs both groups nonempty, got {} successes and {} failures",
            success.len(),
            failure.len()
        )));
    }

    let mut rows = Vec::with_capacity(N_PARAMS);
    for j in 0..N_PARAMS {
        let a: Vec<f64> = success.iter().map(|e| e.mean_natural[j]).collect();
        let b: Vec<f64> = failure.iter().map(|e| e.mean_natural[j]).collect();
        let t = wilcoxon_rank_sum(&a, &b)?;
        rows.push(ComparisonRow {
            parameter: PARAM_NAMES[j].into(),
            statistic: t.statistic,
            p_value: t.p_value,
            n_success: a.len(),
            n_failure: b.len(),
        });
    }
    Ok((rows, missing))
}

/// Evaluates each subject's fitted trajectory and efficacy curve on a daily
/// grid from 0 to the subject's last observation day, using the
/// natural-scale posterior means as the point estimate. Solver failures
/// leave gaps rather than aborting.
pub fn compute_trajectories(
    records: &[SubjectRecord],
    estimates: &[SubjectEstimates],
    config: &IntegratorConfig,
) -> Result<Vec<SubjectTrajectory>> {
    let aligned = align(estimates, records)?;
    let mut out = Vec::with_capacity(aligned.len());
    for s in &aligned {
        let record = records.iter().find(|r| r.subject_id == s.estimates.subject_id).unwrap();
        let e = s.estimates.mean_natural;
        let params = DynamicParams::from_natural(e[0], e[1], e[2], e[3], e[4], e[5])?;
        let horizon = record.observations.last().map_or(0.0, |o| o.day);
        let days: Vec<f64> = (0..=horizon.ceil() as usize).map(|d| d as f64).collect();

        let gamma: Result<Vec<f64>> = days.iter().map(|t| record.efficacy.gamma(params.phi(), *t)).collect();
        let gamma = gamma?;
        let fitted = match predict_log10_viral_load(
            &params,
            &record.efficacy,
            10f64.powf(s.baseline_vl),
            &days,
            config,
        ) {
            Ok(values) => values.into_iter().map(Some).collect(),
            Err(_) => vec![None; days.len()],
        };
        out.push(SubjectTrajectory {
            subject_id: record.subject_id.clone(),
            days,
            fitted_log10_vl: fitted,
            gamma,
            efficacy_threshold: efficacy_threshold(params.r0())?,
        });
    }
    Ok(out)
}
