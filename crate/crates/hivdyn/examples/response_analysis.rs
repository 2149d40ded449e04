//! After a fit, individual parameter estimates can be related back to the
//! clinic: correlate them with baseline factors, and contrast treatment
//! successes against failures. This example runs both analyses on a
//! simulated cohort, using each subject's true parameters in place of
//! posterior means so it finishes instantly; `fit` followed by `analyze`
//! does the same with estimated parameters.

use hivdyn::inference::SubjectEstimates;
use hivdyn::study::{
    classify_response, compare_groups, correlate_baseline, simulate_cohort, CohortDesign,
    ResponseStatus,
};

fn main() -> Result<(), hivdyn::Error> {
    let cohort = simulate_cohort(&CohortDesign::default(), 11)?;

    // Stand-in for posterior means: the known generating parameters.
    let estimates: Vec<SubjectEstimates> = cohort
        .truth
        .iter()
        .map(|t| SubjectEstimates {
            subject_id: t.subject_id.clone(),
            mean_log: t.log_params,
            mean_natural: std::array::from_fn(|j| t.log_params[j].exp()),
        })
        .collect();

    let statuses: Vec<(String, ResponseStatus)> = cohort
        .records
        .iter()
        .map(|r| (r.subject_id.clone(), classify_response(r)))
        .collect();
    let n_success = statuses.iter().filter(|(_, s)| *s == ResponseStatus::Success).count();
    let n_failure = statuses.iter().filter(|(_, s)| *s == ResponseStatus::Failure).count();
    println!("{n_success} successes, {n_failure} failures\n");

    let (correlations, missing_cd4) = correlate_baseline(&estimates, &cohort.records)?;
    println!("correlation with baseline factors (Spearman):");
    println!("{:<6} {:<18} {:>7} {:>8} {:>4}", "param", "factor", "rho", "p", "n");
    for row in &correlations {
        println!(
            "{:<6} {:<18} {:>7.3} {:>8.4} {:>4}",
            row.parameter, row.factor, row.rho, row.p_value, row.n
        );
    }
    if missing_cd4 > 0 {
        println!("({missing_cd4} subjects lacked a baseline CD4)");
    }

    let (comparisons, unclassified) = compare_groups(&estimates, &statuses)?;
    println!("\nsuccess versus failure (Wilcoxon rank sum):");
    println!("{:<6} {:>10} {:>8}", "param", "rank sum", "p");
    for row in &comparisons {
        println!("{:<6} {:>10.1} {:>8.4}", row.parameter, row.statistic, row.p_value);
    }
    println!("({unclassified} subjects had no classifiable response)");
    Ok(())
}
