//! Generates a synthetic 42-subject cohort: individual parameters drawn
//! from the population distribution, per-subject regimens with occasional
//! resistance and adherence lapses, and noisy log10 viral-load measurements
//! on the scheduled visit days. The dataset is written as CSV files that
//! `load_dataset` (and the `fit` command) can read back.
//!
//! Pass a directory as the first argument to keep the files; otherwise a
//! temporary directory is used.

use hivdyn::data::write_dataset;
use hivdyn::study::{classify_response, simulate_cohort, CohortDesign, ResponseStatus};

fn main() -> Result<(), hivdyn::Error> {
    let design = CohortDesign::default();
    let seed = 20260822;
    let cohort = simulate_cohort(&design, seed)?;

    let dir = match std::env::args().nth(1) {
        Some(path) => std::path::PathBuf::from(path),
        None => std::env::temp_dir().join(format!("cohort_{seed}")),
    };
    write_dataset(&dir, &cohort.records)?;

    let n_obs: usize = cohort.records.iter().map(|r| r.observations.len()).sum();
    let redraws: u32 = cohort.truth.iter().map(|t| t.redraws).sum();
    println!("simulated {} subjects, {} measurements (seed {seed})", cohort.records.len(), n_obs);
    println!("parameter draws discarded during simulation: {redraws}");

    let baselines: Vec<f64> = cohort.records.iter().filter_map(|r| r.baseline_log10_vl()).collect();
    let mean_baseline = baselines.iter().sum::<f64>() / baselines.len() as f64;
    println!("mean baseline log10 viral load: {mean_baseline:.2}");

    let mut counts = [0usize; 3];
    for r in &cohort.records {
        match classify_response(r) {
            ResponseStatus::Success => counts[0] += 1,
            ResponseStatus::Failure => counts[1] += 1,
            ResponseStatus::Missing => counts[2] += 1,
        }
    }
    println!(
        "virologic response: {} successes, {} failures, {} unclassifiable",
        counts[0], counts[1], counts[2]
    );
    println!("\ndataset written to {}", dir.display());
    Ok(())
}
