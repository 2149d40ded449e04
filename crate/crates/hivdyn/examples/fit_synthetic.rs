//! End-to-end posterior fit on a small synthetic cohort: simulate eight
//! subjects, run a deliberately short chain, and compare the population
//! estimates against the generating values. A production fit would use the
//! default schedule (30,000 burn-in, 120,000 retained sweeps thinned by 5);
//! this example trades accuracy for a runtime of a few seconds.

use hivdyn::inference::{run_chain, summarize, Hyperpriors, McmcConfig};
use hivdyn::study::{simulate_cohort, CohortDesign};
use hivdyn::PARAM_NAMES;

fn main() -> Result<(), hivdyn::Error> {
    let design = CohortDesign { n_subjects: 8, ..CohortDesign::default() };
    let cohort = simulate_cohort(&design, 7)?;

    let config = McmcConfig {
        burn_in: 500,
        iterations: 2000,
        thin: 5,
        seed: 1,
        workers: 0,
        ..McmcConfig::default()
    };
    eprintln!("running {} sweeps on {} subjects...", config.burn_in + config.iterations, design.n_subjects);
    let chain = run_chain(&cohort.records, &Hyperpriors::default(), &config).map_err(|e| e.source)?;
    let summary = summarize(&chain)?;

    println!("retained draws: {}", summary.retained);
    println!(
        "\n{:<6} {:>10} {:>10} {:>22}",
        "param", "truth", "post mean", "95% interval"
    );
    for (j, p) in summary.population.iter().enumerate() {
        let truth = design.mu_true[j].exp();
        println!(
            "{:<6} {:>10.3} {:>10.3} {:>10.3} .. {:>8.3}",
            p.name, truth, p.mean, p.lower, p.upper
        );
    }
    println!(
        "\nmeasurement error sd: truth {:.3}, posterior mean {:.3} ({:.3} .. {:.3})",
        design.error_sd, summary.error_sd.mean, summary.error_sd.lower, summary.error_sd.upper
    );

    let mean_accept = chain.acceptance.iter().sum::<f64>() / chain.acceptance.len() as f64;
    println!("mean post-burn-in acceptance rate: {mean_accept:.2}");

    println!("\nper-subject posterior means (natural scale):");
    println!("{:<8} {}", "subject", PARAM_NAMES.map(|n| format!("{n:>8}")).join(" "));
    for s in &summary.subjects {
        let row: Vec<String> = s.mean_natural.iter().map(|v| format!("{v:>8.3}")).collect();
        println!("{:<8} {}", s.subject_id, row.join(" "));
    }
    Ok(())
}
