//! Drug efficacy is driven by each drug's inhibitory quotient (trough
//! concentration over current IC50) weighted by adherence. This example
//! builds a regimen where one drug loses potency through a rising IC50 and
//! the other suffers adherence lapses, then tabulates the weekly efficacy
//! and compares it against the clearance thresholds of a few reproductive
//! ratios.

use hivdyn::efficacy::{AdherenceProfile, DrugInputs, EfficacyInputs, Ic50Profile};
use hivdyn::ode::efficacy_threshold;

fn main() -> Result<(), hivdyn::Error> {
    let phi = 56.0;
    // Drug 1 develops resistance: IC50 ramps from 6 to 30 over 12 weeks.
    // Drug 2 keeps its IC50 but is taken irregularly mid-study.
    let inputs = EfficacyInputs::new(
        DrugInputs::new(66.0, Ic50Profile::new(6.0, 30.0, Some(84.0))?, AdherenceProfile::perfect())?,
        DrugInputs::new(
            50.0,
            Ic50Profile::constant(8.0)?,
            AdherenceProfile::new(
                vec![0.0, 28.0, 56.0, 84.0, 112.0, 140.0],
                vec![1.0, 1.0, 0.4, 0.7, 1.0, 1.0],
            )?,
        )?,
    );

    println!(
        "{:>4} {:>8} {:>8} {:>6} {:>6} {:>9} {:>7}",
        "day", "IC50_1", "adh_2", "IQ_1", "IQ_2", "S", "gamma"
    );
    for week in 0..=24 {
        let t = 7.0 * week as f64;
        let iq1 = inputs.drugs[0].inhibitory_quotient(t) * inputs.drugs[0].adherence.value_at(t);
        let iq2 = inputs.drugs[1].inhibitory_quotient(t) * inputs.drugs[1].adherence.value_at(t);
        println!(
            "{:>4} {:>8.2} {:>8.2} {:>6.2} {:>6.2} {:>9.2} {:>7.3}",
            t,
            inputs.drugs[0].ic50.value_at(t),
            inputs.drugs[1].adherence.value_at(t),
            iq1,
            iq2,
            inputs.potency(t),
            inputs.gamma(phi, t)?,
        );
    }

    println!("\nclearance requires gamma above e_c = 1 - 1/R0:");
    for r0 in [1.6, 2.6, 4.0] {
        let e_c = efficacy_threshold(r0)?;
        let end = inputs.gamma(phi, 168.0)?;
        let verdict = if end > e_c { "still above" } else { "fallen below" };
        println!("  R0 = {r0:.1}: e_c = {e_c:.3}, week-24 efficacy {end:.3} has {verdict}");
    }
    Ok(())
}
