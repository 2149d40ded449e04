//! Constant-efficacy treatment either clears the infection or settles at a
//! reduced set point, depending on which side of the critical efficacy
//! `1 - 1/R0` the regimen lands. This example sweeps the efficacy around
//! that threshold for several reproductive ratios, starting each run at the
//! untreated steady state, and reports where the viral load ends up after a
//! year of therapy.

use hivdyn::ode::{
    efficacy_threshold, integrate, rhs_rescaled, untreated_equilibrium, DynamicParams,
    IntegratorConfig,
};

fn main() -> Result<(), hivdyn::Error> {
    let config = IntegratorConfig::default();
    let horizon = [365.0];

    println!(
        "{:>4} {:>7} {:>7} {:>12} {:>9}",
        "R0", "e_c", "gamma", "V(365)/V(0)", "outcome"
    );
    for r0 in [1.6, 2.6, 4.0] {
        let params = DynamicParams::from_natural(56.0, 5.0, 0.7, 0.05, 3.7, r0)?;
        let e_c = efficacy_threshold(r0)?;
        let start = untreated_equilibrium(r0)?;
        for offset in [-0.15, -0.05, 0.05, 0.15] {
            let gamma = e_c + offset;
            let end = integrate(|_, s| rhs_rescaled(s, &params, gamma), &start, 0.0, &horizon, &config)?;
            let ratio = end[0].virus / start.virus;
            let outcome = if ratio < 1e-4 { "cleared" } else { "persists" };
            println!("{r0:>4.1} {e_c:>7.3} {gamma:>7.3} {ratio:>12.3e} {outcome:>9}");
        }
        println!();
    }
    println!("blocking more than the fraction e_c of new infections clears the virus;");
    println!("anything less only lowers the set point.");
    Ok(())
}
