//! Noise multipliers for the usual epsilon grid, and the budget of a
//! two-phase pipeline under both composition rules.
use dpalign::config::standard_epsilon_grid;
use dpalign::privacy::{epsilon_for_sigma, phase_budget_report, sigma_for_budget, AccountantConfig, Epsilon, NoiseCalibration, PrivacyBudget};

fn main() -> dpalign::Result<()> {
    let acct = AccountantConfig::new(3)?;
    println!("epochs 3, delta 1e-5");
    for eps in standard_epsilon_grid() {
        let budget = PrivacyBudget::new(eps, 1e-5)?;
        match sigma_for_budget(&budget, &acct)? {
            NoiseCalibration::Multiplier(sigma) if sigma > 0.0 => {
                let back = epsilon_for_sigma(sigma, 1e-5, &acct)?;
                println!("  eps {:>4}  sigma {sigma:>9.4}  (inverts to {back:.6})", eps.label());
            }
            NoiseCalibration::Multiplier(_) => println!("  eps {:>4}  no noise", eps.label()),
            NoiseCalibration::PureNoise => println!("  eps {:>4}  pure noise", eps.label()),
        }
    }

    let phase = PrivacyBudget::new(Epsilon::new(3.0)?, 1e-5)?;
    for disjoint in [true, false] {
        println!("\n{}", phase_budget_report(&[phase, phase], disjoint)?.to_text());
    }
    Ok(())
}
