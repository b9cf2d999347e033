//! Compares analytic gradients of both fitting objectives with central
//! finite differences on random synthetic frames.
//!
//! cargo run --release --example gradient_check -- [CONFIGURATIONS] [SEED]

use template_fit::assets::{shipped_rig_dir, Character};
use template_fit::gradcheck::{gradcheck_suite, GradcheckConfig};
use template_fit::losses::LossWeights;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let configurations: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(4);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);

    let character = Character::load_dir(&shipped_rig_dir(), None)?;
    let config = GradcheckConfig {
        configurations,
        ..GradcheckConfig::default()
    };
    let report = gradcheck_suite(&character, &config, LossWeights::default(), seed)?;
    for row in &report.rows {
        let b = &row.block;
        println!(
            "config {:>2} {:<6} {:<6} checked {:>4} skipped {:>3} max rel err {:.2e}",
            row.configuration, row.objective, b.name, b.checked, b.skipped, b.max_error
        );
    }
    println!("{}", if report.passed() { "PASS" } else { "FAIL" });
    Ok(())
}
