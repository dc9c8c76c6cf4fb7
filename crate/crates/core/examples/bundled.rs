//! Runs the bundled scenario for a few seeds and prints the before/after inequality.

use fairplan::scenario;

fn main() -> fairplan::Result<()> {
    let sc = scenario::load(scenario::BUNDLED)?;
    for seed in 0..5 {
        let report = scenario::run(&sc, seed)?;
        let before = report.before.total_inequality.unwrap_or(f64::NAN);
        let after = report.after.total_inequality.unwrap_or(f64::NAN);
        println!(
            "seed {seed}: {before:.5} -> {after:.5} ({:.1}% lower), {} blocks edited",
            100.0 * report.relative_reduction.unwrap_or(0.0),
            report.recommendation.blocks.len()
        );
    }
    Ok(())
}
