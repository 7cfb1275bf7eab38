//! Compare the three update policies on paired seeds: event-triggered
//! learning, permanent updates, and no updates. Reproduces the layout of
//! the average-error table.
//!
//! Run with: cargo run --release --example policy_comparison

use etlearn::cli::compare_policies;
use etlearn::scenario::Scenario;

fn main() -> etlearn::Result<()> {
    let sc = Scenario::from_path(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/scenarios/dc_servo.json"
    ))?;
    let seeds = 5;
    println!("running {} paired seeds x 3 policies ...", seeds);
    let report = compare_policies(&sc, seeds, None)?;

    println!("\naverage squared model parameter error (x 1e-3):");
    println!(
        "{:<22} {:>10} {:>12} {:>10}",
        "", "ETL", "permanent", "never"
    );
    println!(
        "{:<22} {:>10.3} {:>12.3} {:>10.3}",
        "whole simulation",
        report.etl.whole_run.mean * 1e3,
        report.permanent.whole_run.mean * 1e3,
        report.never.whole_run.mean * 1e3
    );
    println!(
        "{:<22} {:>10.3} {:>12.3} {:>10.3}",
        "excluding excitation",
        report.etl.excluding_excitation.mean * 1e3,
        report.permanent.excluding_excitation.mean * 1e3,
        report.never.excluding_excitation.mean * 1e3
    );
    println!(
        "\nsign tests (excluding excitation): etl < permanent p = {:.2e}, etl < never p = {:.2e}",
        report.etl_lt_permanent_excl.p_value, report.etl_lt_never_excl.p_value
    );
    println!(
        "never-updated policy worst on the whole run: {}",
        report.never_worst_whole_run
    );
    Ok(())
}
