//! Monte Carlo check of the trigger's false-positive guarantee: with a
//! perfect model the per-step firing probability stays at or below the
//! significance level.
//!
//! Run with: cargo run --release --example trigger_false_positive_rate

use etlearn::cli::montecarlo_fpr;
use etlearn::scenario::Scenario;

fn main() -> etlearn::Result<()> {
    let mut sc = Scenario::from_path(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/scenarios/dc_servo.json"
    ))?;
    sc.change_schedule.clear(); // the guarantee concerns an unchanged plant
    let runs = 1000;
    let eval_step = sc.effective_eval_step();

    println!(
        "{:>8} {:>10} {:>10} {:>12} {:>10}",
        "alpha", "rate", "bound", "mean stat", "dof"
    );
    for alpha in [0.01, 0.05, 0.2] {
        let report = montecarlo_fpr(&sc, runs, alpha, eval_step, None)?;
        println!(
            "{:>8} {:>10.4} {:>10.4} {:>12.2} {:>10}",
            alpha, report.rate, report.bound, report.mean_statistic_at_eval, report.dof
        );
    }
    println!("\n(firing with a perfect model is a false positive by construction;");
    println!(" the bound is alpha plus three binomial standard deviations)");
    Ok(())
}
