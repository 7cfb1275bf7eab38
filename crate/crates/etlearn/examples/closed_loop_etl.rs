//! A complete event-triggered learning run: regulation, change detection,
//! learning experiments, model updates, and the run metrics.
//!
//! Run with: cargo run --release --example closed_loop_etl

use etlearn::scenario::Scenario;
use etlearn::sim::run_scenario;

fn main() -> etlearn::Result<()> {
    let mut sc = Scenario::from_path(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/scenarios/dc_servo.json"
    ))?;
    // Trimmed down from the full study so the example finishes quickly.
    sc.total_steps = 1600;
    sc.change_schedule.truncate(1); // one load change at step 1000
    sc.seed = 3;

    let (log, metrics) = run_scenario(&sc)?;

    println!("events:");
    for ev in &log.events {
        println!("  step {:>5}: {:?}", ev.step, ev.kind);
    }
    println!("\nmetrics:");
    println!(
        "  avg squared model error, whole run:            {:.4e}",
        metrics.avg_sq_param_error_whole
    );
    println!(
        "  avg squared model error, excluding excitation: {:.4e}",
        metrics.avg_sq_param_error_excl_experiments
    );
    println!("  triggers: {}", metrics.trigger_count);
    println!("  experiments: {}", metrics.experiment_count);
    for d in &metrics.trigger_delays {
        println!(
            "  change at step {} detected after {:?} steps",
            d.change_step, d.delay
        );
    }
    println!(
        "  state constraint violations: {}, infeasible MPC steps: {}",
        metrics.state_violations, metrics.infeasible_steps
    );
    Ok(())
}
