//! Nominal regulation versus experiment design from the same state: the
//! covariance-aware controller spends input energy to shrink the predicted
//! filter covariance.
//!
//! Run with: cargo run --example experiment_design

use etlearn::control::{experiment_mpc_solve, nominal_mpc_solve};
use etlearn::scenario::Scenario;
use nalgebra::DVector;

fn main() -> etlearn::Result<()> {
    let sc = Scenario::from_path(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/scenarios/dc_servo.json"
    ))?;
    let model = sc.nominal_model()?;
    let noise = sc.filter_noise()?;
    let cfg = sc.mpc_config()?;
    // A covariance as it looks when the trigger has just fired.
    let p0 = sc.p0()? * 0.4;
    let x0 = DVector::from_vec(vec![0.01, -0.05, 0.2, 0.1]);

    let nominal = nominal_mpc_solve(&model, &x0, &cfg)?;
    let experiment = experiment_mpc_solve(&model, &x0, &p0, &noise, &cfg)?;

    println!("planned inputs (V):");
    println!("{:>6} {:>12} {:>12}", "k", "nominal", "experiment");
    for k in 0..cfg.horizon {
        println!(
            "{:>6} {:>12.3} {:>12.3}",
            k, nominal.inputs[k][0], experiment.inputs[k][0]
        );
    }
    println!("\npredicted trace(P) along the experiment plan:");
    for (k, t) in experiment.cov_trace_path.iter().enumerate() {
        println!("{:>6} {:>12.4e}", k, t);
    }
    println!(
        "\nstatus: {}; terminal state magnitude {:.2e}",
        experiment.status.as_str(),
        experiment.states.last().unwrap().amax()
    );
    Ok(())
}
