//! Track the vectorized system matrices with the Kalman parameter filter
//! while the true plant changes mid-stream.
//!
//! Run with: cargo run --example parameter_filter

use etlearn::estimators::{estimate_error_sq, kf_step, FilterState};
use etlearn::linalg::regressor;
use etlearn::scenario::Scenario;
use etlearn::sim::step_plant;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn main() -> etlearn::Result<()> {
    let sc = Scenario::from_path(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/scenarios/dc_servo.json"
    ))?;
    let nominal = sc.nominal_model()?;
    let changed = sc.discrete_model(22.0)?;
    let noise = sc.filter_noise()?;
    let sigma_w_chol = sc.sigma_w().cholesky().expect("Sigma_w is PD").l().clone();

    let mut filter = FilterState::new(nominal.param_vector(), sc.p0()?)?;
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    let mut x = DVector::zeros(4);
    let change_at = 300;
    let steps = 600;

    println!("{:>6} {:>14} {:>14}", "step", "est error", "trace P");
    for k in 0..steps {
        let truth = if k < change_at { &nominal } else { &changed };
        // Mild dither stands in for the closed loop here.
        let u = DVector::from_vec(vec![(k as f64 * 0.7).sin() * 3.0]);
        let reg = regressor(&x, &u);
        let x_next = step_plant(truth, &x, &u, &sigma_w_chol, &mut rng);
        filter = kf_step(&filter, &x_next, &reg, &noise)?.0;
        x = x_next;

        if k % 50 == 49 || k + 1 == change_at {
            let err = estimate_error_sq(
                filter.estimate().as_vector(),
                truth.param_vector().as_vector(),
            )?;
            println!("{:>6} {:>14.3e} {:>14.3e}", k + 1, err, filter.covariance_trace());
        }
        if k + 1 == change_at {
            println!("{:>6} --- load inertia switches to 22 J_M ---", "");
        }
    }
    Ok(())
}
