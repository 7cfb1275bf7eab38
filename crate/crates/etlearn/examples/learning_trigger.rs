//! Watch the learning trigger react to a plant change: the normalized
//! statistic stays below one while the model is right and climbs past it
//! shortly after the load switches.
//!
//! Run with: cargo run --example learning_trigger

use etlearn::estimators::{kf_step, FilterState};
use etlearn::linalg::regressor;
use etlearn::scenario::Scenario;
use etlearn::sim::step_plant;
use etlearn::trigger::{evaluate_trigger, model_truth_bound};
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
    let trigger_cfg = sc.trigger_config(nominal.param_vector())?;
    let sigma_w_chol = sc.sigma_w().cholesky().expect("Sigma_w is PD").l().clone();

    let mut filter = FilterState::new(nominal.param_vector(), sc.p0()?)?;
    let mut rng = ChaCha12Rng::seed_from_u64(9);
    let mut x = DVector::zeros(4);
    let change_at = 250;

    println!(
        "chi-square threshold at alpha = {}: {:.3} (dof {})",
        trigger_cfg.alpha(),
        trigger_cfg.threshold(),
        trigger_cfg.dof()
    );
    println!("{:>6} {:>12} {:>12} {:>7}", "step", "statistic", "normalized", "fired");
    for k in 0..600 {
        let truth = if k < change_at { &nominal } else { &changed };
        let u = DVector::from_vec(vec![(k as f64 * 0.9).sin() * 2.0]);
        let reg = regressor(&x, &u);
        let x_next = step_plant(truth, &x, &u, &sigma_w_chol, &mut rng);
        filter = kf_step(&filter, &x_next, &reg, &noise)?.0;
        x = x_next;

        let decision = evaluate_trigger(&filter, &trigger_cfg)?;
        if k % 25 == 24 || (decision.fired && k < change_at + 120) {
            println!(
                "{:>6} {:>12.3} {:>12.3} {:>7}",
                k + 1,
                decision.statistic,
                decision.normalized,
                decision.fired
            );
        }
        if k + 1 == change_at {
            println!("{:>6} --- load inertia switches to 22 J_M ---", "");
        }
        if decision.fired && k > change_at {
            println!(
                "trigger fired {} steps after the change; a learning experiment would start here",
                k - change_at + 1
            );
            break;
        }
        if !decision.fired && k % 100 == 99 {
            if let Some(bound) = model_truth_bound(&decision) {
                println!(
                    "{:>6} (no trigger: model-truth distance bounded by {:.2} w.h.p.)",
                    "", bound
                );
            }
        }
    }
    Ok(())
}
