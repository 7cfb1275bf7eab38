//! Build the servo model and discretize it with zero-order hold.
//!
//! Shows how a load-inertia change reshapes the discrete-time matrices:
//! only the load-torque row of the continuous model changes, but the
//! matrix exponential spreads the difference over most entries.
//!
//! Run with: cargo run --example discretize_servo

use etlearn::linalg::zoh_discretize;
use etlearn::servo::{servo_continuous, ServoParams};

fn main() -> etlearn::Result<()> {
    let params = ServoParams {
        k_theta: 1280.2,
        rho: 20.0,
        j_l: 10.0,
        j_m: 0.5,
        beta_l: 25.0,
        beta_m: 0.1,
        k_t: 10.0,
        r_a: 20.0,
    };
    let ts = 0.1;

    let cm = servo_continuous(&params)?;
    println!("continuous A (load ratio {}):{:.4}", params.load_ratio(), cm.a_c);
    println!("continuous B:{:.4}", cm.b_c);

    let nominal = zoh_discretize(&cm, ts)?;
    println!("discrete A at Ts = {ts} s:{:.4}", nominal.a());
    println!("discrete B:{:.6}", nominal.b());

    // The same servo with a 10% heavier load.
    let heavier = zoh_discretize(&servo_continuous(&params.with_load_ratio(22.0))?, ts)?;
    let delta = heavier.a() - nominal.a();
    println!("A change from load ratio 20 -> 22:{:.4}", delta);
    let dz = heavier.param_vector().as_vector() - nominal.param_vector().as_vector();
    println!("parameter-vector shift magnitude: {:.4}", dz.norm());
    Ok(())
}
