//! The three identification routes on one data record: batch least
//! squares, recursive least squares, and the Kalman parameter filter
//! without drift. On noise-free persistently exciting data they agree.
//!
//! Run with: cargo run --example estimator_equivalence

use etlearn::estimators::{batch_ls, kf_step, rls_step, FilterState, NoiseConfig};
use etlearn::linalg::{regressor, LinearModel, ParamVector, Regressor};
use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn main() -> etlearn::Result<()> {
    let mut rng = StdRng::seed_from_u64(1);
    let (n, m) = (2usize, 1usize);
    let dof = n * (n + m);
    let model = LinearModel::new(
        DMatrix::from_row_slice(2, 2, &[0.6, 0.2, -0.1, 0.4]),
        DMatrix::from_row_slice(2, 1, &[1.0, 0.5]),
    )?;

    // Noise-free rollout with exciting inputs.
    let mut x = DVector::zeros(n);
    let mut states: Vec<DVector<f64>> = Vec::new();
    let mut regs: Vec<Regressor> = Vec::new();
    for _ in 0..40 {
        let u = DVector::from_fn(m, |_, _| rng.random_range(-5.0..5.0));
        regs.push(regressor(&x, &u));
        x = model.a() * &x + model.b() * &u;
        states.push(x.clone());
    }

    let batch = batch_ls(&states, &regs)?;

    let z0 = ParamVector::new(DVector::zeros(dof), n, m)?;
    let mut rls = FilterState::new(z0.clone(), DMatrix::<f64>::identity(dof, dof) * 1e6)?;
    let mut kf = FilterState::new(z0, DMatrix::<f64>::identity(dof, dof) * 1e6)?;
    let kf_noise = NoiseConfig::new(
        DMatrix::<f64>::identity(n, n),
        DMatrix::zeros(dof, dof),
        1.0,
    )?;
    for (xk, r) in states.iter().zip(&regs) {
        rls = rls_step(&rls, xk, r, 1.0)?;
        kf = kf_step(&kf, xk, r, &kf_noise)?.0;
    }

    let truth = model.param_vector();
    println!("true z:          {:.6}", truth.as_vector().transpose());
    println!("batch LS:        {:.6}", batch.as_vector().transpose());
    println!("recursive LS:    {:.6}", rls.estimate().as_vector().transpose());
    println!("Kalman (no drift): {:.6}", kf.estimate().as_vector().transpose());
    println!(
        "max |batch - RLS| = {:.2e},  max |RLS - KF| = {:.2e}",
        (batch.as_vector() - rls.estimate().as_vector()).amax(),
        (rls.estimate().as_vector() - kf.estimate().as_vector()).amax()
    );
    Ok(())
}
