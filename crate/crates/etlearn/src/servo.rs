//! DC servomechanism with an elastic shaft and an uncertain load inertia.
//!
//! The state is `[load angle, load speed, motor angle, motor speed]`, the
//! input is the armature voltage. The continuous-time matrices are
//!
//! ```text
//!         |      0             1           0            0       |
//!  A_c =  | -k_th/J_L     -beta_L/J_L   k_th/(rho J_L)  0       |
//!         |      0             0           0            1       |
//!         | k_th/(rho J_M)     0   -k_th/(rho^2 J_M)  -(beta_M R_a + K_T^2)/(J_M R_a) |
//!
//!  B_c =  [0, 0, 0, K_T/(R_a J_M)]'
//! ```
//!
//! Load changes show up as a new `J_L`, which only rescales the second row
//! of `A_c`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ContinuousModel;

/// Physical parameters of the servomechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServoParams {
    /// Torsional rigidity of the shaft (N m / rad).
    pub k_theta: f64,
    /// Gear ratio (dimensionless).
    pub rho: f64,
    /// Load inertia (kg m^2); the quantity that changes at runtime.
    pub j_l: f64,
    /// Motor inertia (kg m^2).
    pub j_m: f64,
    /// Load viscous friction (N m s / rad).
    pub beta_l: f64,
    /// Motor viscous friction (N m s / rad).
    pub beta_m: f64,
    /// Motor torque constant (N m / A).
    pub k_t: f64,
    /// Armature resistance (Ohm).
    pub r_a: f64,
}

impl ServoParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("k_theta", self.k_theta),
            ("rho", self.rho),
            ("j_l", self.j_l),
            ("j_m", self.j_m),
            ("beta_l", self.beta_l),
            ("beta_m", self.beta_m),
            ("k_t", self.k_t),
            ("r_a", self.r_a),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!(
                    "servo.{name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Load-to-motor inertia ratio `J_L / J_M`.
    pub fn load_ratio(&self) -> f64 {
        self.j_l / self.j_m
    }

    /// Same servo with the load inertia set to `ratio * J_M`.
    pub fn with_load_ratio(&self, ratio: f64) -> Self {
        Self {
            j_l: ratio * self.j_m,
            ..self.clone()
        }
    }
}

/// Builds the continuous-time state-space model of the servo.
pub fn servo_continuous(p: &ServoParams) -> Result<ContinuousModel> {
    p.validate()?;
    let mut a = DMatrix::zeros(4, 4);
    a[(0, 1)] = 1.0;
    a[(1, 0)] = -p.k_theta / p.j_l;
    a[(1, 1)] = -p.beta_l / p.j_l;
    a[(1, 2)] = p.k_theta / (p.rho * p.j_l);
    a[(2, 3)] = 1.0;
    a[(3, 0)] = p.k_theta / (p.rho * p.j_m);
    a[(3, 2)] = -p.k_theta / (p.rho * p.rho * p.j_m);
    a[(3, 3)] = -(p.beta_m * p.r_a + p.k_t * p.k_t) / (p.j_m * p.r_a);
    let mut b = DMatrix::zeros(4, 1);
    b[(3, 0)] = p.k_t / (p.r_a * p.j_m);
    ContinuousModel::new(a, b)
}

/// Shaft-torque constraint row `[k_theta, 0, -k_theta/rho, 0]`; the plant
/// must keep `|row . x|` below the admissible torque.
pub fn shaft_torque_row(p: &ServoParams) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_vec(vec![p.k_theta, 0.0, -p.k_theta / p.rho, 0.0])
}
