//! Scenario files: one JSON document holding everything a closed-loop run
//! needs, including the servo parameters, so that externally sourced
//! numbers live in data rather than code.
//!
//! Parameter-drift and prior covariances are specified per state-equation
//! row: block `j` of the vectorized parameters holds row `j` of `[A B]`,
//! so a four-entry list expands to the full diagonal. The shipped default
//! puts essentially all drift budget on the row that a load change
//! actually touches, which is what lets the filter pin the remaining
//! parameters precisely.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::control::{MpcConfig, StateInequality, TerminalSet};
use crate::error::{Error, Result};
use crate::estimators::NoiseConfig;
use crate::linalg::{zoh_discretize, LinearModel};
use crate::servo::{servo_continuous, shaft_torque_row, ServoParams};
use crate::trigger::TriggerConfig;

/// Which update policy drives the closed loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    /// Event-triggered learning: fixed model, trigger-armed, experiments.
    Etl,
    /// The model and controller track the filter estimate every step.
    Permanent,
    /// The nominal model is never updated.
    Never,
}

impl Policy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Policy::Etl => "etl",
            Policy::Permanent => "permanent",
            Policy::Never => "never",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "etl" => Some(Policy::Etl),
            "permanent" => Some(Policy::Permanent),
            "never" => Some(Policy::Never),
            _ => None,
        }
    }
}

/// A scheduled true-plant change: from `step` onward the load inertia is
/// `load_ratio * J_M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadChange {
    pub step: usize,
    pub load_ratio: f64,
}

/// When a learning experiment ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentStop {
    /// After exactly `experiment.length` excited steps.
    FixedDuration,
    /// As soon as `trace(P)` falls below `value` (or after `length` steps,
    /// whichever comes first).
    TraceThreshold { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Diagonal of the process disturbance covariance (length n).
    pub sigma_w_diag: Vec<f64>,
    /// Baseline parameter-drift variance per state-equation row (length
    /// n); each value fills the whole block of that row in the Sigma_z
    /// diagonal.
    pub sigma_z_per_state_row: Vec<f64>,
    /// Drift variance along the load-change direction of the discretized
    /// model (the normalized derivative of `z` with respect to the load
    /// ratio). This is where prior knowledge about which parameters a load
    /// change can affect enters: the complement of this direction keeps
    /// the small baseline budget and is therefore estimated precisely.
    #[serde(default)]
    pub sigma_z_load_direction: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    /// Initial estimate covariance per state-equation row (length n).
    pub p0_per_state_row: Vec<f64>,
    /// Initial covariance along the load-change direction, mirroring
    /// `sigma_z_load_direction`.
    #[serde(default)]
    pub p0_load_direction: f64,
    /// Multiplicative inflation of Sigma_w inside the filter; values above
    /// one widen the test region at the cost of sensitivity.
    #[serde(default = "default_one")]
    pub sigma_w_inflation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerSpec {
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcSpec {
    pub q_diag: Vec<f64>,
    pub r_diag: Vec<f64>,
    pub q_terminal_diag: Vec<f64>,
    pub horizon: usize,
    pub nu: f64,
    /// Symmetric input bound `|u| <= input_bound`.
    pub input_bound: f64,
    /// Symmetric shaft-torque bound; omit to drop the state constraint.
    #[serde(default)]
    pub torque_bound: Option<f64>,
    #[serde(default = "default_terminal")]
    pub terminal: String,
    #[serde(default = "default_true")]
    pub rollout_includes_drift: bool,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Maximum experiment length in steps.
    pub length: usize,
    #[serde(default = "default_stop")]
    pub stop: ExperimentStop,
}

/// Complete description of one closed-loop study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub total_steps: usize,
    /// Sampling time in seconds.
    pub ts: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_policy")]
    pub policy: Policy,
    pub servo: ServoParams,
    #[serde(default)]
    pub change_schedule: Vec<LoadChange>,
    pub noise: NoiseSpec,
    pub filter: FilterSpec,
    pub trigger: TriggerSpec,
    pub mpc: MpcSpec,
    pub experiment: ExperimentSpec,
    /// Step at which Monte Carlo trigger-rate studies evaluate the test.
    #[serde(default)]
    pub eval_step: Option<usize>,
}

fn default_lambda() -> f64 {
    1.0
}
fn default_one() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}
fn default_terminal() -> String {
    "origin".into()
}
fn default_max_iters() -> usize {
    200
}
fn default_stop() -> ExperimentStop {
    ExperimentStop::FixedDuration
}
fn default_policy() -> Policy {
    Policy::Etl
}

/// State dimension of the servo plant.
pub const STATE_DIM: usize = 4;
/// Input dimension of the servo plant.
pub const INPUT_DIM: usize = 1;
/// Parameter count `n(n+m)` tracked by the filter.
pub const PARAM_DIM: usize = STATE_DIM * (STATE_DIM + INPUT_DIM);

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let sc: Scenario = serde_json::from_str(text)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be at least 1".into()));
        }
        if !(self.ts > 0.0) || !self.ts.is_finite() {
            return Err(Error::Config(format!("ts must be positive, got {}", self.ts)));
        }
        self.servo.validate()?;
        let ratio = self.servo.load_ratio();
        if !(10.0..=30.0).contains(&ratio) {
            return Err(Error::Config(format!(
                "servo: load ratio J_L/J_M = {ratio} outside the declared range [10, 30]"
            )));
        }

        let mut prev_step = None;
        for (i, ch) in self.change_schedule.iter().enumerate() {
            if ch.step >= self.total_steps {
                return Err(Error::Config(format!(
                    "change_schedule[{i}].step = {} must be < total_steps = {}",
                    ch.step, self.total_steps
                )));
            }
            if let Some(p) = prev_step {
                if ch.step <= p {
                    return Err(Error::Config(format!(
                        "change_schedule steps must be strictly increasing (entry {i})"
                    )));
                }
            }
            prev_step = Some(ch.step);
            if !(10.0..=30.0).contains(&ch.load_ratio) {
                return Err(Error::Config(format!(
                    "change_schedule[{i}].load_ratio = {} outside the declared range [10, 30]",
                    ch.load_ratio
                )));
            }
        }

        if self.noise.sigma_w_diag.len() != STATE_DIM {
            return Err(Error::Config(format!(
                "noise.sigma_w_diag needs {STATE_DIM} entries"
            )));
        }
        if self.noise.sigma_w_diag.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Config(
                "noise.sigma_w_diag entries must be strictly positive (Sigma_w must be PD)".into(),
            ));
        }
        if self.noise.sigma_z_per_state_row.len() != STATE_DIM {
            return Err(Error::Config(format!(
                "noise.sigma_z_per_state_row needs {STATE_DIM} entries"
            )));
        }
        if self.noise.sigma_z_per_state_row.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::Config(
                "noise.sigma_z_per_state_row entries must be nonnegative".into(),
            ));
        }
        if !(self.noise.sigma_z_load_direction >= 0.0) {
            return Err(Error::Config(
                "noise.sigma_z_load_direction must be nonnegative".into(),
            ));
        }
        if !(self.filter.p0_load_direction >= 0.0) {
            return Err(Error::Config(
                "filter.p0_load_direction must be nonnegative".into(),
            ));
        }
        if !(self.noise.lambda > 0.0 && self.noise.lambda <= 1.0) {
            return Err(Error::Config(format!(
                "noise.lambda must lie in (0, 1], got {}",
                self.noise.lambda
            )));
        }

        if self.filter.p0_per_state_row.len() != STATE_DIM {
            return Err(Error::Config(format!(
                "filter.p0_per_state_row needs {STATE_DIM} entries"
            )));
        }
        if self.filter.p0_per_state_row.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Config(
                "filter.p0_per_state_row entries must be strictly positive".into(),
            ));
        }
        if !(self.filter.sigma_w_inflation > 0.0) {
            return Err(Error::Config(
                "filter.sigma_w_inflation must be strictly positive".into(),
            ));
        }

        if !(self.trigger.alpha > 0.0 && self.trigger.alpha < 1.0) {
            return Err(Error::Config(format!(
                "trigger.alpha must lie in (0, 1), got {}",
                self.trigger.alpha
            )));
        }

        if self.mpc.q_diag.len() != STATE_DIM || self.mpc.q_terminal_diag.len() != STATE_DIM {
            return Err(Error::Config(format!(
                "mpc.q_diag and mpc.q_terminal_diag need {STATE_DIM} entries"
            )));
        }
        if self.mpc.r_diag.len() != INPUT_DIM {
            return Err(Error::Config(format!("mpc.r_diag needs {INPUT_DIM} entry")));
        }
        if self.mpc.q_diag.iter().chain(&self.mpc.q_terminal_diag).any(|&v| !(v >= 0.0)) {
            return Err(Error::Config("mpc state weights must be nonnegative".into()));
        }
        if self.mpc.r_diag.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Config("mpc.r_diag must be strictly positive".into()));
        }
        if !(self.mpc.nu >= 0.0) {
            return Err(Error::Config(format!("mpc.nu must be >= 0, got {}", self.mpc.nu)));
        }
        if !(self.mpc.input_bound > 0.0) {
            return Err(Error::Config("mpc.input_bound must be strictly positive".into()));
        }
        if let Some(tb) = self.mpc.torque_bound {
            if !(tb > 0.0) {
                return Err(Error::Config("mpc.torque_bound must be strictly positive".into()));
            }
        }
        let terminal = self.terminal_set()?;
        if terminal == TerminalSet::Origin && self.mpc.horizon * INPUT_DIM < STATE_DIM {
            return Err(Error::Config(format!(
                "mpc.horizon = {} is too short to meet the zero terminal constraint",
                self.mpc.horizon
            )));
        }
        if self.mpc.max_iters == 0 {
            return Err(Error::Config("mpc.max_iters must be at least 1".into()));
        }

        if self.experiment.length == 0 {
            return Err(Error::Config("experiment.length must be at least 1".into()));
        }
        if let ExperimentStop::TraceThreshold { value } = self.experiment.stop {
            if !(value > 0.0) {
                return Err(Error::Config(
                    "experiment.stop.value must be strictly positive".into(),
                ));
            }
        }

        if let Some(es) = self.eval_step {
            if es >= self.total_steps {
                return Err(Error::Config(format!(
                    "eval_step = {es} must be < total_steps = {}",
                    self.total_steps
                )));
            }
        }
        Ok(())
    }

    fn terminal_set(&self) -> Result<TerminalSet> {
        match self.mpc.terminal.as_str() {
            "origin" => Ok(TerminalSet::Origin),
            "free" => Ok(TerminalSet::Free),
            other => Err(Error::Config(format!(
                "mpc.terminal must be \"origin\" or \"free\", got \"{other}\""
            ))),
        }
    }

    /// Discrete-time servo model at the given load ratio.
    pub fn discrete_model(&self, load_ratio: f64) -> Result<LinearModel> {
        let cm = servo_continuous(&self.servo.with_load_ratio(load_ratio))?;
        zoh_discretize(&cm, self.ts)
    }

    /// Discrete-time model at the nominal (initial) load.
    pub fn nominal_model(&self) -> Result<LinearModel> {
        self.discrete_model(self.servo.load_ratio())
    }

    /// True process noise covariance.
    pub fn sigma_w(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(self.noise.sigma_w_diag.clone()))
    }

    /// Unit vector along which a load change moves the discretized
    /// parameters, from a central difference in the load ratio.
    pub fn load_change_direction(&self) -> Result<DVector<f64>> {
        let ratio = self.servo.load_ratio();
        let hi = self.discrete_model(ratio + 0.5)?.param_vector();
        let lo = self.discrete_model(ratio - 0.5)?.param_vector();
        let mut v = hi.as_vector() - lo.as_vector();
        let norm = v.norm();
        if norm <= 0.0 {
            return Err(Error::Config(
                "load-change direction is degenerate; check servo parameters".into(),
            ));
        }
        v /= norm;
        Ok(v)
    }

    fn expand_rows(&self, per_row: &[f64]) -> DMatrix<f64> {
        let mut diag = DVector::zeros(PARAM_DIM);
        let block = STATE_DIM + INPUT_DIM;
        for (row, &v) in per_row.iter().enumerate() {
            for j in 0..block {
                diag[row * block + j] = v;
            }
        }
        DMatrix::from_diagonal(&diag)
    }

    /// Drift covariance: per-state-row baseline plus the rank-one
    /// load-change budget.
    pub fn sigma_z(&self) -> Result<DMatrix<f64>> {
        let mut m = self.expand_rows(&self.noise.sigma_z_per_state_row);
        if self.noise.sigma_z_load_direction > 0.0 {
            let v = self.load_change_direction()?;
            m.ger(self.noise.sigma_z_load_direction, &v, &v, 1.0);
        }
        Ok(m)
    }

    /// Initial filter covariance, structured like [`Scenario::sigma_z`].
    pub fn p0(&self) -> Result<DMatrix<f64>> {
        let mut m = self.expand_rows(&self.filter.p0_per_state_row);
        if self.filter.p0_load_direction > 0.0 {
            let v = self.load_change_direction()?;
            m.ger(self.filter.p0_load_direction, &v, &v, 1.0);
        }
        Ok(m)
    }

    /// Noise model used by the filter and all covariance predictions
    /// (process noise inflated by the robustness factor).
    pub fn filter_noise(&self) -> Result<NoiseConfig> {
        NoiseConfig::new(
            self.sigma_w() * self.filter.sigma_w_inflation,
            self.sigma_z()?,
            self.noise.lambda,
        )
    }

    /// Trigger configuration for a given fixed model.
    pub fn trigger_config(&self, z_star: crate::linalg::ParamVector) -> Result<TriggerConfig> {
        TriggerConfig::new(self.trigger.alpha, z_star)
    }

    /// MPC configuration (weights, horizon, constraint sets).
    pub fn mpc_config(&self) -> Result<MpcConfig> {
        let q = DMatrix::from_diagonal(&DVector::from_vec(self.mpc.q_diag.clone()));
        let r = DMatrix::from_diagonal(&DVector::from_vec(self.mpc.r_diag.clone()));
        let qn = DMatrix::from_diagonal(&DVector::from_vec(self.mpc.q_terminal_diag.clone()));
        let mut state_inequalities = Vec::new();
        if let Some(bound) = self.mpc.torque_bound {
            let row = shaft_torque_row(&self.servo);
            state_inequalities.push(StateInequality {
                coeffs: row.clone(),
                bound,
            });
            state_inequalities.push(StateInequality {
                coeffs: -row,
                bound,
            });
        }
        let cfg = MpcConfig {
            q,
            r,
            q_terminal: qn,
            horizon: self.mpc.horizon,
            nu: self.mpc.nu,
            input_bounds: vec![(-self.mpc.input_bound, self.mpc.input_bound)],
            state_bounds: None,
            state_inequalities,
            terminal: self.terminal_set()?,
            rollout_includes_drift: self.mpc.rollout_includes_drift,
            max_iters: self.mpc.max_iters,
        };
        cfg.validate(STATE_DIM, INPUT_DIM)?;
        Ok(cfg)
    }

    /// Step used by trigger-rate Monte Carlo studies.
    pub fn effective_eval_step(&self) -> usize {
        self.eval_step.unwrap_or(200.min(self.total_steps - 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn demo_json() -> String {
        r#"{
            "total_steps": 3000,
            "ts": 0.1,
            "seed": 7,
            "policy": "etl",
            "servo": {
                "k_theta": 1280.2, "rho": 20.0, "j_l": 10.0, "j_m": 0.5,
                "beta_l": 25.0, "beta_m": 0.1, "k_t": 10.0, "r_a": 20.0
            },
            "change_schedule": [
                {"step": 1000, "load_ratio": 22.0},
                {"step": 2000, "load_ratio": 19.0}
            ],
            "noise": {
                "sigma_w_diag": [9.9e-5, 9.9e-5, 9.39e-5, 5.6e-6],
                "sigma_z_per_state_row": [1e-10, 1e-5, 1e-10, 1e-10]
            },
            "filter": { "p0_per_state_row": [1e-6, 1e-2, 1e-6, 1e-6] },
            "trigger": { "alpha": 0.01 },
            "mpc": {
                "q_diag": [1.0, 0.1, 1.0, 0.1],
                "r_diag": [0.01],
                "q_terminal_diag": [1.0, 0.1, 1.0, 0.1],
                "horizon": 6,
                "nu": 1.0,
                "input_bound": 220.0,
                "torque_bound": 78.5398
            },
            "experiment": { "length": 200 }
        }"#
        .to_string()
    }

    #[test]
    fn parses_and_validates_demo() {
        let sc = Scenario::from_json(&demo_json()).unwrap();
        assert_eq!(sc.total_steps, 3000);
        assert_eq!(sc.policy, Policy::Etl);
        assert_eq!(sc.change_schedule.len(), 2);
        assert_eq!(sc.experiment.stop, ExperimentStop::FixedDuration);
        assert_eq!(sc.sigma_z().unwrap().nrows(), PARAM_DIM);
        assert!(sc.mpc_config().is_ok());
        assert!(sc.nominal_model().is_ok());
    }

    #[test]
    fn rejects_change_step_beyond_horizon() {
        let mut sc = Scenario::from_json(&demo_json()).unwrap();
        sc.change_schedule[1].step = 3000;
        match sc.validate() {
            Err(Error::Config(msg)) => assert!(msg.contains("change_schedule")),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_unordered_schedule() {
        let mut sc = Scenario::from_json(&demo_json()).unwrap();
        sc.change_schedule[1].step = 500;
        assert!(sc.validate().is_err());
    }

    #[test]
    fn rejects_out_of_range_load_ratio() {
        let mut sc = Scenario::from_json(&demo_json()).unwrap();
        sc.change_schedule[0].load_ratio = 40.0;
        assert!(sc.validate().is_err());
    }

    #[test]
    fn rejects_zero_process_noise() {
        let mut sc = Scenario::from_json(&demo_json()).unwrap();
        sc.noise.sigma_w_diag[2] = 0.0;
        match sc.validate() {
            Err(Error::Config(msg)) => assert!(msg.contains("sigma_w_diag")),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = demo_json().replace("\"seed\": 7,", "\"seed\": 7, \"sneaky\": 1,");
        assert!(Scenario::from_json(&bad).is_err());
    }

    #[test]
    fn sigma_z_expands_blocks() {
        let sc = Scenario::from_json(&demo_json()).unwrap();
        let sz = sc.sigma_z().unwrap();
        // Row 1 (load torque balance) carries the drift budget.
        for j in 0..5 {
            assert_eq!(sz[(5 + j, 5 + j)], 1e-5);
            assert_eq!(sz[(j, j)], 1e-10);
        }
    }

    #[test]
    fn json_round_trip_is_semantically_identical() {
        let sc = Scenario::from_json(&demo_json()).unwrap();
        let text = serde_json::to_string_pretty(&sc).unwrap();
        let back = Scenario::from_json(&text).unwrap();
        assert_eq!(sc, back);
    }
}
