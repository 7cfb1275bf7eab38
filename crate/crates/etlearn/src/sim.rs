//! Closed-loop simulation of the servo study: the event-triggered learning
//! state machine, the permanent-update and no-update baselines, per-step
//! logging, and the metrics that summarize a run.
//!
//! One run is strictly sequential. Per step:
//!
//! 1. scheduled true-plant changes take effect;
//! 2. the input is chosen according to the policy and mode (the trigger is
//!    consulted only in "control" mode of the ETL policy);
//! 3. the true plant advances with fresh Gaussian process noise;
//! 4. the parameter filter absorbs the new state.
//!
//! A fired trigger switches to "experiment" mode starting with the next
//! step; when the stop condition is met the current estimate becomes the
//! new fixed model, the controller is rebuilt, and the step already runs
//! in "control" mode again. MPC infeasibility is logged and bridged by the
//! saturated remainder of the last feasible plan; it never aborts a run.
//!
//! Identical scenarios (including the seed) produce bitwise-identical
//! logs.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::control::{Controller, MpcStatus};
use crate::error::{Error, Result};
use crate::estimators::{estimate_error_sq, kf_step, FilterState};
use crate::linalg::{chi2_quantile, mahalanobis_sq, matrix_sqrt_psd, regressor, unvectorize, LinearModel, ParamVector};
use crate::scenario::{ExperimentStop, Policy, Scenario, INPUT_DIM, PARAM_DIM, STATE_DIM};
use crate::servo::shaft_torque_row;
use crate::trigger::{evaluate_trigger, TriggerDecision};

/// Operating mode of the ETL state machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Control,
    Experiment,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Control => "control",
            Mode::Experiment => "experiment",
        }
    }
}

/// Discrete events of a run, in chronological order.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    /// The true plant switched its load inertia.
    ParameterChange { load_ratio: f64 },
    /// The learning trigger fired.
    Trigger { statistic: f64, threshold: f64 },
    ExperimentStart,
    ExperimentEnd,
    /// Fixed model and controller were replaced by the current estimate.
    ModelUpdate,
    /// The estimate was rejected as a controller model (not stabilizable);
    /// the previous model stays in place.
    ModelRejected,
    /// The MPC reported infeasibility; the fallback input was applied.
    MpcInfeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub step: usize,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Everything recorded about one step.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub k: usize,
    pub mode: Mode,
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub z_true: DVector<f64>,
    /// Parameters of the model the controller used this step.
    pub z_model: DVector<f64>,
    pub z_hat: DVector<f64>,
    pub trace_p: f64,
    /// Trigger outcome; `None` whenever the trigger was not consulted.
    pub trigger: Option<TriggerDecision>,
    pub state_violation: bool,
    pub input_violation: bool,
    pub mpc_status: MpcStatus,
    /// Mean squared parameter error of the control model.
    pub err_model: f64,
    /// Mean squared parameter error of the filter estimate.
    pub err_est: f64,
}

#[derive(Debug, Clone)]
pub struct SimulationLog {
    pub steps: Vec<StepRecord>,
    pub events: Vec<Event>,
}

/// Detection bookkeeping for one scheduled change.
#[derive(Debug, Clone, Serialize)]
pub struct TriggerDelay {
    pub change_step: usize,
    pub fired_step: Option<usize>,
    pub delay: Option<usize>,
}

/// Run summary in the layout of the policy-comparison table.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub avg_sq_param_error_whole: f64,
    pub avg_sq_param_error_excl_experiments: f64,
    pub experiment_steps: usize,
    pub trigger_count: usize,
    pub experiment_count: usize,
    pub model_updates: usize,
    pub state_violations: usize,
    pub input_violations: usize,
    pub infeasible_steps: usize,
    pub trigger_delays: Vec<TriggerDelay>,
}

/// One plant transition `A x + B u + w`, with `w = chol_l * xi` drawn from
/// the run's RNG stream.
pub fn step_plant(
    model: &LinearModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    sigma_w_chol_l: &DMatrix<f64>,
    rng: &mut impl Rng,
) -> DVector<f64> {
    let n = model.state_dim();
    let xi = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    model.a() * x + model.b() * u + sigma_w_chol_l * xi
}

/// Executes one scenario run under its policy and seed.
pub fn run_scenario(sc: &Scenario) -> Result<(SimulationLog, MetricsReport)> {
    sc.validate()?;
    let nominal = sc.nominal_model()?;
    let filter_noise = sc.filter_noise()?;
    let mpc_cfg = sc.mpc_config()?;

    let mut ctrl = Controller::new(nominal.clone(), mpc_cfg)?;
    let mut trigger_cfg = sc.trigger_config(nominal.param_vector())?;
    let mut filter = FilterState::new(nominal.param_vector(), sc.p0()?)?;

    let mut true_model = nominal.clone();
    let mut z_true = true_model.param_vector().as_vector().clone();

    let sigma_w_chol = sc
        .sigma_w()
        .cholesky()
        .ok_or_else(|| Error::Config("noise.sigma_w_diag must be positive definite".into()))?
        .l()
        .clone();
    let torque_row = sc.mpc.torque_bound.map(|b| (shaft_torque_row(&sc.servo), b));
    let input_bound = sc.mpc.input_bound;

    let mut rng = ChaCha12Rng::seed_from_u64(sc.seed);
    let mut x = DVector::zeros(STATE_DIM);
    let mut mode = Mode::Control;
    let mut arm_experiment = false;
    let mut exp_steps = 0usize;
    let mut last_plan: VecDeque<DVector<f64>> = VecDeque::new();
    let mut schedule = sc.change_schedule.iter().peekable();

    let mut steps = Vec::with_capacity(sc.total_steps);
    let mut events = Vec::new();

    for k in 0..sc.total_steps {
        if let Some(change) = schedule.peek() {
            if change.step == k {
                true_model = sc.discrete_model(change.load_ratio)?;
                z_true = true_model.param_vector().as_vector().clone();
                events.push(Event {
                    step: k,
                    kind: EventKind::ParameterChange {
                        load_ratio: change.load_ratio,
                    },
                });
                schedule.next();
            }
        }

        let trace_p = filter.covariance_trace();
        let mut trigger_outcome = None;
        let mut step_mode = Mode::Control;

        let solution = match sc.policy {
            Policy::Never => solve_or_infeasible(ctrl.solve_nominal(&x)),
            Policy::Permanent => {
                match ctrl.update_model(filter.estimate().model()) {
                    Ok(()) => {}
                    Err(Error::Unstabilizable) => {
                        events.push(Event {
                            step: k,
                            kind: EventKind::ModelRejected,
                        });
                    }
                    Err(e) => return Err(runtime(k, e)),
                }
                solve_or_infeasible(ctrl.solve_nominal(&x))
            }
            Policy::Etl => {
                if mode == Mode::Experiment {
                    let stop = exp_steps >= sc.experiment.length
                        || match sc.experiment.stop {
                            ExperimentStop::FixedDuration => false,
                            ExperimentStop::TraceThreshold { value } => {
                                exp_steps >= 1 && trace_p < value
                            }
                        };
                    if stop {
                        events.push(Event {
                            step: k,
                            kind: EventKind::ExperimentEnd,
                        });
                        match ctrl.update_model(filter.estimate().model()) {
                            Ok(()) => {
                                trigger_cfg.update_model(filter.estimate().clone())?;
                                events.push(Event {
                                    step: k,
                                    kind: EventKind::ModelUpdate,
                                });
                            }
                            Err(Error::Unstabilizable) => {
                                events.push(Event {
                                    step: k,
                                    kind: EventKind::ModelRejected,
                                });
                            }
                            Err(e) => return Err(runtime(k, e)),
                        }
                        mode = Mode::Control;
                    }
                }
                if mode == Mode::Experiment {
                    if exp_steps == 0 {
                        events.push(Event {
                            step: k,
                            kind: EventKind::ExperimentStart,
                        });
                    }
                    exp_steps += 1;
                    step_mode = Mode::Experiment;
                    solve_or_infeasible(ctrl.solve_experiment(
                        &x,
                        filter.covariance(),
                        &filter_noise,
                    ))
                } else {
                    let decision =
                        evaluate_trigger(&filter, &trigger_cfg).map_err(|e| runtime(k, e))?;
                    if decision.fired {
                        events.push(Event {
                            step: k,
                            kind: EventKind::Trigger {
                                statistic: decision.statistic,
                                threshold: decision.threshold,
                            },
                        });
                        arm_experiment = true;
                    }
                    trigger_outcome = Some(decision);
                    solve_or_infeasible(ctrl.solve_nominal(&x))
                }
            }
        };

        let (u, status) = if solution.is_feasible() {
            let u = solution.inputs[0].clone();
            last_plan = solution.inputs[1..].iter().cloned().collect();
            (u, solution.status)
        } else {
            events.push(Event {
                step: k,
                kind: EventKind::MpcInfeasible,
            });
            let mut u = last_plan.pop_front().unwrap_or_else(|| DVector::zeros(INPUT_DIM));
            for j in 0..u.len() {
                u[j] = u[j].clamp(-input_bound, input_bound);
            }
            (u, MpcStatus::Infeasible)
        };

        let state_violation = torque_row
            .as_ref()
            .map(|(row, bound)| row.dot(&x).abs() > *bound)
            .unwrap_or(false);
        let input_violation = u.iter().any(|v| v.abs() > input_bound);

        let z_model = ctrl.model().param_vector().as_vector().clone();
        let z_hat = filter.estimate().as_vector().clone();
        steps.push(StepRecord {
            k,
            mode: step_mode,
            x: x.clone(),
            u: u.clone(),
            z_true: z_true.clone(),
            err_model: estimate_error_sq(&z_model, &z_true)?,
            err_est: estimate_error_sq(&z_hat, &z_true)?,
            z_model,
            z_hat,
            trace_p,
            trigger: trigger_outcome,
            state_violation,
            input_violation,
            mpc_status: status,
        });

        let x_next = step_plant(&true_model, &x, &u, &sigma_w_chol, &mut rng);
        let reg = regressor(&x, &u);
        filter = kf_step(&filter, &x_next, &reg, &filter_noise)
            .map_err(|e| runtime(k, e))?
            .0;
        x = x_next;

        if arm_experiment {
            mode = Mode::Experiment;
            exp_steps = 0;
            arm_experiment = false;
        }
    }

    let log = SimulationLog { steps, events };
    let metrics = compute_metrics(&log)?;
    Ok((log, metrics))
}

fn runtime(step: usize, e: Error) -> Error {
    Error::Runtime {
        step,
        message: e.to_string(),
    }
}

/// Numerical solver breakdowns on pathological states are folded into the
/// infeasibility fallback so that Monte Carlo sweeps never abort mid-run.
fn solve_or_infeasible(sol: Result<crate::control::MpcSolution>) -> crate::control::MpcSolution {
    sol.unwrap_or_else(|_| crate::control::MpcSolution::infeasible())
}

/// Aggregates a log into the table metrics: whole-run and
/// excluding-excitation model errors, violation and event counts, and the
/// detection delay after each scheduled change.
pub fn compute_metrics(log: &SimulationLog) -> Result<MetricsReport> {
    if log.steps.is_empty() {
        return Err(Error::InvalidArgument("empty simulation log".into()));
    }
    let whole: f64 =
        log.steps.iter().map(|s| s.err_model).sum::<f64>() / log.steps.len() as f64;
    let control_steps: Vec<&StepRecord> = log
        .steps
        .iter()
        .filter(|s| s.mode != Mode::Experiment)
        .collect();
    if control_steps.is_empty() {
        return Err(Error::InvalidArgument(
            "no non-experiment steps to average over".into(),
        ));
    }
    let excl: f64 =
        control_steps.iter().map(|s| s.err_model).sum::<f64>() / control_steps.len() as f64;

    let mut trigger_count = 0;
    let mut experiment_count = 0;
    let mut model_updates = 0;
    let mut infeasible_steps = 0;
    let mut changes = Vec::new();
    let mut fires = Vec::new();
    for ev in &log.events {
        match ev.kind {
            EventKind::Trigger { .. } => {
                trigger_count += 1;
                fires.push(ev.step);
            }
            EventKind::ExperimentStart => experiment_count += 1,
            EventKind::ModelUpdate => model_updates += 1,
            EventKind::MpcInfeasible => infeasible_steps += 1,
            EventKind::ParameterChange { .. } => changes.push(ev.step),
            _ => {}
        }
    }

    let mut trigger_delays = Vec::new();
    for (i, &c) in changes.iter().enumerate() {
        let next_change = changes.get(i + 1).copied().unwrap_or(usize::MAX);
        let fired_step = fires
            .iter()
            .copied()
            .find(|&f| f >= c && f < next_change);
        trigger_delays.push(TriggerDelay {
            change_step: c,
            fired_step,
            delay: fired_step.map(|f| f - c),
        });
    }

    Ok(MetricsReport {
        avg_sq_param_error_whole: whole,
        avg_sq_param_error_excl_experiments: excl,
        experiment_steps: log.steps.iter().filter(|s| s.mode == Mode::Experiment).count(),
        trigger_count,
        experiment_count,
        model_updates,
        state_violations: log.steps.iter().filter(|s| s.state_violation).count(),
        input_violations: log.steps.iter().filter(|s| s.input_violation).count(),
        infeasible_steps,
        trigger_delays,
    })
}

/// Outcome of one trigger false-positive trial.
#[derive(Debug, Clone, Copy)]
pub struct FprTrial {
    /// Did the perfect-model test fire at the evaluation step?
    pub fired_at_eval: bool,
    /// Test statistic at the evaluation step.
    pub statistic_at_eval: f64,
    /// Number of fired steps strictly before the evaluation step.
    pub fires_before_eval: usize,
}

/// One Monte Carlo trial of the false-positive guarantee.
///
/// The plant is simulated under the filter's assumed model: the true
/// parameters start at the nominal model and drift by `N(0, Sigma_z)`
/// before each observation, while the nominal controller regulates using
/// the unchanged initial model. Starting from zero initial parameter error
/// makes the test conservative at first (the prior covariance overstates
/// the actual error) and exact once the drift dominates, so the firing
/// probability never exceeds the level. The "perfect model" test compares
/// the estimate against the current true parameters, so any firing is a
/// false positive by construction.
pub fn fpr_trial(sc: &Scenario, seed: u64, alpha: f64, eval_step: usize) -> Result<FprTrial> {
    let nominal = sc.nominal_model()?;
    let filter_noise = sc.filter_noise()?;
    let ctrl = Controller::new(nominal.clone(), sc.mpc_config()?)?;
    let threshold = chi2_quantile(1.0 - alpha, PARAM_DIM)?;

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let p0 = sc.p0()?;
    let sigma_z_sqrt = matrix_sqrt_psd(&sc.sigma_z()?);
    let sigma_w_chol = sc
        .sigma_w()
        .cholesky()
        .ok_or_else(|| Error::Config("noise.sigma_w_diag must be positive definite".into()))?
        .l()
        .clone();

    let mut z_true = nominal.param_vector().as_vector().clone();

    let mut filter = FilterState::new(nominal.param_vector(), p0)?;
    let mut x = DVector::zeros(STATE_DIM);
    let mut last_plan: VecDeque<DVector<f64>> = VecDeque::new();
    let mut fires_before = 0usize;

    for k in 0..=eval_step {
        let sol = solve_or_infeasible(ctrl.solve_nominal(&x));
        let u = if sol.is_feasible() {
            last_plan = sol.inputs[1..].iter().cloned().collect();
            sol.inputs[0].clone()
        } else {
            let mut u = last_plan.pop_front().unwrap_or_else(|| DVector::zeros(INPUT_DIM));
            for j in 0..u.len() {
                u[j] = u[j].clamp(-sc.mpc.input_bound, sc.mpc.input_bound);
            }
            u
        };

        // Drift first, then observe the post-drift parameters.
        let xi = DVector::from_fn(PARAM_DIM, |_, _| StandardNormal.sample(&mut rng));
        z_true += &sigma_z_sqrt * xi;
        let theta = unvectorize(&z_true, STATE_DIM, INPUT_DIM)?;
        let reg = regressor(&x, &u);
        let xi = DVector::from_fn(STATE_DIM, |_, _| StandardNormal.sample(&mut rng));
        let x_next = theta.transpose() * reg.d() + &sigma_w_chol * xi;

        filter = kf_step(&filter, &x_next, &reg, &filter_noise)
            .map_err(|e| runtime(k, e))?
            .0;
        x = x_next;

        let resid = filter.estimate().as_vector() - &z_true;
        let stat =
            mahalanobis_sq(&resid, filter.covariance()).map_err(|e| runtime(k, e))?;
        if k == eval_step {
            return Ok(FprTrial {
                fired_at_eval: stat > threshold,
                statistic_at_eval: stat,
                fires_before_eval: fires_before,
            });
        }
        if stat > threshold {
            fires_before += 1;
        }
    }
    unreachable!("loop returns at the evaluation step");
}

/// Convenience wrapper: parameter vector of the current true servo model.
pub fn true_param_vector(model: &LinearModel) -> ParamVector {
    model.param_vector()
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;
    use crate::scenario::{
        ExperimentSpec, FilterSpec, MpcSpec, NoiseSpec, TriggerSpec,
    };
    use crate::servo::ServoParams;

    /// A short, cheap servo scenario for integration-style unit tests.
    pub(crate) fn tiny_scenario() -> Scenario {
        small_scenario(Policy::Etl, 30)
    }

    pub(crate) fn small_scenario(policy: Policy, total_steps: usize) -> Scenario {
        Scenario {
            total_steps,
            ts: 0.1,
            seed: 11,
            policy,
            servo: ServoParams {
                k_theta: 1280.2,
                rho: 20.0,
                j_l: 10.0,
                j_m: 0.5,
                beta_l: 25.0,
                beta_m: 0.1,
                k_t: 10.0,
                r_a: 20.0,
            },
            change_schedule: vec![],
            noise: NoiseSpec {
                sigma_w_diag: vec![9.9e-5, 9.9e-5, 9.39e-5, 5.6e-6],
                sigma_z_per_state_row: vec![1e-10, 1e-5, 1e-10, 1e-10],
                sigma_z_load_direction: 0.0,
                lambda: 1.0,
            },
            filter: FilterSpec {
                p0_per_state_row: vec![1e-6, 1e-2, 1e-6, 1e-6],
                p0_load_direction: 0.0,
                sigma_w_inflation: 1.0,
            },
            trigger: TriggerSpec { alpha: 0.01 },
            mpc: MpcSpec {
                q_diag: vec![1.0, 0.1, 1.0, 0.1],
                r_diag: vec![0.01],
                q_terminal_diag: vec![1.0, 0.1, 1.0, 0.1],
                horizon: 6,
                nu: 1.0,
                input_bound: 220.0,
                torque_bound: Some(78.5398),
                terminal: "origin".into(),
                rollout_includes_drift: true,
                max_iters: 40,
            },
            experiment: ExperimentSpec {
                length: 30,
                stop: ExperimentStop::FixedDuration,
            },
            eval_step: None,
        }
    }
}
