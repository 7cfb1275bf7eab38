//! Command implementations behind the `etlearn` binary: single runs with
//! machine-readable outputs, the three-policy comparison table, and the
//! false-positive-rate Monte Carlo.
//!
//! File outputs (UTF-8, LF, `.` decimal separator):
//!
//! - `log.csv` — one row per step; the column set is fixed and independent
//!   of the policy. Trigger columns are empty on steps where the trigger
//!   was not consulted.
//! - `metrics.json` — the [`MetricsReport`] of the run.
//! - `events.json` — chronological event list.
//! - `table1.json` — per-policy error averages across paired seeds plus
//!   sign-test verdicts on the orderings.
//! - `fpr.json` — empirical trigger rate at the evaluation step with its
//!   binomial interval.
//! - `manifest.json` — what produced the outputs.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scenario::{Policy, Scenario};
use crate::sim::{fpr_trial, run_scenario, MetricsReport, SimulationLog};

/// Provenance record written next to every output set.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub scenario_path: String,
    pub output_dir: String,
    pub seeds: Vec<u64>,
    pub policies: Vec<String>,
    pub tool_version: String,
}

impl RunManifest {
    fn new(scenario_path: &Path, out_dir: &Path, seeds: Vec<u64>, policies: Vec<String>) -> Self {
        Self {
            scenario_path: scenario_path.display().to_string(),
            output_dir: out_dir.display().to_string(),
            seeds,
            policies,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// Serializes a step log into the stable CSV schema.
pub fn log_to_csv(log: &SimulationLog) -> String {
    let n = log.steps.first().map(|s| s.x.len()).unwrap_or(0);
    let m = log.steps.first().map(|s| s.u.len()).unwrap_or(0);
    let mut out = String::new();
    out.push('k');
    out.push_str(",mode");
    for i in 1..=n {
        let _ = write!(out, ",x{i}");
    }
    for j in 1..=m {
        let _ = write!(out, ",u{j}");
    }
    out.push_str(",trace_p,statistic,threshold,fired,state_violation,input_violation,mpc_status,err_model,err_est\n");
    for s in &log.steps {
        let _ = write!(out, "{},{}", s.k, s.mode.as_str());
        for v in s.x.iter() {
            let _ = write!(out, ",{v}");
        }
        for v in s.u.iter() {
            let _ = write!(out, ",{v}");
        }
        let _ = write!(out, ",{}", s.trace_p);
        match &s.trigger {
            Some(t) => {
                let _ = write!(out, ",{},{},{}", t.statistic, t.threshold, u8::from(t.fired));
            }
            None => out.push_str(",,,"),
        }
        let _ = writeln!(
            out,
            ",{},{},{},{},{}",
            u8::from(s.state_violation),
            u8::from(s.input_violation),
            s.mpc_status.as_str(),
            s.err_model,
            s.err_est
        );
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, &text)
}

fn prepare_out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

/// Installs a rayon pool of the requested size for the duration of `f`.
fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match jobs {
        None => f(),
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .expect("thread pool construction cannot fail with a positive size")
            .install(f),
    }
}

/// `run` subcommand: one policy, one seed, full outputs.
pub fn cmd_run(
    scenario_path: &Path,
    policy: Option<Policy>,
    seed: Option<u64>,
    out_dir: &Path,
) -> Result<()> {
    let mut sc = Scenario::from_path(scenario_path)?;
    if let Some(p) = policy {
        sc.policy = p;
    }
    if let Some(s) = seed {
        sc.seed = s;
    }
    sc.validate()?;

    let (log, metrics) = run_scenario(&sc)?;
    prepare_out_dir(out_dir)?;
    write_file(&out_dir.join("log.csv"), &log_to_csv(&log))?;
    write_json(&out_dir.join("metrics.json"), &metrics)?;
    write_json(&out_dir.join("events.json"), &log.events)?;
    write_json(
        &out_dir.join("manifest.json"),
        &RunManifest::new(scenario_path, out_dir, vec![sc.seed], vec![sc.policy.as_str().into()]),
    )?;
    println!(
        "run complete: policy={} seed={} steps={} triggers={} -> {}",
        sc.policy.as_str(),
        sc.seed,
        log.steps.len(),
        metrics.trigger_count,
        out_dir.display()
    );
    Ok(())
}

/// Mean and standard error across seeds.
#[derive(Debug, Clone, Serialize)]
pub struct Aggregate {
    pub mean: f64,
    pub stderr: f64,
    pub per_seed: Vec<f64>,
}

impl Aggregate {
    fn from(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            stderr: (var / n).sqrt(),
            per_seed: values,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PolicyErrors {
    pub whole_run: Aggregate,
    pub excluding_excitation: Aggregate,
    pub state_violations: usize,
    pub infeasible_steps: usize,
}

/// One-sided sign test for "left < right" over paired seeds.
#[derive(Debug, Clone, Serialize)]
pub struct SignTest {
    pub wins: usize,
    pub ties: usize,
    pub pairs: usize,
    pub p_value: f64,
    pub significant_at_0_05: bool,
}

fn sign_test(left: &[f64], right: &[f64]) -> SignTest {
    let mut wins = 0usize;
    let mut ties = 0usize;
    for (l, r) in left.iter().zip(right) {
        if l < r {
            wins += 1;
        } else if l == r {
            ties += 1;
        }
    }
    let n = left.len() - ties;
    // P[X >= wins] for X ~ Binomial(n, 1/2).
    let mut p = 0.0;
    let mut coef = 1.0f64;
    // coef tracks C(n, k) incrementally from k = 0.
    let mut tail = Vec::with_capacity(n + 1);
    for k in 0..=n {
        tail.push(coef);
        coef = coef * (n - k) as f64 / (k + 1) as f64;
    }
    let scale = 0.5f64.powi(n as i32);
    for (k, c) in tail.iter().enumerate() {
        if k >= wins {
            p += c * scale;
        }
    }
    SignTest {
        wins,
        ties,
        pairs: left.len(),
        p_value: p,
        significant_at_0_05: p < 0.05,
    }
}

/// Comparison table across the three update policies.
#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub seeds: Vec<u64>,
    pub etl: PolicyErrors,
    pub permanent: PolicyErrors,
    pub never: PolicyErrors,
    /// Sign test: ETL beats permanent updates on the excluding-excitation
    /// error, pairwise by seed.
    pub etl_lt_permanent_excl: SignTest,
    /// Sign test: ETL beats the never-updated model on the same metric.
    pub etl_lt_never_excl: SignTest,
    /// Whether the never-updated policy has the worst whole-run mean.
    pub never_worst_whole_run: bool,
}

/// Runs all three policies on paired seeds and aggregates the table.
pub fn compare_policies(sc: &Scenario, n_seeds: usize, jobs: Option<usize>) -> Result<CompareReport> {
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|i| sc.seed.wrapping_add(i)).collect();
    let metrics = with_pool(jobs, || -> Result<Vec<(Policy, Vec<MetricsReport>)>> {
        use rayon::prelude::*;
        [Policy::Etl, Policy::Permanent, Policy::Never]
            .into_iter()
            .map(|policy| {
                let per_seed: Result<Vec<MetricsReport>> = seeds
                    .par_iter()
                    .map(|&seed| {
                        let mut run_sc = sc.clone();
                        run_sc.policy = policy;
                        run_sc.seed = seed;
                        run_scenario(&run_sc).map(|(_, m)| m)
                    })
                    .collect();
                Ok((policy, per_seed?))
            })
            .collect()
    })?;

    let collect = |policy: Policy| -> PolicyErrors {
        let ms = &metrics.iter().find(|(p, _)| *p == policy).expect("policy present").1;
        PolicyErrors {
            whole_run: Aggregate::from(ms.iter().map(|m| m.avg_sq_param_error_whole).collect()),
            excluding_excitation: Aggregate::from(
                ms.iter().map(|m| m.avg_sq_param_error_excl_experiments).collect(),
            ),
            state_violations: ms.iter().map(|m| m.state_violations).sum(),
            infeasible_steps: ms.iter().map(|m| m.infeasible_steps).sum(),
        }
    };
    let etl = collect(Policy::Etl);
    let permanent = collect(Policy::Permanent);
    let never = collect(Policy::Never);

    let etl_lt_permanent_excl = sign_test(
        &etl.excluding_excitation.per_seed,
        &permanent.excluding_excitation.per_seed,
    );
    let etl_lt_never_excl = sign_test(
        &etl.excluding_excitation.per_seed,
        &never.excluding_excitation.per_seed,
    );
    let never_worst_whole_run = never.whole_run.mean >= etl.whole_run.mean
        && never.whole_run.mean >= permanent.whole_run.mean;

    Ok(CompareReport {
        seeds,
        etl,
        permanent,
        never,
        etl_lt_permanent_excl,
        etl_lt_never_excl,
        never_worst_whole_run,
    })
}

/// `compare` subcommand.
pub fn cmd_compare(
    scenario_path: &Path,
    n_seeds: usize,
    out_dir: &Path,
    jobs: Option<usize>,
) -> Result<()> {
    if n_seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    let sc = Scenario::from_path(scenario_path)?;
    let report = compare_policies(&sc, n_seeds, jobs)?;
    prepare_out_dir(out_dir)?;
    write_json(&out_dir.join("table1.json"), &report)?;
    write_json(
        &out_dir.join("manifest.json"),
        &RunManifest::new(
            scenario_path,
            out_dir,
            report.seeds.clone(),
            ["etl", "permanent", "never"].map(String::from).to_vec(),
        ),
    )?;
    println!(
        "compare complete over {} seeds: excl-excitation means etl={:.4e} permanent={:.4e} never={:.4e} -> {}",
        n_seeds,
        report.etl.excluding_excitation.mean,
        report.permanent.excluding_excitation.mean,
        report.never.excluding_excitation.mean,
        out_dir.display()
    );
    Ok(())
}

/// Trigger false-positive study, written to `fpr.json`.
#[derive(Debug, Clone, Serialize)]
pub struct FprReport {
    pub alpha: f64,
    pub runs: usize,
    pub eval_step: usize,
    pub fired_at_eval: usize,
    pub rate: f64,
    /// Normal-approximation 95% interval on the rate.
    pub rate_ci95: (f64, f64),
    /// The acceptance bound `alpha + 3 sqrt(alpha (1-alpha) / runs)`.
    pub bound: f64,
    pub rate_within_bound: bool,
    pub mean_statistic_at_eval: f64,
    /// Chi-square degrees of freedom of the test.
    pub dof: usize,
    /// Runs with at least one (false) fire strictly before the evaluation
    /// step; reported without any claimed bound, since the per-step level
    /// does not control the family-wise rate over a run.
    pub runs_with_any_fire_before_eval: usize,
}

/// Runs the Monte Carlo and aggregates the report.
pub fn montecarlo_fpr(
    sc: &Scenario,
    runs: usize,
    alpha: f64,
    eval_step: usize,
    jobs: Option<usize>,
) -> Result<FprReport> {
    if !sc.change_schedule.is_empty() {
        return Err(Error::Config(
            "montecarlo requires a scenario without scheduled changes".into(),
        ));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!(
            "--alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if runs == 0 {
        return Err(Error::Config("--runs must be at least 1".into()));
    }
    let trials = with_pool(jobs, || -> Result<Vec<crate::sim::FprTrial>> {
        use rayon::prelude::*;
        (0..runs as u64)
            .into_par_iter()
            .map(|i| fpr_trial(sc, sc.seed.wrapping_add(i), alpha, eval_step))
            .collect()
    })?;

    let fired = trials.iter().filter(|t| t.fired_at_eval).count();
    let rate = fired as f64 / runs as f64;
    let se = (rate * (1.0 - rate) / runs as f64).sqrt();
    let bound = alpha + 3.0 * (alpha * (1.0 - alpha) / runs as f64).sqrt();
    Ok(FprReport {
        alpha,
        runs,
        eval_step,
        fired_at_eval: fired,
        rate,
        rate_ci95: ((rate - 1.96 * se).max(0.0), (rate + 1.96 * se).min(1.0)),
        bound,
        rate_within_bound: rate <= bound,
        mean_statistic_at_eval: trials.iter().map(|t| t.statistic_at_eval).sum::<f64>()
            / runs as f64,
        dof: crate::scenario::PARAM_DIM,
        runs_with_any_fire_before_eval: trials.iter().filter(|t| t.fires_before_eval > 0).count(),
    })
}

/// `montecarlo` subcommand.
pub fn cmd_montecarlo(
    scenario_path: &Path,
    runs: usize,
    alpha: Option<f64>,
    eval_step: Option<usize>,
    out_dir: &Path,
    jobs: Option<usize>,
) -> Result<()> {
    let sc = Scenario::from_path(scenario_path)?;
    let alpha = alpha.unwrap_or(sc.trigger.alpha);
    let eval_step = eval_step.unwrap_or_else(|| sc.effective_eval_step());
    if eval_step >= sc.total_steps {
        return Err(Error::Config(format!(
            "--eval-step {eval_step} must be < total_steps = {}",
            sc.total_steps
        )));
    }
    let report = montecarlo_fpr(&sc, runs, alpha, eval_step, jobs)?;
    prepare_out_dir(out_dir)?;
    write_json(&out_dir.join("fpr.json"), &report)?;
    write_json(
        &out_dir.join("manifest.json"),
        &RunManifest::new(
            scenario_path,
            out_dir,
            vec![sc.seed],
            vec![sc.policy.as_str().into()],
        ),
    )?;
    println!(
        "montecarlo complete: rate={:.4} (alpha={alpha}, bound={:.4}, runs={runs}) -> {}",
        report.rate,
        report.bound,
        out_dir.display()
    );
    Ok(())
}

/// Maps an error to the documented process exit code: 2 for configuration
/// problems, 3 for runtime failures.
pub fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Json(_) => 2,
        _ => 3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::tests_support::tiny_scenario;

    #[test]
    fn sign_test_extremes() {
        let left = vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let right = vec![2.0; 6];
        let t = sign_test(&left, &right);
        assert_eq!(t.wins, 6);
        assert!((t.p_value - 0.5f64.powi(6)).abs() < 1e-12);
        assert!(t.significant_at_0_05);

        let t2 = sign_test(&right, &left);
        assert_eq!(t2.wins, 0);
        assert!((t2.p_value - 1.0).abs() < 1e-12);
        assert!(!t2.significant_at_0_05);
    }

    #[test]
    fn sign_test_drops_ties() {
        let left = vec![1.0, 2.0, 3.0];
        let right = vec![1.0, 3.0, 4.0];
        let t = sign_test(&left, &right);
        assert_eq!(t.ties, 1);
        assert_eq!(t.wins, 2);
        // P[X >= 2], X ~ Bin(2, 1/2) = 1/4.
        assert!((t.p_value - 0.25).abs() < 1e-12);
    }

    #[test]
    fn csv_schema_is_stable_across_policies() {
        let mut sc = tiny_scenario();
        sc.policy = Policy::Never;
        let (log_never, _) = run_scenario(&sc).unwrap();
        sc.policy = Policy::Etl;
        let (log_etl, _) = run_scenario(&sc).unwrap();
        let head = |csv: &str| csv.lines().next().unwrap().to_string();
        let csv_never = log_to_csv(&log_never);
        let csv_etl = log_to_csv(&log_etl);
        assert_eq!(head(&csv_never), head(&csv_etl));
        let cols = head(&csv_etl).split(',').count();
        for line in csv_etl.lines().skip(1) {
            assert_eq!(line.split(',').count(), cols);
        }
    }

    #[test]
    fn montecarlo_rejects_scheduled_changes() {
        let mut sc = tiny_scenario();
        sc.change_schedule = vec![crate::scenario::LoadChange {
            step: 5,
            load_ratio: 22.0,
        }];
        sc.total_steps = 10;
        assert!(matches!(
            montecarlo_fpr(&sc, 3, 0.05, 5, None),
            Err(Error::Config(_))
        ));
    }
}
