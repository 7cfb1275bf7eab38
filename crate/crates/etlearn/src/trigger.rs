//! The learning trigger: a per-step statistical test of the null hypothesis
//! that the filter estimate still agrees with the fixed model used for
//! control.
//!
//! The test statistic is the squared Mahalanobis distance between the
//! filter estimate and the fixed model under the filter covariance; it is
//! compared against the `1 - alpha` chi-square quantile with `n(n+m)`
//! degrees of freedom. With a perfect model the probability of firing is at
//! most `alpha` per step.
//!
//! A singular covariance makes the test undefined, and the error is
//! propagated rather than treated as "no trigger": silently skipping the
//! test on a degenerate covariance would void the false-positive guarantee.

use crate::error::{Error, Result};
use crate::estimators::FilterState;
use crate::linalg::{chi2_quantile, mahalanobis_sq, ParamVector};

/// Trigger parameters: significance level, the fixed model in vectorized
/// form, and the precomputed chi-square threshold.
#[derive(Debug, Clone)]
pub struct TriggerConfig {
    alpha: f64,
    z_star: ParamVector,
    threshold: f64,
}

impl TriggerConfig {
    pub fn new(alpha: f64, z_star: ParamVector) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "significance level must lie in (0, 1), got {alpha}"
            )));
        }
        let threshold = chi2_quantile(1.0 - alpha, z_star.dof())?;
        Ok(Self {
            alpha,
            z_star,
            threshold,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn z_star(&self) -> &ParamVector {
        &self.z_star
    }

    /// Chi-square degrees of freedom, `n(n+m)`.
    pub fn dof(&self) -> usize {
        self.z_star.dof()
    }

    /// The chi-square threshold `chi2_{1-alpha, dof}`.
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Replaces the fixed model after a learning experiment.
    pub fn update_model(&mut self, z_star: ParamVector) -> Result<()> {
        if z_star.dof() != self.z_star.dof() {
            return Err(Error::DimensionMismatch(format!(
                "new model has {} parameters, trigger expects {}",
                z_star.dof(),
                self.z_star.dof()
            )));
        }
        self.z_star = z_star;
        Ok(())
    }
}

/// Outcome of one trigger evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerDecision {
    /// True iff the statistic exceeds the threshold.
    pub fired: bool,
    /// Squared Mahalanobis distance between estimate and fixed model.
    pub statistic: f64,
    /// Chi-square threshold at the configured level.
    pub threshold: f64,
    /// `statistic / threshold`; values above one fire.
    pub normalized: f64,
}

/// Evaluates the trigger against the current filter state.
pub fn evaluate_trigger(state: &FilterState, cfg: &TriggerConfig) -> Result<TriggerDecision> {
    if state.estimate().dof() != cfg.dof() {
        return Err(Error::DimensionMismatch(format!(
            "filter tracks {} parameters, trigger expects {}",
            state.estimate().dof(),
            cfg.dof()
        )));
    }
    let residual = state.estimate().as_vector() - cfg.z_star.as_vector();
    let statistic = mahalanobis_sq(&residual, state.covariance())?;
    Ok(TriggerDecision {
        fired: statistic > cfg.threshold,
        statistic,
        threshold: cfg.threshold,
        normalized: statistic / cfg.threshold,
    })
}

/// High-probability bound on the (squared-Mahalanobis) distance between the
/// fixed model and the true parameters when the test did not fire:
/// `sqrt(2) * threshold`. Returns `None` after a fired trigger, where no
/// such bound holds. Reported for diagnostics only; no control decision
/// depends on it.
pub fn model_truth_bound(decision: &TriggerDecision) -> Option<f64> {
    if decision.fired {
        None
    } else {
        Some(std::f64::consts::SQRT_2 * decision.threshold)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::estimators::FilterState;
    use crate::linalg::ParamVector;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn state_with(z: Vec<f64>, p: DMatrix<f64>, n: usize, m: usize) -> FilterState {
        FilterState::new(ParamVector::new(DVector::from_vec(z), n, m).unwrap(), p).unwrap()
    }

    fn config_with(alpha: f64, z_star: Vec<f64>, n: usize, m: usize) -> TriggerConfig {
        TriggerConfig::new(alpha, ParamVector::new(DVector::from_vec(z_star), n, m).unwrap())
            .unwrap()
    }

    #[test]
    fn zero_residual_never_fires() {
        let p = DMatrix::<f64>::identity(2, 2) * 0.5;
        let state = state_with(vec![1.0, -2.0], p, 1, 1);
        for &alpha in &[0.001, 0.01, 0.05, 0.5, 0.99] {
            let cfg = config_with(alpha, vec![1.0, -2.0], 1, 1);
            let d = evaluate_trigger(&state, &cfg).unwrap();
            assert_eq!(d.statistic, 0.0);
            assert!(!d.fired);
        }
    }

    #[test]
    fn scalar_rig_fires_on_large_residual() {
        // dof = 1 (n = 1, m = 0): threshold at alpha = 0.05 is 3.8415.
        let state = state_with(vec![2.0], DMatrix::from_element(1, 1, 1.0), 1, 0);
        let cfg = config_with(0.05, vec![0.0], 1, 0);
        let d = evaluate_trigger(&state, &cfg).unwrap();
        assert_abs_diff_eq!(d.statistic, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.threshold, 3.8415, epsilon = 1e-3);
        assert!(d.fired);

        // Same residual, wider covariance: statistic 1 stays quiet.
        let state = state_with(vec![2.0], DMatrix::from_element(1, 1, 4.0), 1, 0);
        let d = evaluate_trigger(&state, &cfg).unwrap();
        assert_abs_diff_eq!(d.statistic, 1.0, epsilon = 1e-12);
        assert!(!d.fired);
    }

    #[test]
    fn truth_bound_only_without_trigger() {
        let fired = TriggerDecision {
            fired: true,
            statistic: 10.0,
            threshold: 3.8415,
            normalized: 10.0 / 3.8415,
        };
        assert_eq!(model_truth_bound(&fired), None);

        let quiet = TriggerDecision {
            fired: false,
            statistic: 1.0,
            threshold: 3.8415,
            normalized: 1.0 / 3.8415,
        };
        let bound = model_truth_bound(&quiet).unwrap();
        assert_abs_diff_eq!(bound, 5.4327, epsilon = 1e-3);
        assert!(bound > quiet.threshold);
    }

    #[test]
    fn decreasing_alpha_never_creates_a_trigger() {
        let mut rng = StdRng::seed_from_u64(8);
        let alphas = [0.5, 0.2, 0.1, 0.05, 0.01, 0.001];
        for _ in 0..20 {
            let z: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
            let state = state_with(z, DMatrix::<f64>::identity(2, 2), 1, 1);
            let cfg0 = config_with(alphas[0], vec![0.0, 0.0], 1, 1);
            let mut prev = evaluate_trigger(&state, &cfg0).unwrap().fired;
            for &alpha in &alphas[1..] {
                let cfg = config_with(alpha, vec![0.0, 0.0], 1, 1);
                let now = evaluate_trigger(&state, &cfg).unwrap().fired;
                assert!(
                    prev || !now,
                    "alpha {alpha} fired although a larger alpha did not"
                );
                prev = now;
            }
        }
    }

    #[test]
    fn statistic_invariant_under_reparameterization() {
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..50 {
            let dof = 3;
            let z = DVector::from_fn(dof, |_, _| rng.random_range(-1.0..1.0));
            let z_star = DVector::from_fn(dof, |_, _| rng.random_range(-1.0..1.0));
            let l = DMatrix::from_fn(dof, dof, |i, j| {
                if i > j {
                    rng.random_range(-0.3..0.3)
                } else if i == j {
                    rng.random_range(0.7..1.3)
                } else {
                    0.0
                }
            });
            let p = &l * l.transpose();

            // Well-conditioned transform: orthogonal factor times bounded
            // diagonal scaling.
            let t = {
                let raw = DMatrix::from_fn(dof, dof, |_, _| rng.random_range(-1.0..1.0));
                let q = raw.qr().q();
                let d = DMatrix::from_diagonal(&DVector::from_fn(dof, |_, _| {
                    rng.random_range(0.5..2.0)
                }));
                q * d
            };

            let s1 = {
                let state =
                    FilterState::new(ParamVector::new(z.clone(), 1, 2).unwrap(), p.clone())
                        .unwrap();
                let cfg =
                    TriggerConfig::new(0.05, ParamVector::new(z_star.clone(), 1, 2).unwrap())
                        .unwrap();
                evaluate_trigger(&state, &cfg).unwrap().statistic
            };
            let s2 = {
                let mut tp = &t * &p * t.transpose();
                let tt = tp.transpose();
                tp += tt;
                tp *= 0.5;
                let state =
                    FilterState::new(ParamVector::new(&t * &z, 1, 2).unwrap(), tp).unwrap();
                let cfg =
                    TriggerConfig::new(0.05, ParamVector::new(&t * &z_star, 1, 2).unwrap())
                        .unwrap();
                evaluate_trigger(&state, &cfg).unwrap().statistic
            };
            assert_abs_diff_eq!(s1, s2, epsilon = 1e-8);
        }
    }

    #[test]
    fn residual_scaling_scales_statistic_quadratically() {
        let p = DMatrix::<f64>::identity(2, 2) * 0.3;
        let base = state_with(vec![0.1, -0.05], p.clone(), 1, 1);
        let cfg = config_with(0.01, vec![0.0, 0.0], 1, 1);
        let s1 = evaluate_trigger(&base, &cfg).unwrap().statistic;
        for &c in &[2.0, 5.0, 20.0] {
            let scaled = state_with(vec![0.1 * c, -0.05 * c], p.clone(), 1, 1);
            let sc = evaluate_trigger(&scaled, &cfg).unwrap().statistic;
            assert_abs_diff_eq!(sc, c * c * s1, epsilon = 1e-9 * c * c);
        }
        // Any nonzero residual fires for a large enough scaling.
        let huge = state_with(vec![100.0, -50.0], p, 1, 1);
        assert!(evaluate_trigger(&huge, &cfg).unwrap().fired);
    }

    #[test]
    fn singular_covariance_is_an_error() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        // FilterState::new accepts PSD matrices; the trigger must still
        // refuse to evaluate on a singular one.
        let state = FilterState::new(
            ParamVector::new(DVector::from_vec(vec![1.0, 0.0]), 1, 1).unwrap(),
            p,
        )
        .unwrap();
        let cfg = config_with(0.05, vec![0.0, 0.0], 1, 1);
        assert!(matches!(
            evaluate_trigger(&state, &cfg),
            Err(Error::SingularCovariance(_))
        ));
    }

    /// Monte Carlo check of the per-step false-positive guarantee: with a
    /// perfect model and data generated under the assumed drift model, the
    /// trigger rate at a fixed step stays within the binomial margin of
    /// alpha.
    #[test]
    fn level_alpha_guarantee_monte_carlo() {
        use crate::estimators::{kf_step, NoiseConfig};
        use crate::linalg::regressor;
        use rand_distr::{Distribution, StandardNormal};

        let (n, m) = (1usize, 1usize);
        let dof = n * (n + m);
        let runs = 5000;
        let steps = 25;
        let alpha = 0.05;
        let mut rng = StdRng::seed_from_u64(314);
        let mut fired = 0usize;

        for _ in 0..runs {
            let z0_hat = DVector::from_vec(vec![0.8, 0.5]);
            let p0 = DMatrix::<f64>::identity(dof, dof) * 0.01;
            let sigma_z = DMatrix::<f64>::identity(dof, dof) * 4e-4;
            let sigma_w = DMatrix::<f64>::identity(n, n) * 0.01;
            let noise = NoiseConfig::new(sigma_w, sigma_z, 1.0).unwrap();

            let mut z_true = z0_hat.clone();
            for i in 0..dof {
                let e: f64 = StandardNormal.sample(&mut rng);
                z_true[i] += 0.1 * e;
            }
            let mut state =
                FilterState::new(ParamVector::new(z0_hat, n, m).unwrap(), p0).unwrap();

            // Drift first, then observe: matches the predict-first filter.
            let mut x = DVector::zeros(n);
            for _ in 0..steps {
                let u = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
                let reg = regressor(&x, &u);
                for i in 0..dof {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    z_true[i] += 0.02 * e;
                }
                let theta = crate::linalg::unvectorize(&z_true, n, m).unwrap();
                let mut x_next = theta.transpose() * reg.d();
                let w: f64 = StandardNormal.sample(&mut rng);
                x_next[0] += 0.1 * w;
                state = kf_step(&state, &x_next, &reg, &noise).unwrap().0;
                x = x_next;
            }

            // Perfect model: compare against the current true parameters.
            let cfg =
                TriggerConfig::new(alpha, ParamVector::new(z_true.clone(), n, m).unwrap())
                    .unwrap();
            if evaluate_trigger(&state, &cfg).unwrap().fired {
                fired += 1;
            }
        }

        let rate = fired as f64 / runs as f64;
        let margin = 3.0 * (alpha * (1.0 - alpha) / runs as f64).sqrt();
        assert!(
            rate <= alpha + margin,
            "trigger rate {rate} exceeds {alpha} + {margin}"
        );
    }
}
