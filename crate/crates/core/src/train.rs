//! Two-phase maximum-likelihood training of reward and weight parameters.
//!
//! Phase 1 fits `theta` with the weights pinned at `psi = 0` (so `mu = 1`
//! everywhere, the plain maximum-entropy estimator). Phase 2 jointly ascends
//! over `(theta, psi)` warm-started from `(theta_bar, 0)`, which makes the
//! phase-1 optimum feasible and guarantees the final training likelihood can
//! only improve.
//!
//! The optimizer is full-batch gradient ascent with Armijo backtracking on the
//! L2-penalized log-likelihood. The small penalties break the degenerate ray
//! along which rewards scale up while temperatures scale down without changing
//! the policy on deterministic demo sets.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{
    demo_loglik_at, demo_loglik_grads_with, value_and_grads_from, FeatureSet, GradientBundle,
    RewardParams, WeightParams,
};
use crate::mdp::{DemoSet, TabularMdp};
use crate::soft;

/// Backtracking line-search parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRule {
    /// Step size tried first on the first iteration.
    pub init_step: f64,
    /// Factor applied to the accepted step to seed the next iteration.
    pub grow: f64,
    /// Backtracking shrink factor.
    pub shrink: f64,
    /// Armijo sufficient-increase coefficient.
    pub armijo_c: f64,
    /// Backtracks allowed before the search is declared failed.
    pub max_backtracks: u32,
}

impl Default for StepRule {
    fn default() -> Self {
        Self {
            init_step: 1.0,
            grow: 2.0,
            shrink: 0.5,
            armijo_c: 1e-4,
            max_backtracks: 50,
        }
    }
}

/// Knobs for both training phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub phase1_max_iters: usize,
    pub phase2_max_iters: usize,
    /// Stop when the sup-norm of the penalized-objective gradient drops below this.
    pub grad_tol: f64,
    pub step_rule: StepRule,
    pub l2_theta: f64,
    pub l2_psi: f64,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            phase1_max_iters: 400,
            phase2_max_iters: 400,
            grad_tol: 1e-6,
            step_rule: StepRule::default(),
            l2_theta: 1e-4,
            l2_psi: 1e-3,
            solver_tol: soft::DEFAULT_TOL,
            solver_max_iter: soft::DEFAULT_MAX_ITER,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) || !(self.solver_tol > 0.0) {
            return Err(Error::Contract("tolerances must be positive".into()));
        }
        if self.l2_theta < 0.0 || self.l2_psi < 0.0 {
            return Err(Error::Contract(
                "regularization coefficients must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Whether to run the full two-phase algorithm or stop after phase 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Both phases: the weighted maximum-entropy estimator.
    Full,
    /// Phase 1 only, `psi` pinned at zero: the plain MaxEnt baseline.
    MaxentOnly,
}

/// Names and dimensions of the feature maps a model was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMetadata {
    pub reward_dim: usize,
    pub weight_dim: usize,
    pub reward_names: Vec<String>,
    pub weight_names: Vec<String>,
}

impl FeatureMetadata {
    pub fn of(features: &FeatureSet) -> Self {
        Self {
            reward_dim: features.reward.dim(),
            weight_dim: features.weight.dim(),
            reward_names: features.reward.names.clone(),
            weight_names: features.weight.names.clone(),
        }
    }
}

/// Trained parameters plus training diagnostics. This is the transfer
/// artifact: applying `theta`/`psi` to a fresh environment's features yields
/// rewards and weights there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub theta: RewardParams,
    pub psi: WeightParams,
    pub phase1_loglik: f64,
    pub phase2_loglik: f64,
    pub phase1_iterations: usize,
    pub phase2_iterations: usize,
    pub feature_metadata: FeatureMetadata,
    /// Raw log-likelihood after each accepted step (first entry: at the
    /// phase's starting point).
    pub phase1_curve: Vec<f64>,
    pub phase2_curve: Vec<f64>,
    /// Penalized-objective sequences; nondecreasing by the line-search contract.
    pub phase1_objective_curve: Vec<f64>,
    pub phase2_objective_curve: Vec<f64>,
    pub seed: u64,
}

/// Outcome of one ascent run.
struct AscentResult {
    theta: RewardParams,
    psi: WeightParams,
    /// Raw log-likelihood at the final iterate.
    loglik: f64,
    iterations: usize,
    loglik_curve: Vec<f64>,
    objective_curve: Vec<f64>,
    /// Accepted iterates as (raw loglik, theta, psi), starting point included.
    path: Vec<(f64, Array1<f64>, Array1<f64>)>,
}

/// A coherent-error bound on one likelihood evaluation: every demo pair's
/// `(Q - V)/mu` term carries the same value-solver error of order
/// `tol / (1 - gamma)`, amplified by the smallest temperature in play.
fn objective_noise_floor(
    demos: &DemoSet,
    mdp: &TabularMdp,
    config: &TrainConfig,
    mu_min: f64,
) -> f64 {
    let pairs = demos.n_pairs() as f64;
    10.0 * config.solver_tol * pairs / ((1.0 - mdp.discount).max(1e-3) * mu_min.min(1.0))
}

/// Gradient ascent with Armijo backtracking on the penalized likelihood.
/// `optimize_psi = false` freezes `psi` (phase 1).
fn ascend(
    demos: &DemoSet,
    mdp: &TabularMdp,
    features: &FeatureSet,
    theta0: RewardParams,
    psi0: WeightParams,
    config: &TrainConfig,
    max_iters: usize,
    optimize_psi: bool,
) -> Result<AscentResult> {
    let penalty = |theta: &Array1<f64>, psi: &Array1<f64>| -> f64 {
        0.5 * config.l2_theta * theta.dot(theta) + 0.5 * config.l2_psi * psi.dot(psi)
    };

    let mut theta = theta0;
    let mut psi = psi0;
    let mut bundle: Option<GradientBundle> = None;
    let mut step = config.step_rule.init_step;

    let (mut loglik, mut warm_value) =
        demo_loglik_at(demos, mdp, &theta, &psi, features, config.solver_tol, None)?;
    let mut objective = loglik - penalty(&theta.theta, &psi.psi);

    let mut loglik_curve = vec![loglik];
    let mut objective_curve = vec![objective];
    let mut path = vec![(loglik, theta.theta.clone(), psi.psi.clone())];
    let mut iterations = 0;

    while iterations < max_iters {
        let b = value_and_grads_from(
            mdp,
            &theta,
            &psi,
            features,
            config.solver_tol,
            config.solver_max_iter,
            bundle.as_ref(),
        )?;
        let (g_theta_raw, g_psi_raw) = demo_loglik_grads_with(demos, mdp, &psi, features, &b)?;
        bundle = Some(b);

        let g_theta = &g_theta_raw - &(config.l2_theta * &theta.theta);
        let g_psi = if optimize_psi {
            &g_psi_raw - &(config.l2_psi * &psi.psi)
        } else {
            Array1::zeros(psi.psi.len())
        };

        let grad_sup = g_theta
            .iter()
            .chain(g_psi.iter())
            .map(|g| g.abs())
            .fold(0.0, f64::max);
        if grad_sup <= config.grad_tol {
            break;
        }
        let grad_sq = g_theta.dot(&g_theta) + g_psi.dot(&g_psi);

        // Objective evaluations inherit the value solver's tolerance, summed
        // coherently over demo pairs. Improvements below this floor cannot be
        // verified, so exhausting the search there means convergence, not
        // failure.
        let mu_min = crate::likelihood::weight_of(&psi, &features.weight)?
            .values
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let noise_floor =
            objective_noise_floor(demos, mdp, config, mu_min) + objective.abs() * 1e-13;

        // Backtracking Armijo search on the penalized objective.
        let mut alpha = step;
        let mut accepted = None;
        let mut best_seen = f64::NEG_INFINITY;
        let mut backtracks = 0;
        loop {
            let cand_theta = RewardParams {
                theta: &theta.theta + &(alpha * &g_theta),
            };
            let cand_psi = WeightParams {
                psi: &psi.psi + &(alpha * &g_psi),
            };
            let (cand_loglik, cand_value) = demo_loglik_at(
                demos,
                mdp,
                &cand_theta,
                &cand_psi,
                features,
                config.solver_tol,
                Some(&warm_value),
            )?;
            let cand_objective = cand_loglik - penalty(&cand_theta.theta, &cand_psi.psi);
            best_seen = best_seen.max(cand_objective);
            if cand_objective >= objective + config.step_rule.armijo_c * alpha * grad_sq {
                accepted = Some((cand_theta, cand_psi, cand_loglik, cand_objective, cand_value));
                break;
            }
            backtracks += 1;
            if backtracks > config.step_rule.max_backtracks {
                break;
            }
            alpha *= config.step_rule.shrink;
        }

        match accepted {
            Some((t, p, l, o, v)) => {
                theta = t;
                psi = p;
                loglik = l;
                objective = o;
                warm_value = v;
                step = alpha * config.step_rule.grow;
                iterations += 1;
                loglik_curve.push(loglik);
                objective_curve.push(objective);
                path.push((loglik, theta.theta.clone(), psi.psi.clone()));
            }
            None if best_seen >= objective - noise_floor => {
                // Progress stalled inside the evaluation noise band.
                break;
            }
            None => {
                return Err(Error::LineSearchFailure {
                    backtracks: config.step_rule.max_backtracks,
                    objective,
                    theta: theta.theta.to_vec(),
                    psi: psi.psi.to_vec(),
                });
            }
        }
    }

    Ok(AscentResult {
        theta,
        psi,
        loglik,
        iterations,
        loglik_curve,
        objective_curve,
        path,
    })
}

/// Phase 1: fit the rewards with weights pinned at `psi = 0`.
pub fn fit_phase1(
    demos: &DemoSet,
    mdp: &TabularMdp,
    features: &FeatureSet,
    config: &TrainConfig,
) -> Result<RewardParams> {
    config.validate()?;
    let result = ascend(
        demos,
        mdp,
        features,
        RewardParams::zeros(features.reward.dim()),
        WeightParams::zeros(features.weight.dim()),
        config,
        config.phase1_max_iters,
        false,
    )?;
    Ok(result.theta)
}

/// Phase 2: jointly fit `(theta, psi)` warm-started from `(theta_init, 0)`.
///
/// If the penalized ascent ends at an iterate whose raw likelihood dips below
/// the warm start's (possible only through the L2 terms), the best accepted
/// iterate is returned instead, so `phase2_loglik >= phase1_loglik` always
/// holds.
pub fn fit_phase2(
    demos: &DemoSet,
    mdp: &TabularMdp,
    features: &FeatureSet,
    theta_init: RewardParams,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    config.validate()?;
    let (start_loglik, _) = demo_loglik_at(
        demos,
        mdp,
        &theta_init,
        &WeightParams::zeros(features.weight.dim()),
        features,
        config.solver_tol,
        None,
    )?;

    let mut result = ascend(
        demos,
        mdp,
        features,
        theta_init,
        WeightParams::zeros(features.weight.dim()),
        config,
        config.phase2_max_iters,
        true,
    )?;
    if result.loglik < start_loglik {
        let best = result
            .path
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.0.partial_cmp(&b.0).expect("finite logliks"))
            .map(|(i, _)| i)
            .expect("path is nonempty");
        let (l, t, p) = result.path[best].clone();
        result.theta = RewardParams { theta: t };
        result.psi = WeightParams { psi: p };
        result.loglik = l;
    }

    Ok(TrainedModel {
        theta: result.theta,
        psi: result.psi,
        phase1_loglik: start_loglik,
        phase2_loglik: result.loglik,
        phase1_iterations: 0,
        phase2_iterations: result.iterations,
        feature_metadata: FeatureMetadata::of(features),
        phase1_curve: vec![start_loglik],
        phase2_curve: result.loglik_curve,
        phase1_objective_curve: Vec::new(),
        phase2_objective_curve: result.objective_curve,
        seed: config.seed,
    })
}

/// The full two-phase estimator, or the phase-1-only MaxEnt baseline.
pub fn train_wmaxent(
    demos: &DemoSet,
    mdp: &TabularMdp,
    features: &FeatureSet,
    config: &TrainConfig,
    mode: TrainMode,
) -> Result<TrainedModel> {
    config.validate()?;
    let phase1 = ascend(
        demos,
        mdp,
        features,
        RewardParams::zeros(features.reward.dim()),
        WeightParams::zeros(features.weight.dim()),
        config,
        config.phase1_max_iters,
        false,
    )?;

    match mode {
        TrainMode::MaxentOnly => Ok(TrainedModel {
            theta: phase1.theta,
            psi: WeightParams::zeros(features.weight.dim()),
            phase1_loglik: phase1.loglik,
            phase2_loglik: phase1.loglik,
            phase1_iterations: phase1.iterations,
            phase2_iterations: 0,
            feature_metadata: FeatureMetadata::of(features),
            phase1_curve: phase1.loglik_curve,
            phase2_curve: Vec::new(),
            phase1_objective_curve: phase1.objective_curve,
            phase2_objective_curve: Vec::new(),
            seed: config.seed,
        }),
        TrainMode::Full => {
            let mut model = fit_phase2(demos, mdp, features, phase1.theta, config)?;
            model.phase1_loglik = phase1.loglik;
            model.phase1_iterations = phase1.iterations;
            model.phase1_curve = phase1.loglik_curve;
            model.phase1_objective_curve = phase1.objective_curve;
            Ok(model)
        }
    }
}
