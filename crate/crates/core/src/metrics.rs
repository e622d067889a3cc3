//! Evaluation: expected value difference, transfer scoring, held-out
//! likelihood, and trajectory matching.

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::EnvBundle;
use crate::error::{Error, Result};
use crate::likelihood::{demo_loglik, reward_of, weight_of, FeatureSet};
use crate::linalg::sup_norm_diff;
use crate::mdp::{policy_return, sample_index, DemoSet, Policy, RewardTable, TabularMdp};
use crate::soft::{solve_soft, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::train::TrainedModel;

/// Per-cell evaluation results; the CSV row payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub evd: f64,
    pub transfer_evd: Option<f64>,
    pub test_loglik: f64,
    /// Mean per-trajectory state overlap, in percent.
    pub avg_matching: f64,
    /// Share of trajectories with overlap >= 90%, in percent.
    pub p90_matching: f64,
}

/// Seed-aggregated evaluation results for one (algorithm, n_demos) cell group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub evd: f64,
    pub transfer_evd: Option<f64>,
    pub test_loglik: f64,
    pub avg_matching: f64,
    pub p90_matching: f64,
    pub n_seeds: usize,
    pub n_demos: usize,
    pub per_seed: Vec<CellMetrics>,
}

impl EvalReport {
    /// Mean-aggregate per-seed metrics. The transfer column is present only
    /// if every seed evaluated it.
    pub fn aggregate(n_demos: usize, per_seed: Vec<CellMetrics>) -> Self {
        let n = per_seed.len().max(1) as f64;
        let mean = |f: fn(&CellMetrics) -> f64| per_seed.iter().map(f).sum::<f64>() / n;
        let transfer_evd =
            if per_seed.iter().all(|c| c.transfer_evd.is_some()) && !per_seed.is_empty() {
                Some(per_seed.iter().map(|c| c.transfer_evd.unwrap()).sum::<f64>() / n)
            } else {
                None
            };
        EvalReport {
            evd: mean(|c| c.evd),
            transfer_evd,
            test_loglik: mean(|c| c.test_loglik),
            avg_matching: mean(|c| c.avg_matching),
            p90_matching: mean(|c| c.p90_matching),
            n_seeds: per_seed.len(),
            n_demos,
            per_seed,
        }
    }
}

/// Hard-max value iteration and the greedy policy it induces (ties to the
/// lowest action index).
pub fn greedy_policy(mdp: &TabularMdp, reward: &RewardTable, tol: f64) -> Policy {
    let mut v = Array1::<f64>::zeros(mdp.n_states);
    for _ in 0..1_000_000 {
        let q = {
            let mut q = mdp.expected_next(&v);
            q *= mdp.discount;
            q += &reward.values;
            q
        };
        let next: Array1<f64> = q
            .rows()
            .into_iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let residual = sup_norm_diff(&next, &v);
        v = next;
        if residual <= tol {
            break;
        }
    }
    let q = {
        let mut q = mdp.expected_next(&v);
        q *= mdp.discount;
        q += &reward.values;
        q
    };
    let mut probs = ndarray::Array2::<f64>::zeros((mdp.n_states, mdp.n_actions));
    for (s, row) in q.rows().into_iter().enumerate() {
        let mut best = 0;
        let mut best_q = row[0];
        for (a, &qa) in row.iter().enumerate().skip(1) {
            if qa > best_q {
                best = a;
                best_q = qa;
            }
        }
        probs[[s, best]] = 1.0;
    }
    Policy::new(probs)
}

/// Return gap, under the true rewards, between the deterministic true-reward
/// optimum and `learned_policy`. Nonnegative up to solver tolerance.
pub fn expected_value_difference(env: &EnvBundle, learned_policy: &Policy) -> Result<f64> {
    if learned_policy.probs.dim() != (env.mdp.n_states, env.mdp.n_actions) {
        return Err(Error::DimensionMismatch(format!(
            "policy is {:?}, environment needs ({}, {})",
            learned_policy.probs.dim(),
            env.mdp.n_states,
            env.mdp.n_actions
        )));
    }
    let reference = greedy_policy(&env.mdp, &env.true_reward, 1e-12);
    let best = policy_return(&env.mdp, &reference, &env.true_reward)?;
    let got = policy_return(&env.mdp, learned_policy, &env.true_reward)?;
    Ok(best - got)
}

/// Soft-optimal policy of a trained model on an environment's features.
pub fn model_policy(model: &TrainedModel, env: &EnvBundle, tol: f64) -> Result<Policy> {
    check_feature_dims(model, env)?;
    let features = FeatureSet::shared(env.features.clone());
    let reward = reward_of(&model.theta, &features.reward, env.mdp.n_actions)?;
    let weights = weight_of(&model.psi, &features.weight)?;
    let sol = solve_soft(&env.mdp, &reward, &weights, tol, DEFAULT_MAX_ITER)?;
    Ok(sol.policy)
}

fn check_feature_dims(model: &TrainedModel, env: &EnvBundle) -> Result<()> {
    let dim = env.features.dim();
    if model.feature_metadata.reward_dim != dim || model.feature_metadata.weight_dim != dim {
        return Err(Error::DimensionMismatch(format!(
            "model was trained on {}/{}-dimensional features, environment provides {}",
            model.feature_metadata.reward_dim, model.feature_metadata.weight_dim, dim
        )));
    }
    Ok(())
}

/// Apply a trained model's parameters to a freshly generated environment,
/// re-solve, and score against the fresh true rewards.
pub fn transfer_eval(model: &TrainedModel, fresh_env: &EnvBundle) -> Result<f64> {
    let policy = model_policy(model, fresh_env, DEFAULT_TOL)?;
    expected_value_difference(fresh_env, &policy)
}

/// Trajectory matching: for each test trajectory, roll the model policy's
/// argmax actions from the same start state for the same horizon and measure
/// the fraction of time-aligned state agreements. Returns
/// `(avg_matching, p90_matching)` in percent.
pub fn matching_scores(
    test_demos: &DemoSet,
    model_policy: &Policy,
    mdp: &TabularMdp,
    rng_seed: u64,
) -> Result<(f64, f64)> {
    if test_demos.trajectories.is_empty() {
        return Err(Error::EmptyDemos);
    }
    let greedy_actions = model_policy.argmax_actions();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut fractions = Vec::with_capacity(test_demos.trajectories.len());
    for traj in &test_demos.trajectories {
        if traj.is_empty() {
            continue;
        }
        let horizon = traj.len();
        let mut s = traj.steps[0].0;
        if s >= mdp.n_states {
            return Err(Error::IndexOutOfRange(format!(
                "test demo starts at state {s}, MDP has {}",
                mdp.n_states
            )));
        }
        let mut matches = 0usize;
        for &(expert_state, _) in traj.steps.iter() {
            if s == expert_state {
                matches += 1;
            }
            let a = greedy_actions[s];
            s = sample_index(mdp.transition.slice(ndarray::s![s, a, ..]), &mut rng);
        }
        fractions.push(matches as f64 / horizon as f64);
    }
    if fractions.is_empty() {
        return Err(Error::EmptyDemos);
    }
    let n = fractions.len() as f64;
    let avg = 100.0 * fractions.iter().sum::<f64>() / n;
    let p90 = 100.0 * fractions.iter().filter(|&&f| f >= 0.90).count() as f64 / n;
    Ok((avg, p90))
}

/// Held-out log-likelihood of a trained model.
pub fn test_loglik(
    test_demos: &DemoSet,
    model: &TrainedModel,
    mdp: &TabularMdp,
    features: &FeatureSet,
) -> Result<f64> {
    demo_loglik(test_demos, mdp, &model.theta, &model.psi, features)
}
