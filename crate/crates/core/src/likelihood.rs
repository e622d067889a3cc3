//! Demonstration log-likelihood and its exact analytic gradients.
//!
//! The likelihood of a demo set under the soft-optimal policy is
//! `L = sum_{(s,a) in demos} (Q(s,a) - V(s)) / mu(s)`, which equals
//! `sum ln pi*(a|s)`. Its gradients require the partials of the value fixed
//! point with respect to the reward parameters `theta` and weight parameters
//! `psi`; those are computed jointly with `V` by iterating the differentiated
//! Bellman operator from zero until the value residual meets tolerance.
//!
//! Writing `pi` for the current-sweep softmax policy and `P_pi` for the
//! induced state chain, the sweeps are
//!
//! ```text
//! dV/dtheta_i <- phi_r_i + gamma * P_pi dV/dtheta_i
//! dV/dpsi_i   <- (dmu_i / mu) (T[V] - sum_a pi Q) + gamma * P_pi dV/dpsi_i
//! ```
//!
//! with `dmu_i(s) = phi_w_i(s) mu(s)` where the weights are unclamped and 0
//! where they are clamped. Both recursions contract at rate `gamma`, so they
//! inherit the value iteration's convergence.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::linalg::sup_norm_diff;
use crate::mdp::{DemoSet, RewardTable, TabularMdp};
use crate::soft::{self, WeightTable, MU_MAX, MU_MIN};

/// Reward coefficients; `r_theta(a|s) = theta . phi(s)` broadcast over actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    pub theta: Array1<f64>,
}

impl RewardParams {
    pub fn zeros(dim: usize) -> Self {
        Self {
            theta: Array1::zeros(dim),
        }
    }
}

/// Weight coefficients; `mu_psi(s) = exp(psi . phi(s))`, clamped into
/// `[MU_MIN, MU_MAX]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightParams {
    pub psi: Array1<f64>,
}

impl WeightParams {
    pub fn zeros(dim: usize) -> Self {
        Self {
            psi: Array1::zeros(dim),
        }
    }
}

/// Feature maps for the reward and weight parameterizations. They default to
/// the same map; callers may designate different (e.g. restricted) maps for
/// the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub reward: FeatureMap,
    pub weight: FeatureMap,
}

impl FeatureSet {
    pub fn shared(features: FeatureMap) -> Self {
        Self {
            reward: features.clone(),
            weight: features,
        }
    }

    pub fn split(reward: FeatureMap, weight: FeatureMap) -> Result<Self> {
        if reward.n_states() != weight.n_states() {
            return Err(Error::DimensionMismatch(format!(
                "reward features cover {} states, weight features {}",
                reward.n_states(),
                weight.n_states()
            )));
        }
        Ok(Self { reward, weight })
    }
}

/// Value vector and its parameter Jacobians at the soft fixed point.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub value: Array1<f64>,
    /// `Q(a,s,V)` assembled from the converged value.
    pub q_table: Array2<f64>,
    /// `dV/dtheta_i` as an `|S| x dim(theta)` table.
    pub dv_dtheta: Array2<f64>,
    /// `dV/dpsi_i` as an `|S| x dim(psi)` table.
    pub dv_dpsi: Array2<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Linear state-feature reward: `r(a|s) = theta . phi(s)` for every action.
pub fn reward_of(
    theta: &RewardParams,
    features: &FeatureMap,
    n_actions: usize,
) -> Result<RewardTable> {
    let state_values = features.dot(&theta.theta)?;
    Ok(RewardTable::from_state_values(&state_values, n_actions))
}

/// Exponential-linear weights with clamping: `mu(s) = exp(psi . phi(s))`.
pub fn weight_of(psi: &WeightParams, features: &FeatureMap) -> Result<WeightTable> {
    Ok(weight_of_with_mask(psi, features)?.0)
}

/// As [`weight_of`], also reporting which states were clamped. The weight
/// derivative `dmu_i(s) = phi_i(s) mu(s)` is zero at clamped states.
pub fn weight_of_with_mask(
    psi: &WeightParams,
    features: &FeatureMap,
) -> Result<(WeightTable, Vec<bool>)> {
    let activation = features.dot(&psi.psi)?;
    let mut clamped = vec![false; activation.len()];
    let values = Array1::from_iter(activation.iter().enumerate().map(|(s, &x)| {
        let mu = x.exp();
        if mu < MU_MIN {
            clamped[s] = true;
            MU_MIN
        } else if mu > MU_MAX {
            clamped[s] = true;
            MU_MAX
        } else {
            mu
        }
    }));
    Ok((WeightTable::new(values), clamped))
}

/// Pre-clamp weight activations `psi . phi(s)`; exposed so checks can keep a
/// guard band around the clamp boundaries.
pub fn weight_activation(psi: &WeightParams, features: &FeatureMap) -> Result<Array1<f64>> {
    features.dot(&psi.psi)
}

/// Joint value/gradient fixed point from zero initialization.
pub fn value_and_grads(
    mdp: &TabularMdp,
    theta: &RewardParams,
    psi: &WeightParams,
    features: &FeatureSet,
    tol: f64,
) -> Result<GradientBundle> {
    value_and_grads_from(mdp, theta, psi, features, tol, soft::DEFAULT_MAX_ITER, None)
}

/// [`value_and_grads`] with an explicit iteration cap and optional warm start.
/// The fixed point is unique, so warm starts only change the iteration count.
pub fn value_and_grads_from(
    mdp: &TabularMdp,
    theta: &RewardParams,
    psi: &WeightParams,
    features: &FeatureSet,
    tol: f64,
    max_iter: usize,
    init: Option<&GradientBundle>,
) -> Result<GradientBundle> {
    if !(tol > 0.0) {
        return Err(Error::Contract(format!("tolerance {tol} must be positive")));
    }
    let n_states = mdp.n_states;
    let dim_theta = features.reward.dim();
    let dim_psi = features.weight.dim();
    if features.reward.n_states() != n_states || features.weight.n_states() != n_states {
        return Err(Error::DimensionMismatch(format!(
            "features cover {} states, MDP has {}",
            features.reward.n_states(),
            n_states
        )));
    }
    let reward = reward_of(theta, &features.reward, mdp.n_actions)?;
    let (weights, clamp_mask) = weight_of_with_mask(psi, &features.weight)?;

    // phi_w with clamped rows zeroed: this is dmu/dpsi divided by mu.
    let mut phi_w_eff = features.weight.values.clone();
    for (s, &clamped) in clamp_mask.iter().enumerate() {
        if clamped {
            phi_w_eff.row_mut(s).fill(0.0);
        }
    }

    let (mut v, mut x, mut y) = match init {
        Some(b)
            if b.value.len() == n_states
                && b.dv_dtheta.dim() == (n_states, dim_theta)
                && b.dv_dpsi.dim() == (n_states, dim_psi) =>
        {
            (b.value.clone(), b.dv_dtheta.clone(), b.dv_dpsi.clone())
        }
        _ => (
            Array1::zeros(n_states),
            Array2::zeros((n_states, dim_theta)),
            Array2::zeros((n_states, dim_psi)),
        ),
    };

    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while iterations < max_iter {
        let q = soft::q_from_value(&v, &reward, mdp);
        let t = soft::backup_from_q(&q, &weights);
        let policy = soft::soft_policy(&q, &weights);
        let p_pi = mdp.policy_transition(&policy);

        let x_next = &features.reward.values + &(mdp.discount * p_pi.dot(&x));

        let pi_q: Array1<f64> = (0..n_states)
            .map(|s| policy.probs.row(s).dot(&q.row(s)))
            .collect();
        let mut y_next = mdp.discount * p_pi.dot(&y);
        for s in 0..n_states {
            let scale = t[s] - pi_q[s];
            if scale != 0.0 {
                let mut row = y_next.row_mut(s);
                row += &(scale * &phi_w_eff.row(s));
            }
        }

        residual = sup_norm_diff(&t, &v);
        v = t;
        x = x_next;
        y = y_next;
        iterations += 1;
        if residual <= tol {
            let q = soft::q_from_value(&v, &reward, mdp);
            return Ok(GradientBundle {
                value: v,
                q_table: q,
                dv_dtheta: x,
                dv_dpsi: y,
                residual,
                iterations,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations,
        residual,
    })
}

/// Dense `(s, a)` visit counts of a demo set, validating indices.
pub fn pair_counts(demos: &DemoSet, n_states: usize, n_actions: usize) -> Result<Array2<f64>> {
    if demos.trajectories.is_empty() {
        return Err(Error::EmptyDemos);
    }
    let mut counts = Array2::<f64>::zeros((n_states, n_actions));
    for traj in &demos.trajectories {
        for &(s, a) in &traj.steps {
            if s >= n_states || a >= n_actions {
                return Err(Error::IndexOutOfRange(format!(
                    "demo pair (s={s}, a={a}) outside {n_states}x{n_actions} MDP"
                )));
            }
            counts[[s, a]] += 1.0;
        }
    }
    Ok(counts)
}

/// Demo log-likelihood `L = sum_{(s,a)} (Q(s,a) - V(s)) / mu(s)`, always <= 0
/// up to solver tolerance.
pub fn demo_loglik(
    demos: &DemoSet,
    mdp: &TabularMdp,
    theta: &RewardParams,
    psi: &WeightParams,
    features: &FeatureSet,
) -> Result<f64> {
    demo_loglik_at(demos, mdp, theta, psi, features, soft::DEFAULT_TOL, None).map(|(l, _)| l)
}

/// [`demo_loglik`] with explicit tolerance and warm-start value; returns the
/// converged value vector for reuse.
pub fn demo_loglik_at(
    demos: &DemoSet,
    mdp: &TabularMdp,
    theta: &RewardParams,
    psi: &WeightParams,
    features: &FeatureSet,
    tol: f64,
    warm_value: Option<&Array1<f64>>,
) -> Result<(f64, Array1<f64>)> {
    let counts = pair_counts(demos, mdp.n_states, mdp.n_actions)?;
    let reward = reward_of(theta, &features.reward, mdp.n_actions)?;
    let weights = weight_of(psi, &features.weight)?;
    let sol = soft::solve_soft_from(
        mdp,
        &reward,
        &weights,
        tol,
        soft::DEFAULT_MAX_ITER,
        warm_value,
    )?;
    let loglik = loglik_from_counts(&counts, &sol.q_table, &sol.value, &weights);
    Ok((loglik, sol.value))
}

fn loglik_from_counts(
    counts: &Array2<f64>,
    q: &Array2<f64>,
    v: &Array1<f64>,
    weights: &WeightTable,
) -> f64 {
    let mut total = 0.0;
    for (s, row) in counts.rows().into_iter().enumerate() {
        let mu = weights.values[s];
        for (a, &c) in row.iter().enumerate() {
            if c > 0.0 {
                total += c * (q[[s, a]] - v[s]) / mu;
            }
        }
    }
    total
}

/// Analytic likelihood gradients with respect to `theta` and `psi`.
pub fn demo_loglik_grads(
    demos: &DemoSet,
    mdp: &TabularMdp,
    theta: &RewardParams,
    psi: &WeightParams,
    features: &FeatureSet,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let bundle = value_and_grads(mdp, theta, psi, features, soft::DEFAULT_TOL)?;
    demo_loglik_grads_with(demos, mdp, psi, features, &bundle)
}

/// Gradient assembly from a precomputed [`GradientBundle`].
///
/// Per demo pair the contributions are
/// `dL/dtheta_i = (phi_r_i(s) + gamma E_{s'|s,a}[X_i] - X_i(s)) / mu(s)` and
/// `dL/dpsi_i = (gamma E_{s'|s,a}[Y_i] - Y_i(s)) / mu(s)
///              - (Q(s,a) - V(s)) dmu_i(s) / mu(s)^2`.
pub fn demo_loglik_grads_with(
    demos: &DemoSet,
    mdp: &TabularMdp,
    psi: &WeightParams,
    features: &FeatureSet,
    bundle: &GradientBundle,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let counts = pair_counts(demos, mdp.n_states, mdp.n_actions)?;
    let (weights, clamp_mask) = weight_of_with_mask(psi, &features.weight)?;
    let n_states = mdp.n_states;

    // w(s) = sum_a c(s,a)/mu(s); m(s') = sum_{s,a} c(s,a)/mu(s) q(s'|s,a);
    // u(s) = sum_a c(s,a) (Q(s,a) - V(s)) / mu(s).
    let mut w = Array1::<f64>::zeros(n_states);
    let mut m = Array1::<f64>::zeros(n_states);
    let mut u = Array1::<f64>::zeros(n_states);
    for s in 0..n_states {
        let mu = weights.values[s];
        for a in 0..mdp.n_actions {
            let c = counts[[s, a]];
            if c == 0.0 {
                continue;
            }
            let coef = c / mu;
            w[s] += coef;
            u[s] += coef * (bundle.q_table[[s, a]] - bundle.value[s]);
            let q_row = mdp.transition.slice(ndarray::s![s, a, ..]);
            m.scaled_add(coef, &q_row);
        }
    }

    // grad_theta = Phi_r^T w + gamma X^T m - X^T w
    let grad_theta = features.reward.values.t().dot(&w)
        + mdp.discount * bundle.dv_dtheta.t().dot(&m)
        - bundle.dv_dtheta.t().dot(&w);

    // grad_psi = gamma Y^T m - Y^T w - Phi_w_eff^T u
    let mut phi_w_eff = features.weight.values.clone();
    for (s, &clamped) in clamp_mask.iter().enumerate() {
        if clamped {
            phi_w_eff.row_mut(s).fill(0.0);
        }
    }
    let grad_psi = mdp.discount * bundle.dv_dpsi.t().dot(&m)
        - bundle.dv_dpsi.t().dot(&w)
        - phi_w_eff.t().dot(&u);

    Ok((grad_theta, grad_psi))
}
