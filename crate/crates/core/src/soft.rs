//! Weighted soft Bellman operator and fixed-point solver.
//!
//! The operator is `T[V](s) = mu(s) * ln sum_a exp(Q(a,s,V) / mu(s))` with
//! `Q(a,s,V) = r(a|s) + gamma * E_{s'|s,a}[V(s')]`. Per-state weights `mu(s)`
//! act as temperatures: the optimal policy is a per-state softmax
//! `pi(a|s) = exp(Q(a,s,V*) / mu(s)) / sum_a' exp(Q(a',s,V*) / mu(s))`.
//! All exponentials are max-shifted; `T` is a gamma-contraction, so the fixed
//! point exists and is unique for any finite rewards and weights.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sup_norm_diff;
use crate::mdp::{discounted_state_occupancy, Policy, RewardTable, TabularMdp};

/// Lower clamp for entropy weights. Smaller values make `Q/mu` ill-conditioned.
pub const MU_MIN: f64 = 1e-3;
/// Upper clamp for entropy weights. Larger values wash out the rewards.
pub const MU_MAX: f64 = 1e3;

/// Default sup-norm tolerance for the fixed-point iteration.
pub const DEFAULT_TOL: f64 = 1e-9;
/// Default iteration cap for the fixed-point iteration.
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Per-state entropy weights (temperatures), within `[MU_MIN, MU_MAX]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    pub values: Array1<f64>,
}

impl WeightTable {
    pub fn new(values: Array1<f64>) -> Self {
        Self { values }
    }

    /// Constant weights, the plain maximum-entropy special case with
    /// temperature `eta`.
    pub fn constant(n_states: usize, eta: f64) -> Self {
        Self {
            values: Array1::from_elem(n_states, eta),
        }
    }

    /// Clamp every entry into `[MU_MIN, MU_MAX]`.
    pub fn clamped(values: Array1<f64>) -> Self {
        Self {
            values: values.mapv(|m| m.clamp(MU_MIN, MU_MAX)),
        }
    }

    fn check_positive(&self) -> Result<()> {
        if self.values.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
            return Err(Error::Contract(
                "entropy weights must be positive and finite".into(),
            ));
        }
        Ok(())
    }
}

/// Converged output of [`solve_soft`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftSolution {
    pub value: Array1<f64>,
    /// `Q(a,s,V*)` as an `|S| x |A|` table.
    pub q_table: Array2<f64>,
    pub policy: Policy,
    pub weights: WeightTable,
    pub iterations: usize,
    /// Final sup-norm gap `||T[V] - V||_inf`.
    pub residual: f64,
}

/// One application of the weighted soft Bellman operator.
pub fn soft_backup(
    value: &Array1<f64>,
    reward: &RewardTable,
    weights: &WeightTable,
    mdp: &TabularMdp,
) -> Result<Array1<f64>> {
    weights.check_positive()?;
    let q = q_from_value(value, reward, mdp);
    Ok(backup_from_q(&q, weights))
}

/// `Q(a,s,V) = r(a|s) + gamma * E_{s'}[V(s')]` for every `(s, a)`.
pub fn q_from_value(value: &Array1<f64>, reward: &RewardTable, mdp: &TabularMdp) -> Array2<f64> {
    let mut q = mdp.expected_next(value);
    q *= mdp.discount;
    q += &reward.values;
    q
}

/// `T[V]` from a precomputed Q table, max-shifted per row.
pub fn backup_from_q(q: &Array2<f64>, weights: &WeightTable) -> Array1<f64> {
    let n_states = q.nrows();
    let mut t = Array1::zeros(n_states);
    for s in 0..n_states {
        let mu = weights.values[s];
        let row = q.row(s);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&x| ((x - m) / mu).exp()).sum();
        t[s] = m + mu * sum.ln();
    }
    t
}

/// Per-state softmax of `Q/mu`, strictly positive and row-stochastic.
pub fn soft_policy(q_table: &Array2<f64>, weights: &WeightTable) -> Policy {
    let (n_states, n_actions) = q_table.dim();
    let mut probs = Array2::zeros((n_states, n_actions));
    for s in 0..n_states {
        let mu = weights.values[s];
        let row = q_table.row(s);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for a in 0..n_actions {
            let e = ((row[a] - m) / mu).exp();
            probs[[s, a]] = e;
            sum += e;
        }
        for a in 0..n_actions {
            probs[[s, a]] /= sum;
        }
    }
    Policy::new(probs)
}

/// Row-wise log-probabilities `ln pi(a|s) = (Q - T[V]) / mu` of the soft policy.
pub fn log_soft_policy(q_table: &Array2<f64>, weights: &WeightTable) -> Array2<f64> {
    let (n_states, n_actions) = q_table.dim();
    let mut log_probs = Array2::zeros((n_states, n_actions));
    for s in 0..n_states {
        let mu = weights.values[s];
        let row = q_table.row(s);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse: f64 = row
            .iter()
            .map(|&x| ((x - m) / mu).exp())
            .sum::<f64>()
            .ln();
        for a in 0..n_actions {
            log_probs[[s, a]] = (row[a] - m) / mu - lse;
        }
    }
    log_probs
}

/// Iterate `V <- T[V]` from zero until `||T[V] - V||_inf <= tol`.
pub fn solve_soft(
    mdp: &TabularMdp,
    reward: &RewardTable,
    weights: &WeightTable,
    tol: f64,
    max_iter: usize,
) -> Result<SoftSolution> {
    solve_soft_from(mdp, reward, weights, tol, max_iter, None)
}

/// [`solve_soft`] with an optional warm-start value vector. The fixed point is
/// unique, so warm starts change only the iteration count.
pub fn solve_soft_from(
    mdp: &TabularMdp,
    reward: &RewardTable,
    weights: &WeightTable,
    tol: f64,
    max_iter: usize,
    init: Option<&Array1<f64>>,
) -> Result<SoftSolution> {
    if !(tol > 0.0) {
        return Err(Error::Contract(format!("tolerance {tol} must be positive")));
    }
    weights.check_positive()?;
    let mut v = match init {
        Some(v0) => v0.clone(),
        None => Array1::zeros(mdp.n_states),
    };
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        let q = q_from_value(&v, reward, mdp);
        let next = backup_from_q(&q, weights);
        residual = sup_norm_diff(&next, &v);
        v = next;
        iterations += 1;
        if residual <= tol {
            let q = q_from_value(&v, reward, mdp);
            let policy = soft_policy(&q, weights);
            return Ok(SoftSolution {
                value: v,
                q_table: q,
                policy,
                weights: weights.clone(),
                iterations,
                residual,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations,
        residual,
    })
}

/// KL divergence of an action distribution to the uniform distribution,
/// `sum_a pi(a) ln(pi(a) |A|)`, with `0 ln 0 := 0`. Lies in `[0, ln |A|]`.
pub fn kl_to_uniform(policy_row: &[f64]) -> f64 {
    let ln_a = (policy_row.len() as f64).ln();
    let kl: f64 = policy_row
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * (p.ln() + ln_a))
        .sum();
    kl.max(0.0)
}

/// The discounted, weight-scaled KL budget
/// `g(pi) = sum_s d(s) mu(s) KL(pi(.|s) || uniform)`.
///
/// Evaluated at the soft-optimal policy this is the certificate constant of
/// the constrained-MDP reformulation: no policy with a budget below it can
/// achieve a higher return under `r'(a|s) = r(a|s) + ln|A| mu(s)`.
pub fn weighted_kl_budget(mdp: &TabularMdp, policy: &Policy, weights: &WeightTable) -> f64 {
    let d = discounted_state_occupancy(mdp, policy);
    (0..mdp.n_states)
        .map(|s| {
            d[s] * weights.values[s]
                * kl_to_uniform(policy.probs.row(s).as_slice().expect("contiguous row"))
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{policy_return, Policy};
    use crate::test_util::{random_mdp, random_policy, random_reward, random_weights};
    use ndarray::{array, Array3};

    fn bandit_mdp(n_actions: usize, discount: f64) -> TabularMdp {
        // One state, all actions self-loop.
        TabularMdp::new(
            Array3::from_elem((1, n_actions, 1), 1.0),
            discount,
            array![1.0],
        )
    }

    #[test]
    fn single_action_backup_collapses_to_reward() {
        let mdp = bandit_mdp(1, 0.0);
        let reward = RewardTable::new(array![[1.0]]);
        let weights = WeightTable::constant(1, 2.0);
        let t = soft_backup(&Array1::zeros(1), &reward, &weights, &mdp).unwrap();
        assert!((t[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn symmetric_two_action_backup_is_mu_ln_two() {
        let mdp = bandit_mdp(2, 0.0);
        let reward = RewardTable::zeros(1, 2);
        let weights = WeightTable::constant(1, 1.0);
        let t = soft_backup(&Array1::zeros(1), &reward, &weights, &mdp).unwrap();
        assert!((t[0] - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn asymmetric_backup_matches_closed_form() {
        let mdp = bandit_mdp(2, 0.0);
        let reward = RewardTable::new(array![[1.0, 0.0]]);
        let weights = WeightTable::constant(1, 1.0);
        let t = soft_backup(&Array1::zeros(1), &reward, &weights, &mdp).unwrap();
        let expected = (1f64.exp() + 1.0).ln();
        assert!((t[0] - expected).abs() < 1e-14, "{} vs {expected}", t[0]);
    }

    #[test]
    fn backup_survives_extreme_logits() {
        let mdp = bandit_mdp(2, 0.0);
        let reward = RewardTable::new(array![[1e6, -1e6]]);
        let weights = WeightTable::constant(1, 1.0);
        let t = soft_backup(&Array1::zeros(1), &reward, &weights, &mdp).unwrap();
        assert!(t[0].is_finite());
        assert!((t[0] - 1e6).abs() < 1e-6);
    }

    #[test]
    fn non_positive_weight_is_rejected() {
        let mdp = bandit_mdp(2, 0.0);
        let reward = RewardTable::zeros(1, 2);
        let weights = WeightTable::new(array![0.0]);
        assert!(matches!(
            soft_backup(&Array1::zeros(1), &reward, &weights, &mdp),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn gamma_zero_solution_is_single_backup() {
        let mdp = random_mdp(4, 3, 0.0, 31);
        let reward = random_reward(4, 3, 1.0, 32);
        let weights = random_weights(4, 0.5, 2.0, 33);
        let sol = solve_soft(&mdp, &reward, &weights, 1e-12, 100).unwrap();
        let one_backup = soft_backup(&Array1::zeros(4), &reward, &weights, &mdp).unwrap();
        for s in 0..4 {
            assert!((sol.value[s] - one_backup[s]).abs() < 1e-15);
        }
    }

    #[test]
    fn self_loop_value_is_geometric() {
        // One action: the policy is a point mass, entropy contributes nothing.
        let mdp = bandit_mdp(1, 0.7);
        let reward = RewardTable::new(array![[2.0]]);
        for eta in [0.01, 1.0, 50.0] {
            let weights = WeightTable::constant(1, eta);
            let sol = solve_soft(&mdp, &reward, &weights, 1e-12, 10_000).unwrap();
            assert!(
                (sol.value[0] - 2.0 / 0.3).abs() < 1e-9,
                "eta={eta}: {}",
                sol.value[0]
            );
        }
    }

    #[test]
    fn solver_matches_independent_fixed_point_oracle() {
        let mdp = random_mdp(6, 3, 0.9, 41);
        let reward = random_reward(6, 3, 1.0, 42);
        let weights = random_weights(6, 0.3, 3.0, 43);
        let sol = solve_soft(&mdp, &reward, &weights, 1e-12, 10_000).unwrap();

        // Oracle: scalar-loop soft value iteration written independently of
        // the matrix-form implementation path.
        let mut v = vec![0.0; 6];
        for _ in 0..3000 {
            let mut next = vec![0.0; 6];
            for s in 0..6 {
                let mu = weights.values[s];
                let mut q = vec![0.0; 3];
                for (a, qa) in q.iter_mut().enumerate() {
                    let mut ev = 0.0;
                    for (sp, &vsp) in v.iter().enumerate() {
                        ev += mdp.transition[[s, a, sp]] * vsp;
                    }
                    *qa = reward.values[[s, a]] + mdp.discount * ev;
                }
                let m = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = q.iter().map(|&x| ((x - m) / mu).exp()).sum();
                next[s] = m + mu * sum.ln();
            }
            v = next;
        }
        for s in 0..6 {
            assert!(
                (sol.value[s] - v[s]).abs() < 1e-7,
                "state {s}: {} vs {}",
                sol.value[s],
                v[s]
            );
        }
    }

    #[test]
    fn non_convergence_reports_residual() {
        let mdp = random_mdp(4, 2, 0.95, 51);
        let reward = random_reward(4, 2, 1.0, 52);
        let weights = WeightTable::constant(4, 1.0);
        match solve_soft(&mdp, &reward, &weights, 1e-12, 3) {
            Err(Error::NonConvergence {
                iterations,
                residual,
            }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 1e-12);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn equal_logits_give_uniform_policy() {
        let q = Array2::from_elem((1, 4), 1.3);
        let policy = soft_policy(&q, &WeightTable::constant(1, 0.7));
        for a in 0..4 {
            assert!((policy.probs[[0, a]] - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn soft_policy_matches_direct_softmax() {
        let q = array![[1.0, 0.0]];
        let hot = soft_policy(&q, &WeightTable::constant(1, 100.0));
        let direct = 1.0 / (1.0 + (-0.01f64).exp());
        assert!((hot.probs[[0, 0]] - direct).abs() < 1e-12);
        assert!((hot.probs[[0, 0]] - 0.502500).abs() < 1e-6);

        let cold = soft_policy(&q, &WeightTable::constant(1, 0.1));
        assert!(cold.probs[[0, 0]] >= 1.0 - 1e-4);
        assert!(cold.probs[[0, 1]] > 0.0);
    }

    #[test]
    fn kl_to_uniform_edge_cases() {
        assert_eq!(kl_to_uniform(&[0.25; 4]), 0.0);
        let det = kl_to_uniform(&[1.0, 0.0, 0.0, 0.0]);
        assert!((det - 4f64.ln()).abs() < 1e-15);
        let mixed = kl_to_uniform(&[0.7, 0.3]);
        let expected = 0.7 * (1.4f64).ln() + 0.3 * (0.6f64).ln();
        assert!((mixed - expected).abs() < 1e-15);
        assert!((mixed - 0.082282).abs() < 1e-6);
    }

    #[test]
    fn uniform_policy_has_zero_budget() {
        let mdp = random_mdp(5, 3, 0.9, 61);
        let budget = weighted_kl_budget(&mdp, &Policy::uniform(5, 3), &random_weights(5, 0.5, 2.0, 62));
        assert!(budget.abs() < 1e-14);
    }

    #[test]
    fn budget_is_linear_in_weights() {
        let mdp = random_mdp(5, 3, 0.9, 63);
        let policy = random_policy(5, 3, 64);
        let weights = random_weights(5, 0.5, 2.0, 65);
        let doubled = WeightTable::new(&weights.values * 2.0);
        let g1 = weighted_kl_budget(&mdp, &policy, &weights);
        let g2 = weighted_kl_budget(&mdp, &policy, &doubled);
        assert!((g2 - 2.0 * g1).abs() < 1e-12 * g1.abs().max(1.0));
    }

    #[test]
    fn budget_matches_truncated_trajectory_expectation() {
        let mdp = random_mdp(5, 3, 0.9, 66);
        let policy = random_policy(5, 3, 67);
        let weights = random_weights(5, 0.5, 2.0, 68);
        let budget = weighted_kl_budget(&mdp, &policy, &weights);

        // Oracle: 200-term series sum_t gamma^t E_{s_t}[mu(s) KL(pi(.|s))].
        let per_state: Vec<f64> = (0..5)
            .map(|s| {
                weights.values[s] * kl_to_uniform(policy.probs.row(s).as_slice().unwrap())
            })
            .collect();
        let p_pi = mdp.policy_transition(&policy);
        let mut dist = mdp.start_dist.clone();
        let mut scale = 1.0;
        let mut acc = 0.0;
        for _ in 0..200 {
            acc += scale * (0..5).map(|s| dist[s] * per_state[s]).sum::<f64>();
            dist = p_pi.t().dot(&dist);
            scale *= mdp.discount;
        }
        assert!((budget - acc).abs() < 1e-6, "{budget} vs {acc}");
    }

    #[test]
    fn operator_is_a_gamma_contraction() {
        for i in 0..100 {
            let mdp = random_mdp(5, 3, 0.9, 700 + i);
            let reward = random_reward(5, 3, 2.0, 800 + i);
            let weights = random_weights(5, 0.1, 10.0, 900 + i);
            let v1 = random_reward(5, 1, 5.0, 1000 + i).values.column(0).to_owned();
            let v2 = random_reward(5, 1, 5.0, 1100 + i).values.column(0).to_owned();
            let t1 = soft_backup(&v1, &reward, &weights, &mdp).unwrap();
            let t2 = soft_backup(&v2, &reward, &weights, &mdp).unwrap();
            let lhs = sup_norm_diff(&t1, &t2);
            let rhs = mdp.discount * sup_norm_diff(&v1, &v2);
            assert!(lhs <= rhs + 1e-10, "draw {i}: {lhs} > {rhs}");
        }
    }

    #[test]
    fn constant_weights_reduce_to_standard_maxent() {
        // Independently coded standard MaxEnt soft value iteration with a
        // scalar temperature, compared at eta in {0.3, 1, 3}.
        let mdp = random_mdp(6, 3, 0.9, 71);
        let reward = random_reward(6, 3, 1.0, 72);
        for eta in [0.3, 1.0, 3.0] {
            let weights = WeightTable::constant(6, eta);
            let sol = solve_soft(&mdp, &reward, &weights, 1e-13, 50_000).unwrap();
            let (v_std, pi_std) = crate::reference::maxent_soft_vi(&mdp, &reward, eta, 1e-13);
            for s in 0..6 {
                assert!((sol.value[s] - v_std[s]).abs() < 1e-8, "eta={eta} s={s}");
                for a in 0..3 {
                    assert!((sol.policy.probs[[s, a]] - pi_std[[s, a]]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn log_likelihood_identity_holds_at_fixed_point() {
        let mdp = random_mdp(6, 4, 0.9, 81);
        let reward = random_reward(6, 4, 1.0, 82);
        let weights = random_weights(6, 0.3, 3.0, 83);
        let sol = solve_soft(&mdp, &reward, &weights, 1e-13, 100_000).unwrap();
        for s in 0..6 {
            for a in 0..4 {
                let lhs = (sol.q_table[[s, a]] - sol.value[s]) / weights.values[s];
                let rhs = sol.policy.probs[[s, a]].ln();
                assert!(
                    (lhs - rhs).abs() < 1e-10,
                    "(s,a)=({s},{a}): {lhs} vs {rhs}"
                );
            }
        }
    }

    #[test]
    fn entropy_grows_with_temperature_at_fixed_logits() {
        let q = array![[1.0, -0.3, 0.4, 0.0]];
        let mut last = -1.0;
        for k in 0..60 {
            let mu = 0.01 * (1.2f64).powi(k);
            let policy = soft_policy(&q, &WeightTable::constant(1, mu));
            let h: f64 = policy
                .probs
                .row(0)
                .iter()
                .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
                .sum();
            assert!(h >= last - 1e-12, "entropy dropped at mu={mu}");
            last = h;
        }
    }

    #[test]
    fn certificate_blocks_cheaper_policies_smoke() {
        // Small-scale version of the constrained-reformulation certificate:
        // among random policies with budget <= g(pi*), none beats pi* on the
        // shifted reward r' = r + ln|A| mu.
        let mdp = random_mdp(4, 3, 0.85, 91);
        let reward = random_reward(4, 3, 1.0, 92);
        let weights = random_weights(4, 0.5, 2.0, 93);
        let sol = solve_soft(&mdp, &reward, &weights, 1e-11, 100_000).unwrap();
        let ln_a = 3f64.ln();
        let mut shifted = reward.values.clone();
        for s in 0..4 {
            for a in 0..3 {
                shifted[[s, a]] += ln_a * weights.values[s];
            }
        }
        let shifted = RewardTable::new(shifted);
        let alpha = weighted_kl_budget(&mdp, &sol.policy, &weights);
        let best = policy_return(&mdp, &sol.policy, &shifted).unwrap();
        let mut feasible = 0;
        for i in 0..1000 {
            let candidate = random_policy(4, 3, 2000 + i);
            if weighted_kl_budget(&mdp, &candidate, &weights) <= alpha {
                feasible += 1;
                let ret = policy_return(&mdp, &candidate, &shifted).unwrap();
                assert!(ret <= best + 1e-6, "candidate {i} beats pi*: {ret} > {best}");
            }
        }
        assert!(feasible > 0, "certificate test never exercised the budget");
    }
}
