//! Foundational tabular MDP, policy, and trajectory types.
//!
//! Everything here is immutable after construction; operations are pure
//! functions of their inputs plus an explicit RNG seed, so they are safe to
//! call concurrently.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Tolerance for probability rows summing to one.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Looser tolerance applied to policy rows (they often come out of softmax).
pub const POLICY_ROW_SUM_TOL: f64 = 1e-10;

/// A finite MDP with explicit transition kernel `q(s'|s,a)`.
///
/// `transition` is indexed `[s, a, s']` and each row `q(.|s,a)` must be a
/// probability vector. `discount` must be strictly below one so that
/// infinite-horizon quantities exist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub transition: Array3<f64>,
    pub discount: f64,
    pub start_dist: Array1<f64>,
}

impl TabularMdp {
    pub fn new(transition: Array3<f64>, discount: f64, start_dist: Array1<f64>) -> Self {
        let (n_states, n_actions, _) = transition.dim();
        Self {
            n_states,
            n_actions,
            transition,
            discount,
            start_dist,
        }
    }

    /// Expected next-state value `E_{s'|s,a}[v(s')]` for every `(s, a)`.
    pub fn expected_next(&self, v: &Array1<f64>) -> Array2<f64> {
        let flat = self
            .transition
            .view()
            .into_shape_with_order((self.n_states * self.n_actions, self.n_states))
            .expect("transition tensor is contiguous");
        flat.dot(v)
            .into_shape_with_order((self.n_states, self.n_actions))
            .expect("shape preserved")
    }

    /// State-to-state transition matrix under a fixed policy:
    /// `P_pi(s, s') = sum_a pi(a|s) q(s'|s,a)`.
    pub fn policy_transition(&self, policy: &Policy) -> Array2<f64> {
        let mut p = Array2::<f64>::zeros((self.n_states, self.n_states));
        for s in 0..self.n_states {
            let q_s = self.transition.index_axis(ndarray::Axis(0), s);
            let row = policy.probs.row(s).dot(&q_s);
            p.row_mut(s).assign(&row);
        }
        p
    }
}

/// Per-step rewards `r(a|s)`, stored as an `|S| x |A|` table.
///
/// State-only rewards are broadcast across the action axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTable {
    pub values: Array2<f64>,
}

impl RewardTable {
    pub fn new(values: Array2<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            values: Array2::zeros((n_states, n_actions)),
        }
    }

    /// Broadcast a state-only reward vector across all actions.
    pub fn from_state_values(state_values: &Array1<f64>, n_actions: usize) -> Self {
        let n = state_values.len();
        let mut values = Array2::zeros((n, n_actions));
        for s in 0..n {
            values.row_mut(s).fill(state_values[s]);
        }
        Self { values }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// A stationary stochastic policy `pi(a|s)` as a row-stochastic table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub probs: Array2<f64>,
}

impl Policy {
    pub fn new(probs: Array2<f64>) -> Self {
        Self { probs }
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            probs: Array2::from_elem((n_states, n_actions), 1.0 / n_actions as f64),
        }
    }

    /// Checks row-stochasticity; used by operations whose contract requires a
    /// valid policy.
    pub fn validate(&self) -> Result<()> {
        for (s, row) in self.probs.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > POLICY_ROW_SUM_TOL {
                return Err(Error::Contract(format!(
                    "policy row {s} sums to {sum}, expected 1"
                )));
            }
            if row.iter().any(|&p| !(0.0..=1.0 + 1e-12).contains(&p)) {
                return Err(Error::Contract(format!(
                    "policy row {s} has entries outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    /// Greedy action per state with ties broken by the lowest action index.
    pub fn argmax_actions(&self) -> Vec<usize> {
        self.probs
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                let mut best_p = row[0];
                for (a, &p) in row.iter().enumerate().skip(1) {
                    if p > best_p {
                        best = a;
                        best_p = p;
                    }
                }
                best
            })
            .collect()
    }
}

/// A finite (state, action) path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<(usize, usize)>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// A set of expert demonstrations plus the metadata needed to regenerate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoSet {
    pub trajectories: Vec<Trajectory>,
    pub seed: u64,
    pub horizon: usize,
    /// Temperature of the expert policy the demos were sampled from, when known.
    pub expert_temp: Option<f64>,
}

impl DemoSet {
    /// Total number of (state, action) pairs across all trajectories.
    pub fn n_pairs(&self) -> usize {
        self.trajectories.iter().map(|t| t.len()).sum()
    }

    /// A shallow copy containing only the first `n` trajectories.
    pub fn take(&self, n: usize) -> DemoSet {
        DemoSet {
            trajectories: self.trajectories.iter().take(n).cloned().collect(),
            seed: self.seed,
            horizon: self.horizon,
            expert_temp: self.expert_temp,
        }
    }
}

/// Reports every violated invariant of `mdp`; an empty report means valid.
pub fn validate_mdp(mdp: &TabularMdp) -> Vec<String> {
    let mut violations = Vec::new();
    if mdp.n_states == 0 {
        violations.push("n_states must be positive".to_string());
    }
    if mdp.n_actions == 0 {
        violations.push("n_actions must be positive".to_string());
    }
    if mdp.transition.dim() != (mdp.n_states, mdp.n_actions, mdp.n_states) {
        violations.push(format!(
            "transition dimension {:?} does not match (|S|, |A|, |S|) = ({}, {}, {})",
            mdp.transition.dim(),
            mdp.n_states,
            mdp.n_actions,
            mdp.n_states
        ));
        return violations;
    }
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let row = mdp.transition.slice(ndarray::s![s, a, ..]);
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                violations.push(format!("row sum {sum} != 1 for q(.|s={s},a={a})"));
            }
            if row.iter().any(|&p| p < 0.0) {
                violations.push(format!("negative probability in q(.|s={s},a={a})"));
            }
        }
    }
    if mdp.start_dist.len() != mdp.n_states {
        violations.push(format!(
            "start_dist length {} != |S| = {}",
            mdp.start_dist.len(),
            mdp.n_states
        ));
    } else {
        let sum: f64 = mdp.start_dist.sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            violations.push(format!("start_dist sums to {sum} != 1"));
        }
        if mdp.start_dist.iter().any(|&p| p < 0.0) {
            violations.push("start_dist has a negative entry".to_string());
        }
    }
    if !(0.0..1.0).contains(&mdp.discount) {
        violations.push(format!(
            "discount {} must lie in [0, 1)",
            mdp.discount
        ));
    }
    violations
}

/// Expected discounted return `sum_s start_dist(s) V^pi(s)` of `policy` under
/// `reward`, with `V^pi` from an exact policy-evaluation solve.
pub fn policy_return(mdp: &TabularMdp, policy: &Policy, reward: &RewardTable) -> Result<f64> {
    policy.validate()?;
    let v = policy_value(mdp, policy, reward);
    Ok(mdp.start_dist.dot(&v))
}

/// State values `V^pi` solving `V = r_pi + gamma P_pi V`.
pub fn policy_value(mdp: &TabularMdp, policy: &Policy, reward: &RewardTable) -> Array1<f64> {
    let r_pi: Array1<f64> = (0..mdp.n_states)
        .map(|s| policy.probs.row(s).dot(&reward.values.row(s)))
        .collect();
    let p_pi = mdp.policy_transition(policy);
    linalg::solve_discounted_system(&p_pi, mdp.discount, &r_pi)
}

/// Discounted state-visitation frequencies `d(s) = sum_t gamma^t P(s_t = s)`.
///
/// The total mass always equals `1 / (1 - gamma)`.
pub fn discounted_state_occupancy(mdp: &TabularMdp, policy: &Policy) -> Array1<f64> {
    // d solves d = start + gamma P_pi^T d.
    let p_t = mdp.policy_transition(policy).reversed_axes().to_owned();
    linalg::solve_discounted_system(&p_t, mdp.discount, &mdp.start_dist.clone())
}

/// Draw an index from a probability vector using one uniform sample.
pub(crate) fn sample_index(probs: ndarray::ArrayView1<'_, f64>, rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen::<f64>();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    // Rounding in the cumulative sum: fall back to the last index that
    // actually carries mass, so sampled transitions always have q > 0.
    last_positive
}

/// Sample a trajectory of exactly `horizon` (state, action) pairs.
///
/// The start state is drawn from `mdp.start_dist`; the result is a pure
/// function of the seed.
pub fn sample_trajectory(
    mdp: &TabularMdp,
    policy: &Policy,
    horizon: usize,
    rng_seed: u64,
) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    sample_trajectory_with(mdp, policy, horizon, &mut rng)
}

pub(crate) fn sample_trajectory_with(
    mdp: &TabularMdp,
    policy: &Policy,
    horizon: usize,
    rng: &mut impl Rng,
) -> Trajectory {
    let mut steps = Vec::with_capacity(horizon);
    let mut s = sample_index(mdp.start_dist.view(), rng);
    for _ in 0..horizon {
        let a = sample_index(policy.probs.row(s), rng);
        steps.push((s, a));
        s = sample_index(mdp.transition.slice(ndarray::s![s, a, ..]), rng);
    }
    Trajectory { steps }
}

/// Exact discounted return of a recorded trajectory.
pub fn trajectory_return(traj: &Trajectory, reward: &RewardTable, discount: f64) -> Result<f64> {
    let (n_states, n_actions) = reward.values.dim();
    let mut total = 0.0;
    let mut scale = 1.0;
    for &(s, a) in &traj.steps {
        if s >= n_states || a >= n_actions {
            return Err(Error::IndexOutOfRange(format!(
                "trajectory step (s={s}, a={a}) outside {n_states}x{n_actions} reward table"
            )));
        }
        total += scale * reward.values[[s, a]];
        scale *= discount;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};

    /// Single state, single action self-loop.
    fn identity_mdp(discount: f64) -> TabularMdp {
        TabularMdp::new(
            Array3::from_elem((1, 1, 1), 1.0),
            discount,
            array![1.0],
        )
    }

    use crate::test_util::random_mdp;

    #[test]
    fn validator_accepts_identity_mdp() {
        assert!(validate_mdp(&identity_mdp(0.9)).is_empty());
    }

    #[test]
    fn validator_reports_bad_row_sum() {
        let mut transition = Array3::<f64>::zeros((2, 1, 2));
        transition[[0, 0, 0]] = 0.5;
        transition[[0, 0, 1]] = 0.4;
        transition[[1, 0, 1]] = 1.0;
        let mdp = TabularMdp::new(transition, 0.9, array![0.5, 0.5]);
        let report = validate_mdp(&mdp);
        assert_eq!(report.len(), 1);
        assert!(report[0].contains("row sum 0.9"), "{}", report[0]);
    }

    #[test]
    fn validator_rejects_discount_one() {
        let mdp = identity_mdp(1.0);
        assert!(validate_mdp(&mdp).iter().any(|v| v.contains("discount")));
    }

    #[test]
    fn self_loop_return_is_geometric_series() {
        let mdp = identity_mdp(0.5);
        let policy = Policy::uniform(1, 1);
        let reward = RewardTable::new(array![[1.0]]);
        let ret = policy_return(&mdp, &policy, &reward).unwrap();
        assert!((ret - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_reward_returns_zero() {
        let mdp = random_mdp(4, 2, 0.9, 7);
        let policy = Policy::uniform(4, 2);
        let reward = RewardTable::zeros(4, 2);
        assert_eq!(policy_return(&mdp, &policy, &reward).unwrap(), 0.0);
    }

    #[test]
    fn non_stochastic_policy_is_rejected() {
        let mdp = identity_mdp(0.5);
        let policy = Policy::new(array![[0.7]]);
        let reward = RewardTable::zeros(1, 1);
        assert!(matches!(
            policy_return(&mdp, &policy, &reward),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn return_matches_monte_carlo_on_random_mdp() {
        let mdp = random_mdp(4, 3, 0.85, 11);
        let policy = Policy::uniform(4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let mut reward_values = Array2::zeros((4, 3));
        for v in reward_values.iter_mut() {
            *v = rng.gen::<f64>() * 2.0 - 1.0;
        }
        let reward = RewardTable::new(reward_values);
        let exact = policy_return(&mdp, &policy, &reward).unwrap();

        // Monte Carlo oracle: sample long truncated rollouts and average.
        let n = 10_000;
        let horizon = 200; // gamma^200 is ~1e-14, truncation negligible
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for i in 0..n {
            let traj = sample_trajectory(&mdp, &policy, horizon, 1000 + i);
            let r = trajectory_return(&traj, &reward, mdp.discount).unwrap();
            sum += r;
            sum_sq += r * r;
        }
        let mean = sum / n as f64;
        let var = (sum_sq / n as f64 - mean * mean).max(0.0);
        let stderr = (var / n as f64).sqrt();
        assert!(
            (exact - mean).abs() <= 3.0 * stderr,
            "exact {exact} vs MC {mean} +- {stderr}"
        );
    }

    #[test]
    fn occupancy_of_self_loop_is_inverse_gap() {
        let mdp = identity_mdp(0.9);
        let d = discounted_state_occupancy(&mdp, &Policy::uniform(1, 1));
        assert!((d[0] - 10.0).abs() < 1e-10);
    }

    #[test]
    fn occupancy_splits_between_absorbing_states() {
        let mut transition = Array3::<f64>::zeros((2, 1, 2));
        transition[[0, 0, 0]] = 1.0;
        transition[[1, 0, 1]] = 1.0;
        let mdp = TabularMdp::new(transition, 0.5, array![0.5, 0.5]);
        let d = discounted_state_occupancy(&mdp, &Policy::uniform(2, 1));
        assert!((d[0] - 1.0).abs() < 1e-12);
        assert!((d[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn occupancy_matches_truncated_power_series() {
        let mdp = random_mdp(5, 2, 0.9, 3);
        let policy = Policy::uniform(5, 2);
        let d = discounted_state_occupancy(&mdp, &policy);

        // Oracle: 200-term power series sum_t gamma^t (P^T)^t start.
        let p_t = mdp.policy_transition(&policy).reversed_axes().to_owned();
        let mut acc = Array1::<f64>::zeros(5);
        let mut term = mdp.start_dist.clone();
        let mut scale = 1.0;
        for _ in 0..200 {
            acc = acc + &(scale * &term);
            term = p_t.dot(&term);
            scale *= mdp.discount;
        }
        for s in 0..5 {
            assert!((d[s] - acc[s]).abs() < 1e-6, "state {s}: {} vs {}", d[s], acc[s]);
        }
    }

    #[test]
    fn deterministic_mdp_and_policy_give_unique_trajectory() {
        let mut transition = Array3::<f64>::zeros((2, 2, 2));
        transition[[0, 0, 1]] = 1.0;
        transition[[0, 1, 0]] = 1.0;
        transition[[1, 0, 0]] = 1.0;
        transition[[1, 1, 1]] = 1.0;
        let mdp = TabularMdp::new(transition, 0.9, array![1.0, 0.0]);
        let policy = Policy::new(array![[1.0, 0.0], [1.0, 0.0]]);
        let a = sample_trajectory(&mdp, &policy, 4, 1);
        let b = sample_trajectory(&mdp, &policy, 4, 999);
        assert_eq!(a, b);
        assert_eq!(a.steps, vec![(0, 0), (1, 0), (0, 0), (1, 0)]);
    }

    #[test]
    fn same_seed_reproduces_trajectory() {
        let mdp = random_mdp(6, 3, 0.9, 5);
        let policy = Policy::uniform(6, 3);
        let a = sample_trajectory(&mdp, &policy, 16, 42);
        let b = sample_trajectory(&mdp, &policy, 16, 42);
        assert_eq!(a, b);
    }

    #[test]
    fn sampled_transitions_carry_positive_mass() {
        // Sparse kernel: sampling must never step through a q = 0 entry.
        let mut transition = Array3::<f64>::zeros((3, 2, 3));
        for s in 0..3 {
            transition[[s, 0, (s + 1) % 3]] = 1.0;
            transition[[s, 1, s]] = 0.5;
            transition[[s, 1, (s + 2) % 3]] = 0.5;
        }
        let mdp = TabularMdp::new(transition, 0.9, array![1.0, 0.0, 0.0]);
        let policy = Policy::uniform(3, 2);
        for seed in 0..200 {
            let traj = sample_trajectory(&mdp, &policy, 10, seed);
            for w in traj.steps.windows(2) {
                let ((s, a), (sp, _)) = (w[0], w[1]);
                assert!(mdp.transition[[s, a, sp]] > 0.0);
            }
        }
    }

    #[test]
    fn uniform_policy_action_frequency_is_half() {
        let mdp = random_mdp(3, 2, 0.9, 9);
        let policy = Policy::uniform(3, 2);
        let n = 10_000;
        let mut count = 0;
        for i in 0..n {
            let traj = sample_trajectory(&mdp, &policy, 1, 5000 + i);
            if traj.steps[0].1 == 0 {
                count += 1;
            }
        }
        let freq = count as f64 / n as f64;
        assert!((freq - 0.5).abs() <= 0.015, "frequency {freq}");
    }

    #[test]
    fn empty_trajectory_has_zero_return() {
        let reward = RewardTable::zeros(2, 2);
        let traj = Trajectory { steps: vec![] };
        assert_eq!(trajectory_return(&traj, &reward, 0.9).unwrap(), 0.0);
    }

    #[test]
    fn two_step_unit_reward_discounted() {
        let reward = RewardTable::new(array![[1.0], [1.0]]);
        let traj = Trajectory {
            steps: vec![(0, 0), (1, 0)],
        };
        assert!((trajectory_return(&traj, &reward, 0.5).unwrap() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn trajectory_return_matches_resummation() {
        let mdp = random_mdp(5, 2, 0.8, 13);
        let policy = Policy::uniform(5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut reward_values = Array2::zeros((5, 2));
        for v in reward_values.iter_mut() {
            *v = rng.gen::<f64>() * 4.0 - 2.0;
        }
        let reward = RewardTable::new(reward_values);
        let traj = sample_trajectory(&mdp, &policy, 12, 3);
        let got = trajectory_return(&traj, &reward, mdp.discount).unwrap();
        let oracle: f64 = traj
            .steps
            .iter()
            .enumerate()
            .map(|(t, &(s, a))| mdp.discount.powi(t as i32) * reward.values[[s, a]])
            .sum();
        assert!((got - oracle).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_step_is_an_error() {
        let reward = RewardTable::zeros(2, 2);
        let traj = Trajectory {
            steps: vec![(5, 0)],
        };
        assert!(matches!(
            trajectory_return(&traj, &reward, 0.9),
            Err(Error::IndexOutOfRange(_))
        ));
    }

    #[test]
    fn return_consistent_with_occupancy_accounting() {
        // policy_return == sum_s sum_a d(s) pi(a|s) r(s,a)
        let mdp = random_mdp(6, 3, 0.9, 21);
        let policy = Policy::uniform(6, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut reward_values = Array2::zeros((6, 3));
        for v in reward_values.iter_mut() {
            *v = rng.gen::<f64>() * 2.0 - 1.0;
        }
        let reward = RewardTable::new(reward_values);
        let direct = policy_return(&mdp, &policy, &reward).unwrap();
        let d = discounted_state_occupancy(&mdp, &policy);
        let via_occupancy: f64 = (0..6)
            .map(|s| d[s] * policy.probs.row(s).dot(&reward.values.row(s)))
            .sum();
        assert!((direct - via_occupancy).abs() < 1e-8);
    }
}
