//! Independently coded reference paths used for cross-checking.
//!
//! Everything in this module is written with plain scalar loops and shares no
//! helpers with the main solver code. These functions exist so that tests can
//! compare two genuinely separate computations of the same quantity; they are
//! not tuned for speed and should not be used outside verification.

use ndarray::{Array1, Array2};

use crate::mdp::{RewardTable, TabularMdp};

/// Standard (unweighted) maximum-entropy soft value iteration with a scalar
/// temperature `eta`. Returns the converged value vector and soft policy.
pub fn maxent_soft_vi(
    mdp: &TabularMdp,
    reward: &RewardTable,
    eta: f64,
    tol: f64,
) -> (Array1<f64>, Array2<f64>) {
    let n_s = mdp.n_states;
    let n_a = mdp.n_actions;
    let mut v = vec![0.0; n_s];
    loop {
        let mut next = vec![0.0; n_s];
        let mut gap = 0.0f64;
        for s in 0..n_s {
            let mut logits = vec![0.0; n_a];
            for (a, logit) in logits.iter_mut().enumerate() {
                let mut ev = 0.0;
                for (sp, &vsp) in v.iter().enumerate() {
                    ev += mdp.transition[[s, a, sp]] * vsp;
                }
                *logit = (reward.values[[s, a]] + mdp.discount * ev) / eta;
            }
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logits.iter().map(|&x| (x - m).exp()).sum();
            next[s] = eta * (m + sum.ln());
            gap = gap.max((next[s] - v[s]).abs());
        }
        v = next;
        if gap <= tol {
            break;
        }
    }
    let mut policy = Array2::zeros((n_s, n_a));
    for s in 0..n_s {
        let mut logits = vec![0.0; n_a];
        for (a, logit) in logits.iter_mut().enumerate() {
            let mut ev = 0.0;
            for (sp, &vsp) in v.iter().enumerate() {
                ev += mdp.transition[[s, a, sp]] * vsp;
            }
            *logit = (reward.values[[s, a]] + mdp.discount * ev) / eta;
        }
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|&x| (x - m).exp()).sum();
        for a in 0..n_a {
            policy[[s, a]] = (logits[a] - m).exp() / sum;
        }
    }
    (Array1::from_vec(v), policy)
}

/// Plain value iteration with a hard max, returning the optimal value vector
/// and the greedy action per state (ties resolved to the lowest index).
pub fn greedy_value_iteration(
    mdp: &TabularMdp,
    reward: &RewardTable,
    tol: f64,
) -> (Array1<f64>, Vec<usize>) {
    let n_s = mdp.n_states;
    let n_a = mdp.n_actions;
    let mut v = vec![0.0; n_s];
    loop {
        let mut next = vec![0.0; n_s];
        let mut gap = 0.0f64;
        for s in 0..n_s {
            let mut best = f64::NEG_INFINITY;
            for a in 0..n_a {
                let mut ev = 0.0;
                for (sp, &vsp) in v.iter().enumerate() {
                    ev += mdp.transition[[s, a, sp]] * vsp;
                }
                best = best.max(reward.values[[s, a]] + mdp.discount * ev);
            }
            next[s] = best;
            gap = gap.max((next[s] - v[s]).abs());
        }
        v = next;
        if gap <= tol {
            break;
        }
    }
    let mut greedy = vec![0usize; n_s];
    for (s, g) in greedy.iter_mut().enumerate() {
        let mut best = f64::NEG_INFINITY;
        for a in 0..n_a {
            let mut ev = 0.0;
            for (sp, &vsp) in v.iter().enumerate() {
                ev += mdp.transition[[s, a, sp]] * vsp;
            }
            let q = reward.values[[s, a]] + mdp.discount * ev;
            if q > best {
                best = q;
                *g = a;
            }
        }
    }
    (Array1::from_vec(v), greedy)
}

/// Iterative policy evaluation by repeated sweeps, no linear solve involved.
pub fn policy_value_iterative(
    mdp: &TabularMdp,
    policy_probs: &Array2<f64>,
    reward: &RewardTable,
    tol: f64,
) -> Array1<f64> {
    let n_s = mdp.n_states;
    let n_a = mdp.n_actions;
    let mut v = vec![0.0; n_s];
    loop {
        let mut next = vec![0.0; n_s];
        let mut gap = 0.0f64;
        for s in 0..n_s {
            let mut total = 0.0;
            for a in 0..n_a {
                let mut ev = 0.0;
                for (sp, &vsp) in v.iter().enumerate() {
                    ev += mdp.transition[[s, a, sp]] * vsp;
                }
                total += policy_probs[[s, a]] * (reward.values[[s, a]] + mdp.discount * ev);
            }
            next[s] = total;
            gap = gap.max((next[s] - v[s]).abs());
        }
        v = next;
        if gap <= tol {
            break;
        }
    }
    Array1::from_vec(v)
}
